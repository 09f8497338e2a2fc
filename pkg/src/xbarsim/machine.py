"""Hardware configuration: geometry, latency, and power parameters.

Defaults describe one node of the modeled tile at 1 GHz: 128x128 crossbars,
2 MVMUs per core, 8 cores per tile, 16 receive FIFOs of depth 2. One MVM
instruction takes 2304 cycles and costs 43.97 nJ per activated MVMU; other
component energies are derived as component power x occupancy cycles.
"""

from dataclasses import dataclass, field, fields, replace

from .crossbar import slices_for_bits
from .fixedpoint import DEFAULT_FRAC_BITS
from .isa import INSTR_BYTES, RegisterSpace


class ConfigError(Exception):
    pass


@dataclass
class MachineConfig:
    # Geometry
    xbar_dim: int = 128
    mvmus_per_core: int = 2
    cores_per_tile: int = 8
    tiles: int = 2
    vfu_lanes: int = 1
    register_size: int = 0          # 0 -> default 2 * xbar_dim * mvmus_per_core
    dmem_words: int = 4096          # tile data memory, 16-bit words
    core_imem_bytes: int = 4096
    tile_imem_bytes: int = 8192
    num_fifos: int = 16
    fifo_depth: int = 2             # messages per FIFO
    flit_bits: int = 32

    # Numerics
    frac_bits: int = DEFAULT_FRAC_BITS
    bits_per_device: int = 2
    adc_bits: int = 0               # 0 -> ideal ADC (bypass)
    noise_sigma: float = 0.0
    seed: int = 0
    lut_bits: int = 8

    # Timing (cycles; clock converts to ns)
    clock_ghz: float = 1.0
    mvm_cycles: int = 2304
    hop_cycles: int = 4
    mode_switch_cycles: int = 2

    # Energy: paper-anchored MVM figure; everything else power x time.
    mvm_nj_per_mvmu: float = 43.97
    power_mw: dict = field(default_factory=lambda: {
        "control": 0.25,
        "core_imem": 1.52,
        "regfile": 0.477,
        "vfu": 1.90,
        "sfu": 0.055,
        "tile_ctrl": 0.5,
        "tile_imem": 1.91,
        "dmem": 17.66,
        "attr": 2.77,
        "bus": 7.0,
        "rxbuf": 9.14,
        "net": 570.63,
    })

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 1 <= self.xbar_dim <= 255:
            raise ConfigError("xbar_dim must be in [1, 255] (8-bit vec-width field)")
        for name in ("mvmus_per_core", "cores_per_tile", "tiles", "vfu_lanes",
                     "num_fifos", "fifo_depth", "dmem_words"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.mvmus_per_core > 5:
            raise ConfigError("mvmu mask lives in the 5-bit subop field")
        slices_for_bits(self.bits_per_device)
        if not 0 <= self.frac_bits <= 15:
            raise ConfigError("frac_bits must be in [0, 15]")
        if self.dmem_words > 4096:
            raise ConfigError("dmem_words beyond 12-bit address operands")
        self.regspace()  # raises if the register space overflows 12 bits

    @property
    def general_regs(self):
        if self.register_size:
            return self.register_size
        return 2 * self.xbar_dim * self.mvmus_per_core

    def regspace(self):
        return RegisterSpace(self.xbar_dim, self.mvmus_per_core, self.general_regs)

    @property
    def words_per_flit(self):
        return max(1, self.flit_bits // 16)

    @property
    def core_imem_capacity(self):
        return self.core_imem_bytes // INSTR_BYTES

    @property
    def tile_imem_capacity(self):
        return self.tile_imem_bytes // INSTR_BYTES

    @property
    def cycle_ns(self):
        return 1.0 / self.clock_ghz

    def energy_nj(self, component, cycles):
        """Power (mW) x busy time (ns) = pJ; returned in nJ."""
        return self.power_mw[component] * cycles * self.cycle_ns * 1e-3

    def with_overrides(self, **kw):
        return replace(self, **kw)

    # -- key=value config file round trip ---------------------------------

    def to_text(self):
        lines = []
        for f in fields(self):
            if f.name == "power_mw":
                for k, v in self.power_mw.items():
                    lines.append(f"power.{k}={v}")
            else:
                lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(MachineConfig)}


def parse_config(text, base=None):
    """Parse key=value lines over a base config; '#' starts a comment."""
    cfg = base or MachineConfig()
    kw = {}
    powers = dict(cfg.power_mw)
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not val:
            raise ConfigError(f"line {ln}: expected key=value, got {raw!r}")
        if key.startswith("power."):
            powers[key[len("power."):]] = float(val)
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {ln}: unknown config key {key!r}")
        if val.lower() in ("ideal", "none") and key == "adc_bits":
            kw[key] = 0
        elif _FIELD_TYPES[key] in (float, "float"):
            kw[key] = float(val)
        else:
            kw[key] = int(val)
    kw["power_mw"] = powers
    return cfg.with_overrides(**kw)


def load_config(path, base=None):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base)
