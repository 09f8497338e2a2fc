"""16-bit fixed-point arithmetic and ROM lookup tables.

All values are carried as raw two's-complement integers in numpy int64
arrays (logical range is int16). The radix point sits at ``frac_bits``
(default Q3.12). Every operation saturates at the representable range
instead of wrapping, and rounding is round-to-nearest-even throughout.
"""

import numpy as np

RAW_MIN = -(1 << 15)
RAW_MAX = (1 << 15) - 1
DEFAULT_FRAC_BITS = 12
WORD_MASK = 0xFFFF


def fx_max(frac_bits=DEFAULT_FRAC_BITS):
    """Largest representable value, (2^15 - 1) * 2^-frac_bits."""
    return RAW_MAX / (1 << frac_bits)


def fx_min(frac_bits=DEFAULT_FRAC_BITS):
    return RAW_MIN / (1 << frac_bits)


def saturate(raw):
    """Clamp raw values into the 16-bit two's-complement range."""
    return np.clip(raw, RAW_MIN, RAW_MAX)


def saturation_count(raw):
    """Number of elements that fall outside the representable range."""
    raw = np.asarray(raw)
    return int(np.count_nonzero((raw < RAW_MIN) | (raw > RAW_MAX)))


def quantize(x, frac_bits=DEFAULT_FRAC_BITS):
    """Real value(s) -> raw fixed point, round-half-even, saturating.

    Total function: inputs beyond the range pin to the range bounds.
    """
    if not 0 <= frac_bits <= 15:
        raise ValueError(f"frac_bits must be in [0, 15], got {frac_bits}")
    scaled = np.rint(np.asarray(x, dtype=np.float64) * (1 << frac_bits))
    out = saturate(scaled).astype(np.int64)
    if np.isscalar(x) or np.ndim(x) == 0:
        return int(out)
    return out


def to_float(raw, frac_bits=DEFAULT_FRAC_BITS):
    """Raw fixed point -> real value(s)."""
    out = np.asarray(raw, dtype=np.float64) / (1 << frac_bits)
    if np.isscalar(raw) or np.ndim(raw) == 0:
        return float(out)
    return out


def rshift_round_even(v, n):
    """Arithmetic right shift by n with round-half-even on the dropped bits.

    Works elementwise on int64 arrays; exact for any |v| < 2^62.
    """
    if n == 0:
        return np.asarray(v, dtype=np.int64).copy()
    v = np.asarray(v, dtype=np.int64)
    base = v >> n                       # floor division by 2^n
    rem = v & ((1 << n) - 1)
    half = 1 << (n - 1)
    round_up = (rem > half) | ((rem == half) & ((base & 1) == 1))
    return base + round_up.astype(np.int64)


def _div_round_even(num, den):
    """round-half-even of num/den for int64 arrays, den > 0 elementwise."""
    q = num // den                      # floor
    rem = num - q * den
    twice = 2 * rem
    round_up = (twice > den) | ((twice == den) & ((q & 1) == 1))
    return q + round_up.astype(np.int64)


# ---------------------------------------------------------------------------
# Elementwise ALU semantics (raw in, raw out, saturating)
# ---------------------------------------------------------------------------

def fx_add(a, b):
    return saturate(np.asarray(a, np.int64) + np.asarray(b, np.int64))


def fx_sub(a, b):
    return saturate(np.asarray(a, np.int64) - np.asarray(b, np.int64))


def fx_mul(a, b, frac_bits=DEFAULT_FRAC_BITS):
    prod = np.asarray(a, np.int64) * np.asarray(b, np.int64)
    return saturate(rshift_round_even(prod, frac_bits))


def fx_div(a, b, frac_bits=DEFAULT_FRAC_BITS):
    """Fixed-point divide; division by zero saturates toward the sign of a."""
    a = np.asarray(a, np.int64)
    b = np.asarray(b, np.int64)
    num = a << frac_bits
    safe = np.where(b == 0, 1, b)
    sign = np.where(safe < 0, -1, 1)
    q = _div_round_even(num * sign, safe * sign)
    q = np.where(b == 0, np.where(a > 0, RAW_MAX + 1, np.where(a < 0, RAW_MIN - 1, 0)), q)
    return saturate(q)


def fx_shl(a, k):
    return saturate(np.asarray(a, np.int64) << np.asarray(k, np.int64))


def fx_shr(a, k):
    return np.asarray(a, np.int64) >> np.asarray(k, np.int64)


def _to_bits(a):
    return np.asarray(a, np.int64) & WORD_MASK


def _from_bits(bits):
    bits = np.asarray(bits, np.int64) & WORD_MASK
    return np.where(bits >= 1 << 15, bits - (1 << 16), bits)


def fx_and(a, b):
    return _from_bits(_to_bits(a) & _to_bits(b))


def fx_or(a, b):
    return _from_bits(_to_bits(a) | _to_bits(b))


def fx_not(a):
    return _from_bits(~_to_bits(a))


def fx_min_(a, b):
    return np.minimum(np.asarray(a, np.int64), np.asarray(b, np.int64))


def fx_max_(a, b):
    return np.maximum(np.asarray(a, np.int64), np.asarray(b, np.int64))


def fx_relu(a):
    return np.maximum(np.asarray(a, np.int64), 0)


# ---------------------------------------------------------------------------
# ROM lookup tables for transcendental functions
# ---------------------------------------------------------------------------

LUT_FUNCTIONS = {
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "tanh": np.tanh,
    "log": np.log,
    "exp": np.exp,
}

# (lo, hi) input ranges chosen so outputs stay inside Q3.12 and the flat
# tails of the saturating functions are covered by the clamp behavior.
LUT_DEFAULT_RANGES = {
    "sigmoid": (-8.0, 8.0),
    "tanh": (-4.0, 4.0),
    "exp": (-8.0, 2.0),
    "log": (1.0 / 64.0, 8.0),
}


class LutTable:
    """2^k samples of a function over [lo, hi], one entry per input bin.

    Entry i holds the function at the midpoint of bin i, quantized to raw
    fixed point. Lookup clamps to the boundary entries outside [lo, hi]
    and reads the containing bin otherwise (a pure ROM read, no
    interpolation).
    """

    def __init__(self, name, frac_bits=DEFAULT_FRAC_BITS, bits=8, lo=None, hi=None):
        if name not in LUT_FUNCTIONS:
            raise ValueError(f"unknown LUT function {name!r}")
        if lo is None or hi is None:
            lo, hi = LUT_DEFAULT_RANGES[name]
        if not hi > lo:
            raise ValueError("LUT range must be non-empty")
        self.name = name
        self.frac_bits = frac_bits
        self.bits = bits
        self.size = 1 << bits
        self.lo = lo
        self.hi = hi
        self.bin_width = (hi - lo) / self.size
        mids = lo + (np.arange(self.size) + 0.5) * self.bin_width
        self.entries = quantize(LUT_FUNCTIONS[name](mids), frac_bits)

    def lookup(self, raw):
        """Raw fixed-point input(s) -> raw table entry of the containing bin."""
        x = np.asarray(raw, dtype=np.float64) / (1 << self.frac_bits)
        idx = np.floor((x - self.lo) / self.bin_width).astype(np.int64)
        idx = np.clip(idx, 0, self.size - 1)
        out = self.entries[idx]
        if np.isscalar(raw) or np.ndim(raw) == 0:
            return int(out)
        return out

    def error_bound(self):
        """Worst-case |table - exact| over [lo, hi], derived analytically.

        half-bin * max|f'| covers the midpoint sampling, plus half an LSB
        for entry quantization.
        """
        grid = np.linspace(self.lo, self.hi, 4 * self.size + 1)
        f = LUT_FUNCTIONS[self.name]
        if self.name == "sigmoid":
            s = f(grid)
            slope = np.max(s * (1 - s))
        elif self.name == "tanh":
            slope = np.max(1 - np.tanh(grid) ** 2)
        elif self.name == "exp":
            slope = np.exp(self.hi)
        else:  # log: steepest at lo
            slope = 1.0 / self.lo
        return self.bin_width / 2 * slope + 0.5 / (1 << self.frac_bits)


def build_default_luts(frac_bits=DEFAULT_FRAC_BITS, bits=8):
    """The standard ROM contents: one table per transcendental function."""
    return {name: LutTable(name, frac_bits, bits) for name in LUT_FUNCTIONS}
