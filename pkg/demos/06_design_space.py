"""Design-space exploration: sweeps over lane width, register file size,
and the precision/noise trade-off of multi-bit memristor devices."""

import numpy as np

from xbarsim import models
from xbarsim.compiler import compile_model
from xbarsim.machine import MachineConfig
from xbarsim.simulator import Machine, run

print("== VFU lanes on a vector-bound kernel ==")
g, inputs = models.vector_kernel()
for lanes in (1, 2, 4, 8):
    cfg = MachineConfig(tiles=1, vfu_lanes=lanes)
    prog, _ = compile_model(g, cfg)
    rep = run(Machine(cfg, prog), inputs)
    print(f"  lanes={lanes}: {rep.latency_ns:7.0f} ns  "
          f"{rep.energy_total_nj:6.2f} nJ")

print("\n== register file size vs spills (crossing access pattern) ==")
from xbarsim import graph as gr
rng = np.random.default_rng(5)
gc = gr.ModelGraph()
v = [gc.input(f"x{i}", 8) for i in range(8)]
ys = [gc.alu("max", v[i], v[(i + 4) % 8]) for i in range(8)]
acc = ys[0]
for y in ys[1:]:
    acc = gc.alu("add", acc, y)
gc.output("y", acc)
gc.freeze()
for regs in (128, 48, 32, 25):
    cfg = MachineConfig(xbar_dim=8, mvmus_per_core=2, cores_per_tile=1,
                        tiles=1, register_size=regs, dmem_words=2048)
    _, crep = compile_model(gc, cfg)
    print(f"  {regs:3d} general registers -> {crep.spill_count} spilled values")

print("\n== bits per device vs write-noise tolerance ==")
g, pts, labels = models.trained_tiny_classifier()


def accuracy(bits, sigma):
    accs = []
    for seed in (11, 12, 13):
        cfg = MachineConfig(tiles=1, bits_per_device=bits, noise_sigma=sigma,
                            seed=seed)
        prog, _ = compile_model(g, cfg)
        outs = [run(Machine(cfg, prog), p).outputs["y"] for p in pts]
        accs.append(models.classifier_accuracy(outs, labels))
    return float(np.mean(accs))


print(f"  {'sigma':>7s}  {'1 bit':>6s}  {'2 bit':>6s}  {'4 bit':>6s}")
for sigma in (0.0, 0.01, 0.02, 0.04, 0.08):
    row = [accuracy(bits, sigma) for bits in (1, 2, 4)]
    print(f"  {sigma:7.3f}  " + "  ".join(f"{a:6.2f}" for a in row))
print("  (higher device precision narrows noise margins: the 4-bit column"
      " collapses first)")
