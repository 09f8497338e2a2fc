"""The compiler optimizations, each toggled against its ablation.

MVM coalescing (one masked instruction drives parallel MVMUs), sliding-
window input shuffling (XbarIn reuse through DAC re-routing), affinity
placement vs random, RPO vs breadth-first linearization, and the
counter/branch loop mode for windowed layers.
"""

from xbarsim import models
from xbarsim.compiler import CompileOptions, compile_model
from xbarsim.machine import MachineConfig
from xbarsim.simulator import Machine, run

print("== MVM coalescing on a pure-MVM pair ==")
g, inputs = models.pure_mvm_kernel()
cfg = models.default_config_for("mvm_pair")
for label, opts in (("coalesced", None),
                    ("uncoalesced", CompileOptions(coalesce=False))):
    prog, _ = compile_model(g, cfg, opts)
    rep = run(Machine(cfg, prog), inputs)
    print(f"  {label:12s} mvm instrs={rep.instr_dynamic['mvm']} "
          f"mvm cycles={rep.instr_cycles['mvm']}")

print("\n== input shuffling on a 3x3 conv over 8x8 ==")
g, inputs = models.build_example("conv8x8")
cfg = models.default_config_for("conv8x8")
for label, opts in (("shuffled", None),
                    ("plain fills", CompileOptions(input_shuffle=False))):
    prog, _ = compile_model(g, cfg, opts)
    rep = run(Machine(cfg, prog), inputs, step_limit=5_000_000)
    h = prog.static_histogram()
    print(f"  {label:12s} copy instrs={h.get('copy', 0):4d} "
          f"copy cycles={rep.instr_cycles.get('copy', 0):5d} "
          f"patterns={len(prog.patterns)}")

print("\n== graph partitioning vs random placement (2-tile MLP) ==")
g, inputs = models.mlp_model(256)
cfg = MachineConfig(tiles=2)
for label, opts in (("affinity", None),
                    ("random", CompileOptions(naive_partition=True, seed=3))):
    prog, _ = compile_model(g, cfg, opts)
    h = prog.static_histogram()
    rep = run(Machine(cfg, prog), inputs, step_limit=5_000_000)
    print(f"  {label:9s} sends+receives="
          f"{h.get('send', 0) + h.get('receive', 0):3d} "
          f"energy={rep.energy_total_nj:8.2f} nJ")

print("\n== RPO vs breadth-first linearization (register pressure) ==")
for label, opts in (("reverse post-order", None),
                    ("breadth-first", CompileOptions(naive_order=True))):
    prog, crep = compile_model(g, cfg, opts)
    print(f"  {label:20s} max live values={crep.maxlive}")

print("\n== loop mode: compact control flow for windowed layers ==")
g, inputs = models.build_example("conv_loop")
cfg = models.default_config_for("conv8x8")
unrolled, _ = compile_model(g, cfg)
looped, _ = compile_model(g, cfg, CompileOptions(conv_loop=True))
mvm_core = next((s.tile, s.core) for s in unrolled.segments
                if any(i.op == "mvm" for i in s.instrs))
ub = 7 * next(len(s.instrs) for s in unrolled.segments
              if (s.tile, s.core) == mvm_core)
lb = 7 * next(len(s.instrs) for s in looped.segments
              if any(i.op == "brn" for i in s.instrs))
ru = run(Machine(cfg, unrolled), inputs, step_limit=5_000_000)
rl = run(Machine(cfg, looped), inputs, step_limit=5_000_000)
same = all(ru.outputs[k].tolist() == rl.outputs[k].tolist()
           for k in ru.outputs)
print(f"  MVM-core bytes: unrolled={ub} looped={lb}; outputs identical={same}")
