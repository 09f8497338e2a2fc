import numpy as np
import pytest

from xbarsim import fixedpoint as fp, graph as gr, isa, layers, regalloc
from xbarsim.compiler import compile_model
from xbarsim.lowir import LowInstr, Mem, VReg
from xbarsim.machine import MachineConfig
from xbarsim.simulator import Machine, run


def test_liveness_range_ends_at_last_use():
    # a = load; b = a + a: a's range ends at the add
    seq = [
        LowInstr("load", 0, VReg(0), Mem(0), 0, 4),
        LowInstr("alu", isa.ALU_OPS["add"], VReg(1), VReg(0), VReg(0), 4),
        LowInstr("store", 0, Mem(1), VReg(1), 1, 4),
    ]
    ranges = regalloc.compute_liveness(seq)
    assert ranges[0].start == 0 and ranges[0].end == 1
    assert ranges[1].start == 1 and ranges[1].end == 2
    assert ranges[0].size == 4


def test_liveness_loop_carried_value_spans_back_edge():
    seq = [
        LowInstr("set", 0, VReg(0), 0, 0, 0),        # counter def before loop
        LowInstr("set", 0, VReg(1), 1, 0, 0),
        LowInstr("aluint", isa.ALUINT_OPS["add"], VReg(2), VReg(0), VReg(1), 0),
        LowInstr("set", 0, VReg(3), 7, 0, 0),        # unrelated, inside loop
        LowInstr("brn", isa.BRN_OPS["ne"], VReg(2), VReg(1), 2, 0),
    ]
    ranges = regalloc.compute_liveness(seq, loop_span=(2, 4))
    assert ranges[0].end == 4          # live-in values span the back edge
    assert ranges[1].end == 4
    assert ranges[3].end == 3          # defined inside the loop: no extension


def test_use_before_def_is_an_error():
    seq = [LowInstr("store", 0, Mem(0), VReg(5), 1, 2)]
    with pytest.raises(regalloc.RegAllocError, match="before definition"):
        regalloc.compute_liveness(seq)


def _alloc(seq, general, **kw):
    cfg = MachineConfig(xbar_dim=4, mvmus_per_core=2, cores_per_tile=2,
                        tiles=1, register_size=general, dmem_words=512)
    slots = []

    def mk(size):
        slots.append(size)
        return 100 + len(slots)

    res = regalloc.allocate(seq, cfg, mk, **kw)
    return res, slots


def _chain(n, width):
    seq = [LowInstr("load", 0, VReg(k), Mem(k), 0, width) for k in range(n)]
    acc = VReg(n)
    seq.append(LowInstr("alu", isa.ALU_OPS["add"], acc, VReg(0), VReg(1), width))
    for k in range(2, n):
        seq.append(LowInstr("alu", isa.ALU_OPS["add"], acc, acc, VReg(k), width))
    seq.append(LowInstr("store", 0, Mem(99), acc, 1, width))
    return seq


def test_no_spills_when_values_fit():
    res, slots = _alloc(_chain(4, 4), general=64)
    assert res.spill_count == 0 and not slots
    assert regalloc.audit(res.instrs, res)


def test_spills_under_pressure_and_audit_clean():
    res, slots = _alloc(_chain(6, 4), general=12)
    assert res.spill_count > 0 and slots
    assert regalloc.audit(res.instrs, res)
    ops = [li.op for li in res.instrs]
    assert "store" in ops[:-1]      # spill stores appeared mid-program


def test_spill_count_monotone_as_registers_shrink():
    prev = -1
    for general in (64, 32, 16, 12):
        res, _ = _alloc(_chain(6, 4), general=general)
        if prev >= 0:
            assert res.spill_count >= prev
        prev = res.spill_count
    assert prev > 0


def test_register_file_below_working_set_is_a_clear_error():
    # a 3-operand width-4 instruction needs 12 words at once
    with pytest.raises(regalloc.RegAllocError, match="needs 12 words"):
        _alloc(_chain(6, 4), general=8)


def test_value_larger_than_register_file_is_an_error():
    with pytest.raises(regalloc.RegAllocError, match="exceeds"):
        _alloc(_chain(2, 16), general=8)


def _crossing_model():
    """Window-like pressure: each value is consumed by two distant
    combines, so roughly half the layer stays live under any order."""
    rng = np.random.default_rng(5)
    g = gr.ModelGraph()
    v = [g.input(f"x{i}", 8) for i in range(8)]
    ys = [g.alu("max", v[i], v[(i + 4) % 8]) for i in range(8)]
    acc = ys[0]
    for y in ys[1:]:
        acc = g.alu("add", acc, y)
    g.output("y", acc)
    g.freeze()
    inputs = {f"x{i}": fp.quantize(rng.uniform(-0.05, 0.05, 8))
              for i in range(8)}
    return g, inputs


def test_compiled_program_with_spills_stays_equivalent():
    g, inputs = _crossing_model()
    want = gr.evaluate(g, inputs, xbar_dim=8)
    spilled_any = False
    for general in (128, 32):
        cfg = MachineConfig(xbar_dim=8, mvmus_per_core=2, cores_per_tile=1,
                            tiles=1, register_size=general, dmem_words=2048)
        prog, rep = compile_model(g, cfg)
        if general == 32:
            assert rep.spill_count > 0
            spilled_any = True
        res = run(Machine(cfg, prog), inputs)
        assert res.halted
        assert res.outputs["y"].tolist() == want["y"].tolist()
        if rep.spill_count:
            assert res.spill_access_pct > 0
    assert spilled_any


def test_compiled_spill_count_monotone_in_register_size():
    g, inputs = _crossing_model()
    prev = -1
    for general in (128, 48, 32, 25):
        cfg = MachineConfig(xbar_dim=8, mvmus_per_core=2, cores_per_tile=1,
                            tiles=1, register_size=general, dmem_words=2048)
        _, rep = compile_model(g, cfg)
        if prev >= 0:
            assert rep.spill_count >= prev
        prev = rep.spill_count
    assert prev > 0


def test_xbar_liveness_two_fused_mvms():
    """A coalesced 2-MVMU instruction holds 2*D XbarOut values live."""
    rng = np.random.default_rng(1)
    g = gr.ModelGraph()
    x = g.input("x", 8)
    out = g.mvm(g.const_matrix(rng.uniform(-0.3, 0.3, (8, 4))), x)
    g.output("y", out)
    g.freeze()
    cfg = MachineConfig(xbar_dim=4, mvmus_per_core=2, cores_per_tile=2,
                        tiles=1, dmem_words=512)
    prog, _ = compile_model(g, cfg)
    seg = next(s for s in prog.segments
               if any(i.op == "mvm" for i in s.instrs))
    intervals, peak = regalloc.xbar_liveness(seg.instrs, cfg.regspace())
    assert peak["xbar_out"] == 2 * cfg.xbar_dim
    assert peak["xbar_in"] == 2 * cfg.xbar_dim
