"""Compilation driver: tiled graph -> scheduled instructions -> container.

Lowering walks each actor's scheduled sequence and emits pre-allocation
instructions: values move through general-purpose virtual registers, with
explicit copies into XbarIn before each (possibly coalesced) MVM and out
of XbarOut after it. Sliding-window MVMs reuse XbarIn contents across
consecutive windows when input shuffling is enabled: only the fresh window
elements are copied in and the MVM instruction carries a shuffle-pattern
id that re-routes XbarIn slots to DAC rows.

Memory addresses are assigned after linearization: statically resident
symbols (inputs, constants, outputs, spill slots) first, then transient
values by linear scan over their global-order lifetimes, reusing words
once their consumer count drains.
"""

from dataclasses import dataclass, field

import numpy as np

from . import container, isa, regalloc, schedule
from .lowir import LowInstr, Mem, VReg, finalize
from .partition import (
    TILE_UNIT,
    CompileError,
    insert_data_movement,
    place,
    plan_dump,
    tile_tensors,
)


@dataclass
class CompileOptions:
    coalesce: bool = True
    input_shuffle: bool = True
    naive_partition: bool = False
    naive_order: bool = False
    conv_loop: bool = False
    seed: int = 0


@dataclass
class CompileReport:
    static_histogram: dict = field(default_factory=dict)
    per_actor_instrs: dict = field(default_factory=dict)
    coalesce_groups: int = 0
    maxlive: int = 0
    spill_count: int = 0
    spill_slots: int = 0
    dmem_words_used: dict = field(default_factory=dict)
    fifo_pairs: int = 0
    xbar_maxlive: dict = field(default_factory=dict)
    plan: str = ""

    def to_text(self):
        lines = ["compile report",
                 f"  coalesce groups: {self.coalesce_groups}",
                 f"  schedule max live values: {self.maxlive}",
                 f"  spilled values: {self.spill_count}"
                 f" ({self.spill_slots} slots)",
                 f"  fifo pairs: {self.fifo_pairs}"]
        lines.append("  static instructions: " + ", ".join(
            f"{k}={v}" for k, v in sorted(self.static_histogram.items())))
        for actor, n in sorted(self.per_actor_instrs.items()):
            t, c = actor
            who = f"tile {t} core {c}" if c != TILE_UNIT else f"tile {t} unit"
            lines.append(f"  {who}: {n} instructions")
        for t, used in sorted(self.dmem_words_used.items()):
            lines.append(f"  tile {t} data memory: {used} words")
        return "\n".join(lines) + "\n"


class _PatternTable:
    """Per-core shuffle patterns; a pattern id bundles one permutation per
    member MVMU of the instruction that references it."""

    def __init__(self):
        self.by_core = {}

    def intern(self, core, bundle):
        """bundle: tuple of (mvmu, perm tuple); returns the filter-field id."""
        table = self.by_core.setdefault(core, {})
        if bundle in table:
            return table[bundle]
        pid = len(table) + 1
        table[bundle] = pid
        return pid

    def rows(self):
        for (tile, core), table in sorted(self.by_core.items()):
            for bundle, pid in sorted(table.items(), key=lambda kv: kv[1]):
                for mvmu, perm in bundle:
                    yield container.ShufflePattern(tile, core, mvmu, pid, 0,
                                                   list(perm))


class _Lowerer:
    def __init__(self, tg, machine, opts):
        self.tg = tg
        self.m = machine
        self.opts = opts
        self.rs = machine.regspace()
        self.code = {}            # actor -> [LowInstr]
        self.vreg_counter = {}    # actor -> next vreg id
        self.value_vreg = {}      # tnode id -> VReg
        self.patterns = _PatternTable()
        self.win_state = {}       # (core, mvmu) -> (win, [slot contents])
        self.out_syms = {}        # output tnode id -> symbol
        self.elided = set()

    def new_vreg(self, actor):
        v = self.vreg_counter.get(actor, 0)
        self.vreg_counter[actor] = v + 1
        return VReg(v)

    def emit(self, actor, li):
        self.code.setdefault(actor, []).append(li)

    def val(self, tid):
        v = self.value_vreg.get(tid)
        if v is None:
            raise CompileError(f"no register value for tnode {tid}")
        return v

    # -- window shuffle planning -------------------------------------------

    def plan_window_elision(self):
        """Window gathers whose only consumer is a same-core window MVM are
        filled incrementally into XbarIn instead of staged in registers."""
        if not self.opts.input_shuffle:
            return
        consumers = self.tg.consumers()
        for n in self.tg.tnodes:
            if n.kind != "gather" or n.win is None:
                continue
            cons = consumers[n.id]
            if len(cons) != 1:
                continue
            c = self.tg.tnodes[cons[0]]
            if c.kind == "mvm" and c.win == n.win and c.place == n.place:
                self.elided.add(n.id)

    def _window_fill(self, actor, mvmu, gat, rows):
        """Incremental XbarIn fill; returns the permutation for this MVM."""
        needed = [(gat.inputs[slot], off) for slot, off in gat.indices]
        key = (actor, mvmu)
        state = self.win_state.get(key)
        consecutive = (state is not None and state[0][0] == gat.win[0]
                       and state[0][1] == gat.win[1] - 1
                       and len(state[1]) == rows)
        xin = self.rs.xbar_in(mvmu)
        if not consecutive:
            slots = list(needed)
            self._copy_runs(actor, needed, range(rows), xin)
            perm = tuple(range(rows))
        else:
            slots = list(state[1])
            pos = {item: s for s, item in enumerate(slots)}
            needed_set = set(needed)
            free = [s for s, item in enumerate(slots) if item not in needed_set]
            fresh = [item for item in needed if item not in pos]
            fills = []
            for item, s in zip(fresh, free):
                slots[s] = item
                pos[item] = s
                fills.append((item, s))
            self._copy_runs(actor, [f[0] for f in fills],
                            [f[1] for f in fills], xin)
            perm = tuple(pos[item] for item in needed)
        self.win_state[key] = (gat.win, slots)
        return perm

    def _copy_runs(self, actor, items, dests, xin_base):
        """Copy (source vreg element) items into XbarIn slots, batching
        maximal contiguous runs into single vector copies."""
        run = None
        for item, dst in zip(items, dests):
            src, off = item
            v = self.val(src)
            if (run and run[0] == v.v and off == run[2] + run[4]
                    and dst == run[3] + run[4]):
                run = (run[0], run[1], run[2], run[3], run[4] + 1)
            else:
                if run:
                    self._flush_run(actor, run, xin_base)
                run = (v.v, v.off, off, dst, 1)
        if run:
            self._flush_run(actor, run, xin_base)

    def _flush_run(self, actor, run, xin_base):
        vv, vbase, off, dst, ln = run
        self.emit(actor, LowInstr("copy", 0, xin_base + dst,
                                  VReg(vv, vbase + off), 0, ln))

    # -- unit lowering -------------------------------------------------------

    def lower_unit(self, unit):
        tg = self.tg
        lead = tg.tnodes[unit.members[0]]
        actor = lead.place
        k = lead.kind
        if k == "mvm":
            self._lower_mvm_group(actor, unit.members)
        elif k == "merge":
            # partial sums fold in ascending row-block order; each step
            # writes a fresh register so intermediates stay spillable
            ins = lead.inputs
            acc = self.new_vreg(actor)
            self.emit(actor, LowInstr("alu", isa.ALU_OPS["add"], acc,
                                      self.val(ins[0]), self.val(ins[1]),
                                      lead.length))
            for extra in ins[2:]:
                nxt = self.new_vreg(actor)
                self.emit(actor, LowInstr("alu", isa.ALU_OPS["add"], nxt, acc,
                                          self.val(extra), lead.length))
                acc = nxt
            self.value_vreg[lead.id] = acc
        elif k == "alu":
            v = self.new_vreg(actor)
            self.emit(actor, LowInstr("alu", isa.ALU_OPS[lead.op], v,
                                      self.val(lead.inputs[0]),
                                      self.val(lead.inputs[1]), lead.length))
            self.value_vreg[lead.id] = v
        elif k == "alu_imm":
            v = self.new_vreg(actor)
            self.emit(actor, LowInstr("alui", isa.ALU_OPS[lead.op], v,
                                      self.val(lead.inputs[0]),
                                      lead.imm & 0xFFF, lead.length))
            self.value_vreg[lead.id] = v
        elif k == "act":
            v = self.new_vreg(actor)
            self.emit(actor, LowInstr("alu", isa.ALU_OPS[lead.op], v,
                                      self.val(lead.inputs[0]), 0, lead.length))
            self.value_vreg[lead.id] = v
        elif k == "gather":
            if lead.id in self.elided:
                return
            v = self.new_vreg(actor)
            run = None
            for dst, (slot, off) in enumerate(lead.indices):
                src = self.val(lead.inputs[slot])
                if (run and run[0] == src.v and run[1] == src.off
                        and off == run[2] + run[4]
                        and dst == run[3] + run[4]):
                    run = (run[0], run[1], run[2], run[3], run[4] + 1)
                else:
                    if run:
                        self.emit(actor, LowInstr(
                            "copy", 0, VReg(v.v, run[3]),
                            VReg(run[0], run[1] + run[2]), 0, run[4]))
                    run = (src.v, src.off, off, dst, 1)
            if run:
                self.emit(actor, LowInstr("copy", 0, VReg(v.v, run[3]),
                                          VReg(run[0], run[1] + run[2]), 0,
                                          run[4]))
            self.value_vreg[lead.id] = v
        elif k == "load":
            v = self.new_vreg(actor)
            self.emit(actor, LowInstr("load", 0, v, Mem(lead.sym), 0,
                                      lead.length))
            self.value_vreg[lead.id] = v
        elif k == "store":
            self.emit(actor, LowInstr("store", 0, Mem(lead.sym),
                                      self.val(lead.inputs[0]), lead.count,
                                      lead.length))
        elif k == "send":
            self.emit(actor, LowInstr("send", lead.fifo, Mem(lead.sym),
                                      lead.target, 0, lead.length))
        elif k == "receive":
            self.emit(actor, LowInstr("receive", lead.fifo, Mem(lead.sym),
                                      lead.count, 0, lead.length))
        elif k == "output":
            sym = self.out_syms[lead.id]
            self.emit(actor, LowInstr("store", 0, Mem(sym.id),
                                      self.val(lead.inputs[0]), 1,
                                      lead.length))
        else:
            raise CompileError(f"cannot lower tnode kind {k!r}")

    def _lower_mvm_group(self, actor, members):
        tg = self.tg
        ordered = sorted(members, key=lambda t: tg.matrix_tiles[
            tg.tnodes[t].matrix].mvmu[2])
        mask = 0
        bundle = []
        for tid in ordered:
            n = tg.tnodes[tid]
            mt = tg.matrix_tiles[n.matrix]
            mvmu = mt.mvmu[2]
            mask |= 1 << mvmu
            src = tg.tnodes[n.inputs[0]]
            if src.id in self.elided:
                perm = self._window_fill(actor, mvmu, src, mt.rows)
                if perm != tuple(range(mt.rows)):
                    bundle.append((mvmu, perm))
            else:
                self.win_state.pop((actor, mvmu), None)
                self.emit(actor, LowInstr("copy", 0, self.rs.xbar_in(mvmu),
                                          self.val(src.id), 0, mt.rows))
        filt = self.patterns.intern(actor, tuple(bundle)) if bundle else 0
        self.emit(actor, LowInstr("mvm", mask, filt, 0, 0, 0))
        for tid in ordered:
            n = tg.tnodes[tid]
            mt = tg.matrix_tiles[n.matrix]
            v = self.new_vreg(actor)
            self.emit(actor, LowInstr("copy", 0, v,
                                      self.rs.xbar_out(mt.mvmu[2]), 0,
                                      mt.cols))
            self.value_vreg[n.id] = v


def _assign_memory(tg, machine):
    """Bind every symbol to a distinct tile-memory range.

    Addresses are never shared between different values: the valid/count
    attributes synchronize presence, not identity, so a fast consumer of
    the next value at a shared address could claim the previous value's
    remaining count. Reuse is therefore reserved for explicit
    single-producer/single-consumer channels (one symbol written many
    times, like the sliding-window mailboxes), which the handshake does
    make safe.
    """
    used = {}
    for s in tg.symbols:
        base = used.get(s.tile, 0)
        s.addr = base
        used[s.tile] = base + s.size
    for t, words in used.items():
        if words > machine.dmem_words:
            raise CompileError(
                f"tile {t} shared memory exhausted: need {words} of "
                f"{machine.dmem_words} words")
    return used


def _emit_container(tg, machine, code, reg_maps, meta):
    prog = container.Program(machine.xbar_dim, machine.mvmus_per_core,
                             machine.cores_per_tile, machine.tiles,
                             machine.frac_bits, machine.bits_per_device)

    def addr_of(mem):
        s = tg.symbols[mem.sym]
        if s.addr is None:
            raise CompileError(f"symbol {s.id} has no address")
        return s.addr + mem.off

    for actor in sorted(code):
        instrs = finalize(code[actor], reg_maps.get(actor, lambda v: v),
                          addr_of)
        cap = machine.tile_imem_capacity if actor[1] == TILE_UNIT \
            else machine.core_imem_capacity
        if len(instrs) > cap:
            raise CompileError(
                f"tile {actor[0]} core {actor[1]}: {len(instrs)} instructions "
                f"exceed the {cap}-instruction memory")
        for i in instrs:
            isa.validate(i)
        prog.segments.append(container.Segment(actor[0], actor[1], instrs))

    for mt in tg.matrix_tiles:
        if mt.mvmu is None:
            continue
        t, c, u = mt.mvmu
        prog.weights.append(container.WeightBlock(
            t, c, u, [list(map(int, row)) for row in np.asarray(mt.w_raw)]))

    for s in tg.symbols:
        if s.kind == "const":
            prog.data.append(container.DataBlock(s.tile, s.addr, s.count,
                                                 [int(w) for w in s.words]))
        elif s.kind == "input":
            prog.io.append(container.IoBinding("in", s.name, s.tile, s.addr,
                                               s.size, s.count))
        elif s.kind == "output":
            prog.io.append(container.IoBinding("out", s.name, s.tile, s.addr,
                                               s.size, 1))
    prog.io.sort(key=lambda b: (b.kind, b.name))

    regions = {}
    for s in tg.symbols:
        if s.addr is None:
            continue
        regions.setdefault(s.tile, []).append((s.addr, s.addr + s.size, s.kind))
    for t, rows in sorted(regions.items()):
        rows.sort()
        merged = []
        for lo, hi, kind in rows:
            if merged and merged[-1][2] == kind and merged[-1][1] >= lo:
                merged[-1] = (merged[-1][0], max(hi, merged[-1][1]), kind)
            else:
                merged.append((lo, hi, kind))
        for lo, hi, kind in merged:
            prog.regions.append(container.Region(t, lo, hi, kind))
    prog.meta.update(meta)
    return prog


def compile_model(graph, machine, opts=None):
    """Full pipeline: tile, place, insert data movement, coalesce,
    linearize, lower, allocate registers, assign memory, emit."""
    opts = opts or CompileOptions()
    if opts.conv_loop:
        return _compile_conv_loop(graph, machine, opts)
    tg = tile_tensors(graph, machine.xbar_dim)
    place(tg, machine, naive=opts.naive_partition, seed=opts.seed)
    insert_data_movement(tg, machine)
    groups = schedule.coalesce_mvms(tg, machine) if opts.coalesce else []
    if groups and not schedule.check_groups_independent(tg, groups):
        raise CompileError("coalescing produced a dependent group")
    sched = schedule.linearize(tg, groups, naive=opts.naive_order)

    low = _Lowerer(tg, machine, opts)
    for tid in (n.id for n in tg.tnodes if n.kind == "output"):
        n = tg.tnodes[tid]
        low.out_syms[tid] = tg.new_symbol(n.place[0], n.length, "output",
                                          name=n.name)
    low.plan_window_elision()
    for unit in sched.units:
        low.lower_unit(unit)

    report = CompileReport()
    report.coalesce_groups = sched.coalesce_groups
    report.maxlive = sched.maxlive
    report.fifo_pairs = len(tg.fifo_map)

    reg_maps = {}
    for actor in sorted(low.code):
        if actor[1] == TILE_UNIT:
            continue
        tile = actor[0]

        def mk_spill(size, _tile=tile):
            return tg.new_symbol(_tile, size, "spill").id

        try:
            res = regalloc.allocate(low.code[actor], machine, mk_spill)
        except regalloc.RegAllocError as e:
            raise CompileError(
                f"tile {actor[0]} core {actor[1]}: {e}") from e
        low.code[actor] = res.instrs
        base = res.base
        reg_maps[actor] = (lambda b: lambda vr: b[vr.v] + vr.off)(base)
        report.spill_count += res.spill_count
    report.spill_slots = sum(1 for s in tg.symbols if s.kind == "spill")

    used = _assign_memory(tg, machine)
    report.dmem_words_used = used

    meta = {"coalesce_groups": sched.coalesce_groups,
            "maxlive": sched.maxlive,
            "spill_count": report.spill_count,
            "loop_mode": 0}
    prog = _emit_container(tg, machine, low.code, reg_maps, meta)
    for pat in low.patterns.rows():
        prog.patterns.append(pat)
    report.static_histogram = prog.static_histogram()
    report.per_actor_instrs = {(s.tile, s.core): len(s.instrs)
                               for s in prog.segments}
    rs = machine.regspace()
    for seg in prog.segments:
        if seg.core != TILE_UNIT:
            _, peak = regalloc.xbar_liveness(seg.instrs, rs)
            for cls, v in peak.items():
                report.xbar_maxlive[cls] = max(report.xbar_maxlive.get(cls, 0), v)
    report.plan = plan_dump(tg)
    return prog, report


# ---------------------------------------------------------------------------
# Sliding-window loop mode
# ---------------------------------------------------------------------------

def _compile_conv_loop(graph, machine, opts):
    """Compact control-flow compilation of a single windowed layer.

    The layer is restructured across three cores of one tile: a feeder
    assembling windows into a fixed mailbox, a looped MVM core, and a
    collector draining results to the output region. Fixed mailbox
    addresses plus the valid/count handshake replace address-varying
    unrolled code; the loop closes with a counter and conditional branch.
    """
    if machine.cores_per_tile < 3:
        raise CompileError("loop mode needs at least 3 cores per tile")
    tg = tile_tensors(graph, machine.xbar_dim)
    wins = {}
    for n in tg.tnodes:
        if n.kind == "mvm" and n.win is not None:
            wins.setdefault(n.win, []).append(n)
    if not wins or len({w[0] for w in wins}) != 1:
        raise CompileError("loop mode expects exactly one windowed layer")
    n_windows = len(wins)

    consumers_of = {n.id: [] for n in tg.tnodes}
    for n in tg.tnodes:
        for i in n.inputs:
            consumers_of[i].append(n.id)

    def sole_consumer(tid):
        nxt = consumers_of[tid]
        if len(nxt) != 1:
            raise CompileError("loop mode expects single-consumer chains")
        return nxt[0]

    # trace each window's chain: mvm [-> merge] [-> bias add] [-> act] -> output
    chains = []
    bias_words = None
    act_op = None
    for w in sorted(wins):
        mvms = sorted(wins[w], key=lambda n: tg.tnodes[n.inputs[0]].block)
        cur = sole_consumer(mvms[0].id)
        if tg.tnodes[cur].kind == "merge":
            cur = sole_consumer(cur)
        if tg.tnodes[cur].kind == "alu" and tg.tnodes[cur].op == "add":
            const_in = [i for i in tg.tnodes[cur].inputs
                        if tg.tnodes[i].kind == "const"]
            if len(const_in) != 1:
                raise CompileError("loop mode bias must be a constant vector")
            bias_words = tg.tnodes[const_in[0]].words
            cur = sole_consumer(cur)
        if tg.tnodes[cur].kind == "act":
            act_op = tg.tnodes[cur].op
            cur = sole_consumer(cur)
        if tg.tnodes[cur].kind != "output":
            raise CompileError("loop mode chains must end at model outputs")
        chains.append((w, mvms, tg.tnodes[cur]))

    # window geometry: row tiles of the shared weight matrix, pinned to
    # the looper core's MVMUs
    tiles0 = sorted({tg.matrix_tiles[n.matrix].id for n in chains[0][1]})
    tiles0 = [tg.matrix_tiles[i] for i in tiles0]
    tiles0.sort(key=lambda mt: mt.row_block)
    if any(mt.col_block != 0 for mt in tiles0):
        raise CompileError("loop mode supports a single output block")
    if len(tiles0) > machine.mvmus_per_core:
        raise CompileError("window rows exceed one core's MVMUs")
    cols = tiles0[0].cols
    feeder, looper, collector = (0, 0), (0, 1), (0, 2)
    for k, mt_ref in enumerate(tiles0):
        mt_ref.mvmu = (0, 1, k)

    window_len = sum(mt.rows for mt in tiles0)
    parts = []
    off = 0
    for mt in tiles0:
        parts.append((mt.mvmu[2], off, mt.rows))
        off += mt.rows

    # symbols: image blocks, bias, mailboxes, outputs
    img_syms = {}
    for name, ids in tg.input_blocks.items():
        for tid in ids:
            n = tg.tnodes[tid]
            s = tg.new_symbol(0, n.length, "input", name=name, count=1)
            img_syms[tid] = s
            n.sym = s.id
    bias_sym = None
    if bias_words is not None:
        bias_sym = tg.new_symbol(0, cols, "const", count=1,
                                 words=list(bias_words)).id
    mb_in = tg.new_symbol(0, window_len, "value").id
    mb_out = tg.new_symbol(0, cols, "value").id
    out_syms = {}
    for w, _, out_node in chains:
        out_syms[w] = tg.new_symbol(0, out_node.length, "output",
                                    name=out_node.name)

    code = {feeder: [], looper: [], collector: []}
    # feeder: load the image once, then per window copy runs + store
    vctr = [0]

    def vr():
        vctr[0] += 1
        return VReg(vctr[0] - 1)

    img_vreg = {}
    for tid, s in img_syms.items():
        v = vr()
        code[feeder].append(LowInstr("load", 0, v, Mem(s.id), 0, s.size))
        img_vreg[tid] = v
    for w, mvms, _ in chains:
        gat_blocks = [tg.tnodes[m.inputs[0]] for m in mvms]
        win_v = vr()
        dst = 0
        for gb in gat_blocks:
            for slot, offs in gb.indices:
                src = img_vreg[gb.inputs[slot]]
                code[feeder].append(LowInstr("copy", 0, VReg(win_v.v, dst),
                                             VReg(src.v, offs), 0, 1))
                dst += 1
        code[feeder].append(LowInstr("store", 0, Mem(mb_in), win_v, 1,
                                     window_len))
    code[feeder] = _merge_copy_runs(code[feeder])

    code[looper] = schedule.emit_conv_loop(n_windows, parts, cols, mb_in,
                                           mb_out, bias_sym, act_op, machine)
    for w, _, out_node in chains:
        v = vr()
        code[collector].append(LowInstr("load", 0, v, Mem(mb_out), 0, cols))
        code[collector].append(LowInstr("store", 0, Mem(out_syms[w].id), v, 1,
                                        cols))

    reg_maps = {}
    report = CompileReport()
    for actor in (feeder, collector):
        def mk_spill(size, _tile=actor[0]):
            return tg.new_symbol(_tile, size, "spill").id
        res = regalloc.allocate(code[actor], machine, mk_spill)
        code[actor] = res.instrs
        base = res.base
        reg_maps[actor] = (lambda b: lambda vreg: b[vreg.v] + vreg.off)(base)
        report.spill_count += res.spill_count
    reg_maps[looper] = lambda vreg: vreg  # already physical

    used = _assign_memory(tg, machine)
    report.dmem_words_used = used

    meta = {"coalesce_groups": 1 if len(parts) > 1 else 0,
            "maxlive": 0, "spill_count": report.spill_count, "loop_mode": 1}
    prog = _emit_container(tg, machine, code, reg_maps, meta)
    report.static_histogram = prog.static_histogram()
    report.per_actor_instrs = {(s.tile, s.core): len(s.instrs)
                               for s in prog.segments}
    report.plan = plan_dump(tg)
    return prog, report


def _merge_copy_runs(instrs):
    """Fuse adjacent single-element copies with contiguous operands."""
    out = []
    for li in instrs:
        if (out and li.op == "copy" and out[-1].op == "copy"
                and isinstance(li.a, VReg) and isinstance(out[-1].a, VReg)
                and isinstance(li.b, VReg) and isinstance(out[-1].b, VReg)
                and li.a.v == out[-1].a.v and li.b.v == out[-1].b.v
                and li.a.off == out[-1].a.off + out[-1].w
                and li.b.off == out[-1].b.off + out[-1].w):
            out[-1] = LowInstr("copy", 0, out[-1].a, out[-1].b, 0,
                               out[-1].w + li.w)
        else:
            out.append(li)
    return out
