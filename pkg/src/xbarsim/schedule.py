"""Instruction scheduling: MVM coalescing, global reverse-post-order
linearization, and the sliding-window loop emitter.

Coalescing runs on the graph before linearization. It first fuses sub-MVMs
that are tiles of the same logical MVM on one core, then walks the graph
in reverse post-order fusing each remaining MVM with the first eligible
candidates (same core, distinct MVMUs, no dependence path between the
groups), updating dependence information after every fusion. A fused group
lowers to a single MVM instruction whose mask carries one bit per member.

Linearization produces one reverse post-order over the entire graph and
projects it onto each core/tile sequence. Linearizing the whole graph at
once keeps every per-actor order embedded in one global order, so blocking
cross-core communication cannot form a cycle.
"""

from dataclasses import dataclass, field

from . import isa
from .lowir import LowInstr, Mem

UNSCHEDULED = ("input", "const")


@dataclass
class Unit:
    id: int
    members: list              # tnode ids; >1 only for coalesced MVMs
    kind: str


@dataclass
class LinearSchedule:
    units: list                # global order (list of Unit)
    actor_seq: dict = field(default_factory=dict)  # (tile, core) -> [unit idx]
    coalesce_groups: int = 0
    maxlive: int = 0


class ScheduleError(Exception):
    pass


def _build_units(tg, groups=None):
    """One unit per schedulable tnode, with coalesced MVM groups merged."""
    group_idx = {}
    for gi, g in enumerate(groups or ()):
        for t in g:
            group_idx[t] = gi
    units = []
    unit_of = {}
    unit_of_group = {}
    for n in tg.tnodes:
        if n.kind in UNSCHEDULED:
            continue
        gi = group_idx.get(n.id)
        if gi is not None and gi in unit_of_group:
            u = units[unit_of_group[gi]]
            u.members.append(n.id)
            unit_of[n.id] = u.id
            continue
        u = Unit(len(units), [n.id], "mvm_group" if gi is not None else n.kind)
        units.append(u)
        unit_of[n.id] = u.id
        if gi is not None:
            unit_of_group[gi] = u.id
    return units, unit_of


def _unit_edges(tg, units, unit_of):
    preds = [set() for _ in units]
    succs = [set() for _ in units]
    for u in units:
        for t in u.members:
            for i in tg.tnodes[t].inputs:
                if tg.tnodes[i].kind in UNSCHEDULED:
                    continue
                p = unit_of[i]
                if p != u.id:
                    preds[u.id].add(p)
                    succs[p].add(u.id)
    return preds, succs


def _rpo_order(ids, preds, succs):
    """Reverse post-order linearization: depth-first from each sink through
    its operands, emitting an operation only after everything it consumes
    (the reverse of the visit order). Produced values are consumed as soon
    as their consumer's remaining operands allow, which keeps few values
    live at a time. Sinks and operands are taken in ascending id, so the
    order is deterministic with ties broken toward the lowest node id."""
    id_set = set(ids)
    sinks = [i for i in sorted(ids) if not (succs[i] & id_set)]
    seen = set()
    order = []
    for sink in sinks:
        if sink in seen:
            continue
        seen.add(sink)
        stack = [(sink, iter(sorted(preds[sink] & id_set)))]
        while stack:
            node, it = stack[-1]
            advanced = False
            for child in it:
                if child not in seen:
                    seen.add(child)
                    stack.append((child, iter(sorted(preds[child] & id_set))))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()
    if len(order) != len(ids):
        raise ScheduleError("dependence cycle in scheduling input")
    pos = {n: i for i, n in enumerate(order)}
    for n in ids:
        for p in preds[n] & id_set:
            if pos[p] > pos[n]:
                raise ScheduleError("dependence cycle in scheduling input")
    return order


def _kahn_fifo(ids, preds, succs):
    """Breadth-first topological order: the naive baseline that produces
    values eagerly before consuming them."""
    from collections import deque
    id_set = set(ids)
    indeg = {i: len(preds[i] & id_set) for i in ids}
    q = deque(i for i in sorted(ids) if indeg[i] == 0)
    order = []
    while q:
        n = q.popleft()
        order.append(n)
        for s in sorted(succs[n] & id_set):
            indeg[s] -= 1
            if indeg[s] == 0:
                q.append(s)
    if len(order) != len(ids):
        raise ScheduleError("dependence cycle in scheduling input")
    return order


def max_live(order, preds, succs):
    """Peak number of unit outputs live between steps of an order: a value
    is born when produced and dies when its last consumer executes."""
    pos = {u: i for i, u in enumerate(order)}
    in_order = set(order)
    last_use = {}
    for u in order:
        for p in preds[u]:
            if p in in_order:
                last_use[p] = max(last_use.get(p, -1), pos[u])
    live = 0
    peak = 0
    for i, u in enumerate(order):
        live -= sum(1 for p in preds[u] if last_use.get(p) == i)
        if succs[u] & in_order:
            live += 1
        peak = max(peak, live)
    return peak


# ---------------------------------------------------------------------------
# MVM coalescing
# ---------------------------------------------------------------------------

def _core_of(tg, tid):
    return tg.tnodes[tid].place


def _mvmu_of(tg, tid):
    return tg.matrix_tiles[tg.tnodes[tid].matrix].mvmu[2]


class _DepGraph:
    """Mutable dependence graph over schedulable tnodes; fusion contracts
    the fused node into the group leader."""

    def __init__(self, tg):
        self.preds = {}
        self.succs = {}
        ids = [n.id for n in tg.tnodes if n.kind not in UNSCHEDULED]
        for i in ids:
            self.preds[i] = set()
            self.succs[i] = set()
        for n in tg.tnodes:
            if n.kind in UNSCHEDULED:
                continue
            for i in n.inputs:
                if tg.tnodes[i].kind in UNSCHEDULED or i == n.id:
                    continue
                self.preds[n.id].add(i)
                self.succs[i].add(n.id)

    def reaches(self, a, b):
        if a == b:
            return True
        stack = [a]
        seen = {a}
        while stack:
            x = stack.pop()
            for s in self.succs[x]:
                if s == b:
                    return True
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return False

    def contract(self, lead, other):
        for p in self.preds.pop(other):
            self.succs[p].discard(other)
            if p != lead:
                self.preds[lead].add(p)
                self.succs[p].add(lead)
        for s in self.succs.pop(other):
            self.preds[s].discard(other)
            if s != lead:
                self.succs[lead].add(s)
                self.preds[s].add(lead)


def coalesce_mvms(tg, machine):
    """Fusion groups of independent MVM tnodes (each a list of tnode ids).

    Pass 1 groups tiles of the same logical MVM (and window) that landed on
    one core; pass 2 walks the graph in reverse post-order and fuses each
    remaining MVM with the first eligible candidates in traversal order.
    """
    m_per_core = machine.mvmus_per_core
    dg = _DepGraph(tg)
    group_of = {}
    groups = []

    def members(t):
        return group_of.get(t, [t])

    def mvmus(t):
        return {_mvmu_of(tg, x) for x in members(t)}

    def fuse(lead, other):
        g = group_of.get(lead)
        if g is None:
            g = [lead]
            groups.append(g)
            group_of[lead] = g
        g.append(other)
        group_of[other] = g
        dg.contract(lead, other)

    def eligible(lead, cand):
        return (len(members(lead)) < m_per_core
                and cand not in group_of
                and _core_of(tg, cand) == _core_of(tg, lead)
                and _mvmu_of(tg, cand) not in mvmus(lead)
                and not dg.reaches(lead, cand)
                and not dg.reaches(cand, lead))

    # pass 1: tiles of the same large MVM operation
    by_key = {}
    for n in tg.tnodes:
        if n.kind == "mvm":
            by_key.setdefault((n.orig, n.win, n.place), []).append(n.id)
    for key in sorted(by_key, key=lambda k: by_key[k][0]):
        lead, *rest = by_key[key]
        for cand in rest:
            if eligible(lead, cand):
                fuse(lead, cand)

    # pass 2: reverse post-order over the contracted graph
    order = _rpo_order(list(dg.preds), dg.preds, dg.succs)
    mvm_order = [t for t in order if tg.tnodes[t].kind == "mvm"]
    for lead in mvm_order:
        if lead in group_of and group_of[lead][0] != lead:
            continue   # absorbed into an earlier group
        for cand in mvm_order:
            if cand == lead:
                continue
            if len(members(lead)) >= m_per_core:
                break
            if eligible(lead, cand):
                fuse(lead, cand)
    return [g for g in groups if len(g) > 1]


def check_groups_independent(tg, groups):
    """Dependence oracle: no member of a group may reach another member,
    share a core boundary, or share an MVMU."""
    succs = {n.id: [] for n in tg.tnodes}
    for n in tg.tnodes:
        for i in n.inputs:
            succs[i].append(n.id)

    def reaches(a, b):
        stack = [a]
        seen = set()
        while stack:
            x = stack.pop()
            if x == b:
                return True
            for s in succs[x]:
                if s not in seen:
                    seen.add(s)
                    stack.append(s)
        return False

    for g in groups:
        for i, a in enumerate(g):
            for b in g[i + 1:]:
                if reaches(a, b) or reaches(b, a):
                    return False
                if _core_of(tg, a) != _core_of(tg, b):
                    return False
                if _mvmu_of(tg, a) == _mvmu_of(tg, b):
                    return False
    return True


# ---------------------------------------------------------------------------
# Linearization
# ---------------------------------------------------------------------------

def linearize(tg, groups=None, naive=False):
    """Global linearization -> LinearSchedule with per-actor projections."""
    units, unit_of = _build_units(tg, groups)
    preds, succs = _unit_edges(tg, units, unit_of)
    ids = [u.id for u in units]
    order = _kahn_fifo(ids, preds, succs) if naive \
        else _rpo_order(ids, preds, succs)
    sched = LinearSchedule(units=[units[i] for i in order])
    sched.coalesce_groups = sum(1 for u in units if len(u.members) > 1)
    sched.maxlive = max_live(order, preds, succs)
    for gi, u in enumerate(sched.units):
        actor = tg.tnodes[u.members[0]].place
        sched.actor_seq.setdefault(actor, []).append(gi)
    return sched


# ---------------------------------------------------------------------------
# Sliding-window loop emission
# ---------------------------------------------------------------------------

def emit_conv_loop(n_windows, parts, cols, mb_in, mb_out, bias_sym,
                   act_op, machine):
    """Loop fragment for the MVM-hosting core of a windowed layer.

    parts: (mvmu, window offset, length) per matrix row-tile. The body
    pulls one full window from the input mailbox straight into XbarIn,
    fires one (possibly multi-MVMU) MVM, reduces the XbarOut partials,
    applies bias/activation, and stores to the output mailbox, with an
    integer counter and a conditional branch closing the loop.
    """
    rs = machine.regspace()
    gp = rs.general_base
    r_bias = gp
    r_acc = gp + cols
    r_cnt = gp + 2 * cols
    r_one = r_cnt + 1
    r_lim = r_cnt + 2
    if rs.general_regs < 2 * cols + 3:
        raise ScheduleError("register file too small for the loop body")

    out = []
    if bias_sym is not None:
        out.append(LowInstr("load", 0, r_bias, Mem(bias_sym), 0, cols))
    out.append(LowInstr("set", 0, r_cnt, 0, 0, 0))
    out.append(LowInstr("set", 0, r_one, 1, 0, 0))
    out.append(LowInstr("set", 0, r_lim, n_windows, 0, 0))
    body = len(out)
    mask = 0
    for mvmu, off, ln in parts:
        out.append(LowInstr("load", 0, rs.xbar_in(mvmu), Mem(mb_in, off), 0, ln))
        mask |= 1 << mvmu
    out.append(LowInstr("mvm", mask, 0, 0, 0, 0))
    first = parts[0][0]
    if len(parts) == 1:
        out.append(LowInstr("copy", 0, r_acc, rs.xbar_out(first), 0, cols))
    else:
        out.append(LowInstr("alu", isa.ALU_OPS["add"], r_acc,
                            rs.xbar_out(first), rs.xbar_out(parts[1][0]), cols))
        for mvmu, _, _ in parts[2:]:
            out.append(LowInstr("alu", isa.ALU_OPS["add"], r_acc, r_acc,
                                rs.xbar_out(mvmu), cols))
    if bias_sym is not None:
        out.append(LowInstr("alu", isa.ALU_OPS["add"], r_acc, r_acc, r_bias, cols))
    if act_op is not None:
        out.append(LowInstr("alu", isa.ALU_OPS[act_op], r_acc, r_acc, 0, cols))
    out.append(LowInstr("store", 0, Mem(mb_out), r_acc, 1, cols))
    out.append(LowInstr("aluint", isa.ALUINT_OPS["add"], r_cnt, r_cnt, r_one, 0))
    out.append(LowInstr("brn", isa.BRN_OPS["ne"], r_cnt, r_lim, body, 0))
    return out
