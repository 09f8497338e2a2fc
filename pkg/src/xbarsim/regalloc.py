"""Liveness analysis and register assignment.

Values are virtual register ranges (a vector of w words occupies w
consecutive registers). General-purpose registers are allocated by linear
scan with first-fit placement; when pressure exceeds the register file the
value with the furthest last use is spilled to a tile-memory slot, its
definition followed by a store and each use preceded by a reload.

XbarIn/XbarOut registers are fixed per-MVMU ranges: lowering always moves
values through general registers with an explicit copy around each MVM, so
xbar-class live ranges never conflict by construction; their liveness is
still computed for reporting.
"""

from dataclasses import dataclass, field

from .lowir import LowInstr, Mem, VReg, reads_writes


class RegAllocError(Exception):
    pass


@dataclass
class LiveRange:
    vreg: int
    start: int           # first definition position
    end: int             # last use position
    size: int
    defs: int = 1
    writes: list = field(default_factory=list)   # (pos, off, w)
    first_read: int = None

    def spillable(self):
        """Single definitions always spill; multi-write values spill only
        when the writes cover disjoint ranges and all precede every read
        (a value assembled piecewise, then consumed)."""
        if self.defs == 1:
            return True
        covered = []
        for pos, off, w in self.writes:
            for o2, w2 in covered:
                if off < o2 + w2 and o2 < off + w:
                    return False
            covered.append((off, w))
            if self.first_read is not None and pos > self.first_read:
                return False
        return True


@dataclass
class AllocResult:
    instrs: list
    base: dict                   # vreg -> physical base register
    spilled: dict = field(default_factory=dict)   # vreg -> spill symbol id
    spill_count: int = 0
    maxlive_general: int = 0
    maxlive_words: int = 0


def compute_liveness(instrs, loop_span=None):
    """Exact def/last-use intervals on straight-line code.

    loop_span=(lo, hi) marks a single loop body: any value live into the
    body stays live across the back edge, i.e. its range extends to hi.
    """
    ranges = {}
    for pos, li in enumerate(instrs):
        reads, writes = reads_writes(li)
        for opnd, w in writes:
            if not isinstance(opnd, VReg):
                continue
            r = ranges.get(opnd.v)
            if r is None:
                r = LiveRange(opnd.v, pos, pos, opnd.off + w, defs=0)
                ranges[opnd.v] = r
            r.size = max(r.size, opnd.off + w)
            r.end = max(r.end, pos)
            r.defs += 1
            r.writes.append((pos, opnd.off, w))
        for opnd, w in reads:
            if not isinstance(opnd, VReg):
                continue
            r = ranges.get(opnd.v)
            if r is None:
                raise RegAllocError(f"v{opnd.v} used at {pos} before definition")
            r.end = max(r.end, pos)
            r.size = max(r.size, opnd.off + w)
            if r.first_read is None:
                r.first_read = pos
    if loop_span is not None:
        lo, hi = loop_span
        for r in ranges.values():
            if r.start < lo and r.end >= lo:
                r.end = max(r.end, hi)
    return ranges


def max_live_words(ranges):
    events = []
    for r in ranges.values():
        events.append((r.start, r.size))
        events.append((r.end + 1, -r.size))
    live = peak = 0
    for _, delta in sorted(events):
        live += delta
        peak = max(peak, live)
    return peak


class _FreeSpace:
    """First-fit interval allocator over [0, total)."""

    def __init__(self, total):
        self.free = [(0, total)]

    def take(self, size):
        for i, (start, ln) in enumerate(self.free):
            if ln >= size:
                if ln == size:
                    self.free.pop(i)
                else:
                    self.free[i] = (start + size, ln - size)
                return start
        return None

    def release(self, start, size):
        self.free.append((start, size))
        self.free.sort()
        merged = []
        for s, ln in self.free:
            if merged and merged[-1][0] + merged[-1][1] == s:
                merged[-1] = (merged[-1][0], merged[-1][1] + ln)
            else:
                merged.append((s, ln))
        self.free = merged


def _plan(ranges, total):
    """Linear scan; returns (base map, spill set)."""
    spilled = set()
    order = sorted(ranges.values(), key=lambda r: (r.start, r.vreg))
    while True:
        space = _FreeSpace(total)
        active = []        # (end, vreg, base, size)
        base = {}
        restart = False
        for r in order:
            if r.vreg in spilled:
                continue
            still = []
            for a in active:
                if a[0] >= r.start:
                    still.append(a)
                else:
                    space.release(a[2], a[3])
            active = still
            addr = space.take(r.size)
            while addr is None:
                victims = [a for a in active
                           if ranges[a[1]].spillable() and a[0] > r.end]
                if not victims:
                    victims = [a for a in active if ranges[a[1]].spillable()]
                if not victims:
                    if r.size > total:
                        raise RegAllocError(
                            f"value of {r.size} words exceeds the register file")
                    if not ranges[r.vreg].spillable():
                        raise RegAllocError(
                            "cannot spill an in-place-updated value under pressure")
                    victims = None
                    spilled.add(r.vreg)
                    restart = True
                    break
                v = max(victims, key=lambda a: (a[0], a[1]))
                active.remove(v)
                space.release(v[2], v[3])
                spilled.add(v[1])
                restart = True
                addr = space.take(r.size)
            if restart:
                break
            base[r.vreg] = addr
            active.append((r.end, r.vreg, addr, r.size))
        if not restart:
            return base, spilled


def _rewrite_spills(instrs, to_spill, slot_of, next_vreg):
    """Insert spill stores after definitions and reloads before uses."""
    # count reloads per spilled vreg for the store's count operand
    reload_counts = {v: 0 for v in to_spill}
    for li in instrs:
        reads, _ = reads_writes(li)
        for opnd, _w in reads:
            if isinstance(opnd, VReg) and opnd.v in reload_counts:
                reload_counts[opnd.v] += 1
    out = []
    for li in instrs:
        reads, writes = reads_writes(li)
        pre = []
        post = []
        repl = {}
        for opnd, w in reads:
            if isinstance(opnd, VReg) and opnd.v in to_spill:
                fresh = next_vreg()
                pre.append(LowInstr("load", 0, VReg(fresh),
                                    Mem(slot_of[opnd.v], opnd.off), 0, w))
                repl[opnd] = VReg(fresh)
        for opnd, w in writes:
            if isinstance(opnd, VReg) and opnd.v in to_spill:
                fresh = next_vreg()
                repl[opnd] = VReg(fresh)
                if reload_counts[opnd.v]:
                    post.append(LowInstr("store", 0,
                                         Mem(slot_of[opnd.v], opnd.off),
                                         VReg(fresh), reload_counts[opnd.v], w))

        def swap(x):
            return repl.get(x, x)

        out.extend(pre)
        out.append(LowInstr(li.op, li.sub, swap(li.a), swap(li.b), swap(li.c),
                            li.w))
        out.extend(post)
    return out


def allocate(instrs, machine, mk_spill_symbol, loop_span=None):
    """Assign physical general registers, spilling to tile memory as needed.

    mk_spill_symbol(size) must return a fresh tile-memory symbol id.
    """
    rs = machine.regspace()
    total = rs.general_regs
    vmax = 0
    for li in instrs:
        for opnd in li.operands():
            if isinstance(opnd, VReg):
                vmax = max(vmax, opnd.v + 1)
    counter = [vmax]

    def next_vreg():
        counter[0] += 1
        return counter[0] - 1

    all_spilled = {}
    for _round in range(16):
        ranges = compute_liveness(instrs, loop_span)
        base, spills = _plan(ranges, total)
        if not spills:
            res = AllocResult(instrs, {v: rs.general_base + b
                                       for v, b in base.items()})
            res.spilled = dict(all_spilled)
            res.spill_count = len(all_spilled)
            res.maxlive_general = len(ranges)
            res.maxlive_words = max_live_words(ranges)
            return res
        slot_of = {}
        for v in spills:
            size = ranges[v].size
            slot_of[v] = mk_spill_symbol(size)
            all_spilled[v] = slot_of[v]
        instrs = _rewrite_spills(instrs, spills, slot_of, next_vreg)
    need = _instruction_working_set(instrs)
    raise RegAllocError(
        f"register file too small: an instruction needs {need} words "
        f"simultaneously but only {total} are available")


def _instruction_working_set(instrs):
    worst = 0
    for li in instrs:
        reads, writes = reads_writes(li)
        seen = {}
        for opnd, w in reads + writes:
            if isinstance(opnd, VReg):
                seen[opnd.v] = max(seen.get(opnd.v, 0), opnd.off + w)
        worst = max(worst, sum(seen.values()))
    return worst


def audit(instrs, result):
    """No physical register may hold two overlapping live ranges."""
    ranges = compute_liveness(result.instrs)
    items = [(r, result.base[r.vreg]) for r in ranges.values()
             if r.vreg in result.base]
    for i, (ra, ba) in enumerate(items):
        for rb, bb in items[i + 1:]:
            time_overlap = not (ra.end < rb.start or rb.end < ra.start)
            space_overlap = not (ba + ra.size <= bb or bb + rb.size <= ba)
            if time_overlap and space_overlap:
                return False
    return True


def xbar_liveness(final_instrs, regspace):
    """XbarIn/XbarOut live intervals on encodable instructions, for the
    register-pressure report: a fill is live until its MVM fires; an MVM's
    outputs are live until their last non-MVM read."""
    d = regspace.xbar_dim
    fills = {}      # mvmu -> fill position
    outs = {}       # mvmu -> definition position
    intervals = {"xbar_in": [], "xbar_out": []}
    for pos, i in enumerate(final_instrs):
        if i.op == "mvm":
            for mvmu in range(regspace.mvmus):
                if i.sub >> mvmu & 1:
                    if mvmu in fills:
                        intervals["xbar_in"].append(
                            (fills.pop(mvmu), pos, d))
                    if mvmu in outs:
                        intervals["xbar_out"].append((outs[mvmu], pos - 1, d))
                    outs[mvmu] = pos
            continue
        for opnd, is_write in ((i.a, True), (i.b, False), (i.c, False)):
            if not isinstance(opnd, int):
                continue
            if i.op in ("jmp", "brn", "set", "send", "receive", "store",
                        "load") and not is_write:
                continue
            try:
                cls = regspace.class_of(opnd)
            except Exception:
                continue
            if cls == "xbar_in" and is_write and i.op in ("copy", "load"):
                fills.setdefault((opnd - regspace.xbar_in_base) // d, pos)
            if cls == "xbar_out" and not is_write:
                mvmu = (opnd - regspace.xbar_out_base) // d
                if mvmu in outs:
                    intervals["xbar_out"].append((outs[mvmu], pos, d))
    peak = {}
    for cls, iv in intervals.items():
        events = []
        for lo, hi, size in iv:
            events.append((lo, size))
            events.append((hi + 1, -size))
        live = mx = 0
        for _, delta in sorted(events):
            live += delta
            mx = max(mx, live)
        peak[cls] = mx
    return intervals, peak
