"""Graph partitioning: tensor tiling, hierarchical placement, data movement.

Tiling splits every tensor into crossbar-sized blocks: an n x m matrix
becomes ceil(n/D) x ceil(m/D) matrix tiles, its MVM becomes one sub-MVM
per tile plus partial-sum merge nodes, and every vector edge is split
into blocks of at most D elements. Placement assigns matrix tiles to
MVMUs greedily, preferring tiles that feed the same outputs, then tiles
reading the same inputs, then producer-consumer pairs, filling cores
before tiles. Data-movement insertion turns cross-core edges into
store/load pairs through tile memory (with consumer counts) and
cross-tile edges into send/receive pairs with per-sender FIFO ids.
"""

from dataclasses import dataclass, field

import numpy as np

TILE_UNIT = 0xFFFF


class CompileError(Exception):
    pass


class TNode:
    """One block-level operation of the tiled/augmented graph."""

    __slots__ = ("id", "kind", "op", "imm", "inputs", "length", "block",
                 "orig", "name", "win", "indices", "matrix", "words",
                 "place", "sym", "count", "fifo", "target")

    def __init__(self, nid, kind, *, op=None, imm=None, inputs=(), length=None,
                 block=0, orig=None, name=None, win=None, indices=None,
                 matrix=None, words=None):
        self.id = nid
        self.kind = kind
        self.op = op
        self.imm = imm
        self.inputs = list(inputs)
        self.length = length
        self.block = block
        self.orig = orig
        self.name = name
        self.win = win
        self.indices = indices
        self.matrix = matrix
        self.words = words
        self.place = None      # (tile, core); core == TILE_UNIT on tile unit
        self.sym = None        # memory symbol id (load/store/send/receive/const/input)
        self.count = None      # consumer count for store/receive
        self.fifo = None
        self.target = None     # destination tile for send

    def __repr__(self):
        return f"<T{self.id} {self.kind} b{self.block}>"


@dataclass
class MatrixTile:
    id: int
    orig: int              # const_matrix node id
    row_block: int
    col_block: int
    w_raw: np.ndarray      # rows x cols raw weights
    mvmu: tuple = None     # (tile, core, mvmu index)

    @property
    def rows(self):
        return self.w_raw.shape[0]

    @property
    def cols(self):
        return self.w_raw.shape[1]


@dataclass
class Symbol:
    """A tile-memory resident value awaiting an address."""
    id: int
    tile: int
    size: int
    kind: str              # input | output | const | value | spill
    name: str = None
    count: int = 0         # consumer count installed at write time
    addr: int = None
    words: list = None     # preload payload for const symbols


@dataclass
class TiledGraph:
    xbar_dim: int
    tnodes: list = field(default_factory=list)
    matrix_tiles: list = field(default_factory=list)
    symbols: list = field(default_factory=list)
    blocks_of: dict = field(default_factory=dict)   # orig node id -> [tnode ids]
    output_blocks: dict = field(default_factory=dict)  # name -> [tnode ids]
    input_blocks: dict = field(default_factory=dict)
    fifo_map: dict = field(default_factory=dict)    # (recv tile, send tile) -> fid

    def add(self, kind, **kw):
        n = TNode(len(self.tnodes), kind, **kw)
        self.tnodes.append(n)
        return n

    def new_symbol(self, tile, size, kind, name=None, count=0, words=None):
        s = Symbol(len(self.symbols), tile, size, kind, name, count, None, words)
        self.symbols.append(s)
        return s

    def consumers(self):
        out = [[] for _ in self.tnodes]
        for n in self.tnodes:
            for i in n.inputs:
                if n.id not in out[i]:
                    out[i].append(n.id)
        return out


def _block_bounds(length, d):
    return [(s, min(s + d, length)) for s in range(0, length, d)]


def tile_tensors(graph, xbar_dim=128):
    """Original graph -> tiled graph of block-level operations.

    alu_imm nodes whose constant exceeds the instruction immediate are
    rewritten with constant-vector operands here. Gathers whose sources
    are all constant fold to preloaded const blocks.
    """
    if not graph.frozen:
        raise CompileError("freeze the model before compiling")
    graph.check_acyclic()
    d = xbar_dim
    tg = TiledGraph(xbar_dim=d)
    mt_cache = {}   # (const node, row block, col block) -> MatrixTile

    def blocks(orig_id):
        return tg.blocks_of[orig_id]

    for node in graph.nodes:
        k = node.kind
        if k == "const_matrix":
            # consumed either by MVMs (matrix tiles) or by gathers (folded)
            tg.blocks_of[node.id] = []
            continue
        if k == "input":
            ids = []
            for b, (lo, hi) in enumerate(_block_bounds(node.length, d)):
                t = tg.add("input", length=hi - lo, block=b, orig=node.id,
                           name=node.name)
                ids.append(t.id)
            tg.blocks_of[node.id] = ids
            tg.input_blocks[node.name] = ids
        elif k == "mvm":
            w_raw = graph.constants[node.inputs[0]]
            xblocks = blocks(node.inputs[1])
            rows, cols = w_raw.shape
            out_ids = []
            for bj, (cl, ch) in enumerate(_block_bounds(cols, d)):
                partials = []
                for bi, (rl, rh) in enumerate(_block_bounds(rows, d)):
                    # matrices stay resident: every MVM over the same
                    # constant block reuses one physical matrix tile
                    key = (node.inputs[0], bi, bj)
                    mt = mt_cache.get(key)
                    if mt is None:
                        mt = MatrixTile(len(tg.matrix_tiles), node.inputs[0],
                                        bi, bj, np.asarray(w_raw[rl:rh, cl:ch]))
                        tg.matrix_tiles.append(mt)
                        mt_cache[key] = mt
                    t = tg.add("mvm", inputs=[xblocks[bi]], length=ch - cl,
                               block=bj, orig=node.id, win=node.win,
                               matrix=mt.id)
                    partials.append(t.id)
                if len(partials) == 1:
                    out_ids.append(partials[0])
                else:
                    m = tg.add("merge", inputs=partials, length=ch - cl,
                               block=bj, orig=node.id)
                    out_ids.append(m.id)
            tg.blocks_of[node.id] = out_ids
        elif k in ("alu", "alu_imm", "act"):
            src = blocks(node.inputs[0])
            ids = []
            for b in range(len(src)):
                ln = tg.tnodes[src[b]].length
                if k == "alu":
                    b2 = blocks(node.inputs[1])[b]
                    t = tg.add("alu", op=node.op, inputs=[src[b], b2],
                               length=ln, block=b, orig=node.id)
                elif k == "alu_imm":
                    signed = node.imm - 65536 if node.imm & 0x8000 else node.imm
                    fits = (-2048 <= signed <= 2047) if node.op in ("add", "sub") \
                        else (0 <= node.imm <= 4095)
                    if fits:
                        t = tg.add("alu_imm", op=node.op, imm=node.imm,
                                   inputs=[src[b]], length=ln, block=b,
                                   orig=node.id)
                    else:
                        c = tg.add("const", length=ln, block=b, orig=node.id,
                                   words=[signed] * ln)
                        t = tg.add("alu", op=node.op, inputs=[src[b], c.id],
                                   length=ln, block=b, orig=node.id)
                else:
                    t = tg.add("act", op=node.op, inputs=[src[b]],
                               length=ln, block=b, orig=node.id)
                ids.append(t.id)
            tg.blocks_of[node.id] = ids
        elif k == "gather":
            srcs = node.inputs
            all_const = all(graph.nodes[s].kind == "const_matrix" for s in srcs)
            ids = []
            for b, (lo, hi) in enumerate(_block_bounds(node.length, d)):
                part = node.indices[lo:hi]
                if all_const:
                    words = []
                    for slot, elem in part:
                        flat = np.asarray(graph.constants[srcs[slot]]).reshape(-1)
                        words.append(int(flat[elem]))
                    t = tg.add("const", length=hi - lo, block=b, orig=node.id,
                               words=words)
                else:
                    used = []       # block tnode ids in first-use order
                    rewritten = []
                    for slot, elem in part:
                        src_node = graph.nodes[srcs[slot]]
                        if src_node.kind == "const_matrix":
                            raise CompileError(
                                "gather mixing constant and computed sources")
                        sb, off = elem // d, elem % d
                        tid = blocks(srcs[slot])[sb]
                        if tid not in used:
                            used.append(tid)
                        rewritten.append((used.index(tid), off))
                    t = tg.add("gather", inputs=used, indices=rewritten,
                               length=hi - lo, block=b, orig=node.id,
                               win=node.win)
                ids.append(t.id)
            tg.blocks_of[node.id] = ids
        elif k == "output":
            src = blocks(node.inputs[0])
            ids = []
            for b, tid in enumerate(src):
                t = tg.add("output", inputs=[tid], name=node.name, block=b,
                           length=tg.tnodes[tid].length, orig=node.id)
                ids.append(t.id)
            tg.blocks_of[node.id] = ids
            tg.output_blocks[node.name] = ids
        else:
            raise CompileError(f"cannot tile node kind {k!r}")
    _prune_dead(tg)
    return tg


def _prune_dead(tg):
    """Drop tnodes (and matrix tiles) with no path to any model output;
    named inputs stay so their bindings survive."""
    keep = set()
    stack = [tid for ids in tg.output_blocks.values() for tid in ids]
    while stack:
        t = stack.pop()
        if t in keep:
            continue
        keep.add(t)
        stack.extend(tg.tnodes[t].inputs)
    for n in tg.tnodes:
        if n.kind == "input":
            keep.add(n.id)
    if len(keep) == len(tg.tnodes):
        return
    remap = {}
    kept = []
    for n in tg.tnodes:
        if n.id in keep:
            remap[n.id] = len(kept)
            kept.append(n)
    for n in kept:
        n.inputs = [remap[i] for i in n.inputs]
        n.id = remap[n.id]
    tg.tnodes = kept
    tg.blocks_of = {k: [remap[i] for i in ids if i in remap]
                    for k, ids in tg.blocks_of.items()}
    tg.output_blocks = {k: [remap[i] for i in ids]
                        for k, ids in tg.output_blocks.items()}
    tg.input_blocks = {k: [remap[i] for i in ids]
                       for k, ids in tg.input_blocks.items()}
    used_tiles = sorted({n.matrix for n in tg.tnodes if n.kind == "mvm"})
    tile_remap = {old: new for new, old in enumerate(used_tiles)}
    tg.matrix_tiles = [tg.matrix_tiles[old] for old in used_tiles]
    for new, mt in enumerate(tg.matrix_tiles):
        mt.id = new
    for n in tg.tnodes:
        if n.kind == "mvm":
            n.matrix = tile_remap[n.matrix]


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------

SAME_OUTPUT_W = 100
SAME_INPUT_W = 10
PROD_CONS_W = 1


def _matrix_tile_affinity(tg):
    """Pairwise affinity between matrix tiles per the placement priorities:
    feeding the same outputs beats reading the same inputs beats
    producer-consumer pairs."""
    tiles = tg.matrix_tiles
    consumers = tg.consumers()
    info = []
    for mt in tiles:
        mvms = [n for n in tg.tnodes if n.kind == "mvm" and n.matrix == mt.id]
        ins = set()
        sinks = set()
        for n in mvms:
            ins.update(n.inputs)
            sinks.update(consumers[n.id])
        info.append((ins, sinks))
    feeds = _mvm_feeds(tg)
    aff = {}
    for a in range(len(tiles)):
        la = tiles[a].orig
        for b in range(a + 1, len(tiles)):
            lb = tiles[b].orig
            w = 0
            if info[a][1] & info[b][1]:
                w += SAME_OUTPUT_W
            if info[a][0] & info[b][0]:
                w += SAME_INPUT_W
            oa = _logical_of(tg, a)
            ob = _logical_of(tg, b)
            if (oa, ob) in feeds or (ob, oa) in feeds:
                w += PROD_CONS_W
            if w:
                aff[(a, b)] = w
    return aff


def _logical_of(tg, mt_id):
    for n in tg.tnodes:
        if n.kind == "mvm" and n.matrix == mt_id:
            return n.orig
    return None


def _mvm_feeds(tg):
    """(producer mvm node, consumer mvm node) pairs connected through
    non-MVM tnodes."""
    producers = {}
    feeds = set()
    for n in tg.tnodes:
        srcs = set()
        for i in n.inputs:
            src = tg.tnodes[i]
            if src.kind == "mvm":
                srcs.add(src.orig)
            else:
                srcs |= producers.get(i, set())
        if n.kind == "mvm":
            for p in srcs:
                feeds.add((p, n.orig))
            producers[n.id] = set()
        else:
            producers[n.id] = srcs
    return feeds


def place(tg, machine, naive=False, seed=0):
    """Assign matrix tiles to MVMUs and every tnode to a (tile, core)."""
    m = machine
    total_mvmus = m.tiles * m.cores_per_tile * m.mvmus_per_core
    ntiles = len(tg.matrix_tiles)
    if ntiles > total_mvmus:
        raise CompileError(
            f"model needs {ntiles} MVMUs but the machine has {total_mvmus}")

    slots = [(t, c) for t in range(m.tiles) for c in range(m.cores_per_tile)]
    if naive:
        rng = np.random.default_rng(seed)
        mvmu_slots = [(t, c, u) for t, c in slots for u in range(m.mvmus_per_core)]
        picks = rng.choice(len(mvmu_slots), size=ntiles, replace=False)
        for mt, slot_idx in zip(tg.matrix_tiles, picks):
            mt.mvmu = mvmu_slots[int(slot_idx)]
    else:
        aff = _matrix_tile_affinity(tg)

        def pair_w(a, b):
            return aff.get((min(a, b), max(a, b)), 0)

        unplaced = list(range(ntiles))
        core_idx = 0
        core_members = []
        tile_members = []
        cur_tile = 0
        while unplaced:
            t, c = slots[core_idx]
            if t != cur_tile:
                tile_members = []
                cur_tile = t
            if len(core_members) >= m.mvmus_per_core:
                core_idx += 1
                core_members = []
                continue
            ref = core_members if core_members else tile_members
            best = min(unplaced,
                       key=lambda x: (-max((pair_w(x, r) for r in ref), default=0), x))
            tg.matrix_tiles[best].mvmu = (t, c, len(core_members))
            core_members.append(best)
            tile_members.append(best)
            unplaced.remove(best)

    _place_tnodes(tg)
    return tg


def _place_tnodes(tg):
    consumers = tg.consumers()
    for n in tg.tnodes:
        if n.kind == "mvm":
            t, c, _ = tg.matrix_tiles[n.matrix].mvmu
            n.place = (t, c)
    fallback = []
    for n in tg.tnodes:
        if n.place is not None or n.kind in ("input", "const"):
            continue
        placed = [tg.tnodes[i].place for i in n.inputs
                  if tg.tnodes[i].place is not None]
        if placed:
            counts = {}
            for p in placed:
                counts[p] = counts.get(p, 0) + 1
            n.place = min(counts, key=lambda p: (-counts[p], p))
        else:
            n.place = (0, 0)
            fallback.append(n)
    # staging nodes with no placed producer (e.g. window gathers over raw
    # inputs) belong with their first placed consumer
    for n in fallback:
        for cid in consumers[n.id]:
            if tg.tnodes[cid].place is not None:
                n.place = tg.tnodes[cid].place
                break
    # memory-resident values live on their first consumer's tile
    for n in tg.tnodes:
        if n.kind in ("input", "const"):
            cons = consumers[n.id]
            n.place = tg.tnodes[cons[0]].place if cons else (0, 0)


def placement_score(tg):
    """Co-location quality: affinity mass kept on one core (full weight)
    or one tile (half weight)."""
    aff = _matrix_tile_affinity(tg)
    score = 0.0
    for (a, b), w in aff.items():
        pa = tg.matrix_tiles[a].mvmu
        pb = tg.matrix_tiles[b].mvmu
        if pa[:2] == pb[:2]:
            score += w
        elif pa[0] == pb[0]:
            score += w / 2
    return score


# ---------------------------------------------------------------------------
# Data movement insertion
# ---------------------------------------------------------------------------

def insert_data_movement(tg, machine):
    """Rewrite cross-core edges into store/load and cross-tile edges into
    store/send/receive/load chains; assign FIFO ids per sender tile."""
    consumers = tg.consumers()
    n_original = len(tg.tnodes)

    for nid in range(n_original):
        n = tg.tnodes[nid]
        if n.kind in ("output", "store", "load", "send", "receive"):
            continue
        memory_resident = n.kind in ("input", "const")
        # outputs are stores emitted at lowering; they read a register on
        # their own core, so they count as consumers only when the value
        # itself lives in memory and must be loaded first
        cons_ids = [c for c in consumers[nid]
                    if memory_resident or tg.tnodes[c].kind != "output"]
        cons = [tg.tnodes[c] for c in cons_ids]
        home_tile = n.place[0]

        def needs_load(c):
            return memory_resident or c.place != n.place

        loading_cores_home = sorted({c.place for c in cons
                                     if c.place[0] == home_tile and needs_load(c)})
        remote_tiles = sorted({c.place[0] for c in cons if c.place[0] != home_tile})

        if memory_resident:
            sym = tg.new_symbol(home_tile, n.length,
                                "input" if n.kind == "input" else "const",
                                name=n.name, words=n.words)
            sym.count = len(loading_cores_home) + len(remote_tiles)
            n.sym = sym.id
            source_dep = n.id
        else:
            if not loading_cores_home and not remote_tiles:
                continue
            sym = tg.new_symbol(home_tile, n.length, "value")
            sym.count = len(loading_cores_home) + len(remote_tiles)
            st = tg.add("store", inputs=[nid], length=n.length)
            st.place = n.place
            st.sym = sym.id
            st.count = sym.count
            source_dep = st.id

        arrivals = {home_tile: (sym.id, source_dep)}
        for rt in remote_tiles:
            dst_cores = sorted({c.place for c in cons if c.place[0] == rt})
            dsym = tg.new_symbol(rt, n.length, "value")
            dsym.count = len(dst_cores)
            tg.fifo_map.setdefault((rt, home_tile), None)
            snd = tg.add("send", inputs=[source_dep], length=n.length)
            snd.place = (home_tile, TILE_UNIT)
            snd.sym = sym.id
            snd.target = rt
            rcv = tg.add("receive", inputs=[snd.id], length=n.length)
            rcv.place = (rt, TILE_UNIT)
            rcv.sym = dsym.id
            rcv.count = dsym.count
            arrivals[rt] = (dsym.id, rcv.id)

        loads = {}
        for c in cons:
            if not needs_load(c):
                continue
            if c.place not in loads:
                sym_id, dep = arrivals[c.place[0]]
                ld = tg.add("load", inputs=[dep], length=n.length)
                ld.place = c.place
                ld.sym = sym_id
                loads[c.place] = ld
            c.inputs = [loads[c.place].id if i == nid else i for i in c.inputs]

    _renumber_fifos(tg, machine)
    return tg


def _renumber_fifos(tg, machine):
    per_receiver = {}
    for (rt, st_) in sorted(tg.fifo_map):
        fid = per_receiver.get(rt, 0)
        if fid >= machine.num_fifos:
            raise CompileError(
                f"tile {rt} receives from more than {machine.num_fifos} tiles")
        tg.fifo_map[(rt, st_)] = fid
        per_receiver[rt] = fid + 1
    for n in tg.tnodes:
        if n.kind == "send":
            n.fifo = tg.fifo_map[(n.target, n.place[0])]
        elif n.kind == "receive":
            snd = tg.tnodes[n.inputs[0]]
            n.fifo = tg.fifo_map[(n.place[0], snd.place[0])]


def topo_order(tg):
    """Kahn topological order over tnodes, ready set drained by ascending id
    (data-movement nodes are appended after the compute nodes they serve,
    so raw id order is not topological)."""
    indeg = [0] * len(tg.tnodes)
    succs = [[] for _ in tg.tnodes]
    for n in tg.tnodes:
        for i in set(n.inputs):
            indeg[n.id] += 1
            succs[i].append(n.id)
    import heapq
    ready = [n.id for n in tg.tnodes if indeg[n.id] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for s in succs[nid]:
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(ready, s)
    if len(order) != len(tg.tnodes):
        raise CompileError("dependence cycle in tiled graph")
    return order


# ---------------------------------------------------------------------------
# Augmented-graph interpreter (ideal numerics) for equivalence checks
# ---------------------------------------------------------------------------

def evaluate_tiled(tg, graph, inputs, luts=None):
    """Execute the tiled graph blockwise; used to check that partitioning
    and data movement preserve interpreter semantics exactly."""
    from . import fixedpoint as fp
    from .crossbar import crossbar_mvm, slice_weights
    from .graph import apply_act, apply_binop

    luts = luts or fp.build_default_luts(graph.frac_bits)
    vals = {}
    for nid in topo_order(tg):
        n = tg.tnodes[nid]
        k = n.kind
        if k == "input":
            full = np.asarray(inputs[n.name], dtype=np.int64)
            d = tg.xbar_dim
            vals[n.id] = full[n.block * d: n.block * d + n.length]
        elif k == "const":
            vals[n.id] = np.asarray(n.words, dtype=np.int64)
        elif k == "mvm":
            mt = tg.matrix_tiles[n.matrix]
            sm = slice_weights(mt.w_raw, tg.xbar_dim)
            vals[n.id] = crossbar_mvm(sm, vals[n.inputs[0]], None,
                                      graph.frac_bits, tg.xbar_dim)
        elif k == "merge":
            acc = vals[n.inputs[0]]
            for i in n.inputs[1:]:
                acc = fp.fx_add(acc, vals[i])
            vals[n.id] = acc
        elif k == "alu":
            vals[n.id] = apply_binop(n.op, vals[n.inputs[0]], vals[n.inputs[1]],
                                     graph.frac_bits)
        elif k == "alu_imm":
            a = vals[n.inputs[0]]
            signed = n.imm - 0x10000 if n.imm & 0x8000 else n.imm
            imm = np.full(len(a), signed, dtype=np.int64)
            vals[n.id] = apply_binop(n.op, a, imm, graph.frac_bits)
        elif k == "act":
            vals[n.id] = apply_act(n.op, vals[n.inputs[0]], luts)
        elif k == "gather":
            srcs = [vals[i] for i in n.inputs]
            vals[n.id] = np.array([srcs[s][e] for s, e in n.indices],
                                  dtype=np.int64)
        elif k in ("store", "load", "send", "receive"):
            vals[n.id] = vals[n.inputs[0]]
        elif k == "output":
            vals[n.id] = vals[n.inputs[0]]
        else:
            raise CompileError(f"evaluate_tiled: unknown kind {k!r}")
    outputs = {}
    for name, ids in tg.output_blocks.items():
        outputs[name] = np.concatenate([vals[i] for i in ids])
    return outputs


def plan_dump(tg):
    """Human-readable placement plan for debugging."""
    lines = ["matrix tiles:"]
    for mt in tg.matrix_tiles:
        lines.append(f"  m{mt.id} orig={mt.orig} block=({mt.row_block},"
                     f"{mt.col_block}) {mt.rows}x{mt.cols} -> {mt.mvmu}")
    lines.append("fifos:")
    for (rt, st_), fid in sorted(tg.fifo_map.items()):
        lines.append(f"  tile {st_} -> tile {rt}: fifo {fid}")
    lines.append("symbols:")
    for s in tg.symbols:
        lines.append(f"  s{s.id} tile={s.tile} size={s.size} kind={s.kind}"
                     f" count={s.count} addr={s.addr}")
    return "\n".join(lines) + "\n"
