"""Layered directed graph over the cost lattice and its exact minimum s-t cut.

Lattice node ``v(p, r, i)`` has id ``p*(R+1)*(I+1) + r*(I+1) + i``; the
source is ``N-2`` and the sink ``N-1``.  Infinite arcs are stored as
``np.inf`` and replaced by a finite sentinel inside the solver.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .cost import CostField
from .errors import FibercutError


@dataclass(frozen=True)
class SmoothnessParams:
    delta_x: int = 2
    delta_z: int = 2

    def __post_init__(self):
        if self.delta_x < 0 or self.delta_z < 0:
            raise FibercutError("smoothness deltas must be >= 0")

    def check(self, I: int):
        if self.delta_x > I or self.delta_z > I:
            raise FibercutError(f"smoothness deltas {self.delta_x}, {self.delta_z} exceed I={I}")


@dataclass(frozen=True, eq=False)
class FlowNetwork:
    n_nodes: int
    tails: np.ndarray
    heads: np.ndarray
    caps: np.ndarray
    lattice_shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        tails = np.asarray(self.tails, dtype=np.int64)
        heads = np.asarray(self.heads, dtype=np.int64)
        caps = np.asarray(self.caps, dtype=np.float64)
        object.__setattr__(self, "tails", tails)
        object.__setattr__(self, "heads", heads)
        object.__setattr__(self, "caps", caps)
        if self.n_nodes < 2:
            raise FibercutError("a network needs at least the two terminals")
        if not (tails.shape == heads.shape == caps.shape):
            raise FibercutError("arc arrays must have equal length")
        if tails.size and (min(tails.min(), heads.min()) < 0
                           or max(tails.max(), heads.max()) >= self.n_nodes):
            raise FibercutError("arc endpoint out of range")
        if np.any(heads == self.s) or np.any(tails == self.t):
            raise FibercutError("arcs into the source or out of the sink are not allowed")
        if np.any(np.isnan(caps)) or np.any(caps < 0):
            raise FibercutError("capacities must be non-negative")

    @property
    def s(self) -> int:
        return self.n_nodes - 2

    @property
    def t(self) -> int:
        return self.n_nodes - 1

    @property
    def n_arcs(self) -> int:
        return int(self.tails.size)

    def cut_capacity(self, source_side) -> float:
        """Total capacity of arcs leaving the node set ``source_side`` (bool mask)."""
        side = np.asarray(source_side, dtype=bool)
        crossing = side[self.tails] & ~side[self.heads]
        return float(self.caps[crossing].sum())

    def dump(self, path) -> None:
        """Write the arc list as ``u v capacity`` lines, INF written literally."""
        with Path(path).open("w") as fh:
            fh.write(f"# nodes {self.n_nodes} source {self.s} sink {self.t}\n")
            for u, v, c in zip(self.tails.tolist(), self.heads.tolist(), self.caps.tolist()):
                fh.write(f"{u} {v} {'INF' if c == np.inf else repr(c)}\n")


@dataclass(frozen=True, eq=False)
class CutResult:
    partition: np.ndarray  # bool per node, True = source side (V1)
    flow_value: float
    cut_value: float
    boundary_index: np.ndarray | None = None  # (P+1, R+1)


def node_ids(shape) -> np.ndarray:
    P1, R1, I1 = shape
    return np.arange(P1 * R1 * I1, dtype=np.int64).reshape(shape)


def build_graph(cf: CostField, sp: SmoothnessParams = SmoothnessParams(),
                force_inner: bool = False) -> FlowNetwork:
    """Arcs E1, E2, E3 (all infinite) plus the cost-driven terminal arcs.

    * E1: ``v(p,r,i) -> v(p,r,i-1)`` for ``i > 0``.
    * E2: ``v(p,r,i) -> v(p,r+-1,max(0,i-delta_x))`` with rays wrapping
      around, so r = 0 and r = R are neighbours.
    * E3: ``v(p,r,i) -> v(p+-1,r,max(0,i-delta_z))``, no wrap.
    * ``s -> v(p,r,0)`` with c(p,r,0) (infinite with ``force_inner``),
      ``v(p,r,I) -> t`` with c(p,r,I); for 0 < i < I with
      d = c(p,r,i) - c(p,r,i-1): ``s -> v`` with d if d > 0,
      ``v -> t`` with -d if d < 0, nothing if d == 0.
    """
    c = np.asarray(cf.costs, dtype=np.float64)
    P1, R1, I1 = c.shape
    I = I1 - 1
    sp.check(I)
    ids = node_ids(c.shape)
    n = ids.size
    s, t = n, n + 1
    tails, heads, caps = [], [], []

    def add(u, v, w):
        tails.append(np.ravel(u))
        heads.append(np.broadcast_to(v, np.shape(u)).ravel())
        caps.append(np.broadcast_to(w, np.shape(u)).ravel().astype(np.float64))

    inf = np.inf
    add(ids[:, :, 1:], ids[:, :, :-1], inf)  # E1
    ii = np.arange(I1)
    jx = np.maximum(0, ii - sp.delta_x)
    add(ids, np.roll(ids, -1, axis=1)[:, :, jx], inf)  # E21 + E24
    add(ids, np.roll(ids, 1, axis=1)[:, :, jx], inf)  # E22 + E23
    jz = np.maximum(0, ii - sp.delta_z)
    add(ids[:-1], ids[1:][:, :, jz], inf)  # E31
    add(ids[1:], ids[:-1][:, :, jz], inf)  # E32

    add(np.full(P1 * R1, s), ids[:, :, 0].ravel(), inf if force_inner else c[:, :, 0].ravel())
    add(ids[:, :, I].ravel(), t, c[:, :, I].ravel())
    if I > 1:
        d = c[:, :, 1:I] - c[:, :, 0:I - 1]
        inner = ids[:, :, 1:I]
        pos, neg = d > 0, d < 0
        add(np.full(int(pos.sum()), s), inner[pos], d[pos])
        add(inner[neg], t, -d[neg])
    return FlowNetwork(n + 2, np.concatenate(tails), np.concatenate(heads),
                       np.concatenate(caps), lattice_shape=c.shape)


# -- Boykov-Kolmogorov max-flow ---------------------------------------------

_NONE = -1
_TERMINAL = -2
_ORPHAN = -3
_BIG = 1 << 60


@_accel.njit
def _bk_kernel(n, first, adj, head, rcap, tr_cap):
    parent = np.full(n, _NONE, np.int64)
    is_sink = np.zeros(n, np.bool_)
    ts = np.zeros(n, np.int64)
    dist = np.zeros(n, np.int64)
    active = np.empty(n + 1, np.int64)
    in_active = np.zeros(n, np.bool_)
    orphans = np.empty(n + 1, np.int64)
    qn = n + 1
    qh = 0
    qt = 0
    oh = 0
    ot = 0
    flow = 0.0
    for i in range(n):
        if tr_cap[i] != 0.0:
            parent[i] = _TERMINAL
            is_sink[i] = tr_cap[i] < 0.0
            dist[i] = 1
            active[qt] = i
            qt = (qt + 1) % qn
            in_active[i] = True
    time = 0
    current = -1
    while True:
        i = current
        if i >= 0 and parent[i] == _NONE:
            i = -1
        if i < 0:
            while qh != qt:
                j = active[qh]
                qh = (qh + 1) % qn
                in_active[j] = False
                if parent[j] != _NONE:
                    i = j
                    break
            if i < 0:
                break
        # growth
        mid = -1
        if not is_sink[i]:
            for k in range(first[i], first[i + 1]):
                a = adj[k]
                if rcap[a] > 0.0:
                    j = head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = False
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_active[j]:
                            active[qt] = j
                            qt = (qt + 1) % qn
                            in_active[j] = True
                    elif is_sink[j]:
                        mid = a
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        else:
            for k in range(first[i], first[i + 1]):
                a = adj[k]
                if rcap[a ^ 1] > 0.0:
                    j = head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = True
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_active[j]:
                            active[qt] = j
                            qt = (qt + 1) % qn
                            in_active[j] = True
                    elif not is_sink[j]:
                        mid = a ^ 1
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = a ^ 1
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        time += 1
        if mid < 0:
            current = -1
            continue
        current = i

        # augmentation along s ~> tail(mid) -> head(mid) ~> t
        b = rcap[mid]
        u = head[mid ^ 1]
        while True:
            a = parent[u]
            if a == _TERMINAL:
                break
            if rcap[a ^ 1] < b:
                b = rcap[a ^ 1]
            u = head[a]
        if tr_cap[u] < b:
            b = tr_cap[u]
        u = head[mid]
        while True:
            a = parent[u]
            if a == _TERMINAL:
                break
            if rcap[a] < b:
                b = rcap[a]
            u = head[a]
        if -tr_cap[u] < b:
            b = -tr_cap[u]
        rcap[mid ^ 1] += b
        rcap[mid] -= b
        u = head[mid ^ 1]
        while True:
            a = parent[u]
            if a == _TERMINAL:
                tr_cap[u] -= b
                if tr_cap[u] == 0.0:
                    parent[u] = _ORPHAN
                    orphans[ot] = u
                    ot = (ot + 1) % qn
                break
            rcap[a] += b
            rcap[a ^ 1] -= b
            if rcap[a ^ 1] == 0.0:
                parent[u] = _ORPHAN
                orphans[ot] = u
                ot = (ot + 1) % qn
            u = head[a]
        u = head[mid]
        while True:
            a = parent[u]
            if a == _TERMINAL:
                tr_cap[u] += b
                if tr_cap[u] == 0.0:
                    parent[u] = _ORPHAN
                    orphans[ot] = u
                    ot = (ot + 1) % qn
                break
            rcap[a ^ 1] += b
            rcap[a] -= b
            if rcap[a] == 0.0:
                parent[u] = _ORPHAN
                orphans[ot] = u
                ot = (ot + 1) % qn
            u = head[a]
        flow += b

        # adoption
        while oh != ot:
            o = orphans[oh]
            oh = (oh + 1) % qn
            sink_side = is_sink[o]
            d_min = _BIG
            a_min = -1
            for k in range(first[o], first[o + 1]):
                a0 = adj[k]
                ok = rcap[a0] > 0.0 if sink_side else rcap[a0 ^ 1] > 0.0
                if not ok:
                    continue
                j = head[a0]
                if is_sink[j] != sink_side or parent[j] == _NONE:
                    continue
                d = 0
                jj = j
                while True:
                    if ts[jj] == time:
                        d += dist[jj]
                        break
                    a = parent[jj]
                    d += 1
                    if a == _TERMINAL:
                        ts[jj] = time
                        dist[jj] = 1
                        break
                    if a == _ORPHAN:
                        d = _BIG
                        break
                    jj = head[a]
                if d < _BIG:
                    if d < d_min:
                        a_min = a0
                        d_min = d
                    jj = j
                    while ts[jj] != time:
                        ts[jj] = time
                        dist[jj] = d
                        d -= 1
                        jj = head[parent[jj]]
            if a_min >= 0:
                parent[o] = a_min
                ts[o] = time
                dist[o] = d_min + 1
                continue
            for k in range(first[o], first[o + 1]):
                a0 = adj[k]
                j = head[a0]
                if is_sink[j] != sink_side or parent[j] == _NONE:
                    continue
                ok = rcap[a0] > 0.0 if sink_side else rcap[a0 ^ 1] > 0.0
                if ok and not in_active[j]:
                    active[qt] = j
                    qt = (qt + 1) % qn
                    in_active[j] = True
                a = parent[j]
                if a != _TERMINAL and a != _ORPHAN and head[a] == o:
                    parent[j] = _ORPHAN
                    orphans[ot] = j
                    ot = (ot + 1) % qn
            parent[o] = _NONE

    # V1: everything reachable from the source in the residual graph
    side = np.zeros(n, np.bool_)
    stack = np.empty(n, np.int64)
    top = 0
    for i in range(n):
        if tr_cap[i] > 0.0:
            side[i] = True
            stack[top] = i
            top += 1
    while top > 0:
        top -= 1
        u = stack[top]
        for k in range(first[u], first[u + 1]):
            a = adj[k]
            if rcap[a] > 0.0:
                j = head[a]
                if not side[j]:
                    side[j] = True
                    stack[top] = j
                    top += 1
    return flow, side


def _prepare(net: FlowNetwork):
    """Split terminal arcs off and build the residual arc arrays."""
    s, t = net.s, net.t
    n = net.n_nodes - 2
    finite = np.isfinite(net.caps)
    sentinel = float(net.caps[finite].sum()) + 1.0
    caps = np.where(finite, net.caps, sentinel)
    u, v = net.tails, net.heads
    direct = (u == s) & (v == t)
    src = np.zeros(n)
    snk = np.zeros(n)
    m_s = (u == s) & (v != t)
    m_t = (v == t) & (u != s)
    np.add.at(src, v[m_s], caps[m_s])
    np.add.at(snk, u[m_t], caps[m_t])
    inner = ~(m_s | m_t | direct)
    iu, iv, ic = u[inner], v[inner], caps[inner]
    m = iu.size
    head = np.empty(2 * m, np.int64)
    head[0::2] = iv
    head[1::2] = iu
    rcap = np.zeros(2 * m)
    rcap[0::2] = ic
    tail = np.empty(2 * m, np.int64)
    tail[0::2] = iu
    tail[1::2] = iv
    adj = np.argsort(tail, kind="stable").astype(np.int64)
    first = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(tail, minlength=n), out=first[1:])
    base = float(caps[direct].sum()) + float(np.minimum(src, snk).sum())
    return n, first, adj, head, rcap, src - snk, base, sentinel


def max_flow(net: FlowNetwork) -> CutResult:
    """Exact maximum flow and the minimum cut whose source side is reachable from s."""
    n, first, adj, head, rcap, tr_cap, base, sentinel = _prepare(net)
    kernel = _bk_kernel if _accel.enabled() else _accel.pyfunc(_bk_kernel)
    flow, side = kernel(n, first, adj, head, rcap, tr_cap)
    flow += base
    partition = np.zeros(net.n_nodes, dtype=bool)
    partition[:n] = side
    partition[net.s] = True
    cut = net.cut_capacity(partition)
    if flow >= sentinel:
        flow = np.inf
    bidx = None
    if net.lattice_shape is not None:
        bidx = boundary_indices(partition[:n].reshape(net.lattice_shape))
    return CutResult(partition, float(flow), cut, bidx)


def boundary_indices(inside) -> np.ndarray:
    """Largest radial index on each ray that is in V1, or -1."""
    inside = np.asarray(inside, dtype=bool)
    I1 = inside.shape[-1]
    rev = inside[..., ::-1]
    last = I1 - 1 - np.argmax(rev, axis=-1)
    return np.where(inside.any(axis=-1), last, -1)


def brute_force_min_cut(net: FlowNetwork, max_nodes: int = 20) -> float:
    """Minimum cut capacity by enumerating every source-side subset.

    Partitions that cut an infinite arc are skipped; ``inf`` is returned
    when no finite cut exists.
    """
    n = net.n_nodes - 2
    if n > max_nodes:
        raise FibercutError(f"brute force is limited to {max_nodes} inner nodes, got {n}")
    best = np.inf
    u, v, c = net.tails, net.heads, net.caps
    chunk = 1 << min(n, 16)
    for start in range(0, 1 << n, chunk):
        masks = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
        side = np.concatenate([bits, np.ones((len(masks), 1), bool),
                               np.zeros((len(masks), 1), bool)], axis=1)
        crossing = side[:, u] & ~side[:, v]
        infcut = (crossing & np.isinf(c)).any(axis=1)
        total = np.where(crossing & np.isfinite(c), c, 0.0).sum(axis=1)
        total[infcut] = np.inf
        best = min(best, float(total.min()))
    return best


def segment(cf: CostField, sp: SmoothnessParams = SmoothnessParams(),
            force_inner: bool = False) -> CutResult:
    return max_flow(build_graph(cf, sp, force_inner=force_inner))
