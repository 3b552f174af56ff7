"""Multi-order group matching with reweighted random walks.

Correspondence candidates ``c = i * n_Q + a`` index a rank-3 affinity tensor
whose diagonal holds person similarities, two-index entries hold pair (edge)
similarities and three-index entries hold triple (hyper-edge) similarities.
The tensor is symmetric, so each order is stored once per unordered
candidate tuple:

* order 1: ``node[c]``                  for entry (c, c, c)
* order 2: ``pair_val[m]``  at (p, q)   for every permutation of (p, p, q) and (p, q, q)
* order 3: ``triple_val[m]`` at (p, q, r) for every permutation of (p, q, r)
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import linear_sum_assignment

from .config import MatcherConfig
from .features import GroupGraph
from .importance import ImportanceTable

ORDERS = (1, 2, 3)


# --------------------------------------------------------------------------
# similarity kernel bandwidths


@dataclass(frozen=True)
class Bandwidths:
    """Median distances used by the Gaussian similarity kernels.

    ``node``, ``log``, ``polar`` and ``angle`` whiten the attribute blocks
    before concatenation; ``edge`` and ``hyper`` are the kernel widths of the
    whitened pair and triple composites.
    """

    node: float = 1.0
    log: float = 1.0
    polar: float = 1.0
    angle: float = 1.0
    edge: float = 1.0
    hyper: float = 1.0
    whiten_node: float = 1.0

    def to_json(self) -> dict:
        return {k: float(getattr(self, k))
                for k in ("node", "log", "polar", "angle", "edge", "hyper", "whiten_node")}


def _robust_median(values) -> float:
    v = np.sqrt(np.maximum(np.concatenate([np.ravel(x) for x in values] or [np.zeros(0)]), 0.0))
    if v.size == 0:
        return 1.0
    med = float(np.median(v))
    if med <= 1e-12:
        med = float(v.mean())
    return med if med > 1e-12 else 1.0


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(sq, 0.0)


class _PairTerms:
    """Squared attribute distances between every granule of two graphs."""

    def __init__(self, gP: GroupGraph, gQ: GroupGraph):
        self.nP, self.nQ = gP.n, gQ.n
        self.D = _sqdist(gP.descriptors, gQ.descriptors)
        self.EP = np.array(list(itertools.combinations(range(self.nP), 2)), dtype=np.int64).reshape(-1, 2)
        self.EQ = np.array(list(itertools.permutations(range(self.nQ), 2)), dtype=np.int64).reshape(-1, 2)
        self.TP = np.array(list(itertools.combinations(range(self.nP), 3)), dtype=np.int64).reshape(-1, 3)
        self.TQ = np.array(list(itertools.permutations(range(self.nQ), 3)), dtype=np.int64).reshape(-1, 3)
        if len(self.EP) and len(self.EQ):
            LP, LQ = gP.log_distance, gQ.log_distance
            PP, PQ = gP.polar_angle, gQ.polar_angle
            self.GL = ((LP[:, :, None, None, :] - LQ[None, None, :, :, :]) ** 2).sum(-1)
            self.GA = ((PP[:, :, None, None, :] - PQ[None, None, :, :, :]) ** 2).sum(-1)
        else:
            self.GL = self.GA = None
        if len(self.TP) and len(self.TQ):
            SP = gP.angle_sines[self.TP[:, 0], self.TP[:, 1], self.TP[:, 2]]
            SQ = gQ.angle_sines[self.TQ[:, 0], self.TQ[:, 1], self.TQ[:, 2]]
            self.GI = ((SP[:, None, :] - SQ[None, :, :]) ** 2).sum(-1)
        else:
            self.GI = None

    def geometry_samples(self):
        """Off-diagonal (i != j, a != b) log/polar distances."""
        if self.GL is None:
            return np.zeros(0), np.zeros(0)
        i, j = self.EP[:, 0], self.EP[:, 1]
        a, b = self.EQ[:, 0], self.EQ[:, 1]
        return (self.GL[i[:, None], j[:, None], a[None, :], b[None, :]].ravel(),
                self.GA[i[:, None], j[:, None], a[None, :], b[None, :]].ravel())

    def _geo(self, bw: Bandwidths, i, j, a, b):
        return (self.GL[i, j, a, b] / bw.log ** 2) + (self.GA[i, j, a, b] / bw.polar ** 2)

    def edge_d2(self, bw: Bandwidths) -> np.ndarray:
        """(|EP|, |EQ|) whitened squared distance, averaged over both edge directions."""
        if self.GL is None:
            return np.zeros((len(self.EP), len(self.EQ)))
        i, j = self.EP[:, 0][:, None], self.EP[:, 1][:, None]
        a, b = self.EQ[:, 0][None, :], self.EQ[:, 1][None, :]
        nodes = (self.D[i, a] + self.D[j, b]) / bw.whiten_node ** 2
        geo = 0.5 * (self._geo(bw, i, j, a, b) + self._geo(bw, j, i, b, a))
        return nodes + geo

    def hyper_d2(self, bw: Bandwidths) -> np.ndarray:
        """(|TP|, |TQ|) whitened squared distance, averaged over both orientations."""
        if self.GI is None:
            return np.zeros((len(self.TP), len(self.TQ)))
        i, j, k = (self.TP[:, t][:, None] for t in range(3))
        a, b, c = (self.TQ[:, t][None, :] for t in range(3))
        nodes = (self.D[i, a] + self.D[j, b] + self.D[k, c]) / bw.whiten_node ** 2
        forward = self._geo(bw, i, j, a, b) + self._geo(bw, j, k, b, c) + self._geo(bw, k, i, c, a)
        backward = self._geo(bw, i, k, a, c) + self._geo(bw, k, j, c, b) + self._geo(bw, j, i, b, a)
        return nodes + 0.5 * (forward + backward) + self.GI / bw.angle ** 2


def _nearest(d2: np.ndarray) -> np.ndarray:
    """Squared distance from every row granule to its closest counterpart."""
    return d2.min(axis=1) if d2.size else np.zeros(0)


def estimate_bandwidths(pairs) -> Bandwidths:
    """Self-tuned kernel widths from a sample of (gP, gQ) graph pairs.

    Attribute blocks are whitened by their median cross-graph distance. The
    kernel widths are the median distance from each granule to its nearest
    counterpart in the other graph, i.e. the scale of a plausible match
    rather than of an arbitrary pair.
    """
    terms = [p if isinstance(p, _PairTerms) else _PairTerms(*p) for p in pairs]
    geo = [t.geometry_samples() for t in terms]
    log = _robust_median([g[0] for g in geo])
    polar = _robust_median([g[1] for g in geo])
    angle = _robust_median([t.GI for t in terms if t.GI is not None])
    whiten_node = _robust_median([t.D for t in terms])
    whiten = Bandwidths(log=log, polar=polar, angle=angle, whiten_node=whiten_node)
    node = _robust_median([_nearest(t.D) for t in terms])
    edge = _robust_median([_nearest(t.edge_d2(whiten)) for t in terms if t.GL is not None])
    hyper = _robust_median([_nearest(t.hyper_d2(whiten)) for t in terms if t.GI is not None])
    return Bandwidths(node=node, log=log, polar=polar, angle=angle, edge=edge, hyper=hyper,
                      whiten_node=whiten_node)


# --------------------------------------------------------------------------
# tensors


def selection_tensor(k: int, c1: int, c2: int, c3: int) -> int:
    """1 when the index tuple has exactly ``k`` distinct entries."""
    if k not in ORDERS:
        raise ValueError("order must be 1, 2 or 3")
    return int(len({c1, c2, c3}) == k)


def acceptance_tensor(w_p, w_q, alpha_w: float = 0.1):
    """Bi-directional weight of a matched granule pair."""
    if alpha_w <= 0:
        raise ValueError("alpha_w must be positive")
    w_p = np.asarray(w_p, dtype=np.float64)
    w_q = np.asarray(w_q, dtype=np.float64)
    out = w_p * w_q / (alpha_w + np.abs(w_p - w_q))
    return float(out) if out.ndim == 0 else out


@dataclass
class AffinityTensor:
    n_p: int
    n_q: int
    node: np.ndarray                 # (N,)
    pair_idx: np.ndarray             # (M2, 2) candidate indices, p < q
    pair_val: np.ndarray             # (M2,)
    triple_idx: np.ndarray           # (M3, 3) candidate indices, p < q < r
    triple_val: np.ndarray           # (M3,)

    @property
    def size(self) -> int:
        return self.n_p * self.n_q

    def candidate(self, c: int) -> tuple[int, int]:
        return divmod(int(c), self.n_q)

    def block(self, order: int):
        """(index array, values) of one order; order 1 uses (N, 1) indices."""
        if order == 1:
            return np.arange(self.size)[:, None], self.node
        if order == 2:
            return self.pair_idx, self.pair_val
        return self.triple_idx, self.triple_val

    def value(self, c1: int, c2: int, c3: int) -> float:
        key = tuple(sorted({c1, c2, c3}))
        if len(key) == 1:
            return float(self.node[key[0]])
        idx, val = self.block(len(key))
        hit = np.flatnonzero((idx == np.asarray(key)).all(axis=1))
        return float(val[hit[0]]) if hit.size else 0.0

    def dense(self, values: dict | None = None) -> np.ndarray:
        """Full (N, N, N) tensor; ``values`` may substitute per-order arrays."""
        values = values or {}
        N = self.size
        T = np.zeros((N, N, N))
        node = values.get(1, self.node)
        T[np.arange(N), np.arange(N), np.arange(N)] = node
        for (p, q), v in zip(self.pair_idx, values.get(2, self.pair_val)):
            for perm in set(itertools.permutations((p, p, q))) | set(itertools.permutations((p, q, q))):
                T[perm] = v
        for (p, q, r), v in zip(self.triple_idx, values.get(3, self.triple_val)):
            for perm in itertools.permutations((p, q, r)):
                T[perm] = v
        return T


@dataclass
class _Granules:
    """Per-entry (P granule, Q granule) node indices, kept for weighting."""

    pair_p: np.ndarray   # (M2, 2) i, j
    pair_q: np.ndarray   # (M2, 2) a, b
    triple_p: np.ndarray  # (M3, 3)
    triple_q: np.ndarray  # (M3, 3)


def _top_k(d2: np.ndarray, k: int | None) -> tuple[np.ndarray, np.ndarray]:
    rows = np.repeat(np.arange(d2.shape[0]), d2.shape[1]).reshape(d2.shape)
    if k is None or k >= d2.shape[1]:
        return rows.ravel(), np.tile(np.arange(d2.shape[1]), d2.shape[0])
    cols = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return rows[:, :k].ravel(), cols.ravel()


def build_affinity(gP: GroupGraph, gQ: GroupGraph, cfg: MatcherConfig | None = None,
                   bandwidths: Bandwidths | None = None, *, terms: _PairTerms | None = None,
                   return_granules: bool = False):
    """Affinity tensor between two groups (sparse, top-K per P granule unless dense)."""
    cfg = cfg or MatcherConfig()
    terms = terms or _PairTerms(gP, gQ)
    bw = bandwidths or estimate_bandwidths([terms])
    nP, nQ = gP.n, gQ.n
    node = np.exp(-terms.D / bw.node ** 2).ravel()

    k_edge = None if cfg.dense else cfg.top_k_edge
    k_hyper = None if cfg.dense else cfg.top_k_hyper

    pair_p = np.zeros((0, 2), dtype=np.int64)
    pair_q = np.zeros((0, 2), dtype=np.int64)
    pair_val = np.zeros(0)
    if 2 in cfg.orders and len(terms.EP) and len(terms.EQ):
        d2 = terms.edge_d2(bw)
        r, c = _top_k(d2, k_edge)
        pair_p, pair_q = terms.EP[r], terms.EQ[c]
        pair_val = np.exp(-d2[r, c] / bw.edge ** 2)

    triple_p = np.zeros((0, 3), dtype=np.int64)
    triple_q = np.zeros((0, 3), dtype=np.int64)
    triple_val = np.zeros(0)
    if 3 in cfg.orders and len(terms.TP) and len(terms.TQ):
        d2 = terms.hyper_d2(bw)
        r, c = _top_k(d2, k_hyper)
        triple_p, triple_q = terms.TP[r], terms.TQ[c]
        triple_val = np.exp(-d2[r, c] / bw.hyper ** 2)

    H = AffinityTensor(
        n_p=nP, n_q=nQ, node=node,
        pair_idx=pair_p * nQ + pair_q, pair_val=pair_val,
        triple_idx=triple_p * nQ + triple_q, triple_val=triple_val)
    if return_granules:
        return H, _Granules(pair_p, pair_q, triple_p, triple_q)
    return H


def _importance_arrays(table: ImportanceTable | None, n: int):
    """Dense node/pair/triple acceptance weights from an importance table.

    Importances pass through the same logistic map as the unmatched-person
    penalty. Min-max normalisation pins one person per group at importance 0,
    which would otherwise switch that person's candidates off entirely.
    """
    if table is None:
        return np.ones(n), np.ones((n, n)), np.ones((n, n, n))
    tri = np.zeros((n, n, n))
    for t, v in table.hyper_edge.items():
        for perm in itertools.permutations(t):
            tri[perm] = v
    return _sigmoid(table.node_array(n)), _sigmoid(table.edge_matrix(n)), _sigmoid(tri)


@dataclass
class AcceptanceTensor:
    node: np.ndarray
    pair_val: np.ndarray
    triple_val: np.ndarray
    alpha_w: float

    def block(self, order: int) -> np.ndarray:
        return {1: self.node, 2: self.pair_val, 3: self.triple_val}[order]


def build_acceptance(H: AffinityTensor, granules: _Granules,
                     imp_p: ImportanceTable | None, imp_q: ImportanceTable | None,
                     alpha_w: float) -> AcceptanceTensor:
    nodeP, edgeP, triP = _importance_arrays(imp_p, H.n_p)
    nodeQ, edgeQ, triQ = _importance_arrays(imp_q, H.n_q)
    node = acceptance_tensor(np.repeat(nodeP, H.n_q), np.tile(nodeQ, H.n_p), alpha_w)
    pp, pq = granules.pair_p, granules.pair_q
    pair = acceptance_tensor(edgeP[pp[:, 0], pp[:, 1]], edgeQ[pq[:, 0], pq[:, 1]], alpha_w)
    tp, tq = granules.triple_p, granules.triple_q
    triple = acceptance_tensor(triP[tp[:, 0], tp[:, 1], tp[:, 2]],
                               triQ[tq[:, 0], tq[:, 1], tq[:, 2]], alpha_w)
    return AcceptanceTensor(np.atleast_1d(node), np.atleast_1d(pair) if pp.size else np.zeros(0),
                            np.atleast_1d(triple) if tp.size else np.zeros(0), alpha_w)


# --------------------------------------------------------------------------
# transition tensor and contraction


def _order_degree(order: int, idx: np.ndarray, val: np.ndarray, N: int) -> np.ndarray:
    if order == 1:
        return val.copy()
    mult = 3.0 if order == 2 else 2.0
    return mult * sum(np.bincount(idx[:, t], weights=val, minlength=N) for t in range(order))


def _order_contract(order: int, idx: np.ndarray, val: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(T (x)_2 x (x)_3 x) for one symmetric order block."""
    N = x.size
    if order == 1:
        return val * x * x
    if order == 2:
        p, q = idx[:, 0], idx[:, 1]
        xp, xq = x[p], x[q]
        cross = 2.0 * xp * xq
        return (np.bincount(p, weights=val * (cross + xq * xq), minlength=N)
                + np.bincount(q, weights=val * (cross + xp * xp), minlength=N))
    p, q, r = idx[:, 0], idx[:, 1], idx[:, 2]
    xp, xq, xr = x[p], x[q], x[r]
    v2 = 2.0 * val
    return (np.bincount(p, weights=v2 * xq * xr, minlength=N)
            + np.bincount(q, weights=v2 * xp * xr, minlength=N)
            + np.bincount(r, weights=v2 * xp * xq, minlength=N))


@dataclass
class TransitionTensor:
    """Supra-transition tensor over (order, candidate) states.

    ``intra[a]`` is the order-``a`` block divided by its maximal degree;
    ``inter[a]`` is the reinforced inter-order diagonal ``d^a / d^a_max / (N L)``.
    """

    n_p: int
    n_q: int
    orders: tuple[int, ...]
    idx: dict[int, np.ndarray]
    intra: dict[int, np.ndarray]
    degrees: dict[int, np.ndarray]
    d_max: dict[int, float]
    inter: dict[int, np.ndarray]

    @property
    def size(self) -> int:
        return self.n_p * self.n_q

    @property
    def L(self) -> int:
        return len(self.orders)

    def contract(self, xs: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
        total = sum(xs[a] for a in self.orders)
        out = {}
        for a in self.orders:
            y = _order_contract(a, self.idx[a], self.intra[a], xs[a])
            out[a] = y + self.inter[a] * (total * total - xs[a] * xs[a])
        return out


def build_transition(H: AffinityTensor, W: AcceptanceTensor | None = None,
                     orders=ORDERS) -> TransitionTensor:
    """Intra-order blocks ``H o I^a o W / d^a_max`` plus reinforced inter-order links.

    Orders whose weighted affinity is identically zero are dropped.
    """
    N = H.size
    present, idx, intra, degrees, d_max = [], {}, {}, {}, {}
    for a in orders:
        ix, hv = H.block(a)
        if hv.size == 0:
            continue
        val = hv * (W.block(a) if W is not None else 1.0)
        d = _order_degree(a, ix, val, N)
        dm = float(d.max()) if d.size else 0.0
        if dm <= 0 or not np.isfinite(dm):
            continue
        present.append(a)
        idx[a] = ix[:, 0] if a == 1 else ix
        intra[a] = val / dm
        degrees[a] = d
        d_max[a] = dm
    L = max(len(present), 1)
    inter = {a: (degrees[a] / d_max[a]) / (N * L) for a in present}
    return TransitionTensor(H.n_p, H.n_q, tuple(present), idx, intra, degrees, d_max, inter)


# --------------------------------------------------------------------------
# reweighting


def bistochastic_normalize(M, tol: float = 1e-9, max_iter: int = 10_000,
                           pad_value: float | None = None) -> np.ndarray:
    """Alternate row and column scaling until all sums are 1 within ``tol``.

    Rectangular input is padded to a square with ``pad_value`` (default: the
    smallest positive entry) and the original block is returned, so only the
    longer side's sums are 1 in that case.
    """
    M = np.array(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("expected a non-empty matrix")
    if np.any(M < 0) or not np.all(np.isfinite(M)):
        raise ValueError("matrix must be finite and non-negative")
    if np.any(M.sum(axis=1) <= 0) or np.any(M.sum(axis=0) <= 0):
        raise ValueError("degenerate reweight matrix")
    n, m = M.shape
    if n != m:
        k = max(n, m)
        fill = pad_value if pad_value is not None else float(M[M > 0].min())
        S = np.full((k, k), fill)
        S[:n, :m] = M
        return bistochastic_normalize(S, tol, max_iter)[:n, :m]
    _sinkhorn_square(M, tol, max_iter)
    return M


@njit(cache=True)
def _sinkhorn_square(M, tol, max_iter):
    # after a column pass the column sums are 1 up to rounding, so only the
    # row sums need checking from the second test on
    n = M.shape[0]
    rows = np.zeros(n)
    cols = np.zeros(n)
    for i in range(n):
        for j in range(n):
            rows[i] += M[i, j]
            cols[j] += M[i, j]
    err = 0.0
    for i in range(n):
        err = max(err, abs(rows[i] - 1.0), abs(cols[i] - 1.0))
    it = 0
    while err > tol and it < max_iter:
        it += 1
        cols[:] = 0.0
        for i in range(n):
            inv = 1.0 / rows[i]
            for j in range(n):
                M[i, j] *= inv
                cols[j] += M[i, j]
        for j in range(n):
            cols[j] = 1.0 / cols[j]
        err = 0.0
        for i in range(n):
            r = 0.0
            for j in range(n):
                M[i, j] *= cols[j]
                r += M[i, j]
            rows[i] = r
            err = max(err, abs(r - 1.0))


def inflate(x: np.ndarray, rho: float) -> np.ndarray:
    top = x.max()
    if top <= 0:
        return np.ones_like(x)
    return np.exp(rho * x / top)


@dataclass
class AssignmentState:
    soft: dict[int, np.ndarray]          # per-order distributions over candidates
    order_confidence: dict[int, float]
    n_p: int
    n_q: int
    iterations: int = 0
    converged: bool = True
    discrete: np.ndarray | None = None

    def integrated(self) -> np.ndarray:
        """Sum of per-order distributions as an (n_P, n_Q) matrix."""
        if not self.soft:
            return np.zeros((self.n_p, self.n_q))
        return sum(self.soft.values()).reshape(self.n_p, self.n_q)


def rrw_iterate(T: TransitionTensor, cfg: MatcherConfig | None = None) -> AssignmentState:
    """Multi-order reweighted random walk until the soft assignment settles.

    Each step contracts the supra-transition tensor, then per order inflates,
    bistochastically normalises and scores the result against the walk
    (histogram intersection), gathers the reweighted vectors by those
    confidences and blends them back with weight ``1 - theta``.
    """
    cfg = cfg or MatcherConfig()
    N = T.size
    if not T.orders:
        return AssignmentState({}, {}, T.n_p, T.n_q, 0, True)
    present = np.array([a in T.orders for a in ORDERS])
    v1 = T.intra.get(1, np.zeros(N))
    idx2 = T.idx.get(2, np.zeros((0, 2), dtype=np.int64))
    v2 = T.intra.get(2, np.zeros(0))
    idx3 = T.idx.get(3, np.zeros((0, 3), dtype=np.int64))
    v3 = T.intra.get(3, np.zeros(0))
    inter = np.stack([T.inter.get(a, np.zeros(N)) for a in ORDERS])
    xs, conf, it, converged = _rrw_kernel(
        T.n_p, T.n_q, present, v1, np.ascontiguousarray(idx2, dtype=np.int64), v2,
        np.ascontiguousarray(idx3, dtype=np.int64), v3, inter,
        cfg.theta, cfg.rho, cfg.tol, cfg.max_iter, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter)
    soft = {a: xs[a - 1].copy() for a in T.orders}
    confidence = {a: float(conf[a - 1]) for a in T.orders}
    return AssignmentState(soft, confidence, T.n_p, T.n_q, int(it), bool(converged))


@njit(cache=True)
def _contract_kernel(present, v1, idx2, v2, idx3, v3, inter, xs, out):
    N = xs.shape[1]
    out[:, :] = 0.0
    total = np.zeros(N)
    for a in range(3):
        if present[a]:
            for c in range(N):
                total[c] += xs[a, c]
    if present[0]:
        for c in range(N):
            out[0, c] = v1[c] * xs[0, c] * xs[0, c]
    if present[1]:
        x = xs[1]
        for m in range(idx2.shape[0]):
            p, q = idx2[m, 0], idx2[m, 1]
            cross = 2.0 * x[p] * x[q]
            out[1, p] += v2[m] * (cross + x[q] * x[q])
            out[1, q] += v2[m] * (cross + x[p] * x[p])
    if present[2]:
        x = xs[2]
        for m in range(idx3.shape[0]):
            p, q, r = idx3[m, 0], idx3[m, 1], idx3[m, 2]
            w = 2.0 * v3[m]
            out[2, p] += w * x[q] * x[r]
            out[2, q] += w * x[p] * x[r]
            out[2, r] += w * x[p] * x[q]
    for a in range(3):
        if present[a]:
            for c in range(N):
                out[a, c] += inter[a, c] * (total[c] * total[c] - xs[a, c] * xs[a, c])


@njit(cache=True)
def _reweight_kernel(y, n_p, n_q, rho, sk_tol, sk_max, u):
    """Inflate ``y``, bistochastically normalise it (padded square) into ``u``."""
    K = max(n_p, n_q)
    top = y.max()
    M = np.empty((K, K))
    lo = np.inf
    for i in range(n_p):
        for a in range(n_q):
            v = np.exp(rho * y[i * n_q + a] / top) if top > 0 else 1.0
            M[i, a] = v
            lo = min(lo, v)
    for i in range(K):
        for a in range(K):
            if i >= n_p or a >= n_q:
                M[i, a] = lo
    _sinkhorn_square(M, sk_tol, sk_max)
    s = 0.0
    for i in range(n_p):
        for a in range(n_q):
            u[i * n_q + a] = M[i, a]
            s += M[i, a]
    for c in range(u.shape[0]):
        u[c] /= s


@njit(cache=True)
def _rrw_kernel(n_p, n_q, present, v1, idx2, v2, idx3, v3, inter,
                theta, rho, tol, max_iter, sk_tol, sk_max):
    N = n_p * n_q
    n_orders = 0
    for a in range(3):
        if present[a]:
            n_orders += 1
    xs = np.zeros((3, N))
    for a in range(3):
        if present[a]:
            xs[a, :] = 1.0 / N
    conf = np.zeros(3)
    ys = np.zeros((3, N))
    us = np.zeros((3, N))
    gathered = np.zeros(N)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        _contract_kernel(present, v1, idx2, v2, idx3, v3, inter, xs, ys)
        for a in range(3):
            if not present[a]:
                continue
            s = ys[a].sum()
            if s > 0:
                for c in range(N):
                    ys[a, c] /= s
            else:
                ys[a, :] = 1.0 / N
            _reweight_kernel(ys[a], n_p, n_q, rho, sk_tol, sk_max, us[a])
            inter_sum = 0.0
            for c in range(N):
                inter_sum += min(us[a, c], ys[a, c])
            conf[a] = inter_sum
        total = conf.sum()
        for a in range(3):
            if present[a]:
                conf[a] = conf[a] / total if total > 0 else 1.0 / n_orders
        gathered[:] = 0.0
        for a in range(3):
            if present[a]:
                for c in range(N):
                    gathered[c] += conf[a] * us[a, c]
        change = 0.0
        for a in range(3):
            if present[a]:
                for c in range(N):
                    v = theta * ys[a, c] + (1.0 - theta) * gathered[c]
                    change += abs(v - xs[a, c])
                    xs[a, c] = v
        if change < tol:
            converged = True
            break
    return xs, conf, it, converged


def multi_order_objective(T: TransitionTensor, X, confidence: dict[int, float] | None = None) -> float:
    """Supra-tensor objective ``P x1 x~ x2 x~ x3 x~`` with ``x~ = s (x) vec(X)``."""
    x = np.asarray(X, dtype=np.float64).ravel()
    if not T.orders:
        return 0.0
    s = confidence or {a: 1.0 / T.L for a in T.orders}
    xs = {a: s[a] * x for a in T.orders}
    ys = T.contract(xs)
    return float(sum(xs[a] @ ys[a] for a in T.orders))


# --------------------------------------------------------------------------
# discretisation and representative select


def _greedy(scores: np.ndarray) -> np.ndarray:
    nP, nQ = scores.shape
    X = np.zeros((nP, nQ), dtype=np.int64)
    flat = [(-scores[i, a], i, a) for i in range(nP) for a in range(nQ)]
    flat.sort()
    used_p, used_q = set(), set()
    for _, i, a in flat:
        if i in used_p or a in used_q:
            continue
        X[i, a] = 1
        used_p.add(i)
        used_q.add(a)
    return X


def discretize(state, method: str = "hungarian") -> np.ndarray:
    """One-to-one binary assignment maximising the integrated soft score."""
    scores = state.integrated() if isinstance(state, AssignmentState) else np.asarray(state, dtype=np.float64)
    if method == "greedy":
        X = _greedy(scores)
    elif method == "hungarian":
        rows, cols = linear_sum_assignment(scores, maximize=True)
        X = np.zeros(scores.shape, dtype=np.int64)
        X[rows, cols] = 1
    else:
        raise ValueError(f"unknown discretizer {method!r}")
    if isinstance(state, AssignmentState):
        state.discrete = X
    return X


def threshold_matches(X: np.ndarray, node_sims: np.ndarray, tau: float):
    """Drop matched pairs whose person similarity is below ``tau``.

    Returns (matches, unmatched_p, unmatched_q, x_hat).
    """
    X = np.asarray(X)
    sims = np.asarray(node_sims).reshape(X.shape)
    x_hat = np.zeros_like(X)
    matches = []
    for i, a in zip(*np.nonzero(X)):
        if sims[i, a] >= tau:
            x_hat[i, a] = 1
            matches.append((int(i), int(a), float(sims[i, a])))
    unmatched_p = [i for i in range(X.shape[0]) if not x_hat[i].any()]
    unmatched_q = [a for a in range(X.shape[1]) if not x_hat[:, a].any()]
    return matches, unmatched_p, unmatched_q, x_hat


def _sigmoid(v) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.asarray(v, dtype=np.float64)))


def group_score(H: AffinityTensor, W: AcceptanceTensor | None, x_hat: np.ndarray,
                unmatched_p=(), unmatched_q=(), imp_p=None, imp_q=None,
                orders=ORDERS, penalty: bool = True):
    """Similarity of two groups from their surviving matches.

    The similarity sums, over the requested orders, the acceptance-weighted
    mean of surviving affinities; orders absent for size reasons are
    renormalised over the present ones. Returns (score, similarity_term, penalty_term, per_order_means).
    """
    keep = np.asarray(x_hat).ravel().astype(bool)
    scale = float(acceptance_tensor(1.0, 1.0, W.alpha_w)) if W is not None else 1.0
    means = {}
    for a in ORDERS:
        if a not in orders:
            means[a] = 0.0
            continue
        ix, hv = H.block(a)
        if hv.size == 0:
            means[a] = 0.0
            continue
        w = W.block(a) if W is not None else np.ones_like(hv)
        val = hv * w
        mask = keep[ix].all(axis=1) & (val != 0)
        # acceptance-weighted mean of the surviving affinities, on the scale of
        # the acceptance of two unit importances
        means[a] = float(scale * val[mask].sum() / w[mask].sum()) if mask.any() else 0.0
    # orders the smaller group cannot host are renormalised away, so a pair
    # is not outscored merely because one group is too small for triples
    present = [a for a in orders if a <= min(H.n_p, H.n_q)]
    sim = float(sum(means.values()))
    if present:
        sim *= len(orders) / len(present)
    nodeP = np.ones(H.n_p) if imp_p is None else imp_p.node_array(H.n_p)
    nodeQ = np.ones(H.n_q) if imp_q is None else imp_q.node_array(H.n_q)
    pen = float(_sigmoid(nodeP[list(unmatched_p)]).sum() + _sigmoid(nodeQ[list(unmatched_q)]).sum())
    score = sim - pen if penalty else sim
    return score, sim, pen, means


# --------------------------------------------------------------------------
# end-to-end


@dataclass
class MatchOutcome:
    matches: list[tuple[int, int, float]]
    unmatched_p: list[int]
    unmatched_q: list[int]
    score: float
    similarity: float
    penalty: float
    per_order_means: dict[int, float]
    assignment: np.ndarray            # discrete X before thresholding
    order_confidence: dict[int, float] = field(default_factory=dict)
    iterations: int = 0
    converged: bool = True

    def score_with(self, penalty: bool) -> float:
        return self.similarity - self.penalty if penalty else self.similarity

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, a) for i, a, _ in self.matches]

    def to_json(self) -> dict:
        return {
            "matches": [[i, a, s] for i, a, s in self.matches],
            "unmatchedP": list(self.unmatched_p),
            "unmatchedQ": list(self.unmatched_q),
            "score": self.score,
            "similarity": self.similarity,
            "penalty": self.penalty,
            "perOrderMeans": [self.per_order_means.get(a, 0.0) for a in ORDERS],
            "orderConfidence": {str(a): c for a, c in sorted(self.order_confidence.items())},
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass
class PreparedPair:
    """Importance-independent part of a pair match, reusable across iterations."""

    H: AffinityTensor
    granules: _Granules


def prepare_pair(gP: GroupGraph, gQ: GroupGraph, cfg: MatcherConfig | None = None,
                 bandwidths: Bandwidths | None = None) -> PreparedPair:
    cfg = cfg or MatcherConfig()
    if gP.n == 0 or gQ.n == 0:
        raise ValueError("both groups must be non-empty")
    H, gran = build_affinity(gP, gQ, cfg, bandwidths, return_granules=True)
    return PreparedPair(H, gran)


def solve_pair(prepared: PreparedPair, imp_p: ImportanceTable | None = None,
               imp_q: ImportanceTable | None = None,
               cfg: MatcherConfig | None = None) -> MatchOutcome:
    cfg = cfg or MatcherConfig()
    H = prepared.H
    W = build_acceptance(H, prepared.granules, imp_p, imp_q, cfg.alpha_w)
    T = build_transition(H, W, cfg.orders)
    state = rrw_iterate(T, cfg)
    if T.orders:
        X = discretize(state, cfg.discretizer)
    else:
        X = discretize(H.node.reshape(H.n_p, H.n_q), cfg.discretizer)
    matches, up, uq, x_hat = threshold_matches(X, H.node, cfg.tau)
    score, sim, pen, means = group_score(H, W, x_hat, up, uq, imp_p, imp_q, cfg.orders, cfg.penalty)
    return MatchOutcome(matches, up, uq, score, sim, pen, means, X,
                        state.order_confidence, state.iterations, state.converged)


def match_groups(gP: GroupGraph, gQ: GroupGraph, imp_p: ImportanceTable | None = None,
                 imp_q: ImportanceTable | None = None, cfg: MatcherConfig | None = None,
                 bandwidths: Bandwidths | None = None) -> MatchOutcome:
    """Match two groups and score them."""
    return solve_pair(prepare_pair(gP, gQ, cfg, bandwidths), imp_p, imp_q, cfg)
