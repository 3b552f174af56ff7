"""Importance of persons and person subgroups.

Node importance combines three per-person scores, each min-max normalised
within its group image:

* saliency  - k-th nearest-neighbour distance inside the person's matching set
* purity    - summed EMD between the person's matching set and the others'
* stability - inverse local outlier factor of the person's position

Pairs and triples add a geometric stability term to a damped sum of their
constituent importances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .features import GroupGraph, triangle_angles

SIGMA_R = 0.5
SIGMA_S = 0.5
ALPHA_PUR = 1.0
ALPHA_STB = 1.0
SUBGROUP_LAMBDA = 0.5
LRD_EPS = 1e-9
# exp() argument cap for the edge stability term; keeps weights finite
MAX_EDGE_EXPONENT = 50.0


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class MatchingSet:
    """Cross-view counterparts of one person, at most one per reference group."""

    owner: tuple = ()
    descriptor: np.ndarray | None = None
    members: list[np.ndarray] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def matrix(self) -> np.ndarray:
        return np.asarray(self.members, dtype=np.float64)


def saliency_score(ms: MatchingSet, empty_value: float = 1.0) -> float:
    if len(ms) == 0:
        return empty_value
    dists = np.sort(np.linalg.norm(ms.matrix() - ms.descriptor, axis=1))
    k = max(1, round_half_up(len(ms) / 2))
    return float(dists[k - 1] / len(ms))


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def emd(ms_a, ms_b) -> float:
    """Earth mover's distance between two matching sets with unit masses.

    With unit capacities and total flow ``min(|A|, |B|)`` the optimal flow is
    integral, so the transport problem is a rectangular assignment.
    """
    a = ms_a.matrix() if isinstance(ms_a, MatchingSet) else np.atleast_2d(ms_a)
    b = ms_b.matrix() if isinstance(ms_b, MatchingSet) else np.atleast_2d(ms_b)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty matching set")
    d = pairwise_distances(a, b)
    rows, cols = linear_sum_assignment(d)
    return float(d[rows, cols].sum() / min(len(a), len(b)))


def purity_scores(sets: list[MatchingSet]) -> np.ndarray:
    """Purity of every person in a group; empty sets are left as NaN."""
    n = len(sets)
    out = np.full(n, np.nan)
    pair = np.zeros((n, n))
    for i, j in itertools.combinations(range(n), 2):
        if len(sets[i]) and len(sets[j]):
            pair[i, j] = pair[j, i] = emd(sets[i], sets[j])
    for i in range(n):
        if len(sets[i]):
            out[i] = pair[i].sum()
    return out


def purity_score(target: int, sets: list[MatchingSet]) -> float:
    if len(sets) <= 1:
        return 0.0
    if len(sets[target]) == 0:
        raise ValueError("empty matching set")
    return float(sum(emd(sets[target], sets[j]) for j in range(len(sets))
                     if j != target and len(sets[j])))


def lof_scores(centers, k: int | None = None) -> np.ndarray:
    """Local outlier factor of every point (k defaults to round(N/2))."""
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n < 2:
        return np.ones(n)
    if k is None:
        k = round_half_up(n / 2)
    k = min(max(k, 1), n - 1)
    d = pairwise_distances(pts, pts)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    k_dist = d[np.arange(n), order[:, -1]]
    reach = np.maximum(k_dist[order], d[np.arange(n)[:, None], order])
    lrd = 1.0 / np.maximum(reach.mean(axis=1), LRD_EPS)
    return lrd[order].mean(axis=1) / lrd


def lof(centers, a: int, k: int | None = None) -> float:
    if len(centers) < 2:
        raise ValueError("LOF needs at least two points")
    return float(lof_scores(centers, k)[a])


def stability_score(centers, a: int, k: int | None = None) -> float:
    return 1.0 / lof(centers, a, k)


def normalize_scores(raw) -> np.ndarray:
    """Min-max to [0, 1]; a degenerate range maps every entry to 1."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        return raw
    lo, hi = raw.min(), raw.max()
    if not np.isfinite(hi - lo) or hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.ones_like(raw)
    return (raw - lo) / (hi - lo)


def node_importance(sal, pur, stb, alpha_pur: float = ALPHA_PUR,
                    alpha_stb: float = ALPHA_STB) -> np.ndarray:
    """Per-node importance from raw per-group score vectors."""
    return (normalize_scores(sal) + alpha_pur * normalize_scores(pur)
            + alpha_stb * normalize_scores(stb))


def omega2(g: GroupGraph, i: int, j: int, sigma_r: float = SIGMA_R) -> float:
    dist = max(float(np.linalg.norm(g.centers[i] - g.centers[j])), 1.0)
    return math.exp(min(sigma_r * g.diag / dist, MAX_EDGE_EXPONENT))


def omega3(g: GroupGraph, i: int, j: int, k: int, sigma_s: float = SIGMA_S) -> float:
    angles, degenerate = triangle_angles(g.centers[i], g.centers[j], g.centers[k])
    sines = np.zeros(3) if degenerate else np.sin(angles)
    return math.exp(-np.abs(sines - math.sin(math.pi / 3)).sum() / sigma_s)


@dataclass
class ImportanceTable:
    node: dict[int, float]
    edge: dict[tuple[int, int], float]
    hyper_edge: dict[tuple[int, int, int], float]

    @classmethod
    def uniform(cls, n: int, value: float = 1.0) -> "ImportanceTable":
        return cls(node={i: value for i in range(n)},
                   edge={e: value for e in itertools.combinations(range(n), 2)},
                   hyper_edge={t: value for t in itertools.combinations(range(n), 3)})

    def get(self, granule) -> float:
        key = tuple(sorted(granule))
        if len(key) == 1:
            return self.node[key[0]]
        if len(key) == 2:
            return self.edge[key]
        return self.hyper_edge[key]

    def node_array(self, n: int) -> np.ndarray:
        return np.array([self.node[i] for i in range(n)])

    def edge_matrix(self, n: int) -> np.ndarray:
        m = np.zeros((n, n))
        for (i, j), v in self.edge.items():
            m[i, j] = m[j, i] = v
        return m

    def to_json(self) -> dict:
        return {
            "node": {str(k): v for k, v in sorted(self.node.items())},
            "edge": {f"{i},{j}": v for (i, j), v in sorted(self.edge.items())},
            "hyperEdge": {f"{i},{j},{k}": v for (i, j, k), v in sorted(self.hyper_edge.items())},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ImportanceTable":
        def keys(s):
            return tuple(int(p) for p in s.split(","))
        return cls(node={int(k): float(v) for k, v in doc["node"].items()},
                   edge={keys(k): float(v) for k, v in doc["edge"].items()},
                   hyper_edge={keys(k): float(v) for k, v in doc["hyperEdge"].items()})


def subgroup_importance(table: ImportanceTable, g: GroupGraph, granule,
                        lam: float = SUBGROUP_LAMBDA, stability: float | None = None) -> float:
    """Geometric stability plus ``lam`` times the leave-one-out importances.

    ``stability`` overrides the raw Omega term (e.g. with a group-normalised one).
    """
    granule = tuple(sorted(granule))
    if len(granule) not in (2, 3):
        raise ValueError("granule must be a pair or a triple")
    if stability is None:
        stability = omega2(g, *granule) if len(granule) == 2 else omega3(g, *granule)
    return stability + lam * sum(table.get(sub) for sub in itertools.combinations(granule, len(granule) - 1))


def fill_subgroups(table: ImportanceTable, g: GroupGraph, lam: float = SUBGROUP_LAMBDA,
                   normalize_stability: bool = True) -> ImportanceTable:
    """Recompute pair and triple entries bottom-up from the node entries.

    With ``normalize_stability`` the Omega terms go through the same
    per-group min-max normaliser as the node scores.
    """
    table.edge = {}
    table.hyper_edge = {}
    pairs = list(itertools.combinations(range(g.n), 2))
    triples = list(itertools.combinations(range(g.n), 3))
    om2 = np.array([omega2(g, *e) for e in pairs])
    om3 = np.array([omega3(g, *t) for t in triples])
    if normalize_stability:
        om2, om3 = normalize_scores(om2), normalize_scores(om3)
    for e, w in zip(pairs, om2):
        table.edge[e] = subgroup_importance(table, g, e, lam, float(w))
    for t, w in zip(triples, om3):
        table.hyper_edge[t] = subgroup_importance(table, g, t, lam, float(w))
    return table


def group_importance(g: GroupGraph, sets: list[MatchingSet], *,
                     alpha_pur: float = ALPHA_PUR, alpha_stb: float = ALPHA_STB,
                     lam: float = SUBGROUP_LAMBDA) -> ImportanceTable:
    """Full importance table of one group from its persons' matching sets."""
    n = g.n
    sal = np.array([saliency_score(ms) if len(ms) else np.nan for ms in sets])
    pur = purity_scores(sets) if n > 1 else np.zeros(n)
    # an unmatched person is treated as maximally unique and pure
    for raw in (sal, pur):
        fill = np.nanmax(raw) if np.any(np.isfinite(raw)) else 1.0
        raw[np.isnan(raw)] = fill
    stb = 1.0 / lof_scores(g.centers) if n > 1 else np.ones(n)
    imp = node_importance(sal, pur, stb, alpha_pur, alpha_stb)
    table = ImportanceTable(node={i: float(imp[i]) for i in range(n)}, edge={}, hyper_edge={})
    return fill_subgroups(table, g, lam)
