"""Iterative importance / matching loop and the evaluation protocol."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .config import PipelineConfig, with_matcher
from .features import GroupGraph
from .importance import ImportanceTable, MatchingSet, group_importance
from .matcher import (Bandwidths, MatchOutcome, PreparedPair, _PairTerms,
                      estimate_bandwidths, prepare_pair, solve_pair)

log = logging.getLogger(__name__)


@dataclass
class ReIdTask:
    probes: list[GroupGraph]       # camera A
    galleries: list[GroupGraph]    # camera B
    ground_truth: dict[str, str] = field(default_factory=dict)
    # (probe id, gallery id) -> [(probe node, gallery node), ...]
    correspondences: dict[tuple[str, str], list[tuple[int, int]]] = field(default_factory=dict)

    def __post_init__(self):
        for side, groups in (("probe", self.probes), ("gallery", self.galleries)):
            ids = [g.group_id for g in groups]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate {side} group ids")
        by_id = {g.group_id: g for g in self.probes + self.galleries}
        for (p, q), pairs in self.correspondences.items():
            if p not in by_id or q not in by_id:
                raise ValueError(f"correspondence references unknown group {(p, q)}")
            for i, a in pairs:
                if not (0 <= i < by_id[p].n and 0 <= a < by_id[q].n):
                    raise ValueError(f"correspondence {(i, a)} out of range for {(p, q)}")

    @property
    def probe_ids(self) -> list[str]:
        return [g.group_id for g in self.probes]

    @property
    def gallery_ids(self) -> list[str]:
        return [g.group_id for g in self.galleries]

    def subset(self, probe_ids, gallery_ids) -> "ReIdTask":
        probe_ids, gallery_ids = set(probe_ids), set(gallery_ids)
        return ReIdTask(
            probes=[g for g in self.probes if g.group_id in probe_ids],
            galleries=[g for g in self.galleries if g.group_id in gallery_ids],
            ground_truth={p: q for p, q in self.ground_truth.items()
                          if p in probe_ids and q in gallery_ids},
            correspondences={k: v for k, v in self.correspondences.items()
                             if k[0] in probe_ids and k[1] in gallery_ids})


@dataclass
class IterationState:
    iter: int
    importances_p: list[ImportanceTable]
    importances_q: list[ImportanceTable]
    outcomes: dict[tuple[int, int], MatchOutcome]
    converged: bool
    # per iteration: {(probe index, gallery index): frozenset of matched pairs}
    history: list[dict[tuple[int, int], frozenset]] = field(default_factory=list)
    bandwidths: Bandwidths | None = None

    def score_matrix(self, penalty: bool = True) -> np.ndarray:
        n_p = len(self.importances_p)
        n_q = len(self.importances_q)
        S = np.empty((n_p, n_q))
        for (p, q), o in self.outcomes.items():
            S[p, q] = o.score_with(penalty)
        return S

    def stable_fraction(self, by_iter: int | None = None, keys=None) -> float:
        """Share of pairs whose assignment no longer changes at ``by_iter``.

        ``keys`` restricts the count to some (probe, gallery) index pairs,
        e.g. the labelled ones.
        """
        if not self.history:
            return 1.0
        t = min(by_iter or len(self.history), len(self.history))
        if self.converged and t >= len(self.history):
            return 1.0
        if t < 2:
            return 0.0 if len(self.history) > 1 else 1.0
        prev, cur = self.history[t - 2], self.history[t - 1]
        keys = list(cur) if keys is None else list(keys)
        if not keys:
            return 1.0
        return float(np.mean([prev[k] == cur[k] for k in keys]))


def labelled_keys(task: "ReIdTask") -> list[tuple[int, int]]:
    """(probe index, gallery index) of every ground-truth pair in the task."""
    pid = {g.group_id: k for k, g in enumerate(task.probes)}
    gid = {g.group_id: k for k, g in enumerate(task.galleries)}
    return sorted((pid[p], gid[q]) for p, q in task.ground_truth.items() if p in pid and q in gid)


@dataclass
class CmcResult:
    ranks: np.ndarray          # ranks[r - 1] = match rate within rank r
    f_score: float | None = None

    def rank(self, r: int) -> float:
        return float(self.ranks[min(r, len(self.ranks)) - 1])


# --------------------------------------------------------------------------
# matching passes


def _outcome_key(o: MatchOutcome) -> frozenset:
    return frozenset(o.pairs())


_WORKER: dict = {}


def _worker_init(task, cfg, bandwidths):
    _WORKER.update(task=task, cfg=cfg, bandwidths=bandwidths)


def _worker_rows(rows, imps_p, imps_q):
    task, cfg, bw = _WORKER["task"], _WORKER["cfg"], _WORKER["bandwidths"]
    out = {}
    for p in rows:
        for q, gQ in enumerate(task.galleries):
            prep = prepare_pair(task.probes[p], gQ, cfg.matcher, bw)
            out[(p, q)] = solve_pair(prep, imps_p[p], imps_q[q], cfg.matcher)
    return out


class _Matcher:
    """Runs all probe x gallery matches for one pass, sequential or pooled."""

    def __init__(self, task: ReIdTask, cfg: PipelineConfig, bandwidths: Bandwidths):
        self.task, self.cfg, self.bw = task, cfg, bandwidths
        self.cache: dict[tuple[int, int], PreparedPair] = {}
        self.pool = None
        if cfg.jobs > 1:
            self.pool = ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_worker_init,
                                            initargs=(task, cfg, bandwidths))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def run(self, imps_p, imps_q) -> dict[tuple[int, int], MatchOutcome]:
        n_p = len(self.task.probes)
        if self.pool is not None:
            chunks = [list(range(n_p))[k::self.cfg.jobs] for k in range(self.cfg.jobs)]
            futures = [self.pool.submit(_worker_rows, c, imps_p, imps_q) for c in chunks if c]
            merged = {}
            for f in futures:
                merged.update(f.result())
            return {k: merged[k] for k in sorted(merged)}
        out = {}
        for p, gP in enumerate(self.task.probes):
            for q, gQ in enumerate(self.task.galleries):
                prep = self.cache.get((p, q))
                if prep is None:
                    prep = self.cache[(p, q)] = prepare_pair(gP, gQ, self.cfg.matcher, self.bw)
                out[(p, q)] = solve_pair(prep, imps_p[p], imps_q[q], self.cfg.matcher)
        return out


def task_bandwidths(task: ReIdTask, n_samples: int = 400, seed: int = 0) -> Bandwidths:
    """Kernel widths from a seeded sample of cross-camera group pairs."""
    pairs = [(p, q) for p in range(len(task.probes)) for q in range(len(task.galleries))]
    rng = np.random.default_rng(seed)
    if len(pairs) > n_samples:
        pick = np.sort(rng.choice(len(pairs), n_samples, replace=False))
        pairs = [pairs[k] for k in pick]
    return estimate_bandwidths([_PairTerms(task.probes[p], task.galleries[q]) for p, q in pairs])


def compact_descriptors(task: ReIdTask) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Person descriptors in an orthonormal basis of their own span.

    Every descriptor of the task lies in that span, so all Euclidean
    distances between them are unchanged while the dimension drops to at
    most the number of persons.
    """
    groups = task.probes + task.galleries
    X = np.vstack([g.descriptors for g in groups])
    if X.shape[0] >= X.shape[1]:
        C = X
    else:
        C = np.linalg.qr(X.T, mode="r").T
    splits = np.cumsum([g.n for g in groups])[:-1]
    parts = np.split(C, splits)
    return parts[:len(task.probes)], parts[len(task.probes):]


def matching_sets(task: ReIdTask, outcomes: dict[tuple[int, int], MatchOutcome], compact=None):
    """Per-person cross-view matching sets from the surviving matches of every pair.

    ``compact`` (from :func:`compact_descriptors`) replaces the raw descriptors.
    """
    desc_p, desc_q = compact or ([g.descriptors for g in task.probes],
                                 [g.descriptors for g in task.galleries])
    sets_p = [[MatchingSet(owner=("A", g.group_id, n), descriptor=desc_p[k][n])
               for n in range(g.n)] for k, g in enumerate(task.probes)]
    sets_q = [[MatchingSet(owner=("B", g.group_id, n), descriptor=desc_q[k][n])
               for n in range(g.n)] for k, g in enumerate(task.galleries)]
    for (p, q) in sorted(outcomes):
        gP, gQ = task.probes[p], task.galleries[q]
        for i, a, _ in outcomes[(p, q)].matches:
            sets_p[p][i].members.append(desc_q[q][a])
            sets_p[p][i].sources.append(gQ.group_id)
            sets_q[q][a].members.append(desc_p[p][i])
            sets_q[q][a].sources.append(gP.group_id)
    return sets_p, sets_q


def update_importances(task: ReIdTask, outcomes, cfg: PipelineConfig, compact=None):
    sets_p, sets_q = matching_sets(task, outcomes, compact)
    kw = dict(alpha_pur=cfg.alpha_pur, alpha_stb=cfg.alpha_stb, lam=cfg.lam)
    imps_p = [group_importance(g, s, **kw) for g, s in zip(task.probes, sets_p)]
    imps_q = [group_importance(g, s, **kw) for g, s in zip(task.galleries, sets_q)]
    return imps_p, imps_q


def run_iterations(task: ReIdTask, cfg: PipelineConfig | None = None,
                   bandwidths: Bandwidths | None = None) -> IterationState:
    """Alternate multi-order matching and importance updates.

    Stops once no pair's discrete assignment changes between two passes, or
    after ``cfg.max_iter`` passes. With importance disabled a single pass is
    final, since nothing feeds back into the matcher.
    """
    cfg = cfg or PipelineConfig()
    bw = bandwidths or task_bandwidths(task, cfg.bandwidth_samples, cfg.seed)
    imps_p = [ImportanceTable.uniform(g.n) for g in task.probes]
    imps_q = [ImportanceTable.uniform(g.n) for g in task.galleries]
    matcher = _Matcher(task, cfg, bw)
    compact = compact_descriptors(task) if cfg.importance and cfg.max_iter > 1 else None
    history = []
    outcomes = {}
    converged = False
    it = 0
    try:
        while it < cfg.max_iter:
            it += 1
            outcomes = matcher.run(imps_p, imps_q)
            history.append({k: _outcome_key(o) for k, o in outcomes.items()})
            log.info("iteration %d: %d pairs matched", it, len(outcomes))
            if len(history) > 1 and history[-1] == history[-2]:
                converged = True
                break
            if not cfg.importance:
                converged = True
                break
            if it < cfg.max_iter:
                imps_p, imps_q = update_importances(task, outcomes, cfg, compact)
    finally:
        matcher.close()
    return IterationState(it, imps_p, imps_q, outcomes, converged, history, bw)


# --------------------------------------------------------------------------
# evaluation


def rank_galleries(scores: dict[tuple[str, str], float]) -> dict[str, list[str]]:
    """Galleries per probe by descending score; ties go to the lower gallery id."""
    per_probe: dict[str, list[tuple[float, str]]] = {}
    for (p, q), s in scores.items():
        per_probe.setdefault(p, []).append((-float(s), q))
    return {p: [q for _, q in sorted(v)] for p, v in sorted(per_probe.items())}


def score_dict(task: ReIdTask, S: np.ndarray) -> dict[tuple[str, str], float]:
    return {(gp.group_id, gq.group_id): float(S[p, q])
            for p, gp in enumerate(task.probes) for q, gq in enumerate(task.galleries)}


def cmc(ranked: dict[str, list[str]], ground_truth: dict[str, str]) -> CmcResult:
    if not ranked:
        raise ValueError("no probes")
    G = max(len(v) for v in ranked.values())
    hits = np.zeros(G)
    for p, order in ranked.items():
        if p not in ground_truth:
            raise ValueError(f"unlabeled probe {p!r}")
        true = ground_truth[p]
        if true in order:
            hits[order.index(true)] += 1
    return CmcResult(ranks=np.cumsum(hits) / len(ranked))


def f_score(predicted, truth) -> float:
    """Harmonic mean of precision and recall over correspondence tuples."""
    predicted, truth = set(predicted), set(truth)
    if not predicted and not truth:
        return 1.0
    correct = len(predicted & truth)
    if correct == 0:
        return 0.0
    precision = correct / len(predicted)
    recall = correct / len(truth)
    return 2 * precision * recall / (precision + recall)


def assignment_f_score(task: ReIdTask, state: IterationState) -> float:
    """F-score of person correspondences, pooled over the true group pairs."""
    pid = {g.group_id: k for k, g in enumerate(task.probes)}
    gid = {g.group_id: k for k, g in enumerate(task.galleries)}
    predicted, truth = set(), set()
    for p, q in task.ground_truth.items():
        if p not in pid or q not in gid:
            continue
        for i, a in state.outcomes[(pid[p], gid[q])].pairs():
            predicted.add((p, q, i, a))
        for i, a in task.correspondences.get((p, q), []):
            truth.add((p, q, i, a))
    return f_score(predicted, truth)


def global_scores(task: ReIdTask) -> np.ndarray:
    """Negative distance between whole-image descriptors."""
    def desc(g):
        if g.global_descriptor is not None:
            return g.global_descriptor
        return g.descriptors.mean(axis=0)
    A = np.array([desc(g) for g in task.probes])
    B = np.array([desc(g) for g in task.galleries])
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * A @ B.T
    return -np.sqrt(np.maximum(sq, 0.0))


def evaluate(task: ReIdTask, cfg: PipelineConfig | None = None,
             state: IterationState | None = None, penalty: bool | None = None):
    """(CmcResult, IterationState) for one configuration."""
    cfg = cfg or PipelineConfig()
    if cfg.global_only:
        S = global_scores(task)
        return CmcResult(cmc(rank_galleries(score_dict(task, S)), task.ground_truth).ranks), None
    state = state or run_iterations(task, cfg)
    use_penalty = cfg.matcher.penalty if penalty is None else penalty
    S = state.score_matrix(use_penalty)
    result = cmc(rank_galleries(score_dict(task, S)), task.ground_truth)
    result.f_score = assignment_f_score(task, state)
    return result, state


VARIANTS = {
    "global": dict(global_only=True),
    "finer": dict(importance=False, orders=(1,)),
    "finer+middle": dict(importance=False, orders=(1, 2)),
    "no-assign": dict(importance=False),
    "proposed": dict(),
    "no-penalty": dict(penalty=False),
    "no-threshold": dict(tau=0.0),
}

_PIPELINE_KEYS = {"importance", "global_only", "max_iter"}


def variant_config(name: str, base: PipelineConfig | None = None) -> PipelineConfig:
    if name not in VARIANTS:
        raise KeyError(f"unknown variant {name!r}; valid: {', '.join(VARIANTS)}")
    base = base or PipelineConfig()
    flags = VARIANTS[name]
    cfg = replace(base, **{k: v for k, v in flags.items() if k in _PIPELINE_KEYS})
    matcher_flags = {k: v for k, v in flags.items() if k not in _PIPELINE_KEYS}
    return with_matcher(cfg, **matcher_flags) if matcher_flags else cfg


def run_ablation(task: ReIdTask, variants=tuple(VARIANTS), base: PipelineConfig | None = None,
                 states: dict | None = None):
    """One CmcResult per variant on the same task.

    Variants that differ only in the penalty flag share their matching runs.
    When ``states`` is given it receives each matching variant's IterationState.
    """
    base = base or PipelineConfig()
    bw = None
    runs: dict = {}
    results = {}
    for name in variants:
        cfg = variant_config(name, base)
        if cfg.global_only:
            results[name] = evaluate(task, cfg)[0]
            continue
        if bw is None:
            bw = task_bandwidths(task, base.bandwidth_samples, base.seed)
        key = (cfg.importance, cfg.max_iter, replace(cfg.matcher, penalty=True))
        if key not in runs:
            runs[key] = run_iterations(task, cfg, bw)
        results[name] = evaluate(task, cfg, runs[key])[0]
        if states is not None:
            states[name] = runs[key]
    return results


def split_pairs(task: ReIdTask, fraction: float = 0.5, seed: int = 0,
                keep_unpaired_galleries: bool = True) -> ReIdTask:
    """Random test split: a fraction of the labelled pairs plus all distractors."""
    rng = np.random.default_rng(seed)
    labelled = sorted(task.ground_truth.items())
    n_test = max(1, int(round(fraction * len(labelled))))
    pick = np.sort(rng.choice(len(labelled), n_test, replace=False))
    chosen = [labelled[k] for k in pick]
    probe_ids = [p for p, _ in chosen]
    paired = set(task.ground_truth.values())
    gallery_ids = [q for _, q in chosen]
    if keep_unpaired_galleries:
        gallery_ids += [q for q in task.gallery_ids if q not in paired]
    return task.subset(probe_ids, gallery_ids)


def default_jobs() -> int:
    return max(1, min(4, os.cpu_count() or 1))
