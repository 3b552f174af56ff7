"""Configuration blocks shared by the matcher, the pipeline and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DISCRETIZERS = ("hungarian", "greedy")


@dataclass(frozen=True)
class MatcherConfig:
    theta: float = 0.2         # reweight factor
    rho: float = 30.0          # inflation factor
    tau: float = 0.3           # node-similarity threshold for representative select
    alpha_w: float = 0.1       # acceptance-tensor penalty
    top_k_edge: int = 20
    top_k_hyper: int = 10
    discretizer: str = "hungarian"
    dense: bool = False
    orders: tuple[int, ...] = (1, 2, 3)
    penalty: bool = True
    tol: float = 1e-8
    max_iter: int = 300
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 200

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if self.alpha_w <= 0:
            raise ValueError("alpha_w must be positive")
        if self.discretizer not in DISCRETIZERS:
            raise ValueError(f"discretizer must be one of {DISCRETIZERS}")
        orders = tuple(sorted(set(int(o) for o in self.orders)))
        if not orders or not set(orders) <= {1, 2, 3}:
            raise ValueError("orders must be a non-empty subset of {1, 2, 3}")
        object.__setattr__(self, "orders", orders)


@dataclass(frozen=True)
class PipelineConfig:
    max_iter: int = 5
    importance: bool = True
    global_only: bool = False
    lam: float = 0.5
    alpha_pur: float = 1.0
    alpha_stb: float = 1.0
    bandwidth_samples: int = 400
    seed: int = 0
    jobs: int = 1
    matcher: MatcherConfig = field(default_factory=MatcherConfig)


def _build(cls, doc: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(doc)
    if cls is PipelineConfig and "matcher" in kwargs:
        kwargs["matcher"] = _build(MatcherConfig, kwargs["matcher"])
    if cls is MatcherConfig and "orders" in kwargs:
        kwargs["orders"] = tuple(kwargs["orders"])
    return cls(**kwargs)


# config files use camelCase for a few keys
_ALIASES = {"topK_edge": "top_k_edge", "topK_hyper": "top_k_hyper", "maxIter": "max_iter"}


def _normalise_keys(doc: dict) -> dict:
    return {_ALIASES.get(k, k): (_normalise_keys(v) if isinstance(v, dict) else v)
            for k, v in doc.items()}


def load_config(path) -> PipelineConfig:
    """Read a JSON or TOML config. A bare matcher block is accepted too."""
    path = Path(path)
    text = path.read_text()
    doc = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    doc = _normalise_keys(doc)
    matcher_keys = {f.name for f in fields(MatcherConfig)}
    if doc and set(doc) <= matcher_keys:
        return PipelineConfig(matcher=_build(MatcherConfig, doc))
    return _build(PipelineConfig, doc)


def config_to_json(cfg: PipelineConfig) -> dict:
    doc = asdict(cfg)
    doc["matcher"]["orders"] = list(cfg.matcher.orders)
    return doc


def with_matcher(cfg: PipelineConfig, **changes) -> PipelineConfig:
    return replace(cfg, matcher=replace(cfg.matcher, **changes))
