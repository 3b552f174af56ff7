"""Command-line front end: extract, match, evaluate, ablate, synth.

Exit codes: 0 success, 2 invalid input or configuration, 3 failure while running.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path

from .config import PipelineConfig, config_to_json, load_config, tomllib
from .datasets import ManifestError, SynthConfig, generate_synthetic, load_manifest, save_task
from .pipeline import (VARIANTS, ReIdTask, evaluate, labelled_keys, run_ablation,
                       run_iterations, split_pairs, variant_config)

log = logging.getLogger("groupreid")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
SUMMARY_RANKS = (1, 5, 10, 20)


class UsageError(Exception):
    """Bad arguments or inputs detected before any work starts."""


# --------------------------------------------------------------------------
# helpers


def _dump_json(doc, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_csv(rows, header, path: Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _rate(x: float) -> str:
    return f"{x:.6f}"


def _pipeline_config(args) -> PipelineConfig:
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
    except (ValueError, TypeError) as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.jobs is not None:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        changes["jobs"] = args.jobs
    return dataclasses.replace(cfg, **changes)


def _load_task(args) -> ReIdTask:
    path = Path(args.task)
    if not path.exists():
        raise UsageError(f"missing task manifest: {path}")
    try:
        task = load_manifest(path, limit=args.limit)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.split is not None:
        if not 0.0 < args.split <= 1.0:
            raise UsageError("--split must lie in (0, 1]")
        task = split_pairs(task, args.split, args.seed or 0)
    if not task.probes or not task.galleries:
        raise UsageError("task needs at least one probe and one gallery group")
    return task


def _require_labels(task: ReIdTask) -> None:
    missing = [p for p in task.probe_ids if p not in task.ground_truth]
    if missing:
        raise UsageError(f"task is unlabeled: no ground truth for probe(s) {', '.join(missing[:5])}")


def _parse_variants(text: str) -> list[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    unknown = [v for v in names if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variant(s) {', '.join(unknown)}; valid: {', '.join(VARIANTS)}")
    return names


def _dump_importance(state, task: ReIdTask, path: Path) -> None:
    doc = {"probes": {g.group_id: t.to_json() for g, t in zip(task.probes, state.importances_p)},
           "galleries": {g.group_id: t.to_json() for g, t in zip(task.galleries, state.importances_q)}}
    _dump_json(doc, path)


# --------------------------------------------------------------------------
# commands


def cmd_extract(args) -> int:
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise UsageError(f"missing manifest: {manifest}")
    task = load_manifest(manifest, limit=args.limit)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_task(task, out)
    n = len(task.probes) + len(task.galleries)
    print(f"extracted {n} groups -> {out} (+ {out.with_suffix('.grpd').name})")
    return EXIT_OK


def cmd_match(args) -> int:
    task = _load_task(args)
    cfg = variant_config(args.variant, _pipeline_config(args))
    if cfg.global_only:
        raise UsageError("the global variant has no person matching; use evaluate")
    state = run_iterations(task, cfg)
    pairs = {}
    for (p, q), o in sorted(state.outcomes.items()):
        pid, qid = task.probes[p].group_id, task.galleries[q].group_id
        if args.probe and pid != args.probe:
            continue
        pairs[f"{pid}|{qid}"] = o.to_json()
    if args.probe and not pairs:
        raise UsageError(f"unknown probe group {args.probe!r}")
    config = config_to_json(cfg)
    # the worker count cannot change results, so it stays out of the output
    config.pop("jobs")
    doc = {"variant": args.variant, "config": config,
           "bandwidths": state.bandwidths.to_json(), "iterations": state.iter,
           "converged": state.converged, "pairs": pairs}
    _dump_json(doc, Path(args.out))
    if args.dump_importance:
        _dump_importance(state, task, Path(args.dump_importance))
    print(f"matched {len(pairs)} group pairs in {state.iter} iteration(s) -> {args.out}")
    return EXIT_OK


def summary_table(name: str, ranks, f: float | None) -> str:
    head = "variant".ljust(14) + "".join(f"{'rank-' + str(r):>9}" for r in SUMMARY_RANKS) + f"{'F':>9}"
    cells = "".join(f"{100 * ranks[min(r, len(ranks)) - 1]:8.1f}%" for r in SUMMARY_RANKS)
    fcell = f"{100 * f:8.1f}%" if f is not None else f"{'-':>9}"
    return f"{head}\n{name.ljust(14)}{cells}{fcell}"


def cmd_evaluate(args) -> int:
    task = _load_task(args)
    _require_labels(task)
    cfg = variant_config(args.variant, _pipeline_config(args))
    result, state = evaluate(task, cfg)
    out = Path(args.out)
    _write_csv([(r + 1, _rate(v)) for r, v in enumerate(result.ranks)], ("rank", "rate"), out / "cmc.csv")
    doc = {"variant": args.variant, "fScore": result.f_score,
           "rank": {str(r): result.rank(r) for r in SUMMARY_RANKS},
           "probes": len(task.probes), "galleries": len(task.galleries)}
    if state is not None:
        doc.update(iterations=state.iter, converged=state.converged,
                   stableByIteration5=state.stable_fraction(5, labelled_keys(task)))
    _dump_json(doc, out / "fscore.json")
    table = summary_table(args.variant, result.ranks, result.f_score)
    (out / "summary.txt").write_text(table + "\n")
    if args.dump_importance and state is not None:
        _dump_importance(state, task, Path(args.dump_importance))
    print(table)
    return EXIT_OK


def cmd_ablate(args) -> int:
    variants = _parse_variants(args.variants)
    if len(variants) < 2:
        raise UsageError("ablate needs at least two variants")
    task = _load_task(args)
    _require_labels(task)
    results = run_ablation(task, variants, _pipeline_config(args))
    G = len(task.galleries)
    rows = [(r + 1, v, _rate(results[v].ranks[r])) for r in range(G) for v in variants]
    _write_csv(rows, ("rank", "variant", "rate"), Path(args.out))
    for v in variants:
        print(summary_table(v, results[v].ranks, None).splitlines()[1])
    return EXIT_OK


def _synth_config(args) -> SynthConfig:
    doc = {}
    if args.config:
        path = Path(args.config)
        text = path.read_text()
        doc = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    known = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = set(doc) - known
    if unknown:
        raise UsageError(f"unknown synthetic config keys: {sorted(unknown)}")
    for key in ("image_size", "prototype_weight", "view_change"):
        if key in doc:
            doc[key] = tuple(doc[key])
    for key in ("n_pairs", "seed"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    try:
        return SynthConfig(**doc)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args) -> int:
    cfg = _synth_config(args)
    task = generate_synthetic(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_task(task, out)
    print(f"wrote {len(task.probes)} probe and {len(task.galleries)} gallery groups -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupreid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, task=True):
        p.add_argument("--config", help="pipeline/matcher config (JSON or TOML)")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, help="worker processes for group-pair matching")
        p.add_argument("--limit", type=int, help="only read the first N groups of the manifest")
        if task:
            p.add_argument("task", help="task manifest (JSON)")
            p.add_argument("--split", type=float, help="evaluate on a random fraction of the labelled pairs")

    p = sub.add_parser("extract", help="compute descriptors for a manifest and cache them")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output manifest; the cache is written next to it")
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("match", help="match every probe against every gallery")
    common(p)
    p.add_argument("--variant", default="proposed")
    p.add_argument("--probe", help="only report pairs of this probe group")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-importance")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("evaluate", help="CMC curve, F-score and summary table")
    common(p)
    p.add_argument("--variant", default="proposed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dump-importance")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="compare variants on one task")
    common(p)
    p.add_argument("--variants", "--variant", dest="variants", default=",".join(VARIANTS),
                   help="comma-separated variant names")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic task")
    p.add_argument("--config", help="synthetic generator settings (JSON or TOML)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-pairs", dest="n_pairs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("GROUPMATCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if getattr(args, "variant", None) is not None and args.variant not in VARIANTS:
        print(f"error: unknown variant {args.variant!r}; valid: {', '.join(VARIANTS)}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (UsageError, ManifestError, FileNotFoundError,
            json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
