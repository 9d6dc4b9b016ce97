"""Command line entry points: train, replay, serve, review, report, corpus."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from lov import classifier as clf
from lov.features import FEATURES
from lov.pipeline import (
    PipelineConfig,
    PipelineError,
    benign_occurrences,
    cdf,
    frequency,
    load_store,
    percentile,
    publish,
    replay,
)
from lov.quarantine import manual_decision
from lov.rov import Prefix, RouteKey, parse_asn

log = logging.getLogger("lov")


class CliError(Exception):
    pass


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def read_ground_truth(path) -> tuple[np.ndarray, np.ndarray]:
    """CSV with the seven feature columns and a ``label`` of benign/hijack."""
    X, y = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in (*FEATURES, "label") if c not in (reader.fieldnames or ())]
        if missing:
            raise CliError(f"{path}: missing columns {missing}")
        for i, row in enumerate(reader, start=2):
            try:
                X.append([float(row[c]) for c in FEATURES])
                y.append({"benign": 0, "hijack": 1}[row["label"].strip().lower()])
            except (ValueError, KeyError) as exc:
                raise CliError(f"{path}:{i}: bad row ({exc})") from None
    return np.array(X, dtype=float).reshape(-1, len(FEATURES)), np.array(y, dtype=np.int64)


def write_ground_truth(path, X, y) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*FEATURES, "label"])
        for row, label in zip(X, y):
            w.writerow([*(repr(float(v)) for v in row), "hijack" if label else "benign"])


def train_model(
    X,
    y,
    family: str = "RF",
    seed: int = 0,
    grid: bool = True,
    grid_trees: int = 10,
    n_trees: int = 100,
    folds: int = 10,
    params: dict | None = None,
) -> tuple[clf.TrainedModel, dict]:
    """Balance, split 8:2, grid-search on the training part, fit, evaluate.

    The returned model carries tightness weights from random-forest feature
    importance (an auxiliary forest is fitted for other families).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    counts = [int((y == c).sum()) for c in (0, 1)]
    if min(counts) == 0:
        raise CliError("ground truth needs both benign and hijack rows")
    X, y = clf.oversample(X, y, max(counts), seed)
    Xtr, ytr, Xte, yte = clf.split(X, y, 0.8, seed)
    summary: dict = {"family": family, "train_rows": int(len(ytr)), "test_rows": int(len(yte))}

    fixed = {"n_trees": grid_trees} if family == "RF" else {}
    if params:
        chosen = dict(params)
    elif grid and family != "NB":
        res = clf.grid_search(family, Xtr, ytr, seed=seed, k=folds, fixed=fixed)
        chosen = {k: v for k, v in res.spec.params.items() if k in res.scores[0][0]}
        summary["grid_points"] = len(res.scores)
        summary["grid_best_macro_f1"] = res.metrics.macro_f1
    else:
        chosen = {}
    if family == "RF":
        chosen["n_trees"] = n_trees
    spec = clf.ModelSpec(family, chosen, seed)
    summary["params"] = spec.params
    summary["cv"] = clf.cross_validate(spec, Xtr, ytr, k=folds, seed=seed).summary()
    model = clf.train(spec, Xtr, ytr)
    summary["holdout"] = clf.evaluate_holdout(model, Xte, yte).summary()

    if family == "RF":
        imp = clf.feature_importance(model)
    else:
        aux = clf.train(clf.ModelSpec("RF", {"n_trees": n_trees}, seed), Xtr, ytr)
        imp = clf.feature_importance(aux)
    model.tightness_weights = tuple(imp[f] for f in FEATURES)
    summary["importance"] = imp
    return model, summary


# -- subcommands -------------------------------------------------------------------


def cmd_train(args) -> int:
    if args.ground_truth:
        X, y = read_ground_truth(args.ground_truth)
    else:
        from lov.synth import make_ground_truth

        X, y = make_ground_truth(args.seed)
    params = json.loads(args.params) if args.params else None
    model, summary = train_model(
        X, y, args.family, args.seed, grid=not args.no_grid, grid_trees=args.grid_trees,
        n_trees=args.n_trees, folds=args.folds, params=params,
    )
    model.save(args.out)
    summary["model"] = str(args.out)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def cmd_replay(args) -> int:
    config = PipelineConfig.load(args.config)
    end = args.end or args.start
    if end < args.start:
        raise CliError("--end precedes --start")
    reports = replay(config, args.announcements, args.start, end)
    for r in reports:
        print(json.dumps({
            "date": r.date.isoformat(),
            "routes": r.routes,
            "invalid": r.invalid,
            "benign": r.benign,
            "hijack": r.hijack,
            "verified": r.verified,
            "whitelist_size": r.whitelist_size,
            "pending": r.pending,
        }, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    from lov.service import serve

    config = PipelineConfig.load(args.config)
    serve(config.published_path, args.host or config.host, args.port or config.port)
    return 0


def _key(origin: str, prefix: str) -> RouteKey:
    try:
        return RouteKey(parse_asn(origin), Prefix.parse(prefix))
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_review(args) -> int:
    config = PipelineConfig.load(args.config)
    store = load_store(config)
    date = args.date or store.generation or dt.date.today()
    if args.allow or args.deny:
        origin, prefix = args.allow or args.deny
        verdict = "allow" if args.allow else "deny"
        state = manual_decision(store, _key(origin, prefix), verdict, date, args.note)
        publish(store, config)
        print(json.dumps({"origin": origin, "prefix": prefix, "verdict": verdict,
                          "state": state.value}, sort_keys=True))
        return 0
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["origin", "prefix", "entered", "reason", "sightings", "tightness"])
    for e in store.pending():
        t = "" if e.tightness is None else f"{e.tightness:.4f}"
        w.writerow([e.key.origin, e.key.prefix, e.entered, e.reason.value, len(e.sightings), t])
    return 0


def cmd_report(args) -> int:
    config = PipelineConfig.load(args.config)
    seen = benign_occurrences(config.report_dir, args.until)
    if not seen:
        raise CliError(f"no benign routes in reports under {config.report_dir}")
    values = {
        "occurrences": [len(v) for v in seen.values()],
        "frequency": [frequency(v) for v in seen.values()],
    }[args.metric]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow([args.metric, "cdf"])
        for v, c in cdf(values):
            w.writerow([v, f"{c:.6f}"])
    finally:
        if args.out:
            out.close()
    for q in args.percentile:
        print(f"p{q:g} {args.metric}={percentile(values, q)}", file=sys.stderr)
    return 0


def cmd_corpus(args) -> int:
    from lov.corpus import build_corpus

    corpus = build_corpus(args.out, days=args.days, per_day=args.per_day, seed=args.seed,
                          start=args.start)
    print(json.dumps({k: len(v) for k, v in corpus.labels.items()}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lov", description="RPKI-invalid route whitelisting")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a classifier and write model + weights")
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--ground-truth", type=Path, help="CSV of features + label")
    t.add_argument("--family", choices=sorted(clf.ESTIMATORS), default="RF")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-grid", action="store_true", help="skip the grid search")
    t.add_argument("--grid-trees", type=int, default=10, help="RF trees per grid point")
    t.add_argument("--n-trees", type=int, default=100)
    t.add_argument("--folds", type=int, default=10)
    t.add_argument("--params", help="JSON hyper-parameters; skips the grid search")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("replay", help="run the daily pipeline over a date range")
    r.add_argument("--config", type=Path, required=True)
    r.add_argument("--announcements", type=Path, required=True, help="dir of DATE.jsonl")
    r.add_argument("--start", type=_date, required=True)
    r.add_argument("--end", type=_date)
    r.set_defaults(func=cmd_replay)

    s = sub.add_parser("serve", help="serve the published whitelist over HTTP")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.set_defaults(func=cmd_serve)

    v = sub.add_parser("review", help="list pending routes or apply allow/deny")
    v.add_argument("--config", type=Path, required=True)
    g = v.add_mutually_exclusive_group()
    g.add_argument("--allow", nargs=2, metavar=("ORIGIN", "PREFIX"))
    g.add_argument("--deny", nargs=2, metavar=("ORIGIN", "PREFIX"))
    v.add_argument("--note", default="")
    v.add_argument("--date", type=_date)
    v.set_defaults(func=cmd_review)

    o = sub.add_parser("report", help="CDF of benign-conflict occurrences or frequencies")
    o.add_argument("--config", type=Path, required=True)
    o.add_argument("--metric", choices=("occurrences", "frequency"), default="occurrences")
    o.add_argument("--percentile", type=float, action="append", default=[])
    o.add_argument("--until", type=_date)
    o.add_argument("--out", type=Path)
    o.set_defaults(func=cmd_report)

    c = sub.add_parser("corpus", help="generate the synthetic replay corpus")
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--days", type=int, default=14)
    c.add_argument("--per-day", type=int, default=100_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--start", type=_date, default=dt.date(2022, 10, 1))
    c.set_defaults(func=cmd_corpus)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CliError, PipelineError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
