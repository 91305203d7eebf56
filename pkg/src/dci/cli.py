"""Command-line entry point: ``dci classify | evaluate | analyze | simulate``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import analysis
from .backends import DilutionOracle, HttpBackend
from .config import ConfigError, load_config
from .engine import ClassificationAborted, EngineConfig, dci_classify, flat_classify
from .harness import ExperimentSpec, emit_report, load_labels, run_experiment


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from exc


def _cmd_classify(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    labels = load_labels(args.labels)
    if len(labels) == 0:
        print("label file is empty", file=sys.stderr)
        return 2
    backend_kind = args.backend or cfg.backend.kind
    if backend_kind == "oracle":
        if not args.true_label:
            print("--true-label is required with the oracle backend", file=sys.stderr)
            return 2
        backend = DilutionOracle(cfg.oracle_params(args.true_label))
    else:
        backend = HttpBackend(cfg.http_config())

    k = args.k or cfg.engine.k
    ecfg = EngineConfig(
        k=k,
        grouping=cfg.grouping_strategy(),
        parallelism=args.parallelism or cfg.engine.parallelism,
        parse_policy=cfg.parse_policy(),
        max_depth_override=cfg.engine.max_depth,
        template=cfg.template(),
    )
    try:
        if args.flat:
            trace = flat_classify(args.image, labels, backend, ecfg.parse_policy, ecfg.template)
        else:
            trace = dci_classify(args.image, labels, ecfg, backend)
    except ClassificationAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        if args.trace_out:
            Path(args.trace_out).write_text(exc.trace.to_json(), encoding="utf-8")
        return 1
    finally:
        if isinstance(backend, HttpBackend):
            backend.close()

    if args.trace_out:
        Path(args.trace_out).write_text(trace.to_json(), encoding="utf-8")
    print(json.dumps({
        "prediction": trace.prediction,
        "method": trace.method,
        "k": trace.k,
        "iterations": trace.depth,
        "total_calls": trace.total_calls,
        "total_sim_s": trace.total_sim_s,
        "total_wall_s": round(trace.total_wall_s, 6),
    }, indent=2))
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    spec = ExperimentSpec.from_file(args.spec)
    if args.trials:
        spec.trials = args.trials
    report = run_experiment(spec)
    if args.out:
        fmt = args.format or ("json" if args.out.endswith(".json") else "csv")
        emit_report(report, fmt, args.out)
    writer = csv.writer(sys.stdout)
    writer.writerow(["n", "k", "method", "grouping", "accuracy", "mean_calls",
                     "mean_sim_latency_s"])
    for r in report.rows:
        writer.writerow([r.n, r.k, r.method, r.grouping, f"{r.accuracy:.4f}",
                         f"{r.mean_calls:.2f}", f"{r.mean_sim_latency_s:.4f}"])
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    c0 = cfg.cost_model.c0 if args.c0 is None else args.c0
    c2 = cfg.cost_model.c2 if args.c2 is None else args.c2
    report = analysis.cost_grid(args.n_list, args.k_list, c0, c2, args.formula)
    if args.format == "json":
        text = json.dumps(report.to_dict(), indent=2)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            print(text)
        return 0
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(["n", "k", "cost", "flat_cost", "in_region"])
        for row in report.rows:
            writer.writerow([row.n, row.k, f"{row.cost:.6g}", f"{row.flat_cost:.6g}",
                             int(row.in_region)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    if not args.dilution:
        print("only --dilution simulation is available", file=sys.stderr)
        return 2
    writer = csv.writer(sys.stdout)
    writer.writerow(["k", "trials", "mean_weight", "variance", "inverse_k", "mean_times_k"])
    for k in args.k_list:
        stats = analysis.dilution_monte_carlo(k, args.trials, args.seed)
        writer.writerow([k, stats.trials, f"{stats.mean:.6g}", f"{stats.variance:.6g}",
                         f"{1 / k:.6g}", f"{stats.mean_times_k:.6f}"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dci", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify one image")
    p.add_argument("--image", required=True, help="image path or URL")
    p.add_argument("--labels", required=True, help="newline-separated label file")
    p.add_argument("--k", type=int, help="group size (default from config)")
    p.add_argument("--backend", choices=["oracle", "http"])
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--true-label", help="ground truth for the oracle backend")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--flat", action="store_true", help="single flat query instead of DCI")
    p.add_argument("--trace-out", help="write the full run trace as JSON")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("evaluate", help="run an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--trials", type=int, help="override the experiment file's trial count")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("analyze", help="cost-model grid")
    p.add_argument("--n-list", type=_int_list, required=True)
    p.add_argument("--k-list", type=_int_list, required=True)
    p.add_argument("--c0", type=float)
    p.add_argument("--c2", type=float)
    p.add_argument("--formula", choices=sorted(analysis.COST_FORMULAS), default="closed_form")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("simulate", help="attention dilution Monte Carlo")
    p.add_argument("--dilution", action="store_true")
    p.add_argument("--k-list", type=_int_list, required=True)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
