"""Command-line surface: simulate datasets, fit the model, run replicate
studies and re-summarize stored fits."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .io import (
    load_config,
    load_dataset,
    parse_config,
    read_chain_trace,
    read_json,
    write_chain_trace,
    write_dataset,
    write_json,
    write_truth,
)
from .sampler import McmcConfig
from .simulate import simulate_dataset
from .study import build_summary, fit_manifest, run_fit, run_replicate_study


def _apply_overrides(config: McmcConfig, args) -> McmcConfig:
    fields = {}
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.chains is not None:
        fields["chains"] = args.chains
    if args.variant is not None:
        fields["variant"] = args.variant
    if args.baseline is not None:
        fields["baseline_variant"] = args.baseline
    return replace(config, **fields) if fields else config


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, truth = simulate_dataset(args.n, args.j, args.baseline or "piecewise",
                                      seed=args.seed or 0)
    write_dataset(dataset, out / "events.csv")
    write_truth(truth, out / "truth.json")
    print(f"wrote {len(dataset)} records in {dataset.num_clusters} clusters to {out}")
    return 0


def cmd_fit(args) -> int:
    dataset = load_dataset(args.data)
    if args.config:
        config, hyper, scales = load_config(args.config)
    else:
        config, hyper, scales = parse_config({})
    config = _apply_overrides(config, args)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = run_fit(dataset, config, hyper, scales=scales, threads=args.threads)
    for trace in traces:
        write_chain_trace(trace, out / f"chain{trace.chain_index:02d}")
    manifest = fit_manifest(traces, config, hyper)
    write_json(manifest, out / "manifest.json")
    summary = build_summary(traces, manifest)
    write_json(summary, out / "summary.json")
    lpml = summary["lpml"]
    print(f"fit {config.variant} ({config.chains} chain(s), {config.iterations} iterations); "
          f"lpml={'n/a' if lpml is None else format(lpml, '.4f')}; wrote {out}/summary.json")
    return 0


def cmd_replicate_study(args) -> int:
    study = read_json(args.config)
    report, timing = run_replicate_study(study, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(report, out / "report.json")
    # wall-clock accounting lives outside the deterministic report
    write_json(timing, out / "timing.json")
    n_fail = len(report["failures"])
    print(f"replicate study complete: {timing['tasks']} fits in "
          f"{timing['total_seconds']:.1f}s, {n_fail} failure(s); wrote {out}/report.json")
    return 0


def cmd_summarize(args) -> int:
    fit_dir = Path(args.fit_dir)
    manifest = read_json(fit_dir / "manifest.json")
    traces = [read_chain_trace(fit_dir / f"chain{k:02d}") for k in range(manifest["chains"])]
    summary = build_summary(traces, manifest)
    write_json(summary, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recurjoint",
        description="Joint modeling of clustered zero-inflated recurrent and terminal events")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--n", type=int, default=600, help="number of participants")
    p_sim.add_argument("--j", type=int, default=20, help="number of clusters")
    p_sim.add_argument("--baseline", choices=("piecewise", "powerlaw"), default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="run MCMC on an events file")
    p_fit.add_argument("--data", required=True, help="events CSV")
    p_fit.add_argument("--config", default=None, help="JSON config (model/hyper/mcmc)")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.add_argument("--chains", type=int, default=None)
    p_fit.add_argument("--variant", choices=("BMZ-DP", "BM-DP", "BZ-DP", "BMZ"), default=None)
    p_fit.add_argument("--baseline", choices=("piecewise", "powerlaw"), default=None)
    p_fit.add_argument("--threads", type=int, default=1)
    p_fit.set_defaults(func=cmd_fit)

    p_study = sub.add_parser("replicate-study", help="simulate/fit/score many replicates")
    p_study.add_argument("--config", required=True, help="JSON study config")
    p_study.add_argument("--out", required=True, help="output directory")
    p_study.add_argument("--threads", type=int, default=1)
    p_study.set_defaults(func=cmd_replicate_study)

    p_sum = sub.add_parser("summarize", help="rebuild the summary from stored traces")
    p_sum.add_argument("--fit-dir", required=True, help="directory written by fit")
    p_sum.add_argument("--out", required=True, help="summary JSON path")
    p_sum.set_defaults(func=cmd_summarize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
