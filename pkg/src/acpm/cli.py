"""Command line: ``acpm synth | run | bench | check``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .data import PRESET_NAMES, load_preset
from .harness import (ExperimentSpec, SpecError, cross_seed_summary, dumps, fmt, run_benchmarks,
                      run_experiment, run_seeds)


def parse_seeds(text: str) -> list:
    """``"3"`` -> [3]; ``"0..9"`` -> [0, ..., 9] (inclusive); ``"1,4,7"`` -> [1, 4, 7]."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            a, b = int(a), int(b)
            if b < a:
                raise ValueError
            return list(range(a, b + 1))
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; use N, a..b or a,b,c") from None


def _load_spec(args) -> ExperimentSpec:
    spec = ExperimentSpec.from_file(args.spec)
    if getattr(args, "preset", None):
        spec.dataset = {"preset": args.preset, **{k: v for k, v in spec.dataset.items() if k == "n_records"}}
    if getattr(args, "seed", None) is not None:
        spec = spec.with_seed(args.seed)
    return spec


def _out_dir(args, spec: ExperimentSpec) -> Path:
    if args.out:
        return Path(args.out)
    return Path(spec.output_dir or f"runs/{spec.name}")


def cmd_synth(args) -> int:
    preset = load_preset(args.preset)
    records = preset.generate(args.seed, args.n_records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [s.stream_id for s in preset.streams]
    with open(out / "dataset.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "target", *names])
        for r in records:
            w.writerow([r.record_id, fmt(r.true_value), *[fmt(v) for v in r.features]])
    streams = {s.stream_id: {"quality_tier": s.quality_tier, "noise_sigma": s.noise_sigma,
                             "corruption_rate": s.corruption_rate, "lag": s.lag} for s in preset.streams}
    meta = {"preset": preset.name, "seed": args.seed, "n_records": len(records), "streams": streams}
    (out / "streams.json").write_text(dumps(meta) + "\n", encoding="utf-8")
    print(f"wrote {len(records)} records x {len(names)} streams to {out / 'dataset.csv'}")
    return 0


def _print_summary(report) -> None:
    mae, se = report.system_mae()
    print(f"{report.name} seed {report.seed}: system MAE {mae:.6g} +/- {se:.3g}", end="")
    if report.agent_ids:
        print(f", best agent base MAE {report.agent_base_mae().min():.6g}", end="")
    if report.baseline_ids:
        print(f", best baseline MAE {report.baseline_mae().min():.6g}", end="")
    print()


def cmd_run(args) -> int:
    spec = _load_spec(args)
    out = _out_dir(args, spec)
    if args.seeds:
        reports = run_seeds(spec, args.seeds, workers=args.workers)
        for r in reports:
            r.write(out / f"seed_{r.seed}")
            _print_summary(r)
        out.mkdir(parents=True, exist_ok=True)
        (out / "cross_seed_summary.json").write_text(dumps(cross_seed_summary(reports)) + "\n", encoding="utf-8")
    else:
        report = run_experiment(spec)
        report.write(out)
        _print_summary(report)
    print(f"reports in {out}")
    return 0


def cmd_bench(args) -> int:
    spec = _load_spec(args)
    if not spec.baselines:
        raise SpecError(["baselines: roster is empty; nothing to benchmark"])
    report = run_benchmarks(spec)
    out = _out_dir(args, spec)
    report.write(out)
    for b, m in zip(report.baseline_ids, report.baseline_mae()):
        print(f"{b}: MAE {m:.6g}")
    print(f"reports in {out}")
    return 0


def cmd_check(args) -> int:
    import pytest

    target = Path(args.tests)
    if not target.exists():
        print(f"acceptance tests not found at {target}", file=sys.stderr)
        return 2
    return int(pytest.main([str(target), "-s", "-q", *args.pytest_args]))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acpm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a dataset from a preset")
    s.add_argument("--preset", required=True, help=f"one of {', '.join(PRESET_NAMES)} or a preset JSON file")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--n-records", type=int, default=None)
    s.set_defaults(func=cmd_synth)

    for name, func, help_ in (("run", cmd_run, "execute an experiment spec"),
                              ("bench", cmd_bench, "run the standalone baselines only")):
        r = sub.add_parser(name, help=help_)
        r.add_argument("--spec", required=True)
        r.add_argument("--seed", type=int, default=None, help="override the spec seed")
        r.add_argument("--out", default=None)
        r.add_argument("--preset", choices=PRESET_NAMES, default=None, help="override the dataset")
        r.set_defaults(func=func)
        if name == "run":
            r.add_argument("--seeds", type=parse_seeds, default=None, help="replicates, e.g. 0..9")
            r.add_argument("--workers", type=int, default=1)

    c = sub.add_parser("check", help="run the acceptance suite")
    c.add_argument("--tests", default="tests/test_acceptance.py")
    c.add_argument("pytest_args", nargs="*")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SpecError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
