"""Command-line front end.

    python3 -m rpselect bench --experiment s1 --replications 100 --out results/
    python3 -m rpselect diagnostics --n 200 --out curves.csv
    python3 -m rpselect einv [--law binom --n 100 --p 0.5]

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from pathlib import Path

from . import __version__
from .diagnostics import curve_schemes, ordering_report
from .simbench import ExperimentConfig, preset, run_benchmark
from .weights import Binomial, Hypergeometric, PoissonLaw, einv, query_checks, verify_einv_bounds

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(path: Path, command: str, payload: dict, started: str, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "artifact_version": __version__,
        **payload,
        "started": started,
        "finished": _now(),
        "outputs": outputs,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- bench --------------------------------------------------------------------

def _bench_config(args) -> ExperimentConfig:
    if args.config is None and args.experiment is None:
        raise UsageError("give --experiment or --config")
    overrides = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"{args.config}: invalid JSON ({e})")
        if not isinstance(data, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        overrides.update(data)
    if args.replications is not None:
        overrides["replications"] = args.replications
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.procedures is not None:
        overrides["procedures"] = [p for p in args.procedures.split(",") if p]
    if args.unpaired:
        overrides["paired"] = False
    try:
        if args.experiment is not None:
            return preset(args.experiment, **overrides)
        if "name" in overrides and "n" not in overrides:
            name = overrides.pop("name")
            return preset(name, **overrides)
        overrides.setdefault("name", "custom")
        return ExperimentConfig.from_dict(overrides)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e))


def cmd_bench(args) -> int:
    started = _now()
    config = _bench_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_benchmark(config, threads=args.threads)
    csv_path = out / "results.csv"
    result.to_csv(csv_path)
    _write_manifest(out / "manifest.json", "bench", {"config": config.to_dict(), "base_seed": config.base_seed,
                                                     "threads": args.threads},
                    started, [str(csv_path)])
    for s in result.summaries:
        print(f"{s.procedure:10s} C_or={s.c_or:.3f} +/- {s.c_or_se:.3f}  C_path-or={s.c_path_or:.3f}  "
              f"mean_dim={s.mean_dim:.2f}")
    return EXIT_OK


# -- diagnostics --------------------------------------------------------------

def cmd_diagnostics(args) -> int:
    started = _now()
    available = curve_schemes()
    names = list(available) if args.schemes is None else [s.strip() for s in args.schemes.split(",") if s.strip()]
    unknown = [s for s in names if s not in available]
    if unknown or not names:
        raise UsageError(f"unknown scheme(s) {unknown}; choose from {','.join(available)}")
    if args.n < 3:
        raise UsageError("--n must be at least 3")
    curve = ordering_report(args.n, schemes={s: available[s] for s in names})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "diagnostics",
                    {"n": args.n, "schemes": names}, started, [str(out)])
    signs = curve.sign_pattern()
    for name, sg in signs.items():
        print(f"{name:5s} above ideal at {int((sg > 0).sum())} of {sg.size} grid points, below at {int((sg < 0).sum())}")
    return EXIT_OK


# -- einv ---------------------------------------------------------------------

def _single_law(args):
    if args.law == "binom":
        if args.n is None or args.p is None:
            raise UsageError("--law binom needs --n and --p")
        law = Binomial(args.n, args.p)
    elif args.law == "hyper":
        if args.n is None or args.r is None or args.q is None:
            raise UsageError("--law hyper needs --n, --r and --q")
        law = Hypergeometric(args.n, args.r, args.q)
    else:
        if args.mu is None:
            raise UsageError("--law poisson needs --mu")
        law = PoissonLaw(args.mu)
    return law


def cmd_einv(args) -> int:
    if args.law is not None:
        law = _single_law(args)
        try:
            value = einv(law)
        except ValueError as e:
            raise UsageError(str(e))
        print(f"{law}: e_inv = {value!r}")
        checks = query_checks(law, value)
        for c in checks:
            print(f"  {'PASS' if c.passed else 'FAIL'}  {c.bound}: [{c.lower!r}, {c.upper!r}]")
        return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY
    report = verify_einv_bounds()
    print(f"{'bound':32s} {'checked':>9s} {'failed':>7s}  worst margin")
    for fam in report.families.values():
        print(f"{fam.name:32s} {fam.checked:9d} {fam.failed:7d}  {fam.worst_margin:.3e}")
    for f in report.failures[:20]:
        print(f"FAIL {f.bound}: {f.law} value={f.value!r} not in [{f.lower!r}, {f.upper!r}]")
    print("all bounds hold" if report.all_passed else f"{len(report.failures)} violations")
    return EXIT_OK if report.all_passed else EXIT_VERIFY


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpselect", description="Resampling penalties for histogram selection.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run a simulation benchmark")
    b.add_argument("--experiment", type=str.lower, choices=["s1", "s2", "hsd1", "hsd2"])
    b.add_argument("--config", help="JSON file with ExperimentConfig fields")
    b.add_argument("--replications", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--procedures", help="comma list, e.g. penloo,penrad+,mallows,vfcv5,eideal")
    b.add_argument("--out", default="bench_out")
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--unpaired", action="store_true", help="fresh dataset per procedure")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("diagnostics", help="write second-order bias curves")
    d.add_argument("--n", type=int, default=200)
    d.add_argument("--schemes", help="comma list among efr,rad,poi,rho2,rho4,loo")
    d.add_argument("--out", default="delta_curves.csv")
    d.set_defaults(func=cmd_diagnostics)

    e = sub.add_parser("einv", help="verify the e_inv brackets")
    e.add_argument("--law", choices=["binom", "hyper", "poisson"])
    e.add_argument("--n", type=int)
    e.add_argument("--p", type=float)
    e.add_argument("--r", type=int)
    e.add_argument("--q", type=int)
    e.add_argument("--mu", type=float)
    e.set_defaults(func=cmd_einv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
