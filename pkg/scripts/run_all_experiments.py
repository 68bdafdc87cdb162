"""Run the four benchmark experiments with every standard procedure and
print C_or +/- SE per procedure, one column per experiment.

    python3 scripts/run_all_experiments.py --replications 200 --threads 4 --out runs/
"""

import argparse
import time
from pathlib import Path

from rpselect.simbench import PRESETS, STANDARD_PROCEDURES, preset, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--experiments", default=",".join(PRESETS))
    ap.add_argument("--replications", type=int, default=None, help="default: the preset value")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", type=Path, default=None, help="directory for per-experiment CSV files")
    args = ap.parse_args()

    over = {}
    if args.replications is not None:
        over["replications"] = args.replications
    if args.seed is not None:
        over["base_seed"] = args.seed
    names = [e.strip() for e in args.experiments.split(",") if e.strip()]
    results = {}
    for name in names:
        t0 = time.perf_counter()
        results[name] = run_benchmark(preset(name, procedures=list(STANDARD_PROCEDURES), **over), threads=args.threads)
        print(f"# {name}: {time.perf_counter() - t0:.1f} s", flush=True)
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            results[name].to_csv(args.out / f"{name}.csv")

    print(f"{'procedure':10s}" + "".join(f"{n:>18s}" for n in names))
    for tok in STANDARD_PROCEDURES:
        cells = [f"{results[n][tok].c_or:9.3f} +/- {results[n][tok].c_or_se:.3f}" for n in names]
        print(f"{tok:10s}" + "".join(f"{c:>18s}" for c in cells))


if __name__ == "__main__":
    main()
