"""Exact second-order bias curves delta(np) for the ideal penalty and the
standard weight schemes; writes a CSV and prints the sign pattern against
the ideal curve.

    python3 scripts/delta_curves.py --n 200 --out curves.csv
"""

import argparse
from pathlib import Path

from rpselect.diagnostics import ordering_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--out", type=Path, default=Path("delta_curves.csv"))
    args = ap.parse_args()

    curve = ordering_report(args.n)
    curve.to_csv(args.out)
    print(f"wrote {args.out} ({len(curve.np_grid)} rows)")
    for name, s in curve.sign_pattern().items():
        print(f"{name:5s} above ideal {int((s > 0).sum()):4d}   below {int((s < 0).sum()):4d}   "
              f"equal {int((s == 0).sum()):4d}")
    try:
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots()
    ax.plot(curve.np_grid, curve.delta_ideal, "k", lw=2, label="ideal")
    for name, v in curve.delta_penw.items():
        ax.plot(curve.np_grid, v, label=name)
    ax.set_xscale("log")
    ax.set_xlabel("np")
    ax.set_ylabel("delta")
    ax.legend()
    fig.savefig(args.out.with_suffix(".png"), dpi=120)


if __name__ == "__main__":
    main()
