#!/usr/bin/env python3
"""Plot RMSE curves from experiment CSV files (requires matplotlib)."""

import argparse
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load(path):
    series = defaultdict(lambda: ([], [], []))
    param = None
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            param = row["sweep_param"]
            x, loc, syn = series[row["method"]]
            x.append(float(row["sweep_value"]))
            loc.append(float(row["rmse_loc_m"]))
            syn.append(float(row["rmse_syn_s"]))
    return param, series


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", nargs="+")
    ap.add_argument("--out-dir", default=".")
    args = ap.parse_args()
    for path in args.csv:
        param, series = load(path)
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        for method, (x, loc, syn) in series.items():
            axes[0].semilogy(x, loc, marker="o", label=method)
            axes[1].semilogy(x, syn, marker="o", label=method)
        label = f"10 log10({param})" if param.startswith("sigma") else param
        axes[0].set(xlabel=label, ylabel="localization RMSE (m)")
        axes[1].set(xlabel=label, ylabel="synchronization RMSE (s)")
        axes[0].legend()
        for a in axes:
            a.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        out = Path(args.out_dir) / (Path(path).stem + ".png")
        fig.savefig(out, dpi=120)
        print(out)


if __name__ == "__main__":
    main()
