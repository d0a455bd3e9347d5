#!/usr/bin/env python3
"""Plot the standard panels from an fvo trace CSV.

Produces, per response unit: the center-of-inertia frequency, the delivered
quantities, the cost against the oracle cost, and the aggregate mismatch.

Usage: plot_trace.py TRACE.CSV [--out DIR] [--decimate N]
"""

import argparse
import csv
import os
import re
import sys

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    sys.exit("matplotlib is required: pip install matplotlib")


def read_trace(path):
    labels = {}
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("# fvo trace v1:"):
            for part in first.split(":", 1)[1].split(","):
                key, _, value = part.strip().partition("=")
                labels[key] = value
            header = fh.readline().strip().split(",")
        else:
            header = first.strip().split(",")
        rows = list(csv.reader(fh))
    cols = {name: idx for idx, name in enumerate(header)}
    return labels, cols, rows


def series(rows, idx, decimate):
    out = []
    for k, row in enumerate(rows):
        if k % decimate:
            continue
        field = row[idx]
        out.append(float(field) if field else float("nan"))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("trace")
    ap.add_argument("--out", default=".")
    ap.add_argument("--decimate", type=int, default=1)
    args = ap.parse_args()

    labels, cols, rows = read_trace(args.trace)
    os.makedirs(args.out, exist_ok=True)
    t = series(rows, cols["t_s"], args.decimate)
    units = sorted({m.group(1) for c in cols for m in [re.match(r"(a\d+)_required_mw", c)] if m})

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t, series(rows, cols["dw0_hz"], args.decimate), lw=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("frequency deviation [Hz]")
    ax.axhline(0.015, color="k", ls=":", lw=0.6)
    ax.axhline(-0.015, color="k", ls=":", lw=0.6)
    fig.tight_layout()
    fig.savefig(os.path.join(args.out, "frequency.png"), dpi=150)
    plt.close(fig)

    for unit in units:
        name = labels.get(unit, unit)
        assets = sorted(
            int(m.group(1)) for c in cols for m in [re.match(rf"{unit}_x(\d+)$", c)] if m
        )
        fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
        for i in assets:
            axes[0].plot(t, series(rows, cols[f"{unit}_x{i}"], args.decimate), lw=0.7)
        axes[0].plot(
            t, series(rows, cols[f"{unit}_required_mw"], args.decimate),
            "k--", lw=0.9, label="required",
        )
        axes[0].set_ylabel("delivered [MW]")
        axes[0].legend(loc="best", fontsize=8)

        axes[1].plot(t, series(rows, cols[f"{unit}_cost"], args.decimate), lw=0.8, label="cost")
        axes[1].plot(
            t, series(rows, cols[f"{unit}_oracle_cost"], args.decimate),
            "k.", ms=2, label="oracle cost",
        )
        axes[1].set_ylabel("cost")
        axes[1].legend(loc="best", fontsize=8)

        axes[2].plot(t, series(rows, cols[f"{unit}_mismatch_mw"], args.decimate), lw=0.7)
        axes[2].set_ylabel("mismatch [MW]")
        axes[2].set_xlabel("t [s]")
        fig.suptitle(name, fontsize=10)
        fig.tight_layout()
        safe = re.sub(r"[^\w.-]", "_", name)
        fig.savefig(os.path.join(args.out, f"{unit}_{safe}.png"), dpi=150)
        plt.close(fig)

    print(f"wrote plots to {args.out}")


if __name__ == "__main__":
    main()
