#!/usr/bin/env python3
"""Plot sweep_summary.csv from `come sweep` as a static PNG."""
import argparse
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("summary", help="sweep_summary.csv")
    ap.add_argument("-o", "--output", default="sweep.png")
    args = ap.parse_args()

    df = pd.read_csv(args.summary)
    if df.empty:
        sys.exit(f"{args.summary}: no sweep points to plot")
    axis = df["point"].str.split("=", n=1, expand=True)
    name = axis[0].iloc[0]
    df["x"] = axis[1].astype(float)
    df = df.sort_values("x")

    fig, ax = plt.subplots(figsize=(6, 4))
    for col in ["efficacy", "generality", "locality", "score"]:
        ax.plot(df["x"], df[col], marker="o", label=col)
    if name == "n_edits":
        ax.set_xscale("log", base=2)
    ax.set_xlabel(name)
    ax.set_ylabel("fraction")
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
