"""Trench flatness against pump sweep width (class cleaning + spin polarisation).

Prints the largest in-trench OD jump for each width and writes an optional CSV.
"""
import argparse
import csv

import numpy as np

from euyso.pumping import UNIFORM_GAMMA, DetuningGrid, trench_bandwidth_scan
from euyso.spin import FieldVector, load_model, solve

CC = [(1, 3), (2, 3), (3, 6), (4, 3), (5, 6), (6, 5)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/surrogate_model.json")
    ap.add_argument("--field", default="0,230,0")
    ap.add_argument("--widths", default="0,1,1.5,2,2.2,2.3,2.4,2.5,2.8,3.0,3.4")
    ap.add_argument("--gamma", choices=("uniform", "model"), default="uniform")
    ap.add_argument("--step", type=float, default=0.01)
    ap.add_argument("--out")
    args = ap.parse_args()

    lev = solve(load_model(args.config), FieldVector.parse(args.field))
    gamma = UNIFORM_GAMMA if args.gamma == "uniform" else lev.branching()
    grid = DetuningGrid.symmetric(340.0, args.step)
    widths = [float(w) for w in args.widths.split(",")]
    scans = trench_bandwidth_scan(widths, CC, (5, 6), lev, gamma, grid)
    rows = []
    for s in scans:
        centre = float(s.od[np.argmin(np.abs(s.freqs))]) if s.od.size else float("nan")
        rows.append((s.width, s.max_jump, s.step_detected, centre))
        print(f"width {s.width:4.1f} MHz  max jump {s.max_jump:.4f}  step {'yes' if s.step_detected else 'no ':3}  centre OD {centre:.4f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["width_MHz", "max_jump", "step_detected", "centre_od"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
