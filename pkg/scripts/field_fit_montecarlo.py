"""Monte-Carlo check of field-fit error bars for RHS and SHB data.

Reports how often the generating field lies inside the reported 2-sigma
box and how the empirical scatter compares with the mean reported error.
"""
import argparse

import numpy as np

from euyso.fieldfit import fit_field_rhs, fit_field_shb, synthetic_rhs, synthetic_shb
from euyso.spin import FieldVector, load_model

SHB_SET = [
    ("hole", (0, 5, 0, 6)),
    ("hole", (0, 3, 0, 6)),
    ("hole", (0, 1, 0, 4)),
    ("antihole", (5, 6, 3, 6)),
    ("antihole", (5, 6, 6, 5)),
    ("antihole", (5, 6, 4, 3)),
    ("antihole", (5, 6, 1, 3)),
    ("antihole", (5, 6, 2, 2)),
]


def run(kind, model, B, B0, noise, trials):
    fits = []
    for s in range(trials):
        if kind == "rhs":
            r = fit_field_rhs(model, synthetic_rhs(model, B, ("1", "2"), noise, s), B0)
        else:
            r = fit_field_shb(model, synthetic_shb(model, B, SHB_SET, noise, s), B0)
        fits.append((r.B.as_array(), r.stderr))
    est = np.array([f[0] for f in fits])
    err = np.array([f[1] for f in fits])
    inside = np.all(np.abs(est - B.as_array()) <= 2 * err, axis=1).mean()
    print(f"{kind}: noise {noise * 1e3:.1f} kHz, {trials} trials")
    print(f"    scatter   {np.round(est.std(0, ddof=1), 4)} mT")
    print(f"    reported  {np.round(err.mean(0), 4)} mT")
    print(f"    all three components within 2 sigma: {inside:.0%}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/surrogate_model.json")
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--noise", type=float, default=0.005, help="MHz")
    args = ap.parse_args()
    model = load_model(args.config)
    B, B0 = FieldVector(-22.4, 248.9, 0.6), FieldVector(-20.0, 245.0, 1.5)
    run("rhs", model, B, B0, args.noise, args.trials)
    run("shb", model, B, B0, args.noise, args.trials)


if __name__ == "__main__":
    main()
