"""Build the illustrative surrogate tensor set in configs/surrogate_model.json.

The surrogate is NOT a literature spin Hamiltonian. Its quadrupole principal
values are solved so the zero-field doublet gaps are 46.25/34.54 MHz (ground,
bottom to top) and 75.03/101.65 MHz (excited); its Zeeman principal values are
tuned so that at 230 mT along D2 the level structure shows

    g6 - g5 = 3.54 MHz, g5 - g3 = 34.1 MHz, e6 - e5 = 2.36 MHz,

the values needed for the pumping and trench examples. The Euler angles are
arbitrary generic choices so the branching matrix is not trivial.
"""
import json
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from euyso.spin import FieldVector, SpinModel, Tensor3, diagonalize, build_hamiltonian, zero_field_doublet_gaps

ROOT = Path(__file__).resolve().parents[1]

GROUND_Q_EULER = (30.0, 60.0, 20.0)
GROUND_M_EULER = (10.0, 40.0, -30.0)
EXCITED_Q_EULER = (-40.0, 75.0, 50.0)
EXCITED_M_EULER = (60.0, 20.0, 10.0)


def quadrupole_principal(d, e):
    return np.array([-d / 3 + e, -d / 3 - e, 2 * d / 3])


def solve_quadrupole(gaps, d0, e0):
    def res(p):
        q = Tensor3.from_principal(quadrupole_principal(*p), (0, 0, 0))
        lev = diagonalize(build_hamiltonian(q, Tensor3.zero(), FieldVector(0, 0, 0)))
        return np.array(zero_field_doublet_gaps(lev)) - gaps

    return least_squares(res, [d0, e0], xtol=1e-14, ftol=1e-14).x


def main():
    dg, eg = solve_quadrupole((46.25, 34.54), 10.0, 4.0)
    de, ee = solve_quadrupole((75.03, 101.65), -22.0, -10.0)
    qg = Tensor3.from_principal(quadrupole_principal(dg, eg), GROUND_Q_EULER)
    qe = Tensor3.from_principal(quadrupole_principal(de, ee), EXCITED_Q_EULER)
    field = FieldVector(0.0, 230.0, 0.0)
    nominal = np.array([-3.0, -4.0, -11.0, -2.0, -3.0, -6.0])

    def levels(p):
        mg = Tensor3.from_principal(p[:3], GROUND_M_EULER)
        me = Tensor3.from_principal(p[3:], EXCITED_M_EULER)
        g = diagonalize(build_hamiltonian(qg, mg, field)).energies
        e = diagonalize(build_hamiltonian(qe, me, field)).energies
        return g, e

    def res(p):
        g, e = levels(p)
        targets = [g[5] - g[4] - 3.54, g[4] - g[2] - 34.1, e[5] - e[4] - 2.36]
        return np.r_[np.array(targets) * 100, 0.01 * (p - nominal)]

    p = least_squares(res, nominal, xtol=1e-15, ftol=1e-15).x
    g, e = levels(p)
    print("ground D, E", dg, eg, " excited D, E", de, ee)
    print("M principal", p)
    print("g", g, "\ne", e)
    model = {
        "name": "illustrative surrogate (not a literature Hamiltonian)",
        "units": {"Q": "MHz", "M": "MHz_per_T", "B": "mT"},
        "ground": {
            "Q": {"principal": quadrupole_principal(dg, eg).round(6).tolist(), "euler_deg": list(GROUND_Q_EULER)},
            "M": {"principal": p[:3].round(6).tolist(), "euler_deg": list(GROUND_M_EULER)},
        },
        "excited": {
            "Q": {"principal": quadrupole_principal(de, ee).round(6).tolist(), "euler_deg": list(EXCITED_Q_EULER)},
            "M": {"principal": p[3:].round(6).tolist(), "euler_deg": list(EXCITED_M_EULER)},
        },
    }
    SpinModel.from_dict(model)
    out = ROOT / "configs" / "surrogate_model.json"
    out.write_text(json.dumps(model, indent=2) + "\n")
    print("wrote", out)


if __name__ == "__main__":
    main()
