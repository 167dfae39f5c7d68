"""Magnetic-field estimation from RHS spin lines or SHB hole/anti-hole offsets.

Both fits share one damped Gauss-Newton loop with a central-difference
Jacobian in field space (mT). Line positions come from the spin model.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lines import RHS_LABELS, RHS_PAIRS, catalog_from_levels
from .spin import FieldVector, SpinModel, solve, spherical

__all__ = [
    "FitError",
    "ConvergenceError",
    "RankError",
    "RhsLine",
    "RhsMeasurement",
    "ShbLine",
    "ShbMeasurement",
    "FieldFitResult",
    "fit_field_rhs",
    "fit_field_shb",
    "spherical",
    "spherical_errors",
    "synthetic_rhs",
    "synthetic_shb",
]

JAC_STEP = 0.01  # mT
MAX_ITER = 200
XTOL = 1e-6  # mT
AMBIGUITY_TOL = 0.020  # MHz
RANK_COND = 1e12


class FitError(RuntimeError):
    pass


class ConvergenceError(FitError):
    pass


class RankError(FitError):
    def __init__(self, msg: str, condition: float):
        super().__init__(msg)
        self.condition = condition


SUBSITE_TAGS = ("merged", "1", "2")


@dataclass(frozen=True)
class RhsLine:
    label: str
    freq: float  # MHz
    weight: float = 1.0
    subsite: str = "merged"

    def __post_init__(self):
        if self.label not in RHS_PAIRS:
            raise ValueError(f"unknown RHS label {self.label!r}; expected one of {RHS_LABELS}")
        if str(self.subsite) not in SUBSITE_TAGS:
            raise ValueError(f"subsite tag must be merged, 1 or 2, got {self.subsite!r}")
        object.__setattr__(self, "subsite", str(self.subsite))
        if self.weight < 0:
            raise ValueError("weights must be non-negative")


@dataclass
class RhsMeasurement:
    lines: list[RhsLine]

    @classmethod
    def merged(cls, freqs: Sequence[float], labels: Sequence[str] = RHS_LABELS) -> "RhsMeasurement":
        return cls([RhsLine(lab, float(f)) for lab, f in zip(labels, freqs)])

    @property
    def has_merged(self) -> bool:
        return any(ln.subsite == "merged" for ln in self.lines)


@dataclass(frozen=True)
class ShbLine:
    kind: str  # "hole" | "antihole"
    offset: float  # MHz from the burn frequency
    assignment: tuple[int, int, int, int] | None = None
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("hole", "antihole"):
            raise ValueError(f"kind must be hole or antihole, got {self.kind!r}")
        if self.assignment is not None:
            a = tuple(int(v) for v in self.assignment)
            # a hole offset does not depend on the ground level, which may be given as 0
            lo = 0 if self.kind == "hole" else 1
            if len(a) != 4 or not all(lo <= v <= 6 for v in a) or not all(1 <= v <= 6 for v in a[1::2]):
                raise ValueError(f"assignment must be four levels in 1..6, got {self.assignment}")
            object.__setattr__(self, "assignment", a)
        if self.weight < 0:
            raise ValueError("weights must be non-negative")


@dataclass
class ShbMeasurement:
    lines: list[ShbLine]


@dataclass
class FieldFitResult:
    B: FieldVector
    covariance: np.ndarray  # mT^2
    stderr: np.ndarray  # mT
    magnitude: float
    phi: float
    theta: float
    spherical_stderr: tuple[float, float, float]
    rms_khz: float
    residuals: np.ndarray  # model - measured, MHz
    iterations: int
    condition: float
    plane: bool
    weights: np.ndarray = field(repr=False)
    assignments: list = field(default_factory=list, repr=False)
    ambiguous: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "B_mT": list(self.B.as_array()),
            "stderr_mT": self.stderr.tolist(),
            "covariance_mT2": self.covariance.tolist(),
            "spherical": {
                "magnitude_mT": self.magnitude,
                "phi_deg": self.phi,
                "theta_deg": self.theta,
                "stderr": list(self.spherical_stderr),
            },
            "rms_kHz": self.rms_khz,
            "residuals_MHz": self.residuals.tolist(),
            "weights": self.weights.tolist(),
            "iterations": self.iterations,
            "jacobian_condition": self.condition,
            "plane_constrained": self.plane,
        }
        if self.assignments:
            d["assignments"] = [list(a) if a is not None else None for a in self.assignments]
            d["ambiguous"] = list(self.ambiguous)
        return d


def spherical_errors(B: np.ndarray, cov: np.ndarray) -> tuple[float, float, float]:
    """Linearised 1-sigma errors on (|B|, phi deg, theta deg)."""
    x, y, z = B
    r = np.linalg.norm(B)
    rho2 = x * x + y * y
    if r == 0:
        return (float("nan"),) * 3
    rows = [np.array([x, y, z]) / r]
    if rho2 > 0:
        rho = np.sqrt(rho2)
        rows.append(np.degrees(np.array([-y, x, 0.0]) / rho2))
        rows.append(np.degrees(np.array([x * z / (r * r * rho), y * z / (r * r * rho), -rho / (r * r)])))
    else:
        rows += [np.full(3, np.nan), np.full(3, np.nan)]
    G = np.array(rows)
    var = np.einsum("ij,jk,ik->i", G, cov, G)
    return tuple(float(np.sqrt(max(v, 0.0))) for v in var)


def _to_field(p: np.ndarray, plane: bool) -> FieldVector:
    return FieldVector(p[0], p[1], 0.0) if plane else FieldVector(*p)


def _jacobian(fun: Callable[[np.ndarray], np.ndarray], p: np.ndarray, h: float) -> np.ndarray:
    cols = []
    for k in range(p.size):
        dp = np.zeros_like(p)
        dp[k] = h
        cols.append((fun(p + dp) - fun(p - dp)) / (2 * h))
    return np.column_stack(cols)


def _levenberg_marquardt(model, meas, p0, weights_fn, reassign=None, *, h=JAC_STEP, max_iter=MAX_ITER, xtol=XTOL):
    """Minimise sum w*(model(p) - meas)^2.

    ``reassign(p)`` is called at the start of every iteration and may
    change the model and weights (SHB auto-assignment). Returns
    (p, J, residuals, weights, iterations).
    """
    p = np.asarray(p0, dtype=float).copy()
    ref = p.copy()
    lam = 1e-3
    for it in range(1, max_iter + 1):
        changed = reassign(p) if reassign is not None else False
        w = weights_fn()
        sw = np.sqrt(w)
        r = sw * (model(p) - meas)
        cost = r @ r
        J = sw[:, None] * _jacobian(model, p, h)
        A = J.T @ J
        g = J.T @ r
        while True:
            D = np.diag(np.maximum(np.diag(A), 1e-12))
            try:
                step = -np.linalg.solve(A + lam * D, g)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(A + lam * D, g, rcond=None)[0]
            trial = p + step
            # B -> -B leaves the spectrum unchanged; stay in the starting half-space
            if trial @ ref < 0:
                trial = -trial
            r_new = sw * (model(trial) - meas)
            if r_new @ r_new <= cost or np.linalg.norm(step) < xtol:
                break
            lam *= 4.0
            if lam > 1e12:
                # no descent direction left: treat as stationary
                trial, step = p, np.zeros_like(p)
                break
        p = trial
        lam = max(lam / 3.0, 1e-9)
        if np.linalg.norm(step) < xtol and not changed:
            w = weights_fn()
            sw = np.sqrt(w)
            J = sw[:, None] * _jacobian(model, p, h)
            return p, J, model(p) - meas, w, it
    raise ConvergenceError(f"field fit did not converge in {max_iter} iterations")


def _finish(p, J, resid, w, it, plane, n_used, assignments=None, ambiguous=None) -> FieldFitResult:
    npar = p.size
    A = J.T @ J
    s = np.linalg.svd(J, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    if cond > RANK_COND:
        raise RankError(f"Jacobian is rank deficient (condition number {cond:.3g})", cond)
    dof = n_used - npar
    ssr = float(np.sum(w * resid**2))
    if dof > 0:
        cov_p = ssr / dof * np.linalg.inv(A)
    else:
        cov_p = np.full((npar, npar), np.nan)
    cov = np.zeros((3, 3))
    cov[:npar, :npar] = cov_p
    cov = 0.5 * (cov + cov.T)
    B = _to_field(p, plane)
    mag, phi, theta = spherical(B)
    used = w > 0
    rms = float(np.sqrt(np.mean(resid[used] ** 2)) * 1e3) if used.any() else float("nan")
    return FieldFitResult(
        B=B,
        covariance=cov,
        stderr=np.sqrt(np.clip(np.diag(cov), 0, None)) if dof > 0 else np.full(3, np.nan),
        magnitude=mag,
        phi=phi,
        theta=theta,
        spherical_stderr=spherical_errors(B.as_array(), cov),
        rms_khz=rms,
        residuals=resid,
        iterations=it,
        condition=cond,
        plane=plane,
        weights=w,
        assignments=assignments or [],
        ambiguous=ambiguous or [],
    )


def _initial(B_init: FieldVector, plane: bool) -> np.ndarray:
    a = B_init.as_array()
    if not np.any(a):
        raise ValueError("initial field must be non-zero")
    return a[:2].copy() if plane else a.copy()


def rhs_model_values(model: SpinModel, B: FieldVector, lines: Sequence[RhsLine]) -> np.ndarray:
    cache = {}
    out = np.empty(len(lines))
    for k, ln in enumerate(lines):
        sub = 2 if ln.subsite == "2" else 1
        if sub not in cache:
            cache[sub] = solve(model, B, sub).ground.energies
        a, b = RHS_PAIRS[ln.label]
        out[k] = cache[sub][b - 1] - cache[sub][a - 1]
    return out


def fit_field_rhs(model: SpinModel, meas: RhsMeasurement, B_init: FieldVector, constrain_plane: bool = False) -> FieldFitResult:
    """Least-squares field from RHS spin-line frequencies.

    Lines tagged ``merged`` are modelled with subsite 1, which equals
    subsite 2 whenever the field lies in the D1-D2 plane.
    """
    lines = meas.lines
    npar = 2 if constrain_plane else 3
    w = np.array([ln.weight for ln in lines], dtype=float)
    if np.count_nonzero(w) < npar:
        raise ValueError(f"need at least {npar} weighted lines for a {npar}-parameter field fit, got {np.count_nonzero(w)}")
    y = np.array([ln.freq for ln in lines], dtype=float)

    def f(p):
        return rhs_model_values(model, _to_field(p, constrain_plane), lines)

    p, J, resid, w, it = _levenberg_marquardt(f, y, _initial(B_init, constrain_plane), lambda: w)
    return _finish(p, J, resid, w, it, constrain_plane, int(np.count_nonzero(w)))


def _shb_value(g, e, kind, a):
    i, j, i2, j2 = a
    if kind == "hole":
        return e[j2 - 1] - e[j - 1]
    return g[i - 1] - g[i2 - 1] + e[j2 - 1] - e[j - 1]


class _ShbAssigner:
    """Nearest-catalog assignment, refreshed at each iterate."""

    def __init__(self, model, lines, plane, tol):
        self.model, self.lines, self.plane, self.tol = model, lines, plane, tol
        self.fixed = [ln.assignment for ln in lines]
        self.current = list(self.fixed)
        self.weights = np.array([ln.weight for ln in lines], dtype=float)
        self.ambiguous: list[int] = []
        self.auto = any(a is None for a in self.fixed)

    def __call__(self, p) -> bool:
        if not self.auto:
            return False
        levels = solve(self.model, _to_field(p, self.plane), 1)
        cat = catalog_from_levels(levels, "all")
        new, amb = list(self.current), []
        w = np.array([ln.weight for ln in self.lines], dtype=float)
        for k, ln in enumerate(self.lines):
            if self.fixed[k] is not None:
                continue
            entries = cat.holes if ln.kind == "hole" else cat.antiholes
            offs = np.array([c.offset for c in entries])
            d = np.abs(offs - ln.offset)
            order = np.argsort(d)
            new[k] = entries[order[0]].provenance[0]
            if len(order) > 1 and d[order[1]] < self.tol:
                amb.append(k)
                w[k] = 0.0
        changed = new != self.current or amb != self.ambiguous
        self.current, self.ambiguous, self.weights = new, amb, w
        return changed

    def model_values(self, p) -> np.ndarray:
        lev = solve(self.model, _to_field(p, self.plane), 1)
        g, e = lev.ground.energies, lev.excited.energies
        return np.array([_shb_value(g, e, ln.kind, a) for ln, a in zip(self.lines, self.current)])


def fit_field_shb(
    model: SpinModel,
    meas: ShbMeasurement,
    B_init: FieldVector,
    constrain_plane: bool = False,
    ambiguity_tol: float = AMBIGUITY_TOL,
) -> FieldFitResult:
    """Least-squares field from hole / anti-hole offsets.

    Unassigned lines are matched to the nearest catalog entry of their
    kind at every iterate. A line with two catalog entries inside
    ``ambiguity_tol`` (MHz) gets weight 0 and is listed in ``ambiguous``.
    """
    lines = meas.lines
    npar = 2 if constrain_plane else 3
    y = np.array([ln.offset for ln in lines], dtype=float)
    asg = _ShbAssigner(model, lines, constrain_plane, ambiguity_tol)
    p0 = _initial(B_init, constrain_plane)
    asg(p0)
    if np.count_nonzero(asg.weights) < npar:
        raise ValueError(f"need at least {npar} usable SHB lines, got {np.count_nonzero(asg.weights)}")
    p, J, resid, w, it = _levenberg_marquardt(asg.model_values, y, p0, lambda: asg.weights, asg)
    if np.count_nonzero(w) < npar:
        raise ValueError("too few unambiguous SHB lines at the optimum")
    return _finish(p, J, resid, w, it, constrain_plane, int(np.count_nonzero(w)), asg.current, asg.ambiguous)


def synthetic_rhs(model: SpinModel, B: FieldVector, subsites=("merged",), noise: float = 0.0, rng=None) -> RhsMeasurement:
    """RHS lines generated by the forward model, optional Gaussian noise (MHz)."""
    rng = np.random.default_rng(rng)
    lines = [RhsLine(lab, 0.0, subsite=s) for s in subsites for lab in RHS_LABELS]
    vals = rhs_model_values(model, B, lines)
    if noise:
        vals = vals + rng.normal(0.0, noise, vals.size)
    return RhsMeasurement([RhsLine(ln.label, float(v), ln.weight, ln.subsite) for ln, v in zip(lines, vals)])


def synthetic_shb(model: SpinModel, B: FieldVector, assignments, noise: float = 0.0, rng=None, keep_assignment=True) -> ShbMeasurement:
    """Offsets for given (kind, (i, j, i2, j2)) pairs at field B."""
    rng = np.random.default_rng(rng)
    lev = solve(model, B, 1)
    g, e = lev.ground.energies, lev.excited.energies
    out = []
    for kind, a in assignments:
        v = _shb_value(g, e, kind, a) + (rng.normal(0.0, noise) if noise else 0.0)
        out.append(ShbLine(kind, float(v), tuple(a) if keep_assignment else None))
    return ShbMeasurement(out)
