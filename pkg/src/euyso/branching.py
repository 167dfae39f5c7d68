"""Branching-ratio reconstruction from optical Rabi frequencies.

Rabi frequencies scale as Omega_ij = Omega_ge * sqrt(gamma_ij). Measured
elements are tied to the global Omega_ge, the remaining free elements
are fitted so that rows and columns of gamma sum to one.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import constants
from scipy.optimize import curve_fit, least_squares, linprog

from .spin import DIM, format_transition, parse_transition

PENALTY = 1e3
BOUND_TOL = 1e-9
ALL_ELEMENTS = [(i, j) for i in range(1, DIM + 1) for j in range(1, DIM + 1)]


class InvertibilityError(RuntimeError):
    pass


class GammaConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RabiRecord:
    i: int
    j: int
    raw: float  # kHz
    err: float  # kHz, standard error of raw
    power: float  # W
    calibrated: float | None = None
    cal_err: float | None = None

    def __post_init__(self):
        if not (1 <= self.i <= DIM and 1 <= self.j <= DIM):
            raise ValueError(f"transition out of range: ({self.i}, {self.j})")
        if not self.raw > 0:
            raise ValueError(f"{self.label}: raw Rabi frequency must be positive")
        if not self.power > 0:
            raise ValueError(f"{self.label}: power must be positive")
        if self.err < 0:
            raise ValueError(f"{self.label}: negative standard error")

    @property
    def label(self) -> str:
        return format_transition(self.i, self.j)

    @property
    def element(self) -> tuple[int, int]:
        return self.i, self.j

    @classmethod
    def from_label(cls, label: str, raw: float, err: float, power: float) -> "RabiRecord":
        i, j = parse_transition(label)
        return cls(i, j, float(raw), float(err), float(power))


def power_calibrate(records: Sequence[RabiRecord], reference=(3, 6)) -> list[RabiRecord]:
    """Scale every record to the reference transition's power.

    Rabi frequency goes as the field amplitude, so as sqrt(power).
    """
    if isinstance(reference, str):
        reference = parse_transition(reference)
    ref = [r for r in records if r.element == tuple(reference)]
    if not ref:
        raise ValueError(f"reference transition {format_transition(*reference)} not among the records")
    p_ref = ref[0].power
    out = []
    for r in records:
        f = np.sqrt(p_ref / r.power)
        out.append(replace(r, calibrated=float(r.raw * f), cal_err=float(r.err * f)))
    return out


def average_duplicates(records: Sequence[RabiRecord]) -> list[RabiRecord]:
    """Inverse-variance average of repeated calibrated measurements of one transition."""
    groups: dict[tuple[int, int], list[RabiRecord]] = {}
    for r in records:
        if r.calibrated is None:
            raise ValueError(f"{r.label}: record is not calibrated")
        groups.setdefault(r.element, []).append(r)
    out = []
    for key, grp in groups.items():
        if len(grp) == 1:
            out.append(grp[0])
            continue
        s = np.array([g.cal_err for g in grp])
        if np.any(s <= 0):
            raise ValueError(f"{grp[0].label}: duplicates need positive errors to be averaged")
        w = 1 / s**2
        val = float(np.sum(w * [g.calibrated for g in grp]) / w.sum())
        out.append(replace(grp[0], calibrated=val, cal_err=float(1 / np.sqrt(w.sum()))))
    return out


def normalization_rows(drop_redundant: bool = True) -> np.ndarray:
    """Row and column sum constraints on the flattened 6x6 gamma."""
    rows = []
    for i in range(DIM):
        a = np.zeros((DIM, DIM))
        a[i, :] = 1
        rows.append(a.ravel())
    for j in range(DIM):
        a = np.zeros((DIM, DIM))
        a[:, j] = 1
        rows.append(a.ravel())
    rows = np.array(rows)
    return rows[:-1] if drop_redundant else rows


@dataclass
class RankReport:
    rank: int
    condition: float
    n_rows: int
    invertible: bool
    singular_values: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"rank": self.rank, "condition": self.condition, "n_rows": self.n_rows, "invertible": self.invertible}


def rank_report(fixed: Iterable[tuple[int, int]]) -> RankReport:
    """Rank of the 11 normalization rows plus one unit row per fixed element."""
    fixed = sorted(set(tuple(e) for e in fixed))
    unit = np.zeros((len(fixed), DIM * DIM))
    for k, (i, j) in enumerate(fixed):
        unit[k, (i - 1) * DIM + (j - 1)] = 1
    A = np.vstack([normalization_rows(), unit])
    s = np.linalg.svd(A, compute_uv=False)
    tol = s[0] * max(A.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol))
    cond = float(s[0] / s[-1]) if rank == DIM * DIM and s.size >= DIM * DIM else float("inf")
    return RankReport(rank, cond, A.shape[0], rank == DIM * DIM, s)


def theory_gamma_table(path) -> np.ndarray:
    """Read a 6x6 percent table (rows 1g..6g) and return fractions."""
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    if vals.shape != (DIM, DIM):
        raise ValueError(f"{path}: expected a 6x6 table, got {vals.shape}")
    return vals / 100.0


@dataclass
class GammaFitProblem:
    records: list[RabiRecord]
    zero_elements: list[tuple[int, int]]
    reference_power: float
    initial_gamma: np.ndarray
    bounds: tuple[float, float] = (0.0, 1.0)
    penalty: float = PENALTY

    def __post_init__(self):
        if any(r.calibrated is None for r in self.records):
            raise ValueError("records must be power calibrated before fitting")
        self.records = average_duplicates(self.records)
        self.zero_elements = [tuple(z) for z in self.zero_elements]
        overlap = set(self.measured_elements) & set(self.zero_elements)
        if overlap:
            raise ValueError(f"elements both measured and fixed to zero: {sorted(overlap)}")
        self.initial_gamma = np.asarray(self.initial_gamma, dtype=float)
        if self.initial_gamma.shape != (DIM, DIM):
            raise ValueError("initial gamma must be 6x6")

    @property
    def measured_elements(self) -> list[tuple[int, int]]:
        return [r.element for r in self.records]

    @property
    def fixed_elements(self) -> list[tuple[int, int]]:
        return self.measured_elements + list(self.zero_elements)

    @property
    def free_elements(self) -> list[tuple[int, int]]:
        fixed = set(self.fixed_elements)
        return [e for e in ALL_ELEMENTS if e not in fixed]


def check_invertibility(problem: GammaFitProblem) -> RankReport:
    return rank_report(problem.fixed_elements)


@dataclass
class GammaFitResult:
    gamma: np.ndarray
    gamma_err: np.ndarray
    omega: float  # kHz
    omega_err: float
    row_sums: np.ndarray
    col_sums: np.ndarray
    saturated: list[str]
    omega_interval: tuple[float, float] | None
    cost: float
    nfev: int
    measured: list[tuple[int, int]] = field(repr=False)
    zeros: list[tuple[int, int]] = field(repr=False)
    # linearised statistical parts; gamma_err/omega_err add the spread over
    # the feasible Omega interval when the sums cannot pin Omega down
    gamma_err_stat: np.ndarray | None = field(default=None, repr=False)
    omega_err_stat: float | None = None

    @property
    def identifiable(self) -> bool:
        """False when an interval of Omega values meets every sum exactly."""
        if self.omega_interval is None:
            return True
        lo, hi = self.omega_interval
        return not (hi - lo > 1e-6 * lo)

    @property
    def max_sum_deviation(self) -> float:
        return float(max(np.abs(self.row_sums - 1).max(), np.abs(self.col_sums - 1).max()))

    def to_dict(self) -> dict:
        return {
            "omega_ge_kHz": self.omega,
            "omega_ge_err_kHz": self.omega_err,
            "gamma": self.gamma.tolist(),
            "gamma_err": self.gamma_err.tolist(),
            "row_sums": self.row_sums.tolist(),
            "col_sums": self.col_sums.tolist(),
            "max_sum_deviation": self.max_sum_deviation,
            "bound_saturated": self.saturated,
            "omega_feasible_interval_kHz": list(self.omega_interval) if self.omega_interval else None,
            "omega_identifiable": self.identifiable,
            "omega_ge_err_stat_kHz": self.omega_err_stat,
            "gamma_err_stat": None if self.gamma_err_stat is None else self.gamma_err_stat.tolist(),
            "measured": [format_transition(*e) for e in self.measured],
            "zeros": [format_transition(*e) for e in self.zeros],
            "cost": self.cost,
        }


def _gamma_from(params, meas_idx, free_idx, cal):
    g = np.zeros((DIM, DIM))
    omega = params[0]
    for k, (i, j) in enumerate(meas_idx):
        g[i - 1, j - 1] = (cal[k] / omega) ** 2
    for k, (i, j) in enumerate(free_idx):
        g[i - 1, j - 1] = params[1 + k]
    return g


def fit_gamma(problem: GammaFitProblem) -> GammaFitResult:
    """Penalised least squares for Omega_ge and the unfixed gamma elements.

    Measured elements follow gamma_ij = (Omega_cal,ij / Omega_ge)^2 at every
    iterate, so their Rabi residuals vanish and the row/column sums drive
    the fit. Standard errors propagate the calibrated Rabi errors through
    the optimum to first order; parameters sitting on a bound are held
    fixed in that propagation and listed in ``saturated``.
    """
    report = check_invertibility(problem)
    if not report.invertible:
        raise InvertibilityError(f"element selection is not invertible (rank {report.rank} < 36)")
    meas = problem.measured_elements
    free = problem.free_elements
    cal = np.array([r.calibrated for r in problem.records])
    sig = np.array([r.cal_err for r in problem.records])
    if not np.all(sig > 0):
        raise ValueError("calibrated Rabi errors must be positive")
    lo, hi = problem.bounds
    sp = np.sqrt(problem.penalty)
    omega_min = float(cal.max() / np.sqrt(hi))

    def residuals(p, c=cal):
        g = _gamma_from(p, meas, free, c)
        rabi = np.array([(p[0] * np.sqrt(g[i - 1, j - 1]) - c[k]) / sig[k] for k, (i, j) in enumerate(meas)])
        return np.r_[rabi, sp * (g.sum(1) - 1), sp * (g.sum(0) - 1)]

    x0 = np.r_[omega_min, [np.clip(problem.initial_gamma[i - 1, j - 1], lo, hi) for i, j in free]]
    lb = np.r_[omega_min, np.full(len(free), lo)]
    ub = np.r_[np.inf, np.full(len(free), hi)]
    x0 = np.clip(x0, lb, ub)
    sol = least_squares(residuals, x0, bounds=(lb, ub), method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    if sol.status <= 0:
        raise GammaConvergenceError(f"gamma fit did not converge: {sol.message}")
    x = sol.x
    gamma = _gamma_from(x, meas, free, cal)

    at_bound = (np.abs(x - lb) < BOUND_TOL * np.maximum(1, np.abs(lb))) | (np.abs(x - ub) < BOUND_TOL)
    names = ["omega"] + [format_transition(*e) for e in free]
    saturated = [n for n, b in zip(names, at_bound) if b]

    # first-order sensitivity of the optimum to the calibrated data
    active = ~at_bound
    eps = 1e-6
    Jp = _num_jac(lambda p: residuals(p), x, eps * np.maximum(1, np.abs(x)))
    Jd = _num_jac(lambda c: residuals(x, c), cal, eps * cal)
    dx = np.zeros((x.size, cal.size))
    if active.any():
        Ja = Jp[:, active]
        dx[active] = -np.linalg.pinv(Ja.T @ Ja) @ (Ja.T @ Jd)
    cov_x = dx @ np.diag(sig**2) @ dx.T

    # gamma errors: measured elements depend on their own datum and omega
    G = np.zeros((DIM * DIM, cal.size))
    for k, (i, j) in enumerate(meas):
        row = (i - 1) * DIM + (j - 1)
        G[row, k] += 2 * cal[k] / x[0] ** 2
        G[row] += -2 * cal[k] ** 2 / x[0] ** 3 * dx[0]
    for k, (i, j) in enumerate(free):
        G[(i - 1) * DIM + (j - 1)] = dx[1 + k]
    gerr = np.sqrt(np.einsum("ik,k,ik->i", G, sig**2, G)).reshape(DIM, DIM)
    oerr = float(np.sqrt(cov_x[0, 0]))

    # Exactly consistent data leave a flat direction the linearisation cannot
    # see. Gamma is affine in 1/Omega^2 along it, so the interval endpoints
    # bound every element; count that range as a rectangular distribution.
    interval = omega_feasible_interval(problem)
    g_sys, o_sys = np.zeros((DIM, DIM)), 0.0
    if interval is not None and interval[1] - interval[0] > 1e-6 * interval[0]:
        lo_o, hi_o = interval
        if np.isfinite(hi_o):
            g_sys = np.abs(gamma_at_omega(problem, hi_o) - gamma_at_omega(problem, lo_o)) / (2 * np.sqrt(3))
            o_sys = (hi_o - lo_o) / (2 * np.sqrt(3))
        else:
            g_sys, o_sys = np.full((DIM, DIM), np.inf), np.inf
        for i, j in problem.zero_elements:
            g_sys[i - 1, j - 1] = 0.0

    return GammaFitResult(
        gamma=gamma,
        gamma_err=np.hypot(gerr, g_sys),
        omega=float(x[0]),
        omega_err=float(np.hypot(oerr, o_sys)),
        row_sums=gamma.sum(1),
        col_sums=gamma.sum(0),
        saturated=saturated,
        omega_interval=interval,
        cost=float(sol.cost),
        nfev=int(sol.nfev),
        measured=list(meas),
        zeros=list(problem.zero_elements),
        gamma_err_stat=gerr,
        omega_err_stat=oerr,
    )


def gamma_at_omega(problem: GammaFitProblem, omega: float) -> np.ndarray:
    """Gamma implied by the data at a fixed Omega_ge, free elements from the sums."""
    meas, free = problem.measured_elements, problem.free_elements
    g = np.zeros((DIM, DIM))
    for r in problem.records:
        g[r.i - 1, r.j - 1] = (r.calibrated / omega) ** 2
    A = normalization_rows(drop_redundant=False)
    idx = [(i - 1) * DIM + (j - 1) for i, j in free]
    rhs = 1.0 - A @ g.ravel()
    sol, *_ = np.linalg.lstsq(A[:, idx], rhs, rcond=None)
    for k, (i, j) in enumerate(free):
        g[i - 1, j - 1] = sol[k]
    return g


def omega_feasible_interval(problem: GammaFitProblem) -> tuple[float, float] | None:
    """Range of Omega_ge for which all 12 sums can equal one exactly.

    With u = 1/Omega^2 the sum constraints are linear in (u, free
    elements), so the range follows from two linear programs. Returns
    None when no exact solution exists inside the bounds.
    """
    meas, free = problem.measured_elements, problem.free_elements
    cal2 = np.array([r.calibrated for r in problem.records]) ** 2
    lo, hi = problem.bounds
    A = normalization_rows(drop_redundant=False)
    idx = lambda e: (e[0] - 1) * DIM + (e[1] - 1)
    # columns: u, then free elements
    Aeq = np.zeros((A.shape[0], 1 + len(free)))
    for k, e in enumerate(meas):
        Aeq[:, 0] += A[:, idx(e)] * cal2[k]
    for k, e in enumerate(free):
        Aeq[:, 1 + k] = A[:, idx(e)]
    beq = np.ones(A.shape[0])
    u_max = hi / cal2.max()
    bounds = [(0, u_max)] + [(lo, hi)] * len(free)
    out = []
    for sign in (1, -1):
        c = np.zeros(1 + len(free))
        c[0] = sign
        res = linprog(c, A_eq=Aeq, b_eq=beq, bounds=bounds, method="highs")
        if res.status != 0:
            return None
        out.append(res.x[0])
    u_lo, u_hi = out
    if u_lo <= 0:
        return (float(1 / np.sqrt(u_hi)), float("inf"))
    return (float(1 / np.sqrt(u_hi)), float(1 / np.sqrt(u_lo)))


def _num_jac(f, x, h):
    cols = []
    for k in range(x.size):
        d = np.zeros_like(x)
        d[k] = h[k]
        cols.append((f(x + d) - f(x - d)) / (2 * h[k]))
    return np.column_stack(cols)


def random_doubly_stochastic(rng, zeros: Sequence[tuple[int, int]] = (), iters: int = 5000, diag_boost: float = 0.0) -> np.ndarray:
    """Sinkhorn-balanced random matrix with the given elements forced to zero."""
    mask = np.ones((DIM, DIM))
    for i, j in zeros:
        mask[i - 1, j - 1] = 0
    a = rng.random((DIM, DIM)) * mask + diag_boost * np.eye(DIM)
    for _ in range(iters):
        a /= a.sum(1, keepdims=True)
        a /= a.sum(0, keepdims=True)
    return a


def synthetic_records(gamma: np.ndarray, omega: float, elements, rel_noise: float, rng) -> list[RabiRecord]:
    """Calibrated records Omega*sqrt(gamma) with relative Gaussian noise, all at one power.

    Noiseless records carry a unit error so they remain usable as fit weights.
    """
    out = []
    for i, j in elements:
        true = omega * np.sqrt(gamma[i - 1, j - 1])
        val = true * (1 + rel_noise * rng.standard_normal())
        err = rel_noise * true if rel_noise > 0 else 1.0
        out.append(RabiRecord(i, j, val, err, 1.0, val, err))
    return out


@dataclass(frozen=True)
class OpticsConfig:
    power: float  # W
    waist: float  # m
    n: float
    eps0: float = constants.epsilon_0
    c: float = constants.c
    hbar: float = constants.hbar

    def __post_init__(self):
        for name in ("power", "waist", "n", "eps0", "c", "hbar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"optics: {name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "OpticsConfig":
        try:
            return cls(float(d["power_W"]), float(d["waist_m"]), float(d["refractive_index"]))
        except KeyError as exc:
            raise ValueError(f"optics config missing key {exc.args[0]!r}") from None

    @property
    def area(self) -> float:
        return np.pi * self.waist**2

    @property
    def field_amplitude(self) -> float:
        """Peak electric field (V/m) for a beam of area pi*w0^2."""
        return float(np.sqrt(2 * self.power / (self.area * self.n * self.eps0 * self.c)))


@dataclass
class DipoleResult:
    E: float  # V/m
    mu: float  # C m
    mu_err: float


def dipole_moment(omega_khz: float, optics: OpticsConfig, omega_err_khz: float = 0.0) -> DipoleResult:
    """mu = hbar * 2*pi*Omega / E, Omega an ordinary frequency."""
    E = optics.field_amplitude
    k = optics.hbar * 2 * np.pi * 1e3 / E
    return DipoleResult(E, float(k * omega_khz), float(k * abs(omega_err_khz)))


@dataclass
class RabiTraceFit:
    freq_khz: float
    freq_err_khz: float
    decay_us: float
    phase: float
    offset: float
    amplitude: float
    ambiguous: bool


def _damped(t, a, tau, f, phi, c):
    return a * np.exp(-t / tau) * np.cos(2 * np.pi * f * t + phi) + c


def fit_damped_cosine(tau_us, od) -> RabiTraceFit:
    """Fit A exp(-t/T) cos(2 pi f t + phi) + c to a Rabi trace (t in us).

    The frequency is seeded from the FFT peak of the resampled trace.
    """
    t = np.asarray(tau_us, dtype=float)
    y = np.asarray(od, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("trace must be two equal-length 1-D arrays")
    if t.size < 8:
        raise ValueError("need at least 8 points to fit a damped cosine")
    order = np.argsort(t)
    t, y = t[order], y[order]
    span = t[-1] - t[0]
    if np.ptp(y) <= 1e-12 * max(1.0, np.abs(y).max()):
        raise ValueError("trace is constant: no oscillation to fit")
    tu = np.linspace(t[0], t[-1], 4 * t.size)
    yu = np.interp(tu, t, y) - y.mean()
    spec = np.abs(np.fft.rfft(yu * np.hanning(tu.size), n=8 * tu.size))
    freqs = np.fft.rfftfreq(8 * tu.size, tu[1] - tu[0])
    spec[0] = 0
    f0 = freqs[np.argmax(spec)]
    if f0 * span < 1:
        raise ValueError("trace spans less than one oscillation period")
    a0 = 0.5 * np.ptp(y)
    p0 = [a0, span, f0, 0.0, y.mean()]
    best = None
    for phi0 in (0.0, np.pi / 2, np.pi, -np.pi / 2):
        p0[3] = phi0
        try:
            popt, pcov = curve_fit(_damped, t, y, p0=p0, maxfev=20000)
        except RuntimeError:
            continue
        ssr = np.sum((_damped(t, *popt) - y) ** 2)
        if best is None or ssr < best[0]:
            best = (ssr, popt, pcov)
    if best is None:
        raise GammaConvergenceError("damped cosine fit did not converge")
    _, popt, pcov = best
    a, tau, f, phi, c = popt
    if a < 0:
        a, phi = -a, phi + np.pi
    if f < 0:
        f, phi = -f, -phi
    ferr = float(np.sqrt(pcov[2, 2])) if np.isfinite(pcov[2, 2]) else float("inf")
    phi = float((phi + np.pi) % (2 * np.pi) - np.pi)
    return RabiTraceFit(
        freq_khz=float(f * 1e3),
        freq_err_khz=ferr * 1e3,
        decay_us=float(tau),
        phase=phi,
        offset=float(c),
        amplitude=float(a),
        ambiguous=bool(ferr > 0.5 * f),
    )
