"""Optical pumping of an inhomogeneously broadened 6 x 6 level ensemble.

Frequency classes live on a uniform detuning grid.  A pump component at
frequency ``p`` empties, for each of the 36 transitions (i, j), the ground
level ``i`` of the class sitting at ``p - (e_j - g_i)`` and returns that
population to the ground levels through column ``j`` of the branching matrix.
Spectra are the Lorentzian-broadened sum of the 36 lines of every class.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.signal import find_peaks

from .spin import DIM, Levels

UNIFORM_GAMMA = np.full((DIM, DIM), 1.0 / DIM)


@dataclass(frozen=True)
class DetuningGrid:
    """Uniform grid of inhomogeneous detunings (MHz) with weights G."""

    start: float
    step: float
    n: int
    weights: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        if self.n < 1:
            raise ValueError("grid needs at least one point")
        w = np.ones(self.n) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (self.n,):
            raise ValueError("weights must match the grid length")
        if np.any(w < 0):
            raise ValueError("inhomogeneous weights must be non-negative")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def symmetric(cls, half_span=150.0, step=0.01, profile="flat", fwhm=None) -> "DetuningGrid":
        """Grid over [-half_span, half_span]; profile 'flat' or 'gaussian'."""
        n = int(round(2 * half_span / step)) + 1
        start = -(n - 1) / 2 * step
        x = start + step * np.arange(n)
        if profile == "flat":
            w = np.ones(n)
        elif profile == "gaussian":
            if fwhm is None:
                raise ValueError("gaussian profile needs a fwhm")
            w = np.exp(-4 * np.log(2) * (x / fwhm) ** 2)
        else:
            raise ValueError(f"unknown profile {profile!r}")
        return cls(start=start, step=step, n=n, weights=w)

    @property
    def values(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.n)

    def index(self, freq) -> np.ndarray:
        """Nearest grid index (not range checked)."""
        return np.rint((np.asarray(freq, dtype=float) - self.start) / self.step).astype(np.int64)

    def snap(self, freq) -> np.ndarray:
        return self.start + self.step * self.index(freq)

    def to_dict(self) -> dict:
        return {"start_MHz": self.start, "step_MHz": self.step, "n": self.n}


@dataclass
class PopulationGrid:
    """rho[k, i]: relative population of |i_g> in frequency class k."""

    grid: DetuningGrid
    rho: np.ndarray

    def copy(self) -> "PopulationGrid":
        return PopulationGrid(self.grid, self.rho.copy())


def init_thermal(grid: DetuningGrid) -> PopulationGrid:
    return PopulationGrid(grid, np.full((grid.n, DIM), 1.0 / DIM))


@dataclass(frozen=True)
class PumpSequence:
    """Ordered pump frequency components, each on the detuning grid."""

    freqs: np.ndarray

    def __add__(self, other: "PumpSequence") -> "PumpSequence":
        return concat(self, other)

    def __len__(self):
        return len(self.freqs)


def burn(freq: float, grid: DetuningGrid, repeat: int = 1) -> PumpSequence:
    return PumpSequence(np.repeat(grid.snap([freq]), repeat))


def chirp(center: float, width: float, grid: DetuningGrid, repeat: int = 1) -> PumpSequence:
    """Sweep over [center - width/2, center + width/2] at the grid step."""
    if width < 0:
        raise ValueError("sweep width must be non-negative")
    lo, hi = grid.index([center - width / 2, center + width / 2])
    one = grid.start + grid.step * np.arange(lo, hi + 1)
    return PumpSequence(np.tile(one, repeat))


def concat(*seqs: PumpSequence) -> PumpSequence:
    if not seqs:
        return PumpSequence(np.zeros(0))
    return PumpSequence(np.concatenate([s.freqs for s in seqs]))


def repeat(seq: PumpSequence, n: int) -> PumpSequence:
    return PumpSequence(np.tile(seq.freqs, n))


@numba.njit(cache=True)
def _pump_pass(rho, pump_idx, shifts, gamma, efficiency):
    n = rho.shape[0]
    skipped = 0
    for k in range(pump_idx.shape[0]):
        p = pump_idx[k]
        for i in range(6):
            for j in range(6):
                c = p - shifts[i, j]
                if c < 0 or c >= n:
                    skipped += 1
                    continue
                moved = efficiency * rho[c, i]
                if moved == 0.0:
                    continue
                rho[c, i] -= moved
                for m in range(6):
                    rho[c, m] += moved * gamma[m, j]
    return skipped


@dataclass
class PumpReport:
    passes: int
    converged: bool
    last_change: float
    skipped: int  # out-of-grid (class, transition) hits, summed over passes


def class_shifts(levels: Levels, grid: DetuningGrid) -> np.ndarray:
    """Transition offsets e_j - g_i in whole grid steps."""
    return np.rint(levels.transition_offsets() / grid.step).astype(np.int64)


def apply_pump(
    pop: PopulationGrid,
    seq: PumpSequence,
    gamma: np.ndarray,
    levels: Levels,
    *,
    efficiency: float = 1.0,
    tol: float = 1e-9,
    max_passes: int = 200,
    until_converged: bool = True,
) -> tuple[PopulationGrid, PumpReport]:
    """Apply ``seq`` repeatedly until the grid stops changing (or once)."""
    grid = pop.grid
    gamma = np.ascontiguousarray(gamma, dtype=float)
    rho = np.ascontiguousarray(pop.rho, dtype=float).copy()
    if len(seq) == 0:
        return PopulationGrid(grid, rho), PumpReport(0, True, 0.0, 0)
    pump_idx = grid.index(seq.freqs)
    shifts = class_shifts(levels, grid)
    skipped = 0
    change = np.inf
    passes = 0
    while passes < (max_passes if until_converged else 1):
        before = rho.copy()
        skipped += _pump_pass(rho, pump_idx, shifts, gamma, float(efficiency))
        passes += 1
        change = float(np.abs(rho - before).max())
        if change < tol:
            break
    converged = change < tol or not until_converged
    return PopulationGrid(grid, rho), PumpReport(passes, converged, change, skipped)


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray
    od: np.ndarray
    chi: float
    lorentz_fwhm: float
    meta: dict = field(default_factory=dict)

    def at(self, freq: float) -> float:
        return float(np.interp(freq, self.freqs, self.od))

    def metadata(self) -> dict:
        return {
            "chi": self.chi,
            "lorentz_fwhm_MHz": self.lorentz_fwhm,
            "n_points": int(len(self.freqs)),
            "freq_start_MHz": float(self.freqs[0]),
            "freq_stop_MHz": float(self.freqs[-1]),
            **self.meta,
        }


def lorentzian(x, fwhm):
    hw = fwhm / 2
    return hw / np.pi / (x**2 + hw**2)


def _raw_spectrum(rho, grid: DetuningGrid, gamma, levels: Levels, fwhm: float) -> np.ndarray:
    """Unnormalised sum over classes and transitions on the grid's own frequency axis."""
    n, step = grid.n, grid.step
    offsets = levels.transition_offsets()
    nfft = 1 << int(np.ceil(np.log2(3 * n)))
    # kernel index d covers line-to-probe distances -(n-1)..(n-1) steps
    d = np.arange(-(n - 1), n) * step
    weighted = rho * grid.weights[:, None]
    rho_hat = np.fft.rfft(weighted, nfft, axis=0)  # (nf, 6)
    total = np.zeros(rho_hat.shape[0], dtype=complex)
    for j in range(DIM):
        col = np.zeros(rho_hat.shape[0], dtype=complex)
        for i in range(DIM):
            if gamma[i, j] == 0.0:
                continue
            kern = lorentzian(d - offsets[i, j], fwhm) * step
            col += gamma[i, j] * rho_hat[:, i] * np.fft.rfft(kern, nfft)
        total += col
    full = np.fft.irfft(total, nfft)
    # output point p pairs with kernel offset (p - m) -> index (n-1) + p
    return full[n - 1 : 2 * n - 1]


def normalization(grid: DetuningGrid, gamma, levels: Levels, lorentz_fwhm: float = 0.05, od_peak: float = 1.0) -> float:
    """chi making the unpumped (thermal) spectrum peak at ``od_peak``."""
    raw = _raw_spectrum(init_thermal(grid).rho, grid, np.asarray(gamma, float), levels, lorentz_fwhm)
    return od_peak / raw.max()


def check_sampling(step: float, lorentz_fwhm: float):
    if step > lorentz_fwhm / 3 * (1 + 1e-9):
        raise ValueError(
            f"probe step {step} MHz undersamples the {lorentz_fwhm} MHz Lorentzian; "
            f"use a step <= {lorentz_fwhm / 3:.4g} MHz"
        )


def synthesize_spectrum(
    pop: PopulationGrid,
    gamma,
    levels: Levels,
    probe: np.ndarray | None = None,
    lorentz_fwhm: float = 0.05,
    chi: float | None = None,
    od_peak: float = 1.0,
) -> Spectrum:
    """Optical depth of the ensemble; ``probe=None`` means the class grid."""
    grid = pop.grid
    gamma = np.asarray(gamma, dtype=float)
    check_sampling(grid.step, lorentz_fwhm)
    if chi is None:
        chi = normalization(grid, gamma, levels, lorentz_fwhm, od_peak)
    od = chi * _raw_spectrum(pop.rho, grid, gamma, levels, lorentz_fwhm)
    freqs = grid.values
    if probe is not None:
        probe = np.asarray(probe, dtype=float)
        if len(probe) > 1:
            check_sampling(float(np.max(np.diff(probe))), lorentz_fwhm)
        od = np.interp(probe, freqs, od)
        freqs = probe
    return Spectrum(freqs=freqs, od=od, chi=float(chi), lorentz_fwhm=lorentz_fwhm)


def shb_difference(before: Spectrum, after: Spectrum) -> Spectrum:
    """after - before: holes negative, anti-holes positive."""
    if before.freqs.shape != after.freqs.shape or not np.allclose(before.freqs, after.freqs, rtol=0, atol=1e-9):
        raise ValueError("spectra are on different probe grids")
    return Spectrum(after.freqs, after.od - before.od, after.chi, after.lorentz_fwhm, {"kind": "difference"})


def _refine(x, y, k):
    if 0 < k < len(y) - 1:
        y0, y1, y2 = y[k - 1], y[k], y[k + 1]
        den = y0 - 2 * y1 + y2
        if den != 0:
            return x[k] + 0.5 * (y0 - y2) / den * (x[1] - x[0])
    return x[k]


def _merge(peaks, tol):
    if tol <= 0 or not peaks:
        return peaks
    out = [peaks[0]]
    for f, h in peaks[1:]:
        if f - out[-1][0] < tol:
            if h > out[-1][1]:
                out[-1] = (f, h)
        else:
            out.append((f, h))
    return out


def count_extrema(diff: Spectrum, threshold: float, merge_tol: float = 0.0):
    """Holes (dips) and anti-holes (bumps) deeper/higher than ``threshold``.

    Returns two frequency-sorted lists of (freq, magnitude).
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    x, y = diff.freqs, diff.od
    result = []
    for sign in (-1.0, 1.0):
        s = sign * y
        idx, _ = find_peaks(s, height=threshold)
        peaks = sorted((float(_refine(x, s, k)), float(s[k])) for k in idx)
        result.append(_merge(peaks, merge_tol))
    return result[0], result[1]


def resonant_od(gamma, rho, i: int, j: int) -> float:
    """Trench-centre OD relative to the unpumped OD: gamma_ij * rho_i.

    ``rho`` is the 6-vector of the selected class (1-based labels i, j).
    """
    return float(np.asarray(gamma)[i - 1, j - 1] * np.asarray(rho)[i - 1])


@dataclass(frozen=True)
class Stage:
    name: str
    sequence: PumpSequence


def run_stages(pop: PopulationGrid, stages, gamma, levels: Levels, **kw):
    """Apply stages in order; returns final populations and per-stage reports."""
    reports = {}
    for st in stages:
        pop, rep = apply_pump(pop, st.sequence, gamma, levels, **kw)
        reports[st.name] = rep
    return pop, reports


def cc_sp_sequences(transitions, selected, levels: Levels, grid: DetuningGrid, width: float, reference=None):
    """Class-cleaning and spin-polarisation sweeps for a selected class.

    ``transitions`` lists the 1-based (i, j) pumps; the class is chosen so
    that ``reference`` (default ``selected``) sits at zero frequency.  The SP
    sequence omits ``selected``.
    """
    ref = selected if reference is None else reference
    # centres from the snapped offsets so every pump hits the same grid class
    t = class_shifts(levels, grid) * grid.step
    zero = t[ref[0] - 1, ref[1] - 1]
    cc = concat(*(chirp(t[i - 1, j - 1] - zero, width, grid) for i, j in transitions))
    sp = concat(*(chirp(t[i - 1, j - 1] - zero, width, grid) for i, j in transitions if (i, j) != tuple(selected)))
    return cc, sp


@dataclass
class TrenchScan:
    width: float
    freqs: np.ndarray
    od: np.ndarray
    max_jump: float
    step_detected: bool


def window_jump(od: np.ndarray, lag: int) -> float:
    """Largest |od[k + lag] - od[k]|; a Lorentzian-blurred step of height h
    shows up as roughly h/2 over one FWHM."""
    lag = max(int(lag), 1)
    if od.size <= lag:
        return 0.0
    return float(np.abs(od[lag:] - od[:-lag]).max())


def trench_profile(width, cc_transitions, selected, levels, gamma, grid, lorentz_fwhm=0.05, step_threshold=0.05, margin=None):
    """CC + SP with every pump chirped over ``width``; inspect the zero trench.

    The trench interior is |f| < width/2 - margin (default 3 FWHM) so the
    walls are not counted as steps. A step is an OD change above
    ``step_threshold`` (relative to the unpumped OD) across one Lorentzian
    FWHM inside the interior.
    """
    cc, sp = cc_sp_sequences(cc_transitions, selected, levels, grid, width)
    pop = init_thermal(grid)
    pop, _ = apply_pump(pop, cc, gamma, levels)
    pop, _ = apply_pump(pop, sp, gamma, levels)
    spec = synthesize_spectrum(pop, gamma, levels, lorentz_fwhm=lorentz_fwhm)
    if margin is None:
        margin = 3 * lorentz_fwhm
    half = max(width / 2 - margin, 0.0)
    inside = np.abs(spec.freqs) <= half + 1e-12
    od = spec.od[inside]
    jump = window_jump(od, round(lorentz_fwhm / grid.step))
    return TrenchScan(width, spec.freqs[inside], od, jump, jump > step_threshold)


def trench_bandwidth_scan(widths, cc_transitions, selected, levels, gamma, grid, **kw):
    if any(w < 0 for w in widths):
        raise ValueError("sweep widths must be non-negative")
    return [trench_profile(w, cc_transitions, selected, levels, gamma, grid, **kw) for w in widths]


def covering_half_span(levels: Levels, pump_freqs, margin: float = 1.0) -> float:
    """Half span (MHz) so every class any pump touches lies on the grid."""
    reach = float(np.abs(levels.transition_offsets()).max())
    pumps = np.asarray(pump_freqs, dtype=float)
    far = float(np.abs(pumps).max()) if pumps.size else 0.0
    return far + reach + margin
