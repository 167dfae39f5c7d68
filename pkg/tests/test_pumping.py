import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from euyso.pumping import (
    UNIFORM_GAMMA,
    DetuningGrid,
    PopulationGrid,
    PumpSequence,
    Spectrum,
    apply_pump,
    burn,
    chirp,
    class_shifts,
    count_extrema,
    covering_half_span,
    init_thermal,
    lorentzian,
    normalization,
    resonant_od,
    shb_difference,
    synthesize_spectrum,
    window_jump,
)


@pytest.fixture(scope="module")
def small_grid(levels_d2):
    span = covering_half_span(levels_d2, [0.0], margin=2.0)
    return DetuningGrid.symmetric(span, 0.01)


def test_thermal_populations():
    g = DetuningGrid.symmetric(1.0, 0.5)
    pop = init_thermal(g)
    assert np.all(pop.rho == 1 / 6)
    assert init_thermal(DetuningGrid(0.0, 0.1, 1)).rho.shape == (1, 6)


def test_grid_validation():
    with pytest.raises(ValueError):
        DetuningGrid(0.0, 0.0, 10)
    with pytest.raises(ValueError):
        DetuningGrid(0.0, 0.1, 3, weights=np.array([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        DetuningGrid.symmetric(1.0, 0.1, profile="gaussian")


def test_single_transition_pump_rule():
    """Only (1,1) resonant: rho_1 -> rho_1/6, each level gains rho_1/6."""
    from euyso.pumping import _pump_pass

    rho = np.tile([0.4, 0.2, 0.1, 0.1, 0.1, 0.1], (5, 1))
    shifts = np.full((6, 6), 10**6, dtype=np.int64)
    shifts[0, 0] = 0
    skipped = _pump_pass(rho, np.array([2], dtype=np.int64), shifts, UNIFORM_GAMMA.copy(), 1.0)
    assert skipped == 35
    assert rho[2] == pytest.approx([0.4 / 6, 0.2 + 0.4 / 6, *(0.1 + 0.4 / 6,) * 4])
    assert np.allclose(rho[[0, 1, 3, 4]], [0.4, 0.2, 0.1, 0.1, 0.1, 0.1])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.integers(0, 2**32 - 1))
def test_population_conserved(levels_d2, pumps, seed):
    grid = DetuningGrid.symmetric(covering_half_span(levels_d2, pumps), 0.05)
    r = np.random.default_rng(seed)
    rho = r.random((grid.n, 6))
    rho /= rho.sum(1, keepdims=True)
    gamma = r.random((6, 6))
    for _ in range(200):
        gamma /= gamma.sum(0, keepdims=True)
        gamma /= gamma.sum(1, keepdims=True)
    seq = PumpSequence(grid.snap(pumps))
    out, rep = apply_pump(PopulationGrid(grid, rho), seq, gamma, levels_d2, max_passes=20)
    assert rep.skipped == 0
    assert np.abs(out.rho.sum(1) - 1).max() < 1e-12
    assert out.rho.min() >= 0


def test_complete_pumping_is_idempotent(levels_d2):
    grid = DetuningGrid.symmetric(covering_half_span(levels_d2, [0.0]), 0.02)
    seq = chirp(0.0, 1.0, grid)
    pop, rep = apply_pump(init_thermal(grid), seq, UNIFORM_GAMMA, levels_d2)
    assert rep.converged
    again, rep2 = apply_pump(pop, seq, UNIFORM_GAMMA, levels_d2, until_converged=False)
    assert np.abs(again.rho - pop.rho).max() < 1e-9


def test_empty_sequence_is_noop(levels_d2, small_grid):
    pop = init_thermal(small_grid)
    out, rep = apply_pump(pop, PumpSequence(np.zeros(0)), UNIFORM_GAMMA, levels_d2)
    assert np.array_equal(out.rho, pop.rho) and rep.passes == 0


def test_chirp_on_grid():
    g = DetuningGrid.symmetric(10, 0.01)
    seq = chirp(1.234, 2.2, g, repeat=2)
    assert len(seq) == 2 * 221
    assert np.allclose(seq.freqs, g.snap(seq.freqs))
    with pytest.raises(ValueError):
        chirp(0, -1, g)


def test_unpumped_spectrum_flat(levels_d2):
    reach = np.abs(levels_d2.transition_offsets()).max()
    grid = DetuningGrid.symmetric(2 * reach + 25, 0.01)
    spec = synthesize_spectrum(init_thermal(grid), UNIFORM_GAMMA, levels_d2)
    centre = np.abs(spec.freqs) < 20
    assert spec.od[centre] == pytest.approx(1.0, abs=2e-3)
    assert spec.od.min() >= 0
    assert spec.at(0.0) == pytest.approx(1.0, abs=2e-3)


def test_spectrum_linear_in_populations(levels_d2, rng):
    grid = DetuningGrid.symmetric(covering_half_span(levels_d2, [0.0]), 0.01)
    a, b = rng.random((grid.n, 6)), rng.random((grid.n, 6))
    chi = normalization(grid, UNIFORM_GAMMA, levels_d2)
    f = lambda r: synthesize_spectrum(PopulationGrid(grid, r), UNIFORM_GAMMA, levels_d2, chi=chi).od
    assert np.allclose(f(a + 2 * b), f(a) + 2 * f(b), atol=1e-10)


def test_single_class_lines(levels_d2):
    grid = DetuningGrid.symmetric(covering_half_span(levels_d2, [0.0]), 0.005)
    rho = np.zeros((grid.n, 6))
    rho[grid.index(0.0), 4] = 1.0
    gamma = levels_d2.branching()
    spec = synthesize_spectrum(PopulationGrid(grid, rho), gamma, levels_d2, lorentz_fwhm=0.05, chi=1.0)
    t = levels_d2.transition_offsets()[4] + grid.values[grid.index(0.0)]
    win = [np.abs(spec.freqs - t[j]) <= 0.5 for j in range(6)]
    areas = np.array([spec.od[w].sum() for w in win])
    # oracle: every line's Lorentzian summed over each window
    expect = np.array([sum(gamma[4, k] * lorentzian(spec.freqs[w] - t[k], 0.05).sum() * grid.step for k in range(6)) for w in win])
    assert areas == pytest.approx(expect, rel=1e-6)
    holes, peaks = count_extrema(spec, 1e-3 * spec.od.max())
    assert sorted(p[0] for p in peaks) == pytest.approx(sorted(t[gamma[4] > 1e-3]), abs=grid.step)


def test_sampling_guard(levels_d2):
    grid = DetuningGrid.symmetric(10, 0.05)
    with pytest.raises(ValueError, match="undersamples"):
        synthesize_spectrum(init_thermal(grid), UNIFORM_GAMMA, levels_d2, lorentz_fwhm=0.05)


def test_count_extrema_on_synthetic_dips():
    x = np.arange(-5, 5, 0.01)
    centres = [-2.0, 0.31, 3.07]
    y = -sum(lorentzian(x - c, 0.05) for c in centres) * 0.01
    spec = Spectrum(x, y, 1.0, 0.05)
    holes, anti = count_extrema(spec, 1e-3)
    assert anti == []
    assert [h[0] for h in holes] == pytest.approx(centres, abs=0.01)
    zero = Spectrum(x, np.zeros_like(x), 1.0, 0.05)
    assert count_extrema(zero, 1e-6) == ([], [])


def test_merge_tolerance():
    x = np.arange(-2, 2, 0.005)
    y = (lorentzian(x - 0.0, 0.05) + lorentzian(x - 0.04, 0.05)) * 0.01
    y += lorentzian(x - 1.0, 0.05) * 0.01
    spec = Spectrum(x, y, 1.0, 0.05)
    assert len(count_extrema(spec, 1e-3)[1]) == 3
    assert len(count_extrema(spec, 1e-3, merge_tol=0.05)[1]) == 2


def test_difference_requires_same_grid():
    a = Spectrum(np.arange(3.0), np.zeros(3), 1.0, 0.05)
    b = Spectrum(np.arange(4.0), np.zeros(4), 1.0, 0.05)
    with pytest.raises(ValueError):
        shb_difference(a, b)
    assert np.all(shb_difference(a, a).od == 0)


def test_resonant_od():
    assert resonant_od(UNIFORM_GAMMA, [0, 0, 0, 0, 1, 0], 5, 6) == pytest.approx(1 / 6)
    # thermal: every one of the 36 classes contributes gamma_ij / 6
    total = sum(resonant_od(UNIFORM_GAMMA, np.full(6, 1 / 6), i, j) for i in range(1, 7) for j in range(1, 7))
    assert total == pytest.approx(1.0)


def test_window_jump():
    od = np.r_[np.zeros(50), np.ones(50)]
    assert window_jump(od, 5) == 1.0
    assert window_jump(np.ones(10), 3) == 0.0
    assert window_jump(np.ones(2), 5) == 0.0


def test_zero_width_trench_is_narrow(levels_d2):
    from euyso.pumping import trench_profile

    grid = DetuningGrid.symmetric(covering_half_span(levels_d2, [0.0]), 0.01)
    cc = [(1, 3), (2, 3), (3, 6), (4, 3), (5, 6), (6, 5)]
    scan = trench_profile(0.0, cc, (5, 6), levels_d2, UNIFORM_GAMMA, grid)
    assert scan.od.size <= 1 and not scan.step_detected
