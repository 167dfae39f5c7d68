import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from euyso.lines import RHS_LABELS, antihole_offset, catalog_from_levels, hole_offset, rhs_lines, shb_catalog, subsite_split_slopes
from euyso.spin import FieldVector, solve


@settings(max_examples=30, deadline=None)
@given(st.floats(-300, 300), st.floats(-300, 300), st.floats(-20, 20))
def test_rhs_consistency_identity(surrogate, d1, d2, b):
    lines = rhs_lines(surrogate, FieldVector(d1, d2, b))
    assert abs(lines.residual(1)) < 1e-9 and abs(lines.residual(2)) < 1e-9


def test_rhs_subsites_equal_in_plane(surrogate):
    lines = rhs_lines(surrogate, FieldVector(-22.7, 249.2, 0.0))
    for k in RHS_LABELS:
        assert lines.subsite1[k] == pytest.approx(lines.subsite2[k], abs=1e-9)
    assert lines.ordered(1)


def test_split_vanishes_in_plane(surrogate):
    s = subsite_split_slopes(surrogate, FieldVector(-22.4, 248.9, 0.0), b_range=2.0)
    mid = len(s.offsets) // 2
    for k in RHS_LABELS:
        assert abs(s.splits[k][mid]) < 1e-9
        assert s.crossing_b[k] == pytest.approx(0.0, abs=1e-3)
        assert abs(s.slopes[k]) > 1.0  # kHz/mT


def test_split_slope_needs_points(surrogate):
    with pytest.raises(ValueError):
        subsite_split_slopes(surrogate, FieldVector(0, 250, 0), n_points=2)


def test_generic_catalog_counts(surrogate):
    cat = shb_catalog(surrogate, FieldVector(-26.9, 227.5, 0.0))
    assert cat.counts == (31, 930)
    assert cat.collisions == (0, 0)
    assert np.min(np.abs(cat.offsets("hole"))) == 0.0


def test_single_class_catalog(levels_d2):
    cat = catalog_from_levels(levels_d2, "single", (5, 6))
    assert cat.counts == (6, 30)
    assert 0.0 in cat.offsets("hole")


def test_symmetric_field_collapses_lines(surrogate):
    # at zero field the doublets are degenerate, so many offsets coincide
    cat = shb_catalog(surrogate, FieldVector(0, 0, 0))
    assert cat.counts[0] < 31 and cat.counts[1] < 930
    assert sum(len(c.provenance) for c in cat.antiholes) == 6 * 5 * 36


def test_offsets_match_definitions(levels_d2):
    g, e = levels_d2.ground.energies, levels_d2.excited.energies
    assert hole_offset(levels_d2, 6, 2) == pytest.approx(e[1] - e[5])
    # burning (i, j) then probing (i2, j2) at the same class
    assert antihole_offset(levels_d2, 5, 6, 3, 1) == pytest.approx((e[0] - g[2]) - (e[5] - g[4]))


def test_bad_catalog_requests(levels_d2):
    with pytest.raises(ValueError):
        catalog_from_levels(levels_d2, "single")
    with pytest.raises(ValueError):
        catalog_from_levels(levels_d2, "single", (0, 3))
    with pytest.raises(ValueError):
        catalog_from_levels(levels_d2, "sometimes")
