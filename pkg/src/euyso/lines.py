"""Forward model of measurable line positions.

RHS spin lines between the (3,4) and (5,6) ground doublets, their subsite
splitting under a b-axis field, and hole / anti-hole catalogs for spectral
hole burning.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spin import FieldVector, Levels, SpinModel, solve

RHS_LABELS = ("w45", "w35", "w46", "w36")
# (lower, upper) 1-based ground levels for each label
RHS_PAIRS = {"w45": (4, 5), "w35": (3, 5), "w46": (4, 6), "w36": (3, 6)}


def rhs_from_energies(g: np.ndarray) -> dict[str, float]:
    return {lab: float(g[b - 1] - g[a - 1]) for lab, (a, b) in RHS_PAIRS.items()}


@dataclass
class RhsLineSet:
    subsite1: dict[str, float]
    subsite2: dict[str, float]

    def residual(self, subsite: int = 1) -> float:
        """w36 - w35 - w46 + w45, zero by construction."""
        d = self.subsite1 if subsite == 1 else self.subsite2
        return d["w36"] - d["w35"] - d["w46"] + d["w45"]

    def ordered(self, subsite: int = 1) -> bool:
        d = self.subsite1 if subsite == 1 else self.subsite2
        v = [d[k] for k in RHS_LABELS]
        return all(a < b for a, b in zip(v, v[1:]))

    def to_dict(self) -> dict:
        return {
            "units": "MHz",
            "subsite1": self.subsite1,
            "subsite2": self.subsite2,
            "consistency_residual_MHz": {"subsite1": self.residual(1), "subsite2": self.residual(2)},
        }


def rhs_lines(model: SpinModel, B: FieldVector) -> RhsLineSet:
    return RhsLineSet(
        subsite1=rhs_from_energies(solve(model, B, 1).ground.energies),
        subsite2=rhs_from_energies(solve(model, B, 2).ground.energies),
    )


@dataclass
class SplitSlopes:
    slopes: dict[str, float]  # kHz/mT, d(subsite1 - subsite2)/dB_b
    crossing_b: dict[str, float]  # absolute b component (mT) where the split vanishes
    offsets: np.ndarray = field(repr=False)
    splits: dict[str, np.ndarray] = field(repr=False)


def subsite_split_slopes(model: SpinModel, B0: FieldVector, b_range: float = 5.0, n_points: int = 11) -> SplitSlopes:
    """Linear fit of the subsite split of each RHS line against the b field.

    The b component is scanned over B0.b + [-b_range, b_range].
    """
    if n_points < 3:
        raise ValueError("need at least 3 field points for a slope")
    if b_range <= 0:
        raise ValueError("b_range must be positive")
    offsets = np.linspace(-b_range, b_range, n_points)
    splits = {k: np.empty(n_points) for k in RHS_LABELS}
    for n, db in enumerate(offsets):
        lines = rhs_lines(model, FieldVector(B0.d1, B0.d2, B0.b + db))
        for k in RHS_LABELS:
            splits[k][n] = lines.subsite1[k] - lines.subsite2[k]
    slopes, crossing = {}, {}
    bvals = B0.b + offsets
    for k in RHS_LABELS:
        slope, intercept = np.polyfit(bvals, splits[k], 1)
        slopes[k] = float(slope * 1e3)
        crossing[k] = float(-intercept / slope) if slope != 0 else float("nan")
    return SplitSlopes(slopes, crossing, offsets, splits)


@dataclass
class CatalogLine:
    offset: float
    provenance: list[tuple[int, int, int, int]]


@dataclass
class ShbCatalog:
    holes: list[CatalogLine]
    antiholes: list[CatalogLine]
    mode: str
    tolerance: float
    expected: tuple[int, int]

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.holes), len(self.antiholes)

    @property
    def collisions(self) -> tuple[int, int]:
        """How many lines fewer than the generic count were resolved."""
        return self.expected[0] - len(self.holes), self.expected[1] - len(self.antiholes)

    def offsets(self, kind: str) -> np.ndarray:
        lines = self.holes if kind == "hole" else self.antiholes
        return np.array([ln.offset for ln in lines])

    def rows(self):
        for kind, lines in (("hole", self.holes), ("antihole", self.antiholes)):
            for ln in lines:
                yield (kind, ln.offset, *ln.provenance[0])


def _dedupe(entries, tol):
    """Group (offset, tag) pairs whose sorted neighbours lie within tol."""
    entries = sorted(entries, key=lambda e: e[0])
    groups: list[list] = []
    last = None
    for off, tag in entries:
        if groups and off - last <= tol:
            groups[-1].append((off, tag))
        else:
            groups.append([(off, tag)])
        last = off
    return [CatalogLine(float(np.mean([o for o, _ in grp])), [t for _, t in grp]) for grp in groups]


def hole_offset(levels: Levels, j: int, j2: int) -> float:
    e = levels.excited.energies
    return float(e[j2 - 1] - e[j - 1])


def antihole_offset(levels: Levels, i: int, j: int, i2: int, j2: int) -> float:
    """Burn on (i, j), population reappearing in i2 probed on (i2, j2)."""
    g, e = levels.ground.energies, levels.excited.energies
    return float(g[i - 1] - g[i2 - 1] + e[j2 - 1] - e[j - 1])


def catalog_from_levels(levels: Levels, mode="all", burn=None, tol: float = 1e-3) -> ShbCatalog:
    g, e = levels.ground.energies, levels.excited.energies
    r = range(1, 7)
    if mode == "all":
        holes = [(e[j2 - 1] - e[j - 1], (0, j, 0, j2)) for j in r for j2 in r]
        anti = [
            (g[i - 1] - g[i2 - 1] + e[j2 - 1] - e[j - 1], (i, j, i2, j2))
            for i in r
            for i2 in r
            if i2 != i
            for j in r
            for j2 in r
        ]
        expected = (31, 930)
    elif mode == "single":
        if burn is None:
            raise ValueError("single-class mode needs the burned transition (i, j)")
        i, j = burn
        if not (1 <= i <= 6 and 1 <= j <= 6):
            raise ValueError(f"burn transition out of range: {burn}")
        holes = [(e[j2 - 1] - e[j - 1], (i, j, i, j2)) for j2 in r]
        anti = [(g[i - 1] - g[i2 - 1] + e[j2 - 1] - e[j - 1], (i, j, i2, j2)) for i2 in r if i2 != i for j2 in r]
        expected = (6, 30)
    else:
        raise ValueError(f"mode must be 'all' or 'single', got {mode!r}")
    return ShbCatalog(_dedupe(holes, tol), _dedupe(anti, tol), mode, tol, expected)


def shb_catalog(model: SpinModel, B: FieldVector, mode="all", burn=None, tol: float = 1e-3, subsite: int = 1) -> ShbCatalog:
    """Hole and anti-hole offsets (MHz) relative to the burn frequency.

    ``mode='all'`` enumerates every frequency class resonant with the burn;
    ``mode='single'`` fixes the burned transition ``burn=(i, j)``.
    """
    return catalog_from_levels(solve(model, B, subsite), mode, burn, tol)
