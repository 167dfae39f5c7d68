"""Effective nuclear-spin Hamiltonians for an I = 5/2 non-Kramers ion.

Conventions used throughout the package:

* quadrupole tensors ``Q`` in MHz, Zeeman tensors ``M`` in MHz/T,
* magnetic fields in mT, in the (D1, D2, b) crystal frame,
* every energy or frequency in MHz,
* level labels are 1-based (``|1_g>`` ... ``|6_g>``), arrays are 0-based.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPIN = 2.5
DIM = 6

EXPECTED_UNITS = {"Q": "MHz", "M": "MHz_per_T", "B": "mT"}


class ConfigError(ValueError):
    """Raised for malformed tensors, fields or model files."""


def spin_operators(spin: float = SPIN) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (Ix, Iy, Iz) in the |m> basis ordered m = I, I-1, ..., -I."""
    m = np.arange(spin, -spin - 1, -1)
    dim = len(m)
    # <m+1| I+ |m> = sqrt(I(I+1) - m(m+1)) sits one row above the diagonal
    raise_op = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        raise_op[k - 1, k] = np.sqrt(spin * (spin + 1) - m[k] * (m[k] + 1))
    lower_op = raise_op.conj().T
    ix = (raise_op + lower_op) / 2
    iy = (raise_op - lower_op) / 2j
    iz = np.diag(m).astype(complex)
    return ix, iy, iz


_IVEC = np.array(spin_operators())


def euler_zyz(alpha_deg: float, beta_deg: float, gamma_deg: float) -> np.ndarray:
    """Active ZYZ rotation R = Rz(alpha) Ry(beta) Rz(gamma)."""
    a, b, c = np.deg2rad([alpha_deg, beta_deg, gamma_deg])

    def rz(t):
        return np.array([[np.cos(t), -np.sin(t), 0.0], [np.sin(t), np.cos(t), 0.0], [0.0, 0.0, 1.0]])

    def ry(t):
        return np.array([[np.cos(t), 0.0, np.sin(t)], [0.0, 1.0, 0.0], [-np.sin(t), 0.0, np.cos(t)]])

    return rz(a) @ ry(b) @ rz(c)


@dataclass(frozen=True)
class Tensor3:
    """A real symmetric 3x3 tensor in the crystal frame.

    Build it with :meth:`from_principal` when the literature quotes principal
    values and ZYZ Euler angles; the matrix is then ``R diag(p) R^T``.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ConfigError(f"tensor must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ConfigError("tensor has non-finite entries")
        scale = max(np.abs(m).max(), 1.0)
        asym = np.abs(m - m.T).max()
        if asym > 1e-9 * scale:
            raise ConfigError(f"tensor is not symmetric (max |T - T^T| = {asym:.3g})")
        m = (m + m.T) / 2
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_principal(cls, principal, euler_deg) -> "Tensor3":
        r = euler_zyz(*euler_deg)
        return cls(r @ np.diag(np.asarray(principal, dtype=float)) @ r.T)

    @classmethod
    def zero(cls) -> "Tensor3":
        return cls(np.zeros((3, 3)))

    @classmethod
    def from_dict(cls, d: dict) -> "Tensor3":
        if "matrix" in d:
            return cls(np.asarray(d["matrix"], dtype=float))
        if "principal" in d and "euler_deg" in d:
            p, e = d["principal"], d["euler_deg"]
            if len(p) != 3 or len(e) != 3:
                raise ConfigError("'principal' and 'euler_deg' need three values each")
            return cls.from_principal(p, e)
        raise ConfigError("tensor needs either 'matrix' or 'principal' + 'euler_deg'")

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist()}

    def rotated(self, r: np.ndarray) -> "Tensor3":
        return Tensor3(r @ self.matrix @ r.T)


# pi rotation about b relates the two magnetic subsites
C2_B = np.diag([-1.0, -1.0, 1.0])


@dataclass(frozen=True)
class SpinModel:
    ground_Q: Tensor3
    ground_M: Tensor3
    excited_Q: Tensor3
    excited_M: Tensor3
    name: str = ""

    def subsite(self, which: int) -> "SpinModel":
        if which == 1:
            return self
        if which == 2:
            return subsite_transform(self)
        raise ValueError(f"subsite must be 1 or 2, got {which}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "units": dict(EXPECTED_UNITS),
            "ground": {"Q": self.ground_Q.to_dict(), "M": self.ground_M.to_dict()},
            "excited": {"Q": self.excited_Q.to_dict(), "M": self.excited_M.to_dict()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpinModel":
        units = d.get("units")
        if units is None:
            raise ConfigError("model config is missing the 'units' block")
        for key, want in EXPECTED_UNITS.items():
            got = units.get(key)
            if got != want:
                raise ConfigError(f"units.{key} must be {want!r}, got {got!r}")
        tensors = {}
        for state in ("ground", "excited"):
            if state not in d:
                raise ConfigError(f"model config is missing the '{state}' block")
            for t in ("Q", "M"):
                if t not in d[state]:
                    raise ConfigError(f"model config is missing '{state}.{t}'")
                try:
                    tensors[f"{state}_{t}"] = Tensor3.from_dict(d[state][t])
                except ConfigError as exc:
                    raise ConfigError(f"{state}.{t}: {exc}") from None
        return cls(name=d.get("name", ""), **tensors)


def load_model(path) -> SpinModel:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        return SpinModel.from_dict(d)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def subsite_transform(model: SpinModel) -> SpinModel:
    """Tensors of the other magnetic subsite (C2 rotation about b)."""
    return SpinModel(
        ground_Q=model.ground_Q.rotated(C2_B),
        ground_M=model.ground_M.rotated(C2_B),
        excited_Q=model.excited_Q.rotated(C2_B),
        excited_M=model.excited_M.rotated(C2_B),
        name=model.name,
    )


@dataclass(frozen=True)
class FieldVector:
    """Magnetic field in mT, crystal frame (D1, D2, b)."""

    d1: float
    d2: float
    b: float

    @classmethod
    def from_spherical(cls, magnitude: float, phi_deg: float, theta_deg: float) -> "FieldVector":
        phi, theta = np.deg2rad(phi_deg), np.deg2rad(theta_deg)
        return cls(
            magnitude * np.cos(phi) * np.sin(theta),
            magnitude * np.sin(phi) * np.sin(theta),
            magnitude * np.cos(theta),
        )

    @classmethod
    def parse(cls, text: str) -> "FieldVector":
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 3:
            raise ConfigError(f"field must be 'bx,by,bz' in mT, got {text!r}")
        return cls(*(float(p) for p in parts))

    def as_array(self) -> np.ndarray:
        return np.array([self.d1, self.d2, self.b], dtype=float)

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def spherical(self) -> tuple[float, float, float]:
        return spherical(self)


def spherical(B: FieldVector) -> tuple[float, float, float]:
    """(|B| mT, phi deg, theta deg); phi from D1 towards D2, theta from b.

    phi is reported as 0 when the field lies along b.
    """
    v = B.as_array()
    r = float(np.linalg.norm(v))
    if r == 0.0:
        raise ValueError("spherical angles are undefined for a zero field")
    theta = float(np.degrees(np.arccos(np.clip(v[2] / r, -1.0, 1.0))))
    if np.hypot(v[0], v[1]) <= 1e-15 * r:
        phi = 0.0
    else:
        phi = float(np.degrees(np.arctan2(v[1], v[0]))) % 360.0
    return r, phi, theta


def build_hamiltonian(Q: Tensor3, M: Tensor3, B: FieldVector) -> np.ndarray:
    """H = I.Q.I + B.M.I in MHz (B converted from mT to T)."""
    q = Q.matrix
    b_tesla = B.as_array() * 1e-3
    h = np.einsum("ab,aij,bjk->ik", q, _IVEC, _IVEC)
    h = h + np.einsum("a,ab,bij->ij", b_tesla, M.matrix, _IVEC)
    return (h + h.conj().T) / 2


@dataclass(frozen=True)
class LevelManifold:
    """Six hyperfine levels of one electronic state.

    ``energies`` ascend and start at zero; ``vectors[:, k]`` belongs to
    ``energies[k]``.
    """

    energies: np.ndarray
    vectors: np.ndarray
    offset: float = 0.0  # eigenvalue subtracted to put the lowest level at 0

    def gaps(self) -> np.ndarray:
        return np.diff(self.energies)


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        mag = np.abs(col)
        # ties resolved towards the lowest index
        idx = int(np.flatnonzero(mag >= mag.max() - 1e-12)[0])
        out[:, k] = col * (abs(col[idx]) / col[idx])
    return out


def diagonalize(H: np.ndarray) -> LevelManifold:
    H = np.asarray(H, dtype=complex)
    w, v = np.linalg.eigh(H)
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    offset = float(w[0])
    energies = w - offset
    energies[0] = 0.0
    energies.setflags(write=False)
    vectors = _fix_phases(v)
    vectors.setflags(write=False)
    return LevelManifold(energies=energies, vectors=vectors, offset=offset)


@dataclass(frozen=True)
class Levels:
    """Ground and excited manifolds for one subsite at one field."""

    ground: LevelManifold
    excited: LevelManifold
    field: FieldVector | None = None
    subsite: int = 1

    def transition_offsets(self) -> np.ndarray:
        """6x6 array of e_j - g_i, i.e. T_ij at zero detuning."""
        return self.excited.energies[None, :] - self.ground.energies[:, None]

    def branching(self) -> np.ndarray:
        return branching_matrix(self.ground, self.excited)


def solve(model: SpinModel, B: FieldVector, subsite: int = 1) -> Levels:
    m = model.subsite(subsite)
    ground = diagonalize(build_hamiltonian(m.ground_Q, m.ground_M, B))
    excited = diagonalize(build_hamiltonian(m.excited_Q, m.excited_M, B))
    return Levels(ground=ground, excited=excited, field=B, subsite=subsite)


def transition_frequency(i: int, j: int, delta: float, levels: Levels) -> float:
    """T_ij(delta) = e_j - g_i + delta with 1-based level labels."""
    if not (1 <= i <= DIM and 1 <= j <= DIM):
        raise IndexError(f"level labels must be in 1..6, got ({i}, {j})")
    return float(levels.excited.energies[j - 1] - levels.ground.energies[i - 1] + delta)


def branching_matrix(ground: LevelManifold, excited: LevelManifold) -> np.ndarray:
    """gamma[i, j] = |<j_e|i_g>|^2, rows ground, columns excited."""
    overlap = ground.vectors.conj().T @ excited.vectors
    return np.abs(overlap) ** 2


def zero_field_doublet_gaps(manifold: LevelManifold) -> tuple[float, float]:
    """Gaps between the doublet centres (1,2)-(3,4) and (3,4)-(5,6)."""
    e = manifold.energies
    c = [(e[0] + e[1]) / 2, (e[2] + e[3]) / 2, (e[4] + e[5]) / 2]
    return float(c[1] - c[0]), float(c[2] - c[1])


def parse_transition(label: str) -> tuple[int, int]:
    """'5g-6e' -> (5, 6)."""
    try:
        g, e = label.strip().lower().split("-")
        if not (g.endswith("g") and e.endswith("e")):
            raise ValueError
        i, j = int(g[:-1]), int(e[:-1])
    except ValueError:
        raise ConfigError(f"transition label must look like '5g-6e', got {label!r}") from None
    if not (1 <= i <= DIM and 1 <= j <= DIM):
        raise ConfigError(f"transition label out of range: {label!r}")
    return i, j


def format_transition(i: int, j: int) -> str:
    return f"{i}g-{j}e"
