"""Points of the projective tangent bundle and vectors of its normal bundle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGN_TOL = 1e-12


def canonical_direction(u) -> np.ndarray:
    """Unit vector spanning the same line, first non-negligible coordinate positive."""
    u = np.asarray(u, dtype=float)
    norm = np.linalg.norm(u)
    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError("a line needs a non-zero finite direction vector")
    u = u / norm
    big = np.flatnonzero(np.abs(u) > SIGN_TOL)
    if u[big[0]] < 0:
        u = -u
    return u


@dataclass(frozen=True)
class ProjectivePoint:
    """A line ``span(direction)`` in the tangent space at ``base``."""

    base: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float).copy())
        object.__setattr__(self, "direction", canonical_direction(self.direction))

    @property
    def dimension(self) -> int:
        return self.base.size

    def normal_basis(self) -> np.ndarray:
        """Orthonormal d x (d-1) basis of the orthogonal complement of the line."""
        q, _ = np.linalg.qr(np.column_stack([self.direction, np.eye(self.dimension)]))
        return q[:, 1:]

    def distance(self, other: "ProjectivePoint") -> float:
        """Base distance plus the sine of the angle between the lines."""
        c = abs(float(self.direction @ other.direction))
        return float(np.linalg.norm(self.base - other.base) + np.sqrt(max(0.0, 1.0 - c * c)))


@dataclass(frozen=True)
class NormalVector:
    """Class of ``rep`` in the quotient of the tangent space by the anchor line.

    The representative is kept orthogonal to the line.
    """

    anchor: ProjectivePoint
    rep: np.ndarray

    def __post_init__(self):
        u = self.anchor.direction
        n = np.asarray(self.rep, dtype=float)
        object.__setattr__(self, "rep", n - (n @ u) * u)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.rep))
