"""Linear Poincare flow on the normal bundle, and its extension over lines.

A normal vector at a line ``L = span(u)`` is represented by its orthogonal
representative ``n`` (``n . u = 0``).  The extended flow transports
``(x, u, n)`` by the tangent flow and projects the image of ``n`` onto the
hyperplane orthogonal to the image of ``u``.  Because the projection
``P_{u''} Dphi^t P_{u'} = P_{u''} Dphi^t`` composes, projecting once per
re-orthonormalization interval gives the same result as projecting
continuously.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .flow import DEFAULT_TOL, QR_INTERVAL, Flow, advance, registered_zero, tangent_transport
from .projective import NormalVector, ProjectivePoint

SING_TOL = 1e-8

__all__ = [
    "AtSingularityError",
    "NearSingularWarning",
    "NormalChain",
    "NormalVector",
    "ProjectivePoint",
    "SING_TOL",
    "extended_lpf",
    "growth_rate",
    "lpf",
    "normal_chain",
    "section_of_field",
]


class AtSingularityError(ValueError):
    pass


class NearSingularWarning(RuntimeWarning):
    pass


def section_of_field(spec: Flow, x, sing_tol: float = SING_TOL) -> ProjectivePoint:
    """The line spanned by the field at a regular point."""
    x = np.asarray(x, dtype=float)
    v = spec.evaluate(x)
    if not np.all(np.isfinite(v)) or np.linalg.norm(v) <= sing_tol:
        raise AtSingularityError(f"field vanishes at {x.tolist()}")
    return ProjectivePoint(x, v)


def _split_times(t: float, dt: float) -> list[float]:
    steps = int(np.ceil(abs(t) / dt - 1e-12))
    sgn = 1.0 if t >= 0 else -1.0
    return [sgn * min(dt, abs(t) - i * dt) for i in range(steps)]


def _psi_step(spec: Flow, x, u, N, h: float, tol: float):
    y, W = tangent_transport(spec, x, np.column_stack([u, N]), h, tol)
    w = W[:, 0]
    u1 = w / np.linalg.norm(w)
    M = W[:, 1:]
    return y, u1, M - np.outer(u1, u1 @ M), np.linalg.norm(w)


def extended_lpf(spec: Flow, n: NormalVector, t: float, tol: float = DEFAULT_TOL,
                 dt: float = QR_INTERVAL) -> NormalVector:
    # transport a whole normal frame so the step sequence does not depend on n
    x, u = n.anchor.base, n.anchor.direction
    N = n.anchor.normal_basis()
    coords = N.T @ n.rep
    for h in _split_times(t, dt):
        x, u, N, _ = _psi_step(spec, x, u, N, h, tol)
    return NormalVector(ProjectivePoint(x, u), N @ coords)


def lpf(spec: Flow, x, n, t: float, tol: float = DEFAULT_TOL, sing_tol: float = SING_TOL,
        dt: float = QR_INTERVAL) -> NormalVector:
    """Linear Poincare flow at a regular point; ``n`` must be orthogonal to the field."""
    L = section_of_field(spec, x, sing_tol)
    n = np.asarray(n, dtype=float)
    if abs(n @ L.direction) > 1e-9 * max(1.0, np.linalg.norm(n)):
        raise ValueError("normal vector must be orthogonal to the field")
    out = NormalVector(L, n)
    near = False
    for h in _split_times(t, dt):
        out = extended_lpf(spec, out, h, tol, dt)
        if np.linalg.norm(spec.evaluate(out.anchor.base)) <= sing_tol * 1e3:
            near = True
    if near:
        warnings.warn("orbit passes close to a singularity", NearSingularWarning, stacklevel=2)
    return out


def growth_rate(n_in, n_out, t: float) -> float:
    """(1/t) log(|out| / |in|)."""
    if t == 0:
        raise ValueError("t must be non-zero")
    a = n_in.norm if isinstance(n_in, NormalVector) else float(np.linalg.norm(n_in))
    b = n_out.norm if isinstance(n_out, NormalVector) else float(np.linalg.norm(n_out))
    if a == 0.0:
        raise ValueError("zero input vector")
    return float(np.log(b / a) / t)


@dataclass(frozen=True)
class NormalChain:
    """Extended linear Poincare flow along a sampled orbit, in orthonormal normal frames.

    ``steps[j]`` is the (d-1)x(d-1) matrix of psi_N from sample ``j`` to
    sample ``j+1`` in the bases ``bases[j]`` and ``bases[j+1]``;
    ``line_logs[j]`` is log|Dphi u_j| over the same step (the scalar flow
    along the line).  ``origin`` is the index of time zero.
    """

    times: np.ndarray
    points: np.ndarray
    directions: np.ndarray
    bases: np.ndarray
    steps: np.ndarray
    line_logs: np.ndarray
    origin: int

    def __len__(self) -> int:
        return self.times.size

    def line(self, j: int) -> ProjectivePoint:
        return ProjectivePoint(self.points[j], self.directions[j])

    def transport(self, i: int, j: int, v) -> np.ndarray:
        """Coordinates of psi_N from sample i to j (i <= j) applied to coordinates v."""
        v = np.asarray(v, float)
        for k in range(i, j):
            v = self.steps[k] @ v
        return v


def _on_field_line(spec: Flow, L: ProjectivePoint) -> bool:
    if registered_zero(spec, L.base) is not None:
        return False
    v = spec.evaluate(L.base)
    nv = np.linalg.norm(v)
    return bool(nv > SING_TOL and np.linalg.norm(v / nv - (v / nv @ L.direction) * L.direction) < 1e-8)


def normal_chain(spec: Flow, L: ProjectivePoint, t_before: float, t_after: float,
                 dt: float = QR_INTERVAL, tol: float = DEFAULT_TOL) -> NormalChain:
    """Sample the orbit of ``L`` on ``[-t_before, t_after]`` and record psi_N step matrices.

    When ``L`` is the field line at a regular point, every sample's line is
    reset to the field there.  The field direction is invariant but not
    attracting for the projective flow, so a transported copy drifts toward
    the most expanded direction at the rate of the top exponent.

    Raises :class:`multising.flow.EscapedError` when the orbit leaves the
    domain in that window.
    """
    d = L.dimension
    field_line = _on_field_line(spec, L)

    def line_at(y, w):
        return ProjectivePoint(y, spec.evaluate(y) if field_line else w)

    back = [L]
    for h in _split_times(-t_before, dt):
        prev = back[-1]
        y, w = tangent_transport(spec, prev.base, prev.direction, h, tol)
        back.append(line_at(y, w))
    lines = back[::-1]
    bases = [ln.normal_basis() for ln in lines]
    steps, logs = [], []
    for j in range(len(lines) - 1):
        h = -_split_times(-t_before, dt)[len(lines) - 2 - j]
        _, W = tangent_transport(spec, lines[j].base, np.column_stack([lines[j].direction, bases[j]]), h, tol)
        steps.append(bases[j + 1].T @ W[:, 1:])
        logs.append(np.log(np.linalg.norm(W[:, 0])))
    for h in _split_times(t_after, dt):
        prev = lines[-1]
        y, W = tangent_transport(spec, prev.base, np.column_stack([prev.direction, bases[-1]]), h, tol)
        nxt = line_at(y, W[:, 0])
        lines.append(nxt)
        bases.append(nxt.normal_basis())
        steps.append(_project_normal(W, nxt, bases[-1]))
        logs.append(np.log(np.linalg.norm(W[:, 0])))
    tb = -np.cumsum([0.0] + [abs(h) for h in _split_times(-t_before, dt)])[::-1]
    ta = np.cumsum([0.0] + _split_times(t_after, dt))[1:]
    return NormalChain(
        np.concatenate([tb, ta]),
        np.array([ln.base for ln in lines]),
        np.array([ln.direction for ln in lines]),
        np.array(bases),
        np.array(steps).reshape(len(steps), d - 1, d - 1),
        np.array(logs),
        len(back) - 1,
    )


def _project_normal(W: np.ndarray, line: ProjectivePoint, basis: np.ndarray) -> np.ndarray:
    """Normal-frame matrix of the images ``W[:, 1:]`` projected along the image line ``W[:, 0]``.

    The projection is oblique when the stored line was reset to the field,
    so that psi_N stays the quotient map modulo the transported line.
    """
    w = W[:, 0]
    M = W[:, 1:]
    if abs(w @ line.direction) >= np.linalg.norm(w) * (1 - 1e-15):
        return basis.T @ M
    # decompose M = w a + basis c and keep c
    coords = np.linalg.lstsq(np.column_stack([w, basis]), M, rcond=None)[0]
    return coords[1:]


def forward_chain(spec: Flow, L: ProjectivePoint, t_total: float, dt: float = QR_INTERVAL,
                  tol: float = DEFAULT_TOL) -> NormalChain:
    """A chain sampled forward only; earlier samples serve as the past of later ones."""
    return normal_chain(spec, L, 0.0, t_total, dt, tol)


def is_at_zero(spec: Flow, L: ProjectivePoint) -> bool:
    return registered_zero(spec, L.base) is not None


def orbit_points(spec: Flow, x, t: float, dt: float = 0.05, tol: float = DEFAULT_TOL) -> np.ndarray:
    pts = [np.asarray(x, float)]
    for h in _split_times(t, dt):
        pts.append(advance(spec, pts[-1], h, tol))
    return np.array(pts)
