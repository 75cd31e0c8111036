"""Reparametrizing cocycles attached to hyperbolic zeros.

For a zero ``sigma`` with neighborhood ``U`` (a ball), the cocycle is

* ``|Dphi^t u| / |u|`` for lines based at ``sigma`` itself;
* ``N(phi^t x) / N(x)`` for lines based at any other point, where
  ``N(y) = |X(y)|`` measured in the adapted metric when ``y`` is in ``U`` and
  ``N(y) = 1`` otherwise.

The adapted metric rescales the Euclidean one by
``eta = xi / |X| + 1 - xi`` with a bump ``xi`` that vanishes on the
half-radius balls around the zeros and equals 1 outside their neighborhoods,
so the adapted length of the field is ``xi + (1 - xi)|X|``.  The single
ratio formula covers every combination of "inside" and "outside" endpoints.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import Singularity
from .flow import DEFAULT_TOL, Flow, advance, registered_zero, tangent_transport
from .poincare import NormalChain, orbit_points, section_of_field
from .projective import ProjectivePoint

RADIUS_FRACTION = 0.45


class CocycleError(ValueError):
    pass


def smoothstep(s):
    """C^1 cubic ramp: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def radial_bump(x, center, radius):
    """0 on the ball of radius/2, 1 outside the ball of radius, C^1 in between."""
    rho = np.linalg.norm(np.asarray(x, float) - center, axis=-1) / radius
    return smoothstep(2.0 * rho - 1.0)


def default_radius(spec: Flow, fraction: float = RADIUS_FRACTION) -> float:
    """Common neighborhood radius for all registered zeros of ``spec``.

    ``fraction`` of the smallest pairwise distance between zeros, capped by
    half the distance from any zero to the boundary of the field's domain.
    """
    pos = np.array([s.position for s in spec.singularities])
    if pos.size == 0:
        raise CocycleError("flow has no registered singularities")
    lo, hi = spec.domain[:, 0], spec.domain[:, 1]
    to_wall = np.min(np.minimum(pos - lo, hi - pos))
    r = 0.5 * to_wall
    if len(pos) > 1:
        diff = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        r = min(r, fraction * np.min(diff[np.triu_indices(len(pos), 1)]))
    if r <= 0:
        raise CocycleError("a singularity lies on the domain boundary")
    return float(r)


@dataclass(frozen=True)
class MetricAdapter:
    """Neighborhood ``U`` of one zero and the metric adapted to the field.

    ``others`` are the centers of the balls ``V`` around the remaining zeros.
    """

    spec: Flow
    sigma: Singularity
    radius: float
    others: tuple = ()
    other_radius: float | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise CocycleError("radius must be positive")
        rv = self.radius if self.other_radius is None else self.other_radius
        object.__setattr__(self, "other_radius", float(rv))
        for c in self.others:
            if np.linalg.norm(np.asarray(c) - self.sigma.position) <= self.radius + rv:
                raise CocycleError("neighborhoods U and V must be disjoint")

    @classmethod
    def build(cls, spec: Flow, sigma: Singularity, radius: float | None = None,
              other_radius: float | None = None) -> "MetricAdapter":
        r = default_radius(spec) if radius is None else float(radius)
        others = tuple(
            s.position for s in spec.singularities if np.linalg.norm(s.position - sigma.position) > 0
        )
        return cls(spec, sigma, r, others, other_radius)

    def bump(self, x) -> np.ndarray:
        out = radial_bump(x, self.sigma.position, self.radius)
        for c in self.others:
            out = out * radial_bump(x, c, self.other_radius)
        return out

    def in_neighborhood(self, x) -> np.ndarray:
        return np.linalg.norm(np.asarray(x, float) - self.sigma.position, axis=-1) < self.radius

    def scale(self, x) -> np.ndarray:
        """eta(x); equal to 1 where the bump vanishes, including at zeros."""
        x = np.asarray(x, float)
        xi = self.bump(x)
        speed = np.linalg.norm(self.spec.evaluate(x), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(xi > 0, xi / np.where(speed > 0, speed, 1.0), 0.0)
        return ratio + 1.0 - xi

    def adapted_speed(self, x) -> np.ndarray:
        """Length of X(x) in the adapted metric."""
        x = np.asarray(x, float)
        xi = self.bump(x)
        return xi + (1.0 - xi) * np.linalg.norm(self.spec.evaluate(x), axis=-1)

    def reference(self, x) -> np.ndarray:
        """N(x): adapted speed inside U, 1 outside."""
        x = np.asarray(x, float)
        inside = self.in_neighborhood(x)
        xi = radial_bump(x, self.sigma.position, self.radius)
        speed = np.linalg.norm(self.spec.evaluate(x), axis=-1)
        return np.where(inside, xi + (1.0 - xi) * speed, 1.0)


@dataclass(frozen=True)
class CocycleMember:
    adapter: MetricAdapter
    exponent: float = 1.0

    @property
    def sigma(self) -> Singularity:
        return self.adapter.sigma


@dataclass(frozen=True)
class CocycleSpec:
    members: tuple[CocycleMember, ...] = ()
    coboundary: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        for m in self.members:
            if not np.isfinite(m.exponent):
                raise CocycleError("exponents must be finite")
            if not m.sigma.hyperbolic:
                raise CocycleError("cocycles are defined for hyperbolic singularities only")

    @classmethod
    def over(cls, spec: Flow, sigmas: Sequence[Singularity], exponents: Sequence[float] | None = None,
             radius: float | None = None, coboundary=None) -> "CocycleSpec":
        exps = [1.0] * len(sigmas) if exponents is None else list(exponents)
        members = tuple(CocycleMember(MetricAdapter.build(spec, s, radius), float(a)) for s, a in zip(sigmas, exps))
        return cls(members, coboundary)

    def names(self) -> list[str]:
        return [m.sigma.name for m in self.members]


def _same_point(a, b) -> bool:
    return bool(np.linalg.norm(np.asarray(a) - np.asarray(b)) <= 1e-14 * (1 + np.linalg.norm(b)))


def _check_base(spec: Flow, L: ProjectivePoint):
    z = registered_zero(spec, L.base)
    if z is not None and not z.hyperbolic:
        raise CocycleError("line based at a non-hyperbolic singularity")
    return z


def log_h_sigma(spec: Flow, adapter: MetricAdapter, L: ProjectivePoint, t: float,
                tol: float = DEFAULT_TOL, end=None) -> float:
    """log of the cocycle of one zero; ``end`` may pass a precomputed phi^t(x)."""
    if t == 0:
        return 0.0
    _check_base(spec, L)
    if _same_point(L.base, adapter.sigma.position):
        _, w = tangent_transport(spec, L.base, L.direction, t, tol)
        return float(np.log(np.linalg.norm(w)))
    y = advance(spec, L.base, t, tol) if end is None else end
    return float(np.log(adapter.reference(y)) - np.log(adapter.reference(L.base)))


def h_sigma(spec: Flow, adapter: MetricAdapter, L: ProjectivePoint, t: float, tol: float = DEFAULT_TOL) -> float:
    return float(np.exp(log_h_sigma(spec, adapter, L, t, tol)))


@dataclass(frozen=True)
class CocycleEvaluator:
    """h^t(L) for a :class:`CocycleSpec` on a given flow."""

    spec: Flow
    cocycle: CocycleSpec = field(default_factory=CocycleSpec)
    tol: float = DEFAULT_TOL

    def log(self, L: ProjectivePoint, t: float) -> float:
        if t == 0:
            return 0.0
        _check_base(self.spec, L)
        total = 0.0
        end = None
        needs_end = self.cocycle.coboundary is not None or any(
            not _same_point(L.base, m.sigma.position) for m in self.cocycle.members
        )
        if needs_end:
            end = advance(self.spec, L.base, t, self.tol)
        for m in self.cocycle.members:
            total += m.exponent * log_h_sigma(self.spec, m.adapter, L, t, self.tol, end)
        if self.cocycle.coboundary is not None:
            g = self.cocycle.coboundary
            total += float(np.log(g(end)) - np.log(g(L.base)))
        return total

    def __call__(self, L: ProjectivePoint, t: float) -> float:
        return float(np.exp(self.log(L, t)))

    def log_along_chain(self, chain: NormalChain, i: int, j: int) -> float:
        """log h from sample i to sample j of a chain (i <= j) without re-integrating."""
        total = 0.0
        xi, xj = chain.points[i], chain.points[j]
        for m in self.cocycle.members:
            if _same_point(xi, m.sigma.position):
                total += m.exponent * float(np.sum(chain.line_logs[i:j]))
            else:
                total += m.exponent * float(np.log(m.adapter.reference(xj)) - np.log(m.adapter.reference(xi)))
        if self.cocycle.coboundary is not None:
            g = self.cocycle.coboundary
            total += float(np.log(g(xj)) - np.log(g(xi)))
        return total

    def with_coboundary(self, g) -> "CocycleEvaluator":
        if self.cocycle.coboundary is not None:
            old = self.cocycle.coboundary
            combined = lambda x: old(x) * g(x)  # noqa: E731
        else:
            combined = g
        return CocycleEvaluator(self.spec, CocycleSpec(self.cocycle.members, combined), self.tol)


def h_product(cspec: CocycleSpec, spec: Flow, L: ProjectivePoint, t: float, tol: float = DEFAULT_TOL) -> float:
    return CocycleEvaluator(spec, cspec, tol)(L, t)


def verify_cocycle_relation(h: CocycleEvaluator, L: ProjectivePoint, t: float, s: float) -> float:
    """|log h^{t+s}(L) - log h^t(phi_P^s L) - log h^s(L)|."""
    if s == 0:
        return 0.0
    _, w = tangent_transport(h.spec, L.base, L.direction, s, h.tol)
    y = advance(h.spec, L.base, s, h.tol)
    Ls = ProjectivePoint(y, w)
    return abs(h.log(L, t + s) - h.log(Ls, t) - h.log(L, s))


def coboundary(g: Callable, spec: Flow, L: ProjectivePoint, t: float, tol: float = DEFAULT_TOL) -> float:
    """g(phi_P^t L) / g(L) for g a positive function of the base point."""
    g0 = float(g(L.base))
    y = advance(spec, L.base, t, tol)
    g1 = float(g(y))
    if g0 <= 0 or g1 <= 0:
        raise CocycleError("coboundary function must be positive")
    return g1 / g0


def oscillation_of_log(g: Callable, points) -> float:
    vals = np.log(np.array([float(g(p)) for p in points]))
    return float(vals.max() - vals.min())


def comparison_function(a: MetricAdapter, b: MetricAdapter) -> Callable:
    """Function whose coboundary turns the cocycle of ``a`` into that of ``b``."""

    def g(x):
        return b.reference(x) / a.reference(x)

    return g


def period_value(h: CocycleEvaluator, gamma0, period: float, dt: float = 0.01) -> float:
    """h over one period at the line spanned by the field at gamma0.

    The orbit must stay outside every neighborhood of the cocycle.
    """
    if not h.cocycle.members and h.cocycle.coboundary is None:
        return 1.0
    pts = orbit_points(h.spec, gamma0, period, dt, h.tol)
    for m in h.cocycle.members:
        if np.any(m.adapter.in_neighborhood(pts)):
            raise CocycleError(f"periodic orbit enters the neighborhood of {m.sigma.name or 'a singularity'}")
    return h(section_of_field(h.spec, gamma0), period)


def write_trace(path, spec: Flow, L: ProjectivePoint, h_E: CocycleEvaluator, h_F: CocycleEvaluator,
                t_final: float, dt: float = 0.5) -> None:
    """CSV with t, log h_E, log h_F, base point and distance to the nearest zero."""
    pts = orbit_points(spec, L.base, t_final, dt, h_E.tol)
    zeros = np.array([s.position for s in spec.singularities]) if spec.singularities else None
    d = spec.dimension
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "log_h_E", "log_h_F"] + [f"x_{i + 1}" for i in range(d)] + ["dist_sing"])
        for k, p in enumerate(pts):
            t = k * dt * np.sign(t_final) if k < len(pts) - 1 else t_final
            le = h_E.log(L, t)
            lf = h_F.log(L, t)
            dist = float(np.min(np.linalg.norm(zeros - p, axis=1))) if zeros is not None else float("inf")
            w.writerow([repr(float(t)), repr(le), repr(lf)] + [repr(float(v)) for v in p] + [repr(dist)])
