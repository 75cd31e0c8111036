"""Vector fields, their Jacobians and registries of hyperbolic zeros.

Two kinds of flows live here:

* :class:`VectorFieldSpec` -- a smooth field on an axis-aligned box of R^d,
  evaluated in a vectorized way (leading axes are batch axes).
* :class:`GluedChartFlow` -- linear charts ``y' = A_i y`` pasted together by
  affine facet maps.  Orbits inside charts are propagated with exact matrix
  exponentials (see :mod:`multising.flow`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

ZERO_TOL = 1e-9
FD_STEP = 1e-6


class FieldError(ValueError):
    pass


def finite_difference_jacobian(f: Callable, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences with step ``step * (1 + |x|)``; batch axes allowed."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = step * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        cols.append((f(x + h * e) - f(x - h * e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class Singularity:
    position: np.ndarray
    eigenvalues: np.ndarray
    index: int
    hyperbolic: bool
    name: str = ""

    @classmethod
    def from_jacobian(cls, position, jac, name: str = "", zero_tol: float = ZERO_TOL) -> "Singularity":
        ev = np.linalg.eigvals(np.asarray(jac, dtype=float))
        ev = ev[np.lexsort((ev.imag, ev.real))]
        index = int(np.sum(ev.real < -zero_tol))
        hyperbolic = bool(np.all(np.abs(ev.real) > zero_tol))
        return cls(np.asarray(position, dtype=float), ev, index, hyperbolic, name)

    @property
    def real_parts(self) -> np.ndarray:
        return self.eigenvalues.real


@dataclass(frozen=True)
class VectorFieldSpec:
    dimension: int
    evaluate_fn: Callable[[np.ndarray], np.ndarray]
    domain: np.ndarray
    jacobian_fn: Callable[[np.ndarray], np.ndarray] | None = None
    singularities: tuple[Singularity, ...] = ()
    name: str = "field"
    linear: np.ndarray | None = None
    fd_step: float = FD_STEP
    params: dict = field(default_factory=dict)

    def evaluate(self, x) -> np.ndarray:
        return self.evaluate_fn(np.asarray(x, dtype=float))

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jacobian_fn is not None:
            return self.jacobian_fn(x)
        return finite_difference_jacobian(self.evaluate_fn, x, self.fd_step)

    def contains(self, x) -> np.ndarray | bool:
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def reversed(self) -> "VectorFieldSpec":
        f, J = self.evaluate_fn, self.jacobian_fn
        sings = tuple(
            Singularity.from_jacobian(s.position, -self.jacobian(s.position), s.name) for s in self.singularities
        )
        return VectorFieldSpec(
            dimension=self.dimension,
            evaluate_fn=lambda x: -f(x),
            domain=self.domain,
            jacobian_fn=None if J is None else (lambda x: -J(x)),
            singularities=sings,
            name=f"-{self.name}",
            linear=None if self.linear is None else -self.linear,
            fd_step=self.fd_step,
            params=dict(self.params),
        )


def _box(domain, d: int) -> np.ndarray:
    box = np.asarray(domain, dtype=float).reshape(d, 2)
    if np.any(box[:, 0] >= box[:, 1]):
        raise FieldError("domain box must have lo < hi on every axis")
    return box


def register_singularity(spec: VectorFieldSpec, seed, name: str = "", tol: float = 1e-12) -> Singularity:
    """Newton-refine a zero of the field from ``seed`` and classify it."""
    sol = optimize.root(lambda x: spec.evaluate(x), np.asarray(seed, float), jac=lambda x: spec.jacobian(x), tol=tol)
    if not sol.success or np.linalg.norm(spec.evaluate(sol.x)) > 1e-10:
        raise FieldError(f"no zero found near seed {list(seed)}")
    return Singularity.from_jacobian(sol.x, spec.jacobian(sol.x), name)


def with_singularities(spec: VectorFieldSpec, seeds: Sequence, names: Sequence[str] | None = None) -> VectorFieldSpec:
    names = list(names) if names is not None else [f"s{i}" for i in range(len(seeds))]
    sings = tuple(register_singularity(spec, s, n) for s, n in zip(seeds, names))
    return VectorFieldSpec(
        spec.dimension, spec.evaluate_fn, spec.domain, spec.jacobian_fn, sings, spec.name, spec.linear,
        spec.fd_step, dict(spec.params),
    )


# ---------------------------------------------------------------------------
# builtins


def builtin_linear(A, domain=None, name: str = "linear") -> VectorFieldSpec:
    A = np.array(A, dtype=float, ndmin=2)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise FieldError("A must be a square matrix")
    if not np.all(np.isfinite(A)):
        raise FieldError("A has non-finite entries")
    d = A.shape[0]
    if domain is None:
        domain = [[-1e3, 1e3]] * d
    sing = Singularity.from_jacobian(np.zeros(d), A, "origin")
    return VectorFieldSpec(
        dimension=d,
        evaluate_fn=lambda x: x @ A.T,
        jacobian_fn=lambda x: np.broadcast_to(A, x.shape[:-1] + (d, d)).copy(),
        domain=_box(domain, d),
        singularities=(sing,),
        name=name,
        linear=A,
    )


def builtin_lorenz(sigma_p: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0, domain=None) -> VectorFieldSpec:
    if min(sigma_p, rho, beta) <= 0:
        raise FieldError("Lorenz parameters must be positive")
    if domain is None:
        domain = [[-50.0, 50.0], [-60.0, 60.0], [-20.0, 80.0]]

    def f(x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([sigma_p * (Y - X), X * (rho - Z) - Y, X * Y - beta * Z], axis=-1)

    def J(x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        out = np.zeros(x.shape[:-1] + (3, 3))
        out[..., 0, 0] = -sigma_p
        out[..., 0, 1] = sigma_p
        out[..., 1, 0] = rho - Z
        out[..., 1, 1] = -1.0
        out[..., 1, 2] = -X
        out[..., 2, 0] = Y
        out[..., 2, 1] = X
        out[..., 2, 2] = -beta
        return out

    origin = Singularity.from_jacobian(np.zeros(3), J(np.zeros(3)), "origin")
    return VectorFieldSpec(
        3, f, _box(domain, 3), J, (origin,), "lorenz",
        params={"sigma": sigma_p, "rho": rho, "beta": beta},
    )


def builtin_limit_cycle(domain=None) -> VectorFieldSpec:
    """r' = r(1 - r^2), theta' = 1 in Cartesian coordinates."""
    if domain is None:
        domain = [[-3.0, 3.0], [-3.0, 3.0]]

    def f(x):
        X, Y = x[..., 0], x[..., 1]
        g = 1.0 - X * X - Y * Y
        return np.stack([X * g - Y, Y * g + X], axis=-1)

    def J(x):
        X, Y = x[..., 0], x[..., 1]
        g = 1.0 - X * X - Y * Y
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = g - 2 * X * X
        out[..., 0, 1] = -2 * X * Y - 1.0
        out[..., 1, 0] = -2 * X * Y + 1.0
        out[..., 1, 1] = g - 2 * Y * Y
        return out

    origin = Singularity.from_jacobian(np.zeros(2), J(np.zeros(2)), "origin")
    return VectorFieldSpec(2, f, _box(domain, 2), J, (origin,), "limit-cycle")


def builtin_double_well(domain=None) -> VectorFieldSpec:
    """Gradient flow of V = (x^2 - 1)^2 / 4 + y^2 / 2: two sinks and a saddle."""
    if domain is None:
        domain = [[-3.0, 3.0], [-3.0, 3.0]]

    def f(x):
        X, Y = x[..., 0], x[..., 1]
        return np.stack([X - X ** 3, -Y], axis=-1)

    def J(x):
        X = x[..., 0]
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0 - 3.0 * X * X
        out[..., 1, 1] = -1.0
        return out

    sings = tuple(
        Singularity.from_jacobian(p, J(np.asarray(p, float)), n)
        for p, n in (([-1.0, 0.0], "left"), ([0.0, 0.0], "saddle"), ([1.0, 0.0], "right"))
    )
    return VectorFieldSpec(2, f, _box(domain, 2), J, sings, "double-well")


def builtin_constant(v, domain=None) -> VectorFieldSpec:
    v = np.asarray(v, dtype=float)
    d = v.size
    if domain is None:
        domain = [[-1e3, 1e3]] * d
    return VectorFieldSpec(
        d,
        lambda x: np.broadcast_to(v, np.shape(x)).copy(),
        _box(domain, d),
        lambda x: np.zeros(np.shape(x)[:-1] + (d, d)),
        (),
        "constant",
    )


# ---------------------------------------------------------------------------
# chart-glued flows


@dataclass(frozen=True)
class Chart:
    center: np.ndarray
    half_widths: np.ndarray
    matrix: np.ndarray
    name: str = ""

    def local(self, x):
        return np.asarray(x, float) - self.center

    def contains_local(self, y, slack: float = 1e-12):
        return np.all(np.abs(y) <= self.half_widths * (1 + slack), axis=-1)

    @property
    def diagonal(self) -> bool:
        A = self.matrix
        return bool(np.allclose(A, np.diag(np.diag(A)), atol=0.0))


@dataclass(frozen=True)
class Transition:
    """Affine map from the exit facet ``y[axis] = sign*h`` of ``source`` onto
    the entry facet ``z[target_axis] = target_sign*h'`` of ``target``.

    ``facet_matrix`` and ``offset`` act on the remaining coordinates, kept in
    increasing axis order.
    """

    source: int
    axis: int
    sign: int
    target: int
    target_axis: int
    target_sign: int
    facet_matrix: np.ndarray
    offset: np.ndarray


@dataclass(frozen=True)
class Segment:
    """Part of a declared connection inside one chart, in local coordinates.

    ``entry is None`` means the segment leaves the chart's zero; ``exit is
    None`` means it falls into it.
    """

    chart: int
    entry: np.ndarray | None
    exit: np.ndarray | None

    def point(self, s: float) -> np.ndarray:
        """Local point at parameter ``s`` in (0, 1] scaled along the axis ray."""
        ray = self.exit if self.exit is not None else self.entry
        return np.asarray(ray, float) * s


@dataclass(frozen=True)
class Connection:
    name: str
    segments: tuple[Segment, ...]


def _others(d: int, axis: int) -> list[int]:
    return [k for k in range(d) if k != axis]


@dataclass(frozen=True)
class GluedChartFlow:
    charts: tuple[Chart, ...]
    transitions: tuple[Transition, ...]
    connections: tuple[Connection, ...] = ()
    name: str = "glued"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.dimension
        for tr in self.transitions:
            fm = np.asarray(tr.facet_matrix, float)
            if fm.shape != (d - 1, d - 1):
                raise FieldError("facet_matrix must be (d-1)x(d-1)")
            if abs(np.linalg.det(fm)) < 1e-12:
                raise FieldError("facet map must be invertible")

    @property
    def dimension(self) -> int:
        return int(self.charts[0].center.size)

    @property
    def linear(self):
        return None

    @property
    def domain(self) -> np.ndarray:
        lo = np.min([c.center - c.half_widths for c in self.charts], axis=0)
        hi = np.max([c.center + c.half_widths for c in self.charts], axis=0)
        return np.stack([lo, hi], axis=1)

    @property
    def singularities(self) -> tuple[Singularity, ...]:
        out = []
        for i, c in enumerate(self.charts):
            if abs(np.linalg.det(c.matrix)) > 0:
                out.append(Singularity.from_jacobian(c.center, c.matrix, c.name or f"sigma{i}"))
        return tuple(out)

    def chart_of(self, x) -> np.ndarray:
        """Chart index per point (-1 outside every chart)."""
        x = np.asarray(x, float)
        idx = np.full(x.shape[:-1], -1, dtype=int)
        for i, c in enumerate(self.charts):
            inside = c.contains_local(x - c.center) & (idx < 0)
            idx = np.where(inside, i, idx)
        return idx

    def contains(self, x):
        return self.chart_of(x) >= 0

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        idx = self.chart_of(x)
        out = np.full(x.shape, np.nan)
        for i, c in enumerate(self.charts):
            m = idx == i
            if np.any(m):
                out[m] = (x[m] - c.center) @ c.matrix.T
        return out

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        d = self.dimension
        idx = self.chart_of(x)
        out = np.full(x.shape[:-1] + (d, d), np.nan)
        for i, c in enumerate(self.charts):
            m = idx == i
            if np.any(m):
                out[m] = c.matrix
        return out

    def exit_transition(self, chart: int, axis: int, sign: int) -> Transition | None:
        for tr in self.transitions:
            if tr.source == chart and tr.axis == axis and tr.sign == sign:
                return tr
        return None

    def entry_transitions(self, chart: int, axis: int, sign: int) -> list[Transition]:
        return [t for t in self.transitions if t.target == chart and t.target_axis == axis and t.target_sign == sign]

    def apply_transition(self, tr: Transition, y: np.ndarray) -> np.ndarray:
        d = self.dimension
        src = _others(d, tr.axis)
        dst = _others(d, tr.target_axis)
        z = np.empty(d)
        z[tr.target_axis] = tr.target_sign * self.charts[tr.target].half_widths[tr.target_axis]
        z[dst] = np.asarray(tr.facet_matrix) @ y[src] + np.asarray(tr.offset)
        return z

    def invert_transition(self, tr: Transition, z: np.ndarray) -> np.ndarray | None:
        """Preimage of an entry-facet point, or None when outside the source facet."""
        d = self.dimension
        src = _others(d, tr.axis)
        dst = _others(d, tr.target_axis)
        h = self.charts[tr.source].half_widths
        y = np.empty(d)
        y[tr.axis] = tr.sign * h[tr.axis]
        y[src] = np.linalg.solve(np.asarray(tr.facet_matrix), z[dst] - np.asarray(tr.offset))
        if np.any(np.abs(y[src]) > h[src] * (1 + 1e-12)):
            return None
        return y

    def facet_linear(self, tr: Transition) -> np.ndarray:
        """d x d matrix acting as the facet map on facet-tangent vectors (normal column zero)."""
        d = self.dimension
        src = _others(d, tr.axis)
        dst = _others(d, tr.target_axis)
        M = np.zeros((d, d))
        M[np.ix_(dst, src)] = np.asarray(tr.facet_matrix)
        return M

    def reversed(self) -> "GluedChartFlow":
        charts = tuple(Chart(c.center, c.half_widths, -c.matrix, c.name) for c in self.charts)
        trs = []
        for t in self.transitions:
            inv = np.linalg.inv(np.asarray(t.facet_matrix, float))
            trs.append(Transition(t.target, t.target_axis, t.target_sign, t.source, t.axis, t.sign,
                                  inv, -inv @ np.asarray(t.offset, float)))
        conns = tuple(
            Connection(c.name, tuple(Segment(s.chart, s.exit, s.entry) for s in reversed(c.segments)))
            for c in self.connections
        )
        return GluedChartFlow(charts, tuple(trs), conns, f"-{self.name}", dict(self.params))

    def connection_points(self, conn: Connection, per_segment: int = 8, s_min: float = 1e-2,
                          s_max: float = 0.9) -> list[np.ndarray]:
        """Global points along a declared connection, geometric in distance to the zeros.

        ``s_max < 1`` keeps samples off the facets, where a point belongs to
        two charts at once.
        """
        pts = []
        for seg in conn.segments:
            c = self.charts[seg.chart]
            for s in np.geomspace(s_min, s_max, per_segment):
                pts.append(c.center + seg.point(s))
        return pts

    def check_connections(self, atol: float = 1e-12) -> list[str]:
        """Violations of the declared-connection invariants (empty when consistent)."""
        problems = []
        for conn in self.connections:
            for a, b in zip(conn.segments[:-1], conn.segments[1:]):
                if a.exit is None or b.entry is None:
                    problems.append(f"{conn.name}: interior segment open at a zero")
                    continue
                ya = np.asarray(a.exit, float)
                h = self.charts[a.chart].half_widths
                axis = int(np.argmax(np.abs(ya) / h))
                tr = self.exit_transition(a.chart, axis, int(np.sign(ya[axis])))
                if tr is None or tr.target != b.chart:
                    problems.append(f"{conn.name}: no transition from chart {a.chart} to {b.chart}")
                    continue
                z = self.apply_transition(tr, ya)
                if np.max(np.abs(z - np.asarray(b.entry, float))) > atol:
                    problems.append(f"{conn.name}: transition image misses next segment")
            for seg in conn.segments:
                A = self.charts[seg.chart].matrix
                ray = np.asarray(seg.point(1.0), float)
                img = A @ ray
                if np.linalg.norm(img - (img @ ray) / (ray @ ray) * ray) > atol * max(1.0, np.linalg.norm(img)):
                    problems.append(f"{conn.name}: segment in chart {seg.chart} is not an invariant ray")
        for tr in self.transitions:
            h = self.charts[tr.source].half_widths
            others = _others(self.dimension, tr.axis)
            corners = np.array(np.meshgrid(*[[-h[k], h[k]] for k in others])).reshape(len(others), -1).T
            ht = self.charts[tr.target].half_widths
            dst = _others(self.dimension, tr.target_axis)
            for cpt in corners:
                y = np.zeros(self.dimension)
                y[tr.axis] = tr.sign * h[tr.axis]
                y[others] = cpt
                z = self.apply_transition(tr, y)
                if np.any(np.abs(z[dst]) >= ht[dst]):
                    problems.append(f"transition {tr.source}->{tr.target} leaves the target facet interior")
                    break
        return problems


def builtin_cycle_model(
    spectrum0: Sequence[float] = (-3.0, -1.0, 2.0),
    spectrum1: Sequence[float] = (-2.0, 1.0, 3.0),
    separation: float = 4.0,
) -> GluedChartFlow:
    """Two Lorenz-like zeros of indices 2 and 1 joined by a heteroclinic cycle.

    sigma0 (chart 0) has spectrum ss < s < 0 < u with s + u > 0, sigma1 the
    time-reversed pattern ss < 0 < u < uu with ss + u < 0.  Orbit ``a`` leaves
    sigma0 along +e3 and enters sigma1 along its stable e1 axis; orbits ``b``
    and ``c`` leave sigma1 along +-e2 and fall into sigma0 along +-e2.  The
    other unstable branch of sigma0, the strong stable axis of sigma0 and
    the strong unstable axis of sigma1 leave the charts without a transition.
    """
    A0 = np.diag(np.asarray(spectrum0, float))
    A1 = np.diag(np.asarray(spectrum1, float))
    h = np.ones(3)
    c0 = np.zeros(3)
    c1 = np.array([separation, 0.0, 0.0])
    charts = (Chart(c0, h, A0, "sigma0"), Chart(c1, h, A1, "sigma1"))
    # facet maps are contractions with a shear, so the stable and unstable
    # flags meet transversally along every connection
    Ma = np.array([[0.5, 0.25], [0.25, 0.5]])
    Mb = np.array([[0.5, 0.25], [-0.25, 0.5]])
    Mc = np.array([[0.5, -0.25], [0.25, 0.5]])
    z2 = np.zeros(2)
    transitions = (
        Transition(0, 2, +1, 1, 0, +1, Ma, z2),
        Transition(1, 1, +1, 0, 1, +1, Mb, z2),
        Transition(1, 1, -1, 0, 1, -1, Mc, z2),
    )
    e = np.eye(3)
    connections = (
        Connection("a", (Segment(0, None, e[2]), Segment(1, e[0], None))),
        Connection("b", (Segment(1, None, e[1]), Segment(0, e[1], None))),
        Connection("c", (Segment(1, None, -e[1]), Segment(0, -e[1], None))),
    )
    return GluedChartFlow(
        charts, transitions, connections, "cycle-model",
        params={"spectrum0": list(spectrum0), "spectrum1": list(spectrum1)},
    )


BUILTINS = {
    "lorenz": builtin_lorenz,
    "limit-cycle": builtin_limit_cycle,
    "double-well": builtin_double_well,
    "cycle-model": builtin_cycle_model,
}
