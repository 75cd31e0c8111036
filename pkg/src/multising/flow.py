"""Base flow, tangent flow and projective flow.

Smooth fields are integrated with an adaptive Dormand-Prince 8(5,3) scheme
from scipy.  Linear fields, registered zeros and chart-glued flows use exact
matrix exponentials so that invariant objects do not drift.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .fields import GluedChartFlow, VectorFieldSpec, _others
from .projective import ProjectivePoint

DEFAULT_TOL = 1e-9
QR_INTERVAL = 0.5
COND_LIMIT = 1e12
AT_ZERO_TOL = 1e-14


class EscapedError(RuntimeError):
    """The orbit left the domain before the requested time."""

    def __init__(self, exit_time: float, point):
        super().__init__(f"orbit left the domain at t={exit_time:.6g}")
        self.exit_time = float(exit_time)
        self.point = np.asarray(point, dtype=float)


class IntegrationError(RuntimeError):
    pass


class IllConditionedWarning(RuntimeWarning):
    pass


Flow = VectorFieldSpec | GluedChartFlow


def registered_zero(spec: Flow, x, atol: float = AT_ZERO_TOL):
    """The registered singularity sitting exactly at ``x`` (or None)."""
    x = np.asarray(x, dtype=float)
    for s in spec.singularities:
        if np.linalg.norm(x - s.position) <= atol * (1.0 + np.linalg.norm(s.position)):
            return s
    return None


def _exp_diag_or_full(A: np.ndarray, t: float) -> np.ndarray:
    if np.count_nonzero(A - np.diag(np.diag(A))) == 0:
        return np.diag(np.exp(np.diag(A) * t))
    return expm(A * t)


# ---------------------------------------------------------------------------
# chart-glued propagation


def _first_exit_time(A, y, h, horizon):
    """First s in [0, horizon] with max_k |y_k(s)|/h_k = 1 under y' = Ay, or None."""
    if np.count_nonzero(A - np.diag(np.diag(A))) == 0:
        a = np.diag(A)
        best = None
        for k in range(y.size):
            if a[k] > 0 and y[k] != 0.0:
                s = max(0.0, np.log(h[k] / abs(y[k])) / a[k])
                if s <= horizon and (best is None or s < best[0]):
                    best = (s, k)
        return best

    def excess(s):
        return float(np.max(np.abs(expm(A * s) @ y) / h) - 1.0)

    if excess(0.0) >= 0.0 and np.any(((A @ y) * np.sign(y) > 0) & (np.abs(y) >= h)):
        k = int(np.argmax(np.abs(y) / h))
        return 0.0, k
    grid = np.linspace(0.0, horizon, max(2, int(np.ceil(horizon / 0.01)) + 1))
    prev = 0.0
    for s in grid[1:]:
        if excess(s) > 0.0:
            root = optimize.brentq(excess, prev, s, xtol=1e-15)
            k = int(np.argmax(np.abs(expm(A * root) @ y) / h))
            return root, k
        prev = s
    return None


def _glued_forward(flow: GluedChartFlow, x, t: float, V=None):
    """Propagate forward (t >= 0) through charts with exact exponentials."""
    x = np.asarray(x, dtype=float)
    d = flow.dimension
    idx = int(flow.chart_of(x))
    if idx < 0:
        raise EscapedError(0.0, x)
    chart = flow.charts[idx]
    y = x - chart.center
    D = np.eye(d)
    elapsed = 0.0
    for _ in range(10_000):
        remaining = t - elapsed
        hit = _first_exit_time(chart.matrix, y, chart.half_widths, remaining)
        if hit is None:
            E = _exp_diag_or_full(chart.matrix, remaining)
            y = E @ y
            D = E @ D
            break
        s, k = hit
        E = _exp_diag_or_full(chart.matrix, s)
        y = E @ y
        D = E @ D
        elapsed += s
        sign = 1 if y[k] > 0 else -1
        y[k] = sign * chart.half_widths[k]
        tr = flow.exit_transition(idx, k, sign)
        if tr is None:
            raise EscapedError(elapsed, chart.center + y)
        z = flow.apply_transition(tr, y)
        target = flow.charts[tr.target]
        dst = _others(d, tr.target_axis)
        if np.any(np.abs(z[dst]) > target.half_widths[dst]):
            raise EscapedError(elapsed, chart.center + y)
        vel_in = chart.matrix @ y
        vel_out = target.matrix @ z
        normal_speed = vel_in[k]
        if normal_speed == 0.0:
            raise IntegrationError("orbit touches an exit facet tangentially")
        M = flow.facet_linear(tr)
        n = np.zeros(d)
        n[k] = 1.0
        G = M + np.outer(vel_out - M @ vel_in, n) / normal_speed
        D = G @ D
        idx, chart, y = tr.target, target, z
    else:
        raise IntegrationError("too many chart transitions")
    out = chart.center + y
    return out, (None if V is None else D @ np.asarray(V, float))


def _glued(flow: GluedChartFlow, x, t: float, V=None):
    if t >= 0:
        return _glued_forward(flow, x, t, V)
    try:
        return _glued_forward(flow.reversed(), x, -t, V)
    except EscapedError as exc:
        raise EscapedError(-exc.exit_time, exc.point) from None


# ---------------------------------------------------------------------------
# smooth fields


def _exit_event(domain):
    lo, hi = domain[:, 0], domain[:, 1]

    def event(_t, y):
        x = y[: lo.size]
        return float(np.min(np.minimum(x - lo, hi - x)))

    event.terminal = True
    event.direction = -1
    return event


def _integrate(spec: VectorFieldSpec, x, t: float, tol: float, V=None, dense: bool = False):
    d = spec.dimension
    k = 0 if V is None else V.shape[1]

    def rhs(_s, y):
        p = y[:d]
        dx = spec.evaluate(p)
        if k == 0:
            return dx
        W = y[d:].reshape(d, k)
        return np.concatenate([dx, (spec.jacobian(p) @ W).ravel()])

    y0 = np.asarray(x, float) if k == 0 else np.concatenate([x, np.asarray(V, float).ravel()])
    sol = solve_ivp(
        rhs, (0.0, t), y0, method="DOP853", rtol=tol, atol=tol,
        events=_exit_event(spec.domain), dense_output=dense,
    )
    if sol.status == 1:
        te = float(sol.t_events[0][0])
        raise EscapedError(te, sol.y_events[0][0][:d])
    if sol.status != 0:
        raise IntegrationError(sol.message)
    yT = sol.y[:, -1]
    return yT[:d], (None if k == 0 else yT[d:].reshape(d, k)), sol


def _check_start(spec: Flow, x):
    if not bool(spec.contains(x)):
        raise EscapedError(0.0, x)


# ---------------------------------------------------------------------------
# public operations


def advance(spec: Flow, x, t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """phi^t(x)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    _check_start(spec, x)
    if t == 0:
        return x.copy()
    if registered_zero(spec, x) is not None:
        return x.copy()
    if isinstance(spec, GluedChartFlow):
        return _glued(spec, x, t)[0]
    if spec.linear is not None:
        y = expm(spec.linear * t) @ x
        if not bool(spec.contains(y)):
            raise EscapedError(t, y)
        return y
    return _integrate(spec, x, t, tol)[0]


def tangent_transport(spec: Flow, x, V, t: float, tol: float = DEFAULT_TOL):
    """(phi^t(x), Dphi^t(x) V)."""
    x = np.asarray(x, dtype=float)
    V = np.asarray(V, dtype=float)
    vec = V.ndim == 1
    if vec:
        V = V[:, None]
    _check_start(spec, x)
    if t == 0:
        out = x.copy(), V.copy()
    elif (s := registered_zero(spec, x)) is not None:
        out = x.copy(), expm(spec.jacobian(s.position) * t) @ V
    elif isinstance(spec, GluedChartFlow):
        out = _glued(spec, x, t, V)
    elif spec.linear is not None:
        E = expm(spec.linear * t)
        y = E @ x
        if not bool(spec.contains(y)):
            raise EscapedError(t, y)
        out = y, E @ V
    else:
        y, W, _ = _integrate(spec, x, t, tol, V)
        out = y, W
    y, W = out
    if W.shape[1] > 1 and np.linalg.cond(W) > COND_LIMIT:
        warnings.warn("transported frame lost column rank; re-orthonormalize", IllConditionedWarning, stacklevel=2)
    return y, (W[:, 0] if vec else W)


def projective_advance(spec: Flow, L: ProjectivePoint, t: float, tol: float = DEFAULT_TOL) -> ProjectivePoint:
    y, w = tangent_transport(spec, L.base, L.direction, t, tol)
    return ProjectivePoint(y, w)


def tangent_map(spec: Flow, x, t: float, tol: float = DEFAULT_TOL):
    """(phi^t(x), Dphi^t(x)) as a full matrix."""
    return tangent_transport(spec, x, np.eye(np.asarray(x).size), t, tol)


# ---------------------------------------------------------------------------
# batches


def _cutoff(x, lo, hi, margin):
    """1 inside the box, decaying smoothly to 0 at ``margin`` outside it."""
    out = np.maximum(np.maximum(lo - x, x - hi), 0.0).max(axis=-1) / margin
    s = np.clip(out, 0.0, 1.0)
    return 1.0 - s * s * (3.0 - 2.0 * s)


def advance_batch(spec: Flow, X, times: Sequence[float], tol: float = 1e-7, bounds=None):
    """Flow many points and sample each at every entry of ``times`` (t >= 0, increasing).

    Returns ``(points, escaped)`` where ``points`` has shape
    ``(len(times), n, d)`` and ``escaped[i]`` marks rows that left ``bounds``
    (the domain by default) at some sampled time; their later samples are
    meaningless (NaN when the orbit left the domain of a glued or linear flow).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    times = np.asarray(times, dtype=float)
    box = np.asarray(spec.domain if bounds is None else bounds, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    out = np.empty((times.size, n, d))
    escaped = ~np.asarray(spec.contains(X), bool) | ~np.all((X >= lo) & (X <= hi), axis=1)

    if isinstance(spec, GluedChartFlow) or getattr(spec, "linear", None) is not None:
        for i in range(n):
            if escaped[i]:
                out[:, i] = X[i]
                continue
            try:
                prev, p = 0.0, X[i]
                for j, t in enumerate(times):
                    p = advance(spec, p, t - prev)
                    prev = t
                    out[j, i] = p
                    if not np.all((p >= lo) & (p <= hi)):
                        escaped[i] = True
            except EscapedError:
                escaped[i] = True
                out[j:, i] = np.nan
        return out, escaped

    margin = 0.05 * float(np.min(hi - lo))
    alive = np.flatnonzero(~escaped)
    out[:, escaped] = X[escaped]
    if alive.size == 0:
        return out, escaped
    Y0 = X[alive]

    def rhs(_s, y):
        P = y.reshape(-1, d)
        return (spec.evaluate(P) * _cutoff(P, lo, hi, margin)[:, None]).ravel()

    scale = np.sqrt(Y0.size)
    sol = solve_ivp(rhs, (0.0, float(times[-1])), Y0.ravel(), method="DOP853",
                    rtol=tol / scale, atol=tol / scale, t_eval=times)
    if sol.status != 0:
        raise IntegrationError(sol.message)
    traj = sol.y.T.reshape(times.size, alive.size, d)
    out[:, alive] = traj
    outside = np.any(~np.all((traj >= lo) & (traj <= hi), axis=2), axis=0)
    escaped[alive[outside]] = True
    return out, escaped


PREFILTER_TOL = 1e-5


def _transport_chunk(spec: VectorFieldSpec, X, V, tt, tol, lo, hi, margin):
    m, d = X.shape
    k = V.shape[2]

    def rhs(_tau, y):
        P = y[: m * d].reshape(m, d)
        M = y[m * d:].reshape(m, d, k)
        c = (_cutoff(P, lo, hi, margin) * tt)[:, None]
        dP = spec.evaluate(P) * c
        dM = np.einsum("nij,njk->nik", spec.jacobian(P), M) * c[:, :, None]
        return np.concatenate([dP.ravel(), dM.ravel()])

    y0 = np.concatenate([X.ravel(), V.ravel()])
    scale = np.sqrt(y0.size)
    sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=tol / scale, atol=tol / scale,
                    t_eval=np.linspace(0.0, 1.0, 41))
    if sol.status != 0:
        raise IntegrationError(sol.message)
    pts = sol.y[: m * d].T.reshape(-1, m, d)
    left = np.any(~np.all((pts >= lo) & (pts <= hi), axis=2), axis=0)
    return pts[-1], sol.y[m * d:, -1].reshape(m, d, k), left


def transport_batch(spec: Flow, X, V, times, tol: float = DEFAULT_TOL, chunk: int = 64):
    """Tangent transport of many (point, frame) pairs over individual signed times.

    ``X`` is (n, d), ``V`` is (n, d, k) and ``times`` is (n,).  Smooth fields
    are integrated together in the rescaled time ``tau = s / t_i`` on [0, 1],
    with points frozen by a smooth cutoff once they leave the domain.
    Returns ``(Y, W, escaped)``; rows flagged as escaped are meaningless.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.asarray(V, dtype=float)
    times = np.asarray(times, dtype=float)
    n, d = X.shape
    k = V.shape[2]
    Y = X.copy()
    W = V.copy()
    escaped = ~np.asarray(spec.contains(X), bool)
    loop = isinstance(spec, GluedChartFlow) or spec.linear is not None or spec.singularities
    if loop:
        # glued and linear flows are exact; rows at registered zeros too
        rows = range(n) if (isinstance(spec, GluedChartFlow) or spec.linear is not None) else [
            i for i in range(n) if registered_zero(spec, X[i]) is not None]
        for i in rows:
            if escaped[i]:
                continue
            try:
                Y[i], W[i] = tangent_transport(spec, X[i], V[i], times[i], tol)
            except EscapedError:
                escaped[i] = True
        if isinstance(spec, GluedChartFlow) or spec.linear is not None:
            return Y, W, escaped
        done = np.zeros(n, bool)
        done[list(rows)] = True
    else:
        done = np.zeros(n, bool)
    alive = np.flatnonzero(~escaped & ~done & (times != 0))
    if alive.size == 0:
        return Y, W, escaped
    lo, hi = spec.domain[:, 0], spec.domain[:, 1]
    margin = 0.05 * float(np.min(hi - lo))
    # rows share step sizes, so every fast passage costs the whole batch;
    # modest chunks of similar times keep that cost local
    alive = alive[np.argsort(times[alive], kind="stable")]
    if k > 0:
        # orbits that leave the domain spend most of the work in their final
        # blow-up; a loose base-point pass finds them cheaply (conservatively)
        empty = np.zeros((n, d, 0))
        for part in np.array_split(alive, int(np.ceil(alive.size / chunk))):
            left = _transport_chunk(spec, X[part], empty[part], times[part], PREFILTER_TOL, lo, hi, margin)[2]
            escaped[part[left]] = True
        alive = alive[~escaped[alive]]
        if alive.size == 0:
            return Y, W, escaped
    for part in np.array_split(alive, int(np.ceil(alive.size / chunk))):
        Y[part], W[part], left = _transport_chunk(spec, X[part], V[part], times[part], tol, lo, hi, margin)
        escaped[part[left]] = True
    return Y, W, escaped


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class TrajectorySample:
    times: np.ndarray
    points: np.ndarray
    frames: list[np.ndarray] | None = None
    log_scales: np.ndarray | None = field(default=None)

    def to_csv(self, path) -> None:
        d = self.points.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(d)]
        if self.frames is not None:
            k = self.frames[0].shape[1]
            header += [f"v_{i + 1}_{j + 1}" for j in range(k) for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for idx, (t, p) in enumerate(zip(self.times, self.points)):
                row = [repr(float(t))] + [repr(float(v)) for v in p]
                if self.frames is not None:
                    row += [repr(float(v)) for v in self.frames[idx].T.ravel()]
                w.writerow(row)


def trajectory(spec: Flow, x, t_final: float, dt: float = QR_INTERVAL, tol: float = DEFAULT_TOL,
               frame=None) -> TrajectorySample:
    """Sample phi^t(x) every ``dt``; optionally carry a QR re-orthonormalized frame.

    ``log_scales[i]`` holds the accumulated log|diag R| of the frame up to
    sample ``i``, so ``frames[i] * exp(log_scales[i])`` recovers the column
    growth of the transported frame.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = int(np.ceil(abs(t_final) / dt - 1e-12))
    sgn = 1.0 if t_final >= 0 else -1.0
    times = [0.0]
    pts = [np.asarray(x, float)]
    frames = None
    scales = None
    if frame is not None:
        q, _ = np.linalg.qr(np.asarray(frame, float))
        frames = [q]
        scales = [np.zeros(q.shape[1])]
    p = pts[0]
    for i in range(steps):
        h = sgn * min(dt, abs(t_final) - i * dt)
        if frames is None:
            p = advance(spec, p, h, tol)
        else:
            p, W = tangent_transport(spec, p, frames[-1], h, tol)
            q, r = np.linalg.qr(W)
            sg = np.sign(np.diag(r))
            sg[sg == 0] = 1.0
            q = q * sg
            frames.append(q)
            scales.append(scales[-1] + np.log(np.abs(np.diag(r))))
        times.append(times[-1] + h)
        pts.append(p)
    return TrajectorySample(np.array(times), np.array(pts), frames,
                            None if scales is None else np.array(scales))
