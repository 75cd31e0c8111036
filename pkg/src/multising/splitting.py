"""Dominated splittings of the extended linear Poincare flow and the verdict.

The splitting ``E + F`` of the normal bundle is estimated along
:class:`~multising.poincare.NormalChain` objects (psi_N step matrices in
orthonormal normal frames):

* ``E`` at a sample is the limit of backward subspace iteration started far
  in the future, i.e. the most contracted directions of the forward flow;
* ``F`` is the limit of forward subspace iteration started in the past.

Growth over the horizon is then read off the restricted step matrices,
which keeps products of norms like ``e^{-300}`` and ``e^{20}`` resolvable.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, optimize

from .cocycle import CocycleEvaluator, CocycleSpec
from .fields import GluedChartFlow, Singularity
from .flow import (DEFAULT_TOL, QR_INTERVAL, EscapedError, Flow, IllConditionedWarning, IntegrationError, advance,
                   tangent_transport)
from .poincare import NormalChain, normal_chain, section_of_field
from .projective import ProjectivePoint

EIG_TOL = 1e-6
GAP_TOL = 0.05
DELTA_RATE = 0.05


class SplittingError(ValueError):
    pass


class NoDominatedSplitting(SplittingError):
    pass


# ---------------------------------------------------------------------------
# singularities


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


@dataclass(frozen=True)
class SingularityClass:
    name: str
    position: np.ndarray
    eigenvalues: np.ndarray  # complex, sorted by real part
    index: int
    saddle_value: float | None
    lorenz_like: bool
    strong_dims: tuple[int, int]  # (G^ss or G^cs, G^cu or G^uu) dimensions
    stable_gaps: tuple[int, ...]  # j < index with a spectral gap after lambda_j
    unstable_gaps: tuple[int, ...]  # j < d - index with a gap before the last j exponents
    jacobian: np.ndarray

    @property
    def real_parts(self) -> np.ndarray:
        return self.eigenvalues.real

    @property
    def dimension(self) -> int:
        return self.eigenvalues.size

    @property
    def side(self) -> str | None:
        """'F' for positive saddle value, 'E' for negative, None otherwise."""
        if self.saddle_value is None or self.saddle_value == 0:
            return None
        return "F" if self.saddle_value > 0 else "E"

    def invariant_subspace(self, lo: int, hi: int) -> np.ndarray:
        """Orthonormal basis of the real invariant subspace of exponents lo..hi-1 (0-based)."""
        d = self.dimension
        if hi <= lo:
            return np.zeros((d, 0))
        lam = self.eigenvalues
        keep = np.zeros(d, dtype=bool)
        keep[lo:hi] = True
        cut_lo = lam[lo].real
        cut_hi = lam[hi - 1].real

        def select(re, _im=None):
            return (re >= cut_lo - 1e-12 * max(1, abs(cut_lo))) & (re <= cut_hi + 1e-12 * max(1, abs(cut_hi)))

        T, Z, k = linalg.schur(self.jacobian, output="real", sort=lambda re, im: bool(select(re)))
        if k != hi - lo:
            raise SplittingError("requested exponents are not separated by a spectral gap")
        return Z[:, :k]


def classify_singularity(spec: Flow, sigma: Singularity, eig_tol: float = EIG_TOL) -> SingularityClass:
    if not sigma.hyperbolic:
        raise SplittingError(f"singularity {sigma.name} is not hyperbolic")
    J = np.asarray(spec.jacobian(sigma.position), dtype=float)
    lam = np.linalg.eigvals(J)
    lam = lam[np.lexsort((lam.imag, lam.real))]
    re = lam.real
    d = re.size
    s = int(np.sum(re < 0))
    sv = None if s in (0, d) else float(re[s - 1] + re[s])
    lorenz_like = False
    if sv is not None:
        double_stable = s >= 2 and _close(re[s - 2], re[s - 1], eig_tol)
        double_unstable = s + 2 <= d and _close(re[s], re[s + 1], eig_tol)
        if double_stable and double_unstable:
            lorenz_like = False
        elif double_stable:
            lorenz_like = sv < 0
        elif double_unstable:
            lorenz_like = sv > 0
        else:
            lorenz_like = abs(sv) > eig_tol * max(1.0, abs(re[s - 1]), abs(re[s]))
    if sv is None:
        dims = (s, d - s)
    elif sv > 0:
        dims = (s - 1, d - s + 1)
    else:
        dims = (s + 1, d - s - 1)
    stable_gaps = tuple(j for j in range(1, s) if not _close(re[j - 1], re[j], eig_tol))
    unstable_gaps = tuple(j for j in range(1, d - s) if not _close(re[d - j - 1], re[d - j], eig_tol))
    return SingularityClass(sigma.name, sigma.position, lam, s, sv, bool(lorenz_like), dims, stable_gaps,
                            unstable_gaps, J)


def escaping_manifold_test(spec: Flow, sigma: Singularity, dim: int, region, horizon: float,
                           kind: str = "stable", n_samples: int = 16, r_loc: float = 1e-6,
                           tol: float = DEFAULT_TOL, seed: int = 0, step: float = 0.1) -> bool | None:
    """Whether the ``dim``-dimensional strong stable (or unstable) manifold escapes ``region``.

    Points on a sphere of radius ``r_loc`` in the linear strong space are
    flowed backward (forward for unstable manifolds).  Backward flow aligns
    with the strongest contraction, so these orbits shadow the nonlinear
    strong manifold.  Returns True when every orbit leaves the region within
    ``horizon``, False when one converges to a registered zero or returns near
    ``sigma``, and None otherwise.
    """
    cls = classify_singularity(spec, sigma)
    d = cls.dimension
    region = np.asarray(region, float)
    if kind == "stable":
        if dim not in cls.stable_gaps:
            raise SplittingError(f"no strong stable space of dimension {dim}")
        basis = cls.invariant_subspace(0, dim)
        sgn = -1.0
    elif kind == "unstable":
        if dim not in cls.unstable_gaps:
            raise SplittingError(f"no strong unstable space of dimension {dim}")
        basis = cls.invariant_subspace(d - dim, d)
        sgn = 1.0
    else:
        raise ValueError("kind must be 'stable' or 'unstable'")
    if dim == 1:
        coords = np.array([[1.0], [-1.0]])
    else:
        rng = np.random.default_rng(seed)
        coords = rng.standard_normal((n_samples, dim))
        coords /= np.linalg.norm(coords, axis=1, keepdims=True)
    scale = float(np.min(region[:, 1] - region[:, 0]))
    starts = sigma.position + r_loc * scale * coords @ basis.T
    near = 1e-3 * scale
    others = [s for s in spec.singularities if np.linalg.norm(s.position - sigma.position) > 0]
    verdict: bool | None = True
    for x in starts:
        p = x
        left_ball = False
        t = 0.0
        outcome = None
        while t < horizon:
            h = min(step, horizon - t)
            try:
                p = advance(spec, p, sgn * h, tol)
            except (EscapedError, IntegrationError):
                outcome = "left"
                break
            t += h
            if np.any(p < region[:, 0]) or np.any(p > region[:, 1]):
                outcome = "left"
                break
            dist_self = np.linalg.norm(p - sigma.position)
            if dist_self > 100 * near:
                left_ball = True
            if left_ball and dist_self < near:
                outcome = "recurs"
                break
            if any(np.linalg.norm(p - o.position) < near for o in others):
                outcome = "recurs"
                break
        if outcome == "recurs":
            return False
        if outcome is None:
            verdict = None
    return verdict


@dataclass(frozen=True)
class CenterSpace:
    name: str
    escaping_stable: int
    escaping_unstable: int
    basis: np.ndarray | None  # None when an escape test was inconclusive
    stable_dims: int | None
    unstable_dims: int | None

    @property
    def dims(self) -> int | None:
        return None if self.basis is None else self.basis.shape[1]


def center_space(cls: SingularityClass, escape: Mapping[tuple[str, int], bool | None]) -> CenterSpace:
    """Complement of the largest escaping strong stable and strong unstable spaces.

    ``escape`` maps ``("stable", j)`` / ``("unstable", j)`` to test results.
    The largest escaping dimension is searched downward; an inconclusive
    result before any escaping one makes the center space unavailable.
    """
    d, s = cls.dimension, cls.index

    def largest(kind, gaps):
        for j in sorted(gaps, reverse=True):
            r = escape.get((kind, j))
            if r is True:
                return j
            if r is None and (kind, j) in escape:
                return None
        return 0

    js = largest("stable", cls.stable_gaps)
    ju = largest("unstable", cls.unstable_gaps)
    if js is None or ju is None:
        return CenterSpace(cls.name, js or 0, ju or 0, None, None, None)
    basis = cls.invariant_subspace(js, d - ju)
    return CenterSpace(cls.name, js, ju, basis, s - js, d - s - ju)


# ---------------------------------------------------------------------------
# splitting estimation


@dataclass(frozen=True)
class ChainAnchor:
    chain: NormalChain
    index: int

    @property
    def line(self) -> ProjectivePoint:
        return self.chain.line(self.index)


def _orth(M: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(M)
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def _log_extreme_sv(mats: Sequence[np.ndarray], largest: bool) -> float:
    """log of the largest (or smallest) singular value of mats[-1] @ ... @ mats[0]."""
    k = mats[0].shape[0] if len(mats) else 0
    if k == 0:
        return float("-inf") if largest else float("inf")
    if not largest:
        mats = [np.linalg.inv(m) for m in reversed(mats)]
    P = np.eye(k)
    logscale = 0.0
    for m in mats:
        P = m @ P
        nrm = np.linalg.norm(P, 2)
        if nrm == 0:
            return float("-inf") if largest else float("inf")
        P /= nrm
        logscale += np.log(nrm)
    val = logscale + np.log(np.linalg.norm(P, 2))
    return float(val if largest else -val)


@dataclass
class _ChainFrames:
    chain: NormalChain
    E: list[np.ndarray]  # per sample, (d-1) x kE coordinates in chain bases
    F: list[np.ndarray]
    spectra: np.ndarray | None = None


def _subspace_frames(chain: NormalChain, kE: int, seed: int = 0) -> _ChainFrames:
    m = chain.steps.shape[1]
    kF = m - kE
    n = len(chain)
    rng = np.random.default_rng(seed)
    E = [None] * n
    F = [None] * n
    if kE:
        W = _orth(rng.standard_normal((m, kE)))
        E[n - 1] = W
        for j in range(n - 2, -1, -1):
            W = _orth(np.linalg.solve(chain.steps[j], W))
            E[j] = W
    else:
        E = [np.zeros((m, 0))] * n
    if kF:
        # start from the complement of E: exact when the steps are normal,
        # and no worse than a random start otherwise
        if kE:
            W = np.linalg.svd(E[0], full_matrices=True)[0][:, kE:]
        else:
            W = np.eye(m)
        F[0] = W
        for j in range(n - 1):
            W = _orth(chain.steps[j] @ W)
            F[j + 1] = W
    else:
        F = [np.zeros((m, 0))] * n
    return _ChainFrames(chain, E, F)


def _finite_time_exponents(chain: NormalChain, start: int, stop: int, lead: int) -> np.ndarray:
    """Descending finite-time exponents of psi_N over samples [start, stop) after a QR warm-up."""
    m = chain.steps.shape[1]
    Q = np.eye(m)
    for j in range(max(0, start - lead), start):
        Q = _orth(chain.steps[j] @ Q)
    acc = np.zeros(m)
    for j in range(start, stop):
        q, r = np.linalg.qr(chain.steps[j] @ Q)
        acc += np.log(np.abs(np.diag(r)))
        Q = q
    T = chain.times[stop] - chain.times[start]
    return np.sort(acc / T)[::-1]


@dataclass
class AnchorSplitting:
    line: ProjectivePoint
    E: np.ndarray  # d x kE ambient orthonormal frame in the normal hyperplane
    F: np.ndarray
    log_E_max: float  # log of the largest singular value of psi_N^T restricted to E
    log_F_min: float
    chain: NormalChain = field(repr=False)
    index: int = 0
    steps: int = 0
    frames: _ChainFrames | None = field(default=None, repr=False)
    owner: str | None = None

    def min_angle(self) -> float:
        if self.E.shape[1] == 0 or self.F.shape[1] == 0:
            return float(np.pi / 2)
        s = np.linalg.svd(self.E.T @ self.F, compute_uv=False)
        return float(np.arccos(np.clip(s.max(), -1.0, 1.0)))


@dataclass
class SplittingEstimate:
    spec: Flow = field(repr=False)
    anchors: list[AnchorSplitting]
    dims: tuple[int, int]
    horizon: float
    margin: float
    rates_E: np.ndarray
    rates_F: np.ndarray
    gap: float | None = None
    tol: float = DEFAULT_TOL

    @property
    def plain_rate_E(self) -> float:
        return float(np.max(self.rates_E)) if self.dims[0] else float("-inf")

    @property
    def plain_rate_F(self) -> float:
        return float(np.min(self.rates_F)) if self.dims[1] else float("inf")


def _chain_for(spec: Flow, a, T: float, buffer: float, dt: float, tol: float):
    if isinstance(a, ChainAnchor):
        return a.chain, a.index
    chain = normal_chain(spec, a, buffer, T + buffer, dt, tol)
    return chain, chain.origin


def estimate_splitting(spec: Flow, anchors: Sequence, T: float, dim_E: int | None = None,
                       buffer: float = 10.0, dt: float = QR_INTERVAL, tol: float = DEFAULT_TOL,
                       gap_tol: float = GAP_TOL, seed: int = 0, owners: Sequence | None = None) -> SplittingEstimate:
    """Finite-horizon E + F splitting of psi_N at each anchor.

    ``anchors`` are lines (a chain is built around each, ``buffer`` time units
    into the past and future) or :class:`ChainAnchor` objects pointing into a
    precomputed chain with enough samples before and after.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    if not anchors:
        raise SplittingError("no anchors")
    d = spec.dimension
    m = d - 1
    steps = int(round(T / dt))
    placed = [_chain_for(spec, a, T, buffer, dt, tol) for a in anchors]
    lead = int(round(buffer / dt))
    for chain, j in placed:
        if j + steps >= len(chain):
            raise SplittingError("chain too short for the horizon")

    if dim_E is None:
        if m == 1:
            rates = [
                _finite_time_exponents(chain, j, j + steps, lead)[0] for chain, j in placed
            ]
            dim_E = 1 if max(rates) < 0 else 0
            gap = None
        else:
            spectra = np.array([_finite_time_exponents(chain, j, j + steps, lead) for chain, j in placed])
            gaps = spectra[:, :-1] - spectra[:, 1:]  # gap after the k-th largest
            worst = gaps.min(axis=0)
            kF = int(np.argmax(worst)) + 1
            gap = float(worst[kF - 1])
            if gap <= gap_tol:
                raise NoDominatedSplitting(f"largest finite-time gap {gap:.3g} is below {gap_tol}")
            dim_E = m - kF
    else:
        gap = None
    if not 0 <= dim_E <= m:
        raise SplittingError("dim_E out of range")

    frames_by_chain: dict[int, _ChainFrames] = {}
    out = []
    for (chain, j), a, k in zip(placed, anchors, range(len(anchors))):
        key = id(chain)
        if key not in frames_by_chain:
            frames_by_chain[key] = _subspace_frames(chain, dim_E, seed)
        fr = frames_by_chain[key]
        GE = [fr.E[i + 1].T @ chain.steps[i] @ fr.E[i] for i in range(j, j + steps)]
        GF = [fr.F[i + 1].T @ chain.steps[i] @ fr.F[i] for i in range(j, j + steps)]
        B = chain.bases[j]
        out.append(AnchorSplitting(
            chain.line(j), B @ fr.E[j], B @ fr.F[j],
            _log_extreme_sv(GE, largest=True), _log_extreme_sv(GF, largest=False),
            chain, j, steps, fr, None if owners is None else owners[k],
        ))
    horizon = steps * dt
    rE = np.array([a.log_E_max / horizon for a in out])
    rF = np.array([a.log_F_min / horizon for a in out])
    if dim_E and m - dim_E:
        margin = float(np.min(rF - rE))
    else:
        margin = float("inf")
    return SplittingEstimate(spec, out, (dim_E, m - dim_E), horizon, margin, rE, rF, gap, tol)


def orbit_chain_anchors(spec: Flow, start, offsets: Sequence[float], T: float, buffer: float = 10.0,
                        dt: float = QR_INTERVAL, tol: float = DEFAULT_TOL) -> list[ChainAnchor]:
    """Anchors phi^{t_k}(start) on a single forward chain starting at ``start``.

    The first ``t_k`` should exceed ``buffer`` so forward subspace iteration
    has converged; the chain runs ``T + buffer`` past the last anchor.
    """
    L = section_of_field(spec, start)
    offsets = np.asarray(offsets, float)
    chain = normal_chain(spec, L, 0.0, float(offsets.max()) + T + buffer, dt, tol)
    idx = [int(round(t / dt)) for t in offsets]
    return [ChainAnchor(chain, i) for i in idx]


# ---------------------------------------------------------------------------
# checks


def _transport_frames(spec: Flow, a: AnchorSplitting, t: float, tol: float):
    L = a.line
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        y, W = tangent_transport(spec, L.base, np.column_stack([L.direction, a.E, a.F]), t, tol)
    u = W[:, 0] / np.linalg.norm(W[:, 0])
    P = np.eye(spec.dimension) - np.outer(u, u)
    kE = a.E.shape[1]
    return y, u, P @ W[:, 1:1 + kE], P @ W[:, 1 + kE:]


def check_domination(est: SplittingEstimate, t_dom: float, cocycle: CocycleEvaluator | None = None) -> float:
    """Worst log-slack of |psi v| <= |psi w| / 2 for unit v in E and w in F over time t_dom.

    A positive cocycle multiplies both sides equally and cancels, so passing
    one changes nothing; the argument exists to make that explicit.
    """
    if est.dims[0] == 0 or est.dims[1] == 0:
        return float("inf")
    worst = float("inf")
    for a in est.anchors:
        _, _, WE, WF = _transport_frames(est.spec, a, t_dom, est.tol)
        e_max = np.linalg.svd(WE, compute_uv=False).max()
        f_min = np.linalg.svd(WF, compute_uv=False).min()
        worst = min(worst, float(np.log(f_min) - np.log(e_max) - np.log(2.0)))
    return worst


@dataclass(frozen=True)
class ConeField:
    """Cones ``{e + f : |e| <= a |f|}`` around F (``around='F'``) or around E."""

    estimate: SplittingEstimate
    aperture: float
    around: str = "F"

    def __post_init__(self):
        if not self.aperture > 0:
            raise ValueError("aperture must be positive")
        if self.around not in ("E", "F"):
            raise ValueError("around must be 'E' or 'F'")


@dataclass(frozen=True)
class ConeResult:
    invariant: bool
    margin: float


def _unit_sphere(k: int, n: int) -> np.ndarray:
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        th = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    rng = np.random.default_rng(0)
    v = rng.standard_normal((n, k))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def check_cone_invariance(cone: ConeField, t: float, cone_margin: float = 0.0, n_rays: int = 16) -> ConeResult:
    """Boundary rays ``a e + f`` must land strictly inside the image cone.

    The image cone has the same aperture around the transported center.
    The margin of a ray is log(a |f'| / |e'|) after decomposing its image
    along the transported frames; the reported margin is the minimum.
    """
    est = cone.estimate
    worst = float("inf")
    for anc in est.anchors:
        C, S = (anc.F, anc.E) if cone.around == "F" else (anc.E, anc.F)
        if C.shape[1] == 0 or S.shape[1] == 0:
            continue
        _, _, WE, WF = _transport_frames(est.spec, anc, t, est.tol)
        WC, WS = (WF, WE) if cone.around == "F" else (WE, WF)
        basis = np.column_stack([WS, WC])
        ks = S.shape[1]
        for s_dir in _unit_sphere(ks, n_rays):
            for c_dir in _unit_sphere(C.shape[1], n_rays):
                coeff_s = cone.aperture * s_dir
                coeff_c = c_dir
                image = WS @ coeff_s + WC @ coeff_c
                sol, *_ = np.linalg.lstsq(basis, image, rcond=None)
                side = np.linalg.norm(WS @ sol[:ks])
                core = np.linalg.norm(WC @ sol[ks:])
                m = float(np.log(cone.aperture * core / side)) if side > 0 else float("inf")
                worst = min(worst, m)
    return ConeResult(bool(worst > cone_margin), worst)


def check_reparam_rates(est: SplittingEstimate, h_E: CocycleEvaluator | None, h_F: CocycleEvaluator | None,
                        T: float | None = None) -> tuple[float, float]:
    """(max over anchors of the h_E-reparametrized E rate, min of the h_F-reparametrized F rate)."""
    if T is not None and abs(T - est.horizon) > 1e-9:
        raise SplittingError("horizon differs from the estimate's horizon")
    rE, rF = reparam_rate_arrays(est, h_E, h_F)
    rate_E = float(np.max(rE)) if est.dims[0] else float("-inf")
    rate_F = float(np.min(rF)) if est.dims[1] else float("inf")
    return rate_E, rate_F


def reparam_rate_arrays(est: SplittingEstimate, h_E: CocycleEvaluator | None, h_F: CocycleEvaluator | None):
    T = est.horizon
    rE, rF = [], []
    for a in est.anchors:
        lE = 0.0 if h_E is None else h_E.log_along_chain(a.chain, a.index, a.index + a.steps)
        lF = 0.0 if h_F is None else h_F.log_along_chain(a.chain, a.index, a.index + a.steps)
        rE.append((a.log_E_max + lE) / T)
        rF.append((a.log_F_min + lF) / T)
    return np.array(rE), np.array(rF)


# ---------------------------------------------------------------------------
# periodic orbits


@dataclass(frozen=True)
class PeriodicOrbit:
    point: np.ndarray
    period: float
    multipliers: np.ndarray
    index: int


def find_periodic_orbit(spec: Flow, x0, t_search: float = 20.0, dt: float = 0.05, rel_tol: float = 1e-2,
                        tol: float = DEFAULT_TOL) -> PeriodicOrbit | None:
    """Close-return search followed by Newton shooting; None when nothing closes up."""
    x0 = np.asarray(x0, float)
    v0 = spec.evaluate(x0)
    speed = np.linalg.norm(v0)
    if speed == 0:
        return None
    scale = max(1.0, np.linalg.norm(x0))
    p, t = x0, 0.0
    prev_d = np.inf
    guess = None
    try:
        while t < t_search:
            p = advance(spec, p, dt, tol)
            t += dt
            dist = np.linalg.norm(p - x0)
            # the previous sample was a local minimum of the distance; it lies
            # within one step of travel from the true closest return
            if t > 1.0 + dt and dist > prev_d and prev_d < rel_tol * scale + speed * dt:
                guess = t - dt
                break
            prev_d = dist
    except (EscapedError, IntegrationError):
        return None
    if guess is None:
        return None

    def residual(z):
        x, T = z[:-1], z[-1]
        y = advance(spec, x, T, tol)
        return np.concatenate([y - x, [(x - x0) @ v0 / speed]])

    sol = optimize.least_squares(residual, np.concatenate([x0, [guess]]), xtol=1e-13, ftol=1e-13)
    x, T = sol.x[:-1], float(sol.x[-1])
    if np.linalg.norm(residual(sol.x)) > 1e-6 * scale or T <= 0:
        return None
    _, M = tangent_transport(spec, x, np.eye(spec.dimension), T, tol)
    mult = np.linalg.eigvals(M)
    trivial = int(np.argmin(np.abs(mult - 1.0)))
    rest = np.delete(mult, trivial)
    index = int(np.sum(np.abs(rest) < 1.0))
    return PeriodicOrbit(x, T, mult, index)


# ---------------------------------------------------------------------------
# verdict


@dataclass
class VerdictConfig:
    horizon: float = 20.0
    buffer: float = 10.0
    t_dom: float = 1.0
    dt: float = QR_INTERVAL
    tol: float = DEFAULT_TOL
    gap_tol: float = GAP_TOL
    delta_rate: float = DELTA_RATE
    eig_tol: float = EIG_TOL
    escape_horizon: float = 20.0
    grid: int | Sequence[int] = 16
    eps: float = 0.05
    t_max: float = 10.0
    samples_per_box: int = 2
    directions: int = 8
    n_regular: int = 20
    spacing: float = 1.0
    transient: float = 20.0
    radius: float | None = None
    seed: int = 0
    class_seed: Sequence[float] | None = None
    assignment: Mapping[str, str] | None = None
    coboundary: object | None = None


@dataclass
class Verdict:
    region: np.ndarray
    classes: list[SingularityClass]
    centers: dict[str, CenterSpace]
    escapes: dict[str, dict[str, bool | None]]
    S_E: list[str]
    S_F: list[str]
    excluded: list[str]
    estimate: SplittingEstimate | None
    dominated: bool | None
    E_contracted_reparam: bool | None
    F_expanded_reparam: bool | None
    all_singularities_hyperbolic: bool
    index_consistency: bool | None
    margins: dict[str, float | None]
    superset: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    failing: list[str] = field(default_factory=list)

    @property
    def clauses(self) -> dict[str, bool | None]:
        return {
            "all_singularities_hyperbolic": self.all_singularities_hyperbolic,
            "dominated": self.dominated,
            "E_contracted_reparam": self.E_contracted_reparam,
            "F_expanded_reparam": self.F_expanded_reparam,
            "index_consistency": self.index_consistency,
        }

    @property
    def multisingular(self) -> bool | None:
        vals = list(self.clauses.values())
        if any(v is False for v in vals):
            return False
        if any(v is None for v in vals):
            return None
        return True


def _tri_and(*vals):
    if any(v is False for v in vals):
        return False
    if any(v is None for v in vals):
        return None
    return True


def check_multisingular(spec: Flow, region, config: VerdictConfig | None = None) -> Verdict:
    """Classify zeros, sample the extended invariant set, estimate E + F and test every clause."""
    from . import recurrence as rec

    cfg = config or VerdictConfig()
    region = np.asarray(region, float)
    if region.shape != (spec.dimension, 2):
        raise ValueError("region must be a (d, 2) box")
    notes: list[str] = []

    inside = [s for s in spec.singularities if np.all((s.position >= region[:, 0]) & (s.position <= region[:, 1]))]
    hyperbolic = all(s.hyperbolic for s in inside)
    classes = {s.name: classify_singularity(spec, s, cfg.eig_tol) for s in inside if s.hyperbolic}

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", rec.ResolutionWarning)
        cover = rec.BoxCover(region, cfg.grid, cfg.eps, cfg.t_max)
    graph = rec.build_chain_graph(spec, cover, cfg.samples_per_box, cfg.seed)
    chain_cls = rec.chain_classes(graph)
    if not chain_cls:
        return _empty_verdict(region, classes, hyperbolic, notes + ["no recurrent class in region"])
    if cfg.class_seed is not None:
        box = int(cover.locate(np.asarray(cfg.class_seed, float))[0])
        matches = [k for k, c in enumerate(chain_cls) if box in c]
        if not matches:
            raise SplittingError("class seed is not in a recurrent box")
        class_id = matches[0]
    else:
        class_id = int(np.argmax([len(c) for c in chain_cls]))
    members = rec.singularities_in_class(spec, graph, class_id)
    member_names = {s.name for s in members}
    excluded = [n for n in classes if n not in member_names]
    for n, c in classes.items():
        if n in member_names and c.index in (0, c.dimension):
            excluded.append(n)
            notes.append(f"{n} is a sink or source: one invariant manifold is trivially escaping")
    active = {n: classes[n] for n in classes if n not in excluded}

    # S_E / S_F
    S_E, S_F, unassigned = [], [], []
    for n, c in active.items():
        side = (cfg.assignment or {}).get(n, c.side)
        if side == "E":
            S_E.append(n)
        elif side == "F":
            S_F.append(n)
        else:
            unassigned.append(n)
    if unassigned:
        notes.append(f"saddle value zero at {unassigned}; cannot assign")

    # escape tests and center spaces
    escapes: dict[str, dict[str, bool | None]] = {}
    centers: dict[str, CenterSpace] = {}
    sig_by_name = {s.name: s for s in inside}
    for n, c in active.items():
        res = {}
        for j in c.stable_gaps:
            res[("stable", j)] = escaping_manifold_test(spec, sig_by_name[n], j, region, cfg.escape_horizon,
                                                        "stable", tol=cfg.tol, seed=cfg.seed)
        for j in c.unstable_gaps:
            res[("unstable", j)] = escaping_manifold_test(spec, sig_by_name[n], j, region, cfg.escape_horizon,
                                                          "unstable", tol=cfg.tol, seed=cfg.seed)
        escapes[n] = {f"{k}_{j}": v for (k, j), v in res.items()}
        centers[n] = center_space(c, res)

    sample = rec.sample_extended_set(
        spec, graph, class_id, cfg.directions, {n: centers[n].basis for n in active},
        n_regular=cfg.n_regular, spacing=cfg.spacing, transient=cfg.transient, lead=cfg.buffer, tol=cfg.tol,
        seed=cfg.seed,
    )
    anchors: list = []
    owners: list = []
    if sample.orbit is not None and len(sample.orbit.offsets):
        anchors += orbit_chain_anchors(spec, sample.orbit.start, sample.orbit.offsets, cfg.horizon, cfg.buffer,
                                       cfg.dt, cfg.tol)
        owners += [None] * len(sample.orbit.offsets)
    elif sample.regular:
        anchors += list(sample.regular)
        owners += [None] * len(sample.regular)
    anchors += list(sample.singular)
    owners += list(sample.singular_owner)

    if not anchors:
        return _empty_verdict(region, classes, hyperbolic, notes + ["class holds no regular or center anchors"])

    dim_E = None
    if sample.orbit is not None and len(sample.orbit.offsets) and not active:
        po = find_periodic_orbit(spec, sample.regular[0].base, tol=cfg.tol)
        if po is not None:
            dim_E = po.index
            notes.append(f"periodic orbit of period {po.period:.6g} with index {po.index}")
    est = None
    try:
        est = estimate_splitting(spec, anchors, cfg.horizon, dim_E, cfg.buffer, cfg.dt, cfg.tol, cfg.gap_tol,
                                 cfg.seed, owners)
    except NoDominatedSplitting as exc:
        notes.append(str(exc))
    if est is None:
        v = _empty_verdict(region, list(classes.values()), hyperbolic, notes)
        v.dominated = False
        v.failing = ["dominated"]
        return v

    h_E = CocycleEvaluator(spec, CocycleSpec.over(spec, [sig_by_name[n] for n in S_E], radius=cfg.radius), cfg.tol)
    h_F = CocycleEvaluator(spec, CocycleSpec.over(spec, [sig_by_name[n] for n in S_F], radius=cfg.radius), cfg.tol)
    if cfg.coboundary is not None:
        h_E = h_E.with_coboundary(cfg.coboundary)
        h_F = h_F.with_coboundary(cfg.coboundary)
    rate_E, rate_F = check_reparam_rates(est, h_E, h_F)
    slack = check_domination(est, cfg.t_dom)
    dominated = bool(est.margin > 0 and slack >= 0)
    e_ok = bool(rate_E < -cfg.delta_rate)
    f_ok = bool(rate_F > cfg.delta_rate)

    consistency: bool | None = True
    kE = est.dims[0]
    for n in active:
        cs = centers[n]
        c = active[n]
        if n in S_F:
            ok = c.index == kE + 1 and (cs.stable_dims == 1 if cs.basis is not None else None)
        elif n in S_E:
            ok = c.index == kE and (cs.unstable_dims == 1 if cs.basis is not None else None)
        else:
            ok = False
        if ok is None:
            consistency = None if consistency is not False else False
        elif not ok:
            consistency = False
            notes.append(f"index bookkeeping fails at {n}")
    if unassigned:
        consistency = False

    margins = {
        "domination_margin": est.margin,
        "domination_slack": slack,
        "rate_E": rate_E,
        "rate_F": rate_F,
        "plain_rate_E": est.plain_rate_E,
        "plain_rate_F": est.plain_rate_F,
        "gap": est.gap,
    }
    v = Verdict(region, list(classes.values()), centers, escapes, sorted(S_E), sorted(S_F), sorted(excluded), est,
                dominated, e_ok, f_ok, hyperbolic, consistency, margins, list(sample.superset), notes)
    v.failing = [k for k, val in v.clauses.items() if val is not True]
    if sample.superset:
        v.notes.append(f"center space unavailable at {list(sample.superset)}; anchors sample a superset")
    return v


def _empty_verdict(region, classes, hyperbolic, notes) -> Verdict:
    """Verdict for a region whose sampled extended set is empty: every clause holds vacuously."""
    return Verdict(np.asarray(region), list(classes.values()) if isinstance(classes, dict) else classes, {}, {}, [],
                   [], [], None, True, True, True, hyperbolic, True, {}, [], notes)


def singular_hyperbolic_check(spec: Flow, region, config: VerdictConfig | None = None) -> Verdict:
    """The same pipeline with every zero reparametrized on the F side (plain singular hyperbolicity)."""
    cfg = config or VerdictConfig()
    names = {s.name: "F" for s in spec.singularities}
    cfg = VerdictConfig(**{**cfg.__dict__, "assignment": names})
    return check_multisingular(spec, region, cfg)
