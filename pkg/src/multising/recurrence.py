"""Box-level chain recurrence.

Boxes are nodes; box ``i`` points to box ``j`` when a sample of ``i`` flows,
for some time on a geometric grid in ``[1, T_max]``, to a point whose
``eps``-cube meets the closure of ``j``.  Strongly connected components with
a cycle approximate chain recurrence classes, and the longest-path layering
of the condensation is a discrete Lyapunov function.  Orbits that leave the
region feed a virtual exit node.
"""
from __future__ import annotations

import csv
import graphlib
import itertools
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.stats import qmc

from .fields import GluedChartFlow
from .flow import DEFAULT_TOL, EscapedError, Flow, advance, advance_batch
from .poincare import SING_TOL, section_of_field
from .projective import ProjectivePoint

T_MAX = 50.0
SAMPLES_PER_BOX = 8


class ResolutionWarning(UserWarning):
    pass


class RefineGridError(ValueError):
    pass


def geometric_times(t_max: float, ratio: float = 1.5) -> np.ndarray:
    if t_max < 1:
        raise ValueError("T_max must be at least 1")
    out = [1.0]
    while out[-1] * ratio <= t_max + 1e-12:
        out.append(out[-1] * ratio)
    return np.array(out)


@dataclass(frozen=True)
class BoxCover:
    region: np.ndarray
    grid: tuple[int, ...]
    eps: float
    t_max: float = T_MAX

    def __post_init__(self):
        region = np.asarray(self.region, dtype=float)
        if region.ndim != 2 or region.shape[1] != 2 or np.any(region[:, 0] >= region[:, 1]):
            raise ValueError("region must be a (d, 2) box with lo < hi")
        grid = np.broadcast_to(np.asarray(self.grid, dtype=int), (region.shape[0],))
        if np.any(grid < 1):
            raise ValueError("grid resolution must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.t_max < 1:
            raise ValueError("T_max must be at least 1")
        object.__setattr__(self, "region", region)
        object.__setattr__(self, "grid", tuple(int(g) for g in grid))
        if np.any(self.widths < 2 * self.eps):
            warnings.warn(
                f"box edge {self.widths.min():.4g} is below 2*eps={2 * self.eps:.4g}; "
                "classes are resolved only up to eps",
                ResolutionWarning,
                stacklevel=2,
            )

    @property
    def dimension(self) -> int:
        return self.region.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return (self.region[:, 1] - self.region[:, 0]) / np.asarray(self.grid)

    @property
    def n_boxes(self) -> int:
        return int(np.prod(self.grid))

    def multi_index(self, idx) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx), self.grid), axis=-1)

    def flat_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(multi[..., k] for k in range(self.dimension)), self.grid)

    def lower_corner(self, idx) -> np.ndarray:
        return self.region[:, 0] + self.multi_index(idx) * self.widths

    def centers(self, idx=None) -> np.ndarray:
        idx = np.arange(self.n_boxes) if idx is None else idx
        return self.lower_corner(idx) + 0.5 * self.widths

    def locate(self, x) -> np.ndarray:
        """Box index of each point (-1 outside the region); upper faces belong to the last box."""
        x = np.atleast_2d(np.asarray(x, float))
        k = np.floor((x - self.region[:, 0]) / self.widths).astype(int)
        grid = np.asarray(self.grid)
        k = np.where(x == self.region[:, 1], grid - 1, k)
        inside = np.all((k >= 0) & (k < grid), axis=1)
        out = np.full(x.shape[0], -1)
        out[inside] = self.flat_index(k[inside])
        return out

    def sample_points(self, samples_per_box: int, seed: int = 0) -> np.ndarray:
        """(n_boxes * samples_per_box, d) points: each box's center, then shared Halton offsets."""
        d = self.dimension
        offsets = [np.full(d, 0.5)]
        if samples_per_box > 1:
            offsets.extend(qmc.Halton(d, scramble=True, seed=seed).random(samples_per_box - 1))
        offsets = np.array(offsets)
        low = self.lower_corner(np.arange(self.n_boxes))
        pts = low[:, None, :] + offsets[None, :, :] * self.widths
        return pts.reshape(-1, d)


@dataclass
class ChainGraph:
    cover: BoxCover
    edges: np.ndarray
    witness_points: np.ndarray
    witness_times: np.ndarray
    scc: np.ndarray
    recurrent: np.ndarray
    artifact: np.ndarray
    samples_per_box: int = SAMPLES_PER_BOX
    # per box: some sample comes back within eps of itself at a jump time
    returning: np.ndarray | None = field(default=None, repr=False)
    _levels: np.ndarray | None = field(default=None, repr=False)

    @property
    def exit_node(self) -> int:
        return self.cover.n_boxes

    @property
    def n_nodes(self) -> int:
        return self.cover.n_boxes + 1

    def adjacency(self) -> sparse.csr_matrix:
        n = self.n_nodes
        data = np.ones(len(self.edges), dtype=bool)
        return sparse.csr_matrix((data, (self.edges[:, 0], self.edges[:, 1])), shape=(n, n))

    def condensation_edges(self) -> np.ndarray:
        a = self.scc[self.edges[:, 0]]
        b = self.scc[self.edges[:, 1]]
        keep = a != b
        if not np.any(keep):
            return np.zeros((0, 2), dtype=int)
        return np.unique(np.stack([a[keep], b[keep]], axis=1), axis=0)

    @property
    def resolved(self) -> np.ndarray:
        """Recurrent components that are not resolution shadows of a larger neighbor."""
        return self.recurrent & ~self.artifact

    def recurrent_boxes(self) -> np.ndarray:
        boxes = np.arange(self.cover.n_boxes)
        return boxes[self.resolved[self.scc[boxes]]]

    def reachable(self, nodes, reverse: bool = False) -> np.ndarray:
        """Boolean mask of nodes reachable from ``nodes`` (inclusive)."""
        adj = self.adjacency()
        if reverse:
            adj = adj.T.tocsr()
        mask = np.zeros(self.n_nodes, dtype=bool)
        frontier = np.unique(np.asarray(nodes, dtype=int))
        mask[frontier] = True
        while frontier.size:
            nxt = adj[frontier].indices
            nxt = np.unique(nxt[~mask[nxt]])
            mask[nxt] = True
            frontier = nxt
        return mask


def build_chain_graph(spec: Flow, cover: BoxCover, samples_per_box: int = SAMPLES_PER_BOX, seed: int = 0,
                      tol: float = 1e-7, exit_check_dt: float = 0.5) -> ChainGraph:
    d = cover.dimension
    if d != spec.dimension:
        raise ValueError("cover and flow dimensions differ")
    pts = cover.sample_points(samples_per_box, seed)
    owner = np.repeat(np.arange(cover.n_boxes), samples_per_box)
    extra = _saddle_seeds(spec, cover)
    if len(extra):
        pts = np.concatenate([pts, extra])
        owner = np.concatenate([owner, cover.locate(extra)])
    jump_times = geometric_times(cover.t_max)
    dense = np.arange(exit_check_dt, cover.t_max + 1e-12, exit_check_dt)
    all_times = np.unique(np.concatenate([jump_times, dense]))
    traj, _ = advance_batch(spec, pts, all_times, tol=tol, bounds=cover.region)
    lo, hi = cover.region[:, 0], cover.region[:, 1]
    inside = np.all((traj >= lo) & (traj <= hi), axis=2)
    starts_ok = np.asarray(spec.contains(pts), bool)
    if isinstance(spec, GluedChartFlow):
        inside &= np.asarray(spec.contains(traj.reshape(-1, d)), bool).reshape(inside.shape)
    alive = np.logical_and.accumulate(inside, axis=0) & starts_ok[None, :]
    sel = np.searchsorted(all_times, jump_times)
    ends = traj[sel]
    alive_j = alive[sel]

    # box targets for each (time, sample) endpoint
    w = cover.widths
    grid = np.asarray(cover.grid)
    reach = int(np.ceil(cover.eps / w.min())) + 1
    src_list, dst_list, wp_list, wt_list = [], [], [], []
    ti, si = np.nonzero(alive_j)
    y = ends[ti, si]
    rel = (y - lo) / w
    base = np.floor(rel).astype(int)
    e = cover.eps / w
    for off in itertools.product(range(-reach, reach + 1), repeat=d):
        k = base + np.asarray(off)
        ok = np.all((k >= 0) & (k < grid) & (k <= rel + e) & (k + 1 >= rel - e), axis=1)
        if not np.any(ok):
            continue
        src_list.append(owner[si[ok]])
        dst_list.append(cover.flat_index(k[ok]))
        wp_list.append(pts[si[ok]])
        wt_list.append(jump_times[ti[ok]])
    gap = np.abs(ends - pts[None, :, :]).max(axis=2)
    returning = np.zeros(cover.n_boxes, dtype=bool)
    returning[owner[np.any(alive_j & (gap <= cover.eps), axis=0)]] = True
    dead = ~alive[-1]
    if np.any(dead):
        src_list.append(owner[dead])
        dst_list.append(np.full(int(dead.sum()), cover.n_boxes))
        wp_list.append(pts[dead])
        first_out = np.argmin(alive[:, dead], axis=0)
        wt_list.append(all_times[first_out])
    src = np.concatenate(src_list) if src_list else np.zeros(0, int)
    dst = np.concatenate(dst_list) if dst_list else np.zeros(0, int)
    wp = np.concatenate(wp_list) if wp_list else np.zeros((0, d))
    wt = np.concatenate(wt_list) if wt_list else np.zeros(0)
    n = cover.n_boxes + 1
    key = src.astype(np.int64) * n + dst
    _, first = np.unique(key, return_index=True)
    edges = np.stack([src[first], dst[first]], axis=1)
    return _finish_graph(cover, edges, wp[first], wt[first], samples_per_box, returning)


def _saddle_seeds(spec: Flow, cover: BoxCover, per_ray: int = 24) -> np.ndarray:
    """Extra samples on invariant sets through saddles, inside the region.

    Recurrence that passes through a saddle follows its stable manifold,
    a measure-zero set that generic box samples miss, so the graph could
    lose a class member the flow certainly has.  Glued flows contribute
    their declared connections; smooth flows contribute points on the
    linear stable and unstable eigendirections of every registered saddle.
    """
    d = cover.dimension
    if isinstance(spec, GluedChartFlow):
        pts = [p for conn in spec.connections for p in spec.connection_points(conn, per_segment=per_ray, s_min=1e-3)]
    else:
        pts = []
        size = float(np.min(cover.region[:, 1] - cover.region[:, 0]))
        radii = np.geomspace(1e-3 * size, 0.5 * size, per_ray)
        for sig in spec.singularities:
            if not sig.hyperbolic or sig.index in (0, d):
                continue
            lam, vecs = np.linalg.eig(np.asarray(spec.jacobian(sig.position), float))
            dirs = [vecs[:, k].real for k in range(d)] + [vecs[:, k].imag for k in range(d) if lam[k].imag != 0]
            for v in dirs:
                n = np.linalg.norm(v)
                if n < 1e-12:
                    continue
                for sgn in (1.0, -1.0):
                    pts.extend(sig.position + sgn * r * v / n for r in radii)
    if not pts:
        return np.zeros((0, d))
    pts = np.array(pts)
    keep = np.all((pts >= cover.region[:, 0]) & (pts <= cover.region[:, 1]), axis=1)
    return pts[keep]


def _finish_graph(cover, edges, wp, wt, samples_per_box, returning=None) -> ChainGraph:
    n = cover.n_boxes + 1
    adj = sparse.csr_matrix((np.ones(len(edges), bool), (edges[:, 0], edges[:, 1])), shape=(n, n))
    _, labels = csgraph.connected_components(adj, directed=True, connection="strong")
    labels = _canonical_labels(labels)
    sizes = np.bincount(labels)
    self_loop = np.zeros(sizes.size, dtype=bool)
    loops = edges[edges[:, 0] == edges[:, 1], 0]
    self_loop[labels[loops]] = True
    recurrent = (sizes > 1) | self_loop
    recurrent[labels[cover.n_boxes]] = False
    artifact = _shadow_components(cover, edges, labels, recurrent)
    if returning is not None:
        artifact |= _unwitnessed_loops(cover, labels, sizes, recurrent, returning)
    return ChainGraph(cover, edges, wp, wt, labels, recurrent, artifact, samples_per_box, returning)


def _unwitnessed_loops(cover: BoxCover, labels, sizes, recurrent, returning) -> np.ndarray:
    """Flag single-box components whose self-loop no sampled point backs up.

    The box-level self-loop only says that the image of the box comes within
    eps of the box.  A chain recurrent point needs an eps-chain back to
    itself, so a lone box counts only when one of its samples returns within
    eps of its own start.  The returning relation is symmetric under time
    reversal, so reversed graphs reuse it unchanged.
    """
    boxes = np.arange(cover.n_boxes)
    lone = recurrent & (sizes == 1)
    witnessed = np.zeros(sizes.size, dtype=bool)
    witnessed[labels[boxes[returning]]] = True
    return lone & ~witnessed


def _shadow_components(cover: BoxCover, edges, labels, recurrent) -> np.ndarray:
    """Flag recurrent components that only exist because boxes are fattened by eps.

    A box whose eps-neighborhood overlaps its own image gets a self-loop even
    when no eps-chain returns to any of its points.  Such components sit
    within one cell plus eps of a genuine class and are joined to it by a
    one-way edge.  Of two recurrent components in that situation the smaller
    one is flagged; the rule is symmetric under reversing every edge.
    """
    ncomp = labels.max() + 1
    artifact = np.zeros(ncomp, dtype=bool)
    comps = [c for c in np.flatnonzero(recurrent)]
    if len(comps) < 2:
        return artifact
    boxes = np.arange(cover.n_boxes)
    members = {c: cover.multi_index(boxes[labels[boxes] == c]) for c in comps}
    size = {c: len(members[c]) for c in comps}
    reach = 1 + int(np.ceil(cover.eps / cover.widths.min() - 1e-12))
    a, b = labels[edges[:, 0]], labels[edges[:, 1]]
    rec = recurrent[a] & recurrent[b] & (a != b)
    linked = {(int(x), int(y)) for x, y in zip(a[rec], b[rec])}
    linked |= {(y, x) for x, y in linked}
    for c in sorted(comps, key=lambda c: (size[c], c)):
        for other in comps:
            if other == c or artifact[other] or size[other] <= size[c] or (c, other) not in linked:
                continue
            gap = np.abs(members[c][:, None, :] - members[other][None, :, :]).max(axis=2).min()
            if gap <= reach:
                artifact[c] = True
                break
    return artifact


def _canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel components in order of their smallest node, for reproducible ids."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(order.size)
    return remap[labels]


def reversed_graph(graph: ChainGraph) -> ChainGraph:
    """Same boxes with every box-to-box edge reversed (exit edges dropped)."""
    ex = graph.exit_node
    keep = (graph.edges[:, 0] != ex) & (graph.edges[:, 1] != ex)
    edges = graph.edges[keep][:, ::-1]
    return _finish_graph(graph.cover, edges, graph.witness_points[keep], graph.witness_times[keep],
                         graph.samples_per_box, graph.returning)


def chain_classes(graph: ChainGraph) -> list[np.ndarray]:
    """Recurrent components as sorted arrays of box indices, ordered by smallest box."""
    boxes = np.arange(graph.cover.n_boxes)
    out = []
    for c in np.flatnonzero(graph.resolved):
        members = boxes[graph.scc[boxes] == c]
        if members.size:
            out.append(members)
    out.sort(key=lambda m: int(m[0]))
    return out


def class_component(graph: ChainGraph, class_id: int) -> int:
    classes = chain_classes(graph)
    if not 0 <= class_id < len(classes):
        raise IndexError(f"no chain class {class_id}")
    return int(graph.scc[classes[class_id][0]])


@dataclass(frozen=True)
class LyapunovOrder:
    levels: np.ndarray  # per component

    def of_nodes(self, scc: np.ndarray) -> np.ndarray:
        return self.levels[scc]


def discrete_lyapunov(graph: ChainGraph) -> LyapunovOrder:
    """Longest-path layering of the condensation: sinks at level 0."""
    ncomp = int(graph.scc.max()) + 1
    succ: dict[int, set[int]] = {c: set() for c in range(ncomp)}
    for a, b in graph.condensation_edges():
        succ[int(a)].add(int(b))
    levels = np.zeros(ncomp, dtype=int)
    for c in graphlib.TopologicalSorter(succ).static_order():
        if succ[c]:
            levels[c] = 1 + max(levels[s] for s in succ[c])
    return LyapunovOrder(levels)


def class_levels(graph: ChainGraph, order: LyapunovOrder | None = None) -> list[int]:
    order = discrete_lyapunov(graph) if order is None else order
    return [int(order.levels[graph.scc[c[0]]]) for c in chain_classes(graph)]


def _basin(graph: ChainGraph, core: np.ndarray, reverse: bool) -> np.ndarray:
    """Nodes all of whose (forward or backward) closure lies inside the closure of ``core``."""
    closure = graph.reachable(core, reverse=reverse)
    adj = graph.adjacency()
    if reverse:
        adj = adj.T.tocsr()
    bad = ~closure
    # propagate "can reach outside" backwards along edges until stable
    radj = adj.T.tocsr()
    frontier = np.flatnonzero(bad)
    while frontier.size:
        prev = radj[frontier].indices
        prev = np.unique(prev[~bad[prev]])
        bad[prev] = True
        frontier = prev
    return ~bad


def filtrating_neighborhood(graph: ChainGraph, class_id: int) -> np.ndarray:
    """Box indices of attracting side intersected with repelling side of a class."""
    classes = chain_classes(graph)
    core = classes[class_id]
    attracting = _basin(graph, core, reverse=False)
    repelling = _basin(graph, core, reverse=True)
    nodes = np.flatnonzero(attracting & repelling)
    nodes = nodes[nodes < graph.cover.n_boxes]
    for k, other in enumerate(classes):
        if k != class_id and np.isin(other, nodes).any():
            raise RefineGridError(f"class {k} cannot be separated from class {class_id}; refine the grid")
    return nodes


def interior_boxes(cover: BoxCover, boxes) -> np.ndarray:
    """Boxes of the set whose grid neighbors (including diagonals) all belong to the set."""
    boxes = np.asarray(boxes, dtype=int)
    inset = np.zeros(cover.n_boxes, dtype=bool)
    inset[boxes] = True
    multi = cover.multi_index(boxes)
    grid = np.asarray(cover.grid)
    keep = np.ones(boxes.size, dtype=bool)
    for off in itertools.product((-1, 0, 1), repeat=cover.dimension):
        k = multi + np.asarray(off)
        valid = np.all((k >= 0) & (k < grid), axis=1)
        nb = np.zeros(boxes.size, dtype=bool)
        nb[valid] = inset[cover.flat_index(k[valid])]
        keep &= nb
    return boxes[keep]


def is_trapping(graph: ChainGraph, boxes) -> bool:
    """Out-edges of interior boxes stay inside the set."""
    inner = interior_boxes(graph.cover, boxes)
    inset = np.zeros(graph.n_nodes, dtype=bool)
    inset[np.asarray(boxes, dtype=int)] = True
    src_inner = np.isin(graph.edges[:, 0], inner)
    return bool(np.all(inset[graph.edges[src_inner, 1]]))


def verify_witnesses(spec: Flow, graph: ChainGraph, limit: int | None = None, tol: float = 1e-9) -> float:
    """Largest distance (in eps units) from a re-flowed witness to its target box."""
    cover = graph.cover
    worst = 0.0
    edges = graph.edges if limit is None else graph.edges[:limit]
    for (a, b), p, t in zip(edges, graph.witness_points, graph.witness_times):
        if b == graph.exit_node:
            continue
        y = advance(spec, p, t, tol)
        lo = cover.lower_corner(b)
        gap = np.maximum(np.maximum(lo - y, y - (lo + cover.widths)), 0.0)
        worst = max(worst, float(np.max(gap)) / cover.eps)
    return worst


# ---------------------------------------------------------------------------
# sampled extended invariant set


@dataclass(frozen=True)
class OrbitSegment:
    """Regular anchors given as phi^{t_k}(start) for increasing offsets t_k."""

    start: np.ndarray
    offsets: np.ndarray


@dataclass(frozen=True)
class ExtendedSetSample:
    regular: tuple[ProjectivePoint, ...]
    singular: tuple[ProjectivePoint, ...]
    singular_owner: tuple[str, ...] = ()
    orbit: OrbitSegment | None = None
    superset: tuple[str, ...] = ()

    @property
    def anchors(self) -> list[ProjectivePoint]:
        return list(self.regular) + list(self.singular)


def direction_grid(basis: np.ndarray, per_dim: int, seed: int = 0) -> np.ndarray:
    """Unit directions in the column span of ``basis`` (d x k), one per line."""
    k = basis.shape[1]
    if k == 1:
        coords = np.ones((1, 1))
    elif k == 2:
        th = np.pi * np.arange(per_dim) / per_dim
        coords = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        z = qmc.Halton(k, scramble=True, seed=seed).random(per_dim * (k - 1))
        from scipy.special import ndtri

        coords = ndtri(np.clip(z, 1e-12, 1 - 1e-12))
    v = coords @ basis.T
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def singularities_in_class(spec: Flow, graph: ChainGraph, class_id: int) -> list:
    members = set(chain_classes(graph)[class_id].tolist())
    out = []
    for s in spec.singularities:
        boxes = _boxes_touching(graph.cover, s.position)
        if any(b in members for b in boxes):
            out.append(s)
    return out


def _boxes_touching(cover: BoxCover, x) -> list[int]:
    """Every box whose closure contains x (several when x sits on a face)."""
    x = np.asarray(x, float)
    rel = (x - cover.region[:, 0]) / cover.widths
    grid = np.asarray(cover.grid)
    options = []
    for k in range(cover.dimension):
        f = np.floor(rel[k])
        cand = {int(f)}
        if rel[k] == f:
            cand.add(int(f) - 1)
        options.append([c for c in cand if 0 <= c < grid[k]])
    return [int(cover.flat_index(np.array(m))) for m in itertools.product(*options)]


def sample_extended_set(spec: Flow, graph: ChainGraph, class_id: int, directions_per_center_dim: int,
                        centers: Mapping[str, np.ndarray | None], n_regular: int = 20, spacing: float = 1.0,
                        transient: float = 20.0, lead: float = 10.0, tol: float = DEFAULT_TOL,
                        seed: int = 0) -> ExtendedSetSample:
    """Anchors for the extended invariant set of one chain class.

    ``centers`` maps singularity names to an orthonormal basis of their
    center space, or to None when the escape tests were inconclusive; in
    that case the whole projective fiber is sampled and the singularity is
    listed in ``superset``.  ``lead`` is the time an anchor orbit runs before
    its first anchor, so forward-only chains have a past to converge on.
    """
    cls = chain_classes(graph)[class_id]
    singular, owner, superset = [], [], []
    for name, basis in centers.items():
        sig = next(s for s in spec.singularities if s.name == name)
        if basis is None:
            warnings.warn(f"center space of {name} unavailable; sampling the full fiber", RuntimeWarning,
                          stacklevel=2)
            basis = np.eye(spec.dimension)
            superset.append(name)
        for u in direction_grid(np.asarray(basis), directions_per_center_dim, seed):
            singular.append(ProjectivePoint(sig.position, u))
            owner.append(name)

    if isinstance(spec, GluedChartFlow):
        regular = []
        for conn in spec.connections:
            for p in spec.connection_points(conn):
                regular.append(section_of_field(spec, p))
        return ExtendedSetSample(tuple(regular), tuple(singular), tuple(owner), None, tuple(superset))

    in_class = np.zeros(graph.cover.n_boxes, dtype=bool)
    in_class[cls] = True
    zeros = np.array([s.position for s in spec.singularities]) if spec.singularities else np.zeros((0, spec.dimension))
    # start from the class box farthest from every zero
    centers_xy = graph.cover.centers(cls)
    if len(zeros):
        dist = np.min(np.linalg.norm(centers_xy[:, None] - zeros[None], axis=2), axis=1)
        start_box = cls[int(np.argmax(dist))]
    else:
        start_box = cls[len(cls) // 2]
    x = graph.cover.centers(np.array([start_box]))[0]
    if np.linalg.norm(spec.evaluate(x)) <= SING_TOL:
        return ExtendedSetSample((), tuple(singular), tuple(owner), None, tuple(superset))
    try:
        x = advance(spec, x, transient, tol)
    except EscapedError:
        return ExtendedSetSample((), tuple(singular), tuple(owner), None, tuple(superset))
    offsets, regular = [], []
    p, t = advance(spec, x, lead, tol), lead
    while len(regular) < n_regular and t < lead + 20 * n_regular * spacing:
        box = graph.cover.locate(p)[0]
        if box >= 0 and in_class[box] and np.linalg.norm(spec.evaluate(p)) > SING_TOL:
            regular.append(section_of_field(spec, p))
            offsets.append(t)
        p = advance(spec, p, spacing, tol)
        t += spacing
    return ExtendedSetSample(tuple(regular), tuple(singular), tuple(owner),
                             OrbitSegment(x, np.array(offsets)), tuple(superset))


# ---------------------------------------------------------------------------
# exports


def write_adjacency(graph: ChainGraph, path) -> None:
    """One line per box: index, center coordinates, then successor indices."""
    cover = graph.cover
    adj = graph.adjacency()
    with open(path, "w") as fh:
        fh.write(f"# boxes {cover.n_boxes} exit {graph.exit_node} eps {cover.eps!r}\n")
        centers = cover.centers()
        for i in range(cover.n_boxes):
            succ = " ".join(str(j) for j in sorted(adj[i].indices))
            coords = " ".join(repr(float(c)) for c in centers[i])
            fh.write(f"{i} {coords} : {succ}\n")


def write_class_levels(graph: ChainGraph, path) -> None:
    order = discrete_lyapunov(graph)
    classes = chain_classes(graph)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "boxes", "level", "min_box", "max_box"])
        for k, c in enumerate(classes):
            w.writerow([k, c.size, int(order.levels[graph.scc[c[0]]]), int(c[0]), int(c[-1])])
