from __future__ import annotations

import csv
import warnings

import numpy as np
import pytest

from multising import fields, recurrence as rec

SQUARE = np.array([[-2.0, 2.0], [-2.0, 2.0]])


def _graph(spec, region, grid, eps, t_max=20.0, spb=4):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", rec.ResolutionWarning)
        cover = rec.BoxCover(np.asarray(region, float), grid, eps, t_max)
    return rec.build_chain_graph(spec, cover, spb)


@pytest.fixture(scope="module")
def cycle_graph():
    return _graph(fields.builtin_limit_cycle(), SQUARE, 32, 0.1)


@pytest.fixture(scope="module")
def well_graph():
    return _graph(fields.builtin_double_well(), SQUARE, 32, 0.1)


def test_geometric_times():
    assert rec.geometric_times(3.0).tolist() == [1.0, 1.5, 2.25]
    with pytest.raises(ValueError):
        rec.geometric_times(0.5)


def test_cover_validation_and_resolution_warning():
    with pytest.raises(ValueError):
        rec.BoxCover(SQUARE, 8, 0.0)
    with pytest.raises(ValueError):
        rec.BoxCover(np.array([[1.0, 0.0]]), 8, 0.1)
    with pytest.warns(rec.ResolutionWarning):
        rec.BoxCover(SQUARE, 64, 0.05)


def test_cover_geometry():
    cover = rec.BoxCover(SQUARE, (4, 2), 0.1)
    assert cover.n_boxes == 8
    assert cover.widths.tolist() == [1.0, 2.0]
    assert cover.locate([[-2.0, -2.0], [2.0, 2.0], [3.0, 0.0]]).tolist() == [0, 7, -1]
    idx = np.arange(cover.n_boxes)
    assert np.array_equal(cover.locate(cover.centers(idx)), idx)
    pts = cover.sample_points(3)
    assert np.array_equal(cover.locate(pts), np.repeat(idx, 3))


def test_sink_recurrence_at_fine_eps():
    spec = fields.builtin_linear([[-1.0]])
    graph = _graph(spec, [[-1.0, 1.0]], 64, 0.01)
    boxes = graph.recurrent_boxes()
    # 0 is a grid face: both boxes touching it, and nothing else
    lo = graph.cover.lower_corner(boxes)[:, 0]
    assert np.all((lo <= 0) & (lo + graph.cover.widths[0] >= 0))
    assert len(rec.chain_classes(graph)) == 1


def test_lone_self_loops_need_a_returning_sample():
    spec = fields.builtin_linear([[-1.0]])
    # box 31 is centred on 0 and holds the whole eps-chain recurrent set
    graph = _graph(spec, [[-5.04, 5.2]], 64, 0.05, t_max=50.0, spb=8)
    raw = np.flatnonzero(graph.recurrent[graph.scc[:64]])
    assert raw.tolist() == [30, 31, 32]
    assert graph.recurrent_boxes().tolist() == [31]
    assert graph.returning[31] and not graph.returning[[30, 32]].any()
    rev = rec.reversed_graph(graph)
    assert rev.recurrent_boxes().tolist() == [31]


def test_limit_cycle_classes(cycle_graph):
    classes = rec.chain_classes(cycle_graph)
    assert len(classes) == 2
    centers = [cycle_graph.cover.centers(c) for c in classes]
    radii = [np.linalg.norm(c, axis=1) for c in centers]
    origin = int(np.argmin([r.max() for r in radii]))
    annulus = radii[1 - origin]
    assert radii[origin].max() < 0.3
    assert np.all(np.abs(annulus - 1.0) < 0.3)
    levels = rec.class_levels(cycle_graph)
    assert levels[origin] > levels[1 - origin]


def test_double_well_classes(well_graph):
    classes = rec.chain_classes(well_graph)
    assert len(classes) == 3
    dw = fields.builtin_double_well()
    levels = rec.class_levels(well_graph)
    by_zero = {}
    for s in dw.singularities:
        box = well_graph.cover.locate(s.position)[0]
        by_zero[s.name] = next(k for k, c in enumerate(classes) if box in c)
    assert levels[by_zero["saddle"]] > max(levels[by_zero["left"]], levels[by_zero["right"]])


def test_lyapunov_levels_decrease_along_condensation(well_graph, cycle_graph):
    for g in (well_graph, cycle_graph):
        order = rec.discrete_lyapunov(g)
        for a, b in g.condensation_edges():
            assert order.levels[a] > order.levels[b]
        # levels are constant on components by construction
        assert order.of_nodes(g.scc).shape == g.scc.shape


def test_condensation_is_acyclic(cycle_graph):
    import graphlib

    succ = {}
    for a, b in cycle_graph.condensation_edges():
        succ.setdefault(int(a), set()).add(int(b))
    list(graphlib.TopologicalSorter(succ).static_order())


def test_witnesses_reverify(well_graph):
    assert rec.verify_witnesses(fields.builtin_double_well(), well_graph, limit=2000) <= 2.0


def test_classes_are_chain_transitive(cycle_graph):
    rng = np.random.default_rng(0)
    for c in rec.chain_classes(cycle_graph):
        for a, b in rng.choice(c, (5, 2)):
            assert cycle_graph.reachable([a])[b]
            assert cycle_graph.reachable([b])[a]


@pytest.mark.parametrize("name", ["double-well", "limit-cycle"])
def test_reversal_duality(name, well_graph, cycle_graph):
    g = well_graph if name == "double-well" else cycle_graph
    rev = rec.reversed_graph(g)
    a = [c.tolist() for c in rec.chain_classes(g)]
    b = [c.tolist() for c in rec.chain_classes(rev)]
    assert a == b


def test_monotone_under_refinement(cycle_graph):
    fine = _graph(fields.builtin_limit_cycle(), SQUARE, 64, 0.05)
    coarse_boxes = cycle_graph.recurrent_boxes()
    cover = cycle_graph.cover
    lo = cover.lower_corner(coarse_boxes) - cover.eps
    hi = lo + cover.widths + 2 * cover.eps
    for p in fine.cover.centers(fine.recurrent_boxes()):
        assert np.any(np.all((p >= lo) & (p <= hi), axis=1))


def test_filtrating_neighborhoods(well_graph, cycle_graph):
    classes = rec.chain_classes(well_graph)
    dw = fields.builtin_double_well()
    saddle_box = well_graph.cover.locate(dw.singularities[1].position)[0]
    for k, c in enumerate(classes):
        if saddle_box in c:
            continue
        nbhd = rec.filtrating_neighborhood(well_graph, k)
        assert np.isin(c, nbhd).all()
        assert saddle_box not in nbhd
    for k, c in enumerate(rec.chain_classes(cycle_graph)):
        if np.linalg.norm(cycle_graph.cover.centers(c), axis=1).max() > 0.5:
            nbhd = rec.filtrating_neighborhood(cycle_graph, k)
            assert rec.is_trapping(cycle_graph, nbhd)


def test_sink_neighborhood_is_trapping():
    spec = fields.builtin_linear(np.diag([-1.0, -1.0]))
    g = _graph(spec, [[-1.0, 1.0]] * 2, 8, 0.1, t_max=5.0, spb=2)
    classes = rec.chain_classes(g)
    assert len(classes) == 1
    assert rec.class_levels(g) == [0]
    nbhd = rec.filtrating_neighborhood(g, 0)
    assert np.isin(classes[0], nbhd).all()
    assert rec.is_trapping(g, nbhd)


def test_extended_set_limit_cycle(cycle_graph):
    lc = fields.builtin_limit_cycle()
    k = next(i for i, c in enumerate(rec.chain_classes(cycle_graph))
             if np.linalg.norm(cycle_graph.cover.centers(c), axis=1).max() > 0.5)
    sample = rec.sample_extended_set(lc, cycle_graph, k, 8, {}, n_regular=10)
    assert sample.singular == () and len(sample.regular) == 10
    in_class = set(rec.chain_classes(cycle_graph)[k].tolist())
    for L in sample.regular:
        assert cycle_graph.cover.locate(L.base)[0] in in_class
        assert abs(np.linalg.norm(L.base) - 1.0) < 1e-3


def test_extended_set_center_directions_and_superset():
    cm = fields.builtin_cycle_model()
    g = _graph(cm, [[-1.0, 5.0], [-1.0, 1.0], [-1.0, 1.0]], (12, 4, 4), 0.05, t_max=5.0, spb=2)
    classes = rec.chain_classes(g)
    k = int(np.argmax([len(c) for c in classes]))
    assert {s.name for s in rec.singularities_in_class(cm, g, k)} == {"sigma0", "sigma1"}
    basis = np.eye(3)[:, 1:]
    with pytest.warns(RuntimeWarning):
        sample = rec.sample_extended_set(cm, g, k, 6, {"sigma0": basis, "sigma1": None})
    assert sample.superset == ("sigma1",)
    for L, owner in zip(sample.singular, sample.singular_owner):
        if owner == "sigma0":
            assert np.linalg.norm(L.direction - basis @ (basis.T @ L.direction)) < 1e-9
    # three connections of two chart segments, eight points per segment
    assert len(sample.regular) == 48


def test_direction_grid_spans_basis():
    basis = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 3)))[0]
    dirs = rec.direction_grid(basis, 5)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert np.allclose(dirs - dirs @ basis @ basis.T, 0, atol=1e-12)


def test_exports(tmp_path, well_graph):
    adj = tmp_path / "graph.txt"
    rec.write_adjacency(well_graph, adj)
    lines = adj.read_text().splitlines()
    assert lines[0].startswith("# boxes 1024 exit 1024")
    assert len(lines) == 1025
    levels = tmp_path / "levels.csv"
    rec.write_class_levels(well_graph, levels)
    rows = list(csv.reader(open(levels)))
    assert rows[0] == ["class", "boxes", "level", "min_box", "max_box"]
    assert len(rows) == 4
