import json

import numpy as np
import pytest
import scipy.linalg
import scipy.spatial
from hypothesis import given, settings
from hypothesis import strategies as st

from lepreg.delaunay import delaunay_simplices
from lepreg.errors import DegenerateConfigurationError, InvalidArgumentError
from lepreg.linalg import AffineTransform
from lepreg.matching import (
    LocalAffineSet,
    delaunay_neighborhoods,
    fit_affine_wlls,
    fit_local_affines,
    fit_translations,
    prealign,
)

from .oracles import brute_force_delaunay_edges, rotz


def _random_affine(rng, scale=0.2, tscale=10.0):
    return AffineTransform(scipy.linalg.expm(rng.normal(scale=scale, size=(3, 3))), rng.normal(scale=tscale, size=3))


def _objective(A, x, y, w):
    return float(np.sum(w * np.sum((y - A(x)) ** 2, axis=1)))


# --- fit_affine_wlls -----------------------------------------------------------


def test_identity_fit():
    x = np.random.default_rng(0).normal(size=(10, 3))
    A = fit_affine_wlls(x, x)
    np.testing.assert_allclose(A.linear, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(A.translation, 0, atol=1e-12)


def test_exact_scaling_fit():
    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    A = fit_affine_wlls(x, 2 * x)
    np.testing.assert_allclose(A.linear, 2 * np.eye(3), atol=1e-14)
    np.testing.assert_allclose(A.translation, 0, atol=1e-14)


def test_noisy_fit_beats_truth_and_perturbations():
    rng = np.random.default_rng(1)
    x = rng.uniform(-30, 30, size=(20, 3))
    truth = _random_affine(rng)
    y = truth(x) + rng.normal(scale=0.5, size=x.shape)
    w = rng.uniform(0.1, 1, size=20)
    w /= w.sum()
    A = fit_affine_wlls(x, y, w)
    best = _objective(A, x, y, w)
    assert best <= _objective(truth, x, y, w)
    for _ in range(1000):
        M = A.matrix.copy()
        M[:3] += rng.normal(scale=1e-3, size=(3, 4)) * [1, 1, 1, 10]
        assert best <= _objective(AffineTransform.from_matrix(M), x, y, w)


def test_uniform_fit_matches_lstsq_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(scale=10, size=(15, 3))
    y = rng.normal(scale=10, size=(15, 3))
    A = fit_affine_wlls(x, y)
    X = np.hstack([x, np.ones((15, 1))])
    sol, *_ = np.linalg.lstsq(X, y, rcond=None)
    np.testing.assert_allclose(A.linear, sol[:3].T, atol=1e-10)
    np.testing.assert_allclose(A.translation, sol[3], atol=1e-10)


def test_weighted_fit_matches_scaled_lstsq_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(scale=10, size=(12, 2))
    y = rng.normal(scale=10, size=(12, 2))
    w = rng.uniform(0.05, 1, size=12)
    A = fit_affine_wlls(x, y, w)
    s = np.sqrt(w)[:, None]
    sol, *_ = np.linalg.lstsq(s * np.hstack([x, np.ones((12, 1))]), s * y, rcond=None)
    np.testing.assert_allclose(A.matrix[:2], sol.T, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fit_is_equivariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=20, size=(10, 3))
    y = rng.normal(scale=20, size=(10, 3))
    w = rng.uniform(0.1, 1, size=10)
    G = _random_affine(rng, 0.3)
    A = fit_affine_wlls(x, y, w)
    B = fit_affine_wlls(x, G(y), w)
    np.testing.assert_allclose(B.matrix, (G @ A).matrix, atol=1e-8)


def test_fit_degenerate_inputs():
    x = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    with pytest.raises(DegenerateConfigurationError):
        fit_affine_wlls(x, x)
    with pytest.raises(DegenerateConfigurationError):
        fit_affine_wlls(x[:3], x[:3])
    with pytest.raises(InvalidArgumentError):
        fit_affine_wlls(x, x, [0, 0, 0, 0])
    with pytest.raises(InvalidArgumentError):
        fit_affine_wlls(x, x[:3])


# --- prealign --------------------------------------------------------------------


def test_prealign_identity_and_translation():
    y = np.random.default_rng(4).normal(size=(5, 3))
    np.testing.assert_array_equal(prealign(y, AffineTransform.identity(3)), y)
    t = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(prealign(y, AffineTransform.translation_only(t)), y - t, atol=1e-15)


def test_prealign_after_exact_fit_recovers_reference():
    rng = np.random.default_rng(5)
    x = rng.uniform(-40, 40, size=(30, 3))
    A = _random_affine(rng)
    y = A(x)
    np.testing.assert_allclose(prealign(y, fit_affine_wlls(x, y)), x, atol=1e-9)


# --- Delaunay ----------------------------------------------------------------------


def test_single_tetrahedron():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    g = delaunay_neighborhoods(pts)
    assert g.simplices.tolist() == [[0, 1, 2, 3]]
    for nb in g.neighborhoods:
        assert nb.tolist() == [0, 1, 2, 3]


def test_single_triangle():
    g = delaunay_neighborhoods(np.array([[0.0, 0], [2, 0], [0, 3]]))
    assert [nb.tolist() for nb in g.neighborhoods] == [[0, 1, 2]] * 3


@pytest.mark.parametrize("dim,n", [(2, 10), (2, 30), (3, 10), (3, 30), (3, 50)])
def test_edges_match_brute_force(dim, n):
    rng = np.random.default_rng(dim * 100 + n)
    pts = rng.uniform(-10, 10, size=(n, dim))
    g = delaunay_neighborhoods(pts)
    assert g.edges() == brute_force_delaunay_edges(pts)


def test_simplices_match_qhull():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(40, 3))
    ours = {tuple(s) for s in delaunay_simplices(pts).tolist()}
    theirs = {tuple(sorted(s)) for s in scipy.spatial.Delaunay(pts).simplices.tolist()}
    assert ours == theirs


def test_cospherical_lattice_is_valid_triangulation():
    g = np.stack(np.meshgrid(*[np.arange(3.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    simplices = delaunay_simplices(g)
    vol = sum(abs(np.linalg.det(g[s[1:]] - g[s[0]])) / 6 for s in simplices)
    assert vol == pytest.approx(8.0)


def test_neighborhoods_symmetric_and_reflexive():
    pts = np.random.default_rng(8).uniform(size=(25, 3))
    g = delaunay_neighborhoods(pts)
    for i, nb in enumerate(g.neighborhoods):
        assert i in nb
        assert list(nb) == sorted(nb)
        for p in nb:
            assert i in g.neighborhoods[p]


def test_degenerate_point_sets():
    with pytest.raises(DegenerateConfigurationError):
        delaunay_neighborhoods(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [2, 3, 0]]))
    with pytest.raises(DegenerateConfigurationError):
        delaunay_neighborhoods(np.array([[0.0, 0], [1, 1], [2, 2]]))
    with pytest.raises(DegenerateConfigurationError):
        delaunay_simplices(np.array([[0.0, 0], [1, 0], [0, 1], [1, 0]]))


# --- local fits --------------------------------------------------------------------


def test_local_fits_identity():
    x = np.random.default_rng(9).uniform(-20, 20, size=(12, 3))
    g = delaunay_neighborhoods(x)
    loc = fit_local_affines(g, x, x)
    assert len(loc) == 12
    for A, lg in zip(loc.transforms, loc.logs):
        np.testing.assert_allclose(A.matrix, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(lg.matrix, 0, atol=1e-10)
    assert set(loc.status) == {"ok"}


def test_local_fits_global_affine_everywhere():
    rng = np.random.default_rng(10)
    x = rng.uniform(-20, 20, size=(15, 3))
    A = _random_affine(rng)
    w = rng.uniform(0.5, 1, size=15)
    w /= w.sum()
    g = delaunay_neighborhoods(x)
    loc = fit_local_affines(g, x, A(x), w)
    for i, (B, lg) in enumerate(zip(loc.transforms, loc.logs)):
        np.testing.assert_allclose(B.matrix, A.matrix, atol=1e-9)
        np.testing.assert_allclose(lg.exp().matrix, B.matrix, atol=1e-9)
        hood = g.neighborhoods[i]
        np.testing.assert_allclose(loc.anchors[i], w[hood] @ x[hood] / w[hood].sum(), atol=1e-12)


def test_coplanar_neighborhood_falls_back_to_translation():
    from lepreg.matching import NeighborhoodGraph

    x = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]])
    y = x + [0.5, -0.25, 1.0]
    y[3] += [0.1, 0.3, 0.0]
    graph = NeighborhoodGraph(5, (np.array([0, 1, 2, 3]), np.array([0, 1, 2, 3, 4]), *[np.array([i]) for i in (2, 3, 4)]))
    loc = fit_local_affines(graph, x, y)
    assert loc.status[0].startswith("translation_fallback")
    np.testing.assert_allclose(loc.transforms[0].linear, np.eye(3))
    np.testing.assert_allclose(loc.transforms[0].translation, y[:4].mean(0) - x[:4].mean(0), atol=1e-15)
    assert loc.status[1] == "ok"


def test_reflection_neighborhood_falls_back():
    x = np.random.default_rng(11).uniform(-5, 5, size=(8, 3))
    y = x * [-1, 1, 1]
    loc = fit_local_affines(delaunay_neighborhoods(x), x, y)
    assert all(s.startswith("translation_fallback: det") for s in loc.status)


def test_half_turn_neighborhood_log_undefined_falls_back():
    rng = np.random.default_rng(12)
    x = rng.uniform(-5, 5, size=(8, 3))
    y = x @ rotz(np.pi).T
    loc = fit_local_affines(delaunay_neighborhoods(x), x, y)
    assert all(s.startswith("translation_fallback: log undefined") for s in loc.status)


# --- translations ------------------------------------------------------------------


def test_translations():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(6, 3))
    c = np.array([1.0, 2.0, -3.0])
    zero = fit_translations(x, x)
    assert all(np.all(t.translation == 0) for t in zero.transforms)
    shifted = fit_translations(x, x + c)
    for t in shifted.transforms:
        np.testing.assert_allclose(t.translation, c, atol=1e-15)
    y = rng.normal(size=(6, 3))
    loc = fit_translations(x, y)
    np.testing.assert_array_equal(loc.anchors, x)
    for i, lg in enumerate(loc.logs):
        np.testing.assert_array_equal(lg.matrix[:3, :3], 0.0)
        np.testing.assert_array_equal(lg.matrix[:3, 3], y[i] - x[i])
        np.testing.assert_allclose(lg.exp().matrix, loc.transforms[i].matrix, atol=1e-15)


def test_local_set_json_round_trip(tmp_path):
    x = np.random.default_rng(14).uniform(size=(6, 3))
    loc = fit_local_affines(delaunay_neighborhoods(x), x, x * 1.1)
    loc.save_json(tmp_path / "loc.json")
    back = LocalAffineSet.from_json(json.loads((tmp_path / "loc.json").read_text()))
    np.testing.assert_array_equal(back.anchors, loc.anchors)
    for a, b in zip(back.transforms, loc.transforms):
        np.testing.assert_array_equal(a.matrix, b.matrix)
    assert back.status == loc.status
