import numpy as np
import pytest

from lmce.decompose import (IntegrabilityError, NotPositiveDefiniteError, conformal_flatten, decompose,
                            flat_coordinates, gauss_curvature, reconstruct, smooth_random_metric)
from lmce.fields import Grid, identity, laplacian, magnitude, sup_norm
from lmce.mollifier import mollify


def const_metric(grid, e, f, g):
    return np.stack([np.full(grid.shape, e), np.full(grid.shape, f), np.full(grid.shape, g)])


def test_flat_metrics_have_zero_curvature(g33):
    assert np.abs(gauss_curvature(identity(g33), g33)).max() == 0.0
    assert np.abs(gauss_curvature(const_metric(g33, 1.2, 0.0, 0.8), g33)).max() < 1e-12


def test_conformal_curvature_formula():
    errs = []
    for n in (33, 65, 129):
        g = Grid.unit_square(n)
        f = 0.1 * np.sin(np.pi * g.x1) * np.sin(np.pi * g.x2)
        exact = np.exp(-2 * f) * 0.1 * 2 * np.pi ** 2 * np.sin(np.pi * g.x1) * np.sin(np.pi * g.x2)
        K = gauss_curvature(np.exp(2 * f) * identity(g), g)
        errs.append(np.abs(K - exact)[g.collar(2)].max())
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_curvature_rejects_indefinite(g33):
    with pytest.raises(NotPositiveDefiniteError):
        gauss_curvature(const_metric(g33, 1.0, 2.0, 1.0), g33)


def test_flatten_identity_is_zero(g33):
    assert np.abs(conformal_flatten(identity(g33), g33)).max() == 0.0


@pytest.mark.parametrize("kind", ["conformal", "shear"])
def test_flatten_curvature_of_result(kind):
    g = Grid.unit_square(257)
    s = np.sin(np.pi * g.x1) * np.sin(np.pi * g.x2)
    if kind == "conformal":
        M = np.exp(0.2 * s) * identity(g)
        bound = 1e-6
    else:
        M = identity(g) + 0.3 * s * np.stack([np.ones(g.shape), np.zeros(g.shape), -np.ones(g.shape)])
        bound = 1e-5
    info = {}
    u = conformal_flatten(M, g, info=info)
    assert np.all(u[g.boundary] == 0)
    K = gauss_curvature(np.exp(-2 * u) * M, g)
    assert np.abs(K[g.interior]).max() <= bound
    if kind == "conformal":
        # u - f is harmonic with zero trace, hence zero
        assert np.abs(u - 0.1 * s).max() < 1e-3


def test_flat_coordinates_constant_metrics(g65):
    for e, gg in ((1.0, 1.0), (1.2, 0.8)):
        M = const_metric(g65, e, 0.0, gg)
        phi = flat_coordinates(M, g65)
        rec = reconstruct(np.ones(g65.shape), phi, g65)
        assert np.abs(rec - M).max() < 1e-10
        # up to a rigid motion: the pullback of the Euclidean metric fixes distances
        d_phi = np.hypot(phi[0, -1, 32] - phi[0, 0, 32], phi[1, -1, 32] - phi[1, 0, 32])
        assert d_phi == pytest.approx(np.sqrt(e), rel=1e-10)


def test_decompose_trivial_cases(g65):
    dec = decompose(identity(g65), g65)
    assert np.abs(dec.a - 1).max() < 1e-14 and dec.residual_norm < 1e-12
    assert np.abs(dec.phi[0] - g65.x1).max() < 1e-12 and np.abs(dec.phi[1] - g65.x2).max() < 1e-12
    dec2 = decompose(2 * identity(g65), g65)
    assert np.abs(dec2.a - np.sqrt(2)).max() < 1e-14
    assert np.abs(reconstruct(dec2.a, dec2.phi, g65) - 2 * identity(g65)).max() < 1e-10


def test_decompose_seeded_near_identity():
    g = Grid.unit_square(257)
    M = smooth_random_metric(g, 0.3, seed=7)
    assert sup_norm(M - identity(g), g) == pytest.approx(0.3)
    dec = decompose(M, g)
    assert dec.residual_norm <= 1e-3
    assert dec.min_a >= 0.6 and dec.min_det >= 0.5


def test_decompose_mollified_noise():
    g = Grid.unit_square(257)
    r = np.random.default_rng(5)
    H = mollify(r.normal(size=(3,) + g.shape), 0.25, g)
    H *= 0.3 / magnitude(H).max()
    dec = decompose(identity(g) + H, g)
    assert dec.residual_norm <= 1e-3 and dec.min_a >= 0.6 and dec.min_det >= 0.5


def test_decompose_refinement_and_smoothness():
    res, norms = [], []
    for n in (65, 129):
        g = Grid.unit_square(n)
        dec = decompose(smooth_random_metric(g, 0.3, seed=2), g)
        res.append(dec.residual_norm)
        norms.append(dec.norms())
    assert res[0] / res[1] > 3.0
    for k in ("a_C1", "grad_phi_C1"):
        assert norms[1][k] / norms[0][k] < 1.5


def test_decompose_rejects_far_from_identity(g33):
    with pytest.raises(NotPositiveDefiniteError):
        decompose(const_metric(g33, 3.0, 0.0, 0.5), g33)
    dec = decompose(0.3 * identity(g33), g33)
    assert np.abs(dec.a - np.sqrt(0.3)).max() < 1e-14
