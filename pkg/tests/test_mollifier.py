import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import j0

from lmce.fields import Grid, ck_norm
from lmce.mollifier import MollifierKernel, UnderResolvedError, bump, mollify, mollify_probe


def continuous_factor(k, l):
    """Radial transform of the normalised profile at wavenumber k, by 1D quadrature."""
    mass = quad(lambda r: bump(r) * r, 0, 1)[0]
    return quad(lambda r: bump(r) * j0(k * l * r) * r, 0, 1, limit=200)[0] / mass


def test_kernel_unit_mass_and_support(g129):
    for l in (2 * g129.h, 0.05, 0.1):
        k = MollifierKernel.build(l, g129)
        assert abs(k.weights.sum() - 1) < 1e-12
        assert np.all(k.weights >= 0)
        rx, _ = k.radius_nodes
        assert rx * g129.hx <= l


def test_rejects_unresolved(g33):
    with pytest.raises(UnderResolvedError):
        MollifierKernel.build(1.9 * g33.h, g33)


def test_constant_and_linear(g65):
    l = 0.1
    c = np.full(g65.shape, 2.5)
    assert np.abs(mollify(c, l, g65) - 2.5).max() < 1e-13
    far = g65.distance_to_boundary >= l
    assert np.abs(mollify(g65.x1, l, g65) - g65.x1)[far].max() < 1e-13


def test_fourier_attenuation_matches_transform():
    g = Grid.unit_square(257)
    l = 1 / 16
    for k in (1, 3, 5):
        f = np.sin(2 * np.pi * k * g.x1)
        ft = mollify(f, l, g)
        far = g.distance_to_boundary > l
        amp = np.abs(ft[far]).max() / np.abs(f[far]).max()
        expected = continuous_factor(2 * np.pi * k, l)
        assert abs(amp - expected) <= 0.02 * expected
        assert abs(MollifierKernel.build(l, g).fourier_factor(2 * np.pi * k) - expected) <= 0.02 * expected


def test_linearity_and_shapes(rng, g65):
    f1, f2 = rng.normal(size=(2,) + g65.shape)
    l = 0.07
    assert np.allclose(mollify(2 * f1 - 3 * f2, l, g65), 2 * mollify(f1, l, g65) - 3 * mollify(f2, l, g65))
    S = rng.normal(size=(3,) + g65.shape)
    out = mollify(S, l, g65)
    assert out.shape == S.shape
    assert np.allclose(out[1], mollify(S[1], l, g65))


def test_translation_equivariance(g129):
    f = np.exp(-60 * ((g129.x1 - 0.4) ** 2 + (g129.x2 - 0.5) ** 2))
    shifted = np.roll(f, 8, axis=0)
    l = 0.05
    a = np.roll(mollify(f, l, g129), 8, axis=0)
    b = mollify(shifted, l, g129)
    inner = g129.collar(20)
    assert np.abs(a - b)[inner].max() < 1e-12


def test_support_mask_exact(g129):
    f = np.zeros(g129.shape)
    f[60:70, 60:70] = 1.0
    l = 0.05
    ft = mollify(f, l, g129)
    r = int(np.floor(l / g129.h))
    assert np.all(ft[: 60 - r] == 0) and np.all(ft[70 + r:] == 0)


def test_smoothing_does_not_grow_c2(g129):
    for f in (np.sin(3 * g129.x1) * np.cos(2 * g129.x2), g129.x1 ** 2 * g129.x2):
        inner = 12
        assert ck_norm(mollify(f, 0.08, g129), g129, 2, inner) <= ck_norm(f, g129, 2, inner) * (1 + 1e-3)


def test_probe_first_order_ratio_bounded():
    g = Grid.unit_square(257)
    f = np.sin(4 * np.pi * g.x1)
    ratios = [mollify_probe(f, l, g)["first_order"] for l in (1 / 16, 1 / 32, 1 / 64)]
    assert max(ratios) / min(ratios) <= 2.0
    lin = mollify_probe(g.x1 + 2 * g.x2, 0.05, g, collar=14)
    assert lin["first_order"] < 1e-12 and lin["second_order"] < 1e-11


def test_probe_commutator_bounded():
    g = Grid.unit_square(257)
    h = np.sqrt(np.sin(2 * np.pi * g.x1) ** 2 + 0.05)
    vals = [mollify_probe(h, l, g, alpha=0.5, collar=20)["commutator"] for l in (1 / 16, 1 / 32)]
    assert all(np.isfinite(vals)) and max(vals) / min(vals) < 4
