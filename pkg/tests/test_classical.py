import numpy as np
import pytest

from lmce.classical import SmallPhaseError, small_phase_check, solve_classical
from lmce.elliptic import ConvergenceError, harmonic_extension
from lmce.fields import Grid
from lmce.phase import PhaseSpec
from lmce.verify import strong_residual


def test_zero_phase_is_harmonic_extension(g65):
    bd = np.exp(g65.x1) * np.sin(g65.x2)
    info = {}
    v = solve_classical(g65, bd, PhaseSpec.from_expression("0", g65), info=info)
    assert info["iterations"] == 1
    assert np.abs(v - harmonic_extension(bd, g65, 1e-13)).max() < 1e-12


def test_zero_phase_harmonic_polynomial(g65):
    exact = g65.x1 ** 2 - g65.x2 ** 2
    v = solve_classical(g65, exact, PhaseSpec.from_expression("0", g65))
    assert np.abs(v - exact).max() < 1e-11


def test_small_phase_contracts_and_is_unique():
    g = Grid.unit_square(129)
    ph = PhaseSpec.from_expression("0.05*sin(pi*x1)", g)
    bd = g.x1 * g.x2
    info_a, info_b = {}, {}
    va = solve_classical(g, bd, ph, info=info_a)
    vb = solve_classical(g, bd, ph, psi0=0.2 * np.sin(3 * np.pi * g.x1) * np.sin(np.pi * g.x2), info=info_b)
    assert info_a["contraction"] <= 0.5 and info_a["residuals"][-1] <= 1e-8
    assert np.abs(strong_residual(va, ph, g))[g.collar(2)].max() <= 1e-8
    assert np.abs(va - vb).max() <= 1e-7
    assert np.array_equal(va[g.boundary], bd[g.boundary])
    steps = info_a["steps"]
    assert all(b < a for a, b in zip(steps, steps[1:]))


def test_refuses_large_phase(g33):
    with pytest.raises(SmallPhaseError):
        solve_classical(g33, np.zeros(g33.shape), PhaseSpec.from_expression("pi/2", g33))
    with pytest.raises(SmallPhaseError):
        solve_classical(g33, np.zeros(g33.shape), PhaseSpec.from_expression("0.5", g33), mu=0.2)


def test_detects_non_contraction(g65):
    info = {}
    with pytest.raises(ConvergenceError):
        solve_classical(g65, 3 * (g65.x1 ** 2 - g65.x2 ** 2), PhaseSpec.from_expression("1.2", g65),
                        mu=100, info=info)
    assert len(info["residuals"]) >= 3


def test_bad_tolerance(g33):
    with pytest.raises(ValueError):
        solve_classical(g33, np.zeros(g33.shape), PhaseSpec.from_expression("0", g33), tol=0)


def test_small_phase_check_examples(g33):
    assert small_phase_check(PhaseSpec.from_expression("0", g33), g33) == 0.0
    assert small_phase_check(PhaseSpec.from_expression("pi/4", g33), g33) == pytest.approx(1.0)
    assert small_phase_check(PhaseSpec.from_expression("pi/2", g33), g33) > 1e10


def test_small_phase_check_against_dense_pairs():
    g = Grid.unit_square(25)
    ph = PhaseSpec.from_expression("0.05*sin(pi*x1)", g)
    t = ph.tan_theta.ravel()
    X = np.stack([g.x1.ravel(), g.x2.ravel()], 1)
    semi = 0.0
    for k in range(t.size - 1):
        d = np.hypot(*(X[k + 1:] - X[k]).T)
        semi = max(semi, float(np.max(np.abs(t[k + 1:] - t[k]) / d ** 0.5)))
    dense = np.abs(t).max() + semi
    assert small_phase_check(ph, g, 0.5) == pytest.approx(dense, rel=0.1)
