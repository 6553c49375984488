import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmce.corrugation import (Schedule, ScheduleError, StageParams, exponent_b, gamma1, gamma2,
                              gamma_bound_constant, iterate, make_schedule, smooth_positive_part,
                              smooth_step, stage, stage_target, substep)
from lmce.deficit import D_of, initial_data
from lmce.fields import Grid, outer, grad
from lmce.mollifier import UnderResolvedError
from lmce.phase import PhaseSpec
from lmce.verify import smooth_stage_fixture, support_invariant

finite = st.floats(-3, 3, allow_nan=False)


def test_gamma_values():
    assert gamma1(1.0, 0.25) == pytest.approx(1 / np.pi, abs=1e-15)
    assert gamma2(1.0, 0.125) == pytest.approx(-1 / (4 * np.pi), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(s=finite, t=finite)
def test_gamma_periodic_and_identity(s, t):
    for fn in (gamma1, gamma2):
        assert fn(s, t + 1) == pytest.approx(fn(s, t), abs=1e-12)
    assert abs(0.5 * gamma1(s, t, 0, 1) ** 2 + gamma2(s, t, 0, 1) - s * s) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(s=finite, t=finite)
def test_gamma_partials_match_differences(s, t):
    e = 1e-6
    for fn in (gamma1, gamma2):
        for ds in (0, 1):
            for dt in (0, 1):
                num_s = (fn(s + e, t, ds, dt) - fn(s - e, t, ds, dt)) / (2 * e)
                assert fn(s, t, ds + 1, dt) == pytest.approx(num_s, abs=1e-5)
                num_t = (fn(s, t + e, ds, dt) - fn(s, t - e, ds, dt)) / (2 * e)
                assert fn(s, t, ds, dt + 1) == pytest.approx(num_t, abs=1e-4 * (1 + abs(num_t)))


def test_gamma_bound_constants():
    assert gamma_bound_constant(1, 0, 0) == pytest.approx(1 / np.pi)
    assert gamma_bound_constant(1, 0, 1) == pytest.approx(2.0)
    assert gamma_bound_constant(2, 0, 2) == pytest.approx(4 * np.pi)


def test_schedule_exponent_and_frequency():
    b = exponent_b(0.1, 1 / 90)
    assert b == pytest.approx(1.2)
    assert 5 * 0.1 * (b - 1) + 9 / 90 == pytest.approx(b - 1)
    g = Grid.unit_square(33)
    sch = make_schedule(0.1, 1 / 90, 2.0, 0.25, 0, g)
    assert sch.lam1 == pytest.approx(2048)
    assert sch.lam(2) == pytest.approx(2048 ** 1.2)
    assert sch.delta(1) == pytest.approx(0.25)
    assert sch.lam(1) == pytest.approx(sch.M * sch.delta(1) ** (-1 / 0.2))
    p = sch.stage_params(1)
    assert p.lam == sch.lam(1) and p.tau == b and p.freq1 == pytest.approx(sch.lam(2))


def test_schedule_rejects_bad_input():
    g = Grid.unit_square(33)
    for args in ((0.2, 0.1, 1, 0.2, 1), (0.1, 1.0, 1, 0.2, 1), (0.1, 0.1, 0, 0.2, 1), (0.1, 0.1, 1, 1.5, 1)):
        with pytest.raises(ValueError):
            make_schedule(*args, g)


def test_schedule_unresolvable_reports_feasible_q():
    g = Grid.unit_square(257)
    delta1 = 0.07
    from lmce.corrugation import M_for_lambda1
    M = M_for_lambda1(8.0, delta1, 0.1)
    with pytest.raises(ScheduleError) as exc:
        make_schedule(0.1, 1 / 90, M, delta1, 6, g, r0=0.3)
    assert 0 <= exc.value.feasible_q < 6
    make_schedule(0.1, 1 / 90, M, delta1, exc.value.feasible_q, g, r0=0.3)


def test_stage_params_invariants():
    StageParams(2.0, 0.1, 16.0, 1.5, 0.5).validate()
    with pytest.raises(ValueError):
        StageParams(2.0, 0.001, 16.0, 1.5, 0.5).validate()  # delta^(1/2) lam <= 1
    with pytest.raises(ValueError):
        StageParams(2.0, 0.1, 3.0, 1.5, 0.5).validate()  # lam^alpha < 2
    with pytest.raises(UnderResolvedError):
        StageParams(2.0, 0.1, 32.0, 1.5, 0.5).validate(Grid.unit_square(1025))


def test_substep_zero_amplitude_is_identity(g65, rng):
    v, phi = rng.normal(size=(2,) + g65.shape)
    w = rng.normal(size=(2,) + g65.shape)
    v2, w2, _ = substep(v, w, v, np.zeros(g65.shape), phi, 10.0, g65)
    assert np.array_equal(v2, v) and np.array_equal(w2, w)


def test_substep_amplitude_bound(g129):
    a = 0.3 * np.sin(np.pi * g129.x1) * np.sin(np.pi * g129.x2)
    z = np.zeros(g129.shape)
    for freq in (4.0, 8.0):
        v2, _, _ = substep(z, np.zeros((2,) + g129.shape), z, a, g129.x1 + 0.2 * g129.x2, freq, g129)
        assert np.abs(v2).max() <= a.max() / (np.pi * freq) * (1 + 1e-12)


def test_substep_adds_rank_one_tensor():
    g = Grid.unit_square(513)
    ph = PhaseSpec.from_expression("pi/2", g)
    z = np.zeros(g.shape)
    a = np.full(g.shape, 0.2)
    phi = 0.8 * g.x1 + 0.6 * g.x2
    v2, w2, _ = substep(z, np.zeros((2,) + g.shape), z, a, phi, 8.0, g)
    gp = grad(phi, g)
    err = D_of(v2, w2, ph, g) - D_of(z, np.zeros((2,) + g.shape), ph, g) - a ** 2 * outer(gp, gp)
    # constant a, linear phi: only stencil error remains
    assert np.abs(err).max() < 5e-3


def test_substep_rejects_unresolved(g33):
    z = np.zeros(g33.shape)
    with pytest.raises(UnderResolvedError):
        substep(z, np.zeros((2,) + g33.shape), z, z + 1, g33.x1, 20.0, g33)
    with pytest.raises(ValueError):
        substep(z, np.zeros((2,) + g33.shape), z, z - 1, g33.x1, 1.0, g33)


def test_stage_without_deficit_is_identity(g65):
    ph = PhaseSpec.from_expression("pi/2", g65)
    A, st0, _ = initial_data(g65, np.zeros(g65.shape), ph)
    res = stage(st0, A, StageParams(2.0, 0.05, 6.0, 1.2, 0.5), ph, rho=np.zeros(g65.shape))
    assert res.state is st0 and np.all(res.E == 0)


@pytest.fixture(scope="module")
def stage_run():
    g = Grid.unit_square(257)
    ph = PhaseSpec.from_expression("pi/2 + 0.2*sin(pi*x1)*sin(pi*x2)", g)
    state, A, delta = smooth_stage_fixture(g, ph)
    params = StageParams(2.0, delta, 6.0, 1.3, 0.5)
    return g, ph, state, A, params, stage(state, A, params, ph, keep_parts=True)


def test_stage_support_and_boundary(stage_run):
    g, ph, state, A, params, res = stage_run
    inv = support_invariant(state, res.state, 1.0 / params.freq1)
    assert inv["support_bitwise"] and inv["boundary_bitwise"]
    assert np.all(res.E[:, g.boundary] == 0)


def test_stage_error_definition_and_diagnostics(stage_run):
    g, ph, state, A, params, res = stage_run
    D0 = D_of(state.v, state.w, ph, g)
    D2 = D_of(res.state.v, res.state.w, ph, g)
    assert np.abs(D2 - D0 - res.h - res.E).max() < 1e-12
    d = res.diagnostics
    for key in ("dv_C0", "dv_C1", "dw_C0", "dw_C1", "v_C2", "w_C2", "E_C0", "E_C1"):
        assert np.isfinite(d[key]) and d[key] >= 0
    assert np.all(np.isfinite(res.E))
    assert d["decomposition_residual"] < 1e-3
    # the displacement is of order delta^(1/2) / lam^tau
    assert d["dv_C0"] <= 2 * np.sqrt(params.delta) / params.freq1
    assert res.state.q == state.q + 1


def test_smooth_step_and_positive_part_are_c2():
    e = 1e-6
    for x in (0.0, 1.0):
        for f in (smooth_step, lambda s: smooth_positive_part(s, 1.0)):
            left, right = f(np.array([x - e, x - 2 * e])), f(np.array([x + e, x + 2 * e]))
            # first and second one-sided differences agree across the knot
            assert abs((right[0] - f(np.array(x))) - (f(np.array(x)) - left[0])) < 1e-8
    assert smooth_step(np.array(0.5)) == pytest.approx(0.5)
    s = np.linspace(-1, 3, 41)
    p = smooth_positive_part(s, 0.5)
    assert np.all(np.diff(p) >= 0) and np.all(p >= 0) and np.all(p <= np.maximum(s, 0))


def test_stage_target_respects_collar(g129):
    ph = PhaseSpec.from_expression("pi/2", g129)
    A, st0, _ = initial_data(g129, np.zeros(g129.shape), ph)
    sch = Schedule(0.1, 1 / 90, 1.2, 1.0, float((st0.rho ** 2).max()), 1, 0.2)
    amp, H = stage_target(st0, sch, 0)
    lo, _ = sch.collar(0)
    assert np.all(amp[g129.distance_to_boundary <= lo] == 0)
    assert np.all(amp >= 0) and np.all(amp ** 2 <= st0.rho ** 2 + 1e-15)


def test_iterate_without_stages(g33):
    ph = PhaseSpec.from_expression("pi/2", g33)
    A, st0, _ = initial_data(g33, np.zeros(g33.shape), ph)
    sch = Schedule(0.1, 1 / 90, 1.2, 1.0, float((st0.rho ** 2).max()), 0, 0.2)
    states, report = iterate(st0, A, sch, ph)
    assert states == [st0] and report.per_stage == [] and report.status == "ok"


def test_iterate_reports_failure(g65):
    ph = PhaseSpec.from_expression("pi/2", g65)
    A, st0, _ = initial_data(g65, np.zeros(g65.shape), ph)
    # frequencies far beyond this grid: the stage fails and the report says so
    sch = Schedule(0.1, 1 / 90, 1.2, 1.0, 0.07, 1, 0.2)
    sch.M = 40.0 * 0.07 ** 5
    states, report = iterate(st0, A, sch, ph)
    assert report.status == "stage_failed" and report.failure["q"] == 0
    assert len(states) == 1
