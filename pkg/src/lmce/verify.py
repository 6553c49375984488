"""Residuals of the equation and ratio probes for the quantitative estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .corrugation import (StageParams, gamma1, gamma2, gamma_bound_constant, stage)
from .deficit import D_of, SubsolutionState, identity_like, solve_V
from .fields import (Grid, ck_norm, d1, det, grad, hessian, holder_seminorm, identity,
                     integrate, laplacian, outer, sup_norm, sym_grad)
from .phase import PhaseSpec
from .report import RunReport


# ---------------------------------------------------------------- test functions

@dataclass(frozen=True)
class Bump:
    center: tuple[float, float]
    radius: float

    def evaluate(self, grid: Grid):
        """``(phi, grad phi, hess phi)`` in closed form; exactly zero off the open support."""
        x1, x2 = grid.coords
        y1, y2 = (x1 - self.center[0]) / self.radius, (x2 - self.center[1]) / self.radius
        s = y1 * y1 + y2 * y2
        inside = s < 1.0
        q = np.where(inside, 1.0 - s, 1.0)
        phi = np.where(inside, np.exp(-1.0 / q), 0.0)
        f1 = -1.0 / q ** 2
        f2 = -2.0 / q ** 3
        phi_s = phi * f1
        phi_ss = phi * (f1 * f1 + f2)
        r = self.radius
        g = np.stack([2.0 * y1 / r * phi_s, 2.0 * y2 / r * phi_s])
        H = np.stack([4.0 * y1 * y1 / r ** 2 * phi_ss + 2.0 / r ** 2 * phi_s,
                      4.0 * y1 * y2 / r ** 2 * phi_ss,
                      4.0 * y2 * y2 / r ** 2 * phi_ss + 2.0 / r ** 2 * phi_s])
        return phi, g, H


@dataclass(frozen=True)
class TestFunctionSet:
    bumps: tuple

    __test__ = False  # not a pytest class

    @classmethod
    def lattice(cls, grid: Grid, nx: int = 3, ny: int = 4, radius: float = 0.18,
                lo: float = 0.3, hi: float = 0.7) -> "TestFunctionSet":
        """``nx x ny`` bumps with centres spread over ``[lo, hi]^2`` of the bounding box."""
        ox, oy = grid.origin
        Lx, Ly = (grid.nx - 1) * grid.hx, (grid.ny - 1) * grid.hy
        cs = [(ox + Lx * a, oy + Ly * b) for a in np.linspace(lo, hi, nx) for b in np.linspace(lo, hi, ny)]
        tests = cls(tuple(Bump(c, radius) for c in cs))
        tests.check(grid)
        return tests

    @property
    def centers(self):
        return [b.center for b in self.bumps]

    @property
    def radii(self):
        return [b.radius for b in self.bumps]

    def check(self, grid: Grid, min_nodes: int = 2) -> None:
        d = grid.distance_to_boundary
        x1, x2 = grid.coords
        for b in self.bumps:
            near = np.hypot(x1 - b.center[0], x2 - b.center[1]) < b.radius
            if near.any() and d[near].min() < min_nodes * grid.h:
                raise ValueError(f"test function at {b.center} reaches within {min_nodes} nodes of the boundary")
            if not near.any():
                raise ValueError(f"test function at {b.center} has no nodes in its support")


# ---------------------------------------------------------------- residuals

def strong_residual(v: np.ndarray, phase: PhaseSpec, grid: Grid) -> np.ndarray:
    """``cos(theta) Lap v + sin(theta) (det hess v - 1)``."""
    Hv = hessian(v, grid)
    return phase.cos_theta * (Hv[0] + Hv[2]) + phase.sin_theta * (det(Hv) - 1.0)


def _times_phase(phi, gphi, Hphi, f, gf, Hf):
    """Value, gradient and Hessian of ``phi * f``."""
    g = gphi * f + phi * gf
    H = Hphi * f + phi * Hf + 2.0 * outer(gphi, gf)
    return phi * f, g, H


def _phase_derivatives(phase: PhaseSpec):
    s, c = phase.sin_theta, phase.cos_theta
    gt, Ht = phase.grad_theta, phase.hess_theta
    tt = outer(gt, gt)
    return (s, c * gt, c * Ht - s * tt), (c, -s * gt, -s * Ht - c * tt)


def weak_residual(v: np.ndarray, phase: PhaseSpec, tests: TestFunctionSet, grid: Grid) -> dict:
    """Very weak residual of ``v`` against each test function (signed) and the max modulus."""
    grid.check(v)
    tests.check(grid)
    gv = grad(v, grid)
    quad = np.stack([0.5 * gv[0] ** 2, gv[0] * gv[1], 0.5 * gv[1] ** 2])
    sin_d, cos_d = _phase_derivatives(phase)
    values = []
    for b in tests.bumps:
        phi, gphi, Hphi = b.evaluate(grid)
        ps, _, Hs = _times_phase(phi, gphi, Hphi, *sin_d)
        _, _, Hc = _times_phase(phi, gphi, Hphi, *cos_d)
        integrand = quad[1] * Hs[1] - quad[0] * Hs[2] - quad[2] * Hs[0] + v * (Hc[0] + Hc[2]) - ps
        values.append(integrate(integrand, grid))
    values = np.asarray(values)
    return {"values": values.tolist(), "max": float(np.abs(values).max())}


def weak_strong_gap(v: np.ndarray, phase: PhaseSpec, tests: TestFunctionSet, grid: Grid) -> float:
    """Largest ``|weak residual - integral(phi * strong residual)|`` over the test set."""
    weak = np.asarray(weak_residual(v, phase, tests, grid)["values"])
    sr = strong_residual(v, phase, grid)
    strong = np.array([integrate(b.evaluate(grid)[0] * sr, grid) for b in tests.bumps])
    return float(np.abs(weak - strong).max())


# ---------------------------------------------------------------- profile bounds

GAMMA_QUANTITIES = [
    # (profile, d_s, d_t, power of |s| in the bound)
    (1, 0, 0, 1), (1, 0, 1, 1), (1, 0, 2, 1),
    (1, 1, 0, 0), (1, 1, 1, 0), (1, 1, 2, 0),
    (2, 0, 0, 2), (2, 0, 1, 2), (2, 0, 2, 2),
    (2, 1, 0, 1), (2, 1, 1, 1), (2, 1, 2, 1),
]


def gamma_bound_probe(samples: int = 100_000, seed: int = 0, s_max: float = 2.0) -> dict:
    """Largest ``|d_s^i d_t^k Gamma| / |s|^p`` over seeded samples, against its closed-form bound."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(-s_max, s_max, samples)
    s = s[s != 0]
    t = rng.uniform(-2.0, 2.0, s.size)
    out = {}
    for which, ds, dt, p in GAMMA_QUANTITIES:
        fn = gamma1 if which == 1 else gamma2
        ratio = float(np.max(np.abs(fn(s, t, ds, dt)) / np.abs(s) ** p))
        bound = gamma_bound_constant(which, ds, dt)
        out[f"d_s^{ds} d_t^{dt} gamma{which} / |s|^{p}"] = {
            "max_ratio": ratio, "bound": bound, "ok": ratio <= bound * (1.0 + 1e-14)}
    return out


def corrugation_identity_error(samples: int = 100_000, seed: int = 0, s_max: float = 2.0) -> float:
    rng = np.random.default_rng(seed)
    s = rng.uniform(-s_max, s_max, samples)
    t = rng.uniform(-2.0, 2.0, samples)
    return float(np.max(np.abs(0.5 * gamma1(s, t, 0, 1) ** 2 + gamma2(s, t, 0, 1) - s * s)))


# ---------------------------------------------------------------- stage probes

def stage_sweep(state: SubsolutionState, A: np.ndarray, phase: PhaseSpec, lams, tau: float,
                delta: float, alpha: float = 0.5, gamma: float = 2.0) -> list[dict]:
    """Run one stage per frequency with everything else fixed; returns per-run diagnostics."""
    grid = state.grid
    rows = []
    for lam in lams:
        params = StageParams(gamma=gamma, delta=delta, lam=float(lam), tau=tau, alpha=alpha)
        res = stage(state, A, params, phase)
        new = res.state
        diag = dict(res.diagnostics, lam=float(lam), tau=tau)
        diag.update(support_invariant(state, new, 1.0 / params.freq1))
        rows.append(diag)
    return rows


def support_invariant(old: SubsolutionState, new: SubsolutionState, ell: float) -> dict:
    """Bitwise checks: untouched far from ``supp rho`` and on the boundary."""
    grid = old.grid
    supp = old.rho != 0
    if supp.any():
        dist = distance_transform_edt(~supp, sampling=(grid.hx, grid.hy))
    else:
        dist = np.full(grid.shape, np.inf)
    far = dist > ell + 2.0 * grid.h
    same_v = np.array_equal(new.v[far], old.v[far])
    same_w = np.array_equal(new.w[:, far], old.w[:, far])
    b = grid.boundary
    return {"support_bitwise": bool(same_v and same_w),
            "boundary_bitwise": bool(np.array_equal(new.v[b], old.v[b])
                                     and np.array_equal(new.w[:, b], old.w[:, b]))}


PREDICTED = {"E_C0": lambda t: 1.0 - t, "dv_C0": lambda t: -t, "dv_C1": lambda t: 0.0,
             "v_C2": lambda t: 2.0 * t - 1.0}


def stage_error_probe(sweep: list[dict]) -> dict:
    """Least-squares log-log slopes in ``lam`` of the tracked stage norms vs predictions."""
    if len(sweep) < 3:
        raise ValueError("need at least three frequencies for a slope fit")
    taus = {row["tau"] for row in sweep}
    if len(taus) != 1:
        raise ValueError("sweep must hold tau fixed")
    tau = taus.pop()
    lam = np.log([row["lam"] for row in sweep])
    out = {}
    for key, pred in PREDICTED.items():
        vals = np.array([row[key] for row in sweep], dtype=float)
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            out[key] = {"slope": None, "predicted": pred(tau), "note": "undefined (zero or non-finite norms)"}
            continue
        slope = float(np.polyfit(lam, np.log(vals), 1)[0])
        out[key] = {"slope": slope, "predicted": pred(tau)}
    return out


# ---------------------------------------------------------------- error-term expansions

def _chain_terms(a, t, freq, phi, grid):
    gphi = grad(phi, grid)
    ga = grad(a, grid)
    return dict(
        g1=gamma1(a, t), g2=gamma2(a, t),
        g1s=gamma1(a, t, 1, 0), g1t=gamma1(a, t, 0, 1),
        g2s=gamma2(a, t, 1, 0), gphi=gphi, ga=ga, hphi=hessian(phi, grid), freq=freq)


def substep_error_terms(v, v_t, v_new, a, t, freq, phi, V, V_new, phase, grid) -> dict:
    """The five expanded error terms of one substep (chain rule on the closed-form profiles).

    Includes the ``Gamma2 hess(phi)/freq`` contribution of ``grad w'`` inside the
    first term and uses ``-(v' - v) cot(theta) Id`` for the last.
    """
    c = _chain_terms(a, t, freq, phi, grid)
    f = c["freq"]
    gv_diff = grad(v, grid) - grad(v_t, grid)
    hv_t = hessian(v_t, grid)
    sym_pa = outer(c["gphi"], c["ga"])
    e1 = (c["g1t"] * c["g1s"] * sym_pa - c["g1"] * hv_t + c["g2s"] * sym_pa + c["g2"] * c["hphi"]) / f
    e2 = c["g1s"] * outer(gv_diff, c["ga"]) / f + c["g1t"] * outer(gv_diff, c["gphi"])
    e3 = 0.5 * (c["g1s"] / f) ** 2 * outer(c["ga"], c["ga"])
    e4 = identity(grid, V_new - V)
    e5 = identity(grid, -(v_new - v) * phase.cot_theta)
    return {"E1": e1, "E2": e2, "E3": e3, "E4": e4, "E5": e5}


def stage_error_terms(state: SubsolutionState, res, params: StageParams, phase: PhaseSpec) -> dict:
    """Expanded terms ``E_11..E_15`` and ``E_21..E_25`` plus their gap to the assembled errors."""
    p = res.parts
    if not p:
        raise ValueError("stage must be run with keep_parts=True")
    grid = state.grid
    dec, a = p["decomposition"], p["a"]
    first = substep_error_terms(state.v, p["v_t"], p["v1"], a, p["t1"], params.freq1, dec.phi[0],
                                p["V0"], p["V1"], phase, grid)
    second = substep_error_terms(p["v1"], p["v1_t"], res.state.v, a, p["t2"], params.freq2, dec.phi[1],
                                 p["V1"], p["V2"], phase, grid)
    g1, g2 = grad(dec.phi[0], grid), grad(dec.phi[1], grid)
    E1 = p["D1"] - p["D0"] - a ** 2 * outer(g1, g1)
    E2 = p["D2"] - p["D1"] - a ** 2 * outer(g2, g2)
    out = {f"E1{k[1]}": sup_norm(v, grid) for k, v in first.items()}
    out |= {f"E2{k[1]}": sup_norm(v, grid) for k, v in second.items()}
    out["expansion_gap_1"] = sup_norm(sum(first.values()) - E1, grid)
    out["expansion_gap_2"] = sup_norm(sum(second.values()) - E2, grid)
    out["E1_C0"] = sup_norm(E1, grid)
    out["E2_C0"] = sup_norm(E2, grid)
    return out


def bookkeeping_identity(state: SubsolutionState, res, phase: PhaseSpec) -> dict:
    """Three assemblies of the stage error that must agree to round-off.

    * ``direct``: ``D(v*, w*) - D(v, w) - h - E``.
    * ``telescoped``: ``E1 + E2 + (recon - h) - E`` with ``recon = a^2 (grad phi1^2 + grad phi2^2)``.
    * ``local``: each substep error rebuilt from ``sym grad dw``, the quadratic
      term, the nonlocal difference ``(V' - V) Id`` and ``-(v' - v) cot Id``.
    """
    p = res.parts
    if not p:
        raise ValueError("stage must be run with keep_parts=True")
    grid = state.grid
    dec, a = p["decomposition"], p["a"]
    g1, g2 = grad(dec.phi[0], grid), grad(dec.phi[1], grid)
    add1, add2 = a ** 2 * outer(g1, g1), a ** 2 * outer(g2, g2)
    E1 = p["D1"] - p["D0"] - add1
    E2 = p["D2"] - p["D1"] - add2
    direct = p["D2"] - p["D0"] - res.h - res.E
    tele = E1 + E2 + (add1 + add2 - res.h) - res.E

    def local(v, w, v2, w2, V, V2, add):
        g, g2_ = grad(v, grid), grad(v2, grid)
        return (sym_grad(w2 - w, grid) + 0.5 * (outer(g2_, g2_) - outer(g, g)) - add
                + identity(grid, V2 - V) + identity(grid, -(v2 - v) * phase.cot_theta))

    loc1 = local(state.v, state.w, p["v1"], p["w1"], p["V0"], p["V1"], add1)
    loc2 = local(p["v1"], p["w1"], res.state.v, res.state.w, p["V1"], p["V2"], add2)
    scale = max(1.0, sup_norm(p["D2"], grid))
    return {"direct": sup_norm(direct, grid) / scale,
            "telescoped": sup_norm(tele, grid) / scale,
            "local": max(sup_norm(loc1 - E1, grid), sup_norm(loc2 - E2, grid)) / scale,
            "nonlocal_terms_C0": max(sup_norm(p["V1"] - p["V0"], grid), sup_norm(p["V2"] - p["V1"], grid)),
            "cot_terms_C0": sup_norm((res.state.v - state.v) * phase.cot_theta, grid)}


# ---------------------------------------------------------------- run report

def convergence_report(states: list, schedule, phase: PhaseSpec, tests: TestFunctionSet,
                       report: RunReport | None = None, alpha: float = 0.5,
                       holder_radius: int = 4) -> RunReport:
    """Cauchy differences, Hoelder seminorms, weak residuals and boundary deviation per stage."""
    if not states:
        raise ValueError("no states")
    report = RunReport() if report is None else report
    grid = states[0].grid
    b = grid.boundary
    table = []
    for q, st in enumerate(states):
        row = {"q": q,
               "weak_residual_max": weak_residual(st.v, phase, tests, grid)["max"],
               "v_C1": ck_norm(st.v, grid, 1),
               "v_holder_1_alpha": holder_seminorm(st.v, grid, alpha, 1, radius=holder_radius, n_random=5000),
               "boundary_deviation": float(np.abs(st.v[b] - states[0].v[b]).max()),
               "boundary_bitwise": bool(np.array_equal(st.v[b], states[0].v[b]))}
        if q > 0:
            dv = st.v - states[q - 1].v
            row["cauchy_C0"] = sup_norm(dv, grid)
            row["cauchy_C1"] = ck_norm(dv, grid, 1)
            if schedule is not None:
                dq, lq = schedule.delta(q), schedule.lam(q)
                row["ratio5_C0"] = row["cauchy_C0"] / (math.sqrt(dq) * lq ** -1.0)
                row["ratio5_C1"] = row["cauchy_C1"] / math.sqrt(dq)
        table.append(row)
    wr = [r["weak_residual_max"] for r in table]
    report.probes["convergence"] = {
        "alpha": alpha, "table": table,
        "weak_residual_decreasing": bool(all(x > y for x, y in zip(wr, wr[1:]))) if len(wr) > 1 else None,
        "final_over_initial": wr[-1] / wr[0] if wr[0] > 0 else None,
        "note": "the weak residual is measured against a finite test set"}
    return report


def smooth_stage_fixture(grid: Grid, phase: PhaseSpec, amplitude: float = 0.2, h_size: float = 0.1):
    """Fixed smooth ``(v, w, rho, H)`` for stage probes, with ``A`` chosen so the state is exact.

    ``rho`` is a bump of radius 0.3 about the domain centre (zero near the
    boundary), ``H`` is trace free with ``||H||_C0 <= h_size``.
    Returns ``(state, A, delta)`` with ``delta = max rho^2``.
    """
    x1, x2 = grid.coords
    ox, oy = grid.origin
    cx = ox + 0.5 * (grid.nx - 1) * grid.hx
    cy = oy + 0.5 * (grid.ny - 1) * grid.hy
    r = np.hypot(x1 - cx, x2 - cy) / 0.3
    inside = r < 1
    bump = np.where(inside, np.exp(1.0 - 1.0 / np.where(inside, 1.0 - r * r, 1.0)), 0.0)
    rho = amplitude * bump
    p = np.sin(np.pi * x1) * np.sin(np.pi * x2)
    H = h_size * np.stack([p * np.cos(np.pi * x2), 0.5 * p, -p * np.cos(np.pi * x2)])
    H *= h_size / max(float(np.abs(0.5 * (H[0] + H[2])).max() + np.hypot(0.5 * (H[0] - H[2]), H[1]).max()), 1e-300)
    v = 0.05 * np.sin(np.pi * x1) * np.sin(2.0 * np.pi * x2) + 0.1 * x1 * x2
    w = 0.02 * np.stack([np.sin(np.pi * x2), np.sin(np.pi * x1)])
    V = solve_V(v, phase, grid)
    A = D_of(v, w, phase, grid, V) + rho ** 2 * (H + identity_like(H))
    state = SubsolutionState(v=v, w=w, rho=rho, H=H, A=A, q=0, V=V, grid=grid)
    return state, A, float((rho ** 2).max())
