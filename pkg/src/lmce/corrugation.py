"""Corrugation profiles, the two rank-one substeps, one full stage and the stage schedule."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .decompose import decompose
from .deficit import D_of, SubsolutionState, identity_like, solve_V, split_deficit
from .fields import Grid, ck_norm, grad, magnitude, sup_norm, write_field
from .mollifier import UnderResolvedError, mollify
from .phase import PhaseSpec
from .report import RunReport

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
FOUR_PI = 4.0 * np.pi


class StageError(RuntimeError):
    pass


class ScheduleError(ValueError):
    def __init__(self, message: str, feasible_q: int):
        super().__init__(f"{message}; largest feasible q_max = {feasible_q}")
        self.feasible_q = feasible_q


# ---------------------------------------------------------------- profiles

def gamma1(s, t, ds: int = 0, dt: int = 0):
    """``s/pi sin(2 pi t)`` and its partial derivatives (closed form)."""
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    poly = {0: s / np.pi, 1: np.full_like(s, 1.0 / np.pi)}.get(ds, np.zeros_like(s))
    return poly * TWO_PI ** dt * np.sin(TWO_PI * t + dt * np.pi / 2)


def gamma2(s, t, ds: int = 0, dt: int = 0):
    """``-s^2/(4 pi) sin(4 pi t)`` and its partial derivatives (closed form)."""
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    poly = {0: -s * s / FOUR_PI, 1: -s / TWO_PI, 2: np.full_like(s, -1.0 / TWO_PI)}.get(ds, np.zeros_like(s))
    return poly * FOUR_PI ** dt * np.sin(FOUR_PI * t + dt * np.pi / 2)


# sup over t of the s-free factor: |d_s^i d_t^k Gamma| <= const * |s|^(p)
def gamma_bound_constant(which: int, ds: int, dt: int) -> float:
    if which == 1:
        return {0: 1.0 / np.pi, 1: 1.0 / np.pi}.get(ds, 0.0) * TWO_PI ** dt
    return {0: 1.0 / FOUR_PI, 1: 1.0 / TWO_PI, 2: 1.0 / TWO_PI}.get(ds, 0.0) * FOUR_PI ** dt


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True)
class StageParams:
    gamma: float
    delta: float
    lam: float
    tau: float
    alpha: float

    @property
    def freq1(self) -> float:
        return self.lam ** self.tau

    @property
    def freq2(self) -> float:
        return self.lam ** (2.0 * self.tau - 1.0)

    def validate(self, grid: Grid | None = None) -> None:
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not (self.lam > 1 and self.tau > 1 and 0 < self.alpha < 1):
            raise ValueError("need lam > 1, tau > 1, 0 < alpha < 1")
        if self.lam ** self.alpha < 2:
            raise ValueError(f"lam^alpha = {self.lam ** self.alpha:.3g} < 2")
        if math.sqrt(self.delta) * self.lam <= 1:
            raise ValueError("delta^(1/2) lam must exceed 1")
        if grid is not None:
            nyquist = 1.0 / (2.0 * grid.h)
            if self.freq2 > nyquist:
                raise UnderResolvedError(
                    f"second substep frequency {self.freq2:.4g} exceeds the grid Nyquist bound {nyquist:.4g}")


@dataclass
class Schedule:
    beta: float
    sigma: float
    b: float
    M: float
    delta1: float
    q_max: int
    r0: float
    alpha: float = 0.5
    gamma: float = 2.0

    def lam(self, q: int) -> float:
        """``lam_q = lam_1^(b^(q-1))``, so ``lam_{q+1} = lam_q^b`` also for ``q = 0``."""
        return self.lam1 ** (self.b ** (q - 1))

    @property
    def lam1(self) -> float:
        return self.M * self.delta1 ** (-1.0 / (2.0 * self.beta))

    def delta(self, q: int) -> float:
        return (self.lam(q) / self.M) ** (-2.0 * self.beta)

    def stage_params(self, q: int) -> StageParams:
        """Stage ``q -> q+1``: ``lam = lam_q``, ``tau = b``, so the frequencies are
        ``lam_{q+1}`` and ``lam_{q+1}^2 / lam_q``."""
        return StageParams(gamma=self.gamma, delta=min(self.delta(q + 1), 1 - 1e-12),
                           lam=self.lam(q), tau=self.b, alpha=self.alpha)

    def collar(self, q: int) -> tuple[float, float]:
        return self.r0 * 2.0 ** (-(q + 1)), self.r0 * 2.0 ** (-q)

    def table(self) -> list[dict]:
        return [{"q": q, "delta_q": self.delta(q), "lam_q": self.lam(q)} for q in range(self.q_max + 3)]

    def to_dict(self) -> dict:
        return asdict(self) | {"lam1": self.lam1}


def exponent_b(beta: float, sigma: float) -> float:
    return 1.0 + 9.0 * sigma / (1.0 - 5.0 * beta)


def M_for_lambda1(lam1: float, delta1: float, beta: float) -> float:
    return lam1 * delta1 ** (1.0 / (2.0 * beta))


def make_schedule(beta: float, sigma: float, M: float, delta1: float, q_max: int, grid: Grid,
                  r0: float = 0.1, alpha: float = 0.5, gamma: float = 2.0,
                  min_wavelength: float = 4.0) -> Schedule:
    """Frequency/amplitude sequences; fails fast when a stage cannot be resolved on ``grid``.

    ``M`` only needs to be positive: desk-scale grids need ``lam_1`` of order 10,
    which for small ``delta_1`` means ``M`` well below 1.
    """
    if not 0 < beta < 0.2:
        raise ValueError("beta must lie in (0, 1/5)")
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    if not M > 0:
        raise ValueError("M must be positive")
    if not 0 < delta1 < 1:
        raise ValueError("delta1 must lie in (0, 1)")
    if q_max < 0:
        raise ValueError("q_max must be >= 0")
    sch = Schedule(beta, sigma, exponent_b(beta, sigma), M, delta1, q_max, r0, alpha, gamma)
    for q in range(q_max):
        p = sch.stage_params(q)
        if p.freq2 * min_wavelength * grid.h > 1.0:
            raise ScheduleError(f"stage {q}: frequency {p.freq2:.4g} below {min_wavelength:g} nodes "
                                f"per wavelength", q)
        if sch.collar(q)[0] <= 1.0 / p.freq1 + 2.0 * grid.h:
            raise ScheduleError(f"stage {q}: collar {sch.collar(q)[0]:.4g} does not exceed the "
                                f"mollification length {1.0 / p.freq1:.4g} plus two nodes", q)
    return sch


# ---------------------------------------------------------------- substeps

def substep(v, w, v_tilde, a, phi, freq, grid: Grid, min_wavelength: float = 4.0):
    """One corrugation at frequency ``freq`` along the phase ``phi``; returns ``(v', w', t)``.

    ``v' = v + Gamma1(a, freq phi)/freq`` and
    ``w' = w - Gamma1(a, freq phi)/freq grad v_tilde + Gamma2(a, freq phi)/freq grad phi``.
    Nodes with ``a == 0`` are returned unchanged bit for bit.
    """
    grid.check(v, w, v_tilde, a, phi)
    if np.any(a < 0):
        raise ValueError("amplitude must be nonnegative")
    gphi = grad(phi, grid)
    live = a != 0
    if live.any():
        slope = float(magnitude(gphi)[live].max())
        if freq * slope * min_wavelength * grid.h > 1.0:
            raise UnderResolvedError(
                f"oscillation wavelength {1.0 / (freq * slope):.4g} below {min_wavelength:g} h")
    t = freq * phi
    g1 = gamma1(a, t) / freq
    g2 = gamma2(a, t) / freq
    v_new = np.where(live, v + g1, v)
    w_new = np.where(live, w - g1 * grad(v_tilde, grid) + g2 * gphi, w)
    return v_new, w_new, t


@dataclass
class StageResult:
    state: SubsolutionState
    E: np.ndarray
    h: np.ndarray
    diagnostics: dict
    positive: bool
    parts: dict = field(default_factory=dict, repr=False)


def stage(state: SubsolutionState, A: np.ndarray, params: StageParams, phase: PhaseSpec,
          rho: np.ndarray | None = None, H: np.ndarray | None = None,
          keep_parts: bool = False, min_wavelength: float = 4.0) -> StageResult:
    """Add ``rho^2 (Id + H)`` to ``D(v, w)`` up to the error ``E`` (by direct assembly).

    ``rho``/``H`` default to the state's own; the iteration passes a cut-off target.
    """
    grid = state.grid
    params.validate(grid)
    rho = state.rho if rho is None else rho
    H = state.H if H is None else H
    t0 = time.perf_counter()
    h = rho ** 2 * (H + identity_like(H))
    D0 = D_of(state.v, state.w, phase, grid, state.V)
    if not np.any(rho):
        E = np.zeros_like(h)
        diag = _stage_norms(state.v, state.w, state.v, state.w, E, grid)
        diag.update(wall_time=time.perf_counter() - t0, freq1=params.freq1, freq2=params.freq2)
        return StageResult(state, E, h, diag, True)

    ell = params.lam ** (-params.tau)
    rho_t = np.maximum(mollify(rho, ell, grid), 0.0)  # clip FFT round-off below zero
    H_t = mollify(H, ell, grid)
    v_t = mollify(state.v, ell, grid)
    dec = decompose(H_t + identity_like(H_t), grid)
    a = dec.a * rho_t
    a[rho_t == 0] = 0.0

    v1, w1, t1 = substep(state.v, state.w, v_t, a, dec.phi[0], params.freq1, grid, min_wavelength)
    v1_t = mollify(v1, 1.0 / params.freq2, grid)
    v2, w2, t2 = substep(v1, w1, v1_t, a, dec.phi[1], params.freq2, grid, min_wavelength)

    V2 = solve_V(v2, phase, grid)
    D2 = D_of(v2, w2, phase, grid, V2)
    E = D2 - D0 - h
    new_deficit = A - D2
    rho_new, H_new, ok = split_deficit(new_deficit, strict=False)
    new_state = SubsolutionState(v=v2, w=w2, rho=rho_new, H=H_new, A=A, q=state.q + 1, V=V2, grid=grid)

    diag = _stage_norms(state.v, state.w, v2, w2, E, grid)
    diag.update(
        freq1=params.freq1, freq2=params.freq2, ell=ell, delta=params.delta,
        a_max=float(a.max()), decomposition_residual=dec.residual_norm,
        decomposition_min_a=dec.min_a, decomposition_min_det=dec.min_det,
        H_tilde_C0=sup_norm(H_t, grid), positive=ok, wall_time=time.perf_counter() - t0)
    parts = {}
    if keep_parts:
        parts = dict(rho_t=rho_t, H_t=H_t, v_t=v_t, decomposition=dec, a=a, v1=v1, w1=w1,
                     v1_t=v1_t, t1=t1, t2=t2, D0=D0, D1=D_of(v1, w1, phase, grid), D2=D2,
                     V0=state.V, V1=solve_V(v1, phase, grid), V2=V2)
    return StageResult(new_state, E, h, diag, ok, parts)


def _stage_norms(v, w, v2, w2, E, grid):
    dv, dw = v2 - v, w2 - w
    return {
        "dv_C0": sup_norm(dv, grid), "dv_C1": ck_norm(dv, grid, 1),
        "dw_C0": sup_norm(dw, grid), "dw_C1": ck_norm(dw, grid, 1),
        "v_C2": ck_norm(v2, grid, 2), "w_C2": ck_norm(w2, grid, 2),
        "E_C0": sup_norm(E, grid), "E_C1": ck_norm(E, grid, 1),
    }


# ---------------------------------------------------------------- iteration

def smooth_step(x):
    """C2 step: 0 for x <= 0, 1 for x >= 1, ``6x^5 - 15x^4 + 10x^3`` between."""
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)


def smooth_positive_part(s, width):
    """C2 positive part: 0 below 0, ``s - width/2`` above ``width``, polynomial blend between."""
    x = np.asarray(s, dtype=float) / width
    mid = x ** 3 - 0.5 * x ** 4
    return width * np.where(x <= 0, 0.0, np.where(x >= 1, x - 0.5, mid))


def stage_target(state: SubsolutionState, schedule: Schedule, q: int):
    """Amplitude and shape of the tensor added at stage ``q``: ``chi_q clamp(rho_q^2 - delta_{q+2})``."""
    grid = state.grid
    lo, hi = schedule.collar(q)
    chi = smooth_step((grid.distance_to_boundary - lo) / (hi - lo))
    floor = schedule.delta(q + 2)
    amp2 = chi * smooth_positive_part(state.rho ** 2 - floor, 0.5 * floor)
    amp2[~grid.interior] = 0.0
    return np.sqrt(amp2), state.H


def iterate(initial: SubsolutionState, A: np.ndarray, schedule: Schedule, phase: PhaseSpec,
            dump_dir: str | Path | None = None, keep_parts: bool = False):
    """Run ``schedule.q_max`` stages; returns ``(states, report)``.

    The run stops early (``report.status == "positivity_lost"``) when the new
    deficit is no longer of the form ``rho^2 (Id + H)`` with ``Id + H > 0``.
    """
    grid = initial.grid
    states = [initial]
    report = RunReport(config={"schedule": schedule.to_dict(), "grid": [grid.nx, grid.ny]})
    report.schedule = schedule.table()
    results = []
    if dump_dir is not None:
        _dump(Path(dump_dir), initial, None, grid)
    for q in range(schedule.q_max):
        st = states[-1]
        params = schedule.stage_params(q)
        amp, H = stage_target(st, schedule, q)
        try:
            res = stage(st, A, params, phase, rho=amp, H=H, keep_parts=keep_parts)
        except Exception as exc:  # noqa: BLE001 - recorded and re-raised by callers that care
            report.status = "stage_failed"
            report.failure = {"q": q, "reason": type(exc).__name__, "message": str(exc)}
            log.error("stage %d failed: %s", q, exc)
            break
        new = res.state
        states.append(new)
        results.append(res)
        dv1 = ck_norm(new.v - st.v, grid, 1)
        row = {
            "q": q + 1, "delta_q": schedule.delta(q + 1), "lam_q": schedule.lam(q + 1),
            "rho_C0": sup_norm(new.rho, grid), "H_C0": sup_norm(new.H, grid),
            "H_bound": 4.0 * schedule.lam(q + 2) ** (-schedule.alpha / schedule.b),
            "target_C0": sup_norm(amp, grid),
            "dv_C0": res.diagnostics["dv_C0"], "dv_C1": dv1,
            "dv_C1_over_sqrt_delta": dv1 / math.sqrt(schedule.delta(q + 1)),
            "bookkeeping": sup_norm(A - D_of(new.v, new.w, phase, grid, new.V)
                                    - new.rho ** 2 * (new.H + identity_like(new.H)), grid),
            "boundary_trace_deviation": float(np.abs(new.v - initial.v)[grid.boundary].max()),
            "positive": res.positive,
        } | {f"stage_{k}": v for k, v in res.diagnostics.items() if k != "positive"}
        row["H_bound_violated"] = row["H_C0"] > row["H_bound"]
        report.per_stage.append(row)
        report.wall_times.append(res.diagnostics["wall_time"])
        if dump_dir is not None:
            _dump(Path(dump_dir), new, res.E, grid)
        if not res.positive:
            report.status = "positivity_lost"
            report.failure = {"q": q + 1, "reason": "positivity_lost",
                              "message": "Id + H lost positive definiteness"}
            break
    report.results = results
    return states, report


def _dump(out: Path, st: SubsolutionState, E, grid):
    out.mkdir(parents=True, exist_ok=True)
    q = st.q
    write_field(out / f"v_{q}.csv", st.v, grid)
    write_field(out / f"w_{q}.csv", st.w, grid)
    write_field(out / f"rho_{q}.csv", st.rho, grid)
    write_field(out / f"H_{q}.csv", st.H, grid)
    if E is not None:
        write_field(out / f"E_{q}.csv", E, grid)
