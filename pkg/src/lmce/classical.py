"""Classical solutions for small ``|tan(theta)|`` by Picard iteration.

Write ``v = psi + g~`` with ``g~`` the harmonic extension of the boundary data
and iterate ``Lap psi_{k+1} = -tan(theta) (det hess(psi_k + g~) - 1) - Lap g~``
with ``psi_{k+1} = 0`` on the boundary.
"""
from __future__ import annotations

import numpy as np

from .elliptic import ConvergenceError, harmonic_extension, solve_zero_bc
from .fields import Grid, det, hessian, holder_seminorm, laplacian, sup_norm
from .phase import PhaseSpec


class SmallPhaseError(ValueError):
    pass


def small_phase_check(phase: PhaseSpec, grid: Grid, kappa: float = 0.5, **holder_kw) -> float:
    """``||tan(theta)||_{C^kappa}`` (sup plus sampled Hoelder seminorm)."""
    t = phase.tan_theta
    if not np.all(np.isfinite(t[grid.mask != 0])):
        return float("inf")
    return sup_norm(t, grid) + holder_seminorm(t, grid, kappa, **holder_kw)


def _strong(v, phase, grid):
    Hv = hessian(v, grid)
    return phase.cos_theta * (Hv[0] + Hv[2]) + phase.sin_theta * (det(Hv) - 1.0)


def solve_classical(grid: Grid, g: np.ndarray, phase: PhaseSpec, tol: float = 1e-8,
                    max_iter: int = 100, mu: float = 0.2, psi0: np.ndarray | None = None,
                    collar: int = 2, info: dict | None = None) -> np.ndarray:
    """Classical solution ``v`` with ``v = g`` on the boundary.

    Stops once the strong residual over interior nodes (``collar`` nodes
    excluded) is at most ``tol``.  Raises ``SmallPhaseError`` when
    ``max |tan(theta)| > mu`` and ``ConvergenceError`` when the residual grows
    on two consecutive iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    info = {} if info is None else info
    grid.check(g)
    tan = phase.tan_theta
    tmax = float(np.abs(tan[grid.mask != 0]).max())
    if not np.isfinite(tmax) or tmax > mu:
        raise SmallPhaseError(f"max |tan(theta)| = {tmax:.3g} exceeds mu = {mu:g}; "
                              "the Picard map is only a contraction for small |tan(theta)|")
    region = grid.collar(collar)
    gt = harmonic_extension(g, grid, 1e-13)
    lap_gt = laplacian(gt, grid)
    psi = np.zeros(grid.shape) if psi0 is None else np.array(psi0, dtype=float)
    psi[~grid.interior] = 0.0
    residuals, steps = [], []
    growth = 0
    for k in range(1, max_iter + 1):
        Hv = hessian(psi + gt, grid)
        rhs = -tan * (det(Hv) - 1.0) - lap_gt
        new = solve_zero_bc(rhs, grid, tol=1e-13, u0=psi)
        steps.append(sup_norm(new - psi, grid))
        psi = new
        v = psi + gt
        res = float(np.abs(_strong(v, phase, grid))[region].max())
        if residuals and res > residuals[-1]:
            growth += 1
            if growth >= 2:
                info.update(iterations=k, residuals=residuals + [res], steps=steps)
                raise ConvergenceError("Picard iteration is not contracting; reduce |tan(theta)|", res)
        else:
            growth = 0
        residuals.append(res)
        if res <= tol:
            break
    else:
        info.update(iterations=max_iter, residuals=residuals, steps=steps)
        raise ConvergenceError(f"no convergence in {max_iter} Picard iterations", residuals[-1])
    ratios = [b / a for a, b in zip(steps, steps[1:]) if a > 0]
    info.update(iterations=len(residuals), residuals=residuals, steps=steps,
                contraction=max(ratios) if ratios else 0.0, tan_max=tmax)
    return v
