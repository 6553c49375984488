"""Write a near-identity metric as ``a^2 (grad Phi1 (x) grad Phi1 + grad Phi2 (x) grad Phi2)``.

Construction: a conformal factor ``u`` flattens ``M`` (discrete Gauss
curvature of ``exp(-2u) M`` driven to zero at interior nodes, zero Dirichlet
data), and ``Phi`` is the developing map of the flat metric obtained from a
rotated Cholesky coframe.  Then ``a = exp(u)``.

Gauge: ``Phi(centre) = centre`` and the frame rotation vanishes at the centre
node.  ``Phi`` is only determined up to a rigid motion, so compare
reconstructions rather than ``Phi`` itself.  Boundary values of the rotation
angle and of ``Phi`` come from integrating their gradients along the boundary
loop; any other boundary gauge would serve equally well.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic import ConvergenceError, PoissonProblem, solve_poisson, solve_zero_bc
from .fields import (Grid, ck_norm, d1, d11, d12, d22, det, div, grad, magnitude, min_eig,
                     outer, sup_norm)


class NotPositiveDefiniteError(ValueError):
    pass


class IntegrabilityError(ValueError):
    pass


def _det3(a, b, c, d, e, f, g, h, i):
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def gauss_curvature(M: np.ndarray, grid: Grid) -> np.ndarray:
    """Brioschi formula for the metric ``E dx1^2 + 2F dx1 dx2 + G dx2^2``."""
    grid.check(M)
    E, F, G = M
    if np.any(det(M) <= 0) or np.any(E <= 0):
        raise NotPositiveDefiniteError("metric is not positive definite at every node")
    Eu, Ev = d1(E, grid)
    Fu, Fv = d1(F, grid)
    Gu, Gv = d1(G, grid)
    Evv, Guu, Fuv = d22(E, grid), d11(G, grid), d12(F, grid)
    first = _det3(-0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev,
                  Fv - 0.5 * Gu, E, F,
                  0.5 * Gv, F, G)
    second = _det3(0.0, 0.5 * Ev, 0.5 * Gu,
                   0.5 * Ev, E, F,
                   0.5 * Gu, F, G)
    return (first - second) / (E * G - F * F) ** 2


def conformal_flatten(M: np.ndarray, grid: Grid, tol: float = 1e-9, max_iter: int = 100,
                      damping: float = 0.7, info: dict | None = None) -> np.ndarray:
    """Conformal factor ``u`` (zero on the boundary) with ``K(exp(-2u) M) = 0`` inside.

    Fixed point on the flat Poisson solver: ``Lap du = -exp(-2u) K(exp(-2u) M)``,
    ``u <- u + damping * du``, until successive iterates differ by <= ``tol``.
    """
    grid.check(M)
    if np.max(np.abs(M - np.stack([np.ones(grid.shape), np.zeros(grid.shape), np.ones(grid.shape)]))) > 0.5:
        raise NotPositiveDefiniteError("metric too far from the identity for conformal flattening")
    info = {} if info is None else info
    inner = grid.interior
    u = np.zeros(grid.shape)
    first = None
    for it in range(1, max_iter + 1):
        scale = np.exp(-2.0 * u)
        K = gauss_curvature(scale * M, grid)
        rhs = np.where(inner, -scale * K, 0.0)
        du = solve_zero_bc(rhs, grid, tol=1e-12)
        step = damping * float(np.abs(du).max())
        u += damping * du
        first = step if first is None else first
        if not np.isfinite(step) or step > 10.0 * first + 1.0:
            raise ConvergenceError("conformal flattening diverged (metric too far from Id)", step)
        if step <= tol:
            info.update(iterations=it, last_step=step,
                        curvature=float(np.abs(gauss_curvature(np.exp(-2.0 * u) * M, grid)[inner]).max()))
            return u
    raise ConvergenceError(f"conformal flattening did not settle in {max_iter} iterations", step)


def _boundary_loop(grid: Grid):
    """Counter-clockwise boundary node indices of the rectangle, closed (first == last)."""
    nx, ny = grid.shape
    ii = np.concatenate([np.arange(nx), np.full(ny - 1, nx - 1), np.arange(nx - 2, -1, -1),
                         np.zeros(ny - 1, dtype=int)])
    jj = np.concatenate([np.zeros(nx, dtype=int), np.arange(1, ny), np.full(nx - 1, ny - 1),
                         np.arange(ny - 2, -1, -1)])
    return ii, jj


def _boundary_potential(z: np.ndarray, grid: Grid, tol: float):
    """Integrate the covector field ``z`` along the boundary loop (trapezoid)."""
    if not grid.is_rectangle:
        raise NotImplementedError("developing map is implemented for rectangular grids only")
    ii, jj = _boundary_loop(grid)
    di = np.diff(ii) * grid.hx
    dj = np.diff(jj) * grid.hy
    za, zb = z[:, ii[:-1], jj[:-1]], z[:, ii[1:], jj[1:]]
    inc = 0.5 * ((za[0] + zb[0]) * di + (za[1] + zb[1]) * dj)
    pot = np.concatenate([[0.0], np.cumsum(inc)])
    mismatch = pot[-1]
    scale = float(np.abs(inc).sum())
    if abs(mismatch) > tol * max(scale, 1.0):
        raise IntegrabilityError(
            f"boundary circulation {mismatch:.3e} of a closed form: coframe not integrable "
            "(curvature too large)")
    # spread the O(h^2) loop defect linearly along the path
    length = np.concatenate([[0.0], np.cumsum(np.abs(di) + np.abs(dj))])
    pot = pot - mismatch * length / length[-1]
    g = np.zeros(grid.shape)
    g[ii, jj] = pot
    return g, mismatch


def _potential(z: np.ndarray, grid: Grid, tol: float):
    g, mismatch = _boundary_potential(z, grid, tol)
    return solve_poisson(PoissonProblem(np.zeros(grid.shape), g, div_rhs=z), grid, tol=1e-12), mismatch


def _centre(grid: Grid):
    return grid.nx // 2, grid.ny // 2


def flat_coordinates(g_flat: np.ndarray, grid: Grid, loop_tol: float = 1e-2,
                     info: dict | None = None) -> np.ndarray:
    """Developing map ``Phi`` (shape ``(2, nx, ny)``) with ``D Phi^T D Phi ~ g_flat``."""
    grid.check(g_flat)
    if np.any(min_eig(g_flat) <= 0):
        raise NotPositiveDefiniteError("flat metric is not positive definite")
    info = {} if info is None else info
    r11 = np.sqrt(g_flat[0])
    r12 = g_flat[1] / r11
    r22 = np.sqrt(g_flat[2] - r12 ** 2)
    th1 = np.stack([r11, r12])
    th2 = np.stack([np.zeros_like(r22), r22])
    jac = r11 * r22

    def curl(t):
        return d1(t[1], grid)[0] - d1(t[0], grid)[1]

    c1, c2 = curl(th1) / jac, curl(th2) / jac
    omega = c1 * th1 + c2 * th2
    beta, m_beta = _potential(omega, grid, loop_tol)
    ic, jc = _centre(grid)
    beta -= beta[ic, jc]
    cb, sb = np.cos(beta), np.sin(beta)
    eta1 = cb * th1 - sb * th2
    eta2 = sb * th1 + cb * th2
    phi1, m1 = _potential(eta1, grid, loop_tol)
    phi2, m2 = _potential(eta2, grid, loop_tol)
    x1, x2 = grid.coords
    phi1 += x1[ic, jc] - phi1[ic, jc]
    phi2 += x2[ic, jc] - phi2[ic, jc]
    info.update(loop_defects=(float(m_beta), float(m1), float(m2)))
    return np.stack([phi1, phi2])


@dataclass
class Decomposition:
    a: np.ndarray
    phi: np.ndarray
    residual: np.ndarray
    grid: Grid = field(repr=False)
    info: dict = field(default_factory=dict)

    @property
    def grad_phi(self) -> np.ndarray:
        return np.stack([grad(self.phi[0], self.grid), grad(self.phi[1], self.grid)])

    @property
    def jacobian_det(self) -> np.ndarray:
        g1, g2 = self.grad_phi
        return g1[0] * g2[1] - g1[1] * g2[0]

    @property
    def residual_norm(self) -> float:
        return sup_norm(self.residual, self.grid)

    @property
    def min_a(self) -> float:
        return float(self.a.min())

    @property
    def min_det(self) -> float:
        return float(self.jacobian_det[self.grid.interior].min())

    def norms(self) -> dict:
        gp = self.grad_phi
        return {f"a_C{j}": ck_norm(self.a, self.grid, j) for j in range(3)} | {
            f"grad_phi_C{j}": max(ck_norm(gp[k], self.grid, j) for k in range(2)) for j in range(3)}


def reconstruct(a: np.ndarray, phi: np.ndarray, grid: Grid) -> np.ndarray:
    g1, g2 = grad(phi[0], grid), grad(phi[1], grid)
    return a ** 2 * (outer(g1, g1) + outer(g2, g2))


def decompose(M: np.ndarray, grid: Grid, tol: float = 1e-9, max_iter: int = 100,
              damping: float = 0.7) -> Decomposition:
    """Decompose a positive definite ``M`` that is a constant multiple of a near-identity field.

    ``M`` is first divided by ``s = (min + max of tr M / 2) / 2``; the scaled
    field must satisfy ``M / s >= Id / 2``.  Then ``a = sqrt(s) exp(u)``.
    """
    grid.check(M)
    half_tr = 0.5 * (M[0] + M[2])
    if np.any(half_tr <= 0):
        raise NotPositiveDefiniteError("metric is not positive definite at every node")
    s = 0.5 * float(half_tr.min() + half_tr.max())
    Ms = M / s
    if np.any(min_eig(Ms) < 0.5 - 1e-12):
        raise NotPositiveDefiniteError("decomposition needs M / s >= Id/2 at every node")
    info: dict = {"scale": s}
    u = conformal_flatten(Ms, grid, tol, max_iter, damping, info=info)
    phi = flat_coordinates(np.exp(-2.0 * u) * Ms, grid, info=info)
    a = np.sqrt(s) * np.exp(u)
    return Decomposition(a, phi, M - reconstruct(a, phi, grid), grid, info)


def smooth_random_metric(grid: Grid, amplitude: float = 0.3, seed: int = 0, modes: int = 3) -> np.ndarray:
    """``Id + H`` with ``H`` a seeded smooth symmetric field scaled to ``||H||_C0 = amplitude``.

    ``H`` is a low-mode sine series, so it vanishes on the boundary of the unit square.
    """
    rng = np.random.default_rng(seed)
    x1, x2 = grid.coords
    H = np.zeros((3,) + grid.shape)
    for c in range(3):
        for k in range(1, modes + 1):
            for l in range(1, modes + 1):
                H[c] += rng.normal() / (k * l) * np.sin(np.pi * k * x1) * np.sin(np.pi * l * x2)
    H *= amplitude / float(magnitude(H).max())
    return H + np.stack([np.ones(grid.shape), np.zeros(grid.shape), np.ones(grid.shape)])
