"""Deficit algebra: the nonlocal term ``V(v)``, ``D(v, w)``, initial data and the ``(rho, H)`` split."""
from __future__ import annotations

import threading
import hashlib
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from .elliptic import harmonic_extension, solve_zero_bc
from .fields import (Grid, curl_curl, det, grad, hessian, identity, min_eig, outer,
                     sup_norm, sym_grad, trace)
from .phase import PhaseSpec


class InitialDataError(RuntimeError):
    pass


class DeficitError(ValueError):
    pass


def F_of_v(v: np.ndarray, phase: PhaseSpec, grid: Grid) -> np.ndarray:
    """``2 grad v . grad cot(theta) + v lap cot(theta)``."""
    grid.check(v)
    gv = grad(v, grid)
    return 2.0 * (gv[0] * phase.grad_cot[0] + gv[1] * phase.grad_cot[1]) + v * phase.lap_cot


class _VCache:
    """Small LRU keyed by content hash; readers share a lock with the single writer."""

    def __init__(self, size=32):
        self.size = size
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = self.misses = 0

    def get(self, key):
        with self._lock:
            out = self._data.get(key)
            if out is not None:
                self._data.move_to_end(key)
                self.hits += 1
            else:
                self.misses += 1
            return out

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.size:
                self._data.popitem(last=False)

    def clear(self):
        with self._lock:
            self._data.clear()


V_CACHE = _VCache()


def solve_V(v: np.ndarray, phase: PhaseSpec, grid: Grid, tol: float = 1e-10) -> np.ndarray:
    """``Lap V = F(v)`` inside, ``V = 0`` on the boundary.  Returned arrays are read-only."""
    grid.check(v)
    key = (hashlib.sha1(np.ascontiguousarray(v).tobytes()).hexdigest(), phase.key, id(grid), tol)
    hit = V_CACHE.get(key)
    if hit is not None:
        return hit
    F = F_of_v(v, phase, grid)
    if not np.any(F[grid.interior]):
        V = np.zeros(grid.shape)
    else:
        V = solve_zero_bc(F, grid, tol)
    V.setflags(write=False)
    V_CACHE.put(key, V)
    return V


def D_of(v: np.ndarray, w: np.ndarray, phase: PhaseSpec, grid: Grid,
         V: np.ndarray | None = None) -> np.ndarray:
    """``sym grad w + 1/2 grad v (x) grad v - (v cot theta) Id + V Id``."""
    grid.check(v, w)
    V = solve_V(v, phase, grid) if V is None else V
    gv = grad(v, grid)
    return sym_grad(w, grid) + 0.5 * outer(gv, gv) + identity(grid, V - v * phase.cot_theta)


def split_deficit(Dq: np.ndarray, floor: float = 0.0, neg_tol: float = 1e-12, strict: bool = True):
    """Split ``Dq = rho^2 (Id + H)`` with ``tr H = 0``.

    ``rho^2 = max(tr(Dq)/2, 0)``; ``H`` is set to zero where ``rho^2`` is below
    the guard ``max(floor, 1e-10 max rho^2)``.  Returns ``(rho, H, ok)`` where
    ``ok`` is False when ``Id + H`` fails to be positive definite somewhere.
    A trace below ``-neg_tol`` raises ``DeficitError`` when ``strict``; otherwise
    it only clears ``ok``.
    """
    half_tr = 0.5 * trace(Dq)
    scale = max(float(np.abs(half_tr).max()), 1.0)
    negative = half_tr.min() < -neg_tol * scale
    if negative and strict:
        raise DeficitError(f"deficit has negative trace {2 * half_tr.min():.3e}")
    rho2 = np.maximum(half_tr, 0.0)
    guard = max(floor, 1e-10 * float(rho2.max()))
    live = rho2 > guard
    H = np.zeros_like(Dq)
    safe = np.where(live, rho2, 1.0)
    H[0] = np.where(live, Dq[0] / safe - 1.0, 0.0)
    H[1] = np.where(live, Dq[1] / safe, 0.0)
    H[2] = np.where(live, Dq[2] / safe - 1.0, 0.0)
    ok = bool(np.all(min_eig(H + identity_like(H)) > 0)) and not negative
    return np.sqrt(rho2), H, ok


def identity_like(S: np.ndarray, scale=1.0) -> np.ndarray:
    out = np.zeros_like(S)
    out[0] = scale
    out[2] = scale
    return out


@dataclass(frozen=True, eq=False)
class SubsolutionState:
    v: np.ndarray
    w: np.ndarray
    rho: np.ndarray
    H: np.ndarray
    A: np.ndarray
    q: int
    V: np.ndarray
    grid: Grid

    def deficit(self, phase: PhaseSpec) -> np.ndarray:
        return self.A - D_of(self.v, self.w, phase, self.grid, self.V)

    def bookkeeping_error(self, phase: PhaseSpec) -> float:
        """``||A - D(v, w) - rho^2 (Id + H)||_C0``."""
        return sup_norm(self.deficit(phase) - self.rho ** 2 * (self.H + identity_like(self.H)), self.grid)

    def invariants(self, phase: PhaseSpec) -> dict:
        g = self.grid
        return {
            "rho_nonnegative": bool(np.all(self.rho >= 0)),
            "rho_zero_on_boundary": bool(np.all(self.rho[g.boundary] == 0)),
            "id_plus_H_positive": bool(np.all(min_eig(self.H + identity_like(self.H)) > 0)),
            "bookkeeping_error": self.bookkeeping_error(phase),
        }

    def evolve(self, **changes) -> "SubsolutionState":
        return replace(self, **changes)


def initial_data(grid: Grid, g: np.ndarray, phase: PhaseSpec, w0: np.ndarray | None = None,
                 tol: float = 1e-10, curl_tol: float = 1e-2, collar: int = 2):
    """Matrix field ``A`` and the adapted subsolution ``(v0, w0, rho0, H0)``.

    ``u`` is the harmonic extension of ``g``, ``-Lap psi = 1 - det hess u`` with
    zero boundary data, ``A = psi Id + 1/2 grad u (x) grad u + (U - u cot) Id``
    with ``U = V(u)``.  With the default ``w0 = 0`` this gives ``rho0 = sqrt(psi)``
    and ``H0 = 0``; any other ``w0`` must keep ``psi Id - sym grad w0`` positive
    definite inside and is split with :func:`split_deficit`.
    """
    grid.check(g)
    u = harmonic_extension(g, grid, tol)
    psi = solve_zero_bc(det(hessian(u, grid)) - 1.0, grid, tol)
    inner = grid.interior
    if psi[inner].min() <= -1e-12:
        raise InitialDataError(f"psi <= 0 at an interior node (min {psi[inner].min():.3e})")
    psi[~inner] = 0.0
    psi = np.maximum(psi, 0.0)
    U = solve_V(u, phase, grid, tol)
    gu = grad(u, grid)
    A = identity(grid, psi) + 0.5 * outer(gu, gu) + identity(grid, U - u * phase.cot_theta)
    curl_res = float(np.abs(curl_curl(A, grid) + 1.0)[grid.collar(collar)].max())
    if curl_res > curl_tol:
        raise InitialDataError(f"curl curl A + 1 = {curl_res:.3e} exceeds {curl_tol:g}")
    if w0 is None:
        w0 = np.zeros((2,) + grid.shape)
        rho, H = np.sqrt(psi), np.zeros((3,) + grid.shape)
    else:
        grid.check(w0)
        Dq = A - D_of(u, w0, phase, grid, U)
        edge = float(np.abs(Dq[:, ~inner]).max())
        # discretisation error of sym grad w0 at the edges is tolerated, a genuine trace is not
        if edge > 1e-4 * float(np.abs(Dq).max()):
            raise InitialDataError(f"w0 leaves a deficit of {edge:.3e} on the boundary")
        # rho vanishes on the boundary by definition; one-sided stencils leave round-off there
        Dq[:, ~inner] = 0.0
        rho, H, ok = split_deficit(Dq, strict=False)
        if not ok:
            raise InitialDataError("w0 breaks positive definiteness of the initial deficit")
    state = SubsolutionState(v=u, w=np.array(w0, dtype=float), rho=rho, H=H, A=A, q=0, V=U, grid=grid)
    info = {"psi": psi, "u": u, "U": U, "curl_residual": curl_res}
    return A, state, info
