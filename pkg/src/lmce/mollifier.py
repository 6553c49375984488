"""Convolution with the scaled bump ``phi_l(x) = l^-2 phi(x / l)``.

Fields are extended by even reflection across each edge before convolving.
Outputs vanish exactly (not to round-off) at nodes whose kernel footprint
misses the support of the input, so support bookkeeping stays bitwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .fields import Grid, norm, seminorm, sup_norm, ck_norm


class UnderResolvedError(ValueError):
    pass


def bump(r):
    """Unnormalised profile ``exp(-1/(1-r^2))`` on ``r < 1``, zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class MollifierKernel:
    l: float
    hx: float
    hy: float
    weights: np.ndarray

    @classmethod
    def build(cls, l: float, grid: Grid) -> "MollifierKernel":
        if l < 2.0 * grid.h:
            raise UnderResolvedError(
                f"length-scale {l:.4g} below the resolvable bound 2h = {2 * grid.h:.4g}")
        rx, ry = int(np.floor(l / grid.hx)), int(np.floor(l / grid.hy))
        i = np.arange(-rx, rx + 1)[:, None] * grid.hx
        j = np.arange(-ry, ry + 1)[None, :] * grid.hy
        w = bump(np.hypot(i, j) / l)
        return cls(l, grid.hx, grid.hy, w / w.sum())

    @property
    def radius_nodes(self) -> tuple[int, int]:
        return (self.weights.shape[0] // 2, self.weights.shape[1] // 2)

    def fourier_factor(self, k1: float, k2: float = 0.0) -> float:
        """Discrete transform ``sum_w cos(k . y)`` (the attenuation of a plane wave)."""
        rx, ry = self.radius_nodes
        y1 = np.arange(-rx, rx + 1)[:, None] * self.hx
        y2 = np.arange(-ry, ry + 1)[None, :] * self.hy
        return float(np.sum(self.weights * np.cos(k1 * y1 + k2 * y2)))


def _convolve(f2d, kernel):
    rx, ry = kernel.radius_nodes
    nx, ny = f2d.shape
    if rx >= nx or ry >= ny:
        raise UnderResolvedError("mollification length-scale exceeds the domain")
    padded = np.pad(f2d, ((rx, rx), (ry, ry)), mode="reflect")
    out = fftconvolve(padded, kernel.weights, mode="valid")
    footprint = (kernel.weights > 0).astype(float)
    support = np.pad((f2d != 0).astype(float), ((rx, rx), (ry, ry)), mode="reflect")
    touched = fftconvolve(support, footprint, mode="valid") > 0.5
    out[~touched] = 0.0
    return out


def mollify(f: np.ndarray, l: float, grid: Grid, kernel: MollifierKernel | None = None) -> np.ndarray:
    """Componentwise ``f * phi_l`` of a scalar, vector or symmetric-matrix field."""
    grid.check(f)
    kernel = MollifierKernel.build(l, grid) if kernel is None else kernel
    if f.ndim == 2:
        return _convolve(f, kernel)
    return np.stack([_convolve(c, kernel) for c in f])


def mollify_probe(f: np.ndarray, l: float, grid: Grid, r: float = 0.0, s: float = 1.0,
                  alpha: float = 0.5, g: np.ndarray | None = None, collar: int = 0) -> dict:
    """Ratios lhs/rhs (constant 1) of the four standard mollification estimates.

    * ``gain``:        ``[f~]_{r+s} / (l^-s [f]_r)``
    * ``first_order``: ``||f - f~||_r / (l^{1-r} [f]_1)``        (0 <= r <= 1)
    * ``second_order``: ``||f - f~||_j / (l^{2-j} ||f||_2)``     (j = floor(r) in {0, 1})
    * ``commutator``:  ``||(fg)~ - f~ g~||_r / (l^{2 alpha - r} ||f||_alpha ||g||_alpha)``

    ``g`` defaults to ``f``.  Norms are taken over the whole grid unless a
    node ``collar`` is excluded.
    """
    g = f if g is None else g
    ft = mollify(f, l, grid)
    gt = mollify(g, l, grid)
    err = f - ft

    def _norm_r(x, rr):
        # ||x||_r for 0 <= r <= 1: C0 plus the Hoelder / Lipschitz seminorm
        if rr == 0:
            return sup_norm(x, grid, collar)
        return sup_norm(x, grid, collar) + seminorm(x, grid, rr, collar)

    def _ratio(a, b):
        return float(a / b) if b > 0 else (0.0 if a == 0 else float("inf"))

    lip = seminorm(f, grid, 1.0, collar)
    j = 0 if r < 1 else 1
    out = {
        "l": l, "r": r, "s": s, "alpha": alpha, "collar": collar,
        "gain": _ratio(seminorm(ft, grid, r + s, collar), l ** (-s) * seminorm(f, grid, r, collar)),
        "first_order": _ratio(_norm_r(err, min(r, 1.0)), l ** (1 - min(r, 1.0)) * lip),
        "second_order": _ratio(ck_norm(err, grid, j, collar), l ** (2 - j) * ck_norm(f, grid, 2, collar)),
    }
    comm = mollify(f * g, l, grid) - ft * gt
    na = norm(f, grid, "holder", alpha=alpha, collar=collar)
    nb = norm(g, grid, "holder", alpha=alpha, collar=collar)
    out["commutator"] = _ratio(_norm_r(comm, min(r, 1.0)), l ** (2 * alpha - min(r, 1.0)) * na * nb)
    return out
