"""Gridded fields on the unit square (or a disk mask) and their discrete calculus.

Fields are plain numpy arrays indexed ``[..., i, j]`` where ``i`` runs along
``x1`` and ``j`` along ``x2``:

* scalar field: shape ``(nx, ny)``
* vector field: shape ``(2, nx, ny)``
* symmetric matrix field: shape ``(3, nx, ny)`` holding ``(a11, a12, a22)``

All derivative stencils are second order: central differences at interior
nodes and one-sided second-order differences on the edges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

EXTERIOR, BOUNDARY, INTERIOR = 0, 1, 2


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    nx: int
    ny: int
    hx: float
    hy: float
    origin: tuple[float, float] = (0.0, 0.0)
    mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.nx < 9 or self.ny < 9:
            raise ValueError(f"grid needs at least 9x9 nodes, got {self.nx}x{self.ny}")
        if not (self.hx > 0 and self.hy > 0):
            raise ValueError("grid spacing must be positive")
        if self.mask is None:
            m = np.full((self.nx, self.ny), INTERIOR, dtype=np.int8)
            m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = BOUNDARY
            object.__setattr__(self, "mask", m)
        elif self.mask.shape != (self.nx, self.ny):
            raise ValueError("mask shape does not match node counts")

    @classmethod
    def unit_square(cls, n: int, ny: int | None = None) -> "Grid":
        ny = n if ny is None else ny
        return cls(n, ny, 1.0 / (n - 1), 1.0 / (ny - 1))

    @classmethod
    def unit_disk(cls, n: int) -> "Grid":
        """Disk of radius 1/2 centred at (1/2, 1/2), embedded in the unit square grid."""
        h = 1.0 / (n - 1)
        x = np.arange(n) * h
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        inside = (X1 - 0.5) ** 2 + (X2 - 0.5) ** 2 <= 0.25 + 1e-12
        inner = inside.copy()
        inner[1:-1, 1:-1] &= (inside[:-2, 1:-1] & inside[2:, 1:-1]
                              & inside[1:-1, :-2] & inside[1:-1, 2:])
        inner[0, :] = inner[-1, :] = inner[:, 0] = inner[:, -1] = False
        mask = np.where(inner, INTERIOR, np.where(inside, BOUNDARY, EXTERIOR)).astype(np.int8)
        return cls(n, n, h, h, mask=mask)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @cached_property
    def is_rectangle(self) -> bool:
        return not np.any(self.mask == EXTERIOR)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x1 = self.origin[0] + self.hx * np.arange(self.nx)
        x2 = self.origin[1] + self.hy * np.arange(self.ny)
        return tuple(np.meshgrid(x1, x2, indexing="ij"))

    @property
    def x1(self) -> np.ndarray:
        return self.coords[0]

    @property
    def x2(self) -> np.ndarray:
        return self.coords[1]

    @cached_property
    def interior(self) -> np.ndarray:
        return self.mask == INTERIOR

    @cached_property
    def boundary(self) -> np.ndarray:
        return self.mask == BOUNDARY

    @cached_property
    def distance_to_boundary(self) -> np.ndarray:
        """Euclidean distance from each node to the domain boundary."""
        if self.is_rectangle:
            x1, x2 = self.coords
            lx = (self.nx - 1) * self.hx
            ly = (self.ny - 1) * self.hy
            ox, oy = self.origin
            return np.minimum.reduce([x1 - ox, ox + lx - x1, x2 - oy, oy + ly - x2])
        from scipy.ndimage import distance_transform_edt
        return distance_transform_edt(self.mask == INTERIOR, sampling=(self.hx, self.hy))

    def collar(self, width: int) -> np.ndarray:
        """Interior nodes at least ``width`` nodes away from any boundary node."""
        keep = self.interior.copy()
        if width <= 0:
            return keep
        if self.is_rectangle:
            keep[:width + 1, :] = keep[-width - 1:, :] = False
            keep[:, :width + 1] = keep[:, -width - 1:] = False
            return keep
        from scipy.ndimage import binary_erosion
        return binary_erosion(keep, iterations=width)

    def check(self, *arrays: np.ndarray) -> None:
        for a in arrays:
            if a.shape[-2:] != self.shape:
                raise GridMismatchError(f"field of shape {a.shape} is not on a {self.shape} grid")


# ---------------------------------------------------------------- stencils

def _d1(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.gradient(f, h, axis=axis, edge_order=2)


def _d2(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, -1)
    out = np.empty_like(f)
    out[..., 1:-1] = f[..., 2:] - 2.0 * f[..., 1:-1] + f[..., :-2]
    out[..., 0] = 2.0 * f[..., 0] - 5.0 * f[..., 1] + 4.0 * f[..., 2] - f[..., 3]
    out[..., -1] = 2.0 * f[..., -1] - 5.0 * f[..., -2] + 4.0 * f[..., -3] - f[..., -4]
    out /= h * h
    return np.moveaxis(out, -1, axis)


def d1(f, grid: Grid):
    """Both first partials of ``f`` (any leading shape) as a pair."""
    return _d1(f, grid.hx, -2), _d1(f, grid.hy, -1)


def d11(f, grid: Grid):
    return _d2(f, grid.hx, -2)


def d22(f, grid: Grid):
    return _d2(f, grid.hy, -1)


def d12(f, grid: Grid):
    return _d1(_d1(f, grid.hx, -2), grid.hy, -1)


def grad(f: np.ndarray, grid: Grid) -> np.ndarray:
    grid.check(f)
    return np.stack(d1(f, grid))


def div(z: np.ndarray, grid: Grid) -> np.ndarray:
    """Divergence with the same central stencil family as :func:`grad`."""
    grid.check(z)
    return _d1(z[0], grid.hx, -2) + _d1(z[1], grid.hy, -1)


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    return d11(f, grid) + d22(f, grid)


def hessian(f: np.ndarray, grid: Grid) -> np.ndarray:
    grid.check(f)
    return np.stack([d11(f, grid), d12(f, grid), d22(f, grid)])


def sym_grad(w: np.ndarray, grid: Grid) -> np.ndarray:
    grid.check(w)
    w1x, w1y = d1(w[0], grid)
    w2x, w2y = d1(w[1], grid)
    return np.stack([w1x, 0.5 * (w1y + w2x), w2y])


def outer(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Symmetrised outer product ``sym(p (x) q)``; equals ``p (x) q`` when p = q."""
    if p.shape != q.shape:
        raise GridMismatchError("outer product of fields on different grids")
    return np.stack([p[0] * q[0], 0.5 * (p[0] * q[1] + p[1] * q[0]), p[1] * q[1]])


def curl_curl(A: np.ndarray, grid: Grid) -> np.ndarray:
    """``d22 A11 - 2 d12 A12 + d11 A22``; exact for quadratic entries."""
    grid.check(A)
    return d22(A[0], grid) - 2.0 * d12(A[1], grid) + d11(A[2], grid)


def identity(grid: Grid, scale=1.0) -> np.ndarray:
    s = np.broadcast_to(np.asarray(scale, dtype=float), grid.shape)
    return np.stack([s, np.zeros(grid.shape), s])


def trace(A: np.ndarray) -> np.ndarray:
    return A[0] + A[2]


def det(A: np.ndarray) -> np.ndarray:
    return A[0] * A[2] - A[1] ** 2


def min_eig(A: np.ndarray) -> np.ndarray:
    m = 0.5 * (A[0] + A[2])
    r = np.hypot(0.5 * (A[0] - A[2]), A[1])
    return m - r


def magnitude(f: np.ndarray) -> np.ndarray:
    """Pointwise magnitude: |f|, Euclidean length, or spectral norm for sym fields."""
    if f.ndim == 2:
        return np.abs(f)
    if f.shape[0] == 2:
        return np.hypot(f[0], f[1])
    if f.shape[0] == 3:
        return np.abs(0.5 * (f[0] + f[2])) + np.hypot(0.5 * (f[0] - f[2]), f[1])
    raise ValueError(f"unsupported field shape {f.shape}")


def _mag_any(f):
    # derivative stacks keep the field's own component layout
    return magnitude(f) if f.ndim > 2 else np.abs(f)


# ---------------------------------------------------------------- norms

def _derivatives(f: np.ndarray, grid: Grid, order: int) -> list[np.ndarray]:
    if order == 0:
        return [f]
    if order == 1:
        return list(d1(f, grid))
    if order == 2:
        return [d11(f, grid), d12(f, grid), d22(f, grid)]
    raise ValueError("derivative order must be 0, 1 or 2")


def _region(grid: Grid, collar: int) -> np.ndarray:
    if collar <= 0:
        return grid.mask != EXTERIOR
    return grid.collar(collar)


def sup_norm(f: np.ndarray, grid: Grid, collar: int = 0) -> float:
    region = _region(grid, collar)
    mag = _mag_any(f)[region]
    return float(mag.max()) if mag.size else 0.0


def ck_norm(f: np.ndarray, grid: Grid, k: int, collar: int = 0) -> float:
    total = 0.0
    for j in range(k + 1):
        total += max(sup_norm(g, grid, collar) for g in _derivatives(f, grid, j))
    return total


def _offsets(radius: int, n_max: int) -> list[tuple[int, int]]:
    offs = [(di, dj) for di in range(0, radius + 1) for dj in range(-radius, radius + 1)
            if (di > 0 or dj > 0) and di * di + dj * dj <= radius * radius]
    d = float(radius)
    while True:
        d *= 1.25
        k = int(round(d))
        if k >= n_max:
            break
        for di, dj in ((k, 0), (0, k), (k, k), (k, -k)):
            offs.append((di, dj))
    return offs


def holder_seminorm(f: np.ndarray, grid: Grid, alpha: float, m: int = 0, *,
                    radius: int = 8, n_random: int = 20000, seed: int = 0,
                    collar: int = 0) -> float:
    """Estimate ``[f]_{m+alpha}`` from sampled node pairs.

    Pairs: every offset within ``radius`` nodes, axis/diagonal offsets growing
    geometrically beyond that, and ``n_random`` seeded long-range pairs.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"Hoelder exponent must lie in (0, 1], got {alpha}")
    region = _region(grid, collar)
    nx, ny = grid.shape
    best = 0.0
    for g in _derivatives(f, grid, m):
        lead = g.shape[:-2]
        for di, dj in _offsets(radius, max(nx, ny)):
            if di >= nx or abs(dj) >= ny:
                continue
            if dj >= 0:
                a = (slice(0, nx - di), slice(0, ny - dj))
                b = (slice(di, nx), slice(dj, ny))
            else:
                a = (slice(0, nx - di), slice(-dj, ny))
                b = (slice(di, nx), slice(0, ny + dj))
            ok = region[a] & region[b]
            if not ok.any():
                continue
            diff = g[(Ellipsis,) + b] - g[(Ellipsis,) + a]
            mag = _mag_any(diff) if lead else np.abs(diff)
            dist = np.hypot(di * grid.hx, dj * grid.hy)
            best = max(best, float(mag[ok].max()) / dist ** alpha)
        if n_random:
            rng = np.random.default_rng(seed)
            idx = np.flatnonzero(region.ravel())
            p = rng.choice(idx, size=n_random)
            q = rng.choice(idx, size=n_random)
            keep = p != q
            p, q = p[keep], q[keep]
            pi, pj = np.unravel_index(p, grid.shape)
            qi, qj = np.unravel_index(q, grid.shape)
            gflat = g.reshape(lead + (-1,))
            diff = gflat[..., p] - gflat[..., q]
            if lead:
                diff = diff[..., None]
                mag = _mag_any(diff)[..., 0]
            else:
                mag = np.abs(diff)
            dist = np.hypot((pi - qi) * grid.hx, (pj - qj) * grid.hy)
            best = max(best, float(np.max(mag / dist ** alpha)))
    return best


def norm(f: np.ndarray, grid: Grid, kind: str = "C0", *, m: int = 0,
         alpha: float | None = None, collar: int = 0, **holder_kw) -> float:
    """Field norms.

    ``kind`` is ``"C0"``, ``"C1"``, ``"C2"`` or ``"holder"``; the Hoelder norm
    ``||f||_{m+alpha} = ||f||_m + [f]_{m+alpha}`` needs ``alpha``.
    """
    grid.check(f)
    if kind in ("C0", "C1", "C2"):
        return ck_norm(f, grid, int(kind[1]), collar)
    if kind == "holder":
        if alpha is None or not 0.0 < alpha <= 1.0:
            raise ValueError(f"Hoelder exponent must lie in (0, 1], got {alpha}")
        return ck_norm(f, grid, m, collar) + holder_seminorm(f, grid, alpha, m, collar=collar, **holder_kw)
    raise ValueError(f"unknown norm kind {kind!r}")


def seminorm(f: np.ndarray, grid: Grid, r: float, collar: int = 0, **holder_kw) -> float:
    """``[f]_r`` for real ``r >= 0``; integer ``r = m >= 1`` means ``[f]_{(m-1)+1}``."""
    if r == 0:
        return sup_norm(f, grid, collar)
    m = int(np.ceil(r)) - 1
    alpha = r - m
    if alpha == 1.0 and m <= 1:
        # Lipschitz seminorm of the m-th derivatives = sup of the (m+1)-th
        return max(sup_norm(g, grid, collar) for g in _derivatives(f, grid, m + 1))
    return holder_seminorm(f, grid, alpha, m, collar=collar, **holder_kw)


def integrate(f: np.ndarray, grid: Grid) -> float:
    """Composite trapezoid rule; exact for bilinear fields on the rectangle."""
    grid.check(f)
    if grid.is_rectangle:
        w = np.ones(grid.shape)
        w[0, :] *= 0.5
        w[-1, :] *= 0.5
        w[:, 0] *= 0.5
        w[:, -1] *= 0.5
    else:
        w = np.where(grid.mask == INTERIOR, 1.0, np.where(grid.mask == BOUNDARY, 0.5, 0.0))
    return float(np.sum(w * f) * grid.hx * grid.hy)


# ---------------------------------------------------------------- field files

def write_field(path, values: np.ndarray, grid: Grid) -> None:
    """CSV field file: header ``# nx ny hx hy ox oy components`` then one node per row."""
    grid.check(values)
    comps = 1 if values.ndim == 2 else values.shape[0]
    rows = values.reshape(comps, -1).T
    ox, oy = (float(c) for c in grid.origin)
    header = f"{grid.nx} {grid.ny} {float(grid.hx)!r} {float(grid.hy)!r} {ox!r} {oy!r} {comps}"
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        np.savetxt(fh, rows, fmt="%.17g", delimiter=",")


def read_field(path) -> tuple[np.ndarray, Grid]:
    path = Path(path)
    with open(path) as fh:
        head = fh.readline()
        if not head.startswith("#"):
            raise ValueError(f"{path}: missing field header")
        nx, ny, hx, hy, ox, oy, comps = head[1:].split()
        nx, ny, comps = int(nx), int(ny), int(comps)
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (nx * ny, comps):
        raise ValueError(f"{path}: expected {nx * ny}x{comps} values, got {data.shape}")
    grid = Grid(nx, ny, float(hx), float(hy), (float(ox), float(oy)))
    values = data.T.reshape((nx, ny) if comps == 1 else (comps, nx, ny))
    return np.ascontiguousarray(values), grid
