"""Closed-form scalar expressions in ``x1, x2`` and the phase field built from them.

The expression grammar is deliberately small: numbers, ``pi``, ``x1``, ``x2``,
``+ - * / **`` (numeric exponents), ``sin``, ``cos``, ``exp``.  Derivatives
are taken symbolically, so quantities such as the Laplacian of ``cot(theta)``
carry no differencing error.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .fields import Grid, grad, hessian, laplacian

X1, X2 = sp.symbols("x1 x2", real=True)
_NAMESPACE = {"x1": X1, "x2": X2, "pi": sp.pi, "sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_SAFE = re.compile(r"^[0-9a-zA-Z_+\-*/^(). eE]*$")
_ALLOWED_FUNCS = (sp.sin, sp.cos, sp.exp)


class ExpressionError(ValueError):
    pass


class PhaseError(ValueError):
    """Phase violates ``|sin theta| >= c2`` or ``-pi < theta < pi``; carries offending coordinates."""

    def __init__(self, message: str, nodes=()):
        super().__init__(message)
        self.nodes = list(nodes)


def _check_tree(e):
    if e.is_Symbol:
        if e not in (X1, X2):
            raise ExpressionError(f"unknown symbol {e}")
        return
    if e.is_Number or e is sp.pi or e is sp.E:
        return
    if isinstance(e, (sp.Add, sp.Mul)):
        pass
    elif isinstance(e, sp.Pow):
        if not e.exp.is_Number:
            raise ExpressionError("exponents must be numbers")
    elif isinstance(e, _ALLOWED_FUNCS):
        pass
    else:
        raise ExpressionError(f"unsupported construct {type(e).__name__}")
    for arg in e.args:
        _check_tree(arg)


def parse_expression(text) -> sp.Expr:
    """Parse ``text`` (or a number) into a sympy expression of ``x1, x2``."""
    if isinstance(text, (int, float)):
        return sp.nsimplify(text) if float(text).is_integer() else sp.Float(text)
    if not isinstance(text, str) or not _SAFE.match(text) or "__" in text:
        raise ExpressionError(f"malformed expression {text!r}")
    try:
        e = sp.sympify(text.replace("^", "**"), locals=_NAMESPACE)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from None
    _check_tree(e)
    return e


def evaluate(expr: sp.Expr, grid: Grid) -> np.ndarray:
    if expr.has(sp.zoo, sp.nan, sp.oo, -sp.oo):
        # e.g. cot of a phase that vanishes identically
        return np.full(grid.shape, np.nan)
    fn = sp.lambdify((X1, X2), expr, "numpy")
    x1, x2 = grid.coords
    out = np.asarray(fn(x1, x2), dtype=float)
    return np.array(np.broadcast_to(out, grid.shape), dtype=float)


def _grad(e):
    return sp.diff(e, X1), sp.diff(e, X2)


def _digest(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class PhaseSpec:
    theta: np.ndarray
    sin_theta: np.ndarray
    cos_theta: np.ndarray
    cot_theta: np.ndarray
    grad_cot: np.ndarray
    lap_cot: np.ndarray
    grad_theta: np.ndarray
    hess_theta: np.ndarray
    kind: str
    expression: str | None = None
    key: str = field(default="", repr=False)

    @property
    def c2(self) -> float:
        """Smallest ``|sin theta|`` over the grid."""
        return float(np.abs(self.sin_theta).min())

    @property
    def tan_theta(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.sin_theta / self.cos_theta

    @classmethod
    def from_expression(cls, text, grid: Grid) -> "PhaseSpec":
        th = parse_expression(text)
        cot = sp.cos(th) / sp.sin(th)
        g1, g2 = _grad(th)
        c1, c2 = _grad(cot)
        lap = sp.simplify(sp.diff(c1, X1) + sp.diff(c2, X2))
        ev = lambda e: evaluate(e, grid)  # noqa: E731
        with np.errstate(divide="ignore", invalid="ignore"):
            fields = dict(
                theta=ev(th), sin_theta=ev(sp.sin(th)), cos_theta=ev(sp.cos(th)),
                cot_theta=ev(cot), grad_cot=np.stack([ev(c1), ev(c2)]), lap_cot=ev(lap),
                grad_theta=np.stack([ev(g1), ev(g2)]),
                hess_theta=np.stack([ev(sp.diff(g1, X1)), ev(sp.diff(g1, X2)), ev(sp.diff(g2, X2))]))
        key = hashlib.sha1(f"{th}|{grid.shape}|{grid.hx!r}|{grid.hy!r}|{grid.origin}".encode()).hexdigest()
        return cls(kind="analytic-expression", expression=str(th), key=key, **fields)

    @classmethod
    def constant(cls, value, grid: Grid) -> "PhaseSpec":
        return cls.from_expression(value, grid)

    @classmethod
    def gridded(cls, theta: np.ndarray, grid: Grid) -> "PhaseSpec":
        """Phase given only by node values; derivatives fall back to finite differences."""
        grid.check(theta)
        s, c = np.sin(theta), np.cos(theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = c / s
        return cls(theta=np.array(theta, dtype=float), sin_theta=s, cos_theta=c, cot_theta=cot,
                   grad_cot=grad(cot, grid), lap_cot=laplacian(cot, grid),
                   grad_theta=grad(theta, grid), hess_theta=hessian(theta, grid),
                   kind="gridded", key=_digest(theta))

    def validate(self, grid: Grid, c2: float | None = None, weak: bool = True) -> None:
        """Raise ``PhaseError`` listing node coordinates that break the phase hypotheses."""
        x1, x2 = grid.coords
        active = grid.mask != 0
        bad = active & ~((self.theta > -np.pi) & (self.theta < np.pi))
        if bad.any():
            raise PhaseError("phase leaves (-pi, pi)", _coords(bad, x1, x2))
        if weak:
            floor = 0.0 if c2 is None else c2
            s = np.abs(self.sin_theta)
            bad = active & ~((s >= floor) & (s > 0))
            if bad.any():
                raise PhaseError(f"|sin theta| below c2 = {floor:g}", _coords(bad, x1, x2))


def _coords(bad, x1, x2, limit=20):
    ii, jj = np.nonzero(bad)
    return [(float(x1[i, j]), float(x2[i, j])) for i, j in zip(ii[:limit], jj[:limit])]
