"""Uniform space-time grids, sampled fields, stencils and quadratures.

Fields are immutable ``(Nt, Nx)`` arrays tied to a :class:`SpaceTimeGrid`.
A field may carry a validity mask; masked nodes hold no meaningful value
(stored as 0.0) and every derivative or quadrature propagates the mask to
any output node whose stencil or integration path touches a masked node.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import cumulative_trapezoid


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class PhysParams:
    hbar: float = 1.0
    m: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.m > 0) or not math.isfinite(self.hbar * self.m):
            raise ValueError(f"hbar and m must be positive, got {self.hbar}, {self.m}")

    @property
    def beta(self) -> float:
        return 2.0 * self.m / self.hbar**2

    def as_consts(self) -> dict[str, float]:
        return {"hbar": self.hbar, "m": self.m}


@dataclass(frozen=True)
class SpaceTimeGrid:
    x0: float
    x1: float
    nx: int
    t0: float = 0.0
    t1: float = 0.0
    nt: int = 1

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x0, self.x1, self.t0, self.t1)):
            raise GridError("grid bounds must be finite")
        if not self.x1 > self.x0:
            raise GridError(f"need x1 > x0, got x0={self.x0}, x1={self.x1}")
        if self.nx < 3:
            raise GridError(f"need Nx >= 3, got {self.nx}")
        if self.nt < 1:
            raise GridError(f"need Nt >= 1, got {self.nt}")
        if self.t1 < self.t0:
            raise GridError(f"need t1 >= t0, got t0={self.t0}, t1={self.t1}")
        if self.nt > 1 and self.t1 == self.t0:
            raise GridError("Nt > 1 requires t1 > t0")

    @property
    def h(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def tau(self) -> float:
        if self.nt == 1:
            raise GridError("time step undefined for a single slice")
        return (self.t1 - self.t0) / (self.nt - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt, self.nx)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + np.arange(self.nx) * self.h

    @property
    def t(self) -> np.ndarray:
        if self.nt == 1:
            return np.array([float(self.t0)])
        return self.t0 + np.arange(self.nt) * self.tau

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcastable ``(x, t)`` arrays of shapes ``(1, Nx)`` and ``(Nt, 1)``."""
        return self.x[None, :], self.t[:, None]

    def refined(self, factor: int = 2) -> "SpaceTimeGrid":
        """Same domain with h and tau divided by ``factor``."""
        nt = self.nt if self.nt == 1 else (self.nt - 1) * factor + 1
        return SpaceTimeGrid(self.x0, self.x1, (self.nx - 1) * factor + 1, self.t0, self.t1, nt)

    def initial_slice(self) -> "SpaceTimeGrid":
        return SpaceTimeGrid(self.x0, self.x1, self.nx, self.t0, self.t0, 1)


class Field:
    """Real samples on a grid, with an optional validity mask."""

    __slots__ = ("grid", "values", "mask")

    def __init__(self, grid: SpaceTimeGrid, values, mask=None):
        try:
            values = np.array(np.broadcast_to(values, grid.shape), dtype=float)
            if mask is not None:
                mask = np.array(np.broadcast_to(mask, grid.shape), dtype=bool)
        except ValueError:
            raise GridError(f"values do not fit grid shape {grid.shape}") from None
        if mask is not None:
            if mask.all():
                mask = None
            else:
                values[~mask] = 0.0
                mask.setflags(write=False)
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise GridError(
                f"non-finite value at slice {bad[0]}, node {bad[1]} "
                f"(x={grid.x[bad[1]]!r}, t={grid.t[bad[0]]!r})"
            )
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.mask = mask

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn) -> "Field":
        x, t = grid.mesh()
        return cls(grid, fn(x, t))

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.grid.shape, dtype=bool)
        return self.mask

    @property
    def masked_fraction(self) -> float:
        return 0.0 if self.mask is None else float(1.0 - self.mask.mean())

    def slice(self, j: int) -> np.ndarray:
        return self.values[j]

    def with_mask(self, mask) -> "Field":
        return Field(self.grid, self.values, _and(self.mask, mask))

    def masked_values(self) -> np.ndarray:
        """Copy of the values with NaN at masked nodes."""
        out = np.array(self.values)
        if self.mask is not None:
            out[~self.mask] = np.nan
        return out

    def _binary(self, other, op):
        if isinstance(other, Field):
            _same_grid(self, other)
            return Field(self.grid, op(self.values, other.values), _and(self.mask, other.mask))
        return Field(self.grid, op(self.values, other), self.mask)

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __neg__(self):
        return Field(self.grid, -self.values, self.mask)

    def __pow__(self, k):
        return Field(self.grid, self.values**k, self.mask)

    def __repr__(self):
        return f"Field(shape={self.grid.shape}, masked={self.masked_fraction:.3g})"


class ComplexField:
    __slots__ = ("grid", "values", "mask")

    def __init__(self, grid: SpaceTimeGrid, values, mask=None):
        values = np.array(np.broadcast_to(values, grid.shape), dtype=complex)
        if mask is not None:
            mask = np.array(np.broadcast_to(mask, grid.shape), dtype=bool)
            if mask.all():
                mask = None
            else:
                values[~mask] = 0.0
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite complex value")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.mask = mask

    @property
    def real(self) -> Field:
        return Field(self.grid, self.values.real, self.mask)

    @property
    def imag(self) -> Field:
        return Field(self.grid, self.values.imag, self.mask)


AnyField = Union[Field, ComplexField]


def _and(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a & b


def _same_grid(a, b):
    if a.grid != b.grid:
        raise GridError("fields live on different grids")


# -- mask propagation --------------------------------------------------------

def _stencil_mask_x(valid: np.ndarray, width: int) -> np.ndarray:
    """Node i stays valid when i-1..i+1 are valid (interior) and the first or
    last ``width`` nodes are valid (one-sided boundary stencils)."""
    out = valid.copy()
    out[:, 1:-1] &= valid[:, :-2] & valid[:, 2:]
    out[:, 0] = valid[:, :width].all(axis=1)
    out[:, -1] = valid[:, -width:].all(axis=1)
    return out


def _stencil_mask_t(valid: np.ndarray, width: int) -> np.ndarray:
    return _stencil_mask_x(valid.T, width).T


def _path_mask(valid: np.ndarray, i_left: int, i_right: int) -> np.ndarray:
    """Validity of integrals from the reference cell [i_left, i_right] outward."""
    out = np.empty_like(valid)
    base = valid[:, i_left] & valid[:, i_right]
    right = np.logical_and.accumulate(valid[:, i_right:], axis=1) & base[:, None]
    left = np.logical_and.accumulate(valid[:, : i_left + 1][:, ::-1], axis=1)[:, ::-1]
    out[:, i_right:] = right
    out[:, : i_left + 1] = left & base[:, None]
    return out


# -- derivatives -------------------------------------------------------------

def _first_derivative(v: np.ndarray, step: float, axis: int) -> np.ndarray:
    """Central differences inside, second-order one-sided at both ends.

    With four or more samples the end stencil is (-4, 7, -4, 1)/(2*step).
    Its leading error term, step^2 f'''/6, equals the central one, so the
    truncation error stays smooth across the boundary and composing two
    first derivatives keeps second order at the ends.  With three samples
    the three-point one-sided stencil is used.
    """
    v = np.moveaxis(v, axis, -1)
    d = np.empty_like(v)
    d[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2.0 * step)
    # end stencils written on successive differences so constants give exactly 0
    lo = np.diff(v[..., :4], axis=-1)
    hi = -np.diff(v[..., ::-1][..., :4], axis=-1)
    if v.shape[-1] >= 4:
        w = np.array([4.0, -3.0, 1.0])
    else:
        w = np.array([3.0, -1.0])
    d[..., 0] = lo[..., : w.size] @ w / (2.0 * step)
    d[..., -1] = hi[..., : w.size] @ w / (2.0 * step)
    return np.moveaxis(d, -1, axis)


def _end_width(n: int) -> int:
    return 4 if n >= 4 else 3


def ddx(f: Field) -> Field:
    """First x-derivative (stencils as in :func:`_first_derivative`)."""
    d = _first_derivative(f.values, f.grid.h, axis=1)
    mask = None if f.mask is None else _stencil_mask_x(f.mask, _end_width(f.grid.nx))
    return Field(f.grid, d, mask)


def d2dx2(f: Field) -> Field:
    """Second x-derivative, (f[i-1] - 2 f[i] + f[i+1]) / h^2 in the interior.

    End nodes use the one-sided stencil (3, -9, 10, -5, 1)/h^2, second order
    with the same leading error h^2 f''''/12 as the interior stencil.  Grids
    of four nodes fall back to (2, -5, 4, -1)/h^2 and three-node grids to the
    single available three-point difference (still exact for quadratics).
    """
    v = f.values
    h2 = f.grid.h**2
    d = np.empty_like(v)
    d[:, 1:-1] = (v[:, :-2] - 2.0 * v[:, 1:-1] + v[:, 2:]) / h2
    nx = f.grid.nx
    # same stencils on successive differences, exact zero for constants
    if nx >= 5:
        w = np.array([-3.0, 6.0, -4.0, 1.0])
    elif nx == 4:
        w = np.array([-2.0, 3.0, -1.0])
    else:
        w = np.array([-1.0, 1.0])
    width = w.size + 1
    lo = np.diff(v[:, :width], axis=1)
    hi = np.diff(v[:, ::-1][:, :width], axis=1)
    d[:, 0] = lo @ w / h2
    d[:, -1] = hi @ w / h2
    mask = None if f.mask is None else _stencil_mask_x(f.mask, width)
    return Field(f.grid, d, mask)


def ddt(f: Field) -> Field:
    """First t-derivative, same stencils as :func:`ddx`; needs Nt >= 3."""
    if f.grid.nt < 3:
        raise GridError(f"time derivative needs Nt >= 3, got {f.grid.nt}")
    d = _first_derivative(f.values, f.grid.tau, axis=0)
    mask = None if f.mask is None else _stencil_mask_t(f.mask, _end_width(f.grid.nt))
    return Field(f.grid, d, mask)


# -- quadratures -------------------------------------------------------------

def cumint_x(f: Field, x_ref: float | None = None) -> Field:
    """Per-slice trapezoid antiderivative vanishing at ``x_ref`` (default x0)."""
    g = f.grid
    if x_ref is None:
        x_ref = g.x0
    if not g.x0 <= x_ref <= g.x1:
        raise GridError(f"x_ref={x_ref} outside [{g.x0}, {g.x1}]")
    v = f.values
    cum = cumulative_trapezoid(v, dx=g.h, axis=1, initial=0.0)
    s = (x_ref - g.x0) / g.h
    i = min(int(math.floor(s)), g.nx - 2)
    frac = s - i
    if frac == 0.0:
        offset = cum[:, i]
        i_left = i_right = i
    else:
        # exact trapezoid on the partial cell with linearly interpolated f
        f_ref = (1.0 - frac) * v[:, i] + frac * v[:, i + 1]
        offset = cum[:, i] + 0.5 * frac * g.h * (v[:, i] + f_ref)
        i_left, i_right = i, i + 1
        if frac == 1.0:
            i_left = i_right = i + 1
    out = cum - offset[:, None]
    mask = None if f.mask is None else _path_mask(f.mask, i_left, i_right)
    return Field(g, out, mask)


def cumint_t(f: Field) -> Field:
    """Per-node trapezoid integral in time from t0."""
    g = f.grid
    if g.nt < 2:
        raise GridError(f"time quadrature needs Nt >= 2, got {g.nt}")
    out = cumulative_trapezoid(f.values, dx=g.tau, axis=0, initial=0.0)
    mask = None
    if f.mask is not None:
        mask = np.logical_and.accumulate(f.mask, axis=0)
    return Field(g, out, mask)


# -- norms -------------------------------------------------------------------

def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    if n > 1:
        w[0] = w[-1] = 0.5
    return w


def linf(f: Field) -> float:
    v = np.abs(f.values[f.valid])
    return float(v.max()) if v.size else 0.0


def l2(f: Field) -> float:
    """Grid-weighted RMS (trapezoid weights in x and t) over valid nodes."""
    w = _trapezoid_weights(f.grid.nt)[:, None] * _trapezoid_weights(f.grid.nx)[None, :]
    w = w * f.valid
    total = w.sum()
    if total == 0:
        return 0.0
    return float(math.sqrt((w * f.values**2).sum() / total))


# -- CSV dumps ---------------------------------------------------------------

def field_to_csv(f: AnyField) -> str:
    """``x,t,value`` rows, slice-major; complex fields write ``x,t,re,im``.

    Masked nodes are written as ``nan``; numbers use 17 significant digits.
    """
    is_complex = isinstance(f, ComplexField)
    valid = np.ones(f.grid.shape, bool) if f.mask is None else f.mask
    xx, tt = np.broadcast_arrays(f.grid.x[None, :], f.grid.t[:, None])
    cols = [xx.ravel().tolist(), tt.ravel().tolist()]
    vals = f.values.ravel()
    mask = valid.ravel()
    if is_complex:
        cols += [np.where(mask, vals.real, np.nan).tolist(), np.where(mask, vals.imag, np.nan).tolist()]
        header, row = "x,t,re,im", "{:.17g},{:.17g},{:.17g},{:.17g}".format
    else:
        cols.append(np.where(mask, vals, np.nan).tolist())
        header, row = "x,t,value", "{:.17g},{:.17g},{:.17g}".format
    return header + "\n" + "\n".join(map(row, *cols)) + "\n"


def read_field_csv(path) -> Field:
    """Inverse of :func:`field_to_csv` for real fields (``nan`` becomes masked)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:3]] != ["x", "t", "value"] or len(rows) < 2:
        raise ValueError(f"{path}: not a field dump (expected header x,t,value and data)")
    data = np.array([[float(c) for c in r[:3]] for r in rows[1:] if r], dtype=float)
    xs = np.unique(data[:, 0])
    ts = np.unique(data[:, 1])
    if xs.size * ts.size != data.shape[0] or xs.size < 3:
        raise ValueError(f"{path}: rows do not form a complete grid with Nx >= 3")
    grid = SpaceTimeGrid(xs[0], xs[-1], xs.size, ts[0], ts[-1], ts.size)
    values = data[:, 2].reshape(ts.size, xs.size)
    ok = np.isfinite(values)
    return Field(grid, np.where(ok, values, 0.0), ok)
