"""Per-slice two-point boundary value problems for the amplitude.

Each time slice solves the Dirichlet problem

    -R'' - beta * Q * R + mu * R = g,    R(x0) = r_left, R(x1) = r_right

with the three-point stencil on the interior nodes.  The discrete operator
``-D2 - beta*diag(Q)`` is symmetric tridiagonal; its eigenvalues are the
discrete solvability spectrum Sigma_h, and the system is declared singular
when the shifted operator has an eigenvalue within the numerical thickness
``max(1e-10, 1e-8 * ||A||)`` of zero.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal, solve_banded

from qpot.fieldgrid import Field, PhysParams, SpaceTimeGrid


class SingularSystemError(ArithmeticError):
    """The slice operator has an eigenvalue at zero: no unique solution."""

    def __init__(self, eigenvalue: float, tolerance: float, slice_index: int | None = None):
        where = "" if slice_index is None else f" on slice {slice_index}"
        super().__init__(
            f"singular system{where}: eigenvalue {eigenvalue:.6g} of the shifted "
            f"operator lies within {tolerance:.3g} of 0 (0 in Sigma_h)"
        )
        self.eigenvalue = eigenvalue
        self.tolerance = tolerance
        self.slice_index = slice_index


class SliceSolveError(RuntimeError):
    """Aggregate of per-slice failures; ``failures`` is a list of (j, exc)."""

    def __init__(self, failures):
        self.failures = failures
        idx = ", ".join(str(j) for j, _ in failures[:10])
        more = "" if len(failures) <= 10 else f" (+{len(failures) - 10} more)"
        super().__init__(f"{len(failures)} slice(s) failed: {idx}{more}; first: {failures[0][1]}")

    @property
    def singular(self) -> bool:
        return all(isinstance(e, SingularSystemError) for _, e in self.failures)


@dataclass(frozen=True, eq=False)
class EllipticProblem:
    x: np.ndarray
    q_slice: np.ndarray
    beta: float
    mu: float = 0.0
    r_left: float = 0.0
    r_right: float = 0.0
    g_rhs: np.ndarray | None = None
    sigma_tol: float | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        q = np.asarray(self.q_slice, dtype=float)
        if x.ndim != 1 or x.size < 3:
            raise ValueError("need at least 3 nodes")
        if q.shape != x.shape:
            raise ValueError("q_slice must match the node count")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not (np.all(np.isfinite(q)) and math.isfinite(self.r_left) and math.isfinite(self.r_right)):
            raise ValueError("Q samples and boundary values must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "q_slice", q)
        if self.g_rhs is not None:
            g = np.asarray(self.g_rhs, dtype=float)
            if g.shape != x.shape or not np.all(np.isfinite(g)):
                raise ValueError("g_rhs must be finite and match the node count")
            object.__setattr__(self, "g_rhs", g)

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])


@dataclass
class SolveReport:
    coercive: bool
    coercivity_margin: float
    sigma_distance: float
    condition_estimate: float
    nearest_eigenvalue: float = 0.0
    slice: int | None = None
    t: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "slice": self.slice,
            "t": self.t,
            "coercive": self.coercive,
            "margin": self.coercivity_margin,
            "sigma_distance": self.sigma_distance,
            "condition_estimate": self.condition_estimate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def _operator(h: float, q: np.ndarray, beta: float, mu: float = 0.0):
    """Diagonal and off-diagonal of ``-D2 - beta*Q + mu`` on interior nodes."""
    diag = 2.0 / h**2 - beta * q[1:-1] + mu
    off = np.full(diag.size - 1, -1.0 / h**2)
    return diag, off


def thomas(lower, diag, upper, rhs):
    """Tridiagonal solve without pivoting; returns (solution, pivots).

    ``lower[i]`` multiplies x[i] in row i+1 and ``upper[i]`` multiplies
    x[i+1] in row i.  A zero pivot raises ZeroDivisionError.
    """
    n = diag.size
    c = np.empty(n)
    d = np.empty(n)
    piv = np.empty(n)
    piv[0] = diag[0]
    if piv[0] == 0.0:
        raise ZeroDivisionError("zero pivot at row 0")
    c[0] = upper[0] / piv[0] if n > 1 else 0.0
    d[0] = rhs[0] / piv[0]
    for i in range(1, n):
        piv[i] = diag[i] - lower[i - 1] * c[i - 1]
        if piv[i] == 0.0:
            raise ZeroDivisionError(f"zero pivot at row {i}")
        if i < n - 1:
            c[i] = upper[i] / piv[i]
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / piv[i]
    x = np.empty(n)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x, piv


def laplacian_ground_eigenvalue(h: float, n_interior: int) -> float:
    """Smallest eigenvalue of the Dirichlet -D2 stencil on ``n_interior`` nodes."""
    return 4.0 / h**2 * math.sin(math.pi / (2 * (n_interior + 1))) ** 2


def sigma_tolerance(diag, off, sigma_tol: float | None = None) -> float:
    if sigma_tol is not None:
        return float(sigma_tol)
    norm = float(np.max(np.abs(diag)) + 2.0 * (np.max(np.abs(off)) if off.size else 0.0))
    return max(1e-10, 1e-8 * norm)


def _nearest_and_extreme(diag, off, negatives: int):
    """Eigenvalue closest to zero, largest |eigenvalue|, and an inertia check.

    ``negatives`` is the count of negative eigenvalues, so the nearest one has
    index ``negatives - 1`` or ``negatives``.  The flag reports whether the
    computed eigenvalues at those indices agree with that count.
    """
    n = diag.size
    lo, hi = max(negatives - 1, 0), min(negatives, n - 1)
    near = eigvalsh_tridiagonal(diag, off, select="i", select_range=(lo, hi))
    first = eigvalsh_tridiagonal(diag, off, select="i", select_range=(0, 0))[0]
    last = eigvalsh_tridiagonal(diag, off, select="i", select_range=(n - 1, n - 1))[0]
    consistent = True
    if negatives > 0 and near[0] >= 0:
        consistent = False
    if negatives < n and near[-1] < 0:
        consistent = False
    nearest = float(near[np.argmin(np.abs(near))])
    return nearest, float(max(abs(first), abs(last))), consistent


def coercivity_check(q_slice, beta: float, mu: float = 0.0, h: float | None = None,
                     x=None) -> tuple[bool, float]:
    """Sufficient coercivity test ``mu + lambda_1(-D2_h) - beta*sup Q > 0``.

    Pass the node spacing ``h`` or the node array ``x``.  The margin is the
    guaranteed lower bound on the spectrum of the shifted operator, so a
    positive margin also rules out ``0 in Sigma_h``.  ``coercive`` demands
    the margin clear the same numerical thickness the solver uses.
    """
    q = np.asarray(q_slice, dtype=float)
    if h is None:
        if x is None:
            raise ValueError("need h or x")
        h = float(x[1] - x[0])
    lam1 = laplacian_ground_eigenvalue(h, q.size - 2)
    margin = mu + lam1 - beta * float(np.max(q[1:-1]))
    diag, off = _operator(h, q, beta, mu)
    return bool(margin > sigma_tolerance(diag, off)), float(margin)


def solve_slice(p: EllipticProblem, slice_index: int | None = None):
    """Solve one slice; returns ``(R, SolveReport)`` with R on all nodes."""
    h = p.h
    diag, off = _operator(h, p.q_slice, p.beta, p.mu)
    rhs = np.zeros(diag.size) if p.g_rhs is None else p.g_rhs[1:-1].copy()
    rhs[0] += p.r_left / h**2
    rhs[-1] += p.r_right / h**2
    tol = sigma_tolerance(diag, off, p.sigma_tol)

    try:
        interior, piv = thomas(off, diag, off, rhs)
    except ZeroDivisionError:
        interior = piv = None

    if piv is not None:
        # Sylvester inertia of the LDL^T factorization Thomas just built
        negatives = int(np.count_nonzero(piv < 0))
        nearest, biggest, consistent = _nearest_and_extreme(diag, off, negatives)
    if piv is None or not consistent:
        negatives = int(np.count_nonzero(eigvalsh_tridiagonal(diag, off) < 0))
        nearest, biggest, _ = _nearest_and_extreme(diag, off, negatives)
    if abs(nearest) <= tol:
        raise SingularSystemError(nearest, tol, slice_index)

    r = np.empty(p.x.size)
    r[0], r[-1] = p.r_left, p.r_right
    if interior is not None:
        r[1:-1] = interior
    if interior is None or discrete_residual(p, r) > 1e-12:
        # nonsingular, but elimination without pivoting lost accuracy
        ab = np.zeros((3, diag.size))
        ab[0, 1:] = off
        ab[1] = diag
        ab[2, :-1] = off
        r[1:-1] = solve_banded((1, 1), ab, rhs)

    coercive, margin = coercivity_check(p.q_slice, p.beta, p.mu, h=h)
    report = SolveReport(
        coercive=coercive,
        coercivity_margin=margin,
        sigma_distance=abs(nearest),
        condition_estimate=biggest / abs(nearest),
        nearest_eigenvalue=nearest,
        slice=slice_index,
    )
    return r, report


def discrete_residual(p: EllipticProblem, r: np.ndarray) -> float:
    """Backward-error style residual ``|A r - b| / (|A| |r| + |b|)`` of a slice."""
    h2 = p.h**2
    lhs = -(r[:-2] - 2 * r[1:-1] + r[2:]) / h2 + (p.mu - p.beta * p.q_slice[1:-1]) * r[1:-1]
    b = np.zeros(lhs.size) if p.g_rhs is None else p.g_rhs[1:-1]
    diag, off = _operator(p.h, p.q_slice, p.beta, p.mu)
    a_norm = float(np.max(np.abs(diag))) + 2.0 / h2
    scale = a_norm * float(np.max(np.abs(r))) + float(np.max(np.abs(b), initial=0.0))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(lhs - b)) / scale)


def sigma_spectrum(q_slice, beta: float, n_eigs: int, h: float | None = None, x=None) -> np.ndarray:
    """Lowest ``n_eigs`` eigenvalues lambda of ``(-D2_h - beta*Q) u = lambda u``.

    The operator acts on the interior nodes with homogeneous Dirichlet data.
    """
    q = np.asarray(q_slice, dtype=float)
    if h is None:
        if x is None:
            raise ValueError("need h or x")
        h = float(x[1] - x[0])
    n = q.size - 2
    if not 1 <= n_eigs <= n:
        raise ValueError(f"n_eigs must be in [1, {n}], got {n_eigs}")
    diag, off = _operator(h, q, beta)
    try:
        return eigvalsh_tridiagonal(diag, off, select="i", select_range=(0, n_eigs - 1))
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigensolver did not converge: {exc}") from exc


def nearest_sigma(q_slice, beta: float, h: float, mu: float = 0.0, sigma_tol=None):
    """(nearest eigenvalue of the shifted operator, tolerance, zero_in_sigma)."""
    q = np.asarray(q_slice, dtype=float)
    diag, off = _operator(h, q, beta, mu)
    negatives = int(np.count_nonzero(eigvalsh_tridiagonal(diag, off) < 0))
    nearest, _, _ = _nearest_and_extreme(diag, off, negatives)
    tol = sigma_tolerance(diag, off, sigma_tol)
    return nearest, tol, abs(nearest) <= tol


def _worker_count(threads: int | None) -> int:
    if threads is None:
        try:
            threads = int(os.environ.get("QPOT_THREADS", "0"))
        except ValueError:
            threads = 0
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def solve_all_slices(Q: Field, params: PhysParams, mu: float = 0.0, bc=None,
                     g_rhs: Field | None = None, sigma_tol: float | None = None,
                     threads: int | None = None):
    """Solve every time slice independently.

    ``bc`` is a pair ``(left, right)`` of callables of t returning the
    Dirichlet values (scalars are accepted too).  Returns ``(R, reports)``;
    failures on any slice are collected into one :class:`SliceSolveError`.
    """
    grid: SpaceTimeGrid = Q.grid
    left, right = bc if bc is not None else (0.0, 0.0)
    left_fn = left if callable(left) else (lambda t, v=float(left): v)
    right_fn = right if callable(right) else (lambda t, v=float(right): v)
    x = grid.x
    ts = grid.t

    def one(j):
        prob = EllipticProblem(
            x=x, q_slice=Q.values[j], beta=params.beta, mu=mu,
            r_left=float(left_fn(ts[j])), r_right=float(right_fn(ts[j])),
            g_rhs=None if g_rhs is None else g_rhs.values[j], sigma_tol=sigma_tol,
        )
        try:
            r, rep = solve_slice(prob, slice_index=j)
        except (SingularSystemError, ValueError, ArithmeticError) as exc:
            return j, None, exc
        rep.t = float(ts[j])
        return j, (r, rep), None

    workers = min(_worker_count(threads), grid.nt)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(grid.nt)))
    else:
        results = [one(j) for j in range(grid.nt)]

    failures = [(j, exc) for j, _, exc in results if exc is not None]
    if failures:
        raise SliceSolveError(failures)
    values = np.empty(grid.shape)
    reports = []
    for j, (r, rep), _ in results:
        values[j] = r
        reports.append(rep)
    return Field(grid, values), reports
