"""Amplitude-to-theory pipeline in one space dimension.

Given the amplitude R (usually from :mod:`qpot.elliptic`) and the quantum
potential Q, build

* the momentum field from the continuity equation,
  ``R^2 p = m (f(t) - int_{x_ref}^x d_t R^2 dx)``,
* the classical potential, either given or reconstructed from the Newton law
  ``d_t p + p p'/m + d_x (Q + V) = 0``,
* the phase ``S = g(x) - int_{t0}^t (Q + V + p^2/2m) dt``,

and measure every governing residual.  Nodes with ``|R| <= r_floor`` are
masked: the momentum is singular there.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from qpot import exprlang
from qpot.elliptic import SolveReport, solve_all_slices
from qpot.fieldgrid import (
    ComplexField,
    Field,
    PhysParams,
    SpaceTimeGrid,
    cumint_t,
    cumint_x,
    d2dx2,
    ddt,
    ddx,
    l2,
    linf,
)

RESIDUAL_NAMES = ("continuity", "hj", "newton", "compatibility", "se_real", "se_imag")


class PipelineError(RuntimeError):
    pass


class MaskedSliceError(PipelineError):
    def __init__(self, slice_index: int):
        super().__init__(f"amplitude below r_floor on every node of slice {slice_index}")
        self.slice_index = slice_index


@dataclass(frozen=True)
class PipelineConfig:
    params: PhysParams = field(default_factory=PhysParams)
    f_expr: exprlang.ExprAst | None = None
    g_mode: str = "auto"
    g_expr: exprlang.ExprAst | None = None
    v_mode: str = "reconstruct"
    v_expr: exprlang.ExprAst | None = None
    r_floor: float | None = None
    x_ref: float | None = None
    mu: float = 0.0
    sigma_tol: float | None = None
    threads: int | None = None

    def __post_init__(self):
        if self.g_mode not in ("auto", "expr"):
            raise ValueError(f"g_mode must be 'auto' or 'expr', got {self.g_mode!r}")
        if self.g_mode == "expr" and self.g_expr is None:
            raise ValueError("g_mode='expr' needs g_expr")
        if self.v_mode not in ("reconstruct", "given"):
            raise ValueError(f"v_mode must be 'reconstruct' or 'given', got {self.v_mode!r}")
        if self.v_mode == "given" and self.v_expr is None:
            raise ValueError("v_mode='given' needs v_expr")
        if self.v_mode == "reconstruct" and self.v_expr is not None:
            raise ValueError("v_expr given but v_mode is 'reconstruct'")
        if self.r_floor is not None and not self.r_floor > 0:
            raise ValueError(f"r_floor must be positive, got {self.r_floor}")


@dataclass
class PipelineResult:
    R: Field
    p: Field
    S: Field
    V: Field
    dV: Field
    Q_used: Field
    psi: ComplexField | None
    residuals: dict[str, tuple[float, float]]
    masked_fraction: float
    v_staticity_defect: float
    reports: list[SolveReport] = field(default_factory=list)
    residual_fields: dict[str, Field] = field(default_factory=dict)

    def report_dict(self) -> dict:
        out = {
            "residuals": {
                name: {"linf": _fixed(self.residuals[name][0]), "l2": _fixed(self.residuals[name][1])}
                for name in RESIDUAL_NAMES
            },
            "masked_fraction": _fixed(self.masked_fraction),
            "v_staticity_defect": _fixed(self.v_staticity_defect),
        }
        if self.reports:
            out["slices"] = [
                {k: (_fixed(v) if isinstance(v, float) else v) for k, v in r.to_json_dict().items()}
                for r in self.reports
            ]
        return out

    def report_json(self) -> str:
        return json.dumps(self.report_dict(), indent=2) + "\n"


def _fixed(v: float) -> float:
    # twelve significant digits keeps reports stable across BLAS builds
    return float(format(v, ".12g")) if math.isfinite(v) else v


# -- building blocks ---------------------------------------------------------

def default_r_floor(R: Field) -> float:
    scale = linf(R)
    return 1e-8 * scale if scale > 0 else 1e-300


def _time_field(grid: SpaceTimeGrid, expr, params: PhysParams) -> np.ndarray:
    """Values of an expression of t as an (Nt, 1) column."""
    if expr is None:
        return np.zeros((grid.nt, 1))
    if exprlang.depends_on(expr, "x"):
        raise PipelineError("f(t) must not depend on x")
    return exprlang.evaluate_array(expr, 0.0, grid.t[:, None], params)


def momentum_field(R: Field, f_expr=None, params: PhysParams = PhysParams(),
                   x_ref: float | None = None, r_floor: float | None = None) -> Field:
    """Momentum from the integrated continuity equation.

    ``f_expr`` may be an expression of t, a callable of t, or None (zero).
    """
    if r_floor is None:
        r_floor = default_r_floor(R)
    grid = R.grid
    if callable(f_expr):
        f_t = np.asarray(f_expr(grid.t), dtype=float).reshape(grid.nt, 1)
    else:
        f_t = _time_field(grid, f_expr, params)
    rho = R * R
    flux = params.m * (f_t - cumint_x(ddt(rho), x_ref).values)
    ok = (np.abs(R.values) > r_floor) & R.valid
    for j in range(grid.nt):
        if not ok[j].any():
            raise MaskedSliceError(j)
    safe = np.where(ok, rho.values, 1.0)
    return Field(grid, np.where(ok, flux / safe, 0.0), ok)


def phase_field(R: Field, p: Field, Q: Field, V: Field, g, params: PhysParams) -> Field:
    """``S = g(x) - int (Q + V + p^2/2m) dt`` with ``S(., t0) = g``.

    ``g`` is a 1-D array over x, a scalar, or a Field (only its first slice
    is used).
    """
    grid = p.grid
    if isinstance(g, Field):
        g0, g_mask = g.values[0], g.valid[0]
    else:
        g0, g_mask = np.broadcast_to(np.asarray(g, dtype=float), (grid.nx,)), None
    rate = Q + V + p * p / (2.0 * params.m)
    S = Field(grid, g0[None, :], None if g_mask is None else np.broadcast_to(g_mask, grid.shape)) \
        - cumint_t(rate)
    return S.with_mask(R.valid)


def reconstruct_dV(p: Field, Q: Field, params: PhysParams) -> Field:
    """Spatial derivative of V making the Newton law exact: ``-p_t - p p'/m - Q'``."""
    return -ddt(p) - p * ddx(p) / params.m - ddx(Q)


def integrate_V(dV: Field, x_ref: float | None = None) -> tuple[Field, float]:
    """``V = int_{x_ref}^x dV`` (gauge V(x_ref, t) = 0) and its staticity defect."""
    V = cumint_x(dV, x_ref)
    drift = V - Field(V.grid, V.values[:1], V.valid[:1] if V.mask is not None else None)
    return V, linf(drift)


def quantum_potential(R: Field, params: PhysParams, r_floor: float | None = None) -> Field:
    """``-(hbar^2/2m) R''/R`` on nodes where ``|R| > r_floor``."""
    if r_floor is None:
        r_floor = default_r_floor(R)
    ok = (np.abs(R.values) > r_floor) & R.valid
    lap = d2dx2(R)
    safe = np.where(ok, R.values, 1.0)
    q = -(params.hbar**2 / (2.0 * params.m)) * lap.values / safe
    return Field(R.grid, np.where(ok, q, 0.0), ok & lap.valid)


# -- residuals ---------------------------------------------------------------

def residual_continuity(R: Field, p: Field, params: PhysParams) -> Field:
    rho = R * R
    return ddt(rho) + ddx(rho * p) / params.m


def residual_hj(S: Field, p: Field | None, Q: Field, V: Field, params: PhysParams) -> Field:
    """``S_t + (S_x)^2/2m + Q + V`` using the phase gradient, not p."""
    sx = ddx(S)
    out = ddt(S) + sx * sx / (2.0 * params.m) + Q + V
    return out if p is None else out.with_mask(p.valid)


def residual_compatibility(S: Field, p: Field) -> Field:
    return ddx(S) - p


def residual_newton(p: Field, Q: Field, V: Field, params: PhysParams) -> Field:
    return ddt(p) + p * ddx(p) / params.m + ddx(Q + V)


def wavefunction(R: Field, S: Field, params: PhysParams) -> ComplexField:
    mask = R.valid & S.valid
    return ComplexField(R.grid, R.values * np.exp(1j * S.values / params.hbar), mask)


def residual_se(R: Field, S: Field, V: Field, params: PhysParams) -> tuple[Field, Field]:
    """Schrodinger residual ``-(hbar^2/2m) psi'' + V psi - i hbar psi_t``.

    The residual is rotated by ``exp(-iS/hbar)`` so that, to truncation
    error, the real part is ``R * hj`` and the imaginary part is
    ``-(hbar / 2R) * continuity``.
    """
    psi = wavefunction(R, S, params)
    re, im = psi.real, psi.imag
    k = params.hbar**2 / (2.0 * params.m)
    res_re = -k * d2dx2(re) + V * re + params.hbar * ddt(im)
    res_im = -k * d2dx2(im) + V * im - params.hbar * ddt(re)
    phase = S.values / params.hbar
    c, s = np.cos(phase), np.sin(phase)
    rot_re = res_re.values * c + res_im.values * s
    rot_im = res_im.values * c - res_re.values * s
    mask = res_re.valid & res_im.valid & S.valid
    return Field(R.grid, rot_re, mask), Field(R.grid, rot_im, mask)


def norms(f: Field) -> tuple[float, float]:
    return linf(f), l2(f)


# -- orchestration -----------------------------------------------------------

def _as_field(spec, grid: SpaceTimeGrid, params: PhysParams, constants=None) -> Field:
    if isinstance(spec, Field):
        return spec
    if callable(spec) and not isinstance(spec, (exprlang.Number, exprlang.Symbol,
                                                exprlang.Unary, exprlang.Binary)):
        return Field.from_function(grid, spec)
    ast = exprlang.compile_expr(spec, constants)
    return exprlang.eval_field(ast, grid, params)


def _bc_callable(spec, params: PhysParams, constants=None) -> Callable:
    if callable(spec) and not isinstance(spec, (exprlang.Number, exprlang.Symbol,
                                                exprlang.Unary, exprlang.Binary)):
        return spec
    if isinstance(spec, (int, float)):
        return lambda t, v=float(spec): v
    ast = exprlang.compile_expr(spec, constants)
    if exprlang.depends_on(ast, "x"):
        raise PipelineError("boundary values must be functions of t only")
    return lambda t: exprlang.evaluate(ast, 0.0, t, params)


def run_pipeline(q, config: PipelineConfig, grid: SpaceTimeGrid, bc=None,
                 amplitude: Field | None = None,
                 constants: Mapping[str, float] | None = None) -> PipelineResult:
    """Build (R, p, V, S, psi) from Q and report all residuals.

    ``q`` is expression text, an AST, a callable ``(x, t)`` or a Field.
    ``bc`` is ``(left, right)`` with each an expression of t, callable or
    number.  Passing ``amplitude`` skips the elliptic solve and uses that R
    directly (needed when 0 lies in the discrete spectrum, as for
    oscillator eigenstates).
    """
    params = config.params
    Q = _as_field(q, grid, params, constants)
    reports: list[SolveReport] = []
    if amplitude is None:
        if bc is None:
            raise PipelineError("boundary values are required to solve for R")
        left, right = (_bc_callable(b, params, constants) for b in bc)
        R, reports = solve_all_slices(Q, params, config.mu, (left, right),
                                      sigma_tol=config.sigma_tol, threads=config.threads)
    else:
        R = amplitude

    r_floor = config.r_floor if config.r_floor is not None else default_r_floor(R)
    p = momentum_field(R, config.f_expr, params, config.x_ref, r_floor)

    if config.v_mode == "reconstruct":
        dV = reconstruct_dV(p, Q, params)
        V, defect = integrate_V(dV, config.x_ref)
    else:
        V = _as_field(config.v_expr, grid, params)
        dV = ddx(V)
        defect = linf(V - Field(grid, V.values[:1]))

    if config.g_mode == "auto":
        g = cumint_x(Field(grid.initial_slice(), p.values[:1], p.valid[:1]), config.x_ref)
        g = Field(grid, g.values, np.broadcast_to(g.valid, grid.shape))
    else:
        g = exprlang.evaluate_array(config.g_expr, grid.x, grid.t0, params)

    S = phase_field(R, p, Q, V, g, params)

    res = {
        "continuity": residual_continuity(R, p, params),
        "hj": residual_hj(S, p, Q, V, params),
        "newton": residual_newton(p, Q, V, params),
        "compatibility": residual_compatibility(S, p),
    }
    se_re, se_im = residual_se(R, S, V, params)
    res["se_real"], res["se_imag"] = se_re, se_im

    masked_fraction = p.masked_fraction
    psi = None if masked_fraction > 0.5 else wavefunction(R, S, params)
    return PipelineResult(
        R=R, p=p, S=S, V=V, dV=dV, Q_used=Q, psi=psi,
        residuals={k: norms(v) for k, v in res.items()},
        masked_fraction=masked_fraction,
        v_staticity_defect=defect,
        reports=reports,
        residual_fields=res,
    )
