"""Command-line front end.

    qpot invert SPEC.json --out DIR [--no-plots]
    qpot eigs SPEC.json -n N
    qpot case NAME [--set KEY=VALUE ...]
    qpot plot FIELD.csv OUT.svg

Exit codes: 0 success, 1 numerical failure, 2 singular elliptic slice,
3 invalid input (spec, case name, CSV).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

from qpot import exprlang
from qpot.elliptic import SliceSolveError, nearest_sigma, sigma_spectrum
from qpot.fieldgrid import GridError, PhysParams, SpaceTimeGrid, field_to_csv, read_field_csv
from qpot.madelung import PipelineConfig, PipelineError, run_pipeline

EXIT_OK, EXIT_FAIL, EXIT_SINGULAR, EXIT_INPUT = 0, 1, 2, 3

SPEC_KEYS = ("grid", "physics", "q", "mode", "v", "f", "g", "bc", "constants", "tolerances")
GRID_KEYS = ("x0", "x1", "Nx", "t0", "t1", "Nt")
PHYSICS_KEYS = ("hbar", "m")
BC_KEYS = ("left", "right")
TOLERANCE_KEYS = ("r_floor", "sigma_tol")


class SpecError(ValueError):
    """Invalid problem spec; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ProblemSpec:
    grid: SpaceTimeGrid
    params: PhysParams
    q: exprlang.ExprAst
    mode: str = "reconstruct"
    v: exprlang.ExprAst | None = None
    f: exprlang.ExprAst | None = None
    g: exprlang.ExprAst | None = None
    bc: tuple | None = None
    constants: dict = field(default_factory=dict)
    r_floor: float | None = None
    sigma_tol: float | None = None

    def pipeline_config(self, threads: int | None = None) -> PipelineConfig:
        return PipelineConfig(
            params=self.params, f_expr=self.f,
            g_mode="expr" if self.g is not None else "auto", g_expr=self.g,
            v_mode=self.mode, v_expr=self.v,
            r_floor=self.r_floor, sigma_tol=self.sigma_tol, threads=threads,
        )


# -- spec validation ---------------------------------------------------------

def _block(doc: dict, key: str, allowed, required=()) -> dict:
    value = doc[key]
    if not isinstance(value, dict):
        raise SpecError(key, "must be a JSON object")
    for k in value:
        if k not in allowed:
            raise SpecError(f"{key}.{k}", f"unknown key (allowed: {', '.join(allowed)})")
    for k in required:
        if k not in value:
            raise SpecError(f"{key}.{k}", "missing required key")
    return value


def _number(value, key: str, positive=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SpecError(key, f"expected a finite number, got {value!r}")
    if positive and value <= 0:
        raise SpecError(key, f"must be positive, got {value!r}")
    return float(value)


def _count(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SpecError(key, f"expected an integer, got {value!r}")
    return value


def _expression(value, key: str, constants: dict, t_only=False):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = repr(float(value))
    if not isinstance(value, str):
        raise SpecError(key, f"expected expression text, got {value!r}")
    try:
        ast = exprlang.bind_constants(exprlang.parse(value, params=constants), constants)
    except exprlang.ExprError as exc:
        raise SpecError(key, str(exc)) from None
    if t_only and exprlang.depends_on(ast, "x"):
        raise SpecError(key, "must be a function of t only")
    return ast


def parse_spec(doc) -> ProblemSpec:
    """Validate a decoded JSON document and build a :class:`ProblemSpec`."""
    if not isinstance(doc, dict):
        raise SpecError("<root>", "spec must be a JSON object")
    for k in doc:
        if k not in SPEC_KEYS:
            raise SpecError(k, f"unknown key (allowed: {', '.join(SPEC_KEYS)})")
    for k in ("grid", "q"):
        if k not in doc:
            raise SpecError(k, "missing required key")

    constants = {}
    if "constants" in doc:
        for name, value in _block(doc, "constants", doc["constants"]).items():
            key = f"constants.{name}"
            if not isinstance(name, str) or not name.isidentifier():
                raise SpecError(key, "constant names must be identifiers")
            if name in exprlang.VARIABLES + exprlang.NAMED_CONSTANTS + exprlang.FUNCTIONS:
                raise SpecError(key, f"{name!r} is a built-in name")
            constants[name] = _number(value, key)

    g = _block(doc, "grid", GRID_KEYS, required=("x0", "x1", "Nx"))
    x0, x1 = _number(g["x0"], "grid.x0"), _number(g["x1"], "grid.x1")
    nx = _count(g["Nx"], "grid.Nx")
    t0 = _number(g.get("t0", 0.0), "grid.t0")
    t1 = _number(g.get("t1", t0), "grid.t1")
    nt = _count(g.get("Nt", 1), "grid.Nt")
    try:
        grid = SpaceTimeGrid(x0, x1, nx, t0, t1, nt)
    except GridError as exc:
        raise SpecError("grid", str(exc)) from None

    params = PhysParams()
    if "physics" in doc:
        ph = _block(doc, "physics", PHYSICS_KEYS)
        params = PhysParams(
            hbar=_number(ph.get("hbar", 1.0), "physics.hbar", positive=True),
            m=_number(ph.get("m", 1.0), "physics.m", positive=True),
        )

    mode = doc.get("mode", "reconstruct")
    if mode not in ("reconstruct", "given"):
        raise SpecError("mode", f"must be 'reconstruct' or 'given', got {mode!r}")
    if mode == "given" and "v" not in doc:
        raise SpecError("v", "required when mode is 'given'")
    if mode == "reconstruct" and "v" in doc:
        raise SpecError("v", "only allowed when mode is 'given'")

    bc = None
    if "bc" in doc:
        b = _block(doc, "bc", BC_KEYS, required=BC_KEYS)
        bc = tuple(_expression(b[k], f"bc.{k}", constants, t_only=True) for k in BC_KEYS)

    tol = _block(doc, "tolerances", TOLERANCE_KEYS) if "tolerances" in doc else {}
    r_floor = _number(tol["r_floor"], "tolerances.r_floor", positive=True) if "r_floor" in tol else None
    sigma_tol = (_number(tol["sigma_tol"], "tolerances.sigma_tol", positive=True)
                 if "sigma_tol" in tol else None)

    return ProblemSpec(
        grid=grid, params=params,
        q=_expression(doc["q"], "q", constants),
        mode=mode,
        v=_expression(doc["v"], "v", constants) if "v" in doc else None,
        f=_expression(doc["f"], "f", constants, t_only=True) if "f" in doc else None,
        g=_expression(doc["g"], "g", constants) if "g" in doc else None,
        bc=bc, constants=constants, r_floor=r_floor, sigma_tol=sigma_tol,
    )


def load_spec(path: str) -> ProblemSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SpecError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SpecError("<file>", f"invalid JSON at line {exc.lineno} column {exc.colno}") from None
    return parse_spec(doc)


# -- output helpers ----------------------------------------------------------

def write_atomic(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _err(msg: str):
    print(f"qpot: {msg}", file=sys.stderr)


def _threads() -> int | None:
    raw = os.environ.get("QPOT_THREADS")
    return int(raw) if raw and raw.strip().isdigit() and int(raw) > 0 else None


# -- commands ----------------------------------------------------------------

def cmd_invert(spec_path: str, out_dir: str, plots: bool = True) -> int:
    try:
        spec = load_spec(spec_path)
        if spec.bc is None:
            raise SpecError("bc", "required by invert")
        if spec.grid.nt < 3:
            raise SpecError("grid.Nt", "invert needs at least 3 time slices")
        config = spec.pipeline_config(_threads())
    except SpecError as exc:
        _err(f"spec error: {exc}")
        return EXIT_INPUT

    try:
        result = run_pipeline(spec.q, config, spec.grid, bc=spec.bc)
    except SliceSolveError as exc:
        _err(str(exc))
        return EXIT_SINGULAR if exc.singular else EXIT_FAIL
    except exprlang.EvalError as exc:
        _err(f"spec error: expression evaluation failed: {exc}")
        return EXIT_INPUT
    except (PipelineError, GridError) as exc:
        _err(str(exc))
        return EXIT_FAIL

    os.makedirs(out_dir, exist_ok=True)
    write_atomic(os.path.join(out_dir, "report.json"), result.report_json())
    for name in ("R", "p", "S", "V"):
        write_atomic(os.path.join(out_dir, f"{name}.csv"), field_to_csv(getattr(result, name)))
    if result.psi is not None:
        write_atomic(os.path.join(out_dir, "psi.csv"), field_to_csv(result.psi))
    else:
        _err("warning: more than half the nodes are masked; psi.csv not written")
    if plots:
        from qpot.plotting import plot_pipeline

        plot_pipeline(result, out_dir)
    return EXIT_OK


def cmd_eigs(spec_path: str, n: int, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        spec = load_spec(spec_path)
        if n < 1:
            raise SpecError("-n", "must be at least 1")
        grid = spec.grid
        Q = exprlang.eval_field(spec.q, grid, spec.params)
    except SpecError as exc:
        _err(f"spec error: {exc}")
        return EXIT_INPUT
    except exprlang.EvalError as exc:
        _err(f"spec error: q: {exc}")
        return EXIT_INPUT
    beta = spec.params.beta
    for j, t in enumerate(grid.t):
        q = Q.slice(j)
        eigs = sigma_spectrum(q, beta, min(n, grid.nx - 2), h=grid.h)
        _, _, zero_in = nearest_sigma(q, beta, grid.h, sigma_tol=spec.sigma_tol)
        line = {"slice": j, "t": float(t), "eigenvalues": [float(e) for e in eigs],
                "zero_in_sigma": bool(zero_in)}
        stream.write(json.dumps(line) + "\n")
    return EXIT_OK


def _parse_override(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ValueError(f"override must look like KEY=VALUE, got {text!r}")
    try:
        number = float(value)
    except ValueError:
        raise ValueError(f"override {key}: {value!r} is not a number") from None
    return key.strip(), (int(number) if number.is_integer() and "." not in value
                         and "e" not in value.lower() else number)


def cmd_case(name: str, overrides=(), stream=None) -> int:
    from qpot.golden import UnknownCaseError, format_table, golden_case, verify_case

    stream = stream or sys.stdout
    try:
        bindings = dict(_parse_override(o) for o in overrides)
        case = golden_case(name, bindings)
    except (UnknownCaseError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        _err(str(msg))
        return EXIT_INPUT
    try:
        rows = verify_case(case)
    except SliceSolveError as exc:
        _err(str(exc))
        return EXIT_SINGULAR if exc.singular else EXIT_FAIL
    except (PipelineError, GridError) as exc:
        _err(str(exc))
        return EXIT_FAIL
    stream.write(format_table(name, rows) + "\n")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL


def cmd_plot(csv_path: str, out_svg: str) -> int:
    from qpot.plotting import plot_field

    try:
        f = read_field_csv(csv_path)
    except OSError as exc:
        _err(f"cannot read {csv_path}: {exc.strerror}")
        return EXIT_INPUT
    except (GridError, ValueError) as exc:
        _err(f"invalid field CSV {csv_path}: {exc}")
        return EXIT_INPUT
    label = os.path.splitext(os.path.basename(csv_path))[0]
    plot_field(f, out_svg, title=label, label=label)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qpot", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("invert", help="solve for R and build p, V, S, psi from a problem spec")
    p.add_argument("spec")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-plots", action="store_true", help="skip the SVG figures")

    p = sub.add_parser("eigs", help="print the lowest eigenvalues of each slice operator")
    p.add_argument("spec")
    p.add_argument("-n", type=int, default=3)

    p = sub.add_parser("case", help="run a golden case and print its check table")
    p.add_argument("name")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("plot", help="render a field CSV to SVG")
    p.add_argument("csv")
    p.add_argument("svg")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "invert":
        return cmd_invert(args.spec, args.out, plots=not args.no_plots)
    if args.command == "eigs":
        try:
            return cmd_eigs(args.spec, args.n)
        except BrokenPipeError:
            # reader went away (e.g. piped into head); silence the flush at exit
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
            return EXIT_OK
    if args.command == "case":
        return cmd_case(args.name, args.overrides)
    return cmd_plot(args.csv, args.svg)


if __name__ == "__main__":
    sys.exit(main())
