import math

import numpy as np
import pytest
from numpy.polynomial import hermite as nph

from qpot.fieldgrid import ddt, ddx, linf
from qpot.golden import (
    CASE_NAMES,
    UnknownCaseError,
    format_table,
    golden_case,
    hermite,
    outer_zero_crossings,
    verify_case,
)


def assert_all_pass(name, rows):
    failed = [r for r in rows if not r.passed]
    assert not failed, format_table(name, rows)


@pytest.mark.parametrize("name", ["linear_a0", "linear_b0", "plane_wave", "cos_superposition"])
def test_case_tables_pass(name):
    assert_all_pass(name, verify_case(golden_case(name)))


def test_oscillator_second_excited_state_passes():
    rows = verify_case(golden_case("oscillator_n", {"n": 2}))
    assert_all_pass("oscillator_n", rows)
    assert rows[0].label.startswith("Q_rec") and rows[0].error <= 1e-3


def test_linear_a0_row_values():
    rows = {r.label: r for r in verify_case(golden_case("linear_a0"))}
    assert "dV = -4mxc^2" in rows
    assert rows["dV = -4mxc^2"].error <= 1e-3
    assert rows["p vs closed form"].error <= 1e-4


def test_cos_case_carries_cross_check():
    labels = [r.label for r in verify_case(golden_case("cos_superposition"))]
    assert "plane wave SE residual (same SE)" in labels
    assert "Q gap cos vs plane = hbar^2 k^2/2m" in labels


# -- closed forms ------------------------------------------------------------------

def test_documented_expected_values():
    a0 = golden_case("linear_a0", {"c": 0.5, "m": 1.0})
    assert np.allclose(a0.fields["dV"].values, -a0.grid.x[None, :], atol=1e-15)
    pw = golden_case("plane_wave", {"k": 1.0, "m": 1.0, "hbar": 1.0})
    assert pw.expected == {"Q": 0.0, "S_t": -0.5}
    cs = golden_case("cos_superposition", {"k": 1.0})
    assert cs.expected["Q"] == 0.5


@pytest.mark.parametrize("name", ["linear_a0", "linear_b0"])
def test_linear_closed_forms_are_consistent(name):
    case = golden_case(name, {"Nx": 41, "Nt": 41})
    f, m = case.fields, case.params.m
    # quadratic-in-x fields: stencils are exact, so identities hold to rounding
    assert linf(ddx(f["S"]) - f["p"]) <= 1e-12
    assert linf(ddx(f["V"]) - f["dV"]) <= 1e-12
    newton = ddt(f["p"]) + f["p"] * ddx(f["p"]) / m + f["dV"]
    assert linf(newton) <= 1e-12


def test_oscillator_closed_forms_are_consistent():
    for n in range(4):
        case = golden_case("oscillator_n", {"n": n, "Nx": 401, "Nt": 5})
        f = case.fields
        energy = case.expected["energy"]
        assert energy == pytest.approx(n + 0.5)
        assert linf(f["Q"] + f["V"] - energy) <= 1e-12
        assert linf(f["R"]) == pytest.approx(1.0, abs=1e-3)


def test_hermite_matches_reference():
    y = np.linspace(-3, 3, 41)
    for n in range(11):
        ref = nph.hermval(y, [0] * n + [1])
        assert np.allclose(hermite(n, y), ref, rtol=1e-13, atol=1e-9)


def test_guards():
    with pytest.raises(ValueError):
        golden_case("oscillator_n", {"n": 11})
    with pytest.raises(ValueError):
        golden_case("oscillator_n", {"n": 1.5})
    with pytest.raises(UnknownCaseError):
        golden_case("hydrogen")
    with pytest.raises(KeyError):
        golden_case("plane_wave", {"omega": 2.0})
    assert set(CASE_NAMES) == {"linear_a0", "linear_b0", "plane_wave", "cos_superposition", "oscillator_n"}


def test_outer_zero_crossings():
    x = np.linspace(-3, 3, 601)
    q = 2.0 - x**2
    zl, zr = outer_zero_crossings(x, q, np.ones_like(x, bool))
    assert zl == pytest.approx(-math.sqrt(2), abs=1e-4)
    assert zr == pytest.approx(math.sqrt(2), abs=1e-4)


def test_format_table():
    rows = verify_case(golden_case("plane_wave", {"Nx": 51, "Nt": 51}))
    text = format_table("plane_wave", rows)
    assert text.splitlines()[0] == "case plane_wave"
    assert all(line.endswith(("PASS", "FAIL")) for line in text.splitlines()[2:])
