import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpnls.divisors import ParamPoint
from qpnls.lattice import CoeffField, SectorField
from qpnls.newton import NewtonConfig, run, seed_state
from qpnls.qmap import omega_update
from qpnls.verify import (
    SolutionPackage,
    conjugate_series_gap,
    evaluate,
    gnuplot_columns,
    linear_part,
    pde_residual,
    shifted_package,
    theorem_report,
    uniform_grid,
)


def package(pt, state, trace=None):
    return SolutionPackage(state, omega_update(state, pt), pt, trace or {})


@pytest.fixture(scope="module")
def solved():
    pt = ParamPoint(0.5, 4.1, 2.2, 3.3, delta=0.01)
    state, trace = run(NewtonConfig(keep_states=True), pt)
    assert trace.converged
    return pt, trace, [package(pt, s) for s in trace.states]


def test_origin_value_is_coefficient_sum(solved):
    _, _, sols = solved
    sol = sols[-1]
    assert evaluate(sol, 0.0, 0.0) == pytest.approx(sol.pt.delta * sol.state.plus.values.sum(), rel=1e-14)


def test_delta_zero_seed_is_linear_solution():
    pt = ParamPoint(1.3, 2.2, 0.7, 1.9, a1=0.6, a2=1.4, delta=0.0)
    sol = package(pt, seed_state(pt))
    t, x = np.meshgrid(np.linspace(0, 5, 7), np.linspace(-3, 3, 5))
    ref = sum(
        a * np.exp(1j * (-w + pt.M) * t) * np.exp(1j * (s + pt.m) * x)
        for a, w, s in zip(pt.amplitudes, pt.omega0, (pt.lambda1, pt.lambda2))
    )
    np.testing.assert_allclose(evaluate(sol, t, x, physical=False), ref, rtol=1e-13, atol=1e-13)
    assert pde_residual(sol, uniform_grid(20), physical=False) <= 1e-12


def test_zero_field_has_zero_residual():
    pt = ParamPoint(1.3, 2.2, 0.7, 1.9, delta=0.05)
    sol = SolutionPackage(SectorField(CoeffField(), CoeffField()), pt.omega0, pt)
    assert pde_residual(sol, uniform_grid(10)) == 0.0
    assert evaluate(sol, 1.0, 2.0) == 0.0


def test_empty_grid_rejected(solved):
    with pytest.raises(ValueError):
        pde_residual(solved[2][-1], np.zeros((0, 2)))


def test_closeness_to_linear_part(solved):
    _, _, sols = solved
    sol = sols[-1]
    g = uniform_grid(50)
    dev = np.abs(evaluate(sol, g[:, 0], g[:, 1]) - linear_part(sol, g[:, 0], g[:, 1])).max()
    assert dev <= 10 * sol.pt.delta ** (sol.pt.p + 1)


def test_converged_residual_and_stage_monotonicity(solved):
    _, _, sols = solved
    grid = uniform_grid(100)
    res = [pde_residual(s, grid) for s in sols]
    assert res[-1] <= 1e-8
    assert all(b < a for a, b in zip(res, res[1:]))


@settings(max_examples=20)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_conjugate_symmetry(t, x):
    pt = ParamPoint(0.5, 4.1, 2.2, 3.3, delta=0.05)
    state, _ = run(NewtonConfig(max_stage=2), pt)
    assert conjugate_series_gap(package(pt, state), t, x) <= 1e-12


@settings(max_examples=20)
@given(st.tuples(*[st.integers(-2, 2)] * 4), st.floats(0, 30), st.floats(0, 30))
def test_series_covariance(shift, t, x):
    pt = ParamPoint(0.5, 4.1, 2.2, 3.3, delta=0.05)
    state, _ = run(NewtonConfig(max_stage=2), pt)
    sol = package(pt, state)
    moved = shifted_package(sol, shift)
    theta = np.dot(shift[:2], sol.omega)
    phi = np.dot(shift[2:], pt.lam)
    lhs = evaluate(moved, t, x)
    rhs = np.exp(-1j * (theta * t + phi * x)) * evaluate(sol, t, x)
    assert abs(lhs - rhs) <= 1e-12


def test_package_json_roundtrip(solved):
    _, trace, sols = solved
    sol = sols[-1]
    sol.trace = trace.to_json()
    obj = json.loads(json.dumps(sol.to_json(seed=3)))
    back = SolutionPackage.from_json(obj)
    assert back.state.plus == sol.state.plus
    np.testing.assert_array_equal(back.omega, sol.omega)
    assert back.check_omega()
    assert obj["seed"] == 3


def test_package_json_malformed():
    with pytest.raises(ValueError):
        SolutionPackage.from_json({"params": {}})


def test_check_omega_detects_mismatch(solved):
    sol = solved[2][-1]
    bad = SolutionPackage(sol.state, sol.omega + 1e-6, sol.pt.with_omega(sol.omega + 1e-6))
    assert not bad.check_omega()


# -- theorem report ------------------------------------------------------------------

def test_report_delta_zero():
    pt = ParamPoint(1.3, 2.2, 0.7, 1.9, delta=0.0)
    rep = theorem_report(package(pt, seed_state(pt)), uniform_grid(20))
    assert rep["omega_modulation_gap"]["gap"] == [0.0, 0.0]
    assert rep["pass"]


def test_report_converged(solved):
    _, _, sols = solved
    rep = theorem_report(sols[-1], uniform_grid(40))
    ratio = rep["omega_modulation_gap"]["ratio_to_seed_form"]
    assert 0.1 <= ratio <= 10
    assert rep["decay"]["alpha"] > 0
    assert rep["pass"]
    json.dumps(rep)


def test_report_seed_only_insufficient_support():
    pt = ParamPoint(1.3, 2.2, 0.7, 1.9, delta=0.01)
    rep = theorem_report(package(pt, seed_state(pt)), uniform_grid(10))
    assert rep["decay"]["status"] == "insufficient support"


def test_gnuplot_columns(solved):
    text = gnuplot_columns(solved[2][-1], uniform_grid(3, 1.0, 1.0))
    lines = text.splitlines()
    assert lines[0] == "# t x re_u im_u abs_residual"
    rows = [ln for ln in lines[1:] if ln]
    assert len(rows) == 9
    assert lines.count("") == 2
    assert all(len(r.split()) == 5 for r in rows)
    float(rows[0].split()[2])
