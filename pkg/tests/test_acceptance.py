"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from oracles import nonlinear_dict, reflect_dict, seed_dict
from strategies import fields, points
from qpnls.divisors import ParamPoint, cross, divisor, enumerate_zero_divisors
from qpnls.lattice import CoeffField, SectorField, convolve, reflect_conjugate, resonant_sites, seed_field, support_radius
from qpnls.linearized import assemble, green_decay, schur_effective
from qpnls.newton import NewtonConfig, newton_step, run
from qpnls.qmap import analytic_jacobian, inverse_seed, jacobian, omega_update
from qpnls.sweep import sample_points, scan
from qpnls.verify import SolutionPackage, pde_residual, uniform_grid

DELTA = 0.01
FULL = [(0.1, 2 * math.pi - 0.1)] * 4


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} ({title}): {detail}")


def seed_of(pt):
    return SectorField.from_plus(seed_field(pt.h1, pt.h2, pt.a1, pt.a2))


# -- 1 ---------------------------------------------------------------------------------

def test_criterion_01_frequency_closed_form(capsys):
    t0 = time.perf_counter()
    worst_closed, worst_oracle = 0.0, 0.0
    cases = itertools.product([((1, 0), (0, 1)), ((2, -1), (1, 3))], [(1.0, 1.0), (0.6, 1.7), (1.9, 0.2)], [0.01, 0.1])
    for (h1, h2), (a1, a2), delta in cases:
        pt = ParamPoint(1.3, 2.9, 0.7, 1.1, h1=h1, h2=h2, a1=a1, a2=a2, delta=delta)
        om = omega_update(seed_of(pt), pt)
        u = seed_dict(h1, h2, a1, a2)
        nl = nonlinear_dict(u, reflect_dict(u), 1)
        s = [np.dot(h, pt.lam) for h in (h1, h2)]
        closed = [(s[0] + pt.m) ** 2 + pt.M + delta**2 * (a1**2 + 2 * a2**2),
                  (s[1] + pt.m) ** 2 + pt.M + delta**2 * (a2**2 + 2 * a1**2)]
        oracle = [(s[0] + pt.m) ** 2 + pt.M + delta**2 * nl[(-1, 0) + h1] / a1,
                  (s[1] + pt.m) ** 2 + pt.M + delta**2 * nl[(0, -1) + h2] / a2]
        worst_closed = max(worst_closed, np.max(np.abs(om - closed) / np.abs(closed)))
        worst_oracle = max(worst_oracle, np.max(np.abs(om - oracle) / np.abs(oracle)))
    elapsed = time.perf_counter() - t0
    ok = worst_closed <= 1e-12 and worst_oracle <= 1e-12 and elapsed < 1.0
    verdict(capsys, 1, "frequency closed form", ok,
            f"max rel err {worst_closed:.1e} vs closed form, {worst_oracle:.1e} vs oracle; {elapsed:.2f}s")
    assert ok


# -- 2 ---------------------------------------------------------------------------------

def test_criterion_02_identically_zero_divisors(capsys):
    t0 = time.perf_counter()
    vecs = [v for v in itertools.product(range(-3, 4), repeat=2) if v != (0, 0)]
    wrong, parallel_extra, parallel_pairs = [], 0, 0
    for h1, h2 in itertools.product(vecs, vecs):
        zeros = set(enumerate_zero_divisors(h1, h2, 6))
        seeds = set(resonant_sites(h1, h2))
        if cross(h1, h2) != 0:
            if zeros != seeds:
                wrong.append((h1, h2))
        else:
            parallel_pairs += 1
            parallel_extra += bool(zeros - seeds)
    elapsed = time.perf_counter() - t0
    ok = not wrong and parallel_extra >= 3 and elapsed < 30.0
    verdict(capsys, 2, "identically zero divisors", ok,
            f"{len(wrong)} non-parallel pairs off the seed set; {parallel_extra}/{parallel_pairs} parallel pairs "
            f"with extra zeros; {elapsed:.1f}s")
    assert ok


# -- 3 ---------------------------------------------------------------------------------

def test_criterion_03_inverse_roundtrip(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    errs = []
    while len(errs) < 1000:
        l1, l2, m, M = rng.uniform(0.1, 2 * math.pi - 0.1, 4)
        if abs(l1 - l2) <= 0.1:
            continue
        pt = ParamPoint(l1, l2, m, M, delta=DELTA)
        mm, MM = inverse_seed(pt.lam, omega_update(seed_of(pt), pt), pt)
        errs.append(max(abs(mm - m), abs(MM - M)))
    errs = np.array(errs)
    worked = inverse_seed((1.0, 2.0), (3.25, 7.25), ParamPoint(1.0, 2.0, 0.5, 1.0, delta=0.0))
    elapsed = time.perf_counter() - t0
    ok = errs.max() <= 1e-12 and worked == (0.5, 1.0) and elapsed < 5.0
    verdict(capsys, 3, "inverse roundtrip", ok,
            f"max err {errs.max():.2e}, {np.sum(errs > 1e-12)}/1000 above 1e-12, median {np.median(errs):.1e}; "
            f"worked instance {worked}; {elapsed:.2f}s")
    assert ok


# -- 4, 5, 6 -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def contraction_runs():
    t0 = time.perf_counter()
    pts = sample_points(FULL, 100, 0)
    runs = []
    for params in pts:
        pt = ParamPoint(*params, delta=DELTA)
        try:
            state, trace = run(NewtonConfig(A=2, max_stage=4, keep_states=True), pt)
        except Exception as exc:  # recorded as a failed sample
            runs.append((pt, None, exc))
            continue
        runs.append((pt, trace, None))
    return runs, time.perf_counter() - t0


def _rate_ok(trace):
    ratios = trace.rate_ratios()
    return bool(np.all(ratios[np.isfinite(ratios) | np.isinf(ratios)] >= 4.0 / 3.0)) and not np.any(np.isnan(ratios))


def test_criterion_04_newton_contraction(capsys, contraction_runs):
    runs, elapsed = contraction_runs
    good = [t for _, t, e in runs if t is not None and t.converged and t.final.residual <= 1e-12 and _rate_ok(t)]
    ratios = np.concatenate([t.rate_ratios() for _, t, _ in runs if t is not None])
    ok = len(good) >= 90 and elapsed < 600
    verdict(capsys, 4, "Newton contraction", ok,
            f"{len(good)}/100 converge to <=1e-12 with log ratios >= 4/3 "
            f"(ratio range {np.nanmin(ratios):.2f}..{np.nanmax(ratios[np.isfinite(ratios)]):.2f}); {elapsed:.1f}s")
    assert ok


def test_criterion_05_pde_residual(capsys, contraction_runs):
    runs, _ = contraction_runs
    grid = uniform_grid(100, 100.0, 100.0)
    worst, nonmono, slowest, count = 0.0, 0, 0.0, 0
    for pt, trace, _ in runs:
        if trace is None or not trace.converged:
            continue
        t0 = time.perf_counter()
        res = []
        for state in trace.states:
            sol = SolutionPackage(state, omega_update(state, pt), pt)
            res.append(pde_residual(sol, grid))
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, res[-1])
        nonmono += any(b >= a for a, b in zip(res, res[1:]))
        count += 1
    ok = count > 0 and worst <= 1e-8 and nonmono == 0 and slowest < 60
    verdict(capsys, 5, "PDE residual", ok,
            f"{count} solutions, worst final residual {worst:.2e}, {nonmono} non-monotone; slowest {slowest:.1f}s")
    assert ok


def test_criterion_06_green_decay(capsys, contraction_runs):
    from qpnls.divisors import excision_scan

    runs, _ = contraction_runs
    t0 = time.perf_counter()
    bound = DELTA ** -(1 + 2)
    rows = []
    for pt, trace, _ in runs:
        if trace is None or not trace.converged:
            continue
        ptq = pt.with_omega((trace.final.omega1, trace.final.omega2))
        g = green_decay(assemble(2, ptq, trace.states[-1]))
        passes = g.beta > 0 and g.fit_residual < 0.2 and g.opnorm_inv <= bound
        good_set = excision_scan(pt.with_omega(omega_update(seed_of(pt), pt)), 1).passed
        rows.append((good_set, passes, g))
    chosen = [r for r in rows if r[0]][:20]
    elapsed = time.perf_counter() - t0
    all_pass = sum(r[1] for r in rows)
    ok = len(chosen) == 20 and all(r[1] for r in chosen) and elapsed < 300
    g = [r[2] for r in chosen]
    verdict(capsys, 6, "Green's function decay", ok,
            f"{sum(r[1] for r in chosen)}/{len(chosen)} stage-1 good-set points pass "
            f"(beta {min(x.beta for x in g):.2f}..{max(x.beta for x in g):.2f}, "
            f"fit residual <= {max(x.fit_residual for x in g):.3f}, |T^-1| <= {max(x.opnorm_inv for x in g):.0f}); "
            f"all converged points: {all_pass}/{len(rows)}; {elapsed:.1f}s")
    assert ok


# -- 7 ---------------------------------------------------------------------------------

def test_criterion_07_jacobian(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    dets = []
    for params in rng.uniform(0.1, 2 * math.pi - 0.1, size=(100, 4)):
        pt = ParamPoint(*params, delta=DELTA)
        ev = jacobian(pt, seed_of(pt))
        dets.append(abs(ev.det - 2 * pt.lambda_gap))
    fd = []
    for params in rng.uniform(0.1, 2 * math.pi - 0.1, size=(20, 4)):
        pt = ParamPoint(*params, delta=0.0)
        fd.append(np.abs(jacobian(pt, seed_of(pt)).jacobian - analytic_jacobian(pt)).max())
    elapsed = time.perf_counter() - t0
    ok = max(dets) <= 10 * DELTA**2 and max(fd) <= 1e-6 and elapsed < 60
    verdict(capsys, 7, "Jacobian", ok,
            f"max |det - 2(h1-h2).lambda| {max(dets):.1e} (bound {10 * DELTA**2:.0e}); "
            f"max FD vs analytic {max(fd):.1e}; {elapsed:.1f}s")
    assert ok


# -- 8 ---------------------------------------------------------------------------------

def _random_state(rng):
    u = seed_field((1, 0), (0, 1), 1.0, 1.0)
    keys = rng.integers(-1, 2, size=(4, 4))
    extra = CoeffField(keys=keys, values=0.3 * rng.normal(size=4)).drop(k for _, k in resonant_sites((1, 0), (0, 1)))
    return SectorField.from_plus(u + extra)


def test_criterion_08_schur(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst, exact = 0.0, True
    for _ in range(20):
        params = rng.uniform(0.1, 2 * math.pi - 0.1, 4)
        pt = ParamPoint(*params, delta=float(rng.uniform(0.05, 0.5)))
        pt = pt.with_omega(pt.omega0)
        op = assemble(1, pt, _random_state(rng))
        T = op.to_dense()
        plus = op.sites[:, 0] == 0
        s_t, l_t = np.linalg.slogdet(T)
        s_p, l_p = np.linalg.slogdet(T[np.ix_(plus, plus)])
        s_s, l_s = np.linalg.slogdet(schur_effective(op))
        rel = abs(math.expm1(l_p + l_s - l_t)) if s_t == s_p * s_s else math.inf
        worst = max(worst, rel)
        kern = dict(op.kernels)
        kern[("+", "-")] = kern[("-", "+")] = CoeffField()
        op0 = op.with_kernels(kern)
        minus = op0.sites[:, 0] == 1
        exact &= bool(np.array_equal(schur_effective(op0), op0.to_dense()[np.ix_(minus, minus)]))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and exact and elapsed < 60
    verdict(capsys, 8, "Schur consistency", ok,
            f"max relative determinant mismatch {worst:.1e}; block-diagonal exact: {exact}; {elapsed:.1f}s")
    assert ok


# -- 9 ---------------------------------------------------------------------------------

def test_criterion_09_excision_accounting(capsys):
    t0 = time.perf_counter()
    cfg = NewtonConfig()
    rep = scan(FULL, 1000, 0, cfg, stages=3)
    again = scan(FULL, 1000, 0, cfg, stages=3)
    elapsed = time.perf_counter() - t0
    sets = rep.survivor_sets()
    nested = all(b <= a for a, b in zip(sets, sets[1:]))
    identical = rep.summary_json() == again.summary_json() and rep.samples_csv() == again.samples_csv()
    ok = nested and identical and rep.good_fraction >= 0.5 and elapsed < 900
    verdict(capsys, 9, "excision accounting", ok,
            f"nested {nested}, byte-identical rerun {identical}, survivors per stage {rep.survivors}, "
            f"good fraction {rep.good_fraction:.3f} (needs >= 0.5), counts {rep.counts}; {elapsed:.1f}s")
    assert ok


# -- 10 --------------------------------------------------------------------------------

class _Tally:
    cases = 0


@settings(max_examples=1000, suppress_health_check=[HealthCheck.too_slow])
@given(fields(), fields(), fields())
def _convolution_laws(a, b, c):
    assert convolve(a, b).allclose(convolve(b, a), rtol=1e-12)
    assert convolve(convolve(a, b), c).allclose(convolve(a, convolve(b, c)), rtol=1e-10)
    _Tally.cases += 1


@settings(max_examples=1000, suppress_health_check=[HealthCheck.too_slow])
@given(points(delta=0.05), st.tuples(*[st.integers(-3, 3)] * 4), st.tuples(*[st.integers(-2, 2)] * 4), st.sampled_from("+-"))
def _divisor_covariance(pt, k, shift, sector):
    theta = float(np.dot(shift[:2], pt.omega))
    phi = float(np.dot(shift[2:], pt.lam))
    moved = tuple(a + b for a, b in zip(k, shift))
    lhs = divisor(k, sector, pt, theta, phi)
    rhs = divisor(moved, sector, pt)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))
    _Tally.cases += 1


@settings(max_examples=1000, suppress_health_check=[HealthCheck.too_slow])
@given(st.tuples(*[st.integers(-1, 1)] * 4), st.floats(0.05, 0.5))
def _operator_covariance(shift, delta):
    pt = ParamPoint(1.37, 2.91, 0.73, 1.13, delta=delta)
    pt = pt.with_omega(pt.omega0)
    state = SectorField.from_plus(seed_field((1, 0), (0, 1), 0.7, 1.1))
    theta = float(np.dot(shift[:2], pt.omega))
    phi = float(np.dot(shift[2:], pt.lam))
    small = assemble(1, pt, state, theta, phi)
    big = assemble(2, pt, state)
    idx = big.index_of(small.sites[:, 0], small.sites[:, 1:] + np.array(shift))
    ok = np.flatnonzero(idx >= 0)
    Ts, Tb = small.to_dense(), big.to_dense()
    assert np.allclose(np.diag(Ts)[ok], np.diag(Tb)[idx[ok]], rtol=1e-11, atol=1e-11)
    off_s = Ts[np.ix_(ok, ok)] - np.diag(np.diag(Ts)[ok])
    off_b = Tb[np.ix_(idx[ok], idx[ok])] - np.diag(np.diag(Tb)[idx[ok]])
    assert np.array_equal(off_s, off_b)
    _Tally.cases += 1


@settings(max_examples=1000, suppress_health_check=[HealthCheck.too_slow])
@given(points(), st.integers(1, 2))
def _step_conjugacy_and_support(pt, N):
    state = SectorField.from_plus(seed_field(pt.h1, pt.h2, pt.a1, pt.a2))
    pt = pt.with_omega(omega_update(state, pt))
    try:
        new, _ = newton_step(state, pt, N)
    except ArithmeticError:
        _Tally.cases += 1
        return
    assert new.is_conjugate()
    assert new.minus == reflect_conjugate(new.plus)
    assert support_radius(new.plus) <= N
    _Tally.cases += 1


def test_criterion_10_invariant_suite(capsys):
    t0 = time.perf_counter()
    failures = []
    counts = {}
    for name, prop in [
        ("convolution laws", _convolution_laws),
        ("divisor covariance", _divisor_covariance),
        ("operator covariance", _operator_covariance),
        ("conjugacy and support growth", _step_conjugacy_and_support),
    ]:
        _Tally.cases = 0
        try:
            prop()
        except Exception as exc:  # report every property before asserting
            failures.append(f"{name}: {type(exc).__name__}")
        counts[name] = _Tally.cases
    elapsed = time.perf_counter() - t0
    ok = not failures and all(c >= 1000 for c in counts.values()) and elapsed < 120
    verdict(capsys, 10, "invariant suite", ok,
            f"cases {counts}; failures {failures or 'none'}; {elapsed:.1f}s")
    assert ok
