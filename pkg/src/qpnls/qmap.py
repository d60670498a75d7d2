"""Frequency equations on the resonant sites.

With the amplitudes on the resonant sites pinned to (a1, a2) the two
equations read

    omega_k = (h_k . lambda + m)^2 + M + delta^{2p} N_k / a_k,
    N_k = [(u*v)^{*p} * u](-e_k, h_k),

and, for a frozen state, they can be inverted for (m, M) in closed form
whenever (h1 - h2) . lambda != 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .divisors import ParamPoint, log_delta
from .errors import DegenerateLambda, SingularQPrime, ZeroAmplitude
from .lattice import SectorField, nonlinear_term, seed_field

FD_STEP = 1e-6
QPRIME_FLOOR = 1e-12


def _site(k: int, h) -> tuple:
    e = (-1, 0) if k == 0 else (0, -1)
    return e + tuple(h)


def nonlinear_at_seeds(state: SectorField, p: int, hs) -> np.ndarray:
    """N_k = [(u*v)^{*p} * u](-e_k, h_k) for k = 1, 2."""
    nl = nonlinear_term(state.plus, state.minus, p)
    return np.array([nl[_site(k, h)] for k, h in enumerate(hs)])


def corrections(state: SectorField, pt: ParamPoint, modes=(0, 1)) -> np.ndarray:
    """delta^{2p} N_k / a_k; entries for modes not requested are nan."""
    amps = pt.amplitudes
    for k in modes:
        if amps[k] == 0:
            raise ZeroAmplitude(f"amplitude a{k + 1} vanishes; omega{k + 1} is undetermined")
    out = np.full(2, np.nan)
    if pt.delta2p == 0.0:
        out[list(modes)] = 0.0
        return out
    nk = nonlinear_at_seeds(state, pt.p, pt.hs)
    for k in modes:
        out[k] = pt.delta2p * nk[k] / amps[k]
    return out


def omega_linear(lam, m: float, M: float, hs) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    return np.array([(np.dot(h, lam) + m) ** 2 + M for h in hs])


def omega_update(state: SectorField, pt: ParamPoint, modes=(0, 1)) -> np.ndarray:
    """Time frequencies solving the two resonant-site equations for ``state``.

    Raises ZeroAmplitude if a requested mode has a_k = 0; unrequested modes
    get their linear value.
    """
    corr = corrections(state, pt, modes)
    base = omega_linear(pt.lam, pt.m, pt.M, pt.hs)
    return np.where(np.isnan(corr), base, base + np.nan_to_num(corr))


def lambda_floor(delta: float, h1, h2, rho: float = 3.5) -> float:
    """Lower bound |log delta|^{-1} |h1 - h2|^{-rho} on |(h1 - h2).lambda|.

    |h1 - h2| is the Euclidean length.  Zero at delta = 0.
    """
    dh = float(np.hypot(h1[0] - h2[0], h1[1] - h2[1]))
    return dh ** (-rho) / log_delta(delta)


def invert_frozen(lam, omega, hs, corr) -> tuple[float, float]:
    """(m, M) with (h_k.lam + m)^2 + M + corr_k = omega_k for k = 1, 2."""
    lam = np.asarray(lam, dtype=float)
    big = np.asarray(omega, dtype=float) - np.asarray(corr, dtype=float)
    s1, s2 = (float(np.dot(h, lam)) for h in hs)
    gap = s1 - s2
    m = (big[0] - big[1]) / (2.0 * gap) - 0.5 * (s1 + s2)
    M = big[0] - (s1 + m) ** 2
    return float(m), float(M)


def _fixed(pt: ParamPoint, lam) -> ParamPoint:
    lam = np.asarray(lam, dtype=float)
    return pt.with_params(lambda1=float(lam[0]), lambda2=float(lam[1]))


def inverse_seed(lam, omega, pt: ParamPoint, *, floor: float | None = None) -> tuple[float, float]:
    """Closed-form (m, M) from (lambda, omega) with the seed as the state.

    Only the fixed data of ``pt`` (h, a, delta, p) is used.
    """
    lam = np.asarray(lam, dtype=float)
    gap = float(np.dot(np.subtract(pt.h1, pt.h2), lam))
    if floor is None:
        floor = lambda_floor(pt.delta, pt.h1, pt.h2, pt.rho)
    if gap == 0.0 or abs(gap) < floor:
        raise DegenerateLambda(f"|(h1 - h2).lambda| = {abs(gap):.3e} is below the floor {floor:.3e}")
    seed = SectorField.from_plus(seed_field(pt.h1, pt.h2, pt.a1, pt.a2))
    corr = np.nan_to_num(corrections(seed, pt, _live_modes(pt)))
    return invert_frozen(lam, omega, pt.hs, corr)


def _live_modes(pt: ParamPoint) -> tuple:
    return tuple(k for k in (0, 1) if pt.amplitudes[k] != 0)


@dataclass
class RefineResult:
    m: float
    M: float
    q_residual: float
    iterations: int = 0
    history: list = field(default_factory=list)


def q_residual(lam, omega, m: float, M: float, hs, corr) -> np.ndarray:
    """omega_k - [(h_k.lam + m)^2 + M + corr_k]."""
    return np.asarray(omega, dtype=float) - omega_linear(lam, m, M, hs) - np.asarray(corr, dtype=float)


def inverse_refine(
    lam,
    omega,
    stage: int,
    states: Sequence[SectorField] | Callable[[int], SectorField],
    pt: ParamPoint,
    *,
    tol: float = 1e-14,
    max_iter: int = 20,
    floor: float = QPRIME_FLOOR,
    start: tuple[float, float] | None = None,
) -> RefineResult:
    """Newton iteration for (m, M) on the frequency equations at stage r.

    The state u^(r) is held fixed, so the 2x2 linearization only carries the
    explicit (m, M) dependence.  ``states`` is a sequence or a callable
    returning u^(i).  ``history`` lists max |Q| before each update and after
    the last one.
    """
    m0, M0 = inverse_seed(lam, omega, pt) if start is None else start
    if stage == 0:
        return RefineResult(m0, M0, 0.0)
    state = states(stage) if callable(states) else states[stage]
    corr = np.nan_to_num(corrections(state, _fixed(pt, lam), _live_modes(pt)))
    lam = np.asarray(lam, dtype=float)
    s = np.array([np.dot(h, lam) for h in pt.hs])
    m, M = m0, M0
    history = []
    for it in range(max_iter + 1):
        q = q_residual(lam, omega, m, M, pt.hs, corr)
        res = float(np.abs(q).max())
        history.append(res)
        if res <= tol or it == max_iter:
            break
        jac = -np.column_stack([2.0 * (s + m), np.ones(2)])
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        if abs(det) < floor:
            raise SingularQPrime(f"det Q' = {det:.3e} below {floor:.1e}")
        dm, dM = np.linalg.solve(jac, q)
        m, M = m - dm, M - dM
    return RefineResult(float(m), float(M), res, it, history)


@dataclass
class FrequencyMapEval:
    omega: np.ndarray
    jacobian: np.ndarray
    det: float

    def det_consistent(self, rtol: float = 1e-12) -> bool:
        return abs(np.linalg.det(self.jacobian) - self.det) <= rtol * max(1.0, abs(self.det))


def _forward(x, hs, corr) -> np.ndarray:
    """(lambda1, lambda2, m, M) -> (lambda1, lambda2, omega1, omega2) with frozen corrections."""
    return np.concatenate([x[:2], omega_linear(x[:2], x[2], x[3], hs) + corr])


def _inverse(y, hs, corr) -> np.ndarray:
    m, M = invert_frozen(y[:2], y[2:], hs, corr)
    return np.array([y[0], y[1], m, M])


def _central_diff(f, x, step) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2.0 * h))
    return np.column_stack(cols)


def jacobian(pt: ParamPoint, state: SectorField, *, step: float = FD_STEP) -> FrequencyMapEval:
    """d(lambda, omega)/d(lambda, m, M) by central differences, state frozen."""
    corr = np.nan_to_num(corrections(state, pt, _live_modes(pt)))
    x = np.array([pt.lambda1, pt.lambda2, pt.m, pt.M])
    jac = _central_diff(lambda z: _forward(z, pt.hs, corr), x, step)
    jac[:2] = np.eye(4)[:2]
    omega = _forward(x, pt.hs, corr)[2:]
    return FrequencyMapEval(omega, jac, float(np.linalg.det(jac)))


def analytic_jacobian(pt: ParamPoint) -> np.ndarray:
    """Closed-form Jacobian with the nonlinear term frozen."""
    jac = np.zeros((4, 4))
    jac[0, 0] = jac[1, 1] = 1.0
    for k, h in enumerate(pt.hs):
        w = 2.0 * (np.dot(h, pt.lam) + pt.m)
        jac[2 + k, :2] = w * np.asarray(h, dtype=float)
        jac[2 + k, 2] = w
        jac[2 + k, 3] = 1.0
    return jac


def inverse_jacobian(pt: ParamPoint, state: SectorField, *, step: float = FD_STEP) -> np.ndarray:
    """d(lambda, m, M)/d(lambda, omega) by central differences of the frozen inverse."""
    corr = np.nan_to_num(corrections(state, pt, _live_modes(pt)))
    x = np.array([pt.lambda1, pt.lambda2, pt.m, pt.M])
    y = _forward(x, pt.hs, corr)
    return _central_diff(lambda z: _inverse(z, pt.hs, corr), y, step)


def roundtrip_defect(pt: ParamPoint, state: SectorField, stage: int = 1) -> float:
    """max |(m, M) recovered from omega(state) - (m, M)|."""
    omega = omega_update(state, pt, _live_modes(pt))
    res = inverse_refine(pt.lam, omega, stage, lambda _r: state, pt)
    return float(max(abs(res.m - pt.m), abs(res.M - pt.M)))
