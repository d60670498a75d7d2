"""Diagonal divisors, their exact integer coefficients, Diophantine margins
and the excision predicate.

Sector conventions.  The plus sector carries u with phases
``exp(i(n.w + M)t) exp(i(j.lam + m)x)``; the minus sector carries
v(k) = u(-k), the coefficients of conj(u), whose phases are
``exp(i(n.w - M)t) exp(i(j.lam - m)x)``.  Their diagonals are

    D+(n, j) =  (n.w + theta) + M + (j.lam + phi + m)**2
    D-(n, j) = -(n.w + theta) + M + (j.lam + phi - m)**2

so D-(-k) = D+(k) at theta = phi = 0 and the resonant sites are
(+, -e_k, h_k) and (-, e_k, -h_k).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
SECTORS = ("+", "-")


def _sign(sector) -> int:
    if sector in ("+", 1, "plus"):
        return 1
    if sector in ("-", -1, "minus"):
        return -1
    raise ValueError(f"unknown sector {sector!r}")


def _vec2(h) -> tuple[int, int]:
    h = tuple(int(c) for c in h)
    if len(h) != 2:
        raise ValueError(f"expected an integer 2-vector, got {h!r}")
    return h


def cross(h1, h2) -> int:
    return h1[0] * h2[1] - h1[1] * h2[0]


@dataclass(frozen=True)
class ParamPoint:
    """A point (lambda1, lambda2, m, M) together with the fixed problem data.

    ``omega`` is left unset until the frequency map has been evaluated.
    """

    lambda1: float
    lambda2: float
    m: float
    M: float
    h1: tuple = (1, 0)
    h2: tuple = (0, 1)
    a1: float = 1.0
    a2: float = 1.0
    delta: float = 0.01
    p: int = 1
    rho: float = 3.5
    omega: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        h1, h2 = _vec2(self.h1), _vec2(self.h2)
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "h2", h2)
        if h1 == (0, 0) or h2 == (0, 0):
            raise ValueError("h1 and h2 must be nonzero")
        if cross(h1, h2) == 0:
            raise ValueError(
                f"h1={h1} and h2={h2} are parallel; the construction requires "
                "non-parallel h1, h2 (h1x*h2y - h1y*h2x != 0)"
            )
        if int(self.p) != self.p or self.p < 1:
            raise ValueError("p must be a positive integer")
        object.__setattr__(self, "p", int(self.p))
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")
        if self.a1 < 0 or self.a2 < 0:
            raise ValueError("amplitudes must be nonnegative")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        for name in ("lambda1", "lambda2", "m", "M"):
            value = float(getattr(self, name))
            if not 0.0 < value <= TWO_PI:
                raise ValueError(f"{name}={value} outside (0, 2pi]")
            object.__setattr__(self, name, value)
        if self.omega is not None:
            object.__setattr__(self, "omega", tuple(float(w) for w in self.omega))

    @property
    def lam(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2])

    @property
    def amplitudes(self) -> tuple[float, float]:
        return (self.a1, self.a2)

    @property
    def hs(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return (self.h1, self.h2)

    @property
    def delta2p(self) -> float:
        return self.delta ** (2 * self.p)

    @property
    def omega0(self) -> np.ndarray:
        """Linear time frequencies (h_k.lam + m)^2 + M."""
        lam = self.lam
        return np.array([(np.dot(h, lam) + self.m) ** 2 + self.M for h in self.hs])

    @property
    def lambda_gap(self) -> float:
        """(h1 - h2).lambda."""
        return float(np.dot(np.subtract(self.h1, self.h2), self.lam))

    def with_omega(self, omega) -> "ParamPoint":
        return replace(self, omega=tuple(float(w) for w in omega))

    def with_params(self, **changes) -> "ParamPoint":
        return replace(self, **changes)

    def require_omega(self) -> np.ndarray:
        if self.omega is None:
            raise ValueError("omega is not set; evaluate the frequency map first")
        return np.asarray(self.omega, dtype=float)


def divisor(k, sector, pt: ParamPoint, theta: float = 0.0, phi: float = 0.0) -> float:
    n = np.asarray(k[:2], dtype=float)
    j = np.asarray(k[2:], dtype=float)
    s = _sign(sector)
    omega = pt.require_omega()
    return float(
        s * (n @ omega + theta) + pt.M + (j @ pt.lam + phi + s * pt.m) ** 2
    )


def divisor_grid(N: int, pt: ParamPoint, theta: float = 0.0, phi: float = 0.0) -> np.ndarray:
    """Divisors of both sectors on [-N, N]^4, shape (2, G, G, G, G), G = 2N+1.

    Axis 0 is the sector (0 = plus, 1 = minus); the remaining axes are
    n1, n2, j1, j2 in increasing order.
    """
    omega = pt.require_omega()
    r = np.arange(-N, N + 1, dtype=float)
    nw = (r[:, None] * omega[0] + r[None, :] * omega[1])[:, :, None, None]
    jl = (r[:, None] * pt.lambda1 + r[None, :] * pt.lambda2)[None, None, :, :]
    out = np.empty((2,) + (r.size,) * 4)
    out[0] = (nw + theta) + pt.M + (jl + phi + pt.m) ** 2
    out[1] = -(nw + theta) + pt.M + (jl + phi - pt.m) ** 2
    return out


@dataclass(frozen=True)
class DivisorPoly:
    """Exact integer coefficients of a divisor at the linear frequencies.

    D = c_l1l1 lam1^2 + c_l2l2 lam2^2 + c_l1l2 lam1 lam2
        + m (c_m_lin . lam) + c_const (m^2 + M)
    """

    c_l1l1: int
    c_l2l2: int
    c_l1l2: int
    c_m_lin: tuple[int, int]
    c_const: int

    def is_zero(self) -> bool:
        return (
            self.c_l1l1 == 0
            and self.c_l2l2 == 0
            and self.c_l1l2 == 0
            and self.c_m_lin == (0, 0)
            and self.c_const == 0
        )

    def evaluate(self, lam, m: float, M: float) -> float:
        l1, l2 = lam
        return (
            self.c_l1l1 * l1 * l1
            + self.c_l2l2 * l2 * l2
            + self.c_l1l2 * l1 * l2
            + m * (self.c_m_lin[0] * l1 + self.c_m_lin[1] * l2)
            + self.c_const * (m * m + M)
        )


def _poly_arrays(n1, n2, j1, j2, s, h1, h2):
    """Coefficient groups as integer arrays (vectorized over sites)."""
    x, y = h1
    xp, yp = h2
    c11 = j1 * j1 + s * (n1 * x * x + n2 * xp * xp)
    c22 = j2 * j2 + s * (n1 * y * y + n2 * yp * yp)
    c12 = 2 * (j1 * j2 + s * (n1 * x * y + n2 * xp * yp))
    cm1 = 2 * (s * (n1 * x + n2 * xp) + s * j1)
    cm2 = 2 * (s * (n1 * y + n2 * yp) + s * j2)
    c0 = s * (n1 + n2) + 1
    return c11, c22, c12, cm1, cm2, c0


def divisor_poly(k, sector, h1, h2) -> DivisorPoly:
    s = _sign(sector)
    n1, n2, j1, j2 = (int(c) for c in k)
    c11, c22, c12, cm1, cm2, c0 = _poly_arrays(n1, n2, j1, j2, s, _vec2(h1), _vec2(h2))
    return DivisorPoly(c11, c22, c12, (cm1, cm2), c0)


def enumerate_zero_divisors(h1, h2, box_radius: int) -> list[tuple[str, tuple[int, int, int, int]]]:
    """All (sector, k) in [-R, R]^4 whose divisor polynomial vanishes identically.

    Exact integer arithmetic over the whole box; output sorted by sector then k.
    """
    h1, h2 = _vec2(h1), _vec2(h2)
    R = int(box_radius)
    if R < 0:
        return []
    r = np.arange(-R, R + 1, dtype=np.int64)
    n1, n2, j1, j2 = (a.ravel() for a in np.meshgrid(r, r, r, r, indexing="ij"))
    found = []
    for sector in SECTORS:
        coeffs = _poly_arrays(n1, n2, j1, j2, _sign(sector), h1, h2)
        zero = np.ones(n1.size, dtype=bool)
        for c in coeffs:
            zero &= c == 0
        for idx in np.flatnonzero(zero):
            found.append((sector, (int(n1[idx]), int(n2[idx]), int(j1[idx]), int(j2[idx]))))
    return found


def torus_distance(x) -> np.ndarray:
    """Distance to 2*pi*Z."""
    x = np.asarray(x, dtype=float)
    return np.abs(x - TWO_PI * np.round(x / TWO_PI))


def _nonzero_vectors(rng: int) -> np.ndarray:
    r = np.arange(-rng, rng + 1)
    j = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    return j[np.any(j != 0, axis=1)]


def _weighted_distances(vec, rng: int, rho: float):
    js = _nonzero_vectors(rng)
    raw = js @ np.asarray(vec, dtype=float)
    weights = np.abs(js).max(axis=1).astype(float) ** rho
    return js, raw, torus_distance(raw) * weights


def diophantine_margin(vec: Sequence[float], rng: int, rho: float = 3.5):
    """min over 0 < |j|_inf <= rng of ||j.vec||_T |j|_inf^rho and its argmin j."""
    if rng < 1:
        raise ValueError("range must be >= 1")
    js, _, weighted = _weighted_distances(vec, rng, rho)
    # ties go to the smallest |j|_inf, then to the half-plane representative of +-j
    size = np.abs(js).max(axis=1)
    canonical = (js[:, 0] > 0) | ((js[:, 0] == 0) & (js[:, 1] > 0))
    idx = int(np.lexsort((~canonical, size, weighted))[0])
    return float(weighted[idx]), tuple(int(c) for c in js[idx])


def diophantine_violations(vec, rng: int, rho: float, bound: float) -> list[tuple[tuple[int, int], float]]:
    """Every j (one of each +-pair) with ||j.vec||_T |j|^rho below ``bound``."""
    js, raw, weighted = _weighted_distances(vec, rng, rho)
    canonical = (js[:, 0] > 0) | ((js[:, 0] == 0) & (js[:, 1] > 0))
    bad = np.flatnonzero((weighted < bound) & canonical)
    return [((int(js[i, 0]), int(js[i, 1])), float(raw[i])) for i in bad]


def log_delta(delta: float) -> float:
    return math.inf if delta == 0 else abs(math.log(delta))


def divisor_threshold(delta: float, p: int) -> float:
    """2 delta^(p/2): clearance required of every non-resonant divisor."""
    return 2.0 * delta ** (p / 2.0)


def diophantine_bounds(delta: float) -> tuple[float, float]:
    """Lower bounds for the lambda and omega margins: 1/|log d|, 1/|log d|^2."""
    L = log_delta(delta)
    return 1.0 / L, 1.0 / L**2


@dataclass
class ExcisionVerdict:
    """Outcome of one excision scan at one stage."""

    passed: bool
    stage: int
    box_radius: int
    min_divisor: float
    min_site: tuple | None
    dioph_margin_lambda: float
    dioph_argmin_lambda: tuple
    dioph_margin_omega: float
    dioph_argmin_omega: tuple
    divisor_violations: list = field(default_factory=list)
    lambda_violations: list = field(default_factory=list)
    omega_violations: list = field(default_factory=list)

    @property
    def reasons(self) -> list[str]:
        out = []
        if self.divisor_violations:
            out.append("divisor")
        if self.lambda_violations:
            out.append("dioph_lambda")
        if self.omega_violations:
            out.append("dioph_omega")
        return out

    @property
    def offending_site(self) -> str:
        """First violation in a compact text form (empty on pass)."""
        if self.divisor_violations:
            sector, k, value = self.divisor_violations[0]
            return f"D{sector}{k}={value:.3e}"
        if self.lambda_violations:
            j, raw = self.lambda_violations[0]
            return f"lambda:j={j};j.lambda={raw!r}"
        if self.omega_violations:
            n, raw = self.omega_violations[0]
            return f"omega:n={n};n.omega={raw!r}"
        return ""


CSV_FIELDS = [
    "lambda1",
    "lambda2",
    "m",
    "M",
    "stage",
    "verdict",
    "min_divisor",
    "dioph_margin_lambda",
    "dioph_margin_omega",
    "offending_site",
    "j_lambda_raw",
    "n_omega_raw",
]


def verdict_row(pt: ParamPoint, v: ExcisionVerdict) -> dict:
    """CSV record; the raw j.lambda and n.omega at the margin minimizers are
    kept so the torus distance can be recomputed under another convention."""
    omega = pt.require_omega()
    return {
        "lambda1": repr(pt.lambda1),
        "lambda2": repr(pt.lambda2),
        "m": repr(pt.m),
        "M": repr(pt.M),
        "stage": v.stage,
        "verdict": "pass" if v.passed else "fail",
        "min_divisor": repr(v.min_divisor),
        "dioph_margin_lambda": repr(v.dioph_margin_lambda),
        "dioph_margin_omega": repr(v.dioph_margin_omega),
        "offending_site": v.offending_site,
        "j_lambda_raw": repr(float(np.dot(v.dioph_argmin_lambda, pt.lam))),
        "n_omega_raw": repr(float(np.dot(v.dioph_argmin_omega, omega))),
    }


def _grid_sites(N: int, flat: np.ndarray) -> list[tuple]:
    G = 2 * N + 1
    sector, rest = np.divmod(flat, G**4)
    coords = np.stack(np.unravel_index(rest, (G,) * 4), axis=1) - N
    return [(SECTORS[s], tuple(int(c) for c in k)) for s, k in zip(sector, coords)]


def resonant_mask(N: int, h1, h2) -> np.ndarray:
    """Boolean mask on the (2, G, G, G, G) grid marking the resonant sites."""
    from .lattice import resonant_sites

    G = 2 * N + 1
    mask = np.zeros((2,) + (G,) * 4, dtype=bool)
    for sector, k in resonant_sites(h1, h2):
        if max(abs(c) for c in k) <= N:
            mask[(SECTORS.index(sector),) + tuple(c + N for c in k)] = True
    return mask


def excision_scan(
    pt: ParamPoint,
    stage: int,
    A: int = 2,
    *,
    threshold: float | None = None,
    lambda_bound: float | None = None,
    omega_bound: float | None = None,
) -> ExcisionVerdict:
    """Check the stage-r good-set conditions at ``pt`` on the box [-A^r, A^r]^4.

    Every non-resonant divisor must exceed ``threshold`` (default 2 delta^(p/2))
    in absolute value, and the Diophantine margins of lambda and omega over
    |j|, |n| <= A^r must reach 1/|log delta| and 1/|log delta|^2.
    """
    if stage < 1:
        raise ValueError("stage must be >= 1")
    N = int(A) ** int(stage)
    if threshold is None:
        threshold = divisor_threshold(pt.delta, pt.p)
    lam_b, om_b = diophantine_bounds(pt.delta)
    lambda_bound = lam_b if lambda_bound is None else lambda_bound
    omega_bound = om_b if omega_bound is None else omega_bound

    D = np.abs(divisor_grid(N, pt))
    D[resonant_mask(N, pt.h1, pt.h2)] = np.inf
    flat = D.ravel()
    imin = int(np.argmin(flat))
    min_div = float(flat[imin])
    bad = np.flatnonzero(flat <= threshold)
    div_viol = [
        (sector, k, float(flat[f]))
        for (sector, k), f in zip(_grid_sites(N, bad), bad)
    ]
    min_site = _grid_sites(N, np.array([imin]))[0] if np.isfinite(min_div) else None

    omega = pt.require_omega()
    mlam, jlam = diophantine_margin(pt.lam, N, pt.rho)
    mom, jom = diophantine_margin(omega, N, pt.rho)
    lam_viol = diophantine_violations(pt.lam, N, pt.rho, lambda_bound) if mlam < lambda_bound else []
    om_viol = diophantine_violations(omega, N, pt.rho, omega_bound) if mom < omega_bound else []

    return ExcisionVerdict(
        passed=not (div_viol or lam_viol or om_viol),
        stage=int(stage),
        box_radius=N,
        min_divisor=min_div,
        min_site=min_site,
        dioph_margin_lambda=mlam,
        dioph_argmin_lambda=jlam,
        dioph_margin_omega=mom,
        dioph_argmin_omega=jom,
        divisor_violations=div_viol,
        lambda_violations=lam_viol,
        omega_violations=om_viol,
    )


def min_divisor(N: int, pt: ParamPoint, theta: float = 0.0, phi: float = 0.0) -> float:
    """Smallest |divisor| over the box minus the resonant sites."""
    D = np.abs(divisor_grid(N, pt, theta, phi))
    D[resonant_mask(N, pt.h1, pt.h2)] = np.inf
    return float(D.min())
