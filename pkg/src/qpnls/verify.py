"""Physical-space reconstruction and checks of the computed solution.

The rescaled series is

    u(t, x) = sum_k a(k) exp(i (n.omega + M) t) exp(i (j.lambda + m) x)

and the physical solution is delta * u.  Derivatives are taken term by term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .divisors import ParamPoint
from .errors import DegenerateFit
from .lattice import CoeffField, SectorField, decay_fit, field_from_json, field_to_json, reflect_conjugate
from .qmap import nonlinear_at_seeds, omega_update

DEFAULT_GRID = (100, 100.0, 100.0)


@dataclass
class SolutionPackage:
    state: SectorField
    omega: np.ndarray
    pt: ParamPoint
    trace: dict = field(default_factory=dict)

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.pt.omega is None:
            self.pt = self.pt.with_omega(self.omega)

    def check_omega(self, tol: float = 1e-12) -> bool:
        modes = tuple(k for k in (0, 1) if self.pt.amplitudes[k] != 0)
        ref = omega_update(self.state, self.pt, modes)
        return bool(np.all(np.abs(ref - self.omega) <= tol * np.maximum(1.0, np.abs(ref))))

    def to_json(self, seed: int | None = None) -> dict:
        pt = self.pt
        return {
            "seed": seed,
            "params": {"lambda1": pt.lambda1, "lambda2": pt.lambda2, "m": pt.m, "M": pt.M},
            "problem": {
                "p": pt.p,
                "delta": pt.delta,
                "a1": pt.a1,
                "a2": pt.a2,
                "h1": list(pt.h1),
                "h2": list(pt.h2),
                "rho": pt.rho,
            },
            "omega": [float(w) for w in self.omega],
            "trace": self.trace,
            "field": field_to_json(self.state.plus, "plus"),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SolutionPackage":
        try:
            prob = obj["problem"]
            params = obj["params"]
            pt = ParamPoint(
                params["lambda1"],
                params["lambda2"],
                params["m"],
                params["M"],
                h1=tuple(prob["h1"]),
                h2=tuple(prob["h2"]),
                a1=prob["a1"],
                a2=prob["a2"],
                delta=prob["delta"],
                p=prob["p"],
                rho=prob.get("rho", 3.5),
            )
            omega = np.array(obj["omega"], dtype=float)
            if omega.shape != (2,):
                raise ValueError("omega must have two entries")
            u = field_from_json(obj["field"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed solution record: {exc!r}") from exc
        return cls(SectorField.from_plus(u), omega, pt.with_omega(omega), obj.get("trace", {}))


def _phases(sol: SolutionPackage, keys: np.ndarray, sign: int):
    """Time and space frequencies of each series term."""
    n = keys[:, :2].astype(float)
    j = keys[:, 2:].astype(float)
    pt = sol.pt
    tf = n @ sol.omega + sign * pt.M
    xf = j @ pt.lam + sign * pt.m
    return tf, xf


def _series(sol: SolutionPackage, t, x, sector: str = "+"):
    """(u, u_t, u_xx) of the rescaled series at broadcast points."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    shape = np.broadcast(t, x).shape
    f = sol.state.plus if sector == "+" else sol.state.minus
    if not len(f):
        z = np.zeros(shape, dtype=complex)
        return z, z.copy(), z.copy()
    tf, xf = _phases(sol, f.keys, 1 if sector == "+" else -1)
    tt = np.broadcast_to(t, shape).reshape(-1, 1)
    xx = np.broadcast_to(x, shape).reshape(-1, 1)
    terms = np.exp(1j * (tt * tf + xx * xf)) * f.values
    u = terms.sum(axis=1)
    ut = (terms * (1j * tf)).sum(axis=1)
    uxx = (terms * (-(xf**2))).sum(axis=1)
    return u.reshape(shape), ut.reshape(shape), uxx.reshape(shape)


def evaluate(sol: SolutionPackage, t, x, *, physical: bool = True, sector: str = "+"):
    """Series value at (t, x); the minus sector gives the conjugate series."""
    u = _series(sol, t, x, sector)[0]
    return sol.pt.delta * u if physical else u


def pde_residual_field(sol: SolutionPackage, t, x, *, physical: bool = True):
    u, ut, uxx = _series(sol, t, x)
    p = sol.pt.p
    if physical:
        d = sol.pt.delta
        U = d * u
        return d * (1j * ut + uxx) - np.abs(U) ** (2 * p) * U
    return 1j * ut + uxx - sol.pt.delta2p * np.abs(u) ** (2 * p) * u


def pde_residual(sol: SolutionPackage, grid, *, physical: bool = True) -> float:
    """max |i u_t + u_xx - |u|^{2p} u| over the (t, x) points of ``grid``."""
    grid = np.asarray(grid, dtype=float).reshape(-1, 2)
    if grid.shape[0] == 0:
        raise ValueError("grid must be nonempty")
    r = pde_residual_field(sol, grid[:, 0], grid[:, 1], physical=physical)
    return float(np.abs(r).max())


def uniform_grid(n: int = 100, t_max: float = 100.0, x_max: float = 100.0) -> np.ndarray:
    t = np.linspace(0.0, t_max, n)
    x = np.linspace(0.0, x_max, n)
    T, X = np.meshgrid(t, x, indexing="ij")
    return np.column_stack([T.ravel(), X.ravel()])


def linear_part(sol: SolutionPackage, t, x, *, physical: bool = True):
    """sum_k a_k exp(i(-omega_k + M) t) exp(i(h_k.lambda + m) x), omega the solved frequencies."""
    pt = sol.pt
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.zeros(np.broadcast(t, x).shape, dtype=complex)
    for k, (a, h) in enumerate(zip(pt.amplitudes, pt.hs)):
        out = out + a * np.exp(1j * (-sol.omega[k] + pt.M) * t) * np.exp(1j * (np.dot(h, pt.lam) + pt.m) * x)
    return pt.delta * out if physical else out


@dataclass
class Tolerances:
    gap_factor: float = 1.0 + 1e-9
    closeness_constant: float = 10.0
    residual: float = 1e-8
    absolute: float = 1e-14


def theorem_report(sol: SolutionPackage, grid=None, tol: Tolerances | None = None) -> dict:
    """Frequency modulation, decay and closeness checks with pass/fail flags."""
    tol = tol or Tolerances()
    pt = sol.pt
    grid = uniform_grid(*DEFAULT_GRID) if grid is None else np.asarray(grid, dtype=float).reshape(-1, 2)
    report: dict = {"delta": pt.delta, "p": pt.p}

    base = pt.omega0
    gaps = np.abs(sol.omega - base)
    live = [k for k in (0, 1) if pt.amplitudes[k] != 0]
    nk = nonlinear_at_seeds(sol.state, pt.p, pt.hs) if pt.delta > 0 else np.zeros(2)
    C = max([abs(nk[k] / pt.amplitudes[k]) for k in live], default=0.0)
    bound = C * pt.delta2p
    seed_band = pt.delta2p * (pt.a1**2 + 2 * pt.a2**2)
    report["omega_modulation_gap"] = {
        "gap": gaps.tolist(),
        "bound": bound,
        "constant": C,
        "seed_closed_form": seed_band,
        "ratio_to_seed_form": (gaps[0] / seed_band) if seed_band > 0 else None,
        "pass": bool(np.all(gaps <= tol.gap_factor * bound + tol.absolute)),
    }

    try:
        alpha, c0, resid = decay_fit(sol.state.plus)
        report["decay"] = {"alpha": alpha, "c0": c0, "fit_residual": resid, "pass": alpha > 0}
    except DegenerateFit:
        report["decay"] = {"status": "insufficient support", "pass": True}

    dev = np.abs(
        evaluate(sol, grid[:, 0], grid[:, 1], physical=False) - linear_part(sol, grid[:, 0], grid[:, 1], physical=False)
    ).max()
    p = pt.p
    report["closeness"] = {
        "rescaled": {"sup": float(dev), "bound": tol.closeness_constant * pt.delta**p},
        "physical": {"sup": float(pt.delta * dev), "bound": tol.closeness_constant * pt.delta ** (p + 1)},
    }
    report["closeness"]["pass"] = bool(pt.delta * dev <= tol.closeness_constant * pt.delta ** (p + 1) + tol.absolute)

    res = pde_residual(sol, grid)
    report["pde_residual"] = {"sup": res, "bound": tol.residual, "pass": res <= tol.residual}
    report["omega_consistent"] = sol.check_omega()
    report["pass"] = all(
        report[key]["pass"] for key in ("omega_modulation_gap", "decay", "closeness", "pde_residual")
    ) and report["omega_consistent"]
    return report


def gnuplot_columns(sol: SolutionPackage, grid=None) -> str:
    """Whitespace table of t, x, Re u, Im u, |residual| with blank lines between t blocks."""
    grid = uniform_grid(*DEFAULT_GRID) if grid is None else np.asarray(grid, dtype=float).reshape(-1, 2)
    u = evaluate(sol, grid[:, 0], grid[:, 1])
    r = np.abs(pde_residual_field(sol, grid[:, 0], grid[:, 1]))
    lines = ["# t x re_u im_u abs_residual"]
    prev = None
    for (t, x), uu, rr in zip(grid, u, r):
        if prev is not None and t != prev:
            lines.append("")
        prev = t
        lines.append(f"{float(t)!r} {float(x)!r} {float(uu.real)!r} {float(uu.imag)!r} {float(rr)!r}")
    return "\n".join(lines) + "\n"


def conjugate_series_gap(sol: SolutionPackage, t, x) -> float:
    """max |minus series - conj(plus series)|."""
    plus = evaluate(sol, t, x, sector="+")
    minus = evaluate(sol, t, x, sector="-")
    return float(np.abs(minus - np.conj(plus)).max())


def shifted_package(sol: SolutionPackage, shift) -> SolutionPackage:
    """Re-index the series by k -> k + shift; pairs with the phase offsets of the shift."""
    shift = np.asarray(shift, dtype=np.int64)
    u = sol.state.plus
    moved = CoeffField(keys=u.keys - shift, values=u.values)
    return SolutionPackage(SectorField(moved, reflect_conjugate(moved)), sol.omega, sol.pt, sol.trace)
