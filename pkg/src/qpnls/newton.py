"""Multiscale Newton iteration for the amplitude equations off the resonant set.

Stage r solves the linearized system on the box [-A^r, A^r]^4 once, adds the
correction to the plus sector, rebuilds the minus sector by reflection and
then refreshes omega from the frequency equations.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .divisors import ParamPoint, excision_scan, min_divisor
from .errors import DegenerateFit, Excised, NearResonance, NoConvergence
from .lattice import (
    CoeffField,
    SectorField,
    convolve,
    decay_fit,
    nonlinear_term,
    power,
    reflect_conjugate,
    seed_field,
    sup_norm,
    support_radius,
)
from .linearized import DENSE_CAP, RESONANCE_FLOOR, assemble, field_to_vector, solve, vector_to_field
from .qmap import omega_update

TRACE_COLUMNS = [
    "stage",
    "residual",
    "correction",
    "support_radius",
    "min_divisor",
    "omega1",
    "omega2",
    "alpha",
    "box_radius",
    "residual_box",
    "residual_tail",
    "excision",
]


@dataclass(frozen=True)
class NewtonConfig:
    A: int = 2
    max_stage: int = 4
    residual_target: float = 1e-12
    rate_exponent: float = 4.0 / 3.0
    resonance_floor: float = RESONANCE_FLOOR
    dense_cap: int = DENSE_CAP
    # stop with Excised when a stage fails its excision scan
    enforce_excision: bool = False
    keep_states: bool = False

    def __post_init__(self):
        if int(self.A) != self.A or self.A < 2:
            raise ValueError("A must be an integer >= 2")
        if int(self.max_stage) != self.max_stage or self.max_stage < 1:
            raise ValueError("max_stage must be an integer >= 1")
        if not self.residual_target > 0:
            raise ValueError("residual_target must be positive")
        if self.resonance_floor < 0 or self.dense_cap < 1:
            raise ValueError("resonance_floor must be >= 0 and dense_cap >= 1")

    def box(self, stage: int) -> int:
        return int(self.A) ** int(stage)


@dataclass
class StageRecord:
    stage: int
    box_radius: int
    residual: float
    residual_box: float
    residual_tail: float
    correction: float
    support_radius: int
    min_divisor: float
    omega1: float
    omega2: float
    alpha: float | None
    excision: str = ""
    excision_reasons: list = field(default_factory=list)


@dataclass
class NewtonTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    flags: list = field(default_factory=list)
    states: list = field(default_factory=list, repr=False)

    @property
    def stages(self) -> list[int]:
        return [r.stage for r in self.records]

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])

    @property
    def final(self) -> StageRecord:
        return self.records[-1]

    def append(self, rec: StageRecord):
        if self.records and rec.stage <= self.records[-1].stage:
            raise ValueError("stages must be strictly increasing")
        if not math.isfinite(rec.residual):
            raise NoConvergence("non-finite residual", stage=rec.stage)
        self.records.append(rec)

    def rate_ratios(self) -> np.ndarray:
        """log F_{r+1} / log F_r for consecutive stages with 0 < F < 1."""
        res = self.residuals
        out = []
        for a, b in zip(res[:-1], res[1:]):
            if 0 < a < 1 and b > 0:
                out.append(math.log(b) / math.log(a))
            elif b == 0:
                out.append(math.inf)
            else:
                out.append(math.nan)
        return np.array(out)

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "flags": list(self.flags),
            "stages": [asdict(r) for r in self.records],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NewtonTrace":
        out = cls(converged=bool(obj["converged"]), flags=list(obj.get("flags", [])))
        for rec in obj["stages"]:
            out.records.append(StageRecord(**rec))
        return out

    def to_csv(self, seed: int | None = None) -> str:
        """Per-stage table; a constant ``seed`` column is appended when given."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS + ([] if seed is None else ["seed"]))
        for r in self.records:
            row = asdict(r)
            cells = ["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in TRACE_COLUMNS]
            writer.writerow(cells + ([] if seed is None else [seed]))
        return buf.getvalue()


def seed_state(pt: ParamPoint) -> SectorField:
    return SectorField.from_plus(seed_field(pt.h1, pt.h2, pt.a1, pt.a2))


def live_modes(pt: ParamPoint) -> tuple:
    return tuple(k for k in (0, 1) if pt.amplitudes[k] != 0)


def _divisors_at(keys: np.ndarray, sign: int, pt: ParamPoint) -> np.ndarray:
    omega = pt.require_omega()
    n = keys[:, :2].astype(float)
    j = keys[:, 2:].astype(float)
    return sign * (n @ omega) + pt.M + (j @ pt.lam + sign * pt.m) ** 2


def _sector_residual(u: CoeffField, v: CoeffField, sign: int, pt: ParamPoint, omega_q) -> CoeffField:
    nl = nonlinear_term(u, v, pt.p).scale(pt.delta2p) if pt.delta2p else CoeffField()
    keys = np.concatenate([u.keys, nl.keys]) if len(nl) else u.keys
    keys = np.unique(keys, axis=0)
    uk = u.get_many(keys)
    nk = nl.get_many(keys)
    vals = _divisors_at(keys, sign, pt) * uk + nk
    # on the resonant sites write D u + N through the frequency equation so the
    # value vanishes exactly when omega is the solution for this state
    omega = pt.require_omega()
    for k, h in enumerate(pt.hs):
        if pt.amplitudes[k] == 0:
            continue
        site = np.array((-1, 0) + tuple(h) if k == 0 else (0, -1) + tuple(h)) * sign
        hit = np.flatnonzero(np.all(keys == site, axis=1))
        if hit.size:
            i = hit[0]
            vals[i] = uk[i] * (omega_q[k] - omega[k]) + nk[i] * (1.0 - uk[i] / pt.amplitudes[k])
    return CoeffField(keys=keys, values=vals)


def residual(state: SectorField, pt: ParamPoint) -> SectorField:
    """Lattice residual D u + delta^{2p} (u*v)^{*p} * u in both sectors."""
    omega_q = omega_update(state, pt, live_modes(pt))
    plus = _sector_residual(state.plus, state.minus, 1, pt, omega_q)
    minus = _sector_residual(state.minus, state.plus, -1, pt, omega_q)
    return SectorField(plus, minus)


def residual_norms(F: SectorField, N: int) -> tuple[float, float, float]:
    """(full, in-box, tail) Euclidean norms of a residual over both sectors."""
    vals = np.concatenate([F.plus.values, F.minus.values])
    if not vals.size:
        return 0.0, 0.0, 0.0
    inside = np.concatenate([sup_norm(F.plus.keys), sup_norm(F.minus.keys)]) <= N
    return (
        float(np.linalg.norm(vals)),
        float(np.linalg.norm(vals[inside])),
        float(np.linalg.norm(vals[~inside])),
    )


def newton_step(
    state: SectorField,
    pt: ParamPoint,
    N: int,
    *,
    floor: float = RESONANCE_FLOOR,
    dense_cap: int = DENSE_CAP,
    stage: int | None = None,
) -> tuple[SectorField, float]:
    """One correction on [-N, N]^4: u <- u - [T_N]^{-1} F restricted to the box."""
    F = residual(state, pt)
    op = assemble(N, pt, state)
    rhs = field_to_vector(op, F)
    try:
        delta = -solve(op, rhs, floor=floor, dense_cap=dense_cap)
    except NoConvergence as exc:
        raise NoConvergence(str(exc), stage=stage) from exc
    corr = vector_to_field(op, delta)
    new_u = state.plus + corr.plus
    return SectorField(new_u, reflect_conjugate(new_u)), float(np.linalg.norm(delta))


def _alpha(u: CoeffField) -> float | None:
    try:
        return decay_fit(u)[0]
    except DegenerateFit:
        return None


def _record(stage, N, state, pt, correction, verdict) -> StageRecord:
    full, box, tail = residual_norms(residual(state, pt), N)
    omega = pt.require_omega()
    return StageRecord(
        stage=stage,
        box_radius=N,
        residual=full,
        residual_box=box,
        residual_tail=tail,
        correction=correction,
        support_radius=state.support_radius(),
        min_divisor=min_divisor(N, pt) if N > 0 else math.inf,
        omega1=float(omega[0]),
        omega2=float(omega[1]),
        alpha=_alpha(state.plus),
        excision="" if verdict is None else ("pass" if verdict.passed else "fail"),
        excision_reasons=[] if verdict is None else verdict.reasons,
    )


def run(config: NewtonConfig, pt: ParamPoint) -> tuple[SectorField, NewtonTrace]:
    """Seed, then alternate Newton stages at N_r = A^r with frequency updates.

    Each stage's excision scan is recorded in the trace; with
    ``config.enforce_excision`` a failing scan raises Excised.  A divisor
    below the resonance floor raises Excised with reason NearResonance.
    """
    trace = NewtonTrace()
    modes = live_modes(pt)
    if len(modes) < 2:
        trace.flags.append(f"degenerate amplitudes a=({pt.a1}, {pt.a2}): single-frequency reduction")
    state = seed_state(pt)
    pt = pt.with_omega(omega_update(state, pt, modes))
    trace.append(_record(0, 0, state, pt, 0.0, None))
    if config.keep_states:
        trace.states.append(state)
    if trace.final.residual <= config.residual_target:
        trace.converged = True
        return state, trace

    for stage in range(1, config.max_stage + 1):
        N = config.box(stage)
        verdict = excision_scan(pt, stage, config.A)
        if config.enforce_excision and not verdict.passed:
            raise Excised(stage, ",".join(verdict.reasons) + f" ({verdict.offending_site})")
        try:
            state, corr = newton_step(
                state, pt, N, floor=config.resonance_floor, dense_cap=config.dense_cap, stage=stage
            )
        except NearResonance as exc:
            raise Excised(stage, f"NearResonance: {exc}") from exc
        pt = pt.with_omega(omega_update(state, pt, modes))
        trace.append(_record(stage, N, state, pt, corr, verdict))
        if config.keep_states:
            trace.states.append(state)
        if trace.final.residual <= config.residual_target:
            trace.converged = True
            break
    return state, trace


def kernel_reach(state: SectorField, p: int) -> int:
    """Support radius of (u*v)^{*p}, the reach of the linearized coupling."""
    return support_radius(power(convolve(state.plus, state.minus), p))
