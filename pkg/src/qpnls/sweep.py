"""Parameter-space sampling with per-stage excision accounting.

Each sample is followed stage by stage: the excision scan at the current
omega decides whether it survives stage r, and survivors take one Newton
stage before moving on.  A sample that fails at stage r is never tested
again, so the surviving sets are nested by construction.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .divisors import ParamPoint, excision_scan
from .errors import Excised, NearResonance, NoConvergence
from .newton import NewtonConfig, live_modes, newton_step, residual, residual_norms, seed_state
from .qmap import lambda_floor, omega_update

PARAMS = ("lambda1", "lambda2", "m", "M")
REASONS = ("good", "divisor", "dioph_lambda", "dioph_omega", "degenerate_lambda", "solver")
CODES = {name: i for i, name in enumerate(REASONS)}

SAMPLE_COLUMNS = [
    "index",
    "lambda1",
    "lambda2",
    "m",
    "M",
    "verdict",
    "stages_survived",
    "final_residual",
    "min_divisor",
    "detail",
]


@dataclass(frozen=True)
class Problem:
    """Fixed data shared by all samples."""

    h1: tuple = (1, 0)
    h2: tuple = (0, 1)
    a1: float = 1.0
    a2: float = 1.0
    delta: float = 0.01
    p: int = 1
    rho: float = 3.5

    def point(self, lambda1, lambda2, m, M) -> ParamPoint:
        return ParamPoint(float(lambda1), float(lambda2), float(m), float(M), **asdict(self))


@dataclass
class SampleResult:
    index: int
    params: tuple
    verdict: str
    stages_survived: int
    final_residual: float
    min_divisor: float
    detail: str = ""

    def row(self) -> list:
        return [
            self.index,
            *(repr(float(v)) for v in self.params),
            self.verdict,
            self.stages_survived,
            repr(self.final_residual),
            repr(self.min_divisor),
            self.detail,
        ]


def evaluate_sample(
    params,
    problem: Problem,
    config: NewtonConfig,
    stages: int,
    index: int = 0,
) -> SampleResult:
    """Follow one parameter point through ``stages`` excision scans and Newton stages."""
    params = tuple(float(v) for v in params)
    pt = problem.point(*params)
    floor = lambda_floor(pt.delta, pt.h1, pt.h2, pt.rho)
    gap = abs(pt.lambda_gap)
    if gap == 0.0 or gap < floor:
        return SampleResult(index, params, "degenerate_lambda", 0, math.nan, math.nan, f"gap={gap:.3e}")
    modes = live_modes(pt)
    state = seed_state(pt)
    pt = pt.with_omega(omega_update(state, pt, modes))
    res = residual_norms(residual(state, pt), 0)[0]
    min_div = math.inf
    for stage in range(1, stages + 1):
        verdict = excision_scan(pt, stage, config.A)
        min_div = verdict.min_divisor
        if not verdict.passed:
            return SampleResult(index, params, verdict.reasons[0], stage - 1, res, min_div, verdict.offending_site)
        if res > config.residual_target:
            try:
                state, _ = newton_step(
                    state, pt, config.box(stage), floor=config.resonance_floor, dense_cap=config.dense_cap, stage=stage
                )
            except NearResonance as exc:
                return SampleResult(index, params, "divisor", stage - 1, res, min_div, str(exc))
            except (NoConvergence, Excised) as exc:
                return SampleResult(index, params, "solver", stage - 1, res, min_div, str(exc))
            pt = pt.with_omega(omega_update(state, pt, modes))
            res = residual_norms(residual(state, pt), config.box(stage))[0]
            if not math.isfinite(res):
                return SampleResult(index, params, "solver", stage - 1, res, min_div, "non-finite residual")
    return SampleResult(index, params, "good", stages, res, min_div)


def sample_points(ranges, n_samples: int, seed: int, sampler: str = "halton") -> np.ndarray:
    """(n_samples, 4) points in the box ``ranges``; degenerate intervals are allowed."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)
    if lo.shape != (4,) or np.any(hi < lo):
        raise ValueError("ranges must give four intervals lo <= hi")
    if np.any(lo <= 0) or np.any(hi >= 2 * math.pi):
        raise ValueError("ranges must lie inside (0, 2pi)")
    if sampler == "halton":
        unit = qmc.Halton(d=4, scramble=True, seed=seed).random(n_samples)
    elif sampler == "random":
        unit = np.random.default_rng(seed).random((n_samples, 4))
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    return lo + unit * (hi - lo)


def _eval_star(args):
    return evaluate_sample(*args)


def _evaluate_all(points, problem, config, stages, threads: int) -> list[SampleResult]:
    jobs = [(tuple(p), problem, config, stages, i) for i, p in enumerate(points)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_eval_star, jobs, chunksize=max(1, len(jobs) // (8 * threads))))
    return [_eval_star(j) for j in jobs]


@dataclass
class ScanReport:
    samples: int
    stages: int
    seed: int
    counts: dict
    survivors: list
    results: list = field(repr=False, default_factory=list)

    @property
    def good_fraction(self) -> float:
        return self.counts.get("good", 0) / self.samples

    @property
    def surviving_fraction(self) -> list[float]:
        return [s / self.samples for s in self.survivors]

    @property
    def stage_loss(self) -> list[int]:
        """Samples lost at each stage 1..stages (degenerate points count at stage 1)."""
        seq = [self.samples] + self.survivors
        return [a - b for a, b in zip(seq[:-1], seq[1:])]

    def survivor_sets(self) -> list[set]:
        return [{r.index for r in self.results if r.stages_survived >= s} for s in range(1, self.stages + 1)]

    def residual_summary(self) -> dict:
        vals = np.array([r.final_residual for r in self.results if r.verdict == "good"])
        if not vals.size:
            return {"count": 0}
        return {
            "count": int(vals.size),
            "min": float(vals.min()),
            "median": float(np.median(vals)),
            "max": float(vals.max()),
        }

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "samples": self.samples,
            "stages": self.stages,
            "counts": {k: self.counts.get(k, 0) for k in REASONS},
            "survivors_per_stage": self.survivors,
            "surviving_fraction": self.surviving_fraction,
            "stage_loss": self.stage_loss,
            "good_fraction": self.good_fraction,
            "final_residual": self.residual_summary(),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def samples_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SAMPLE_COLUMNS)
        for r in self.results:
            writer.writerow(r.row())
        return buf.getvalue()


def scan(
    ranges,
    n_samples: int,
    seed: int,
    config: NewtonConfig,
    problem: Problem = Problem(),
    *,
    stages: int | None = None,
    sampler: str = "halton",
    threads: int = 1,
) -> ScanReport:
    """Monte Carlo excision accounting over the box ``ranges`` in (lambda1, lambda2, m, M)."""
    stages = config.max_stage if stages is None else int(stages)
    points = sample_points(ranges, n_samples, seed, sampler)
    results = _evaluate_all(points, problem, config, stages, threads)
    counts = {k: 0 for k in REASONS}
    for r in results:
        counts[r.verdict] += 1
    survivors = [sum(r.stages_survived >= s for r in results) for s in range(1, stages + 1)]
    return ScanReport(n_samples, stages, seed, counts, survivors, results)


def slice_heatmap(
    base: dict,
    varying: tuple[str, str],
    spans,
    resolution,
    config: NewtonConfig,
    problem: Problem = Problem(),
    *,
    stages: int | None = None,
    threads: int = 1,
):
    """Verdict codes on a 2-D slice; the other two parameters come from ``base``.

    Returns ``(codes, stages_reached, axis0, axis1)``; ``codes`` indexes
    :data:`REASONS`.
    """
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    if min(resolution) < 2:
        raise ValueError("resolution must be >= 2 per axis")
    for name in varying:
        if name not in PARAMS:
            raise ValueError(f"unknown parameter {name!r}")
    stages = config.max_stage if stages is None else int(stages)
    ax0 = np.linspace(spans[0][0], spans[0][1], resolution[0])
    ax1 = np.linspace(spans[1][0], spans[1][1], resolution[1])
    points = []
    for v0 in ax0:
        for v1 in ax1:
            vals = dict(base)
            vals[varying[0]], vals[varying[1]] = v0, v1
            points.append([vals[k] for k in PARAMS])
    results = _evaluate_all(points, problem, config, stages, threads)
    codes = np.array([CODES[r.verdict] for r in results]).reshape(resolution)
    reached = np.array([r.stages_survived for r in results]).reshape(resolution)
    return codes, reached, ax0, ax1


def heatmap_matrix(codes: np.ndarray, ax0, ax1, names=("x", "y")) -> str:
    """gnuplot 'matrix nonuniform' layout with a single comment header."""
    lines = [f"# verdict codes {dict(enumerate(REASONS))}; rows {names[0]}, columns {names[1]}"]
    lines.append(" ".join([repr(float(len(ax1)))] + [repr(float(v)) for v in ax1]))
    for v0, row in zip(ax0, codes):
        lines.append(" ".join([repr(float(v0))] + [str(int(c)) for c in row]))
    return "\n".join(lines) + "\n"
