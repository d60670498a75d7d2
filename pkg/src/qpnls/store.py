"""Run configuration and atomic file output."""

from __future__ import annotations

import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .divisors import ParamPoint
from .errors import ConfigError
from .newton import NewtonConfig
from .sweep import PARAMS, Problem


def write_atomic(path, text: str) -> Path:
    """Write ``text`` through a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return write_atomic(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


_PROBLEM_KEYS = {f.name for f in fields(Problem)}
_SOLVER_KEYS = {f.name for f in fields(NewtonConfig)} - {"keep_states"}
_SCAN_KEYS = {"n_samples", "stages", "sampler", "heatmap_axes", "heatmap_resolution", "heatmap_base"}
_VERIFY_KEYS = {"grid_n", "t_max", "x_max", "closeness_constant", "residual_tol"}
_OUTPUT_KEYS = {"dir"}
_SECTIONS = {
    "problem": _PROBLEM_KEYS,
    "parameter": set(PARAMS),
    "solver": _SOLVER_KEYS,
    "scan": _SCAN_KEYS,
    "verify": _VERIFY_KEYS,
    "output": _OUTPUT_KEYS,
}


@dataclass
class RunConfig:
    problem: Problem = field(default_factory=Problem)
    parameter: dict = field(default_factory=dict)
    solver: NewtonConfig = field(default_factory=NewtonConfig)
    scan: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    seed: int = 0

    def point(self) -> ParamPoint:
        """The single parameter point of a solve run."""
        vals = []
        for name in PARAMS:
            v = self.parameter.get(name)
            if v is None:
                raise ConfigError(f"parameter.{name} is required")
            if isinstance(v, list):
                raise ConfigError(f"parameter.{name} must be a number for solve, got a range")
            vals.append(v)
        try:
            return self.problem.point(*vals)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def ranges(self) -> list[tuple[float, float]]:
        out = []
        for name in PARAMS:
            v = self.parameter.get(name)
            if v is None:
                raise ConfigError(f"parameter.{name} is required")
            if isinstance(v, list):
                if len(v) != 2 or not v[0] <= v[1]:
                    raise ConfigError(f"parameter.{name} range must be [lo, hi] with lo <= hi")
                lo, hi = float(v[0]), float(v[1])
            else:
                lo = hi = float(v)
            if lo <= 0 or hi >= 2 * math.pi:
                raise ConfigError(f"parameter.{name} range must lie inside (0, 2pi)")
            out.append((lo, hi))
        return out

    @property
    def out_dir(self) -> Path:
        return Path(self.output.get("dir", "out"))


def _check_number(section, key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")


def parse_config(data: dict) -> RunConfig:
    """Validate a parsed TOML document; unknown sections or keys are errors."""
    data = dict(data)
    seed = data.pop("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    for section, body in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"{section} must be a table")
        unknown = set(body) - _SECTIONS[section]
        if unknown:
            raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")

    prob = dict(data.get("problem", {}))
    for key in ("h1", "h2"):
        if key in prob:
            h = prob[key]
            if not (isinstance(h, list) and len(h) == 2 and all(isinstance(c, int) for c in h)):
                raise ConfigError(f"problem.{key} must be a list of two integers")
            prob[key] = tuple(h)
    for key in ("a1", "a2", "delta", "rho", "p"):
        if key in prob:
            _check_number("problem", key, prob[key])
    try:
        problem = Problem(**prob)
        # validates h1, h2, delta, p through the point constructor
        problem.point(1.0, 2.0, 1.0, 1.0)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid problem block: {exc}") from exc

    params = dict(data.get("parameter", {}))
    for key, v in params.items():
        if isinstance(v, list):
            for c in v:
                _check_number("parameter", key, c)
        else:
            _check_number("parameter", key, v)

    try:
        solver = NewtonConfig(**data.get("solver", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver block: {exc}") from exc

    scan_cfg = dict(data.get("scan", {}))
    if "n_samples" in scan_cfg and (not isinstance(scan_cfg["n_samples"], int) or scan_cfg["n_samples"] < 1):
        raise ConfigError("scan.n_samples must be a positive integer")
    if scan_cfg.get("sampler", "halton") not in ("halton", "random"):
        raise ConfigError("scan.sampler must be 'halton' or 'random'")
    axes = scan_cfg.get("heatmap_axes")
    if axes is not None and (len(axes) != 2 or any(a not in PARAMS for a in axes)):
        raise ConfigError(f"scan.heatmap_axes must name two of {PARAMS}")
    base = scan_cfg.get("heatmap_base")
    if base is not None:
        if not isinstance(base, list) or len(base) != 4:
            raise ConfigError("scan.heatmap_base must list lambda1, lambda2, m, M")
        for c in base:
            _check_number("scan", "heatmap_base", c)

    return RunConfig(
        problem=problem,
        parameter=params,
        solver=solver,
        scan=scan_cfg,
        verify=dict(data.get("verify", {})),
        output=dict(data.get("output", {})),
        seed=seed,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    return parse_config(data)
