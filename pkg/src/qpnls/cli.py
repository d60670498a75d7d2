"""Command-line front end.

Exit status: 0 success, 1 configuration or input error, 2 parameter point
excised, 3 Newton run did not converge, 4 verification checks failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .divisors import cross, enumerate_zero_divisors
from .errors import ConfigError, Excised, NoConvergence
from .lattice import resonant_sites
from .newton import run
from .store import RunConfig, load_config, read_json, write_atomic, write_json
from .sweep import scan, slice_heatmap, heatmap_matrix
from .verify import SolutionPackage, Tolerances, gnuplot_columns, theorem_report, uniform_grid

EXIT_OK, EXIT_CONFIG, EXIT_EXCISED, EXIT_NOCONV, EXIT_VERIFY = 0, 1, 2, 3, 4


def _err(msg: str):
    print(f"qpnls: {msg}", file=sys.stderr)


def _with_seed_column(text: str, seed: int) -> str:
    rows = list(csv.reader(io.StringIO(text)))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(rows[0] + ["seed"])
    for row in rows[1:]:
        writer.writerow(row + [seed])
    return buf.getvalue()


def _load(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output["dir"] = args.out
    return cfg


def _verify_grid(cfg_verify: dict, args=None):
    n = getattr(args, "grid", None) or cfg_verify.get("grid_n", 100)
    t_max = getattr(args, "t_max", None) or cfg_verify.get("t_max", 100.0)
    x_max = getattr(args, "x_max", None) or cfg_verify.get("x_max", 100.0)
    return uniform_grid(int(n), float(t_max), float(x_max))


def _tolerances(cfg_verify: dict) -> Tolerances:
    tol = Tolerances()
    if "closeness_constant" in cfg_verify:
        tol.closeness_constant = float(cfg_verify["closeness_constant"])
    if "residual_tol" in cfg_verify:
        tol.residual = float(cfg_verify["residual_tol"])
    return tol


def do_solve(cfg: RunConfig) -> int:
    pt = cfg.point()
    out = cfg.out_dir
    try:
        state, trace = run(cfg.solver, pt)
    except Excised as exc:
        _err(str(exc))
        write_json(out / "failure.json", {"seed": cfg.seed, "status": "excised", "stage": exc.stage, "reason": exc.reason})
        return EXIT_EXCISED
    except NoConvergence as exc:
        _err(str(exc))
        write_json(out / "failure.json", {"seed": cfg.seed, "status": "no_convergence", "message": str(exc)})
        return EXIT_NOCONV
    omega = (trace.final.omega1, trace.final.omega2)
    summary = {
        "converged": trace.converged,
        "stages": len(trace.records) - 1,
        "final_residual": trace.final.residual,
    }
    sol = SolutionPackage(state, omega, pt.with_omega(omega), summary)
    write_json(out / "solution.json", sol.to_json(seed=cfg.seed))
    write_json(out / "trace.json", {"seed": cfg.seed, **trace.to_json()})
    write_atomic(out / "trace.csv", trace.to_csv(seed=cfg.seed))
    grid = _verify_grid(cfg.verify)
    report = theorem_report(sol, grid, _tolerances(cfg.verify))
    report["residual"] = trace.final.residual
    report["residual_target"] = cfg.solver.residual_target
    write_json(out / "report.json", {"seed": cfg.seed, **report})
    field = gnuplot_columns(sol, uniform_grid(60, float(grid[:, 0].max()), float(grid[:, 1].max())))
    write_atomic(out / "field.dat", field.replace("# t x", f"# seed={cfg.seed} t x", 1))
    if not trace.converged:
        _err(f"no convergence after {cfg.solver.max_stage} stages (residual {trace.final.residual:.3e})")
        return EXIT_NOCONV
    print(f"converged: {summary['stages']} stages, residual {trace.final.residual:.3e}; output in {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    return do_solve(_load(args))


def do_scan(cfg: RunConfig, threads: int = 1) -> int:
    out = cfg.out_dir
    sc = cfg.scan
    report = scan(
        cfg.ranges(),
        int(sc.get("n_samples", 100)),
        cfg.seed,
        cfg.solver,
        cfg.problem,
        stages=sc.get("stages"),
        sampler=sc.get("sampler", "halton"),
        threads=threads,
    )
    write_atomic(out / "scan.csv", _with_seed_column(report.samples_csv(), cfg.seed))
    write_atomic(out / "scan_summary.json", report.summary_json())
    axes = sc.get("heatmap_axes")
    if axes:
        ranges = dict(zip(("lambda1", "lambda2", "m", "M"), cfg.ranges()))
        # off-center default so equal lambda ranges do not put the slice on (h1 - h2).lambda = 0
        fractions = dict(zip(ranges, (0.382, 0.618, 0.5, 0.5)))
        base = {k: lo + fractions[k] * (hi - lo) for k, (lo, hi) in ranges.items()}
        if "heatmap_base" in sc:
            base = dict(zip(ranges, (float(c) for c in sc["heatmap_base"])))
        codes, _, ax0, ax1 = slice_heatmap(
            base,
            tuple(axes),
            [ranges[axes[0]], ranges[axes[1]]],
            int(sc.get("heatmap_resolution", 40)),
            cfg.solver,
            cfg.problem,
            stages=sc.get("stages"),
            threads=threads,
        )
        text = heatmap_matrix(codes, ax0, ax1, tuple(axes))
        write_atomic(out / "heatmap.dat", text.replace("# verdict", f"# seed={cfg.seed} verdict", 1))
    print(f"scanned {report.samples} samples: good fraction {report.good_fraction:.3f}; output in {out}")
    return EXIT_OK


def cmd_scan(args) -> int:
    return do_scan(_load(args), args.threads)


def cmd_verify(args) -> int:
    try:
        sol = SolutionPackage.from_json(read_json(args.solution))
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        _err(f"cannot parse solution {args.solution}: {exc}")
        return EXIT_CONFIG
    verify_cfg = {}
    if args.config:
        verify_cfg = load_config(args.config).verify
    report = theorem_report(sol, _verify_grid(verify_cfg, args), _tolerances(verify_cfg))
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        write_atomic(Path(args.out) / "verify_report.json", text + "\n")
    return EXIT_OK if report["pass"] else EXIT_VERIFY


def _parse_h(text: str) -> tuple[int, int]:
    try:
        parts = [int(c) for c in text.replace(" ", "").split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two integers 'a,b', got {text!r}")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two integers 'a,b', got {text!r}")
    return tuple(parts)


def cmd_divisors(args) -> int:
    h1, h2 = args.h1, args.h2
    if args.box < 0:
        _err("--box must be nonnegative")
        return EXIT_CONFIG
    zeros = enumerate_zero_divisors(h1, h2, args.box)
    seeds = set(resonant_sites(h1, h2))
    lines = ["# sector n1 n2 j1 j2 kind"]
    extras = 0
    for sector, k in zeros:
        kind = "seed" if (sector, k) in seeds else "extra"
        extras += kind == "extra"
        lines.append(f"{sector} {k[0]} {k[1]} {k[2]} {k[3]} {kind}")
    if cross(h1, h2) == 0:
        _err(f"warning: h1={h1} and h2={h2} are parallel; {extras} extra identically-zero divisors")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        write_atomic(Path(args.out) / "divisors.dat", text)
    return EXIT_OK


def cmd_report(args) -> int:
    """Run solve and scan from one config, then render figures next to their data."""
    from . import plotting

    cfg = _load(args)
    out = cfg.out_dir
    status = EXIT_OK
    if all(not isinstance(cfg.parameter.get(k), list) for k in ("lambda1", "lambda2", "m", "M")):
        status = do_solve(cfg)
    if cfg.scan:
        do_scan(cfg, args.threads)
    figures = []
    if (out / "trace.csv").exists():
        figures.append(plotting.residual_curve(out / "trace.csv", out / "residual.png"))
    if (out / "field.dat").exists():
        figures.append(plotting.field_image(out / "field.dat", out / "field.png"))
    if (out / "scan_summary.json").exists():
        figures.append(plotting.survival_bars(out / "scan_summary.json", out / "survival.png"))
    if (out / "heatmap.dat").exists():
        figures.append(plotting.verdict_map(out / "heatmap.dat", out / "heatmap.png"))
    for f in figures:
        print(f"wrote {f}")
    return status


class _Parser(argparse.ArgumentParser):
    # usage errors share the configuration exit status instead of argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qpnls", description="Quasi-periodic NLS lattice solver")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes for scans")

    p = sub.add_parser("solve", help="run the Newton scheme at one parameter point")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("scan", help="Monte Carlo excision scan over parameter ranges")
    common(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("verify", help="check a solution file")
    p.add_argument("solution", help="solution JSON written by solve")
    common(p)
    p.add_argument("--grid", type=int, help="grid points per axis")
    p.add_argument("--t-max", type=float, dest="t_max")
    p.add_argument("--x-max", type=float, dest="x_max")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("divisors", help="list identically vanishing divisors")
    p.add_argument("--h1", type=_parse_h, default=(1, 0))
    p.add_argument("--h2", type=_parse_h, default=(0, 1))
    p.add_argument("--box", type=int, default=3)
    common(p)
    p.set_defaults(func=cmd_divisors)

    p = sub.add_parser("report", help="solve and scan, then render PNG figures")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        _err("--threads must be >= 1")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
