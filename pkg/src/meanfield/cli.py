"""Command line entry point: ``meanfield run`` and ``meanfield check-uniqueness``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import report
from .analysis import SamplingBox, uniqueness_certificates
from .config import KEYS, ConfigError, RunConfig, format_value, load_config
from .coupler import Solution, solve
from .geometry import GeometryError
from .hamiltonian import LocalHamiltonian, kernel_condition

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def write_outputs(cfg: RunConfig, sol: Solution) -> Path:
    """Write snapshots, heatmaps and the manifest. Returns the output directory."""
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    grid, L = cfg.grid, cfg.length_unit
    stats = []
    indices = [sol.step_at(t) for t in cfg.snapshots]
    vmax = max(float(sol.m_traj[n].max()) for n in indices) or 1.0
    for t, n in zip(cfg.snapshots, indices):
        label = report.snapshot_label(t)
        m, u = sol.m_traj[n], sol.u_traj[n]
        (out / f"m_{label}.csv").write_text(report.snapshot_csv(grid, m, L))
        (out / f"u_{label}.csv").write_text(report.snapshot_csv(grid, u, L))
        stats.append(report.snapshot_stats(grid, m, sol.times[n], L))
        if cfg.plots:
            report.density_heatmap(grid, m, out / f"m_{label}.png",
                                   f"{cfg.solver.mode.value.upper()} density, t = {label}", vmax, L)

    entries = [(key, format_value(cfg.values[key])) for key in KEYS]
    entries += [
        ("grid.nx", str(grid.nx)),
        ("grid.ny", str(grid.ny)),
        ("grid.h", repr(grid.h)),
        ("solver.dt", repr(cfg.solver.dt)),
        ("converged", "true" if sol.converged else "false"),
        ("iterations", str(sol.iterations)),
        ("final_residual", repr(sol.residual_history[-1])),
        ("peak_density", repr(float(sol.m_traj.max()))),
    ]
    (out / "manifest.txt").write_text(report.manifest_text(entries, stats, sol.residual_history))
    return out


def cmd_run(args) -> int:
    overrides = {}
    if args.mode:
        overrides["run.mode"] = args.mode
    if args.out:
        overrides["run.out"] = str(Path(args.out).resolve())
    try:
        cfg = load_config(args.config, overrides)
        sol = solve(cfg.grid, cfg.m0, cfg.terminal, cfg.spec, cfg.solver)
    except (ConfigError, GeometryError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = write_outputs(cfg, sol)
    status = "converged" if sol.converged else "NOT converged"
    print(f"{status} after {sol.iterations} iterations (residual {sol.residual_history[-1]:.3e}); "
          f"outputs in {out}")
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def uniqueness_report(cfg: RunConfig) -> tuple[str, bool]:
    v = cfg.values
    box = SamplingBox(samples=v["check.samples"], seed=v["check.seed"], m_min=v["check.m_min"],
                      m_max=v["check.m_max"], v_min=v["check.v_min"], v_max=v["check.v_max"])
    spec = cfg.spec
    lines = [f"Hamiltonian: {spec.__class__.__name__} cH={spec.cH!r} alpha={spec.alpha!r} beta={spec.beta!r} "
             f"offset={spec.offset!r} F={spec.F}",
             f"Sampling box: {box.samples} samples, seed {box.seed}, m in [{box.m_min!r}, {box.m_max!r}], "
             f"|p| or |v| in [{box.v_min!r}, {box.v_max!r}]",
             "These are sampled certificates, not proofs.", ""]
    summary = {}
    if isinstance(spec, LocalHamiltonian):
        certs = uniqueness_certificates(spec, box)
        for i, c in enumerate(certs):
            verdict = "holds" if c.holds else f"VIOLATED at {c.violations} samples, first at {c.worst}"
            lines.append(f"[{i + 1}] {c.name}: {verdict} ({c.checked} checked)")
            summary[f"cert{i + 1}"] = "true" if c.holds else "false"
        ok = all(c.holds for c in certs)
    else:
        m0_max = float(cfg.m0.max())
        ok = kernel_condition(spec, m0_max)
        lines.append(f"kernel mass {spec.kernel_mass!r} vs (beta-1)/(alpha*max m0) = "
                     f"{(spec.beta - 1) / (spec.alpha * m0_max) if m0_max > 0 else float('inf')!r}: "
                     f"{'holds' if ok else 'VIOLATED'}")
        summary["kernel_condition"] = "true" if ok else "false"
    lines.append("")
    summary["all_hold"] = "true" if ok else "false"
    lines += [f"{k}={val}" for k, val in summary.items()]
    return "\n".join(lines) + "\n", ok


def cmd_check(args) -> int:
    try:
        cfg = load_config(args.config)
        text, _ = uniqueness_report(cfg)
    except (ConfigError, GeometryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meanfield", description="Mean field game / mean field type control "
                                     "solver for crowd motion.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log fixed-point iterations")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve the coupled system and write snapshots")
    run.add_argument("--config", required=True)
    run.add_argument("--mode", choices=["mfg", "mftc"])
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)
    check = sub.add_parser("check-uniqueness", help="sample the sufficient uniqueness conditions")
    check.add_argument("--config", required=True)
    check.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
