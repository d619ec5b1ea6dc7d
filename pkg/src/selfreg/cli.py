"""Command-line entry point ``selfreg``.

Exit codes: 0 on completion or a pass/inconclusive verdict, 1 on a statistical
failure, 2 on a configuration error (nothing is written), 3 on a numerical
abort (non-finite state or the event-count guard).
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .diffusion_engine import mean_se, run_diffusion
from .diffusion_engine import snapshot_rows as diffusion_rows
from .dual_engine import dual_rows, dual_summary, run_dual
from .errors import ConfigError, NumericalAbort
from .experiments import StudyPlan, run_study
from .output import file_meta, output_dir, write_csv, write_json
from .particle_engine import init_particles, run_particles
from .particle_engine import snapshot_rows as particle_rows
from .verification import duality_check, generator_check, martingale_residual

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

GENERATOR_TOL = 1e-10
FD_TOL = 1e-5

STUDY_KINDS = {"study-diffusion-limit": "diffusion_limit", "study-domain-growth": "domain_growth",
               "study-dual-mass": "dual_mass_growth", "study-coexistence": "coexistence"}
STUDY_GRIDS = {"diffusion_limit": [1.0, 0.25, 0.0625], "domain_growth": [3, 5, 9],
               "dual_mass_growth": [1.0, 2.0, 4.0, 8.0], "coexistence": [0.5, 1.0]}

COMMANDS = ("simulate-particle", "simulate-diffusion", "simulate-dual", "check-generator",
            "check-duality", "check-martingale", *STUDY_KINDS)


def _mean_table(times, x):
    """Rows (time, site, type, mean, se) from (replicates, T, G, M) samples."""
    mean, se = mean_se(x) if x.shape[0] > 1 else (x[0], np.zeros_like(x[0]))
    rows = []
    for ti, t in enumerate(times):
        for xi in range(x.shape[2]):
            for m in range(x.shape[3]):
                rows.append({"time": float(t), "site": xi, "type": m,
                             "mean": float(mean[ti, xi, m]), "se": float(se[ti, xi, m])})
    return rows


# ---------------------------------------------------------------- commands
# Each returns (verdict or None, json result, optional (header, rows) for CSV).

def cmd_simulate_particle(cfg):
    e = cfg.engine
    state = init_particles(cfg.geo, cfg.params, cfg.x0, float(e["eps"]))
    tr = run_particles(state, cfg.geo, cfg.params, float(cfg.times[-1]), cfg.times, cfg.seed,
                       replicates=cfg.replicates, max_events=int(e["max_events"]),
                       threads=cfg.threads)
    result = {"engine": tr.meta, "mean_mass": _mean_table(tr.times, tr.mass),
              "events_mean": float(tr.n_events.mean())}
    header = ["replicate", "time", "site", "type", "count", "mass"]
    return None, result, (header, particle_rows(tr))


def cmd_simulate_diffusion(cfg):
    e = cfg.engine
    tr = run_diffusion(cfg.x0, cfg.geo, cfg.params, cfg.times, cfg.seed, dt=float(e["dt"]),
                       replicates=cfg.replicates, scheme=e["scheme"], noise=bool(e["noise"]),
                       threads=cfg.threads)
    result = {"engine": tr.meta, "mean_mass": _mean_table(tr.times, tr.x)}
    return None, result, (["replicate", "time", "site", "type", "mass"], diffusion_rows(tr))


def cmd_simulate_dual(cfg):
    e = cfg.engine
    tr = run_dual(cfg.alpha0, cfg.kappa0, cfg.geo, cfg.params, cfg.times, cfg.seed,
                  dt=float(e["dt"]), replicates=cfg.replicates, scheme=e["dual_scheme"],
                  threads=cfg.threads)
    result = {"engine": tr.meta, "summary": dual_summary(tr)}
    header = ["replicate", "time", "site", "alpha", "kbar",
              *(f"kappa_{m}" for m in range(cfg.params.M))]
    return None, result, (header, dual_rows(tr))


def cmd_check_generator(cfg):
    res = generator_check(int(cfg.data["check"]["points"]), cfg.seed)
    ok = res["max_residual"] <= GENERATOR_TOL and res["fd_max_gap"] <= FD_TOL
    res.update({"tolerance": GENERATOR_TOL, "fd_tolerance": FD_TOL})
    return ("pass" if ok else "fail"), res, None


def cmd_check_duality(cfg):
    res = duality_check(cfg.geo, cfg.params, cfg.x0, cfg.alpha0, cfg.kappa0,
                        float(cfg.data["check"]["t"]), cfg.seed, replicates=cfg.replicates,
                        dual_replicates=cfg.dual_replicates, dt=float(cfg.engine["dt"]),
                        forward_scheme=cfg.engine["scheme"], dual_scheme=cfg.engine["dual_scheme"],
                        threads=cfg.threads)
    return res["verdict"], res, None


def _martingale_functions(cfg):
    G, M = cfg.geo.n_sites, cfg.params.M
    funcs = cfg.data["check"]["functions"]
    if funcs is None:
        mu = np.zeros(G)
        mu[cfg.geo.origin] = 1.0
        return [(mu, np.zeros((G, M), dtype=np.int64))]
    out = []
    for f in funcs:
        kap = np.zeros((G, M), dtype=np.int64)
        for s, ty, c in f.get("kappa", []):
            kap[s, ty] += c
        out.append((np.asarray(f["mu"], dtype=float) * np.ones(G), kap))
    return out


def cmd_check_martingale(cfg):
    e, chk = cfg.engine, cfg.data["check"]
    rows = [martingale_residual(mu, kap, e["kind"], cfg.geo, cfg.params, cfg.x0, float(chk["t"]),
                                cfg.seed, replicates=cfg.replicates, grid=float(chk["grid"]),
                                dt=float(e["dt"]), eps=float(e["eps"]), scheme=e["scheme"],
                                noise=bool(e["noise"]), threads=cfg.threads)
            for mu, kap in _martingale_functions(cfg)]
    verdicts = [r["verdict"] for r in rows]
    verdict = "fail" if "fail" in verdicts else "inconclusive" if "inconclusive" in verdicts else "pass"
    return verdict, {"functions": rows, "verdict": verdict}, None


def cmd_study(cfg, kind):
    st = cfg.data["study"]
    plan = StudyPlan(kind, st["grid"] or STUDY_GRIDS[kind], cfg.scenario(), cfg.replicates,
                     cfg.seed, None, st["budget_seconds"], cfg.threads, dict(st["options"]))
    res = run_study(plan)
    return res.verdict, res.to_json(), None


def dispatch(command, cfg):
    if command in STUDY_KINDS:
        return cmd_study(cfg, STUDY_KINDS[command])
    return globals()["cmd_" + command.replace("-", "_")](cfg)


# ---------------------------------------------------------------- driver

def preflight(command, cfg):
    """Command-specific checks that must fail before any file is written."""
    errors = []
    if command == "check-duality" and not cfg.params.exchangeable:
        errors.append("model: check-duality needs exchangeable parameters (one gamma, K, lambda)")
    if command in ("study-coexistence",) and cfg.params.M < 2:
        errors.append("model.M: the coexistence study needs at least two types")
    if command == "check-martingale":
        for i, (mu, kap) in enumerate(_martingale_functions(cfg)):
            if np.any((kap.sum(axis=1) > 0) & (mu <= 0)):
                errors.append(f"check.functions[{i}]: mu must be positive where kappa is nonzero")
        t, grid = float(cfg.data["check"]["t"]), float(cfg.data["check"]["grid"])
        n = round(t / grid)
        if t != 0 and (n < 1 or abs(n * grid - t) > 1e-9 * max(1.0, t)):
            errors.append("check.t: must be zero or a positive multiple of check.grid")
    if command in STUDY_KINDS:
        st = cfg.data["study"]
        if st["grid"] is not None:
            try:
                StudyPlan(STUDY_KINDS[command], st["grid"], cfg.scenario(), cfg.replicates)
            except (ValueError, TypeError) as exc:
                errors.append(f"study.grid: {exc}")
        if cfg.replicates < 2:
            errors.append("replicates: studies need at least two")
    if errors:
        raise ConfigError(errors)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selfreg", description="Simulate and verify multitype "
                                "branching populations with local self-regulation and their dual.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML run configuration (defaults when omitted)")
        s.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        s.add_argument("--replicates", type=int)
        s.add_argument("--threads", type=int, help="thread budget (0 = all cores)")
        s.add_argument("--out", help="output directory (default: $SELFREG_OUTPUT_DIR or ./selfreg-out)")
        s.add_argument("--format", choices=("csv", "json", "both"), default="both")
    return p


def load(args):
    from .config import load_config, parse_config
    cfg = load_config(args.config) if args.config else parse_config("")
    return cfg.with_overrides(seed=args.seed, replicates=args.replicates, threads=args.threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args)
        preflight(args.command, cfg)
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        verdict, result, table = dispatch(args.command, cfg)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out = output_dir(args.out, cfg.data["output_dir"])
    meta = file_meta(args.command, cfg)
    stem = args.command.replace("-", "_")
    if verdict is not None:
        result = {**result, "verdict": verdict}
    if args.format in ("json", "both") or table is None:
        write_json(out / f"{stem}.json", meta, result)
    if table is not None and args.format in ("csv", "both"):
        write_csv(out / f"{stem}.csv", meta, *table)
    print(f"{args.command}: {verdict or 'done'} ({out})")
    return EXIT_FAIL if verdict == "fail" else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
