"""Scripted convergence studies.

Every study returns a :class:`StudyResult` whose rows carry Monte Carlo
means with standard errors.  Trends are only asserted between rows whose
difference exceeds three combined standard errors; anything closer is
reported as unresolved and makes the verdict ``inconclusive`` rather than
``pass`` or ``fail``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .diffusion_engine import DEFAULT_DT, mean_se, run_diffusion
from .dual_engine import comparison_samples, quantile_dominance, quantile_se, run_dual
from .geometry import Geography, build_torus
from .model import ModelParams
from .particle_engine import (as_site_array, centred_window, freeze_outside, init_particles,
                              run_particles)
from .verification import Z_TOL, theta_monotonicity_check

KINDS = ("diffusion_limit", "domain_growth", "moment_bounds", "dual_mass_growth", "coexistence")


@dataclass
class Scenario:
    """Geography, model, deterministic initial state and horizon of a run."""
    geo: Geography
    params: ModelParams
    x0: object = 1.0
    t: float = 0.5
    dt: float = DEFAULT_DT
    alpha0: object = 0.0
    kappa0: np.ndarray | None = None
    name: str = "custom"

    def initial_state(self) -> np.ndarray:
        return as_site_array(self.x0, self.geo.n_sites, self.params.M)

    def dual_start(self):
        G, M = self.geo.n_sites, self.params.M
        kap = np.zeros((G, M), dtype=np.int64) if self.kappa0 is None else np.asarray(self.kappa0)
        return np.asarray(self.alpha0, dtype=float) * np.ones(G), kap

    def describe(self) -> dict:
        return {"name": self.name, "geography": self.geo.metadata(), "model": self.params.to_dict(),
                "x0": np.asarray(self.x0).tolist(), "t": self.t, "dt": self.dt,
                "alpha0": np.asarray(self.alpha0).tolist(),
                "kappa0": None if self.kappa0 is None else np.asarray(self.kappa0).tolist()}


def reference_scenario(t: float = 0.5) -> Scenario:
    """1-d torus of side 3, nearest-neighbour walk, two exchangeable types.

    gamma = 1, K = 1, lambda = 0.5, x(0) = 1 everywhere; the dual starts with
    one particle of each type at the origin and alpha = 0.
    """
    geo = build_torus(1, 3, {(1,): 0.5, (-1,): 0.5})
    params = ModelParams.exchangeable_model(2, 1.0, 1.0, 0.5)
    kappa0 = np.zeros((3, 2), dtype=np.int64)
    kappa0[0] = 1
    return Scenario(geo, params, 1.0, t, DEFAULT_DT, 0.0, kappa0, "reference")


@dataclass
class StudyPlan:
    kind: str
    grid: list
    scenario: Scenario
    replicates: int = 10_000
    seed: int = 0
    output: str | None = None
    budget_seconds: float | None = None
    threads: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}")
        if len(self.grid) == 0:
            raise ValueError("study grid must be nonempty")
        if self.replicates < 2:
            raise ValueError("at least two replicates are needed for standard errors")


@dataclass
class StudyResult:
    study: str
    verdict: str
    rows: list
    checks: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"study": self.study, "verdict": self.verdict, "rows": self.rows,
                "checks": self.checks, "meta": self.meta}


# ---------------------------------------------------------------- trend logic

def compare_pairs(values, ses, direction: str) -> list[str]:
    """Classify each consecutive pair as 'ok', 'violated' or 'unresolved'.

    ``direction`` is 'increasing' or 'decreasing'.  A step is resolved only
    when the difference exceeds three combined standard errors.
    """
    sign = 1.0 if direction == "increasing" else -1.0
    out = []
    for (a, sa), (b, sb) in zip(zip(values, ses), zip(values[1:], ses[1:])):
        d = sign * (b - a)
        s = Z_TOL * math.hypot(sa, sb)
        out.append("ok" if d > s else "violated" if d < -s else "unresolved")
    return out


def trend_verdict(values, ses, direction: str, *, strict: bool = True) -> str:
    """pass / fail / inconclusive for a monotone trend.

    With ``strict`` every step has to be resolved in the right direction; with
    ``strict=False`` unresolved steps are accepted (the trend holds within SE).
    """
    steps = compare_pairs(values, ses, direction)
    if not steps:
        return "inconclusive"
    if "violated" in steps:
        return "fail"
    if "unresolved" in steps and strict:
        return "inconclusive"
    return "pass"


def combine_verdicts(*verdicts: str) -> str:
    if "fail" in verdicts:
        return "fail"
    if "inconclusive" in verdicts:
        return "inconclusive"
    return "pass"


class _Budget:
    def __init__(self, seconds):
        self.start = time.perf_counter()
        self.seconds = seconds

    def exhausted(self) -> bool:
        return self.seconds is not None and time.perf_counter() - self.start > self.seconds

    def elapsed(self) -> float:
        return time.perf_counter() - self.start


def _finish(plan: StudyPlan, verdict: str, rows, checks, budget: _Budget, truncated: bool,
            extra=None) -> StudyResult:
    meta = {"replicates": plan.replicates, "seed": plan.seed, "grid": list(plan.grid),
            "scenario": plan.scenario.describe(),
            "truncated": truncated}
    if extra:
        meta.update(extra)
    if truncated:
        verdict = "inconclusive"
    return StudyResult(plan.kind, verdict, rows, checks, meta)


# ---------------------------------------------------------------- studies

def _pooled(x):
    """Per-replicate average over sites and types of (replicates, G, M) masses."""
    return np.asarray(x, dtype=float).mean(axis=(-2, -1))


def diffusion_limit_study(plan: StudyPlan) -> StudyResult:
    """Particle system at mass eps against the diffusion, first and second moments.

    The functional is the site-and-type average of the mass at time t (and of
    its square), which is a moment functional for any scenario.
    """
    sc = plan.scenario
    eps_grid = [float(e) for e in plan.grid]
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("eps grid must be strictly decreasing")
    budget = _Budget(plan.budget_seconds)
    x0 = sc.initial_state()
    diff = run_diffusion(x0, sc.geo, sc.params, [0.0, sc.t], plan.seed, dt=sc.dt,
                         replicates=plan.replicates, threads=plan.threads,
                         scheme=plan.options.get("scheme", "full_truncation"))
    d1, d1se = mean_se(_pooled(diff.x[:, -1]))
    d2, d2se = mean_se(_pooled(diff.x[:, -1] ** 2))
    rows, truncated = [], False
    for i, eps in enumerate(eps_grid):
        if budget.exhausted():
            truncated = True
            break
        state = init_particles(sc.geo, sc.params, x0, eps)
        tr = run_particles(state, sc.geo, sc.params, sc.t, [0.0, sc.t], plan.seed,
                           replicates=plan.replicates, rep_start=i * plan.replicates,
                           threads=plan.threads,
                           max_events=int(plan.options.get("max_events", 10**9)))
        p1, p1se = mean_se(_pooled(tr.mass[:, -1]))
        p2, p2se = mean_se(_pooled(tr.mass[:, -1] ** 2))
        rows.append({"eps": eps, "particle_mean": float(p1), "particle_mean_se": float(p1se),
                     "diffusion_mean": float(d1), "diffusion_mean_se": float(d1se),
                     "gap1": float(abs(p1 - d1)), "gap1_se": float(math.hypot(p1se, d1se)),
                     "signed_gap1": float(p1 - d1),
                     "particle_m2": float(p2), "diffusion_m2": float(d2),
                     "gap2": float(abs(p2 - d2)), "gap2_se": float(math.hypot(p2se, d2se)),
                     "mean_events": float(tr.n_events.mean())})
    checks = {}
    if len(rows) >= 2:
        checks["trend"] = trend_verdict([r["gap1"] for r in rows], [r["gap1_se"] for r in rows],
                                        "decreasing")
    else:
        checks["trend"] = "inconclusive"
    if rows:
        last = rows[-1]
        z = last["gap1"] / last["gap1_se"] if last["gap1_se"] > 0 else math.inf
        checks["final_gap_z"] = z
        checks["final_gap"] = "pass" if z <= Z_TOL else "fail"
    if len(rows) >= 2:
        checks["extrapolation"] = _linear_extrapolation([r["eps"] for r in rows],
                                                        [r["signed_gap1"] for r in rows],
                                                        [r["gap1_se"] for r in rows])
    verdict = combine_verdicts(checks.get("trend", "inconclusive"), checks.get("final_gap", "inconclusive"))
    return _finish(plan, verdict, rows, checks, budget, truncated)


def _linear_extrapolation(eps, gaps, ses) -> dict:
    """Weighted least squares gap = c * eps + d; d is the eps -> 0 limit of the gap."""
    eps, gaps, ses = (np.asarray(v, dtype=float) for v in (eps, gaps, ses))
    w = 1.0 / np.maximum(ses, 1e-300) ** 2
    X = np.stack([eps, np.ones_like(eps)], axis=1)
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    coef = cov @ (X.T @ (w * gaps))
    d, d_se = float(coef[1]), float(math.sqrt(cov[1, 1]))
    return {"slope": float(coef[0]), "slope_se": float(math.sqrt(cov[0, 0])), "intercept": d,
            "intercept_se": d_se, "intercept_z": d / d_se if d_se > 0 else math.inf}


def domain_growth_study(plan: StudyPlan) -> StudyResult:
    """Particle system frozen outside a centred window of side L.

    Reports the time average of the origin's total count over the second half
    of [0, t] for each L and the gaps between successive window sizes.  Each
    row draws an independent block of replicates.
    """
    sc = plan.scenario
    L_grid = [int(L) for L in plan.grid]
    if any(b < a for a, b in zip(L_grid, L_grid[1:])):
        raise ValueError("L grid must be sorted")
    budget = _Budget(plan.budget_seconds)
    eps = float(plan.options.get("eps", 1.0))
    n_obs = int(plan.options.get("window_points", 6))
    obs = np.linspace(sc.t / 2, sc.t, n_obs)
    state = init_particles(sc.geo, sc.params, sc.initial_state(), eps)
    origin = sc.geo.origin
    rows, truncated = [], False
    for i, L in enumerate(L_grid):
        if budget.exhausted():
            truncated = True
            break
        active = None if L >= sc.geo.side else freeze_outside(sc.geo, centred_window(sc.geo, L))
        tr = run_particles(state, sc.geo, sc.params, sc.t, obs, plan.seed,
                           replicates=plan.replicates, rep_start=i * plan.replicates,
                           active=active, threads=plan.threads)
        zbar = tr.counts[:, :, origin, :].sum(axis=-1)
        m, se = mean_se(zbar.mean(axis=1))
        occ, occ_se = mean_se((zbar[:, -1] > 0).astype(float))
        rows.append({"L": L, "origin_mean": float(m), "origin_mean_se": float(se),
                     "origin_occupied": float(occ), "origin_occupied_se": float(occ_se)})
    gaps, gap_ses = [], []
    for a, b in zip(rows, rows[1:]):
        gaps.append(abs(b["origin_mean"] - a["origin_mean"]))
        gap_ses.append(math.hypot(a["origin_mean_se"], b["origin_mean_se"]))
    for r, g, s in zip(rows[1:], gaps, gap_ses):
        r["gap_to_previous"] = g
        r["gap_se"] = s
    checks = {"gap_steps": compare_pairs(gaps, gap_ses, "decreasing")}
    if len(gaps) >= 2:
        checks["shrinking"] = trend_verdict(gaps, gap_ses, "decreasing", strict=False)
    elif len(gaps) == 1:
        checks["shrinking"] = "pass" if gaps[0] <= Z_TOL * gap_ses[0] or L_grid[0] == L_grid[1] \
            else "inconclusive"
    else:
        checks["shrinking"] = "inconclusive"
    return _finish(plan, checks["shrinking"], rows, checks, budget, truncated, {"eps": eps})


def rho_weighted_bound(sc: Scenario, t: float) -> np.ndarray:
    """Per-type bound e^{(C+1)t} * sum_xi rho(xi) x^m_xi(0) with C = max gamma * max K."""
    C = sc.params.moment_constant()
    x0 = sc.initial_state()
    return math.exp((C + 1.0) * t) * (sc.geo.rho @ x0)


def moment_bounds_study(plan: StudyPlan) -> StudyResult:
    """rho-weighted first moments of both engines against the exponential bound over a T grid."""
    sc = plan.scenario
    T_grid = sorted(float(t) for t in plan.grid)
    budget = _Budget(plan.budget_seconds)
    obs = [0.0] + [t for t in T_grid if t > 0]
    eps = float(plan.options.get("eps", 1.0))
    diff = run_diffusion(sc.initial_state(), sc.geo, sc.params, obs, plan.seed, dt=sc.dt,
                         replicates=plan.replicates, threads=plan.threads)
    part = run_particles(init_particles(sc.geo, sc.params, sc.initial_state(), eps), sc.geo,
                         sc.params, obs[-1], obs, plan.seed, replicates=plan.replicates,
                         threads=plan.threads)
    rows, ok = [], True
    for ti, t in enumerate(obs):
        if t == 0.0 and 0.0 not in T_grid:
            continue
        bound = rho_weighted_bound(sc, t)
        for name, x in (("diffusion", diff.x), ("particle", part.mass)):
            w = np.einsum("g,rgm->rm", sc.geo.rho, x[:, ti])
            m, se = mean_se(w)
            holds = bool(np.all(m <= bound + Z_TOL * se))
            ok &= holds
            rows.append({"t": t, "engine": name, "rho_mean": m.tolist(), "rho_mean_se": se.tolist(),
                         "bound": bound.tolist(), "holds": holds})
    truncated = budget.exhausted()
    return _finish(plan, "pass" if ok else "fail", rows, {"all_hold": ok}, budget, truncated,
                   {"C": sc.params.moment_constant(), "eps": eps})


def dual_mass_growth_study(plan: StudyPlan) -> StudyResult:
    """Median total dual mass over a T grid and the comparison with the nonspatial bound."""
    sc = plan.scenario
    T_grid = [float(t) for t in plan.grid]
    if any(b <= a for a, b in zip(T_grid, T_grid[1:])):
        raise ValueError("T grid must be strictly increasing")
    alpha0, kappa0 = sc.dual_start()
    gamma, K, lam = sc.params.scalars()
    if kappa0.sum() < 1 or K <= 0 or lam <= 0:
        raise ValueError("dual mass growth needs kbar(0) >= 1, K > 0 and lambda > 0")
    budget = _Budget(plan.budget_seconds)
    du = run_dual(alpha0, kappa0, sc.geo, sc.params, T_grid, plan.seed, dt=sc.dt,
                  replicates=plan.replicates, threads=plan.threads,
                  scheme=plan.options.get("scheme", "qe"))
    mass = du.total_mass
    bound = comparison_samples(float(alpha0.sum()), int(kappa0.sum()), sc.params, [0.0] + T_grid,
                               plan.seed + 1, dt=sc.dt, replicates=plan.replicates,
                               threads=plan.threads)[:, 1:]
    rows, medians, ses, in_law = [], [], [], True
    for ti, T in enumerate(T_grid):
        med, se = quantile_se(mass[:, ti], 0.5)
        dom = quantile_dominance(mass[:, ti], bound[:, ti])
        in_law &= dom["holds"]
        medians.append(med)
        ses.append(se)
        m, mse = mean_se(mass[:, ti])
        rows.append({"T": T, "median": med, "median_se": se, "mean": float(m), "mean_se": float(mse),
                     "q10": float(np.quantile(mass[:, ti], 0.1)),
                     "q90": float(np.quantile(mass[:, ti], 0.9)),
                     "bound_median": float(np.median(bound[:, ti])),
                     "bound_in_law": dom["holds"]})
    checks = {"median_steps": compare_pairs(medians, ses, "increasing"),
              "increasing": trend_verdict(medians, ses, "increasing"),
              "pathwise_bound_fraction": float(du.bound_ok.mean()),
              "bound_in_law": bool(in_law)}
    return _finish(plan, checks["increasing"], rows, checks, budget, budget.exhausted(),
                   {"dual": du.meta})


def coexistence_study(plan: StudyPlan) -> StudyResult:
    """theta-monotonicity of E[x^1 x^2] for each lower level in the grid against the top one."""
    sc = plan.scenario
    thetas = sorted(float(v) for v in plan.grid)
    top = float(plan.options.get("theta", thetas[-1]))
    budget = _Budget(plan.budget_seconds)
    rows, truncated = [], False
    for th in thetas:
        if budget.exhausted():
            truncated = True
            break
        rows.append(theta_monotonicity_check(th, top, sc.geo, sc.params, sc.t, plan.seed,
                                             replicates=plan.replicates, dt=sc.dt,
                                             threads=plan.threads))
    verdict = combine_verdicts(*(r["verdict"] for r in rows)) if rows else "inconclusive"
    return _finish(plan, verdict, rows, {"theta": top}, budget, truncated)


STUDIES = {"diffusion_limit": diffusion_limit_study, "domain_growth": domain_growth_study,
           "moment_bounds": moment_bounds_study, "dual_mass_growth": dual_mass_growth_study,
           "coexistence": coexistence_study}


def run_study(plan: StudyPlan) -> StudyResult:
    return STUDIES[plan.kind](plan)
