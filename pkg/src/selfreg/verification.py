"""Generator algebra on the duality function and Monte Carlo checks.

The duality function is

    H((alpha, kappa), x) = exp(-sum_xi alpha_xi xbar_xi) * prod_{xi,m} (x^m_xi)^(kappa^m_xi)

with 0^0 = 1.  With a site-dependent ``mu`` in place of ``alpha`` the same
expression is the separating family f_{mu,kappa} used for martingale tests,
so everything below is written for general ``alpha``.

The generator identity Omega_X H = Omega_dual H + beta H is checked pointwise
with both sides in closed form.  It relies on the kernel rows of ``a`` and
``abar`` summing to one (true for every translation-invariant torus kernel).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion_engine import mean_se, migration_term, run_coupled, run_diffusion
from .dual_engine import FK_CLIP, fk_weight, run_dual
from .geometry import Geography, build_torus
from .model import ModelParams
from .particle_engine import as_site_array, generator_apply, init_particles, run_particles

Z_TOL = 3.0
MIN_REPLICATES = 1000
FD_STEP_FIRST = 1e-6
FD_STEP_SECOND = 1e-4


@dataclass
class DualityPoint:
    alpha: np.ndarray           # (G,)
    kappa: np.ndarray           # (G, M) integers
    x: np.ndarray               # (G, M)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.kappa = np.asarray(self.kappa, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=float)
        G = self.alpha.shape[0]
        if self.alpha.ndim != 1 or self.kappa.ndim != 2 or self.kappa.shape[0] != G:
            raise ValueError("alpha must be (G,) and kappa (G, M)")
        if self.x.shape != self.kappa.shape:
            raise ValueError("x and kappa must have the same shape")
        if (np.any(self.alpha < 0) or np.any(self.kappa < 0) or np.any(self.x < 0)
                or not np.all(np.isfinite(self.alpha)) or not np.all(np.isfinite(self.x))):
            raise ValueError("duality points must be finite and nonnegative")


# ---------------------------------------------------------------- closed forms

def duality_function(alpha, kappa, x) -> np.ndarray:
    """H((alpha, kappa), x) for x of shape (..., G, M)."""
    alpha = np.asarray(alpha, dtype=float)
    kappa = np.asarray(kappa)
    x = np.asarray(x, dtype=float)
    expo = np.exp(-np.sum(alpha * x.sum(axis=-1), axis=-1))
    return expo * np.prod(x ** kappa, axis=(-2, -1))


def H(point: DualityPoint) -> float:
    return float(duality_function(point.alpha, point.kappa, point.x))


def _shifted(alpha, kappa, x, xi, m, d):
    k = np.array(kappa, dtype=np.int64)
    k[xi, m] -= d
    return duality_function(alpha, k, x)


def beta_weight(alpha, kappa, params: ModelParams) -> float:
    """gamma * sum_xi [sum_m C(kappa^m_xi, 2) - alpha_xi kbar_xi + K kbar_xi]."""
    gamma, K, _ = params.scalars()
    alpha = np.asarray(alpha, dtype=float)
    kappa = np.asarray(kappa, dtype=np.int64)
    kbar = kappa.sum(axis=1)
    pairs = (kappa * (kappa - 1) // 2).sum(axis=1)
    return float(gamma * np.sum(pairs - alpha * kbar + K * kbar))


def forward_drift(geo: Geography, params: ModelParams, x) -> np.ndarray:
    """Drift of the forward diffusion for x of shape (..., G, M)."""
    x = np.asarray(x, dtype=float)
    return migration_term(geo, x) + params.gamma * x * (params.K - x @ params.lam.T)


def partials(alpha, kappa, x):
    """First and second partial derivatives of H in each x^m_xi, shape (..., G, M)."""
    alpha = np.asarray(alpha, dtype=float)
    kappa = np.asarray(kappa, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    h0 = duality_function(alpha, kappa, x)[..., None, None]
    d1 = -alpha[:, None] * h0 * np.ones_like(x)
    d2 = alpha[:, None] ** 2 * h0 * np.ones_like(x)
    for xi, m in zip(*np.nonzero(kappa)):
        k = kappa[xi, m]
        h1 = _shifted(alpha, kappa, x, xi, m, 1)
        d1[..., xi, m] += k * h1
        d2[..., xi, m] += -2.0 * alpha[xi] * k * h1
        if k >= 2:
            d2[..., xi, m] += k * (k - 1) * _shifted(alpha, kappa, x, xi, m, 2)
    return d1, d2


def omega_x(alpha, kappa, x, geo: Geography, params: ModelParams, *,
            diffusive: bool = True) -> np.ndarray:
    """Forward generator applied to H(alpha, kappa, .) at x (shape (..., G, M)).

    ``diffusive=False`` drops the second-order term, giving the generator of
    the noise-free drift ODE.
    """
    x = np.asarray(x, dtype=float)
    d1, d2 = partials(alpha, kappa, x)
    drift = forward_drift(geo, params, x)
    if not diffusive:
        return np.sum(drift * d1, axis=(-2, -1))
    return np.sum(drift * d1 + 0.5 * params.gamma * x * d2, axis=(-2, -1))


def omega_x_fd(alpha, kappa, x, geo: Geography, params: ModelParams,
               h1: float = FD_STEP_FIRST, h2: float = FD_STEP_SECOND) -> float:
    """Finite-difference evaluation of the forward generator at one point x (G, M).

    H is a polynomial times an exponential, so it extends smoothly to
    slightly negative arguments and central differences are used everywhere.
    """
    x = np.asarray(x, dtype=float)
    G, M = x.shape
    f = lambda y: float(duality_function(alpha, kappa, y))
    base = f(x)
    drift = forward_drift(geo, params, x)
    out = 0.0
    for xi in range(G):
        for m in range(M):
            e = np.zeros_like(x)
            e[xi, m] = 1.0
            d1 = (f(x + h1 * e) - f(x - h1 * e)) / (2 * h1)
            d2 = (f(x + h2 * e) - 2 * base + f(x - h2 * e)) / (h2 * h2)
            out += drift[xi, m] * d1 + 0.5 * params.gamma[m] * x[xi, m] * d2
    return out


def omega_dual(point: DualityPoint, geo: Geography, params: ModelParams) -> float:
    """Dual generator applied to H(., x) at (alpha, kappa)."""
    gamma, K, lam = params.scalars()
    alpha, kappa, x = point.alpha, point.kappa, point.x
    G, M = kappa.shape
    h0 = float(duality_function(alpha, kappa, x))
    xbar = x.sum(axis=1)
    kbar = kappa.sum(axis=1)
    a = geo.dense("a")
    abar = geo.dense("abar")
    out = 0.0
    for xi, m in zip(*np.nonzero(kappa)):
        k = int(kappa[xi, m])
        for eta in np.flatnonzero(abar[xi]):
            if eta == xi:
                continue
            moved = kappa.copy()
            moved[xi, m] -= 1
            moved[eta, m] += 1
            out += k * abar[xi, eta] * (float(duality_function(alpha, moved, x)) - h0)
        if k >= 2:
            out += gamma * k * (k - 1) / 2 * (float(_shifted(alpha, kappa, x, xi, m, 1)) - h0)
    mig = a @ alpha - a.sum(axis=1) * alpha
    drift = mig + gamma * alpha * (K - 0.5 * alpha) + gamma * lam * kbar
    out += float(np.sum(drift * (-xbar) * h0))
    out += float(gamma * lam * np.sum(alpha * xbar ** 2) * h0)
    return out


def generator_identity_residual(point: DualityPoint, params: ModelParams, geo: Geography) -> float:
    """|Omega_X H - Omega_dual H - beta H| / (1 + |Omega_X H|)."""
    if not params.exchangeable:
        raise ValueError("the generator identity needs exchangeable parameters")
    if point.alpha.shape[0] != geo.n_sites or point.kappa.shape[1] != params.M:
        raise ValueError("point does not match geography and model")
    lhs = float(omega_x(point.alpha, point.kappa, point.x, geo, params))
    rhs = omega_dual(point, geo, params) + beta_weight(point.alpha, point.kappa, params) * H(point)
    return abs(lhs - rhs) / (1.0 + abs(lhs))


def random_point_cloud(n: int, seed: int, *, max_sites: int = 9, max_types: int = 3,
                       max_kbar: int = 4, alpha_max: float = 3.0, x_max: float = 3.0):
    """Random (point, params, geography) triples for the generator identity.

    Geographies are 1-d tori of side 1..max_sites and 2-d tori of side 2 or 3
    with random (possibly asymmetric) step distributions.
    """
    rng = np.random.default_rng(seed)
    geos = {}
    for _ in range(n):
        if rng.random() < 0.7 or max_sites < 4:
            dim, side = 1, int(rng.integers(1, max_sites + 1))
        else:
            dim, side = 2, int(rng.integers(2, 4 if max_sites >= 9 else 3))
        key = (dim, side, int(rng.integers(0, 4)))
        if key not in geos:
            offsets = [tuple(int(v) for v in rng.integers(-1, 2, size=dim)) for _ in range(3)]
            w = rng.random(len(offsets)) + 0.05
            steps = {}
            for o, wi in zip(offsets, w / w.sum()):
                steps[o] = steps.get(o, 0.0) + float(wi)
            geos[key] = build_torus(dim, side, steps)
        geo = geos[key]
        G = geo.n_sites
        M = int(rng.integers(1, max_types + 1))
        params = ModelParams.exchangeable_model(M, float(rng.uniform(0.2, 2.0)),
                                                float(rng.uniform(0.0, 2.0)),
                                                float(rng.uniform(0.1, 1.5)))
        kappa = np.zeros((G, M), dtype=np.int64)
        for _ in range(int(rng.integers(0, max_kbar + 1))):
            kappa[rng.integers(G), rng.integers(M)] += 1
        alpha = rng.uniform(0, alpha_max, G) * (rng.random(G) < 0.7)
        x = rng.uniform(0, x_max, (G, M)) * (rng.random((G, M)) < 0.9)
        yield DualityPoint(alpha, kappa, x), params, geo


def generator_check(n: int = 10_000, seed: int = 0, *, fd_points: int = 200) -> dict:
    """Max closed-form residual over a random cloud and the finite-difference gap."""
    worst = 0.0
    fd_worst = 0.0
    for i, (pt, params, geo) in enumerate(random_point_cloud(n, seed)):
        worst = max(worst, float(generator_identity_residual(pt, params, geo)))
        if i < fd_points:
            exact = float(omega_x(pt.alpha, pt.kappa, pt.x, geo, params))
            approx = omega_x_fd(pt.alpha, pt.kappa, pt.x, geo, params)
            fd_worst = max(fd_worst, float(abs(exact - approx) / (1.0 + abs(exact))))
    return {"points": n, "max_residual": worst, "fd_points": min(fd_points, n),
            "fd_max_gap": fd_worst}


# ---------------------------------------------------------------- Monte Carlo checks

def _z(a, sa, b, sb):
    s = math.hypot(sa, sb)
    if s == 0:
        return 0.0 if a == b else math.copysign(math.inf, a - b)
    return (a - b) / s


def _verdict(z, replicates, extra_fail=False):
    if extra_fail:
        return "fail"
    if replicates < MIN_REPLICATES:
        return "inconclusive"
    return "pass" if abs(z) <= Z_TOL else "fail"


def duality_check(geo: Geography, params: ModelParams, x0, alpha0, kappa0, t: float, seed: int, *,
                  replicates: int = 100_000, dual_replicates: int | None = None,
                  dt: float = 1e-3, forward_scheme: str = "full_truncation",
                  dual_scheme: str = "qe", threads: int = 1) -> dict:
    """Two independent Monte Carlo estimates of both sides of the duality relation."""
    if not params.exchangeable:
        raise ValueError("the duality holds only for exchangeable parameters")
    G, M = geo.n_sites, params.M
    x = as_site_array(x0, G, M)
    alpha = np.asarray(alpha0, dtype=float) * np.ones(G)
    kappa = np.asarray(kappa0, dtype=np.int64)
    n_dual = replicates if dual_replicates is None else dual_replicates
    trivial = bool(np.all(alpha == 0) and np.all(kappa == 0))
    if t == 0:
        h = float(duality_function(alpha, kappa, x))
        return {"lhs": h, "lhs_se": 0.0, "rhs": h, "rhs_se": 0.0, "z": 0.0, "replicates": replicates,
                "dual_replicates": n_dual, "fk_clipped": 0, "trivial": trivial, "verdict": "pass"}
    fw = run_diffusion(x, geo, params, [0.0, t], seed, dt=dt, replicates=replicates,
                       scheme=forward_scheme, threads=threads)
    lhs_s = duality_function(alpha, kappa, fw.x[:, -1])
    du = run_dual(alpha, kappa, geo, params, [t], seed, dt=dt, replicates=n_dual,
                  scheme=dual_scheme, threads=threads)
    w, clipped = fk_weight(du.fk[:, -1])
    rhs_s = w * np.exp(-du.alpha[:, -1] @ x.sum(axis=1)) * np.prod(
        x[None] ** du.kappa[:, -1], axis=(-2, -1))
    lhs, lhs_se = mean_se(lhs_s)
    rhs, rhs_se = mean_se(rhs_s)
    z = _z(float(lhs), float(lhs_se), float(rhs), float(rhs_se))
    return {"lhs": float(lhs), "lhs_se": float(lhs_se), "rhs": float(rhs), "rhs_se": float(rhs_se),
            "z": z, "replicates": replicates, "dual_replicates": n_dual, "fk_clipped": clipped,
            "trivial": trivial, "verdict": _verdict(z, min(replicates, n_dual), clipped > 0),
            "engine": {"forward": fw.meta, "dual": du.meta}}


def _trapezoid(values, dt_obs):
    return dt_obs * (0.5 * values[:, 0] + values[:, 1:-1].sum(axis=1) + 0.5 * values[:, -1])


def martingale_residual(mu, kappa, engine: str, geo: Geography, params: ModelParams, x0, t: float,
                        seed: int, *, replicates: int = 100_000, grid: float = 0.01,
                        dt: float = 1e-3, eps: float = 1.0, scheme: str = "full_truncation",
                        noise: bool = True, chunk: int = 10_000, threads: int = 1) -> dict:
    """Monte Carlo mean of f(X_t) - f(X_0) - int_0^t Omega f(X_s) ds for f = f_{mu,kappa}.

    The time integral is the trapezoid rule on snapshots every ``grid``; its
    expectation is the trapezoid rule applied to a smooth function of time,
    so the quadrature bias is second order in ``grid``.  With ``noise=False``
    the diffusion runs as its drift ODE and is tested against the drift-only
    generator, so the residual is pure time-discretisation error.  At t = 0
    the residual is exactly zero and no simulation is run.
    """
    mu = np.asarray(mu, dtype=float) * np.ones(geo.n_sites)
    kappa = np.asarray(kappa, dtype=np.int64)
    if np.any(mu < 0):
        raise ValueError("mu must be nonnegative")
    if np.any((kappa.sum(axis=1) > 0) & (mu <= 0)):
        raise ValueError("mu must be positive wherever kappa is nonzero")
    if engine not in ("diffusion", "particle"):
        raise ValueError("engine must be 'diffusion' or 'particle'")
    if t == 0:
        return {"engine": engine, "mean": 0.0, "se": 0.0, "z": 0.0, "replicates": replicates,
                "grid": grid, "dt": dt if engine == "diffusion" else None,
                "eps": eps if engine == "particle" else None,
                "verdict": _verdict(0.0, replicates)}
    n_obs = int(round(t / grid))
    if n_obs < 1 or abs(n_obs * grid - t) > 1e-9 * max(1.0, t):
        raise ValueError("t must be a positive multiple of the grid step")
    obs = np.arange(n_obs + 1) * grid
    obs[-1] = t
    f = lambda y: duality_function(mu, kappa, y)
    pieces = []
    for first in range(0, replicates, chunk):
        n = min(chunk, replicates - first)
        if engine == "diffusion":
            tr = run_diffusion(x0, geo, params, obs, seed, dt=dt, replicates=n, rep_start=first,
                               scheme=scheme, noise=noise, threads=threads)
            xs = tr.x
            gen = omega_x(mu, kappa, xs, geo, params, diffusive=noise)
        else:
            state = init_particles(geo, params, x0, eps)
            tr = run_particles(state, geo, params, t, obs, seed, replicates=n, rep_start=first,
                               threads=threads)
            xs = tr.mass
            gen = generator_apply(f, tr.counts, geo, params, eps)
        fx = f(xs)
        pieces.append(fx[:, -1] - fx[:, 0] - _trapezoid(gen, grid))
    res = np.concatenate(pieces)
    mean, se = mean_se(res)
    z = _z(float(mean), float(se), 0.0, 0.0)
    return {"engine": engine, "mean": float(mean), "se": float(se), "z": z,
            "replicates": replicates, "grid": grid, "dt": dt if engine == "diffusion" else None,
            "eps": eps if engine == "particle" else None,
            "verdict": _verdict(z, replicates)}


def coexistence_functional(x, site: int, ti: int = -1):
    """Mean and SE of x^1_site * x^2_site from (replicates, T, G, M) snapshots."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise ValueError("coexistence needs at least two types")
    prod = x[:, ti, site, 0] * x[:, ti, site, 1]
    m, se = mean_se(prod)
    return float(m), float(se)


def theta_monotonicity_check(theta_low: float, theta_high: float, geo: Geography,
                             params: ModelParams, t: float, seed: int, *, site: int = 0,
                             replicates: int = 10_000, dt: float = 1e-3,
                             scheme: str = "full_truncation", threads: int = 1) -> dict:
    """E[x~1 x~2] >= (theta_low / theta_high)^2 E[x1 x2] for coupled constant starts.

    Both runs share every Brownian increment; the tolerance is 3 SEs of the
    paired difference, which is what the coupling buys.
    """
    if params.M < 2:
        raise ValueError("coexistence needs at least two types")
    if not 0 <= theta_low <= theta_high or theta_high <= 0:
        raise ValueError("need 0 <= theta_low <= theta_high with theta_high > 0")
    low, high = run_coupled([theta_low, theta_high], geo, params, [0.0, t], seed, dt=dt,
                            replicates=replicates, scheme=scheme, threads=threads)
    ratio = (theta_low / theta_high) ** 2
    pl = low.x[:, -1, site, 0] * low.x[:, -1, site, 1]
    ph = high.x[:, -1, site, 0] * high.x[:, -1, site, 1]
    lm, lse = mean_se(pl)
    hm, hse = mean_se(ph)
    dm, dse = mean_se(pl - ratio * ph)
    holds = bool(dm >= -Z_TOL * dse)
    return {"theta_low": theta_low, "theta_high": theta_high, "t": t, "lhs": float(lm),
            "lhs_se": float(lse), "rhs": float(ratio * hm), "rhs_se": float(ratio * hse),
            "paired_diff": float(dm), "paired_se": float(dse), "holds": holds,
            "replicates": replicates,
            "verdict": ("inconclusive" if replicates < MIN_REPLICATES else
                        "pass" if holds else "fail")}


__all__ = ["DualityPoint", "H", "beta_weight", "coexistence_functional", "duality_check",
           "duality_function", "generator_check", "generator_identity_residual",
           "martingale_residual", "omega_dual", "omega_x", "omega_x_fd", "partials",
           "random_point_cloud", "theta_monotonicity_check", "FK_CLIP"]
