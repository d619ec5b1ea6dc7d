"""Simulation of the dual process (alpha, kappa).

kappa is a spatial coalescent: every particle of type m at xi jumps to eta at
rate abar(xi, eta), and every unordered pair of same-type particles at one
site merges at rate gamma.  kappa never reads alpha, so it is simulated
exactly and event by event.  alpha is a square-root diffusion driven by
kappa through the immigration term,

    dalpha_xi = [sum_eta a(xi,eta)(alpha_eta - alpha_xi) + gamma alpha_xi (K - alpha_xi / 2)
                 + gamma lam kbar_xi] dt + sqrt(2 gamma lam alpha_xi) dW_xi,

integrated on a grid refined to contain every kappa jump time, together with
the Feynman-Kac exponent

    gamma * int [sum C(kappa^m_xi, 2) + sum (K - alpha_xi) kbar_xi] ds

(trapezoid in alpha, exact in the piecewise-constant kappa).

The default alpha scheme is ``qe`` (see :mod:`selfreg.diffusion_engine`):
alpha sites adjacent to dual particles start at zero and are fed only by
migration, which is exactly where clamped Euler schemes carry a bias that
does not vanish with ``dt``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _pycore
from .backend import get_backend
from .diffusion_engine import SCHEMES, mean_se, run_diffusion
from .errors import NumericalAbort
from .geometry import Geography, from_matrix
from .model import ModelParams
from .runner import run_chunked

DEFAULT_DT = 1e-3
DEFAULT_SCHEME = "qe"
FK_CLIP = 50.0


def _scalars(params: ModelParams):
    if not params.exchangeable:
        raise ValueError("the dual process is only defined for exchangeable parameters")
    return params.scalars()


def _check_kappa(kappa0, G: int, M: int | None = None) -> np.ndarray:
    kap = np.asarray(kappa0)
    if kap.ndim != 2 or kap.shape[0] != G or (M is not None and kap.shape[1] != M):
        raise ValueError(f"kappa must have shape ({G}, {M if M is not None else 'M'})")
    if not np.issubdtype(kap.dtype, np.integer):
        if np.any(kap != np.round(kap)):
            raise ValueError("kappa must be integer valued")
    kap = np.ascontiguousarray(kap, dtype=np.int64)
    if np.any(kap < 0):
        raise ValueError("kappa must be nonnegative")
    return kap


def _check_alpha(alpha0, G: int) -> np.ndarray:
    a = np.asarray(alpha0, dtype=float)
    if a.ndim == 0:
        a = np.full(G, float(a))
    if a.shape != (G,):
        raise ValueError(f"alpha must have shape ({G},)")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("alpha must be finite and nonnegative")
    return np.ascontiguousarray(a)


@dataclass
class DualState:
    alpha: np.ndarray           # (G,)
    kappa: np.ndarray           # (G, M) integers
    fk_integral: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        self.alpha = _check_alpha(self.alpha, np.asarray(self.kappa).shape[0])
        self.kappa = _check_kappa(self.kappa, self.alpha.shape[0])

    @property
    def kbar(self) -> np.ndarray:
        return self.kappa.sum(axis=1)

    @property
    def n_particles(self) -> int:
        return int(self.kappa.sum())


def total_dual_mass(state) -> float | np.ndarray:
    """Sum of alpha over sites (last axis when given an array)."""
    alpha = state.alpha if isinstance(state, DualState) else np.asarray(state, dtype=float)
    return alpha.sum(axis=-1) if alpha.ndim > 1 else float(alpha.sum())


# ---------------------------------------------------------------- kappa

@dataclass
class KappaPath:
    times: np.ndarray           # jump times, starting with 0
    states: np.ndarray          # (n_jumps + 1, G, M)
    horizon: float

    def at(self, t: float) -> np.ndarray:
        if t < 0 or t > self.horizon:
            raise ValueError("time outside the simulated window")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[i]

    @property
    def n_jumps(self) -> int:
        return len(self.times) - 1

    def particle_counts(self) -> np.ndarray:
        return self.states.sum(axis=(1, 2))

    def hitting_time(self, n: int) -> float:
        """First time the total particle count is at most ``n`` (inf if never)."""
        hit = np.flatnonzero(self.particle_counts() <= n)
        return float(self.times[hit[0]]) if hit.size else math.inf


def simulate_kappa(kappa0, geo: Geography, gamma: float, horizon: float, seed: int, *,
                   replicate: int = 0, max_jumps: int = 10**7,
                   backend: str | None = None) -> KappaPath:
    """Exact event-driven path of the coalescing random walks up to ``horizon``."""
    gamma = float(np.ravel(gamma)[0]) if np.ndim(gamma) else float(gamma)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not horizon >= 0:
        raise ValueError("horizon must be nonnegative")
    kap = _check_kappa(kappa0, geo.n_sites)
    off = geo.offdiag("abar")
    k = get_backend(backend)
    times, states = k.kappa_path(int(seed), int(replicate), kap, off.ptr, off.idx, off.cum,
                                 off.out_rate, gamma, float(horizon), int(max_jumps))
    return KappaPath(np.asarray(times, dtype=float), np.asarray(states, dtype=np.int64), float(horizon))


# ---------------------------------------------------------------- alpha

@dataclass
class DualTrajectory:
    times: np.ndarray
    alpha: np.ndarray           # (replicates, T, G)
    kappa: np.ndarray           # (replicates, T, G, M)
    fk: np.ndarray              # (replicates, T)
    status: np.ndarray
    bound_ok: np.ndarray        # pathwise comparison flag per replicate
    dt: float
    scheme: str
    rep_start: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def replicates(self) -> int:
        return self.alpha.shape[0]

    @property
    def total_mass(self) -> np.ndarray:
        return self.alpha.sum(axis=-1)

    def state(self, replicate: int, ti: int = -1) -> DualState:
        return DualState(self.alpha[replicate, ti], self.kappa[replicate, ti],
                         float(self.fk[replicate, ti]), float(self.times[ti]))


def _alpha_args(geo: Geography, params: ModelParams, dt: float, scheme: str):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    gamma, K, lam = _scalars(params)
    return geo.offdiag("a"), gamma, K, lam


def simulate_alpha_given_kappa(alpha0, kappa_path: KappaPath, geo: Geography, params: ModelParams,
                               dt: float, seed: int, *, replicate: int = 0, observation_times=None,
                               scheme: str = DEFAULT_SCHEME) -> DualTrajectory:
    """Integrate alpha and the Feynman-Kac exponent along a fixed kappa path.

    The alpha noise comes from ``(seed, replicate)``; the kappa path is never
    modified, so different alpha seeds share it exactly.
    """
    off, gamma, K, lam = _alpha_args(geo, params, dt, scheme)
    G = geo.n_sites
    alpha = _check_alpha(alpha0, G)
    if kappa_path.states.shape[1] != G:
        raise ValueError("kappa path lives on a different geography")
    M = kappa_path.states.shape[2]
    obs = (np.array([kappa_path.horizon]) if observation_times is None
           else np.asarray(observation_times, dtype=float))
    if np.any(np.diff(obs) < 0) or (obs.size and (obs[0] < 0 or obs[-1] > kappa_path.horizon)):
        raise ValueError("observation times must be sorted and inside the kappa window")
    clock = _pycore.ReplayClock(kappa_path.times, kappa_path.states)
    n0 = float(kappa_path.states[0].sum())
    a, kk, f, st, ok, _ = _pycore.dual_one(
        int(seed), int(replicate), [float(v) for v in alpha], clock, G, M,
        [int(v) for v in off.ptr], [int(v) for v in off.idx], [float(v) for v in off.val],
        gamma, K, lam, float(dt), float(obs[-1]) if obs.size else 0.0, [float(v) for v in obs],
        SCHEMES[scheme], n0)
    if st != 0:
        raise NumericalAbort(f"replicate {replicate}: non-finite dual state")
    return DualTrajectory(obs, np.asarray(a)[None], np.asarray(kk, dtype=np.int64).reshape(1, -1, G, M),
                          np.asarray(f)[None], np.array([st], dtype=np.int8),
                          np.array([ok], dtype=np.uint8), float(dt), scheme, int(replicate),
                          {"engine": "dual", "backend": "python", "dt": dt, "scheme": scheme})


def run_dual(alpha0, kappa0, geo: Geography, params: ModelParams, observation_times, seed: int, *,
             dt: float = DEFAULT_DT, replicates: int = 1, rep_start: int = 0,
             scheme: str = DEFAULT_SCHEME, threads: int = 1, backend: str | None = None,
             raise_on_nonfinite: bool = True) -> DualTrajectory:
    """Simulate ``replicates`` independent dual paths from a deterministic start."""
    off, gamma, K, lam = _alpha_args(geo, params, dt, scheme)
    G = geo.n_sites
    alpha = _check_alpha(alpha0, G)
    kap = _check_kappa(kappa0, G)
    obs = np.ascontiguousarray(observation_times, dtype=float)
    if np.any(np.diff(obs) < 0) or (obs.size and obs[0] < 0):
        raise ValueError("observation times must be sorted and nonnegative")
    horizon = float(obs[-1]) if obs.size else 0.0
    offb = geo.offdiag("abar")
    k = get_backend(backend)

    def chunk(first, n):
        return k.dual_batch(int(seed), int(first), int(n), alpha, kap, off.ptr, off.idx, off.val,
                            offb.ptr, offb.idx, offb.cum, offb.out_rate, gamma, K, lam, float(dt),
                            horizon, obs, SCHEMES[scheme])

    a, kk, f, status, ok = run_chunked(chunk, replicates, threads=threads, rep_start=rep_start)
    if raise_on_nonfinite and np.any(status != 0):
        bad = int(np.flatnonzero(status != 0)[0]) + rep_start
        raise NumericalAbort(f"replicate {bad} produced a non-finite dual state")
    meta = {"engine": "dual", "backend": k.BACKEND, "dt": dt, "scheme": scheme, "fk_clip": FK_CLIP}
    return DualTrajectory(obs, a, kk, f, status, ok, float(dt), scheme, rep_start, meta)


def fk_weight(fk_integral, clip: float = FK_CLIP):
    """exp(min(fk, clip)) and the number of clipped entries."""
    fk = np.asarray(fk_integral, dtype=float)
    clipped = fk > clip
    return np.exp(np.minimum(fk, clip)), int(clipped.sum())


# ---------------------------------------------------------------- comparison process

def comparison_samples(total0: float, n0: int, params: ModelParams, observation_times, seed: int, *,
                       dt: float = DEFAULT_DT, replicates: int = 1000, threads: int = 1) -> np.ndarray:
    """Samples of the nonspatial process dominating the total dual mass.

    d abar = (gamma K abar + gamma lam n0) dt + sqrt(2 gamma lam abar) dB, run as
    a one-site diffusion with rescaled constants.  Returns (replicates, T).
    """
    gamma, K, lam = _scalars(params)
    if not lam > 0:
        raise ValueError("the comparison process needs lambda > 0")
    single = from_matrix(np.ones((1, 1)))
    p = ModelParams(np.array([2 * gamma * lam]), np.array([K / (2 * lam)]), np.zeros((1, 1)))
    tr = run_diffusion(float(total0), single, p, observation_times, seed, dt=dt,
                       replicates=replicates, scheme="qe", immigration=gamma * lam * n0,
                       threads=threads)
    return tr.x[:, :, 0, 0]


def quantile_dominance(sample, bound, levels=(0.1, 0.25, 0.5, 0.75, 0.9)) -> dict:
    """Check q_p(sample) <= q_p(bound) up to 3 SEs of the difference of quantiles.

    Quantile SEs use the asymptotic order-statistic formula with a kernel
    density estimate at the quantile.
    """
    out = []
    ok = True
    for p in levels:
        qs, ses = quantile_se(sample, p)
        qb, seb = quantile_se(bound, p)
        tol = 3.0 * math.hypot(ses, seb)
        holds = qs <= qb + tol
        ok &= holds
        out.append({"level": p, "q_sample": qs, "q_bound": qb, "tolerance": tol, "holds": bool(holds)})
    return {"holds": bool(ok), "levels": out}


def quantile_se(x, p: float):
    """Sample quantile and its asymptotic standard error."""
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    q = float(np.quantile(x, p))
    # density at q from the spacing of order statistics around it
    h = max(int(round(n ** 0.5)), 1)
    i = min(max(int(p * n), h), n - 1 - h) if n > 2 * h + 1 else None
    if i is None:
        return q, float("inf")
    spread = x[i + h] - x[i - h]
    if spread <= 0:
        return q, 0.0
    dens = 2 * h / (n * spread)
    return q, math.sqrt(p * (1 - p) / n) / dens


# ---------------------------------------------------------------- output

def dual_rows(traj: DualTrajectory):
    """Rows (replicate, time, site, alpha, kbar, kappa_0, ..., kappa_{M-1})."""
    R, T, G = traj.alpha.shape
    for r in range(R):
        for ti in range(T):
            for xi in range(G):
                kap = traj.kappa[r, ti, xi]
                yield (traj.rep_start + r, float(traj.times[ti]), xi, float(traj.alpha[r, ti, xi]),
                       int(kap.sum()), *(int(v) for v in kap))


def dual_summary(traj: DualTrajectory) -> dict:
    """Distribution statistics of the Feynman-Kac exponent and the total mass per time."""
    rows = []
    for ti, t in enumerate(traj.times):
        fk = traj.fk[:, ti]
        mass = traj.total_mass[:, ti]
        mm, mse = mean_se(mass) if traj.replicates > 1 else (float(mass[0]), 0.0)
        rows.append({"time": float(t),
                     "fk_mean": float(fk.mean()), "fk_sd": float(fk.std()),
                     "fk_min": float(fk.min()), "fk_max": float(fk.max()),
                     "fk_quantiles": [float(v) for v in np.quantile(fk, [0.05, 0.5, 0.95])],
                     "fk_clipped": fk_weight(fk)[1],
                     "mass_mean": float(mm), "mass_se": float(mse),
                     "mass_median": float(np.median(mass))})
    return {"replicates": traj.replicates, "rows": rows,
            "pathwise_bound_fraction": float(traj.bound_ok.mean()) if traj.replicates else 1.0}
