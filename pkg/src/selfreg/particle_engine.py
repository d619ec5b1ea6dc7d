"""Exact (Gillespie) simulation of the multi-type branching particle system.

At mass scale ``eps`` every particle carries mass ``eps``; the rates of the
site/type pair ``(xi, m)`` holding ``z`` particles are

* migration ``z (1 - a(xi, xi))`` with target drawn from the renormalised
  off-diagonal row of ``a``;
* birth ``(gamma_m / eps) (1/2 + eps K_m) z``;
* death ``(gamma_m / eps) (1/2 + eps sum_n lambda_mn eps z_n) z``.

The heavy loop lives in the kernel backend; this module holds the state
types, the single-step reference implementation and the drivers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _pycore
from .backend import get_backend
from .errors import ExplosionError
from .geometry import Geography
from .model import ModelParams
from .rng import TAG_MIGRATE, TAG_PARTICLE, CounterStream
from .runner import run_chunked

DEFAULT_MAX_EVENTS = 10 ** 9
CHANNELS = ("migration", "birth", "death")


def as_site_array(x0, n_sites: int, M: int, dtype=float) -> np.ndarray:
    """Broadcast a scalar, per-type vector or (G, M) array to shape (G, M)."""
    arr = np.asarray(x0, dtype=dtype)
    if arr.ndim == 1 and arr.shape[0] != M:
        raise ValueError(f"a 1-d initial state is read per type and needs length {M}")
    return np.ascontiguousarray(np.broadcast_to(arr, (n_sites, M)), dtype=dtype)


@dataclass
class ParticleState:
    counts: np.ndarray
    mass_eps: float = 1.0
    time: float = 0.0
    n_events: int = 0

    @property
    def mass(self) -> np.ndarray:
        return self.mass_eps * self.counts

    def copy(self) -> "ParticleState":
        return ParticleState(self.counts.copy(), self.mass_eps, self.time, self.n_events)


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    site: int
    type: int
    target: int = -1


def init_particles(geo: Geography, params: ModelParams, x0, eps: float) -> ParticleState:
    """z = floor(x0 / eps) per site and type.

    A relative slack of 1e-12 absorbs representation error in the quotient,
    so e.g. 0.3 / 0.1 counts as 3 particles rather than 2.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = as_site_array(x0, geo.n_sites, params.M)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("initial masses must be finite and nonnegative")
    q = x / eps
    z = np.floor(q * (1.0 + 1e-12)).astype(np.int64)
    return ParticleState(z, float(eps))


def freeze_outside(geo: Geography, active_sites) -> np.ndarray:
    """Active-site mask: frozen sites neither branch nor emit migrants.

    Migrants that land on a frozen site stay there (they are absorbed).
    """
    mask = np.zeros(geo.n_sites, dtype=np.uint8)
    idx = np.asarray(list(active_sites), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("active site set must be nonempty")
    if np.any(idx < 0) or np.any(idx >= geo.n_sites):
        raise ValueError("active site index out of range")
    mask[idx] = 1
    return mask


def centred_window(geo: Geography, L: int) -> list[int]:
    """Sites of the box of side L centred at the origin (the first L of each axis, shifted)."""
    if L > geo.side:
        raise ValueError("window larger than the torus")
    half = L // 2
    coords = np.array(np.meshgrid(*[np.arange(-half, L - half)] * geo.dim, indexing="ij"))
    coords = coords.reshape(geo.dim, -1).T
    return sorted({geo.site_index(c) for c in coords})


class EventRateTable:
    """Rates of every (site, type, channel) in a sum tree for O(log n) sampling."""

    def __init__(self, state: ParticleState, geo: Geography, params: ModelParams,
                 active=None, branching: bool = True):
        self.G, self.M = state.counts.shape
        self.eps = state.mass_eps
        self.gamma = [float(v) for v in params.gamma]
        self.K = [float(v) for v in params.K]
        self.lam = [float(v) for v in params.lam.ravel()]
        off = geo.offdiag("a")
        self.off = off
        self.out_rate = [float(v) for v in off.out_rate]
        self.active = [1] * self.G if active is None else [int(v) for v in active]
        self.branching = bool(branching)
        self.z = [int(v) for v in state.counts.ravel()]
        self.tree = _pycore.SumTree(3 * self.G * self.M)
        self.tree.build(self._all_rates())

    def _site(self, xi):
        return _pycore.site_rates(self.z, xi, self.M, self.eps, self.gamma, self.K, self.lam,
                                  self.out_rate, self.active, self.branching)

    def _all_rates(self):
        out = []
        for xi in range(self.G):
            out.extend(self._site(xi))
        return out

    def refresh(self, xi: int):
        for j, r in enumerate(self._site(xi)):
            self.tree.update(3 * self.M * xi + j, r)

    def rate(self, xi: int, m: int, channel: str) -> float:
        return self.tree.leaf(3 * (xi * self.M + m) + CHANNELS.index(channel))

    @property
    def total(self) -> float:
        return self.tree.total

    def recomputed_total(self) -> float:
        return math.fsum(self._all_rates())

    def select(self, u: float):
        leaf = self.tree.select(u)
        st, channel = divmod(leaf, 3)
        xi, m = divmod(st, self.M)
        return xi, m, channel


def step_event(state: ParticleState, table: EventRateTable, rng: CounterStream,
               horizon: float = math.inf):
    """Advance by one event, drawing from the same counter stream as the kernels.

    Returns the new state and an event record; with zero total rate (or when
    the next event falls past ``horizon``) the time jumps to ``horizon``.
    """
    total = table.total
    if total <= 0.0:
        new = state.copy()
        new.time = horizon
        return new, EventRecord(horizon, "none", -1, -1)
    u1, u2 = _pycore.philox_uniform_pair(rng.seed, rng.replicate, TAG_PARTICLE, state.n_events)
    t_new = state.time - math.log(u1) / total
    if t_new > horizon:
        new = state.copy()
        new.time = horizon
        return new, EventRecord(horizon, "none", -1, -1)
    xi, m, channel = table.select(u2)
    z = table.z
    M = table.M
    target = -1
    if channel == 0:
        u3 = _pycore.philox_uniform_pair(rng.seed, rng.replicate, TAG_MIGRATE, state.n_events)[0]
        target = _pycore._pick_target(table.off.ptr, table.off.idx, table.off.cum, xi, u3)
        z[xi * M + m] -= 1
        z[target * M + m] += 1
        table.refresh(xi)
        table.refresh(target)
    else:
        z[xi * M + m] += 1 if channel == 1 else -1
        table.refresh(xi)
    counts = np.asarray(z, dtype=np.int64).reshape(table.G, M)
    new = ParticleState(counts, state.mass_eps, t_new, state.n_events + 1)
    return new, EventRecord(t_new, CHANNELS[channel], xi, m, target)


@dataclass
class ParticleTrajectory:
    times: np.ndarray
    counts: np.ndarray          # (replicates, T, G, M)
    n_events: np.ndarray
    status: np.ndarray
    eps: float
    rep_start: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def mass(self) -> np.ndarray:
        return self.eps * self.counts

    @property
    def replicates(self) -> int:
        return self.counts.shape[0]


def run_particles(state: ParticleState, geo: Geography, params: ModelParams, horizon: float,
                  observation_times, seed: int, *, replicates: int = 1, rep_start: int = 0,
                  active=None, branching: bool = True, max_events: int = DEFAULT_MAX_EVENTS,
                  threads: int = 1, backend: str | None = None,
                  raise_on_explosion: bool = True) -> ParticleTrajectory:
    """Exact trajectories for ``replicates`` independent copies started from ``state``."""
    obs = np.asarray(observation_times, dtype=float)
    if obs.ndim != 1 or np.any(np.diff(obs) < 0):
        raise ValueError("observation times must be a sorted 1-d sequence")
    if obs.size and (obs[0] < state.time or obs[-1] > horizon):
        raise ValueError("observation times must lie in [state.time, horizon]")
    if state.counts.shape != (geo.n_sites, params.M):
        raise ValueError("state shape does not match geography and model")
    k = get_backend(backend)
    off = geo.offdiag("a")
    mask = np.ones(geo.n_sites, dtype=np.uint8) if active is None else np.asarray(active, np.uint8)
    z0 = np.ascontiguousarray(state.counts, dtype=np.int64)
    rel_obs = np.ascontiguousarray(obs - state.time)
    lam = np.ascontiguousarray(params.lam)

    def chunk(first, n):
        return k.particle_batch(int(seed), int(first), int(n), z0, float(state.mass_eps),
                                np.ascontiguousarray(params.gamma), np.ascontiguousarray(params.K),
                                lam, off.ptr, off.idx, off.cum, off.out_rate, mask, int(branching),
                                rel_obs, float(horizon - state.time), int(max_events))

    counts, n_events, status = run_chunked(chunk, replicates, threads=threads, rep_start=rep_start)
    if raise_on_explosion and np.any(status == _pycore.STATUS_EXPLOSION):
        bad = int(np.flatnonzero(status == _pycore.STATUS_EXPLOSION)[0]) + rep_start
        raise ExplosionError(f"replicate {bad} exceeded the event cap of {max_events}")
    meta = {"engine": "particle", "backend": k.BACKEND, "eps": state.mass_eps,
            "max_events": int(max_events), "branching": bool(branching),
            "frozen_sites": int(np.sum(mask == 0))}
    return ParticleTrajectory(obs, counts, n_events, status, state.mass_eps, rep_start, meta)


def tau_leap(state: ParticleState, geo: Geography, params: ModelParams, horizon: float,
             observation_times, seed: int, *, tau: float, replicates: int = 1) -> ParticleTrajectory:
    """Approximate tau-leaping for profiling small eps (never used for acceptance).

    Poisson event counts per step are drawn from ``numpy.random.Generator``;
    deaths are capped at the current count.
    """
    rng = np.random.default_rng(seed)
    obs = np.asarray(observation_times, dtype=float)
    G, M = state.counts.shape
    eps = state.mass_eps
    a = geo.dense("a")
    off = a - np.diag(np.diag(a))
    row = off.sum(axis=1, keepdims=True)
    probs = np.divide(off, row, out=np.zeros_like(off), where=row > 0)
    out = np.zeros((replicates, obs.size, G, M), dtype=np.int64)
    for r in range(replicates):
        z = state.counts.copy()
        t, oi = state.time, 0
        while oi < obs.size:
            while oi < obs.size and obs[oi] <= t + 1e-12:
                out[r, oi] = z
                oi += 1
            if t >= horizon or oi >= obs.size:
                break
            h = min(tau, horizon - t)
            g = params.gamma / eps
            births = rng.poisson(g * (0.5 + eps * params.K) * z * h)
            comp = (eps * z) @ params.lam.T
            deaths = np.minimum(rng.poisson(g * (0.5 + eps * comp) * z * h), z + births)
            movers = np.minimum(rng.poisson(z * row * h), z)
            z = z + births - deaths - movers
            for xi in range(G):
                if row[xi, 0] > 0:
                    for m in range(M):
                        if movers[xi, m]:
                            z[:, m] += rng.multinomial(movers[xi, m], probs[xi])
            t += h
        while oi < obs.size:
            out[r, oi] = z
            oi += 1
    meta = {"engine": "particle-tau-leap", "tau": tau, "eps": eps}
    return ParticleTrajectory(obs, out, np.zeros(replicates, np.int64),
                              np.zeros(replicates, np.int8), eps, 0, meta)


def snapshot_rows(traj: ParticleTrajectory):
    """Rows (replicate, time, site, type, count, mass) in replicate/time/site/type order."""
    R, T, G, M = traj.counts.shape
    for r in range(R):
        for ti in range(T):
            for xi in range(G):
                for m in range(M):
                    c = int(traj.counts[r, ti, xi, m])
                    yield (traj.rep_start + r, float(traj.times[ti]), xi, m, c, traj.eps * c)


def generator_apply(f, z, geo: Geography, params: ModelParams, eps: float = 1.0):
    """Discrete generator applied to ``f`` at a batch of count states.

    ``z`` has shape (..., G, M); ``f`` maps such arrays (as masses eps*z) to
    arrays of shape (...).  Every +-1 jump is evaluated exactly.
    """
    z = np.asarray(z, dtype=np.int64)
    G, M = z.shape[-2:]
    a = geo.dense("a")
    base = f(eps * z)
    total = np.zeros(base.shape)
    g = params.gamma / eps
    comp = (eps * z) @ params.lam.T
    birth = g * (0.5 + eps * params.K) * z
    death = g * (0.5 + eps * comp) * z
    for xi in range(G):
        for m in range(M):
            zm = z[..., xi, m]
            up = z.copy()
            up[..., xi, m] += 1
            total = total + birth[..., xi, m] * (f(eps * up) - base)
            down = z.copy()
            down[..., xi, m] -= 1
            down_ok = zm > 0
            fd = np.where(down_ok, f(eps * np.maximum(down, 0)), base)
            total = total + death[..., xi, m] * (fd - base)
            for eta in range(G):
                if eta == xi or a[xi, eta] == 0.0:
                    continue
                mv = down.copy()
                mv[..., eta, m] += 1
                fm = np.where(down_ok, f(eps * np.maximum(mv, 0)), base)
                total = total + zm * a[xi, eta] * (fm - base)
    return total
