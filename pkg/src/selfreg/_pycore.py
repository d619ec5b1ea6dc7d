"""Pure-Python twins of the compiled kernels in ``_core.pyx``.

The arithmetic here is written in the same order as the compiled code so
that the scalar kernels (Gillespie, coalescent, dual) reproduce it bit for
bit.  The diffusion kernel is vectorised over replicates with numpy; it
agrees with the compiled version up to the last few ulps of the transcendental
functions used for Gaussian draws.
"""
from __future__ import annotations

import math

import numpy as np

from .rng import (MASK32, PHILOX_M0, PHILOX_M1, PHILOX_W0, PHILOX_W1, INV_2_52, TWO_PI,
                  TAG_ALPHA, TAG_DIFFUSION, TAG_KAPPA, TAG_KAPPA_TARGET, TAG_MIGRATE,
                  TAG_PARTICLE, normals_np, uniforms_np)

BACKEND = "python"

STATUS_OK = 0
STATUS_EXPLOSION = 1
STATUS_NONFINITE = 2


def _uniform_pair(k0, k1, rep, tag, index):
    c0 = rep & MASK32
    c1 = tag
    c2 = index & MASK32
    c3 = (index >> 32) & MASK32
    for _ in range(10):
        p0 = PHILOX_M0 * c0
        p1 = PHILOX_M1 * c2
        c0, c1, c2, c3 = (((p1 >> 32) ^ c1 ^ k0) & MASK32, p1 & MASK32,
                          ((p0 >> 32) ^ c3 ^ k1) & MASK32, p0 & MASK32)
        k0 = (k0 + PHILOX_W0) & MASK32
        k1 = (k1 + PHILOX_W1) & MASK32
    return ((((c0 << 20) | (c1 >> 12)) + 0.5) * INV_2_52,
            (((c2 << 20) | (c3 >> 12)) + 0.5) * INV_2_52)


def _normal(k0, k1, rep, tag, index):
    u1, u2 = _uniform_pair(k0, k1, rep, tag, index)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


def qe_step(x, b, c, s2, h, u1, u2):
    """Moment-matched step of dX = (b + c X) dt + sqrt(s2 X) dW over time h.

    The exact conditional mean and variance of the affine square-root
    process are matched by a scaled noncentral square (small variance ratio)
    or by an atom at zero plus an exponential tail (large ratio).
    """
    ch = c * h
    if ch == 0.0:
        e = 1.0
        phi = h
    else:
        e = math.exp(ch)
        phi = math.expm1(ch) / c
    m = x * e + b * phi
    if s2 == 0.0 or m <= 0.0:
        return m if m > 0.0 else 0.0
    v = s2 * (x * e * phi + 0.5 * b * phi * phi)
    psi = v / (m * m)
    if psi <= 1.5:
        t2 = 2.0 / psi
        b2 = t2 - 1.0 + math.sqrt(t2) * math.sqrt(t2 - 1.0)
        a = m / (1.0 + b2)
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2) + math.sqrt(b2)
        return a * (z * z)
    p = (psi - 1.0) / (psi + 1.0)
    if u1 <= p:
        return 0.0
    beta = (1.0 - p) / m
    return math.log((1.0 - p) / (1.0 - u1)) / beta


def qe_step_np(x, b, c, s2, h, u1, u2):
    """Array version of :func:`qe_step`; ``s2`` broadcasts over the last axis."""
    s2 = np.broadcast_to(np.asarray(s2, dtype=float), x.shape)
    ch = c * h
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(ch == 0.0, 1.0, np.exp(ch))
        phi = np.where(ch == 0.0, h, np.expm1(ch) / np.where(c == 0.0, 1.0, c))
        m = x * e + b * phi
        v = s2 * (x * e * phi + 0.5 * b * phi * phi)
        psi = v / (m * m)
        t2 = 2.0 / psi
        b2 = t2 - 1.0 + np.sqrt(t2) * np.sqrt(np.maximum(t2 - 1.0, 0.0))
        a = m / (1.0 + b2)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(TWO_PI * u2) + np.sqrt(b2)
        quad = a * (z * z)
        p = (psi - 1.0) / (psi + 1.0)
        beta = (1.0 - p) / m
        tail = np.where(u1 <= p, 0.0, np.log((1.0 - p) / (1.0 - u1)) / beta)
    out = np.where(psi <= 1.5, quad, tail)
    out = np.where((s2 == 0.0) | (m <= 0.0), np.maximum(m, 0.0), out)
    return out


def _keys(seed):
    return seed & MASK32, (seed >> 32) & MASK32


def philox_uniform_pair(seed, rep, tag, index):
    k0, k1 = _keys(seed)
    return _uniform_pair(k0, k1, rep, tag, index)


# ---------------------------------------------------------------- sum tree

class SumTree:
    """Binary tree of nonnegative leaf rates with O(log n) update and sampling.

    Parents are always recomputed as ``left + right`` from their children,
    so the root never accumulates incremental rounding drift.
    """

    def __init__(self, n_leaves: int):
        cap = 1
        while cap < max(n_leaves, 1):
            cap *= 2
        self.cap = cap
        self.n_leaves = n_leaves
        self.tree = [0.0] * (2 * cap)

    def build(self, rates):
        tree, cap = self.tree, self.cap
        for i in range(cap):
            tree[cap + i] = rates[i] if i < self.n_leaves else 0.0
        for i in range(cap - 1, 0, -1):
            tree[i] = tree[2 * i] + tree[2 * i + 1]

    def update(self, leaf: int, rate: float):
        tree = self.tree
        i = self.cap + leaf
        tree[i] = rate
        i >>= 1
        while i >= 1:
            tree[i] = tree[2 * i] + tree[2 * i + 1]
            i >>= 1

    @property
    def total(self) -> float:
        return self.tree[1]

    def leaf(self, i: int) -> float:
        return self.tree[self.cap + i]

    def select(self, u: float) -> int:
        """Leaf whose cumulative interval contains ``u * total``; never a zero leaf."""
        tree, cap = self.tree, self.cap
        target = u * tree[1]
        i = 1
        while i < cap:
            left = tree[2 * i]
            right = tree[2 * i + 1]
            if target < left or right <= 0.0:
                i = 2 * i
            else:
                target -= left
                i = 2 * i + 1
        return i - cap


# ---------------------------------------------------------------- particles

def site_rates(z, xi, M, eps, gamma, K, lam, out_rate, active, branching):
    """Migration, birth and death rates of every type at site ``xi`` (flat list)."""
    out = [0.0] * (3 * M)
    if not active[xi]:
        return out
    base = xi * M
    for m in range(M):
        zm = z[base + m]
        if zm == 0:
            continue
        out[3 * m] = zm * out_rate[xi]
        if branching:
            g = gamma[m] / eps
            out[3 * m + 1] = g * (0.5 + eps * K[m]) * zm
            comp = 0.0
            for n in range(M):
                comp += lam[m * M + n] * (eps * z[base + n])
            out[3 * m + 2] = g * (0.5 + eps * comp) * zm
    return out


def _refresh_site(tree, z, xi, M, eps, gamma, K, lam, out_rate, active, branching):
    rates = site_rates(z, xi, M, eps, gamma, K, lam, out_rate, active, branching)
    base = 3 * M * xi
    for j in range(3 * M):
        tree.update(base + j, rates[j])


def _pick_target(ptr, idx, cum, xi, u):
    lo, hi = ptr[xi], ptr[xi + 1]
    for j in range(lo, hi):
        if u < cum[j]:
            return idx[j]
    return idx[hi - 1]


def particle_one(seed, rep, z0, eps, gamma, K, lam, off_ptr, off_idx, off_cum, out_rate,
                 active, branching, obs, horizon, max_events):
    """One Gillespie replicate; returns (snapshots [T, G*M], n_events, status)."""
    G = len(out_rate)
    M = len(gamma)
    k0, k1 = _keys(seed)
    z = list(z0)
    tree = SumTree(3 * G * M)
    rates = []
    for xi in range(G):
        rates.extend(site_rates(z, xi, M, eps, gamma, K, lam, out_rate, active, branching))
    tree.build(rates)
    T = len(obs)
    snaps = []
    t = 0.0
    k = 0
    status = STATUS_OK
    while True:
        total = tree.total
        if total <= 0.0:
            break
        u1, u2 = _uniform_pair(k0, k1, rep, TAG_PARTICLE, k)
        t_new = t - math.log(u1) / total
        while len(snaps) < T and obs[len(snaps)] < t_new:
            snaps.append(list(z))
        if t_new > horizon:
            break
        if k >= max_events:
            status = STATUS_EXPLOSION
            break
        leaf = tree.select(u2)
        site_type, channel = divmod(leaf, 3)
        xi, m = divmod(site_type, M)
        if channel == 0:
            u3 = _uniform_pair(k0, k1, rep, TAG_MIGRATE, k)[0]
            eta = _pick_target(off_ptr, off_idx, off_cum, xi, u3)
            z[xi * M + m] -= 1
            z[eta * M + m] += 1
            _refresh_site(tree, z, xi, M, eps, gamma, K, lam, out_rate, active, branching)
            _refresh_site(tree, z, eta, M, eps, gamma, K, lam, out_rate, active, branching)
        else:
            z[xi * M + m] += 1 if channel == 1 else -1
            _refresh_site(tree, z, xi, M, eps, gamma, K, lam, out_rate, active, branching)
        k += 1
        t = t_new
    while len(snaps) < T:
        snaps.append(list(z))
    return snaps, k, status


def particle_batch(seed, rep_start, n_rep, z0, eps, gamma, K, lam, off_ptr, off_idx, off_cum,
                   out_rate, active, branching, obs, horizon, max_events):
    G, M = z0.shape
    T = len(obs)
    snap = np.zeros((n_rep, T, G, M), dtype=np.int64)
    n_events = np.zeros(n_rep, dtype=np.int64)
    status = np.zeros(n_rep, dtype=np.int8)
    args = ([int(v) for v in z0.ravel()], float(eps), [float(v) for v in gamma],
            [float(v) for v in K], [float(v) for v in np.ravel(lam)],
            [int(v) for v in off_ptr], [int(v) for v in off_idx], [float(v) for v in off_cum],
            [float(v) for v in out_rate], [int(v) for v in active], int(branching),
            [float(v) for v in obs], float(horizon), int(max_events))
    for r in range(n_rep):
        snaps, ne, st = particle_one(seed, rep_start + r, *args)
        snap[r] = np.asarray(snaps, dtype=np.int64).reshape(T, G, M)
        n_events[r] = ne
        status[r] = st
    return snap, n_events, status


# ---------------------------------------------------------------- diffusion

def diffusion_batch(seed, rep_start, n_rep, x0, gamma, K, lam, ab_ptr, ab_idx, ab_val, immig,
                    dt, n_steps, obs_steps, scheme, noise_on):
    """Euler-Maruyama for a block of replicates, vectorised over replicates.

    ``immig`` is a constant (G, M) array or a callable ``t -> (G, M) array``
    evaluated at the left end of every step (the compiled kernel only takes
    constant arrays).
    """
    G, M = x0.shape
    T = len(obs_steps)
    snap = np.zeros((n_rep, T, G, M))
    n_clamp = np.zeros(n_rep, dtype=np.int64)
    status = np.zeros(n_rep, dtype=np.int8)
    x = np.broadcast_to(x0, (n_rep, G, M)).copy()
    reps = (rep_start + np.arange(n_rep, dtype=np.uint64))[:, None, None]
    flat = (np.arange(G)[:, None] * M + np.arange(M)[None, :]).astype(np.uint64)[None]
    sqdt = math.sqrt(dt)
    gamma = np.asarray(gamma, float)
    lam = np.asarray(lam, float)
    alive = np.ones(n_rep, dtype=bool)
    oi = 0
    for s in range(n_steps + 1):
        while oi < T and obs_steps[oi] == s:
            snap[:, oi] = x
            oi += 1
        if s == n_steps or oi == T:
            break
        imm = np.asarray(immig(s * dt), dtype=float) if callable(immig) else immig
        drift = np.empty_like(x)
        for xi in range(G):
            for m in range(M):
                mig = np.zeros(n_rep)
                for j in range(ab_ptr[xi], ab_ptr[xi + 1]):
                    mig = mig + ab_val[j] * (x[:, ab_idx[j], m] - x[:, xi, m])
                comp = np.zeros(n_rep)
                for n in range(M):
                    comp = comp + lam[m, n] * x[:, xi, n]
                drift[:, xi, m] = mig + gamma[m] * x[:, xi, m] * (K[m] - comp) + imm[xi, m]
        if noise_on and scheme != 2:
            g = normals_np(seed, reps, TAG_DIFFUSION, np.uint64(s * G * M) + flat)
        else:
            g = np.zeros_like(x)
        if scheme == 2:
            bq = np.empty_like(x)
            cq = np.empty_like(x)
            for xi in range(G):
                for m in range(M):
                    inflow = np.zeros(n_rep)
                    out = 0.0
                    for j in range(ab_ptr[xi], ab_ptr[xi + 1]):
                        inflow = inflow + ab_val[j] * x[:, ab_idx[j], m]
                        out = out + ab_val[j]
                    comp = np.zeros(n_rep)
                    for n in range(M):
                        comp = comp + lam[m, n] * x[:, xi, n]
                    bq[:, xi, m] = inflow + imm[xi, m]
                    cq[:, xi, m] = -out + gamma[m] * (K[m] - comp)
            u1, u2 = uniforms_np(seed, reps, TAG_DIFFUSION, np.uint64(s * G * M) + flat)
            x = qe_step_np(x, bq, cq, gamma if noise_on else 0.0 * gamma, dt, u1, u2)
        elif scheme == 0:
            y = x + dt * drift + np.sqrt(gamma * x) * sqdt * g
            neg = y < 0.0
            n_clamp += neg.sum(axis=(1, 2))
            x = np.where(neg, 0.0, y)
        else:
            u = x + dt * drift
            neg = u < 0.0
            n_clamp += neg.sum(axis=(1, 2))
            u = np.where(neg, 0.0, u)
            y = u + np.sqrt(gamma * u) * sqdt * g
            neg = y < 0.0
            n_clamp += neg.sum(axis=(1, 2))
            x = np.where(neg, 0.0, y)
        bad = ~np.isfinite(x).all(axis=(1, 2)) & alive
        if bad.any():
            status[bad] = STATUS_NONFINITE
            alive &= ~bad
            x[bad] = np.nan
    while oi < T:
        snap[:, oi] = x
        oi += 1
    return snap, n_clamp, status


# ---------------------------------------------------------------- dual

def _kappa_rates(kap, G, M, gamma, ab_out):
    rates = [0.0] * (2 * G * M)
    total = 0.0
    for xi in range(G):
        for m in range(M):
            c = kap[xi * M + m]
            if c > 0:
                r_mig = c * ab_out[xi]
                r_coal = gamma * (c * (c - 1) * 0.5)
                rates[2 * (xi * M + m)] = r_mig
                rates[2 * (xi * M + m) + 1] = r_coal
                total += r_mig
                total += r_coal
    return rates, total


def _kappa_jump(kap, G, M, gamma, ab_ptr, ab_idx, ab_cum, ab_out, k0, k1, rep, k, total, rates, u2):
    target = u2 * total
    acc = 0.0
    chosen = -1
    last = -1
    for j in range(2 * G * M):
        r = rates[j]
        if r > 0.0:
            last = j
            acc += r
            if target < acc:
                chosen = j
                break
    if chosen < 0:
        chosen = last
    st, channel = divmod(chosen, 2)
    xi, m = divmod(st, M)
    kap[xi * M + m] -= 1
    if channel == 0:
        u3 = _uniform_pair(k0, k1, rep, TAG_KAPPA_TARGET, k)[0]
        eta = _pick_target(ab_ptr, ab_idx, ab_cum, xi, u3)
        kap[eta * M + m] += 1


def kappa_path(seed, rep, kappa0, ab_ptr, ab_idx, ab_cum, ab_out, gamma, horizon, max_jumps=10**7):
    """Exact path of the coalescing walks; returns (jump times, states [n+1, G, M])."""
    G, M = kappa0.shape
    k0, k1 = _keys(seed)
    kap = [int(v) for v in kappa0.ravel()]
    ab_ptr = [int(v) for v in ab_ptr]
    ab_idx = [int(v) for v in ab_idx]
    ab_cum = [float(v) for v in ab_cum]
    ab_out = [float(v) for v in ab_out]
    gamma = float(gamma)
    times = [0.0]
    states = [list(kap)]
    t = 0.0
    k = 0
    while k < max_jumps:
        rates, total = _kappa_rates(kap, G, M, gamma, ab_out)
        if total <= 0.0:
            break
        u1, u2 = _uniform_pair(k0, k1, rep, TAG_KAPPA, k)
        t = t - math.log(u1) / total
        if t > horizon:
            break
        _kappa_jump(kap, G, M, gamma, ab_ptr, ab_idx, ab_cum, ab_out, k0, k1, rep, k, total, rates, u2)
        k += 1
        times.append(t)
        states.append(list(kap))
    return np.asarray(times), np.asarray(states, dtype=np.int64).reshape(-1, G, M)


class KappaClock:
    """Live coalescing-walk process driven by its own counter stream."""

    def __init__(self, seed, rep, kappa0, G, M, gamma, ab_ptr, ab_idx, ab_cum, ab_out):
        self.k0, self.k1 = _keys(seed)
        self.rep = rep
        self.kap = list(kappa0)
        self.G, self.M, self.gamma = G, M, gamma
        self.ab = (ab_ptr, ab_idx, ab_cum, ab_out)
        self.kj = 0
        self._arm(0.0)

    def _arm(self, t):
        self.rates, self.total = _kappa_rates(self.kap, self.G, self.M, self.gamma, self.ab[3])
        if self.total > 0.0:
            u1, self.u2 = _uniform_pair(self.k0, self.k1, self.rep, TAG_KAPPA, self.kj)
            self.t_jump = t - math.log(u1) / self.total
        else:
            self.t_jump = math.inf

    def jump(self):
        ptr, idx, cum, out = self.ab
        _kappa_jump(self.kap, self.G, self.M, self.gamma, ptr, idx, cum, out, self.k0, self.k1,
                    self.rep, self.kj, self.total, self.rates, self.u2)
        self.kj += 1
        self._arm(self.t_jump)


class ReplayClock:
    """Replays a precomputed piecewise-constant kappa path."""

    def __init__(self, times, states):
        self.times = [float(v) for v in times]
        self.states = [[int(v) for v in np.ravel(s)] for s in states]
        self.i = 0
        self.kap = list(self.states[0])
        self.t_jump = self.times[1] if len(self.times) > 1 else math.inf

    def jump(self):
        self.i += 1
        self.kap = list(self.states[self.i])
        self.t_jump = self.times[self.i + 1] if self.i + 1 < len(self.times) else math.inf


def dual_one(seed, rep, alpha0, clock, G, M, a_ptr, a_idx, a_val, gamma, K, lam, dt, horizon,
             obs, scheme, n0):
    """Integrate alpha (and the Feynman-Kac exponent) along the kappa path of ``clock``."""
    k0, k1 = _keys(seed)
    alpha = list(alpha0)
    kap = clock.kap
    kbar = [sum(kap[xi * M:(xi + 1) * M]) for xi in range(G)]
    T = len(obs)
    a_snap, k_snap, f_snap = [], [], []
    fk = 0.0
    abar = 0.0
    for v in alpha:
        abar += v
    bound_ok = 1
    status = STATUS_OK
    t = 0.0
    grid_i = 1
    grid_next = dt
    step = 0
    oi = 0
    while oi < T and obs[oi] <= t:
        a_snap.append(list(alpha)); k_snap.append(list(kap)); f_snap.append(fk)
        oi += 1
    sq2gl = 2.0 * gamma * lam
    new = [0.0] * G
    g = [0.0] * G
    while t < horizon and oi < T:
        t_next = grid_next
        if clock.t_jump < t_next:
            t_next = clock.t_jump
        if oi < T and obs[oi] < t_next:
            t_next = obs[oi]
        if horizon < t_next:
            t_next = horizon
        h = t_next - t
        if h > 0.0:
            sqh = math.sqrt(h)
            cterm = 0.0
            S = 0.0
            dB = 0.0
            for xi in range(G):
                ax = alpha[xi]
                u1, u2 = _uniform_pair(k0, k1, rep, TAG_ALPHA, step * G + xi)
                gx = math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)
                g[xi] = gx
                if scheme == 2:
                    inflow = gamma * lam * kbar[xi]
                    out = 0.0
                    for j in range(a_ptr[xi], a_ptr[xi + 1]):
                        inflow += a_val[j] * alpha[a_idx[j]]
                        out += a_val[j]
                    y = qe_step(ax, inflow, gamma * (K - 0.5 * ax) - out, sq2gl, h, u1, u2)
                    new[xi] = y
                    S += ax
                    dB += math.sqrt(ax) * gx
                    continue
                mig = 0.0
                for j in range(a_ptr[xi], a_ptr[xi + 1]):
                    mig += a_val[j] * (alpha[a_idx[j]] - ax)
                drift = mig + gamma * ax * (K - 0.5 * ax) + gamma * lam * kbar[xi]
                if scheme == 0:
                    y = ax + h * drift + math.sqrt(sq2gl * ax) * sqh * gx
                else:
                    y = ax + h * drift
                    if y < 0.0:
                        y = 0.0
                    y = y + math.sqrt(sq2gl * y) * sqh * gx
                if y < 0.0:
                    y = 0.0
                new[xi] = y
                S += ax
                dB += math.sqrt(ax) * gx
            # noise of the aggregated comparison process
            dB = dB / math.sqrt(S) if S > 0.0 else g[0]
            tot_new = 0.0
            for xi in range(G):
                kb = kbar[xi]
                pairs = 0.0
                for m in range(M):
                    c = kap[xi * M + m]
                    pairs += c * (c - 1) * 0.5
                cterm += pairs + K * kb - 0.5 * (alpha[xi] + new[xi]) * kb
                alpha[xi] = new[xi]
                tot_new += new[xi]
            fk += gamma * h * cterm
            abar = abar + h * (gamma * K * abar + gamma * lam * n0)
            abar = abar + math.sqrt(sq2gl * abar) * sqh * dB
            if abar < 0.0:
                abar = 0.0
            if tot_new > abar * (1.0 + 1e-12) + 1e-12:
                bound_ok = 0
            if not math.isfinite(tot_new) or not math.isfinite(fk):
                status = STATUS_NONFINITE
                break
            step += 1
        t = t_next
        if t == clock.t_jump:
            clock.jump()
            kap = clock.kap
            for xi in range(G):
                s = 0
                for m in range(M):
                    s += kap[xi * M + m]
                kbar[xi] = s
        if t == grid_next:
            grid_i += 1
            grid_next = grid_i * dt
        while oi < T and obs[oi] <= t:
            a_snap.append(list(alpha)); k_snap.append(list(kap)); f_snap.append(fk)
            oi += 1
    while oi < T:
        a_snap.append(list(alpha)); k_snap.append(list(kap)); f_snap.append(fk)
        oi += 1
    return a_snap, k_snap, f_snap, status, bound_ok, step


def dual_batch(seed, rep_start, n_rep, alpha0, kappa0, a_ptr, a_idx, a_val, ab_ptr, ab_idx, ab_cum,
               ab_out, gamma, K, lam, dt, horizon, obs, scheme):
    G, M = kappa0.shape
    T = len(obs)
    a_snap = np.zeros((n_rep, T, G))
    k_snap = np.zeros((n_rep, T, G, M), dtype=np.int64)
    f_snap = np.zeros((n_rep, T))
    status = np.zeros(n_rep, dtype=np.int8)
    bound_ok = np.zeros(n_rep, dtype=np.uint8)
    n0 = float(int(np.sum(kappa0)))
    ab = ([int(v) for v in ab_ptr], [int(v) for v in ab_idx], [float(v) for v in ab_cum],
          [float(v) for v in ab_out])
    args = (G, M, [int(v) for v in a_ptr], [int(v) for v in a_idx], [float(v) for v in a_val],
            float(gamma), float(K), float(lam), float(dt), float(horizon),
            [float(v) for v in obs], int(scheme), n0)
    al0 = [float(v) for v in alpha0]
    ka0 = [int(v) for v in kappa0.ravel()]
    for r in range(n_rep):
        clock = KappaClock(seed, rep_start + r, ka0, G, M, float(gamma), *ab)
        a, kk, f, st, ok, _ = dual_one(seed, rep_start + r, al0, clock, *args)
        a_snap[r] = a
        k_snap[r] = np.asarray(kk, dtype=np.int64).reshape(T, G, M)
        f_snap[r] = f
        status[r] = st
        bound_ok[r] = ok
    return a_snap, k_snap, f_snap, status, bound_ok
