# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Gillespie particles, Euler-Maruyama diffusion, dual process.

Every function mirrors the pure-Python twin in ``_pycore.py`` operation by
operation; keep the two in sync.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, cos, exp, expm1, isfinite, INFINITY, NAN
from libc.stdint cimport uint32_t, uint64_t, int64_t, int8_t, uint8_t
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"

cdef enum:
    STATUS_OK = 0
    STATUS_EXPLOSION = 1
    STATUS_NONFINITE = 2

cdef enum:
    TAG_PARTICLE = 1
    TAG_MIGRATE = 2
    TAG_DIFFUSION = 3
    TAG_KAPPA = 4
    TAG_KAPPA_TARGET = 5
    TAG_ALPHA = 6

cdef double INV_2_52 = 2.220446049250313e-16
cdef double TWO_PI = 6.283185307179586


cdef inline void philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t c0 = c[0], c1 = c[1], c2 = c[2], c3 = c[3]
    cdef int i
    for i in range(10):
        p0 = <uint64_t>0xD2511F53 * c0
        p1 = <uint64_t>0xCD9E8D57 * c2
        c0 = <uint32_t>(p1 >> 32) ^ c1 ^ k0
        c1 = <uint32_t>p1
        c2 = <uint32_t>(p0 >> 32) ^ c3 ^ k1
        c3 = <uint32_t>p0
        k0 = k0 + <uint32_t>0x9E3779B9
        k1 = k1 + <uint32_t>0xBB67AE85
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3


cdef inline void uniform_pair(uint32_t k0, uint32_t k1, uint64_t rep, uint32_t tag,
                              uint64_t index, double* u1, double* u2) noexcept nogil:
    cdef uint32_t c[4]
    c[0] = <uint32_t>rep
    c[1] = tag
    c[2] = <uint32_t>index
    c[3] = <uint32_t>(index >> 32)
    philox(c, k0, k1)
    u1[0] = (<double>((<uint64_t>c[0] << 20) | (c[1] >> 12)) + 0.5) * INV_2_52
    u2[0] = (<double>((<uint64_t>c[2] << 20) | (c[3] >> 12)) + 0.5) * INV_2_52


cdef inline double normal(uint32_t k0, uint32_t k1, uint64_t rep, uint32_t tag,
                          uint64_t index) noexcept nogil:
    cdef double u1, u2
    uniform_pair(k0, k1, rep, tag, index, &u1, &u2)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


cdef inline double qe_step(double x, double b, double c, double s2, double h,
                          double u1, double u2) noexcept nogil:
    cdef double ch = c * h, e, phi, m, v, psi, t2, b2, a, z, p, beta
    if ch == 0.0:
        e = 1.0
        phi = h
    else:
        e = exp(ch)
        phi = expm1(ch) / c
    m = x * e + b * phi
    if s2 == 0.0 or m <= 0.0:
        return m if m > 0.0 else 0.0
    v = s2 * (x * e * phi + 0.5 * b * phi * phi)
    psi = v / (m * m)
    if psi <= 1.5:
        t2 = 2.0 / psi
        b2 = t2 - 1.0 + sqrt(t2) * sqrt(t2 - 1.0)
        a = m / (1.0 + b2)
        z = sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2) + sqrt(b2)
        return a * (z * z)
    p = (psi - 1.0) / (psi + 1.0)
    if u1 <= p:
        return 0.0
    beta = (1.0 - p) / m
    return log((1.0 - p) / (1.0 - u1)) / beta


def qe_step_py(double x, double b, double c, double s2, double h, double u1, double u2):
    return qe_step(x, b, c, s2, h, u1, u2)


def philox_uniform_pair(uint64_t seed, uint64_t rep, uint32_t tag, uint64_t index):
    cdef double u1, u2
    uniform_pair(<uint32_t>seed, <uint32_t>(seed >> 32), rep, tag, index, &u1, &u2)
    return u1, u2


# ---------------------------------------------------------------- sum tree

cdef struct Tree:
    double* v
    int64_t cap


cdef inline void tree_update(Tree* t, int64_t leaf, double rate) noexcept nogil:
    cdef int64_t i = t.cap + leaf
    t.v[i] = rate
    i >>= 1
    while i >= 1:
        t.v[i] = t.v[2 * i] + t.v[2 * i + 1]
        i >>= 1


cdef inline int64_t tree_select(Tree* t, double u) noexcept nogil:
    cdef double target = u * t.v[1]
    cdef double left, right
    cdef int64_t i = 1
    while i < t.cap:
        left = t.v[2 * i]
        right = t.v[2 * i + 1]
        if target < left or right <= 0.0:
            i = 2 * i
        else:
            target -= left
            i = 2 * i + 1
    return i - t.cap


# ---------------------------------------------------------------- particles

cdef struct PCtx:
    int64_t G
    int64_t M
    double eps
    const double* gamma
    const double* K
    const double* lam
    const double* out_rate
    const uint8_t* active
    int branching


cdef inline void refresh_site(Tree* t, PCtx* c, int64_t* z, int64_t xi) noexcept nogil:
    cdef int64_t M = c.M
    cdef int64_t base = xi * M
    cdef int64_t lbase = 3 * M * xi
    cdef int64_t m, n, zm
    cdef double g, comp
    for m in range(M):
        zm = z[base + m]
        if not c.active[xi] or zm == 0:
            tree_update(t, lbase + 3 * m, 0.0)
            tree_update(t, lbase + 3 * m + 1, 0.0)
            tree_update(t, lbase + 3 * m + 2, 0.0)
            continue
        tree_update(t, lbase + 3 * m, zm * c.out_rate[xi])
        if c.branching:
            g = c.gamma[m] / c.eps
            tree_update(t, lbase + 3 * m + 1, g * (0.5 + c.eps * c.K[m]) * zm)
            comp = 0.0
            for n in range(M):
                comp += c.lam[m * M + n] * (c.eps * z[base + n])
            tree_update(t, lbase + 3 * m + 2, g * (0.5 + c.eps * comp) * zm)
        else:
            tree_update(t, lbase + 3 * m + 1, 0.0)
            tree_update(t, lbase + 3 * m + 2, 0.0)


cdef inline int64_t pick_target(const int64_t* ptr, const int64_t* idx, const double* cum,
                                int64_t xi, double u) noexcept nogil:
    cdef int64_t j
    for j in range(ptr[xi], ptr[xi + 1]):
        if u < cum[j]:
            return idx[j]
    return idx[ptr[xi + 1] - 1]


cdef void particle_one(uint32_t k0, uint32_t k1, uint64_t rep, PCtx* c, Tree* tr, int64_t* z,
                       const int64_t* off_ptr, const int64_t* off_idx, const double* off_cum,
                       const double* obs, int64_t T, double horizon, int64_t max_events,
                       int64_t* snap, int64_t* n_events, int8_t* status) noexcept nogil:
    cdef int64_t GM = c.G * c.M
    cdef int64_t i, j, leaf, st, channel, xi, m, eta
    cdef int64_t k = 0, oi = 0
    cdef double t = 0.0, total, u1, u2, u3, t_new
    for i in range(2 * tr.cap):
        tr.v[i] = 0.0
    for xi in range(c.G):
        refresh_site(tr, c, z, xi)
    status[0] = STATUS_OK
    while True:
        total = tr.v[1]
        if total <= 0.0:
            break
        uniform_pair(k0, k1, rep, TAG_PARTICLE, k, &u1, &u2)
        t_new = t - log(u1) / total
        while oi < T and obs[oi] < t_new:
            for j in range(GM):
                snap[oi * GM + j] = z[j]
            oi += 1
        if t_new > horizon:
            break
        if k >= max_events:
            status[0] = STATUS_EXPLOSION
            break
        leaf = tree_select(tr, u2)
        st = leaf // 3
        channel = leaf - 3 * st
        xi = st // c.M
        m = st - xi * c.M
        if channel == 0:
            uniform_pair(k0, k1, rep, TAG_MIGRATE, k, &u3, &u1)
            eta = pick_target(off_ptr, off_idx, off_cum, xi, u3)
            z[xi * c.M + m] -= 1
            z[eta * c.M + m] += 1
            refresh_site(tr, c, z, xi)
            refresh_site(tr, c, z, eta)
        else:
            if channel == 1:
                z[xi * c.M + m] += 1
            else:
                z[xi * c.M + m] -= 1
            refresh_site(tr, c, z, xi)
        k += 1
        t = t_new
    while oi < T:
        for j in range(GM):
            snap[oi * GM + j] = z[j]
        oi += 1
    n_events[0] = k


def particle_batch(uint64_t seed, uint64_t rep_start, int64_t n_rep, const int64_t[:, ::1] z0,
                   double eps, const double[::1] gamma, const double[::1] K,
                   const double[:, ::1] lam, const int64_t[::1] off_ptr,
                   const int64_t[::1] off_idx, const double[::1] off_cum,
                   const double[::1] out_rate, const uint8_t[::1] active, int branching,
                   const double[::1] obs, double horizon, int64_t max_events):
    cdef int64_t G = z0.shape[0], M = z0.shape[1], T = obs.shape[0]
    cdef int64_t GM = G * M
    snap_arr = np.zeros((n_rep, T, G, M), dtype=np.int64)
    n_ev_arr = np.zeros(n_rep, dtype=np.int64)
    st_arr = np.zeros(n_rep, dtype=np.int8)
    cdef int64_t[:, :, :, ::1] snap = snap_arr
    cdef int64_t[::1] n_ev = n_ev_arr
    cdef int8_t[::1] st = st_arr
    cdef PCtx c
    c.G = G
    c.M = M
    c.eps = eps
    c.gamma = &gamma[0]
    c.K = &K[0]
    c.lam = &lam[0, 0]
    c.out_rate = &out_rate[0]
    c.active = &active[0]
    c.branching = branching
    cdef Tree tr
    tr.cap = 1
    while tr.cap < 3 * GM:
        tr.cap *= 2
    tr.v = <double*>malloc(2 * tr.cap * sizeof(double))
    cdef int64_t* z = <int64_t*>malloc(GM * sizeof(int64_t))
    cdef uint32_t k0 = <uint32_t>seed, k1 = <uint32_t>(seed >> 32)
    cdef int64_t r, j
    cdef const int64_t* pp = &off_ptr[0]
    cdef const int64_t* pi = &off_idx[0] if off_idx.shape[0] > 0 else NULL
    cdef const double* pc = &off_cum[0] if off_cum.shape[0] > 0 else NULL
    cdef const double* po = &obs[0] if T > 0 else NULL
    try:
        with nogil:
            for r in range(n_rep):
                for j in range(GM):
                    z[j] = z0[j // M, j % M]
                particle_one(k0, k1, rep_start + r, &c, &tr, z, pp, pi, pc, po, T, horizon,
                             max_events, &snap[r, 0, 0, 0] if T > 0 else z, &n_ev[r], &st[r])
    finally:
        free(tr.v)
        free(z)
    return snap_arr, n_ev_arr, st_arr


# ---------------------------------------------------------------- diffusion

def diffusion_batch(uint64_t seed, uint64_t rep_start, int64_t n_rep, const double[:, ::1] x0,
                    const double[::1] gamma, const double[::1] K, const double[:, ::1] lam,
                    const int64_t[::1] ab_ptr, const int64_t[::1] ab_idx,
                    const double[::1] ab_val, const double[:, ::1] immig, double dt,
                    int64_t n_steps, const int64_t[::1] obs_steps, int scheme, int noise_on):
    cdef int64_t G = x0.shape[0], M = x0.shape[1], T = obs_steps.shape[0]
    cdef int64_t GM = G * M
    snap_arr = np.zeros((n_rep, T, G, M))
    clamp_arr = np.zeros(n_rep, dtype=np.int64)
    st_arr = np.zeros(n_rep, dtype=np.int8)
    cdef double[:, :, :, ::1] snap = snap_arr
    cdef int64_t[::1] nclamp = clamp_arr
    cdef int8_t[::1] st = st_arr
    cdef double* x = <double*>malloc(GM * sizeof(double))
    cdef double* xn = <double*>malloc(GM * sizeof(double))
    cdef double* tmp
    cdef uint32_t k0 = <uint32_t>seed, k1 = <uint32_t>(seed >> 32)
    cdef int64_t r, s, xi, m, n, j, oi, rep
    cdef double mig, comp, drift, y, u, g, xv, inflow, outr, u1, u2
    cdef double sqdt = sqrt(dt)
    cdef bint bad
    try:
        with nogil:
            for r in range(n_rep):
                rep = rep_start + r
                for j in range(GM):
                    x[j] = x0[j // M, j % M]
                oi = 0
                bad = False
                for s in range(n_steps + 1):
                    while oi < T and obs_steps[oi] == s:
                        for j in range(GM):
                            snap[r, oi, j // M, j % M] = x[j]
                        oi += 1
                    if s == n_steps or oi == T:
                        break
                    if scheme == 2:
                        for xi in range(G):
                            for m in range(M):
                                xv = x[xi * M + m]
                                inflow = 0.0
                                outr = 0.0
                                for j in range(ab_ptr[xi], ab_ptr[xi + 1]):
                                    inflow = inflow + ab_val[j] * x[ab_idx[j] * M + m]
                                    outr = outr + ab_val[j]
                                comp = 0.0
                                for n in range(M):
                                    comp = comp + lam[m, n] * x[xi * M + n]
                                uniform_pair(k0, k1, rep, TAG_DIFFUSION,
                                             <uint64_t>(s * GM + xi * M + m), &u1, &u2)
                                y = qe_step(xv, inflow + immig[xi, m],
                                            -outr + gamma[m] * (K[m] - comp),
                                            gamma[m] if noise_on else 0.0, dt, u1, u2)
                                if not isfinite(y):
                                    bad = True
                                xn[xi * M + m] = y
                    for xi in range(G if scheme != 2 else 0):
                        for m in range(M):
                            xv = x[xi * M + m]
                            mig = 0.0
                            for j in range(ab_ptr[xi], ab_ptr[xi + 1]):
                                mig = mig + ab_val[j] * (x[ab_idx[j] * M + m] - xv)
                            comp = 0.0
                            for n in range(M):
                                comp = comp + lam[m, n] * x[xi * M + n]
                            drift = mig + gamma[m] * xv * (K[m] - comp) + immig[xi, m]
                            if noise_on:
                                g = normal(k0, k1, rep, TAG_DIFFUSION, <uint64_t>(s * GM + xi * M + m))
                            else:
                                g = 0.0
                            if scheme == 0:
                                y = xv + dt * drift + sqrt(gamma[m] * xv) * sqdt * g
                            else:
                                u = xv + dt * drift
                                if u < 0.0:
                                    nclamp[r] += 1
                                    u = 0.0
                                y = u + sqrt(gamma[m] * u) * sqdt * g
                            if y < 0.0:
                                nclamp[r] += 1
                                y = 0.0
                            if not isfinite(y):
                                bad = True
                            xn[xi * M + m] = y
                    tmp = x
                    x = xn
                    xn = tmp
                    if bad:
                        st[r] = STATUS_NONFINITE
                        for j in range(GM):
                            x[j] = NAN
                        break
                while oi < T:
                    for j in range(GM):
                        snap[r, oi, j // M, j % M] = x[j]
                    oi += 1
    finally:
        free(x)
        free(xn)
    return snap_arr, clamp_arr, st_arr


# ---------------------------------------------------------------- dual

cdef struct KCtx:
    int64_t G
    int64_t M
    double gamma
    const int64_t* ptr
    const int64_t* idx
    const double* cum
    const double* out


cdef inline double kappa_rates(KCtx* c, int64_t* kap, double* rates) noexcept nogil:
    cdef int64_t xi, m, cnt, L = c.G * c.M
    cdef double total = 0.0, r_mig, r_coal
    for xi in range(L):
        rates[2 * xi] = 0.0
        rates[2 * xi + 1] = 0.0
    for xi in range(c.G):
        for m in range(c.M):
            cnt = kap[xi * c.M + m]
            if cnt > 0:
                r_mig = cnt * c.out[xi]
                r_coal = c.gamma * (cnt * (cnt - 1) * 0.5)
                rates[2 * (xi * c.M + m)] = r_mig
                rates[2 * (xi * c.M + m) + 1] = r_coal
                total += r_mig
                total += r_coal
    return total


cdef inline void kappa_jump(KCtx* c, int64_t* kap, double* rates, double total, double u2,
                            uint32_t k0, uint32_t k1, uint64_t rep, uint64_t k) noexcept nogil:
    cdef double target = u2 * total, acc = 0.0, r, u3, dummy
    cdef int64_t j, chosen = -1, last = -1, st, channel, xi, m, eta
    for j in range(2 * c.G * c.M):
        r = rates[j]
        if r > 0.0:
            last = j
            acc += r
            if target < acc:
                chosen = j
                break
    if chosen < 0:
        chosen = last
    st = chosen // 2
    channel = chosen - 2 * st
    xi = st // c.M
    m = st - xi * c.M
    kap[xi * c.M + m] -= 1
    if channel == 0:
        uniform_pair(k0, k1, rep, TAG_KAPPA_TARGET, k, &u3, &dummy)
        eta = pick_target(c.ptr, c.idx, c.cum, xi, u3)
        kap[eta * c.M + m] += 1


def kappa_path(uint64_t seed, uint64_t rep, const int64_t[:, ::1] kappa0, const int64_t[::1] ab_ptr,
               const int64_t[::1] ab_idx, const double[::1] ab_cum, const double[::1] ab_out,
               double gamma, double horizon, int64_t max_jumps=10000000):
    cdef int64_t G = kappa0.shape[0], M = kappa0.shape[1], GM = G * M, j
    cdef KCtx c
    c.G = G
    c.M = M
    c.gamma = gamma
    c.ptr = &ab_ptr[0]
    c.idx = &ab_idx[0] if ab_idx.shape[0] > 0 else NULL
    c.cum = &ab_cum[0] if ab_cum.shape[0] > 0 else NULL
    c.out = &ab_out[0]
    cdef uint32_t k0 = <uint32_t>seed, k1 = <uint32_t>(seed >> 32)
    cdef int64_t* kap = <int64_t*>malloc(GM * sizeof(int64_t))
    cdef double* rates = <double*>malloc(2 * GM * sizeof(double))
    cdef double t = 0.0, total, u1, u2
    cdef int64_t k = 0
    times = [0.0]
    states = [np.asarray(kappa0).copy()]
    try:
        for j in range(GM):
            kap[j] = kappa0[j // M, j % M]
        while k < max_jumps:
            total = kappa_rates(&c, kap, rates)
            if total <= 0.0:
                break
            uniform_pair(k0, k1, rep, TAG_KAPPA, k, &u1, &u2)
            t = t - log(u1) / total
            if t > horizon:
                break
            kappa_jump(&c, kap, rates, total, u2, k0, k1, rep, k)
            k += 1
            times.append(t)
            states.append(np.array([kap[j] for j in range(GM)], dtype=np.int64).reshape(G, M))
    finally:
        free(kap)
        free(rates)
    return np.asarray(times), np.asarray(states, dtype=np.int64).reshape(-1, G, M)


cdef void dual_one(uint32_t k0, uint32_t k1, uint64_t rep, KCtx* c, const double* alpha0,
                   const int64_t* kappa0, const int64_t* a_ptr, const int64_t* a_idx,
                   const double* a_val, double K, double lam, double dt, double horizon,
                   const double* obs, int64_t T, int scheme, double n0,
                   double* alpha, double* new, double* g, int64_t* kap, int64_t* kbar,
                   double* rates, double* a_snap, int64_t* k_snap, double* f_snap,
                   int8_t* status, uint8_t* bound_ok) noexcept nogil:
    cdef int64_t G = c.G, M = c.M, GM = G * M
    cdef double gamma = c.gamma
    cdef int64_t xi, m, j, oi = 0, grid_i = 1, cnt, s
    cdef uint64_t step = 0, kj = 0
    cdef double fk = 0.0, abar = 0.0, t = 0.0, grid_next = dt, t_jump, t_next, h, sqh
    cdef double cterm, S, dB, ax, mig, drift, gx, y, tot_new, pairs, kb, total, u1, u2
    cdef double v1, v2, inflow, outr
    cdef double sq2gl = 2.0 * gamma * lam
    for xi in range(G):
        alpha[xi] = alpha0[xi]
        abar += alpha[xi]
    for j in range(GM):
        kap[j] = kappa0[j]
    for xi in range(G):
        s = 0
        for m in range(M):
            s += kap[xi * M + m]
        kbar[xi] = s
    bound_ok[0] = 1
    status[0] = STATUS_OK
    total = kappa_rates(c, kap, rates)
    if total > 0.0:
        uniform_pair(k0, k1, rep, TAG_KAPPA, kj, &u1, &u2)
        t_jump = t - log(u1) / total
    else:
        t_jump = INFINITY
    while oi < T and obs[oi] <= t:
        for xi in range(G):
            a_snap[oi * G + xi] = alpha[xi]
        for j in range(GM):
            k_snap[oi * GM + j] = kap[j]
        f_snap[oi] = fk
        oi += 1
    while t < horizon and oi < T:
        t_next = grid_next
        if t_jump < t_next:
            t_next = t_jump
        if oi < T and obs[oi] < t_next:
            t_next = obs[oi]
        if horizon < t_next:
            t_next = horizon
        h = t_next - t
        if h > 0.0:
            sqh = sqrt(h)
            cterm = 0.0
            S = 0.0
            dB = 0.0
            for xi in range(G):
                ax = alpha[xi]
                uniform_pair(k0, k1, rep, TAG_ALPHA, step * G + xi, &v1, &v2)
                gx = sqrt(-2.0 * log(v1)) * cos(TWO_PI * v2)
                g[xi] = gx
                if scheme == 2:
                    inflow = gamma * lam * kbar[xi]
                    outr = 0.0
                    for j in range(a_ptr[xi], a_ptr[xi + 1]):
                        inflow += a_val[j] * alpha[a_idx[j]]
                        outr += a_val[j]
                    new[xi] = qe_step(ax, inflow, gamma * (K - 0.5 * ax) - outr, sq2gl, h, v1, v2)
                    S += ax
                    dB += sqrt(ax) * gx
                    continue
                mig = 0.0
                for j in range(a_ptr[xi], a_ptr[xi + 1]):
                    mig += a_val[j] * (alpha[a_idx[j]] - ax)
                drift = mig + gamma * ax * (K - 0.5 * ax) + gamma * lam * kbar[xi]
                if scheme == 0:
                    y = ax + h * drift + sqrt(sq2gl * ax) * sqh * gx
                else:
                    y = ax + h * drift
                    if y < 0.0:
                        y = 0.0
                    y = y + sqrt(sq2gl * y) * sqh * gx
                if y < 0.0:
                    y = 0.0
                new[xi] = y
                S += ax
                dB += sqrt(ax) * gx
            if S > 0.0:
                dB = dB / sqrt(S)
            else:
                dB = g[0]
            tot_new = 0.0
            for xi in range(G):
                kb = kbar[xi]
                pairs = 0.0
                for m in range(M):
                    cnt = kap[xi * M + m]
                    pairs += cnt * (cnt - 1) * 0.5
                cterm += pairs + K * kb - 0.5 * (alpha[xi] + new[xi]) * kb
                alpha[xi] = new[xi]
                tot_new += new[xi]
            fk += gamma * h * cterm
            abar = abar + h * (gamma * K * abar + gamma * lam * n0)
            abar = abar + sqrt(sq2gl * abar) * sqh * dB
            if abar < 0.0:
                abar = 0.0
            if tot_new > abar * (1.0 + 1e-12) + 1e-12:
                bound_ok[0] = 0
            if not isfinite(tot_new) or not isfinite(fk):
                status[0] = STATUS_NONFINITE
                break
            step += 1
        t = t_next
        if t == t_jump:
            kappa_jump(c, kap, rates, total, u2, k0, k1, rep, kj)
            kj += 1
            for xi in range(G):
                s = 0
                for m in range(M):
                    s += kap[xi * M + m]
                kbar[xi] = s
            total = kappa_rates(c, kap, rates)
            if total > 0.0:
                uniform_pair(k0, k1, rep, TAG_KAPPA, kj, &u1, &u2)
                t_jump = t - log(u1) / total
            else:
                t_jump = INFINITY
        if t == grid_next:
            grid_i += 1
            grid_next = grid_i * dt
        while oi < T and obs[oi] <= t:
            for xi in range(G):
                a_snap[oi * G + xi] = alpha[xi]
            for j in range(GM):
                k_snap[oi * GM + j] = kap[j]
            f_snap[oi] = fk
            oi += 1
    while oi < T:
        for xi in range(G):
            a_snap[oi * G + xi] = alpha[xi]
        for j in range(GM):
            k_snap[oi * GM + j] = kap[j]
        f_snap[oi] = fk
        oi += 1


def dual_batch(uint64_t seed, uint64_t rep_start, int64_t n_rep, const double[::1] alpha0,
               const int64_t[:, ::1] kappa0, const int64_t[::1] a_ptr, const int64_t[::1] a_idx,
               const double[::1] a_val, const int64_t[::1] ab_ptr, const int64_t[::1] ab_idx,
               const double[::1] ab_cum, const double[::1] ab_out, double gamma, double K,
               double lam, double dt, double horizon, const double[::1] obs, int scheme):
    cdef int64_t G = kappa0.shape[0], M = kappa0.shape[1], T = obs.shape[0], GM = G * M
    a_arr = np.zeros((n_rep, T, G))
    k_arr = np.zeros((n_rep, T, G, M), dtype=np.int64)
    f_arr = np.zeros((n_rep, T))
    st_arr = np.zeros(n_rep, dtype=np.int8)
    ok_arr = np.zeros(n_rep, dtype=np.uint8)
    cdef double[:, :, ::1] a_snap = a_arr
    cdef int64_t[:, :, :, ::1] k_snap = k_arr
    cdef double[:, ::1] f_snap = f_arr
    cdef int8_t[::1] st = st_arr
    cdef uint8_t[::1] ok = ok_arr
    cdef int64_t n0i = 0, j, r
    for j in range(GM):
        n0i += kappa0[j // M, j % M]
    cdef double n0 = <double>n0i
    cdef KCtx c
    c.G = G
    c.M = M
    c.gamma = gamma
    c.ptr = &ab_ptr[0]
    c.idx = &ab_idx[0] if ab_idx.shape[0] > 0 else NULL
    c.cum = &ab_cum[0] if ab_cum.shape[0] > 0 else NULL
    c.out = &ab_out[0]
    cdef uint32_t k0 = <uint32_t>seed, k1 = <uint32_t>(seed >> 32)
    cdef double* alpha = <double*>malloc(G * sizeof(double))
    cdef double* new = <double*>malloc(G * sizeof(double))
    cdef double* g = <double*>malloc(G * sizeof(double))
    cdef int64_t* kap = <int64_t*>malloc(GM * sizeof(int64_t))
    cdef int64_t* kbar = <int64_t*>malloc(G * sizeof(int64_t))
    cdef double* rates = <double*>malloc(2 * GM * sizeof(double))
    cdef const int64_t* ai = &a_idx[0] if a_idx.shape[0] > 0 else NULL
    cdef const double* av = &a_val[0] if a_val.shape[0] > 0 else NULL
    if T == 0:
        return a_arr, k_arr, f_arr, st_arr, ok_arr
    try:
        with nogil:
            for r in range(n_rep):
                dual_one(k0, k1, rep_start + r, &c, &alpha0[0], &kappa0[0, 0], &a_ptr[0], ai, av,
                         K, lam, dt, horizon, &obs[0], T, scheme, n0, alpha, new, g, kap, kbar,
                         rates, &a_snap[r, 0, 0], &k_snap[r, 0, 0, 0], &f_snap[r, 0], &st[r], &ok[r])
    finally:
        free(alpha)
        free(new)
        free(g)
        free(kap)
        free(kbar)
        free(rates)
    return a_arr, k_arr, f_arr, st_arr, ok_arr
