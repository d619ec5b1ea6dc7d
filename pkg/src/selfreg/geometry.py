"""Finite torus geography, migration kernels and the weight function rho.

Sites of the torus ``(Z mod side)^dim`` are numbered in C order of their
coordinates.  ``kernel_a[eta, xi]`` is the probability that a migrating
particle at ``eta`` jumps to ``xi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

DENSE_LIMIT = 4096
ROW_TOL = 1e-12
RHO_TAIL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class OffDiagonalRows:
    """CSR view of a kernel with the diagonal removed.

    ``cum`` holds, for every row, the running sum of the renormalised
    off-diagonal probabilities, so a uniform ``u`` selects the first entry
    with ``cum > u``.  ``out_rate[i] = 1 - k(i, i)`` is the total rate of
    leaving site ``i`` for a rate-one walk.
    """

    ptr: np.ndarray
    idx: np.ndarray
    val: np.ndarray
    cum: np.ndarray
    out_rate: np.ndarray


def _offdiag_rows(mat) -> OffDiagonalRows:
    csr = sp.csr_matrix(mat)
    n = csr.shape[0]
    diag = csr.diagonal()
    csr = csr.tolil()
    csr.setdiag(0.0)
    csr = csr.tocsr()
    csr.eliminate_zeros()
    csr.sort_indices()
    ptr = csr.indptr.astype(np.int64)
    idx = csr.indices.astype(np.int64)
    val = csr.data.astype(np.float64)
    cum = np.empty_like(val)
    for i in range(n):
        lo, hi = ptr[i], ptr[i + 1]
        if hi > lo:
            c = np.cumsum(val[lo:hi])
            c /= c[-1]
            c[-1] = 1.0
            cum[lo:hi] = c
    out_rate = np.array([val[ptr[i]:ptr[i + 1]].sum() for i in range(n)])
    # keep the exact complement of the diagonal where it is available
    out_rate = np.where(out_rate > 0, 1.0 - np.asarray(diag, dtype=float), 0.0)
    out_rate = np.maximum(out_rate, 0.0)
    return OffDiagonalRows(ptr, idx, val, cum, out_rate)


@dataclass(frozen=True, eq=False)
class Geography:
    """Immutable finite geography with kernels a, a_hat, a_bar and weights rho."""

    dim: int
    side: int
    kernel_a: object
    rho_R: float = 4.0
    rho_beta: np.ndarray | None = None
    rho_truncation: int | None = None
    translation_invariant: bool = False
    rho: np.ndarray = field(init=False)
    _cache: dict = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.n_sites
        beta = np.full(n, 1.0 / n) if self.rho_beta is None else np.asarray(self.rho_beta, float)
        if beta.shape != (n,):
            raise ValueError(f"beta must have one entry per site ({n}), got shape {beta.shape}")
        object.__setattr__(self, "rho_beta", beta)
        n_max = required_truncation(self.rho_R, beta) if self.rho_truncation is None else self.rho_truncation
        rho = build_rho(self, self.rho_R, beta, n_max)
        object.__setattr__(self, "rho_truncation", int(n_max))
        object.__setattr__(self, "rho", rho)

    # ------------------------------------------------------------ basics
    @property
    def n_sites(self) -> int:
        return self.kernel_a.shape[0]

    @property
    def sites(self) -> np.ndarray:
        """Coordinates of every site, shape (n_sites, dim)."""
        if self.side ** self.dim != self.n_sites:
            return np.arange(self.n_sites)[:, None]
        return np.array(np.unravel_index(np.arange(self.n_sites), (self.side,) * self.dim)).T

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.kernel_a)

    @property
    def kernel_a_bar(self):
        if "abar" not in self._cache:
            self._cache["abar"] = self.kernel_a.T.tocsr() if self.is_sparse else self.kernel_a.T.copy()
        return self._cache["abar"]

    @property
    def kernel_a_hat(self):
        if "ahat" not in self._cache:
            a = self.kernel_a
            self._cache["ahat"] = ((a + a.T) * 0.5).tocsr() if self.is_sparse else (a + a.T) / 2.0
        return self._cache["ahat"]

    def dense(self, which: str = "a") -> np.ndarray:
        mat = {"a": self.kernel_a, "abar": self.kernel_a_bar, "ahat": self.kernel_a_hat}[which]
        return mat.toarray() if sp.issparse(mat) else np.asarray(mat)

    def offdiag(self, which: str = "a") -> OffDiagonalRows:
        """Cached off-diagonal CSR rows of ``a`` or ``abar`` for event sampling."""
        key = "off_" + which
        if key not in self._cache:
            mat = {"a": self.kernel_a, "abar": self.kernel_a_bar}[which]
            self._cache[key] = _offdiag_rows(mat)
        return self._cache[key]

    def site_index(self, coords) -> int:
        coords = tuple(int(c) % self.side for c in np.atleast_1d(coords))
        return int(np.ravel_multi_index(coords, (self.side,) * self.dim))

    @property
    def origin(self) -> int:
        return 0

    def contraction_gap(self) -> float:
        """max_eta [sum_xi a_hat(xi,eta) rho(xi) - (R/2) rho(eta)]; must not exceed the slack."""
        ahat = self.kernel_a_hat
        lhs = np.asarray(ahat.T @ self.rho).ravel()
        return float(np.max(lhs - 0.5 * self.rho_R * self.rho))

    def contraction_slack(self) -> float:
        r = 2.0 / self.rho_R
        return 0.5 * self.rho_R * r ** (self.rho_truncation + 1) * float(np.max(self.rho_beta))

    def check_contraction(self) -> bool:
        return self.contraction_gap() <= self.contraction_slack() + 1e-15 * float(np.max(self.rho))

    def metadata(self) -> dict:
        return {"dim": self.dim, "side": self.side, "n_sites": self.n_sites,
                "rho_R": self.rho_R, "rho_truncation": self.rho_truncation,
                "beta_uniform": bool(np.allclose(self.rho_beta, self.rho_beta[0]))}


# ---------------------------------------------------------------- builders

def _normalise_offsets(step_distribution: Mapping, dim: int):
    steps = []
    for off, p in step_distribution.items():
        off = tuple(int(v) for v in np.atleast_1d(off))
        if len(off) != dim:
            raise ValueError(f"offset {off} does not have dimension {dim}")
        p = float(p)
        if p < 0 or not math.isfinite(p):
            raise ValueError(f"step probability for {off} must be finite and nonnegative")
        steps.append((off, p))
    total = math.fsum(p for _, p in steps)
    if abs(total - 1.0) > ROW_TOL:
        raise ValueError(f"step distribution must sum to 1, sums to {total!r}")
    return steps


def build_torus(dim: int, side: int, step_distribution: Mapping, *, R: float = 4.0,
                beta=None, n_max: int | None = None, dense: bool | None = None) -> Geography:
    """Translation-invariant random-walk kernel on the torus (Z mod side)^dim."""
    if int(dim) < 1:
        raise ValueError("dim must be a positive integer")
    if int(side) < 1:
        raise ValueError("side must be a positive integer")
    dim, side = int(dim), int(side)
    steps = _normalise_offsets(step_distribution, dim)
    n = side ** dim
    shape = (side,) * dim
    coords = np.array(np.unravel_index(np.arange(n), shape)).T
    # wrapped offset -> probability (offsets equal mod side are merged)
    wrapped: dict[tuple, float] = {}
    for off, p in steps:
        key = tuple(o % side for o in off)
        wrapped[key] = wrapped.get(key, 0.0) + p
    rows, cols, vals = [], [], []
    for key, p in wrapped.items():
        if p == 0.0:
            continue
        tgt = np.ravel_multi_index(tuple((coords[:, k] + key[k]) % side for k in range(dim)), shape)
        rows.append(np.arange(n))
        cols.append(tgt)
        vals.append(np.full(n, p))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    use_dense = n <= DENSE_LIMIT if dense is None else dense
    kernel = mat.toarray() if use_dense else mat
    return Geography(dim, side, kernel, rho_R=R, rho_beta=beta, rho_truncation=n_max,
                     translation_invariant=True)


def nearest_neighbour_steps(dim: int) -> dict:
    """Simple symmetric nearest-neighbour step distribution."""
    steps = {}
    for k in range(dim):
        for s in (1, -1):
            off = [0] * dim
            off[k] = s
            steps[tuple(off)] = 1.0 / (2 * dim)
    return steps


def from_matrix(a, *, R: float = 4.0, beta=None, n_max: int | None = None) -> Geography:
    """Geography from an explicit row-stochastic matrix (no torus structure)."""
    mat = sp.csr_matrix(a) if sp.issparse(a) else np.array(a, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("kernel must be a square matrix")
    dense = mat.toarray() if sp.issparse(mat) else mat
    if np.any(dense < 0):
        raise ValueError("kernel entries must be nonnegative")
    rows = dense.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > ROW_TOL:
        raise ValueError("kernel rows must sum to 1")
    return Geography(1, mat.shape[0], mat, rho_R=R, rho_beta=beta, rho_truncation=n_max)


# ---------------------------------------------------------------- weights

def required_truncation(R: float, beta, tol: float = RHO_TAIL_TOL) -> int:
    """Smallest n_max whose geometric tail bound is at most ``tol``."""
    if not R > 2:
        raise ValueError(f"R must exceed 2 for the weight series to converge, got {R}")
    r = 2.0 / R
    bmax = float(np.max(beta))
    n = 0
    while r ** (n + 1) / (1.0 - r) * bmax > tol:
        n += 1
    return n


def build_rho(geo: Geography, R: float, beta, n_max: int, tol: float = RHO_TAIL_TOL) -> np.ndarray:
    """rho(xi) = sum_eta sum_{n<=n_max} (2/R)^n a_hat^(n)(eta, xi) beta(eta)."""
    if not R > 2:
        raise ValueError(f"R must exceed 2 for the weight series to converge, got {R}")
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= 0) or not np.all(np.isfinite(beta)):
        raise ValueError("beta weights must be positive and finite")
    n_max = int(n_max)
    if n_max < required_truncation(R, beta, tol):
        raise ValueError(f"n_max={n_max} is too small for tail tolerance {tol:g} "
                         f"(need at least {required_truncation(R, beta, tol)})")
    ahat_t = geo.kernel_a_hat.T
    r = 2.0 / R
    term = beta.copy()
    rho = beta.copy()
    for _ in range(n_max):
        term = r * np.asarray(ahat_t @ term).ravel()
        rho += term
    return rho


def rho_norm(x, geo: Geography, p: float = 1.0) -> float:
    """(sum_xi xbar_xi^p rho(xi))^(1/p), with xbar the sum over types."""
    if p < 1:
        raise ValueError("p must be at least 1")
    x = np.asarray(x, dtype=float)
    xbar = x.sum(axis=-1) if x.ndim == 2 else x
    return float(np.sum(xbar ** p * geo.rho) ** (1.0 / p))

