"""Model parameters: branching rates, capacities, competition and exchangeability."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXCH_TOL = 1e-12


def _as_vector(values, name, M=None):
    arr = np.atleast_1d(np.asarray(values, dtype=float)).copy()
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector")
    if M is not None and arr.shape[0] != M:
        raise ValueError(f"{name} must have length {M}, got {arr.shape[0]}")
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Per-type rates gamma, capacities K and the competition matrix lambda."""

    gamma: np.ndarray
    K: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        gamma = _as_vector(self.gamma, "gamma")
        M = gamma.shape[0]
        K = _as_vector(self.K, "K", M)
        lam = np.array(self.lam, dtype=float, ndmin=2)
        if lam.shape != (M, M):
            raise ValueError(f"lambda must have shape ({M}, {M}), got {lam.shape}")
        for name, arr in (("gamma", gamma), ("K", K), ("lambda", lam)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            if np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
        if np.any(gamma <= 0):
            raise ValueError("gamma must be strictly positive")
        for arr in (gamma, K, lam):
            arr.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def exchangeable_model(cls, M: int, gamma: float, K: float, lam: float) -> "ModelParams":
        return cls(np.full(M, gamma), np.full(M, K), np.full((M, M), lam))

    @property
    def M(self) -> int:
        return self.gamma.shape[0]

    @property
    def exchangeable(self) -> bool:
        def flat(a):
            return float(np.max(a) - np.min(a)) <= EXCH_TOL
        return flat(self.gamma) and flat(self.K) and flat(self.lam)

    @property
    def critical(self) -> bool:
        """True when K and lambda vanish (pure critical branching)."""
        return not np.any(self.K) and not np.any(self.lam)

    def scalars(self) -> tuple[float, float, float]:
        """(gamma, K, lambda) of an exchangeable model."""
        if not self.exchangeable:
            raise ValueError("model is not exchangeable")
        return float(self.gamma[0]), float(self.K[0]), float(self.lam[0, 0])

    def moment_constant(self) -> float:
        """C = max gamma * max K used in the first-moment growth bound."""
        return float(np.max(self.gamma) * np.max(self.K))

    def to_dict(self) -> dict:
        return {"M": self.M, "gamma": self.gamma.tolist(), "K": self.K.tolist(),
                "lambda": self.lam.tolist(), "exchangeable": self.exchangeable,
                "critical": self.critical}


@dataclass(frozen=True, eq=False)
class ResourceSpec:
    """Resources of sizes R_res, type sensitivities s[j, m] and utilisations lambda_tilde[j, n]."""

    R_res: np.ndarray
    s: np.ndarray
    lambda_tilde: np.ndarray

    def __post_init__(self):
        R_res = _as_vector(self.R_res, "R")
        J = R_res.shape[0]
        s = np.array(self.s, dtype=float, ndmin=2)
        lt = np.array(self.lambda_tilde, dtype=float, ndmin=2)
        if s.shape[0] != J:
            raise ValueError(f"s must have {J} rows (one per resource), got {s.shape[0]}")
        if lt.shape != s.shape:
            raise ValueError(f"lambda_tilde must have shape {s.shape}, got {lt.shape}")
        if np.any(R_res <= 0):
            raise ValueError("resource sizes must be positive")
        if np.any(s < 0) or np.any(lt < 0):
            raise ValueError("sensitivities and utilisations must be nonnegative")
        object.__setattr__(self, "R_res", R_res)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "lambda_tilde", lt)

    @property
    def J(self) -> int:
        return self.R_res.shape[0]

    @property
    def M(self) -> int:
        return self.s.shape[1]


def derive_params(res: ResourceSpec, gamma) -> ModelParams:
    """K^m = sum_j s[j,m] R^j and lambda[m,n] = sum_j s[j,m] lambda_tilde[j,n]."""
    gamma = _as_vector(gamma, "gamma")
    if gamma.shape[0] != res.M:
        raise ValueError(f"gamma has {gamma.shape[0]} entries but resources describe {res.M} types")
    K = res.s.T @ res.R_res
    lam = res.s.T @ res.lambda_tilde
    return ModelParams(gamma, K, lam)


def interaction(params: ModelParams, m: int, y) -> float:
    """Per-capita growth Gamma^m(y) = K^m - sum_n lambda[m, n] y^n."""
    if not 0 <= m < params.M:
        raise IndexError(f"type index {m} out of range for M={params.M}")
    y = np.asarray(y, dtype=float)
    return float(params.K[m] - params.lam[m] @ y)


def interaction_all(params: ModelParams, y) -> np.ndarray:
    """Gamma for every type; ``y`` may carry leading site/replicate axes."""
    y = np.asarray(y, dtype=float)
    return params.K - y @ params.lam.T
