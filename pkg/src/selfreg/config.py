"""YAML run configuration: schema, defaults, validation and the config hash.

Layout (every key optional; unknown keys are errors)::

    geography:
      dim: 1
      side: 3
      steps: nearest_neighbour        # or a list of {offset: [1], p: 0.5}
      R: 4.0                          # Liggett-Spitzer weight parameter, must exceed 2
      beta: uniform                   # uniform (1/|G|) or a list of |G| positive weights
      n_max: null                     # null = smallest truncation meeting 1e-12
    model:
      M: 1
      gamma: 1.0                      # scalar or list of M
      K: 1.0                          # scalar or list of M
      lambda: 0.5                     # scalar or M x M matrix
    engine:
      kind: diffusion                 # particle | diffusion (used by check-martingale)
      dt: 0.001
      scheme: full_truncation         # full_truncation | split | qe
      dual_scheme: qe
      eps: 1.0
      max_events: 1000000000
      noise: true
    initial:
      x0: 1.0                         # scalar, list of M, or |G| x M
      alpha0: 0.0                     # scalar or list of |G|
      kappa0: []                      # list of [site, type, count]
    observation:
      times: [0.0, 1.0]
    replicates: 1000
    dual_replicates: null             # defaults to replicates
    seed: 0
    threads: 1
    output_dir: null
    check:
      points: 10000                   # generator check
      t: 0.5
      functions:                      # martingale test functions
        - {mu: [1.0, 0.0, 0.0], kappa: []}
      grid: 0.01
      theta_low: 0.5
      theta_high: 1.0
    study:
      grid: [1.0, 0.25, 0.0625]
      budget_seconds: null
      options: {}
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .diffusion_engine import SCHEMES
from .errors import ConfigError
from .experiments import Scenario
from .geometry import build_torus, nearest_neighbour_steps
from .model import ModelParams

DEFAULTS = {
    "geography": {"dim": 1, "side": 1, "steps": "nearest_neighbour", "R": 4.0, "beta": "uniform",
                  "n_max": None},
    "model": {"M": 1, "gamma": 1.0, "K": 1.0, "lambda": 0.5},
    "engine": {"kind": "diffusion", "dt": 1e-3, "scheme": "full_truncation", "dual_scheme": "qe", "eps": 1.0,
               "max_events": 10**9, "noise": True},
    "initial": {"x0": 1.0, "alpha0": 0.0, "kappa0": []},
    "observation": {"times": [0.0, 1.0]},
    "replicates": 1000,
    "dual_replicates": None,
    "seed": 0,
    "threads": 1,
    "output_dir": None,
    "check": {"points": 10_000, "t": 0.5, "functions": None, "grid": 0.01, "theta_low": 0.5,
              "theta_high": 1.0},
    "study": {"grid": None, "budget_seconds": None, "options": {}},
}

VECTOR = "(n,)"  # shape token: any nonempty 1-d list

# keys that do not change results and therefore stay out of the hash
UNHASHED = ("threads", "output_dir")


@dataclass
class RunConfig:
    data: dict                  # defaults filled in, plain JSON types
    geo: object
    params: ModelParams
    x0: np.ndarray
    alpha0: np.ndarray
    kappa0: np.ndarray
    times: np.ndarray

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    @property
    def engine(self) -> dict:
        return self.data["engine"]

    @property
    def replicates(self) -> int:
        return int(self.data["replicates"])

    @property
    def dual_replicates(self) -> int:
        d = self.data["dual_replicates"]
        return self.replicates if d is None else int(d)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def threads(self) -> int:
        return int(self.data["threads"])

    def scenario(self, t: float | None = None) -> Scenario:
        horizon = float(self.times[-1]) if t is None else float(t)
        return Scenario(self.geo, self.params, self.x0, horizon, float(self.engine["dt"]),
                        self.alpha0, self.kappa0, "config")

    def with_overrides(self, **kw) -> "RunConfig":
        data = copy.deepcopy(self.data)
        for k, v in kw.items():
            if v is not None:
                data[k] = v
        return build(data)


def config_hash(data: dict) -> str:
    """First 16 hex digits (64 bits) of sha256 over canonical JSON."""
    payload = {k: v for k, v in data.items() if k not in UNHASHED}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _merge(defaults: dict, given, path: str, errors: list) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        errors.append(f"{path or '<root>'}: expected a mapping")
        return copy.deepcopy(defaults)
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            errors.append(f"{sub}: unknown key")
            continue
        if isinstance(defaults[key], dict) and key != "options":
            out[key] = _merge(defaults[key], val, sub, errors)
        else:
            out[key] = val
    return out


def _number(val, path, errors, *, positive=False, nonneg=False, integer=False, above=None):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        errors.append(f"{path}: expected a number, got {val!r}")
        return None
    if integer and int(val) != val:
        errors.append(f"{path}: expected an integer, got {val!r}")
        return None
    if not np.isfinite(val):
        errors.append(f"{path}: must be finite")
        return None
    if positive and not val > 0:
        errors.append(f"{path}: must be positive")
    if nonneg and val < 0:
        errors.append(f"{path}: must be nonnegative")
    if above is not None and not val > above[0]:
        errors.append(f"{path}: must exceed {above[0]} ({above[1]})")
    return int(val) if integer else float(val)


def _array(val, path, errors, shapes, *, nonneg=True):
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{path}: expected numbers")
        return None
    if arr.shape not in shapes and not (VECTOR in shapes and arr.ndim == 1 and arr.size):
        errors.append(f"{path}: expected shape {' or '.join(map(str, shapes))}, got {arr.shape}")
        return None
    if not np.all(np.isfinite(arr)):
        errors.append(f"{path}: must be finite")
        return None
    if nonneg and np.any(arr < 0):
        errors.append(f"{path}: must be nonnegative")
        return None
    return arr


def _steps(val, dim, path, errors):
    if val == "nearest_neighbour":
        return nearest_neighbour_steps(dim)
    if not isinstance(val, list) or not val:
        errors.append(f"{path}: expected 'nearest_neighbour' or a nonempty list of {{offset, p}}")
        return None
    steps = {}
    for i, entry in enumerate(val):
        sub = f"{path}[{i}]"
        if not isinstance(entry, dict) or set(entry) != {"offset", "p"}:
            errors.append(f"{sub}: expected keys offset and p")
            continue
        off = np.atleast_1d(np.asarray(entry["offset"]))
        if off.shape != (dim,) or not np.all(off == np.round(off)):
            errors.append(f"{sub}.offset: expected {dim} integers")
            continue
        p = _number(entry["p"], f"{sub}.p", errors, nonneg=True)
        if p is not None:
            key = tuple(int(v) for v in off)
            steps[key] = steps.get(key, 0.0) + p
    if steps and abs(sum(steps.values()) - 1.0) > 1e-12:
        errors.append(f"{path}: step probabilities must sum to 1")
    return steps


def build(data: dict) -> RunConfig:
    """Validate a defaults-filled config tree; raises ConfigError listing every violation."""
    errors: list[str] = []
    g, m, e, ini = data["geography"], data["model"], data["engine"], data["initial"]

    dim = _number(g["dim"], "geography.dim", errors, integer=True, positive=True)
    side = _number(g["side"], "geography.side", errors, integer=True, positive=True)
    R = _number(g["R"], "geography.R", errors,
                above=(2.0, "the Liggett-Spitzer contraction needs R > 2"))
    n_max = None if g["n_max"] is None else _number(g["n_max"], "geography.n_max", errors,
                                                   integer=True, nonneg=True)
    steps = _steps(g["steps"], dim, "geography.steps", errors) if dim else None
    beta = None
    if g["beta"] != "uniform":
        beta = _array(g["beta"], "geography.beta", errors, [VECTOR])
        if beta is not None and np.any(beta <= 0):
            errors.append("geography.beta: weights must be positive")

    M = _number(m["M"], "model.M", errors, integer=True, positive=True)
    gamma = K = lam = None
    if M:
        gamma = _array(m["gamma"], "model.gamma", errors, [(), (M,)])
        K = _array(m["K"], "model.K", errors, [(), (M,)])
        lam = _array(m["lambda"], "model.lambda", errors, [(), (M, M)])
        if gamma is not None and np.any(gamma <= 0):
            errors.append("model.gamma: must be positive")

    if e["kind"] not in ("particle", "diffusion"):
        errors.append(f"engine.kind: expected particle or diffusion, got {e['kind']!r}")
    dt = _number(e["dt"], "engine.dt", errors, positive=True)
    for key in ("scheme", "dual_scheme"):
        if e[key] not in SCHEMES:
            errors.append(f"engine.{key}: expected one of {sorted(SCHEMES)}, got {e[key]!r}")
    _number(e["eps"], "engine.eps", errors, positive=True)
    _number(e["max_events"], "engine.max_events", errors, integer=True, positive=True)
    if not isinstance(e["noise"], bool):
        errors.append("engine.noise: expected true or false")

    times = _array(data["observation"]["times"], "observation.times", errors,
                   [VECTOR])
    if times is not None and np.any(np.diff(times) < 0):
        errors.append("observation.times: must be sorted")
        times = None
    _number(data["replicates"], "replicates", errors, integer=True, positive=True)
    if data["dual_replicates"] is not None:
        _number(data["dual_replicates"], "dual_replicates", errors, integer=True, positive=True)
    seed = _number(data["seed"], "seed", errors, integer=True, nonneg=True)
    if seed is not None and seed >= 2**64:
        errors.append("seed: must fit in 64 bits")
    _number(data["threads"], "threads", errors, integer=True, nonneg=True)
    if data["output_dir"] is not None and not isinstance(data["output_dir"], str):
        errors.append("output_dir: expected a path string")

    chk = data["check"]
    _number(chk["points"], "check.points", errors, integer=True, positive=True)
    _number(chk["t"], "check.t", errors, nonneg=True)
    _number(chk["grid"], "check.grid", errors, positive=True)
    lo = _number(chk["theta_low"], "check.theta_low", errors, nonneg=True)
    hi = _number(chk["theta_high"], "check.theta_high", errors, positive=True)
    if lo is not None and hi is not None and lo > hi:
        errors.append("check.theta_low: must not exceed check.theta_high")
    st = data["study"]
    if st["grid"] is not None:
        if not isinstance(st["grid"], list) or not st["grid"]:
            errors.append("study.grid: expected a nonempty list")
    if st["budget_seconds"] is not None:
        _number(st["budget_seconds"], "study.budget_seconds", errors, positive=True)
    if not isinstance(st["options"], dict):
        errors.append("study.options: expected a mapping")

    geo = params = None
    if not errors:
        try:
            geo = build_torus(dim, side, steps, R=R, beta=beta, n_max=n_max)
        except ValueError as exc:
            errors.append(f"geography: {exc}")
        try:
            params = ModelParams(np.broadcast_to(gamma, (M,)).copy(), np.broadcast_to(K, (M,)).copy(),
                                 np.broadcast_to(lam, (M, M)).copy())
        except ValueError as exc:
            errors.append(f"model: {exc}")
    x0 = alpha0 = kappa0 = None
    if geo is not None and params is not None:
        G = geo.n_sites
        x0 = _array(ini["x0"], "initial.x0", errors, [(), (M,), (G, M)])
        if x0 is not None:
            x0 = np.broadcast_to(x0 if x0.ndim != 1 else x0[None], (G, M)).copy()
        alpha0 = _array(ini["alpha0"], "initial.alpha0", errors, [(), (G,)])
        if alpha0 is not None:
            alpha0 = np.broadcast_to(alpha0, (G,)).copy()
        kappa0 = np.zeros((G, M), dtype=np.int64)
        if not isinstance(ini["kappa0"], list):
            errors.append("initial.kappa0: expected a list of [site, type, count]")
        else:
            for i, entry in enumerate(ini["kappa0"]):
                sub = f"initial.kappa0[{i}]"
                if (not isinstance(entry, list) or len(entry) != 3
                        or not all(isinstance(v, int) and not isinstance(v, bool) for v in entry)):
                    errors.append(f"{sub}: expected [site, type, count] integers")
                    continue
                s, ty, c = entry
                if not (0 <= s < G and 0 <= ty < M and c >= 0):
                    errors.append(f"{sub}: site, type or count out of range")
                    continue
                kappa0[s, ty] += c
        funcs = chk["functions"]
        if funcs is not None:
            if not isinstance(funcs, list) or not funcs:
                errors.append("check.functions: expected a nonempty list")
            else:
                for i, f in enumerate(funcs):
                    if not isinstance(f, dict) or set(f) - {"mu", "kappa"} or "mu" not in f:
                        errors.append(f"check.functions[{i}]: expected keys mu and kappa")
                        continue
                    _array(f["mu"], f"check.functions[{i}].mu", errors, [(), (G,)])
    if errors:
        raise ConfigError(errors)
    return RunConfig(data, geo, params, x0, alpha0, kappa0, times)


def _plain(obj):
    """Round-trip through JSON types so the hash sees canonical values."""
    return json.loads(json.dumps(obj, allow_nan=False))


def parse_config(text: str) -> RunConfig:
    """Parse YAML text, fill defaults and validate; ConfigError lists every violation."""
    try:
        raw = yaml.safe_load(text) if text and text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"<yaml>: {exc}"]) from None
    errors: list[str] = []
    data = _merge(DEFAULTS, raw, "", errors)
    if errors:
        # still validate the known keys so the report is complete
        try:
            build(data)
        except ConfigError as exc:
            errors.extend(exc.violations)
        raise ConfigError(errors)
    try:
        data = _plain(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError([f"<root>: unsupported value ({exc})"]) from None
    return build(data)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def reference_config_text() -> str:
    """The reference scenario as config text."""
    return """\
geography: {dim: 1, side: 3, steps: nearest_neighbour}
model: {M: 2, gamma: 1.0, K: 1.0, lambda: 0.5}
initial: {x0: 1.0, alpha0: 0.0, kappa0: [[0, 0, 1], [0, 1, 1]]}
observation: {times: [0.0, 0.5]}
"""
