"""Linear-Gaussian diffusion paths in the form ``x_t = f x0 + b_mul x_lq + sigma eps``.

Each process is exposed two ways: the raw coefficient functions
(``ddpm_coeffs``, ``irsde_coeffs`` ...) indexed in the process's own time,
and :class:`Path` objects indexed by normalized time ``tau`` in ``[0, 1]``,
which is what every cross-process operation consumes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._kernels import em_affine
from .errors import DimensionMismatch, IRBridgeError, OutOfRange

__all__ = [
    "PathCoefficients",
    "DdpmSchedule",
    "BridgeParams",
    "ResidualSchedule",
    "ddpm_coeffs",
    "ddpm_coeffs_from_alpha_bar",
    "rectified_flow_coeffs",
    "irsde_coeffs",
    "goub_coeffs",
    "rddm_coeffs",
    "diffuir_coeffs",
    "reparam_sample",
    "em_simulate",
    "Path",
    "DdpmPath",
    "RectifiedFlowPath",
    "IrsdePath",
    "GoubPath",
    "RddmPath",
    "DiffuirPath",
    "make_path",
    "PATH_NAMES",
    "dump_path_csv",
]

_TIME_EPS = 1e-12


@dataclass(frozen=True)
class PathCoefficients:
    f: float
    b_mul: float
    sigma: float

    @property
    def ratio(self) -> float:
        """Noise-to-signal ratio ``sigma / f`` (``inf`` when f = 0)."""
        if self.f == 0.0:
            return math.inf if self.sigma > 0 else math.nan
        return self.sigma / self.f

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.f, self.b_mul, self.sigma)


# ---------------------------------------------------------------------------
# schedules / parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DdpmSchedule:
    """Discrete DDPM noise schedule; ``alpha_bars[k]`` belongs to step ``k + 1``."""

    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) == 0:
            raise ValueError("betas must be a non-empty 1-d sequence")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    @classmethod
    def scaled_linear(cls, n_steps=1000, beta_start=0.00085, beta_end=0.012):
        """Betas linear in square-root space (the Stable Diffusion v1 family)."""
        return cls(np.linspace(beta_start**0.5, beta_end**0.5, n_steps) ** 2)

    @classmethod
    def linear(cls, n_steps=1000, beta_start=1e-4, beta_end=0.02):
        return cls(np.linspace(beta_start, beta_end, n_steps))

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.n_steps:
            raise OutOfRange(f"step {t} outside [0, {self.n_steps}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def log_alpha_bar_grid(self) -> np.ndarray:
        return np.concatenate([[0.0], np.log(self.alpha_bars)])


@dataclass(frozen=True)
class BridgeParams:
    """Mean-reverting bridge parameters with ``g_t^2 = 2 lambda^2 theta_t``.

    ``kind`` selects the built-in theta schedule: ``"constant"`` (theta_bar
    linear in t) or ``"cosine"``. A custom monotone ``theta_bar_fn`` together
    with its derivative ``theta_fn`` overrides both.
    """

    lam: float = 2.0
    theta_bar_T: float = 8.0
    T: float = 1.0
    kind: str = "constant"
    theta_bar_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    theta_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if self.theta_bar_T < 0:
            raise ValueError("theta_bar_T must be nonnegative")
        if self.kind not in ("constant", "cosine"):
            raise ValueError(f"unknown theta schedule {self.kind!r}")
        if (self.theta_bar_fn is None) != (self.theta_fn is None):
            raise ValueError("theta_bar_fn and theta_fn must be given together")

    def theta_bar(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.theta_bar_fn is not None:
            return np.asarray(self.theta_bar_fn(t), dtype=np.float64)
        if self.kind == "constant":
            return self.theta_bar_T * (t / self.T)
        return self.theta_bar_T * (1.0 - np.cos(0.5 * np.pi * t / self.T))

    def theta(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.theta_fn is not None:
            return np.asarray(self.theta_fn(t), dtype=np.float64)
        if self.kind == "constant":
            return np.full_like(t, self.theta_bar_T / self.T)
        return self.theta_bar_T * 0.5 * np.pi / self.T * np.sin(0.5 * np.pi * t / self.T)

    def g_sq(self, t):
        return 2.0 * self.lam**2 * self.theta(t)

    def sigma_bar_sq(self, s, t):
        """``lambda^2 (1 - exp(-2 (theta_bar_t - theta_bar_s)))``."""
        d = np.asarray(self.theta_bar(t)) - np.asarray(self.theta_bar(s))
        return self.lam**2 * -np.expm1(-2.0 * np.maximum(d, 0.0))

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "theta_bar_T": self.theta_bar_T, "T": self.T, "kind": self.kind}


@dataclass(frozen=True)
class ResidualSchedule:
    """Caller-supplied residual-shift schedule; index 0 is time 0."""

    alpha_bars: np.ndarray
    beta_bars: np.ndarray
    delta_bars: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.asarray(self.alpha_bars, dtype=np.float64)
        b = np.asarray(self.beta_bars, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
            raise ValueError("alpha_bars and beta_bars must be equal-length 1-d sequences")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("schedule entries must be finite")
        if np.any(b < 0):
            raise ValueError("beta_bars must be nonnegative")
        if a[0] != 0.0 or b[0] != 0.0:
            raise ValueError("schedule must start at alpha_bar = beta_bar = 0")
        object.__setattr__(self, "alpha_bars", a)
        object.__setattr__(self, "beta_bars", b)
        if self.delta_bars is not None:
            d = np.asarray(self.delta_bars, dtype=np.float64)
            if d.shape != a.shape or not np.all(np.isfinite(d)):
                raise ValueError("delta_bars must match alpha_bars")
            object.__setattr__(self, "delta_bars", d)

    @property
    def n_steps(self) -> int:
        return len(self.alpha_bars) - 1

    @classmethod
    def default(cls, n_steps=1000, beta_rate=1.0, delta_frac=0.1):
        """Non-canonical demo schedule: linear alpha_bar ramp, constant-rate beta_bar."""
        ramp = np.linspace(0.0, 1.0, n_steps + 1)
        return cls(ramp, beta_rate * ramp, delta_frac * ramp)


# ---------------------------------------------------------------------------
# coefficient functions in native time
# ---------------------------------------------------------------------------


def ddpm_coeffs_from_alpha_bar(alpha_bar: float) -> PathCoefficients:
    if not 0.0 <= alpha_bar <= 1.0:
        raise OutOfRange("alpha_bar must lie in [0, 1]")
    return PathCoefficients(math.sqrt(alpha_bar), 0.0, math.sqrt(1.0 - alpha_bar))


def ddpm_coeffs(schedule: DdpmSchedule, t: int) -> PathCoefficients:
    if int(t) != t:
        raise OutOfRange("DDPM step index must be an integer")
    return ddpm_coeffs_from_alpha_bar(schedule.alpha_bar(int(t)))


def rectified_flow_coeffs(t: float) -> PathCoefficients:
    if not 0.0 <= t <= 1.0:
        raise OutOfRange(f"rectified-flow time {t} outside [0, 1]")
    return PathCoefficients(1.0 - t, 0.0, float(t))


def _check_bridge_time(params: BridgeParams, t: float):
    if not -_TIME_EPS <= t <= params.T * (1 + _TIME_EPS):
        raise OutOfRange(f"bridge time {t} outside [0, {params.T}]")
    return min(max(float(t), 0.0), params.T)


def _irsde_arrays(params: BridgeParams, t):
    tb = params.theta_bar(t)
    f = np.exp(-tb)
    return f, -np.expm1(-tb), params.lam * np.sqrt(-np.expm1(-2.0 * tb))


def _goub_arrays(params: BridgeParams, t):
    t = np.asarray(t, dtype=np.float64)
    T = params.T
    s_T = params.sigma_bar_sq(0.0, T)
    if np.any(s_T <= 0):
        raise IRBridgeError("degenerate GOUB horizon: sigma_bar_T^2 = 0")
    tb = params.theta_bar(t)
    s_tT = params.sigma_bar_sq(t, T)
    s_t = params.sigma_bar_sq(0.0, t)
    r = s_tT / s_T
    f = np.exp(-tb) * r
    b = -np.expm1(-tb) * r + np.exp(-2.0 * (params.theta_bar(T) - tb)) * s_t / s_T
    sigma = np.sqrt(np.maximum(s_t * s_tT / s_T, 0.0))
    return f, b, sigma


def irsde_coeffs(params: BridgeParams, t: float) -> PathCoefficients:
    t = _check_bridge_time(params, t)
    f, b, s = _irsde_arrays(params, t)
    return PathCoefficients(float(f), float(b), float(s))


def goub_coeffs(params: BridgeParams, t: float) -> PathCoefficients:
    t = _check_bridge_time(params, t)
    f, b, s = _goub_arrays(params, t)
    return PathCoefficients(float(f), float(b), float(s))


def _residual_at(values: np.ndarray, t: float) -> float:
    n = len(values) - 1
    if not 0 <= t <= n:
        raise OutOfRange(f"step {t} outside [0, {n}]")
    return float(np.interp(t, np.arange(n + 1), values))


def rddm_coeffs(schedule: ResidualSchedule, t: float) -> PathCoefficients:
    a = _residual_at(schedule.alpha_bars, t)
    b = _residual_at(schedule.beta_bars, t)
    return PathCoefficients(1.0 - a, a, math.sqrt(b))


def diffuir_coeffs(schedule: ResidualSchedule, t: float) -> PathCoefficients:
    if schedule.delta_bars is None:
        raise ValueError("DiffUIR needs delta_bars")
    a = _residual_at(schedule.alpha_bars, t)
    b = _residual_at(schedule.beta_bars, t)
    d = _residual_at(schedule.delta_bars, t)
    return PathCoefficients(1.0 - a, a - d, math.sqrt(b))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def reparam_sample(coeffs: PathCoefficients, x0, x_lq, noise) -> np.ndarray:
    """``f x0 + b_mul x_lq + sigma noise``; ``noise`` may carry leading batch axes."""
    x0 = np.asarray(x0, dtype=np.float64)
    x_lq = np.asarray(x_lq, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != x_lq.shape or noise.shape[noise.ndim - x0.ndim :] != x0.shape:
        raise DimensionMismatch(f"shapes {x0.shape}, {x_lq.shape}, {noise.shape} disagree")
    return coeffs.f * x0 + coeffs.b_mul * x_lq + coeffs.sigma * noise


def _em_coefficients(sde: str, params: BridgeParams, n_steps: int):
    h = params.T / n_steps
    t = np.arange(n_steps) * h
    theta = params.theta(t)
    g = np.sqrt(np.maximum(params.g_sq(t), 0.0))
    if sde == "irsde":
        kappa = theta
    elif sde == "goub":
        s_tT = params.sigma_bar_sq(t, params.T)
        with np.errstate(divide="ignore", invalid="ignore"):
            h_term = params.g_sq(t) * np.exp(-2.0 * (params.theta_bar(params.T) - params.theta_bar(t))) / s_tT
        kappa = theta + np.where(s_tT > 0, h_term, 0.0)
    else:
        raise ValueError(f"unknown SDE {sde!r}")
    kappa_h = kappa * h
    noise_scale = g * math.sqrt(h)
    if sde == "goub":
        # Limit of the h-transform over the last step: a point mass at x_T.
        kappa_h[-1] = 1.0
        noise_scale[-1] = 0.0
    return np.ascontiguousarray(kappa_h), np.ascontiguousarray(noise_scale)


def em_simulate(
    sde: str,
    params: BridgeParams,
    x0,
    x_lq,
    n_steps: int,
    rng: np.random.Generator,
    n_traj: int = 1,
    checkpoints: Sequence[float] = (),
    block_elems: int = 1 << 22,
):
    """Euler-Maruyama simulation of the IR-SDE or GOUB forward SDE.

    Returns the terminal states, shape ``(n_traj, d)``. When ``checkpoints``
    (normalized times, each a multiple of ``1 / n_steps``) are given, returns
    ``(terminal, {tau: states})`` instead.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    x_lq = np.atleast_1d(np.asarray(x_lq, dtype=np.float64))
    if x0.shape != x_lq.shape or x0.ndim != 1:
        raise DimensionMismatch("x0 and x_lq must be equal-length vectors")
    kappa_h, noise_scale = _em_coefficients(sde, params, n_steps)

    marks = {}
    for tau in checkpoints:
        k = int(round(tau * n_steps))
        if abs(k - tau * n_steps) > 1e-6 or not 0 <= k <= n_steps:
            raise OutOfRange(f"checkpoint {tau} is not on the step grid")
        marks.setdefault(k, []).append(tau)

    d = len(x0)
    x = np.ascontiguousarray(np.tile(x0, n_traj))
    target = np.ascontiguousarray(np.tile(x_lq, n_traj))
    per_block = max(1, block_elems // len(x))
    recorded = {}
    if 0 in marks:
        for tau in marks[0]:
            recorded[tau] = x.reshape(n_traj, d).copy()
    stops = sorted(set(k for k in marks if k > 0) | {n_steps})
    k = 0
    for stop in stops:
        while k < stop:
            nb = min(per_block, stop - k)
            z = rng.standard_normal((nb, len(x)))
            em_affine(x, target, kappa_h[k : k + nb], noise_scale[k : k + nb], z)
            k += nb
        for tau in marks.get(stop, ()):
            recorded[tau] = x.reshape(n_traj, d).copy()
    terminal = x.reshape(n_traj, d)
    if checkpoints:
        return terminal, recorded
    return terminal


# ---------------------------------------------------------------------------
# normalized-time path objects
# ---------------------------------------------------------------------------


def _check_tau(tau):
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < -_TIME_EPS) or np.any(tau > 1 + _TIME_EPS):
        raise OutOfRange("normalized time outside [0, 1]")
    return np.clip(tau, 0.0, 1.0)


class Path:
    """A diffusion path in normalized time ``tau`` in ``[0, 1]``."""

    name = "path"
    has_offset = True

    def arrays(self, tau):
        """Vectorized ``(f, b_mul, sigma)`` at normalized times ``tau``."""
        raise NotImplementedError

    def coeffs(self, tau: float) -> PathCoefficients:
        f, b, s = self.arrays(float(tau))
        return PathCoefficients(float(f), float(b), float(s))

    def ratio(self, tau):
        f, _, s = self.arrays(tau)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(f > 0, s / np.where(f > 0, f, 1.0), np.inf)
        return np.where((f == 0) & (s == 0), np.nan, r)

    def describe(self) -> dict:
        return {"name": self.name}


class DdpmPath(Path):
    """DDPM in normalized time ``tau = step / n_steps``.

    Between integer steps ``log alpha_bar`` is interpolated linearly, which
    keeps ``sigma / f`` strictly increasing.
    """

    has_offset = False

    def __init__(self, schedule: Optional[DdpmSchedule] = None, name: str = "ddpm"):
        self.schedule = schedule if schedule is not None else DdpmSchedule.scaled_linear()
        self.name = name
        self._grid = self.schedule.log_alpha_bar_grid()

    def alpha_bar(self, tau):
        tau = _check_tau(tau)
        n = self.schedule.n_steps
        return np.exp(np.interp(tau * n, np.arange(n + 1), self._grid))

    def arrays(self, tau):
        ab = self.alpha_bar(tau)
        return np.sqrt(ab), np.zeros_like(ab), np.sqrt(-np.expm1(np.log(ab)))

    def describe(self):
        s = self.schedule
        return {"name": self.name, "n_steps": s.n_steps, "beta_first": float(s.betas[0]), "beta_last": float(s.betas[-1])}


class RectifiedFlowPath(Path):
    name = "rf"
    has_offset = False

    def arrays(self, tau):
        tau = _check_tau(tau)
        return 1.0 - tau, np.zeros_like(tau), tau


class IrsdePath(Path):
    name = "irsde"

    def __init__(self, params: Optional[BridgeParams] = None):
        self.params = params if params is not None else BridgeParams()

    def arrays(self, tau):
        return _irsde_arrays(self.params, _check_tau(tau) * self.params.T)

    def describe(self):
        return {"name": self.name, **self.params.to_dict()}


class GoubPath(IrsdePath):
    name = "goub"

    def arrays(self, tau):
        return _goub_arrays(self.params, _check_tau(tau) * self.params.T)


class RddmPath(Path):
    name = "rddm"

    def __init__(self, schedule: Optional[ResidualSchedule] = None):
        self.schedule = schedule if schedule is not None else ResidualSchedule.default()

    def _interp(self, values, tau):
        n = self.schedule.n_steps
        return np.interp(_check_tau(tau) * n, np.arange(n + 1), values)

    def arrays(self, tau):
        a = self._interp(self.schedule.alpha_bars, tau)
        b = self._interp(self.schedule.beta_bars, tau)
        return 1.0 - a, a, np.sqrt(b)

    def describe(self):
        return {"name": self.name, "n_steps": self.schedule.n_steps, "canonical": False}


class DiffuirPath(RddmPath):
    name = "diffuir"

    def __init__(self, schedule: Optional[ResidualSchedule] = None):
        super().__init__(schedule)
        if self.schedule.delta_bars is None:
            raise ValueError("DiffUIR needs delta_bars")

    def arrays(self, tau):
        a = self._interp(self.schedule.alpha_bars, tau)
        b = self._interp(self.schedule.beta_bars, tau)
        d = self._interp(self.schedule.delta_bars, tau)
        return 1.0 - a, a - d, np.sqrt(b)


PATH_NAMES = ("ddpm", "ddpm-linear", "rf", "irsde", "goub", "rddm", "diffuir")


def make_path(name: str, params: Optional[BridgeParams] = None, **kwargs) -> Path:
    """Build a registered path by name.

    Bridge paths accept ``params`` or BridgeParams keyword fields
    (``lam``, ``theta_bar_T``, ``T``, ``kind``); DDPM paths accept
    ``n_steps``, ``beta_start``, ``beta_end``.
    """
    if name == "ddpm":
        return DdpmPath(DdpmSchedule.scaled_linear(**kwargs), name="ddpm")
    if name == "ddpm-linear":
        return DdpmPath(DdpmSchedule.linear(**kwargs), name="ddpm-linear")
    if name == "rf":
        return RectifiedFlowPath()
    if name in ("irsde", "goub"):
        if params is None:
            params = BridgeParams(**kwargs)
        return IrsdePath(params) if name == "irsde" else GoubPath(params)
    if name == "rddm":
        return RddmPath(ResidualSchedule.default(**kwargs))
    if name == "diffuir":
        return DiffuirPath(ResidualSchedule.default(**kwargs))
    raise ValueError(f"unknown path {name!r}; choose from {', '.join(PATH_NAMES)}")


def dump_path_csv(path: Path, grid: int, out) -> None:
    """Write ``tau,f,b_mul,sigma`` rows on a uniform grid of ``grid`` points."""
    if grid < 2:
        raise ValueError("grid needs at least two points")
    tau = np.linspace(0.0, 1.0, grid)
    f, b, s = (np.broadcast_to(a, tau.shape) for a in path.arrays(tau))
    own = isinstance(out, (str, bytes)) or hasattr(out, "__fspath__")
    fh = open(out, "w", newline="", encoding="utf-8") if own else out
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "f", "b_mul", "sigma"])
        for row in zip(tau, f, b, s):
            w.writerow(["%.17g" % v for v in row])
    finally:
        if own:
            fh.close()
