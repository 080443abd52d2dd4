"""Synthetic priors, linear degradations and exact posterior-mean denoisers.

Every prior is handled as a Gaussian mixture (a Gaussian field is a single
component), so the marginal of ``x_t = f x0 + b_mul x_lq + sigma eps`` is a
mixture too and both ``E[x0 | x_t]`` and the score have closed forms.
Covariances are kept in eigendecomposed form; they may be singular, which is
what conditioning on a noise-free observation produces.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch
from .paths import PathCoefficients
from .rng import substream

__all__ = [
    "GaussianMixturePrior",
    "GaussianFieldPrior",
    "LinearDegradation",
    "TaskInstance",
    "DegenerateConditioning",
    "sample_prior",
    "degrade",
    "condition_prior",
    "posterior_mean_uncond",
    "posterior_mean_cond",
    "score",
    "log_density",
    "eps_from_x0",
    "x0_from_eps",
    "OracleDenoiser",
    "PerfectDenoiser",
    "make_task",
    "TASK_NAMES",
]

_EIG_RTOL = 1e-12


class DegenerateConditioning(UserWarning):
    """sigma = 0: the posterior mean degenerates to inverting ``f``."""


def _eigh_psd(S: np.ndarray):
    S = 0.5 * (S + S.T)
    e, U = np.linalg.eigh(S)
    tol = _EIG_RTOL * max(float(np.max(np.abs(e))), 1.0)
    if e.min() < -1e3 * tol - 1e-10:
        raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {e.min():.3g})")
    return np.where(e < tol, 0.0, e), U


@dataclass
class GaussianMixturePrior:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    _eig: list = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        if self.covariances.ndim == 2:
            self.covariances = self.covariances[None]
        K, d = self.means.shape
        if self.weights.shape != (K,) or self.covariances.shape != (K, d, d):
            raise DimensionMismatch("weights/means/covariances disagree")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        if not np.allclose(self.covariances, np.swapaxes(self.covariances, 1, 2), atol=1e-12):
            raise ValueError("covariances must be symmetric")
        self._eig = [_eigh_psd(S) for S in self.covariances]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def peak(self) -> float:
        """Signal peak for PSNR: largest ``|mean| + 3 std`` over components and pixels."""
        sd = np.sqrt(np.maximum(np.diagonal(self.covariances, axis1=1, axis2=2), 0.0))
        return float(np.max(np.abs(self.means) + 3.0 * sd))


class GaussianFieldPrior(GaussianMixturePrior):
    """Stationary RBF Gaussian field on an ``H x W`` lattice, flattened row-major."""

    def __init__(self, H=16, W=16, length_scale=3.0, variance=0.25, mean=1.0, jitter=1e-8):
        yy, xx = np.mgrid[0:H, 0:W]
        pts = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        cov = variance * np.exp(-0.5 * d2 / length_scale**2) + jitter * np.eye(H * W)
        self.shape = (H, W)
        self.length_scale = length_scale
        self.variance = variance
        self.field_mean = mean
        super().__init__(np.ones(1), np.full((1, H * W), float(mean)), cov[None])

    def peak(self) -> float:
        return float(self.field_mean + 3.0 * np.sqrt(self.variance))


@dataclass
class LinearDegradation:
    A: np.ndarray
    c: np.ndarray
    noise_std: float = 0.0
    name: str = "linear"

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if self.c.shape != (self.A.shape[0],):
            raise DimensionMismatch("bias length must equal the number of observation rows")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @classmethod
    def identity(cls, d, noise_std=0.0):
        return cls(np.eye(d), np.zeros(d), noise_std, "identity")

    @classmethod
    def dimming(cls, d, a=0.3, c=0.0, noise_std=0.02):
        if not 0 < a <= 1:
            raise ValueError("dimming factor must lie in (0, 1]")
        return cls(a * np.eye(d), np.full(d, float(c)), noise_std, "dim")

    @classmethod
    def mask(cls, d, keep_fraction=0.5, rng=None, noise_std=0.0, keep=None):
        """Diagonal 0/1 mask; dropped pixels become all-zero rows."""
        if keep is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            n_keep = int(round(keep_fraction * d))
            keep = np.zeros(d, dtype=bool)
            keep[rng.permutation(d)[:n_keep]] = True
        return cls(np.diag(np.asarray(keep, dtype=np.float64)), np.zeros(d), noise_std, "mask")

    @classmethod
    def blur(cls, H, W, size=3, noise_std=0.02):
        """Uniform ``size x size`` box blur, averaging over in-bounds neighbours."""
        r = size // 2
        A = np.zeros((H * W, H * W))
        for y in range(H):
            for x in range(W):
                nb = [(yy, xx) for yy in range(y - r, y + r + 1) for xx in range(x - r, x + r + 1) if 0 <= yy < H and 0 <= xx < W]
                for yy, xx in nb:
                    A[y * W + x, yy * W + xx] = 1.0 / len(nb)
        return cls(A, np.zeros(H * W), noise_std, "blur")

    def to_dict(self) -> dict:
        return {"name": self.name, "noise_std": self.noise_std, "rows": int(self.A.shape[0])}


@dataclass
class TaskInstance:
    prior: GaussianMixturePrior
    degradation: LinearDegradation
    x0: np.ndarray
    x_lq: np.ndarray
    seed: int
    name: str = "task"
    config: dict = field(default_factory=dict)

    @property
    def peak(self) -> float:
        return self.prior.peak()


def sample_prior(prior: GaussianMixturePrior, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    n = 1 if size is None else int(size)
    comp = rng.choice(prior.n_components, size=n, p=prior.weights)
    z = rng.standard_normal((n, prior.dim))
    out = np.empty((n, prior.dim))
    for k, (e, U) in enumerate(prior._eig):
        sel = comp == k
        if sel.any():
            out[sel] = prior.means[k] + (z[sel] * np.sqrt(e)) @ U.T
    return out[0] if size is None else out


def degrade(x0, degradation: LinearDegradation, rng: np.random.Generator) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[-1] != degradation.A.shape[1]:
        raise DimensionMismatch(f"state dimension {x0.shape[-1]} != {degradation.A.shape[1]}")
    y = x0 @ degradation.A.T + degradation.c
    if degradation.noise_std > 0:
        y = y + degradation.noise_std * rng.standard_normal(y.shape)
    return y


def condition_prior(prior: GaussianMixturePrior, degradation: LinearDegradation, y) -> GaussianMixturePrior:
    """Posterior of the mixture given ``y = A x0 + c + noise_std eps``.

    Noise-free or rank-deficient observations are handled by conditioning on
    the range of ``A S A^T + noise_std^2 I`` only (pseudo-inverse).
    """
    A, c, s2 = degradation.A, degradation.c, degradation.noise_std**2
    y = np.asarray(y, dtype=np.float64)
    means, covs, logw = [], [], []
    for k in range(prior.n_components):
        m, S = prior.means[k], prior.covariances[k]
        C = A @ S @ A.T + s2 * np.eye(A.shape[0])
        e, U = _eigh_psd(C)
        keep = e > 0
        r = y - c - A @ m
        w = U[:, keep].T @ r
        ek = e[keep]
        gain = S @ A.T @ U[:, keep] / ek
        means.append(m + gain @ w)
        Sp = S - gain @ (U[:, keep].T @ A @ S)
        covs.append(0.5 * (Sp + Sp.T))
        logw.append(np.log(prior.weights[k]) - 0.5 * (np.sum(w**2 / ek) + np.sum(np.log(ek)) + keep.sum() * np.log(2 * np.pi)))
    logw = np.array(logw)
    weights = np.exp(logw - logsumexp(logw))
    weights = weights / weights.sum()
    cond = GaussianMixturePrior(weights, np.array(means), np.array(covs))
    return cond


def _component_terms(prior: GaussianMixturePrior, z: np.ndarray, f: float, sigma: float):
    """Per-component log marginal density of ``z`` and whitened residual pieces."""
    out = []
    for k, (e, U) in enumerate(prior._eig):
        d = f * f * e + sigma * sigma
        w = (z - f * prior.means[k]) @ U
        logp = -0.5 * (np.sum(w * w / d, axis=-1) + np.sum(np.log(d)) + prior.dim * np.log(2 * np.pi))
        out.append((np.log(prior.weights[k]) + logp, w, d, e, U))
    return out


def _responsibilities(terms):
    logs = np.stack([t[0] for t in terms], axis=0)
    return np.exp(logs - logsumexp(logs, axis=0, keepdims=True))


def _offset(x_t, coeffs: PathCoefficients, x_lq):
    x_t = np.asarray(x_t, dtype=np.float64)
    if coeffs.b_mul != 0.0:
        if x_lq is None:
            raise ValueError("x_lq required for a path with an offset")
        x_t = x_t - coeffs.b_mul * np.asarray(x_lq, dtype=np.float64)
    return x_t


def posterior_mean_uncond(prior: GaussianMixturePrior, x_t, coeffs: PathCoefficients, x_lq=None) -> np.ndarray:
    """``E[x0 | x_t]`` for ``x_t = f x0 + b_mul x_lq + sigma eps``, ``x0 ~ prior``."""
    z = _offset(x_t, coeffs, x_lq)
    if z.shape[-1] != prior.dim:
        raise DimensionMismatch("state dimension does not match the prior")
    f, sigma = coeffs.f, coeffs.sigma
    if sigma == 0.0:
        warnings.warn("sigma = 0: returning the state inverted through f", DegenerateConditioning, stacklevel=2)
        return z / f
    terms = _component_terms(prior, z, f, sigma)
    resp = _responsibilities(terms)
    out = np.zeros_like(z)
    for k, (_, w, d, e, U) in enumerate(terms):
        xk = prior.means[k] + (w * (f * e / d)) @ U.T
        out = out + resp[k][..., None] * xk
    return out


def posterior_mean_cond(prior, degradation, x_t, coeffs: PathCoefficients, x_lq) -> np.ndarray:
    """``E[x0 | x_t, y = x_lq]``: condition the prior on the observation first."""
    return posterior_mean_uncond(condition_prior(prior, degradation, x_lq), x_t, coeffs, x_lq)


def score(prior: GaussianMixturePrior, x, coeffs: PathCoefficients, x_lq=None) -> np.ndarray:
    """Gradient of the log marginal density of ``x_t`` at ``x``."""
    if coeffs.sigma == 0.0:
        raise ValueError("score undefined at sigma = 0")
    z = _offset(x, coeffs, x_lq)
    terms = _component_terms(prior, z, coeffs.f, coeffs.sigma)
    resp = _responsibilities(terms)
    out = np.zeros_like(z)
    for k, (_, w, d, e, U) in enumerate(terms):
        out = out - resp[k][..., None] * ((w / d) @ U.T)
    return out


def log_density(prior: GaussianMixturePrior, x, coeffs: PathCoefficients, x_lq=None) -> np.ndarray:
    z = _offset(x, coeffs, x_lq)
    terms = _component_terms(prior, z, coeffs.f, coeffs.sigma)
    return logsumexp(np.stack([t[0] for t in terms], axis=0), axis=0)


def eps_from_x0(x_t, x_hat0, coeffs: PathCoefficients, x_lq=None):
    b = 0.0 if x_lq is None else coeffs.b_mul * np.asarray(x_lq)
    return (np.asarray(x_t) - coeffs.f * np.asarray(x_hat0) - b) / coeffs.sigma


def x0_from_eps(x_t, eps, coeffs: PathCoefficients, x_lq=None):
    b = 0.0 if x_lq is None else coeffs.b_mul * np.asarray(x_lq)
    return (np.asarray(x_t) - coeffs.sigma * np.asarray(eps) - b) / coeffs.f


class OracleDenoiser:
    """Exact x0-predictor; conditional when a degradation is supplied."""

    def __init__(self, prior: GaussianMixturePrior, degradation: Optional[LinearDegradation] = None, y=None):
        self.conditional = degradation is not None
        self.prior = condition_prior(prior, degradation, y) if self.conditional else prior

    def __call__(self, x_t, coeffs: PathCoefficients, x_lq=None):
        return posterior_mean_uncond(self.prior, x_t, coeffs, x_lq)

    def score(self, x, coeffs: PathCoefficients, x_lq=None):
        return score(self.prior, x, coeffs, x_lq)


class PerfectDenoiser:
    """Returns the true clean sample regardless of the input."""

    conditional = True

    def __init__(self, x0):
        self.x0 = np.asarray(x0, dtype=np.float64)

    def __call__(self, x_t, coeffs, x_lq=None):
        return self.x0.copy()


TASK_NAMES = ("mask", "dim", "blur", "gmm")

DEFAULT_TASKS = {
    "field": {"H": 16, "W": 16, "length_scale": 3.0, "variance": 0.25, "mean": 1.0},
    "mask": {"keep_fraction": 0.5, "noise_std": 0.0},
    "dim": {"a": 0.3, "c": 0.0, "noise_std": 0.02},
    "blur": {"size": 3, "noise_std": 0.02},
    "gmm": {
        "weights": [0.3, 0.4, 0.3],
        "means": [[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]],
        "covariances": [[[0.3, 0.1], [0.1, 0.2]], [[0.2, -0.05], [-0.05, 0.3]], [[0.25, 0.0], [0.0, 0.15]]],
        "degradation": {"a": 0.3, "c": 0.0, "noise_std": 0.02},
    },
}


def make_task(name: str, seed: int, config: Optional[dict] = None) -> TaskInstance:
    """Build one of the default tasks: ``mask``, ``dim``, ``blur`` (16x16 field) or ``gmm`` (2-d)."""
    cfg = {k: dict(v) for k, v in DEFAULT_TASKS.items()}
    for k, v in (config or {}).items():
        if isinstance(v, dict) and k in cfg:
            cfg[k].update(v)
        else:
            cfg[k] = v
    if name == "gmm":
        g = cfg["gmm"]
        prior = GaussianMixturePrior(g["weights"], g["means"], g["covariances"])
        deg = LinearDegradation.dimming(prior.dim, **g["degradation"])
        used = {"gmm": g}
    elif name in ("mask", "dim", "blur"):
        fc = cfg["field"]
        prior = GaussianFieldPrior(**fc)
        d = prior.dim
        if name == "mask":
            m = cfg["mask"]
            deg = LinearDegradation.mask(d, m["keep_fraction"], substream(seed, "task", name, "mask"), m["noise_std"])
        elif name == "dim":
            deg = LinearDegradation.dimming(d, **cfg["dim"])
        else:
            b = cfg["blur"]
            deg = LinearDegradation.blur(fc["H"], fc["W"], b["size"], b["noise_std"])
        used = {"field": fc, name: cfg[name]}
    else:
        raise ValueError(f"unknown task {name!r}; choose from {', '.join(TASK_NAMES)}")
    x0 = sample_prior(prior, substream(seed, "task", name, "x0"))
    x_lq = degrade(x0, deg, substream(seed, "task", name, "noise"))
    return TaskInstance(prior, deg, x0, x_lq, int(seed), name, {"task": name, **used, "peak": prior.peak()})
