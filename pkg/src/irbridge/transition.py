"""State transitions between two linear-Gaussian paths sharing ``P_data``.

A state ``x_i`` of the source path maps to the destination path through

    x_j = alpha x_i + beta x0 + gamma_mul x_lq + sigma eps

with ``alpha = sqrt((sigma_j^2 - sigma^2) / sigma_i^2)``,
``beta = f_j - alpha f_i`` and ``gamma_mul = b_j - alpha b_i``. The noise
level ``sigma`` is free inside ``[sigma_range.lo, sigma_range.hi]``.

Whether ``beta`` can vanish depends only on the noise-to-signal ratios
``sigma / f`` of the two states: the transition is x0-free exactly when the
destination ratio is at least the source ratio.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    AboveCritical,
    BelowCritical,
    NoSolution,
    NoValidSigma,
    SigmaOutOfRange,
    SourceDegenerate,
    ZeroF,
)
from .paths import Path, PathCoefficients

__all__ = [
    "SigmaRange",
    "TransitionCoefficients",
    "CriticalTimestep",
    "sigma_range",
    "transition_coeffs",
    "forward_coeffs",
    "reverse_coeffs",
    "apply_transition",
    "forward_transition",
    "reverse_transition",
    "critical_timestep",
    "critical_residual",
    "critical_curve",
    "forward_feasible",
    "reverse_feasible",
    "TIE_RTOL",
]

# Relative slack on sigma^2 comparisons; absorbs round-off at exact ties.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SigmaRange:
    lo: float
    hi: float

    def __contains__(self, sigma: float) -> bool:
        slack = TIE_RTOL * max(self.hi, 1e-300)
        return self.lo - slack <= sigma <= self.hi + slack


@dataclass(frozen=True)
class TransitionCoefficients:
    alpha: float
    beta: float
    gamma_mul: float
    sigma: float
    valid_range: SigmaRange

    def identity_errors(self, src: PathCoefficients, dst: PathCoefficients) -> tuple[float, float, float]:
        """Reconstruction errors of ``f``, ``b_mul`` and ``sigma^2``, in ulps of the largest term."""
        eps = np.finfo(float).eps

        def ulps(lhs, rhs, *terms):
            scale = max(abs(t) for t in (lhs, rhs, *terms))
            return 0.0 if scale == 0 else abs(lhs - rhs) / (eps * scale)

        af = self.alpha * src.f
        ab = self.alpha * src.b_mul
        a_s = (self.alpha * src.sigma) ** 2
        s2 = self.sigma**2
        return (
            ulps(af + self.beta, dst.f, af, self.beta),
            ulps(ab + self.gamma_mul, dst.b_mul, ab, self.gamma_mul),
            ulps(a_s + s2, dst.sigma**2, a_s, s2),
        )


@dataclass(frozen=True)
class CriticalTimestep:
    source_index: float
    value: float
    residual: float


def sigma_range(src: PathCoefficients, dst: PathCoefficients) -> SigmaRange:
    """Admissible transition noise, in standard-deviation form."""
    if src.sigma == 0.0:
        raise SourceDegenerate("source state has zero noise; the transition equation does not apply")
    if src.f == 0.0:
        raise ZeroF("source state has zero signal coefficient")
    hi = dst.sigma
    lo_sq = hi * hi - (dst.f * src.sigma / src.f) ** 2
    if lo_sq <= TIE_RTOL * hi * hi:
        lo_sq = 0.0
    lo = math.sqrt(lo_sq)
    if not lo <= hi:
        raise NoValidSigma(f"empty sigma interval [{lo}, {hi}]")
    return SigmaRange(lo, hi)


def transition_coeffs(src: PathCoefficients, dst: PathCoefficients, sigma: float) -> TransitionCoefficients:
    rng_ = sigma_range(src, dst)
    if sigma not in rng_:
        raise SigmaOutOfRange(f"sigma={sigma:.6g} outside [{rng_.lo:.6g}, {rng_.hi:.6g}]")
    sigma = min(max(float(sigma), rng_.lo), rng_.hi)
    # sigma_j^2 - sigma^2, expanded around whichever end of the interval is
    # nearer so that alpha keeps full relative precision at both ends
    if rng_.lo > 0.0 and sigma - rng_.lo < rng_.hi - sigma:
        q = (dst.f * src.sigma / src.f) ** 2
        num = q + (rng_.lo - sigma) * (rng_.lo + sigma)
    else:
        num = (rng_.hi - sigma) * (rng_.hi + sigma)
    alpha = math.sqrt(max(num, 0.0) / src.sigma**2)
    beta = dst.f - alpha * src.f
    gamma = dst.b_mul - alpha * src.b_mul
    return TransitionCoefficients(alpha, beta, gamma, sigma, rng_)


def forward_feasible(src: PathCoefficients, dst: PathCoefficients) -> bool:
    """True when the destination is at or past the source's critical timestep."""
    if src.sigma == 0.0 and src.f > 0:
        return True
    return dst.sigma**2 * (1 + TIE_RTOL) >= (dst.f * src.sigma / src.f) ** 2 if src.f > 0 else False


def reverse_feasible(gen: PathCoefficients, bridge_next: PathCoefficients) -> bool:
    """True when a noise-free map from ``gen`` to ``bridge_next`` keeps beta >= 0."""
    if gen.sigma == 0.0 or gen.f == 0.0:
        return False
    return sigma_range(gen, bridge_next).lo == 0.0


def forward_coeffs(src: PathCoefficients, dst: PathCoefficients) -> TransitionCoefficients:
    """Minimal-noise coefficients; beta vanishes when the pair is feasible."""
    rng_ = sigma_range(src, dst)
    if not forward_feasible(src, dst):
        raise BelowCritical(
            f"destination ratio {dst.ratio:.6g} below source ratio {src.ratio:.6g}; beta = 0 unreachable"
        )
    return transition_coeffs(src, dst, rng_.lo)


def reverse_coeffs(gen: PathCoefficients, bridge_next: PathCoefficients) -> TransitionCoefficients:
    """Noise-free coefficients mapping a generative state back onto the bridge."""
    rng_ = sigma_range(gen, bridge_next)
    if rng_.lo > 0.0:
        raise AboveCritical(
            f"bridge target ratio {bridge_next.ratio:.6g} exceeds generative ratio {gen.ratio:.6g}"
        )
    return transition_coeffs(gen, bridge_next, 0.0)


def apply_transition(tc: TransitionCoefficients, x_src, x0, x_lq, noise=None) -> np.ndarray:
    """Full transition with an explicit ``x0`` (for verification with a known sample)."""
    out = tc.alpha * np.asarray(x_src) + tc.beta * np.asarray(x0) + tc.gamma_mul * np.asarray(x_lq)
    if tc.sigma > 0:
        if noise is None:
            raise ValueError("noise required when sigma > 0")
        out = out + tc.sigma * np.asarray(noise)
    return out


def forward_transition(
    x_i,
    src: PathCoefficients,
    dst: PathCoefficients,
    x_lq,
    rng: Optional[np.random.Generator] = None,
    noise=None,
) -> np.ndarray:
    """Map a bridge state onto the generative path without an x0 estimate."""
    tc = forward_coeffs(src, dst)
    x_i = np.asarray(x_i, dtype=np.float64)
    out = tc.alpha * x_i + tc.gamma_mul * np.asarray(x_lq, dtype=np.float64)
    if tc.sigma > 0:
        if noise is None:
            if rng is None:
                raise ValueError("forward transition with sigma > 0 needs rng or noise")
            noise = rng.standard_normal(x_i.shape)
        out = out + tc.sigma * noise
    return out


def reverse_transition(x_j, src: PathCoefficients, dst: PathCoefficients, x_hat0, x_lq) -> np.ndarray:
    """Deterministic map from generative state ``x_j`` (coeffs ``src``) to bridge coeffs ``dst``."""
    tc = reverse_coeffs(src, dst)
    return (
        tc.alpha * np.asarray(x_j, dtype=np.float64)
        + tc.beta * np.asarray(x_hat0, dtype=np.float64)
        + tc.gamma_mul * np.asarray(x_lq, dtype=np.float64)
    )


def critical_residual(src: PathCoefficients, dst: PathCoefficients) -> float:
    """``|(f_i/f_j)^2 - (sigma_i/sigma_j)^2|``; zero exactly at the critical timestep."""
    if src.sigma == 0.0 and dst.sigma == 0.0:
        return 0.0
    return abs((src.f / dst.f) ** 2 - (src.sigma / dst.sigma) ** 2)


def _default_grid(n=1000):
    return np.linspace(0.0, 1.0, n)


def critical_timestep(
    src: PathCoefficients,
    dst_path: Path,
    search_grid=None,
    tol: float = 1e-6,
    source_index: float = math.nan,
) -> CriticalTimestep:
    """Smallest destination time whose ratio ``sigma/f`` reaches the source's.

    Grid scan followed by bisection. Bisection runs until the bracket is at
    floating-point resolution, which is always tighter than ``tol``.
    """
    if search_grid is None:
        grid = _default_grid()
    elif isinstance(search_grid, (int, np.integer)):
        grid = _default_grid(int(search_grid))
    else:
        grid = np.asarray(search_grid, dtype=np.float64)
    if src.f <= 0:
        raise ZeroF("source state has zero signal coefficient")
    target = src.sigma / src.f
    ratios = dst_path.ratio(grid)
    if target == 0.0:
        if grid[0] == 0.0:
            return CriticalTimestep(source_index, 0.0, 0.0)
        raise NoSolution("zero-noise source, grid starts after 0", side="below")
    ok = ratios >= target
    if not ok.any():
        raise NoSolution(f"critical timestep above grid end {grid[-1]:.6g}", side="above")
    k = int(np.argmax(ok))
    if k == 0:
        if grid[0] == 0.0 or ratios[0] == target:
            val = float(grid[0])
            return CriticalTimestep(source_index, val, critical_residual(src, dst_path.coeffs(val)))
        raise NoSolution(f"critical timestep below grid start {grid[0]:.6g}", side="below")
    lo, hi = float(grid[k - 1]), float(grid[k])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if dst_path.ratio(mid) >= target:
            hi = mid
        else:
            lo = mid
    assert hi - lo <= tol
    return CriticalTimestep(source_index, hi, critical_residual(src, dst_path.coeffs(hi)))


def critical_curve(bridge_path: Path, gen_path: Path, taus: Sequence[float], search_grid=None):
    """Critical timesteps for each bridge time; ``nan`` where none exists.

    Returns ``(values, residuals, status)`` with status ``"ok"``, ``"above"``
    or ``"below"`` per point.
    """
    values, residuals, status = [], [], []
    for tau in taus:
        src = bridge_path.coeffs(tau)
        try:
            ct = critical_timestep(src, gen_path, search_grid, source_index=float(tau))
        except NoSolution as exc:
            values.append(math.nan)
            residuals.append(math.nan)
            status.append(exc.side)
        except ZeroF:
            values.append(math.nan)
            residuals.append(math.nan)
            status.append("above")
        else:
            values.append(ct.value)
            residuals.append(ct.residual)
            status.append("ok")
    return np.array(values), np.array(residuals), status
