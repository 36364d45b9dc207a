"""Laplace mechanism and the incentive-to-privacy-budget logistic map.

A source releasing a forecast with L1 sensitivity `sen` under budget
epsilon adds i.i.d. Laplace(0, sen/epsilon) noise per component.  Paying
the source an incentive rho raises its budget along a logistic curve that
saturates at `alpha`, so some privacy is always retained.

Randomness discipline: every logical task owns its own generator, derived
with `substream(base_seed, *path)`.  The harness uses the path convention
(base_seed, stream tag, trial_index, source_index); see harness.py.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError


@dataclass(frozen=True)
class PrivacyProfile:
    """Privacy parameters of one forecast source.

    sen:   L1 sensitivity of the released forecast (1.0 once data is
           scaled to the unit range).
    alpha: maximum acceptable privacy budget (logistic asymptote).
    beta:  growth rate of budget with incentive.
    gamma: incentive at which the budget reaches alpha/2.
    """

    sen: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        if not self.sen > 0:
            raise InvalidInputError(f"sen must be > 0, got {self.sen}")
        if not self.alpha > 0:
            raise InvalidInputError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta > 0:
            raise InvalidInputError(f"beta must be > 0, got {self.beta}")
        if self.gamma < 0:
            raise InvalidInputError(f"gamma must be >= 0, got {self.gamma}")


def _check_rho(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise InvalidInputError(f"incentive must be >= 0, got {rho}")
    return rho


def privacy_budget(rho, prof: PrivacyProfile):
    """Privacy budget bought by incentive rho: alpha * logistic(beta*(rho-gamma)).

    Strictly increasing in rho and confined to (0, alpha).  Accepts scalars
    or arrays of incentives.
    """
    rho = _check_rho(rho)
    out = prof.alpha * expit(prof.beta * (rho - prof.gamma))
    return float(out) if out.ndim == 0 else out


def laplace_variance(rho, prof: PrivacyProfile):
    """Per-component variance of the mechanism noise at incentive rho.

    Equals 2*(sen/privacy_budget(rho))^2; strictly decreasing and convex
    in rho, with infimum 2*(sen/alpha)^2 as rho grows.
    """
    rho = _check_rho(rho)
    ratio = prof.sen * (1.0 + np.exp(-prof.beta * (rho - prof.gamma))) / prof.alpha
    out = 2.0 * ratio**2
    return float(out) if out.ndim == 0 else out


def laplace_variance_slope(rho, prof: PrivacyProfile):
    """Derivative of laplace_variance with respect to rho (always negative)."""
    rho = _check_rho(rho)
    u = np.exp(-prof.beta * (rho - prof.gamma))
    out = -4.0 * prof.beta * (prof.sen / prof.alpha) ** 2 * u * (1.0 + u)
    return float(out) if out.ndim == 0 else out


def sample_laplace(rng: np.random.Generator, scale: float, dim: int) -> np.ndarray:
    """Draw `dim` i.i.d. Laplace(0, scale) variates.

    Uses the inverse-CDF transform on one uniform draw per component, so the
    output is a deterministic function of the generator stream.
    """
    if not scale > 0:
        raise InvalidInputError(f"scale must be > 0, got {scale}")
    if dim < 1:
        raise InvalidInputError(f"dim must be >= 1, got {dim}")
    u = rng.random(dim) - 0.5
    # 1 - 2|u| lands in (0, 1]; floor it to keep log finite at the edge.
    mag = np.maximum(1.0 - 2.0 * np.abs(u), np.finfo(float).tiny)
    return -scale * np.sign(u) * np.log(mag)


def dp_noise_for_source(rng: np.random.Generator, prof: PrivacyProfile, rho: float, dim: int) -> np.ndarray:
    """Mechanism noise for one released forecast of length `dim` at incentive rho."""
    eps = privacy_budget(rho, prof)
    return sample_laplace(rng, prof.sen / eps, dim)


def substream(base_seed: int, *path: int) -> np.random.Generator:
    """Independent PCG64 generator for the task identified by (base_seed, *path).

    Streams with distinct paths are statistically independent and
    order-independent, which keeps parallel experiments deterministic.
    """
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), *map(int, path)]))
