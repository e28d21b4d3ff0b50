"""Correspondence between selection weights and hacking probabilities at a fixed se.

With one common standard error, a publication-bias model with weights
``rho`` has the same density as a p-hacking model whose hacking
probabilities are the selected interval masses. The map is a diagonal
rescaling followed by normalisation, so it inverts in closed form. With
several distinct standard errors the matched ``pi`` depends on ``se`` and
no single ``pi`` works for every study.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .densities import (
    CutoffGrid,
    Study,
    check_pi,
    interval_masses,
    is_decreasing_rho,
    loglik_phack_fixed,
    loglik_pubbias,
    truncated_mixture_logpdf,
)
from .stats_core import DomainError, SingularRegionError


class NonNormalizableError(DomainError):
    """The requested weights cannot be scaled so that the first equals one."""


@dataclass(frozen=True)
class RhoResult:
    rho: np.ndarray
    valid: bool  # False when rho is not nonincreasing


def _masses(theta0, tau, sigma, cutoffs):
    if not sigma > 0 or tau < 0:
        raise DomainError("need sigma > 0 and tau >= 0")
    return interval_masses(theta0, float(np.hypot(tau, sigma)), sigma, cutoffs)


def rho_to_pi(rho, theta0: float, tau: float, sigma: float, cutoffs: CutoffGrid = CutoffGrid()) -> np.ndarray:
    """Hacking probabilities whose density matches selection weights ``rho``.

    Entries above one are accepted so that unclamped output of
    :func:`pi_to_rho` maps back.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (cutoffs.J,) or rho[0] != 1.0 or not np.all(np.isfinite(rho) & (rho >= 0)):
        raise DomainError("rho needs one finite nonnegative entry per interval and rho_1 = 1")
    u = rho * _masses(theta0, tau, sigma, cutoffs)
    total = u.sum()
    if not total > 0:
        raise SingularRegionError("selected mass is zero")
    return u / total


def pi_to_rho(pi, theta0: float, tau: float, sigma: float, cutoffs: CutoffGrid = CutoffGrid()) -> RhoResult:
    """Selection weights (first equal to one) matching hacking probabilities ``pi``.

    The result is returned as computed, with ``valid`` reporting whether
    it is nonincreasing, rather than clamped.
    """
    pi = check_pi(pi, cutoffs.J)
    if not pi[0] > 0:
        raise NonNormalizableError("pi_1 must be positive")
    m = _masses(theta0, tau, sigma, cutoffs)
    if np.any((m <= 0) & (pi > 0)):
        raise SingularRegionError("an interval with positive pi has zero mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(pi > 0, pi / m, 0.0)
    rho = ratio / ratio[0]
    rho[0] = 1.0
    return RhoResult(rho, bool(is_decreasing_rho(rho)))


def matched_logliks(x: float, rho, theta0: float, tau: float, sigma: float,
                    cutoffs: CutoffGrid = CutoffGrid()) -> tuple[float, float]:
    """``(publication-bias, matched p-hacking)`` log densities at ``x``.

    With ``tau = 0`` the p-hacking side is the fixed-effects density; with
    ``tau > 0`` it is the truncated-normal mixture of the marginal.
    """
    study = Study(x, sigma)
    pb = loglik_pubbias(study, theta0, tau, rho, cutoffs)
    pi = rho_to_pi(rho, theta0, tau, sigma, cutoffs)
    if tau == 0:
        ph = loglik_phack_fixed(study, theta0, pi, cutoffs)
    else:
        s = float(np.hypot(tau, sigma))
        ph = float(truncated_mixture_logpdf(x, sigma, theta0, s, pi, cutoffs))
    return pb, ph


@dataclass(frozen=True)
class Witness:
    sigmas: tuple[float, ...]
    pistar: np.ndarray       # matched pi per sigma, one row each
    best_pi: np.ndarray      # minimax single pi
    discrepancy: float       # smallest achievable worst-case |pi - pistar|


def non_equivalence_witness(rho, theta0: float, tau: float, sigmas, cutoffs: CutoffGrid = CutoffGrid()) -> Witness:
    """How far any single ``pi`` must be from the matched ones across ``sigmas``.

    The matched density for study ``i`` requires ``pi = pistar(sigma_i)``
    exactly, because interval probabilities of the two densities coincide
    only then. For any common ``pi`` the worst coordinate error is at
    least half the spread of ``pistar`` across studies, and the midpoint
    of the coordinatewise range attains that bound.
    """
    sigmas = tuple(float(s) for s in sigmas)
    if len(sigmas) < 2:
        raise DomainError("need at least two standard errors")
    P = np.stack([rho_to_pi(rho, theta0, tau, s, cutoffs) for s in sigmas])
    lo, hi = P.min(axis=0), P.max(axis=0)
    mid = 0.5 * (lo + hi)
    return Witness(sigmas, P, mid / mid.sum(), float(0.5 * np.max(hi - lo)))
