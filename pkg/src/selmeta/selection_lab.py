"""Selection sets on the two-variable normal-normal model.

Base model: ``theta ~ N(theta_mean, theta_sd)`` and ``x | theta ~ N(theta, sigma)``.
A weight rule maps the one-sided p-value ``u = 1 - Phi(x / sigma)`` to an
acceptance probability. The selection set ``H`` names the variables that
are redrawn together until a draw is accepted; the resulting density is

    q_H(x, theta) = p(s=1 | x) / p(s=1 | complement of H) * p(x, theta).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, special

from .stats_core import (
    DomainError,
    PathologicalSelectionError,
    SingularRegionError,
    log_normal_mass,
    log_normal_pdf,
    normal_quantile,
)

SELECTION_SETS = ("both", "x", "theta", "none")
MAX_ROUNDS = 10**6


@dataclass(frozen=True)
class StepWeight:
    """``w(u) = weights[j]`` for ``u`` in ``(alphas[j-1], alphas[j]]``; the last alpha is 1."""

    alphas: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(v) for v in self.alphas)
        w = tuple(float(v) for v in self.weights)
        if not a or a[-1] != 1.0 or any(not 0 < v <= 1 for v in a) or any(x >= y for x, y in zip(a, a[1:])):
            raise DomainError("alphas must increase strictly inside (0, 1] and end at 1")
        if len(w) != len(a) or any(not 0 <= v <= 1 for v in w):
            raise DomainError("one weight in [0, 1] per interval")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "weights", w)

    @classmethod
    def parse(cls, text: str) -> "StepWeight":
        """``step:a1,...,a_{J-1}:w2,...,wJ`` with ``w1 = 1``; also ``const:c``."""
        parts = text.split(":")
        try:
            if parts[0] == "const" and len(parts) == 2:
                return cls((1.0,), (float(parts[1]),))
            if parts[0] == "step" and len(parts) == 3:
                alphas = [float(v) for v in parts[1].split(",")] + [1.0]
                weights = [1.0] + [float(v) for v in parts[2].split(",")]
                return cls(tuple(alphas), tuple(weights))
        except ValueError:
            pass
        raise DomainError(f"cannot parse weight rule {text!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        j = np.searchsorted(np.asarray(self.alphas), u, side="left")
        return np.asarray(self.weights)[np.minimum(j, len(self.weights) - 1)]

    def cutoffs(self, sigma: float) -> np.ndarray:
        """Interval bounds in x, from ``+inf`` down to ``-inf``."""
        inner = [sigma * normal_quantile(1.0 - a) for a in self.alphas[:-1]]
        return np.array([np.inf] + inner + [-np.inf])


@dataclass(frozen=True)
class SelectionSpec:
    weight_rule: StepWeight | Callable[[np.ndarray], np.ndarray]
    H: str = "both"
    theta_mean: float = 0.0
    theta_sd: float = 1.0
    sigma: float = 1.0
    # breakpoints of a generic callable rule, in x, to guide quadrature
    breakpoints: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.H not in SELECTION_SETS:
            raise DomainError(f"H must be one of {SELECTION_SETS}")
        if not (self.theta_sd > 0 and self.sigma > 0):
            raise DomainError("theta_sd and sigma must be positive")

    def weight_x(self, x):
        u = special.ndtr(-np.asarray(x, dtype=float) / self.sigma)
        w = np.asarray(self.weight_rule(u), dtype=float)
        if np.any((w < 0) | (w > 1)):
            raise DomainError("weight rule must return values in [0, 1]")
        return w

    def _points(self) -> list[float]:
        if isinstance(self.weight_rule, StepWeight):
            return [float(c) for c in self.weight_rule.cutoffs(self.sigma)[1:-1]]
        return list(self.breakpoints)


def log_base_density(spec: SelectionSpec, x, theta):
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return (log_normal_pdf((theta - spec.theta_mean) / spec.theta_sd) - np.log(spec.theta_sd)
            + log_normal_pdf((x - theta) / spec.sigma) - np.log(spec.sigma))


def _quad_gaussian(f, mean, sd, points):
    """``int f(x) N(x; mean, sd) dx`` by adaptive quadrature split at ``points``."""
    lo, hi = mean - 40.0 * sd, mean + 40.0 * sd
    edges = [lo] + sorted(p for p in points if lo < p < hi) + [hi]
    dens = lambda x: f(x) * np.exp(log_normal_pdf((x - mean) / sd)) / sd  # noqa: E731
    return sum(integrate.quad(dens, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
               for a, b in zip(edges, edges[1:]))


def acceptance_given_theta(spec: SelectionSpec, theta: float) -> float:
    """``p(s=1 | theta)``: exact for step rules, quadrature otherwise."""
    if isinstance(spec.weight_rule, StepWeight):
        c = spec.weight_rule.cutoffs(spec.sigma)
        masses = np.exp(log_normal_mass((c[1:] - theta) / spec.sigma, (c[:-1] - theta) / spec.sigma))
        return float(np.dot(spec.weight_rule.weights, masses))
    return _quad_gaussian(lambda x: spec.weight_x(x), theta, spec.sigma, spec._points())


@lru_cache(maxsize=128)
def acceptance_overall(spec: SelectionSpec) -> float:
    """``p(s=1)``: the marginal of x is normal with variance ``theta_sd**2 + sigma**2``."""
    s = float(np.hypot(spec.theta_sd, spec.sigma))
    if isinstance(spec.weight_rule, StepWeight):
        c = spec.weight_rule.cutoffs(spec.sigma)
        masses = np.exp(log_normal_mass((c[1:] - spec.theta_mean) / s, (c[:-1] - spec.theta_mean) / s))
        return float(np.dot(spec.weight_rule.weights, masses))
    return _quad_gaussian(lambda x: spec.weight_x(x), spec.theta_mean, s, spec._points())


def _ratio(spec: SelectionSpec, x, theta: float):
    """``p(s=1 | x) / p(s=1 | complement of H)``, vectorised over ``x``."""
    w = spec.weight_x(x)
    if spec.H == "both":
        denom = acceptance_overall(spec)
    elif spec.H == "x":
        denom = acceptance_given_theta(spec, theta)
    else:
        # nothing that s depends on is resampled, so the ratio is w / w
        if np.any(w <= 0):
            raise SingularRegionError("acceptance probability of the conditioning set is zero")
        return np.ones_like(w)
    if not denom > 0:
        raise SingularRegionError("acceptance probability of the conditioning set is zero")
    return w / denom


def q_H_density(spec: SelectionSpec, x: float, theta: float) -> float:
    """Density of the selection model with selection set ``spec.H`` at ``(x, theta)``."""
    return float(_ratio(spec, x, theta) * np.exp(log_base_density(spec, x, theta)))


def theta_marginal(spec: SelectionSpec, theta: float) -> float:
    """``int q_H(x, theta) dx`` by quadrature."""
    inner = _quad_gaussian(lambda x: _ratio(spec, x, theta), theta, spec.sigma, spec._points())
    return float(np.exp(log_normal_pdf((theta - spec.theta_mean) / spec.theta_sd)) / spec.theta_sd * inner)


def theta_marginal_mean(spec: SelectionSpec) -> float:
    """Mean of theta under ``q_H``.

    Uses the closed-form inner integral ``p(s=1 | theta)`` for the ``both``
    set, where the theta marginal is ``p(theta) p(s=1 | theta) / p(s=1)``;
    every other set leaves ``p(theta)`` unchanged.
    """
    if spec.H != "both":
        return spec.theta_mean
    z = acceptance_overall(spec)
    return _quad_gaussian(lambda t: np.vectorize(lambda tt: tt * acceptance_given_theta(spec, tt))(t),
                          spec.theta_mean, spec.theta_sd, []) / z


def q_H_sampler(rng: np.random.Generator, spec: SelectionSpec, n: int,
                max_rounds: int = MAX_ROUNDS) -> tuple[np.ndarray, np.ndarray, int]:
    """Draw ``n`` pairs by the rejection scheme, all chains advanced together.

    Each pair starts from the base model. Until its acceptance coin comes up
    one, the variables in ``H`` are redrawn from their conditional given the
    *initial* values of the others. Returns ``(x, theta, total_attempts)``.
    """
    if n < 1:
        raise DomainError("n must be positive")
    theta = rng.normal(spec.theta_mean, spec.theta_sd, n)
    x = rng.normal(theta, spec.sigma)
    theta0, x0 = theta.copy(), x.copy()
    # theta | x under the base model, for redrawing theta alone
    prec = 1.0 / spec.theta_sd**2 + 1.0 / spec.sigma**2
    post_sd = np.sqrt(1.0 / prec)
    post_mean = (spec.theta_mean / spec.theta_sd**2 + x0 / spec.sigma**2) / prec
    active = np.arange(n)
    attempts = 0
    for _ in range(max_rounds):
        attempts += active.size
        accept = rng.random(active.size) < spec.weight_x(x[active])
        active = active[~accept]
        if active.size == 0:
            return x, theta, attempts
        m = active.size
        if spec.H == "both":
            theta[active] = rng.normal(spec.theta_mean, spec.theta_sd, m)
            x[active] = rng.normal(theta[active], spec.sigma)
        elif spec.H == "x":
            x[active] = rng.normal(theta0[active], spec.sigma)
        elif spec.H == "theta":
            theta[active] = rng.normal(post_mean[active], post_sd)
    raise PathologicalSelectionError(f"{active.size} draws unaccepted after {max_rounds} rounds")
