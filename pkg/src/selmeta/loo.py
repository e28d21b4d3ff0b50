"""Leave-one-out predictive accuracy from pointwise log-likelihoods.

Importance-sampling LOO with Pareto-smoothed weights, plus an exact
refitting version for small datasets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special

from .densities import ModelSpec, Study
from .stats_core import DomainError

TAIL_FRACTION = 0.2
K_THRESHOLD = 0.7
MIN_TAIL = 5


@dataclass
class LooResult:
    elpd_loo: float
    pointwise_elpd: np.ndarray
    pareto_k: np.ndarray
    flags: list[list[str]] = field(default_factory=list)
    model: str | None = None
    method: str = "psis"

    @property
    def n(self) -> int:
        return int(self.pointwise_elpd.size)

    @property
    def looic(self) -> float:
        return -2.0 * self.elpd_loo

    @property
    def se_elpd(self) -> float:
        if self.n < 2:
            return float("nan")
        return float(math.sqrt(self.n * np.var(self.pointwise_elpd, ddof=1)))

    @property
    def se_looic(self) -> float:
        return 2.0 * self.se_elpd

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "method": self.method,
            "elpd_loo": self.elpd_loo,
            "looic": self.looic,
            "se": self.se_looic,
            "pointwise_elpd": self.pointwise_elpd.tolist(),
            "pareto_k": [None if not np.isfinite(k) else float(k) for k in self.pareto_k],
            "flags": self.flags,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def pointwise_loglik(draws, studies: Sequence[Study] | None = None, spec: ModelSpec | None = None) -> np.ndarray:
    """``(total draws, studies)`` marginal log-likelihood matrix.

    Latent effects are always integrated out, never conditioned on. With
    ``studies`` the matrix is evaluated on that dataset, otherwise the one
    the draws were fitted to.
    """
    from .mcmc import Posterior, marginal_pointwise

    if studies is None:
        return draws.pointwise_loglik
    spec = spec or draws.spec
    if spec is None:
        raise DomainError("a model spec is required")
    post = Posterior(list(studies), spec)
    names = draws.param_names
    theta0 = draws.column("theta0")
    tau = draws.column("tau") if "tau" in names else np.zeros_like(theta0)
    return marginal_pointwise(post, theta0, tau, draws.weights())


def fit_gpd_pwm(y: np.ndarray) -> tuple[float, float]:
    """Generalized-Pareto ``(shape, scale)`` from exceedances by probability-weighted moments.

    Shape follows the convention where positive values mean heavier tails.
    """
    y = np.sort(np.asarray(y, dtype=float))
    n = y.size
    if n < 2:
        raise DomainError("need at least two exceedances")
    a0 = y.mean()
    a1 = np.sum((n - np.arange(1, n + 1)) / (n - 1.0) * y) / n
    denom = a0 - 2.0 * a1
    if not (a0 > 0 and denom > 0):
        return float("nan"), float("nan")
    k = a0 / denom - 2.0
    sigma = 2.0 * a0 * a1 / denom
    return float(-k), float(sigma)


def gpd_quantile(p, shape: float, scale: float):
    p = np.asarray(p, dtype=float)
    if abs(shape) < 1e-12:
        return -scale * np.log1p(-p)
    return scale / shape * np.expm1(-shape * np.log1p(-p))


def psis_smooth(log_ratios: np.ndarray, tail_fraction: float = TAIL_FRACTION) -> tuple[np.ndarray, float, list[str]]:
    """Pareto-smoothed log weights for one vector of log importance ratios.

    Returns the smoothed (unnormalised) log weights, the fitted tail shape
    ``k`` and any diagnostic flags.
    """
    lr = np.asarray(log_ratios, dtype=float)
    S = lr.size
    flags: list[str] = []
    lw = lr - np.max(lr)
    M = int(tail_fraction * S)
    if M < MIN_TAIL:
        flags.append("few_tail_draws")
        return lw, float("nan"), flags
    order = np.argsort(lw, kind="stable")
    tail_idx = order[-M:]
    threshold = lw[order[-M - 1]]
    w = np.exp(lw)
    exceed = w[tail_idx] - np.exp(threshold)
    if np.ptp(w) == 0 or not np.any(exceed > 0):
        flags.append("degenerate")
        return lw, float("nan"), flags
    k, sigma = fit_gpd_pwm(exceed)
    if not np.isfinite(k):
        flags.append("gpd_fit_failed")
        return lw, float("nan"), flags
    p = (np.arange(1, M + 1) - 0.5) / M
    smoothed = np.exp(threshold) + gpd_quantile(p, k, sigma)
    # truncate at the largest raw weight, which is exp(0) after the shift
    smoothed = np.minimum(smoothed, 1.0)
    out = lw.copy()
    with np.errstate(divide="ignore"):
        out[tail_idx] = np.log(smoothed)
    if k > K_THRESHOLD:
        flags.append("high_pareto_k")
    return out, k, flags


def importance_loo(pointwise: np.ndarray, model: str | None = None, smooth: bool = True) -> LooResult:
    """PSIS-LOO from an ``(S, n)`` pointwise log-likelihood matrix."""
    ll = np.asarray(pointwise, dtype=float)
    if ll.ndim != 2:
        raise DomainError("pointwise log-likelihood must be a (draws, studies) matrix")
    S, n = ll.shape
    if S < 100:
        raise DomainError("importance LOO needs at least 100 draws")
    elpd = np.empty(n)
    ks = np.full(n, np.nan)
    flags: list[list[str]] = []
    for i in range(n):
        col = ll[:, i]
        if smooth:
            lw, ks[i], f = psis_smooth(-col)
        else:
            lw, f = -col - np.max(-col), ["unsmoothed"]
        elpd[i] = special.logsumexp(lw + col) - special.logsumexp(lw)
        flags.append(f)
    return LooResult(float(np.sum(elpd)), elpd, ks, flags, model, "psis" if smooth else "is")


def lpd(pointwise: np.ndarray) -> float:
    """In-sample log pointwise predictive density."""
    ll = np.asarray(pointwise, dtype=float)
    return float(np.sum(special.logsumexp(ll, axis=0) - np.log(ll.shape[0])))


def exact_loo(studies: Sequence[Study], spec: ModelSpec, prior=None, config=None, model: str | None = None) -> LooResult:
    """Refit the model ``n`` times, each time scoring the held-out study."""
    from .mcmc import Posterior, SamplerConfig, marginal_pointwise, run_sampler
    from .priors import PriorConfig
    from .stats_core import derive_seed

    prior = prior or PriorConfig()
    config = config or SamplerConfig()
    studies = list(studies)
    n = len(studies)
    if n < 2:
        raise DomainError("exact LOO needs at least two studies")
    elpd = np.empty(n)
    for i in range(n):
        rest = studies[:i] + studies[i + 1:]
        cfg = replace(config, seed=derive_seed(config.seed, i))
        fit = run_sampler(rest, spec, prior, cfg)
        held = Posterior([studies[i]], spec, prior, cfg.quad_order)
        theta0 = fit.column("theta0")
        tau = fit.column("tau") if spec.random else np.zeros_like(theta0)
        ll = marginal_pointwise(held, theta0, tau, fit.weights())[:, 0]
        elpd[i] = special.logsumexp(ll) - np.log(ll.size)
    return LooResult(float(np.sum(elpd)), elpd, np.full(n, np.nan), [[] for _ in range(n)], model, "exact")
