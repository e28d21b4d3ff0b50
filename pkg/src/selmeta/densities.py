"""Likelihoods of the uncorrected, publication-bias and p-hacking models.

Conventions
-----------
* One-sided p-value ``u = 1 - Phi(x / se)``.
* A cutoff grid ``0 < a_1 < ... < a_J = 1`` splits the p-value axis into
  intervals ``(a_{j-1}, a_j]``. In effect space these are
  ``[c_j, c_{j-1})`` with ``c_j = se * Phi^{-1}(1 - a_j)``, ``c_0 = +inf``
  and ``c_J = -inf``.
* The ``*_logpdf`` functions are the vectorised workhorses used by the
  sampler and LOO. They broadcast ``x``, ``se``, ``theta0`` and ``tau``
  against each other; weight vectors carry the interval axis last and
  their leading axes broadcast with the rest. They never raise on
  singular parameters, they return ``-inf`` instead.
* The ``loglik_*`` functions are the per-study public surface and do
  raise on degenerate input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .stats_core import (
    DomainError,
    SingularRegionError,
    log_normal_mass,
    log_normal_pdf,
    log_sum_exp,
)

DEFAULT_ALPHAS = (0.025, 0.05, 1.0)
FAMILIES = ("uncorrected", "pubbias", "phack")
EFFECTS = ("fixed", "random")
DEFAULT_QUAD_ORDER = 61
# largest trapezoid step in the sinh variable; wide tau/se ranges get more nodes
LATENT_MAX_STEP = 0.125


@dataclass(frozen=True)
class Study:
    effect: float
    se: float

    def __post_init__(self):
        if not np.isfinite(self.effect):
            raise DomainError("effect must be finite")
        if not (np.isfinite(self.se) and self.se > 0):
            raise DomainError("se must be positive and finite")


@dataclass(frozen=True)
class CutoffGrid:
    """Strictly increasing p-value cutoffs ending at exactly 1."""

    alphas: tuple[float, ...] = DEFAULT_ALPHAS

    def __post_init__(self):
        a = tuple(float(v) for v in self.alphas)
        object.__setattr__(self, "alphas", a)
        if len(a) < 2:
            raise DomainError("a cutoff grid needs at least two intervals")
        if a[-1] != 1.0:
            raise DomainError("the last cutoff must be exactly 1")
        if not a[0] > 0 or any(b <= c for c, b in zip(a, a[1:])):
            raise DomainError("cutoffs must be positive and strictly increasing")

    @classmethod
    def from_splits(cls, splits: Sequence[float]) -> "CutoffGrid":
        """Grid from the interior split points, e.g. ``(0.025, 0.05)``."""
        return cls(tuple(splits) + (1.0,))

    @property
    def J(self) -> int:
        return len(self.alphas)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.alphas)


@dataclass(frozen=True)
class ModelSpec:
    family: str
    effects: str = "random"
    cutoffs: CutoffGrid = field(default_factory=CutoffGrid)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown model family {self.family!r}")
        if self.effects not in EFFECTS:
            raise DomainError(f"unknown effects type {self.effects!r}")

    @property
    def random(self) -> bool:
        return self.effects == "random"

    @property
    def weight_name(self) -> str | None:
        return {"pubbias": "rho", "phack": "pi"}.get(self.family)

    @property
    def label(self) -> str:
        return f"{self.family}-{self.effects}"


@dataclass
class ParamState:
    """Model parameters in constrained space.

    ``tau`` is ignored (and kept at 0) for fixed effects, where ``theta0``
    is the common effect. ``weights`` holds rho for publication bias and
    pi for p-hacking.
    """

    theta0: float
    tau: float = 0.0
    weights: np.ndarray | None = None
    latent_thetas: np.ndarray | None = None


def check_rho(rho, J: int | None = None) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 1 or (J is not None and rho.size != J):
        raise DomainError("rho has the wrong length")
    if rho[0] != 1.0:
        raise DomainError("rho_1 must be exactly 1")
    if np.any(rho < 0) or np.any(rho > 1):
        raise DomainError("rho entries must lie in [0, 1]")
    return rho


def is_decreasing_rho(rho) -> bool:
    rho = np.asarray(rho, dtype=float)
    return bool(rho[0] == 1.0 and np.all(np.diff(rho) <= 0) and rho[-1] >= 0)


def check_pi(pi, J: int | None = None) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or (J is not None and pi.size != J):
        raise DomainError("pi has the wrong length")
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
        raise DomainError("pi must be a probability vector")
    return pi


def _alphas(cutoffs) -> np.ndarray:
    if isinstance(cutoffs, CutoffGrid):
        return cutoffs.as_array()
    return np.asarray(cutoffs, dtype=float)


@lru_cache(maxsize=32)
def _std_cutoffs(alphas: tuple) -> np.ndarray:
    a = np.asarray(alphas)
    inner = special.ndtri(1.0 - a[:-1])
    return np.concatenate([[np.inf], inner, [-np.inf]])


def std_cutoffs(cutoffs) -> np.ndarray:
    """``(+inf, Phi^-1(1 - a_1), ..., -inf)`` on the z scale."""
    return _std_cutoffs(tuple(_alphas(cutoffs)))


# ---------------------------------------------------------------------------
# vectorised building blocks
# ---------------------------------------------------------------------------

def effect_bounds(se, cutoffs) -> np.ndarray:
    """Effect-space boundaries ``c_0 > c_1 > ... > c_J``; shape ``se.shape + (J+1,)``."""
    z = std_cutoffs(cutoffs)
    se = np.asarray(se, dtype=float)[..., None]
    with np.errstate(invalid="ignore"):
        return se * z


def interval_index(x, se, cutoffs) -> np.ndarray:
    """Zero-based interval holding ``x``: number of finite cutoffs above ``x``."""
    z = std_cutoffs(cutoffs)[1:-1]
    x = np.asarray(x, dtype=float)
    se = np.asarray(se, dtype=float)
    return np.sum(x[..., None] < se[..., None] * z, axis=-1)


def log_interval_masses(mean, sd, se, cutoffs) -> np.ndarray:
    """``log P(c_j <= X < c_{j-1})`` for ``X ~ N(mean, sd)``; interval axis last."""
    c = effect_bounds(se, cutoffs)
    mean = np.asarray(mean, dtype=float)[..., None]
    sd = np.asarray(sd, dtype=float)[..., None]
    upper = (c[..., :-1] - mean) / sd
    lower = (c[..., 1:] - mean) / sd
    return np.asarray(log_normal_mass(lower, upper))


def _pick(values, idx):
    """``values[..., idx]`` with broadcasting between the leading axes."""
    shape = np.broadcast_shapes(values.shape[:-1], idx.shape)
    values = np.broadcast_to(values, shape + values.shape[-1:])
    idx = np.broadcast_to(idx, shape)
    return np.take_along_axis(values, idx[..., None], axis=-1)[..., 0]


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(w, dtype=float))


def uncorrected_logpdf(x, se, theta0, tau=0.0):
    x, se, theta0, tau = (np.asarray(v, dtype=float) for v in (x, se, theta0, tau))
    s = np.sqrt(tau * tau + se * se)
    return log_normal_pdf((x - theta0) / s) - np.log(s)


def log_selection_normalizer(theta0, tau, se, rho, cutoffs):
    """``log sum_j rho_j m_j`` with ``m`` the masses of ``N(theta0, sqrt(tau^2+se^2))``."""
    s = np.sqrt(np.asarray(tau, dtype=float) ** 2 + np.asarray(se, dtype=float) ** 2)
    log_m = log_interval_masses(theta0, s, se, cutoffs)
    return log_sum_exp(_log(rho) + log_m, axis=-1)


def pubbias_logpdf(x, se, theta0, tau, rho, cutoffs):
    """Step-function selection model, weight-function form.

    ``log phi(x; theta0, s) + log rho_{j(x)} - log sum_j rho_j m_j`` with
    ``s = sqrt(tau^2 + se^2)``; ``tau = 0`` is the fixed-effects model.
    """
    x, se = np.asarray(x, dtype=float), np.asarray(se, dtype=float)
    log_rho = _log(rho)
    idx = interval_index(x, se, cutoffs)
    s = np.sqrt(np.asarray(tau, dtype=float) ** 2 + se * se)
    log_m = log_interval_masses(theta0, s, se, cutoffs)
    log_norm = log_sum_exp(log_rho + log_m, axis=-1)
    base = log_normal_pdf((x - theta0) / s) - np.log(s)
    return base + _pick(log_rho, idx) - log_norm


def truncated_mixture_logpdf(x, se, mean, sd, weights, cutoffs):
    """``log sum_j w_j TN(x; mean, sd, [c_j, c_{j-1}))`` with cutoffs from ``se``.

    Intervals are disjoint, so only the component containing ``x``
    contributes.
    """
    x, se = np.asarray(x, dtype=float), np.asarray(se, dtype=float)
    mean, sd = np.asarray(mean, dtype=float), np.asarray(sd, dtype=float)
    idx = interval_index(x, se, cutoffs)
    log_m = log_interval_masses(mean, sd, se, cutoffs)
    log_w = _log(weights)
    out = log_normal_pdf((x - mean) / sd) - np.log(sd)
    return out + _pick(log_w, idx) - _pick(log_m, idx)


def phack_fixed_logpdf(x, se, theta, pi, cutoffs):
    return truncated_mixture_logpdf(x, se, theta, se, pi, cutoffs)


# tail reach of the latent rule, in units of tau; concavity bounds the
# integrand by exp(-K**2 / 2) of its peak beyond that distance
LATENT_TAIL_SDS = 6.5


@lru_cache(maxsize=16)
def _unit_grid(order: int):
    return np.linspace(-1.0, 1.0, order)


def _trunc_moments(lower, upper, theta, se):
    """Mean shift and variance ratio of ``N(theta, se)`` truncated to ``[lower, upper)``."""
    a = (lower - theta) / se
    b = (upper - theta) / se
    log_m = np.asarray(log_normal_mass(a, b))
    with np.errstate(invalid="ignore", over="ignore"):
        pa = np.exp(log_normal_pdf(a) - log_m)
        pb = np.exp(log_normal_pdf(b) - log_m)
        pa = np.where(np.isfinite(a), pa, 0.0)
        pb = np.where(np.isfinite(b), pb, 0.0)
        lam = pa - pb
        apa = np.where(np.isfinite(a), a * pa, 0.0)
        bpb = np.where(np.isfinite(b), b * pb, 0.0)
        v = 1.0 + apa - bpb - lam * lam
    return lam, np.clip(v, 1e-12, 1.0), log_m


def _log_mass_open(a, b):
    """:func:`log_normal_mass` with one CDF call when either bound is infinite."""
    a, b = np.broadcast_arrays(a, b)
    top = np.isposinf(b)
    bottom = np.isneginf(a) & ~top
    if not (top.any() or bottom.any()):
        return np.asarray(log_normal_mass(a, b))
    out = np.empty(a.shape)
    out[top] = special.log_ndtr(-a[top])
    out[bottom] = special.log_ndtr(b[bottom])
    mid = ~(top | bottom)
    if mid.any():
        out[mid] = log_normal_mass(a[mid], b[mid])
    return out


def _latent_log_joint(theta, x, se, lower, upper, theta0, tau):
    """``log phi(x; theta, se) - log m_j(theta) + log phi(theta; theta0, tau)``."""
    log_m = _log_mass_open((lower - theta) / se, (upper - theta) / se)
    return (
        log_normal_pdf((x - theta) / se) - np.log(se) - log_m
        + log_normal_pdf((theta - theta0) / tau) - np.log(tau)
    )


def _latent_mode(x, se, lower, upper, theta0, tau, max_iter=60, tol=1e-7):
    """Mode and curvature scale of the (log-concave) latent-effect integrand.

    Newton on the strictly decreasing score, starting from the conjugate
    posterior mean. Every evaluated point tightens a bracket; steps that
    leave the bracket are replaced by bisection, or by a capped step
    while one side is still open.
    """
    prec = 1.0 / (se * se) + 1.0 / (tau * tau)
    base = np.sqrt(1.0 / prec)
    theta = (x / (se * se) + theta0 / (tau * tau)) / prec
    lo = np.full_like(theta, -np.inf)
    hi = np.full_like(theta, np.inf)
    for _ in range(max_iter):
        lam, v, _ = _trunc_moments(lower, upper, theta, se)
        g1 = (x - theta) / (se * se) - lam / se - (theta - theta0) / (tau * tau)
        g2 = -v / (se * se) - 1.0 / (tau * tau)
        lo = np.where(g1 > 0, theta, lo)
        hi = np.where(g1 <= 0, theta, hi)
        cap = 20.0 * np.sqrt(-1.0 / g2)
        new = theta + np.clip(-g1 / g2, -cap, cap)
        closed = np.isfinite(lo) & np.isfinite(hi)
        outside = closed & ~((new > lo) & (new < hi))
        new = np.where(outside, 0.5 * (lo + hi), new)
        done = np.abs(new - theta) <= tol * base
        theta = new
        if np.all(done):
            break
    _, v, _ = _trunc_moments(lower, upper, theta, se)
    return theta, 1.0 / np.sqrt(v / (se * se) + 1.0 / (tau * tau))


def _latent_quadrature(x, se, theta0, tau, cutoffs, order):
    """Nodes, log-weights and log-integrand of the latent-effect rule.

    Trapezoid rule in ``t`` after ``theta = mode + scale * sinh(t)``. The
    integrand has a peak of width ``~se`` on a base of width ``~tau``; the
    sinh map puts fine steps on the peak and geometrically wider ones in
    the tails, so one rule covers both scales. ``order`` is a minimum; the
    node count grows so the step in ``t`` stays below ``LATENT_MAX_STEP``.
    """
    if order < 3:
        raise DomainError("quadrature order must be at least 3")
    x, se, theta0, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, se, theta0, tau)))
    c = effect_bounds(se, cutoffs)
    idx = interval_index(x, se, cutoffs)
    upper = np.take_along_axis(c, idx[..., None], -1)[..., 0]
    lower = np.take_along_axis(c, idx[..., None] + 1, -1)[..., 0]
    mode, scale = _latent_mode(x, se, lower, upper, theta0, tau)
    T = np.arcsinh(LATENT_TAIL_SDS * tau / scale)[..., None]
    if T.size:
        order = max(order, int(np.ceil(2.0 * float(np.max(T)) / LATENT_MAX_STEP)) + 1)
    t = T * _unit_grid(order)
    sc = scale[..., None]
    nodes = mode[..., None] + sc * np.sinh(t)
    g = _latent_log_joint(
        nodes, x[..., None], se[..., None], lower[..., None], upper[..., None],
        theta0[..., None], tau[..., None],
    )
    log_w = np.log(2.0 * T / (order - 1) * sc) + np.log(np.cosh(t))
    return nodes, log_w, g, idx


def phack_random_logpdf(x, se, theta0, tau, pi, cutoffs, order=DEFAULT_QUAD_ORDER):
    """Random-effects p-hacking density with the latent effect integrated out.

    ``log int f_phack(x; theta, se, pi) phi(theta; theta0, tau) dtheta``
    with ``order`` nodes of a sinh-mapped trapezoid rule centred at the
    integrand's mode (it is log-concave in theta, since a truncated normal
    is an exponential family in its location). ``tau == 0`` returns the
    fixed-effects density exactly.
    """
    x, se, theta0, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, se, theta0, tau)))
    zero = tau <= 0
    tau_q = np.where(zero, 1.0, tau)
    _, log_w, g, idx = _latent_quadrature(x, se, theta0, tau_q, cutoffs, order)
    log_int = log_sum_exp(log_w + g, axis=-1)
    log_pi = _log(pi)
    marginal = _pick(log_pi, idx) + log_int
    if np.any(zero):
        fixed = phack_fixed_logpdf(x, se, theta0, pi, cutoffs)
        marginal = np.where(zero, fixed, marginal)
    return marginal


def model_logpdf(spec: ModelSpec, x, se, theta0, tau=0.0, weights=None, order=DEFAULT_QUAD_ORDER):
    """Dispatch to the marginal log-density of ``spec`` (latent effects integrated out)."""
    tau = tau if spec.random else 0.0
    if spec.family == "uncorrected":
        return uncorrected_logpdf(x, se, theta0, tau)
    if spec.family == "pubbias":
        return pubbias_logpdf(x, se, theta0, tau, weights, spec.cutoffs)
    if spec.random:
        return phack_random_logpdf(x, se, theta0, tau, weights, spec.cutoffs, order)
    return phack_fixed_logpdf(x, se, theta0, weights, spec.cutoffs)


# ---------------------------------------------------------------------------
# per-study public surface
# ---------------------------------------------------------------------------

def study_arrays(studies) -> tuple[np.ndarray, np.ndarray]:
    """``(effects, ses)`` arrays from a sequence of :class:`Study`."""
    if isinstance(studies, Study):
        studies = [studies]
    x = np.array([s.effect for s in studies], dtype=float)
    se = np.array([s.se for s in studies], dtype=float)
    return x, se


def p_value_one_sided(study: Study) -> float:
    return float(special.ndtr(-study.effect / study.se))


def cutoffs_in_effect_space(cutoffs: CutoffGrid, se: float) -> np.ndarray:
    return effect_bounds(se, cutoffs)


def log_step_weight(u: float, rho, cutoffs: CutoffGrid = CutoffGrid()) -> float:
    """``log rho_j`` for the interval ``(a_{j-1}, a_j]`` holding ``u``; ``u = 0`` is interval 1."""
    if not 0.0 <= u <= 1.0:
        raise DomainError("u must be a probability")
    j = int(np.searchsorted(_alphas(cutoffs), u, side="left"))
    return float(_log(np.asarray(rho)[j]))


def interval_masses(mean: float, sd: float, study_se: float, cutoffs: CutoffGrid = CutoffGrid()) -> np.ndarray:
    if not sd > 0:
        raise DomainError("sd must be positive")
    return np.exp(log_interval_masses(mean, sd, study_se, cutoffs))


def mixture_weights_pistar(mean, sd, study_se, rho, cutoffs: CutoffGrid = CutoffGrid()) -> np.ndarray:
    """Interval probabilities ``rho_j m_j / sum_k rho_k m_k`` of the selected density."""
    if not sd > 0:
        raise DomainError("sd must be positive")
    log_u = _log(rho) + log_interval_masses(mean, sd, study_se, cutoffs)
    log_norm = log_sum_exp(log_u)
    if not np.isfinite(log_norm):
        raise SingularRegionError("selection-weighted mass is zero")
    return np.exp(log_u - log_norm)


def loglik_uncorrected(study: Study, theta0: float, tau: float = 0.0) -> float:
    if tau < 0:
        raise DomainError("tau must be nonnegative")
    return float(uncorrected_logpdf(study.effect, study.se, theta0, tau))


def loglik_pubbias(study: Study, theta0: float, tau: float, rho, cutoffs: CutoffGrid = CutoffGrid()) -> float:
    if tau < 0:
        raise DomainError("tau must be nonnegative")
    rho = check_rho(rho, _alphas(cutoffs).size)
    log_norm = log_selection_normalizer(theta0, tau, study.se, rho, cutoffs)
    if not np.isfinite(log_norm):
        raise SingularRegionError("selection normalizer is zero")
    return float(pubbias_logpdf(study.effect, study.se, theta0, tau, rho, cutoffs))


def loglik_pubbias_mixture(study: Study, theta0: float, tau: float, rho, cutoffs: CutoffGrid = CutoffGrid()) -> float:
    """Same density as :func:`loglik_pubbias`, written as a truncated-normal mixture."""
    s = float(np.sqrt(tau * tau + study.se ** 2))
    pistar = mixture_weights_pistar(theta0, s, study.se, rho, cutoffs)
    return float(truncated_mixture_logpdf(study.effect, study.se, theta0, s, pistar, cutoffs))


def loglik_phack_fixed(study: Study, theta: float, pi, cutoffs: CutoffGrid = CutoffGrid()) -> float:
    pi = check_pi(pi, _alphas(cutoffs).size)
    return float(phack_fixed_logpdf(study.effect, study.se, theta, pi, cutoffs))


def loglik_phack_random_marginal(
    study: Study, theta0: float, tau: float, pi, cutoffs: CutoffGrid = CutoffGrid(),
    quad_order: int = DEFAULT_QUAD_ORDER,
) -> float:
    if tau < 0:
        raise DomainError("tau must be nonnegative")
    if quad_order < 21:
        raise DomainError("quad_order must be at least 21")
    pi = check_pi(pi, _alphas(cutoffs).size)
    return float(phack_random_logpdf(study.effect, study.se, theta0, tau, pi, cutoffs, quad_order))


@dataclass(frozen=True)
class ThetaPosterior:
    """Posterior of one study's latent effect given its estimate and hyperparameters."""

    mean: float
    sd: float
    logpdf: Callable[[np.ndarray], np.ndarray]

    def pdf(self, theta):
        return np.exp(self.logpdf(theta))


def posterior_theta_given_x(study: Study, theta0: float, tau: float, spec: ModelSpec, weights=None,
                            quad_order: int = 101) -> ThetaPosterior:
    """Posterior of ``theta_i | x_i`` under a random-effects model.

    For the uncorrected and publication-bias families the step weight
    depends on ``x`` only, so it cancels and the posterior is the
    conjugate normal one. Under p-hacking the truncation normaliser
    depends on ``theta`` and the posterior is normalised numerically;
    ``weights`` (pi) only enters through the interval of ``x`` and
    cancels too, so it is accepted for symmetry but not needed.
    """
    if not spec.random:
        raise DomainError("latent effects only exist in random-effects models")
    if not tau > 0:
        raise DomainError("tau must be positive for a latent-effect posterior")
    x, se = study.effect, study.se
    if spec.family in ("uncorrected", "pubbias"):
        prec = 1.0 / se ** 2 + 1.0 / tau ** 2
        mean = (x / se ** 2 + theta0 / tau ** 2) / prec
        sd = float(np.sqrt(1.0 / prec))

        def logpdf(theta):
            return log_normal_pdf((np.asarray(theta, dtype=float) - mean) / sd) - np.log(sd)

        return ThetaPosterior(float(mean), sd, logpdf)

    nodes, log_w, g, idx = _latent_quadrature(x, se, theta0, tau, spec.cutoffs, quad_order)
    log_z = log_sum_exp(log_w + g)
    p = np.exp(log_w + g - log_z)
    mean = float(np.sum(p * nodes))
    sd = float(np.sqrt(max(np.sum(p * (nodes - mean) ** 2), 0.0)))
    c = effect_bounds(se, spec.cutoffs)
    j = int(idx)
    upper, lower = c[j], c[j + 1]

    def logpdf(theta):
        theta = np.asarray(theta, dtype=float)
        return _latent_log_joint(theta, x, se, lower, upper, theta0, tau) - log_z

    return ThetaPosterior(mean, sd, logpdf)
