"""Priors: normal on theta0, half-normal on tau, Dirichlet on pi, and a
decreasing rho built from cumulative sums of a Dirichlet."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import lgamma

import numpy as np

from .densities import ModelSpec, ParamState, is_decreasing_rho
from .stats_core import DomainError, log_normal_pdf, sample_dirichlet

LOG_2 = np.log(2.0)


@dataclass(frozen=True)
class PriorConfig:
    theta0_sd: float = 1.0
    tau_scale: float = 1.0
    # None means all ones, sized to the cutoff grid
    simplex_concentration: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.theta0_sd > 0 and self.tau_scale > 0):
            raise DomainError("prior scales must be positive")
        if self.simplex_concentration is not None:
            conc = tuple(float(c) for c in self.simplex_concentration)
            if any(not c > 0 for c in conc):
                raise DomainError("Dirichlet concentrations must be positive")
            object.__setattr__(self, "simplex_concentration", conc)

    def concentration(self, J: int) -> np.ndarray:
        if self.simplex_concentration is None:
            return np.ones(J)
        conc = np.asarray(self.simplex_concentration, dtype=float)
        if conc.size != J:
            raise DomainError(f"expected {J} Dirichlet concentrations, got {conc.size}")
        return conc


def log_dirichlet(p: np.ndarray, conc: np.ndarray) -> np.ndarray:
    """Dirichlet log-density on the simplex (last axis), ``-inf`` off it."""
    p = np.asarray(p, dtype=float)
    log_beta = sum(lgamma(c) for c in conc) - lgamma(float(np.sum(conc)))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(conc == 1.0, 0.0, (conc - 1.0) * np.log(p))
    out = np.sum(terms, axis=-1) - log_beta
    ok = np.all(p >= 0, axis=-1) & (np.abs(np.sum(p, axis=-1) - 1.0) <= 1e-9)
    return np.where(ok, out, -np.inf)


def rho_increments(rho: np.ndarray) -> np.ndarray:
    """Invert ``rho_j = sum_{k >= j} d_k``: ``d_j = rho_j - rho_{j+1}``, ``d_J = rho_J``."""
    rho = np.asarray(rho, dtype=float)
    return np.concatenate([rho[..., :-1] - rho[..., 1:], rho[..., -1:]], axis=-1)


def rho_from_increments(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return np.cumsum(d[..., ::-1], axis=-1)[..., ::-1]


def log_prior_arrays(theta0, tau, weights, spec: ModelSpec, config: PriorConfig):
    """Vectorised log-prior over leading axes (latent effects excluded)."""
    theta0 = np.asarray(theta0, dtype=float)
    lp = log_normal_pdf(theta0 / config.theta0_sd) - np.log(config.theta0_sd)
    if spec.random:
        tau = np.asarray(tau, dtype=float)
        s = config.tau_scale
        half = LOG_2 + log_normal_pdf(tau / s) - np.log(s)
        lp = lp + np.where(tau >= 0, half, -np.inf)
    J = spec.cutoffs.J
    conc = config.concentration(J)
    if spec.family == "phack":
        lp = lp + log_dirichlet(weights, conc)
    elif spec.family == "pubbias":
        rho = np.asarray(weights, dtype=float)
        d = rho_increments(rho)
        ok = (rho[..., 0] == 1.0) & np.all(d >= -1e-15, axis=-1)
        # rho is a unit-Jacobian linear image of d
        lp = lp + np.where(ok, log_dirichlet(np.clip(d, 0, None), conc), -np.inf)
    return lp


def log_prior(state: ParamState, config: PriorConfig, spec: ModelSpec) -> float:
    """Joint log prior density of ``state`` (including latent effects when present)."""
    if spec.family == "pubbias" and not is_decreasing_rho(state.weights):
        return -np.inf
    lp = float(log_prior_arrays(state.theta0, state.tau, state.weights, spec, config))
    if state.latent_thetas is not None:
        if not spec.random:
            raise DomainError("latent effects require a random-effects spec")
        if not state.tau > 0:
            return -np.inf
        t = np.asarray(state.latent_thetas, dtype=float)
        lp += float(np.sum(log_normal_pdf((t - state.theta0) / state.tau) - np.log(state.tau)))
    return lp


def sample_prior(rng: np.random.Generator, config: PriorConfig, spec: ModelSpec, n_studies: int,
                 latent: bool = False) -> ParamState:
    if n_studies < 1:
        raise DomainError("n_studies must be at least 1")
    theta0 = float(rng.normal(0.0, config.theta0_sd))
    tau = float(abs(rng.normal(0.0, config.tau_scale))) if spec.random else 0.0
    weights = None
    conc = config.concentration(spec.cutoffs.J)
    if spec.family == "phack":
        weights = sample_dirichlet(rng, conc)
    elif spec.family == "pubbias":
        rho = rho_from_increments(sample_dirichlet(rng, conc))
        rho[0] = 1.0
        weights = rho
    thetas = None
    if latent and spec.random:
        thetas = rng.normal(theta0, tau, size=n_studies)
    return ParamState(theta0, tau, weights, thetas)
