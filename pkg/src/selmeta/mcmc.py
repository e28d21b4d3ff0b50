"""Adaptive random-walk Metropolis for the selection models.

Chains are advanced in lockstep so one vectorised density evaluation serves
all of them, but each chain draws from its own :class:`Rng` stream and
adapts its own proposal, so chains stay statistically independent and the
output is identical to running them one by one.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from .densities import (
    DEFAULT_QUAD_ORDER,
    ModelSpec,
    ParamState,
    Study,
    model_logpdf,
    phack_fixed_logpdf,
    study_arrays,
)
from .priors import PriorConfig, log_prior_arrays, rho_from_increments, rho_increments
from .stats_core import DomainError, Rng, log_normal_pdf

log = logging.getLogger(__name__)


class AdaptationError(RuntimeError):
    """A chain rejected every proposal for a whole warmup window."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 8
    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.3
    seed: int = 0
    quad_order: int = DEFAULT_QUAD_ORDER
    # sample latent effects explicitly for random-effects p-hacking instead of
    # integrating them out
    latent: bool = False

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 1 or self.draws < 1:
            raise DomainError("chains, warmup and draws must be at least 1")
        if not 0 < self.target_accept < 1:
            raise DomainError("target_accept must lie in (0, 1)")


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def _log_expit(y):
    return -np.logaddexp(0.0, -y)


def stick_breaking_inverse(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Simplex (last axis ``K+1``) from ``K`` logits, with log-Jacobian."""
    y = np.asarray(y, dtype=float)
    K = y.shape[-1]
    out = np.empty(y.shape[:-1] + (K + 1,))
    log_rest = np.zeros(y.shape[:-1])
    log_jac = np.zeros(y.shape[:-1])
    for k in range(K):
        log_z = _log_expit(y[..., k])
        log_1mz = _log_expit(-y[..., k])
        out[..., k] = np.exp(log_rest + log_z)
        log_jac += log_rest + log_z + log_1mz
        log_rest = log_rest + log_1mz
    out[..., K] = np.exp(log_rest)
    return out, log_jac


def stick_breaking_forward(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    K = p.shape[-1] - 1
    y = np.empty(p.shape[:-1] + (K,))
    rest = np.ones(p.shape[:-1])
    for k in range(K):
        z = p[..., k] / rest
        with np.errstate(divide="ignore"):
            y[..., k] = special.logit(z)
        rest = rest - p[..., k]
    return y


class Transform:
    """Bijection between :class:`ParamState` and an unconstrained vector.

    Layout: ``theta0``, ``log tau`` (random effects), simplex logits
    (``pi`` directly, or the Dirichlet increments of ``rho``), then latent
    effects when sampled explicitly.
    """

    def __init__(self, spec: ModelSpec, n_studies: int = 0, latent: bool = False):
        if latent and not (spec.family == "phack" and spec.random):
            raise DomainError("latent effects are only sampled for random-effects p-hacking")
        self.spec = spec
        self.n_latent = n_studies if latent else 0
        self.J = spec.cutoffs.J
        self.n_weights = self.J - 1 if spec.family != "uncorrected" else 0
        self.n_hyper = 1 + int(spec.random) + self.n_weights
        self.dim = self.n_hyper + self.n_latent

    @property
    def param_names(self) -> list[str]:
        names = ["theta0"]
        if self.spec.random:
            names.append("tau")
        if self.spec.weight_name:
            names += [f"{self.spec.weight_name}[{j + 1}]" for j in range(self.J)]
        names += [f"theta[{i + 1}]" for i in range(self.n_latent)]
        return names

    def unpack(self, Y: np.ndarray):
        """Constrained pieces and log-Jacobian for a batch ``Y`` of shape ``(..., dim)``."""
        Y = np.asarray(Y, dtype=float)
        if Y.shape[-1] != self.dim:
            raise DomainError(f"expected vectors of length {self.dim}, got {Y.shape[-1]}")
        theta0 = Y[..., 0]
        log_jac = np.zeros(Y.shape[:-1])
        k = 1
        if self.spec.random:
            tau = np.exp(Y[..., 1])
            log_jac = log_jac + Y[..., 1]
            k = 2
        else:
            tau = np.zeros(Y.shape[:-1])
        weights = None
        if self.n_weights:
            simplex, lj = stick_breaking_inverse(Y[..., k:k + self.n_weights])
            log_jac = log_jac + lj
            if self.spec.family == "pubbias":
                weights = rho_from_increments(simplex)
                weights[..., 0] = 1.0
            else:
                weights = simplex
        latent = Y[..., self.n_hyper:] if self.n_latent else None
        return theta0, tau, weights, latent, log_jac

    def flat(self, Y: np.ndarray) -> np.ndarray:
        """Constrained values in :attr:`param_names` order."""
        theta0, tau, weights, latent, _ = self.unpack(Y)
        cols = [theta0[..., None]]
        if self.spec.random:
            cols.append(tau[..., None])
        if weights is not None:
            cols.append(weights)
        if latent is not None:
            cols.append(latent)
        return np.concatenate(cols, axis=-1)

    def from_unconstrained(self, y) -> ParamState:
        theta0, tau, weights, latent, _ = self.unpack(np.asarray(y, dtype=float))
        return ParamState(
            float(theta0), float(tau),
            None if weights is None else np.asarray(weights),
            None if latent is None else np.asarray(latent),
        )

    def log_jacobian(self, y) -> float:
        return float(self.unpack(np.asarray(y, dtype=float))[-1])

    def to_unconstrained(self, state: ParamState) -> np.ndarray:
        parts = [[float(state.theta0)]]
        if self.spec.random:
            if not state.tau > 0:
                raise DomainError("tau must be positive to map to log scale")
            parts.append([np.log(state.tau)])
        if self.n_weights:
            w = np.asarray(state.weights, dtype=float)
            if w.size != self.J:
                raise DomainError("weight vector has the wrong length")
            simplex = rho_increments(w) if self.spec.family == "pubbias" else w
            parts.append(stick_breaking_forward(simplex))
        if self.n_latent:
            t = np.asarray(state.latent_thetas, dtype=float)
            if t.size != self.n_latent:
                raise DomainError("latent effects have the wrong length")
            parts.append(t)
        elif state.latent_thetas is not None and self.spec.random:
            raise DomainError("state carries latent effects but the transform does not")
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def to_unconstrained(state: ParamState, spec: ModelSpec) -> np.ndarray:
    n = 0 if state.latent_thetas is None else len(state.latent_thetas)
    return Transform(spec, n, latent=n > 0).to_unconstrained(state)


def from_unconstrained(vector, spec: ModelSpec, n_latent: int = 0) -> ParamState:
    return Transform(spec, n_latent, latent=n_latent > 0).from_unconstrained(vector)


# ---------------------------------------------------------------------------
# posterior
# ---------------------------------------------------------------------------

class Posterior:
    """Log posterior on the unconstrained scale, vectorised over a leading axis."""

    def __init__(self, studies: Sequence[Study], spec: ModelSpec, prior: PriorConfig = PriorConfig(),
                 quad_order: int = DEFAULT_QUAD_ORDER, latent: bool = False):
        self.x, self.se = study_arrays(studies) if len(studies) else (np.zeros(0), np.zeros(0))
        self.spec = spec
        self.prior = prior
        self.quad_order = quad_order
        self.transform = Transform(spec, len(self.x), latent)

    @property
    def dim(self) -> int:
        return self.transform.dim

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        theta0, tau, weights, latent, log_jac = self.transform.unpack(Y)
        lp = log_jac + log_prior_arrays(theta0, tau, weights, self.spec, self.prior)
        if latent is not None:
            lp = lp + np.sum(self._latent_prior(latent, theta0, tau), axis=-1)
        if self.x.size:
            lp = lp + np.sum(self.pointwise(theta0, tau, weights, latent), axis=-1)
        return np.where(np.isnan(lp), -np.inf, lp)

    def pointwise(self, theta0, tau, weights, latent=None) -> np.ndarray:
        """Per-study log-likelihood; conditional on latent effects when given."""
        w = None if weights is None else weights[..., None, :]
        if latent is not None:
            return phack_fixed_logpdf(self.x, self.se, latent, w, self.spec.cutoffs)
        return model_logpdf(self.spec, self.x, self.se, theta0[..., None], tau[..., None], w,
                            self.quad_order)

    @staticmethod
    def _latent_prior(latent, theta0, tau):
        tau = tau[..., None]
        return log_normal_pdf((latent - theta0[..., None]) / tau) - np.log(tau)

    def latent_conditional(self, latent, theta0, tau, weights) -> np.ndarray:
        """Unnormalised log full conditional of each latent effect, elementwise."""
        return (self.pointwise(theta0, tau, weights, latent)
                + self._latent_prior(latent, theta0, tau))


def log_posterior(vector, studies: Sequence[Study], spec: ModelSpec, prior: PriorConfig = PriorConfig(),
                  quad_order: int = DEFAULT_QUAD_ORDER) -> float:
    """Log posterior density at one unconstrained vector (log-Jacobian included)."""
    vector = np.asarray(vector, dtype=float)
    latent = vector.size > Transform(spec).dim
    post = Posterior(studies, spec, prior, quad_order, latent=latent)
    return float(post(vector[None, :])[0])


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    rhat: float
    ess: float
    flags: tuple[str, ...] = ()


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m = 1 << int(np.ceil(np.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, m, axis=-1)
    return np.fft.irfft(f * np.conj(f), m, axis=-1)[..., :n] / n


def _ess_raw(x: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence; ``x`` is ``(chains, draws)``."""
    M, N = x.shape
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * N / (N - 1)
    var_plus = mean_var * (N - 1) / N
    if M > 1:
        var_plus += np.var(chain_mean, ddof=1)
    rho = np.zeros(N)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < N - 4 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    t = 1
    while t <= max_t - 4:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    total = M * N
    tau_hat = -1.0 + 2.0 * np.sum(rho[:max_t + 1]) + rho[max_t + 1]
    tau_hat = max(tau_hat, 1.0 / np.log10(total))
    return float(total / tau_hat)


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _z_scale(x: np.ndarray) -> np.ndarray:
    r = stats.rankdata(x, method="average").reshape(x.shape)
    return special.ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_raw(x: np.ndarray) -> float:
    M, N = x.shape
    W = np.mean(np.var(x, axis=1, ddof=1))
    B = N * np.var(x.mean(axis=1), ddof=1)
    return float(np.sqrt(((N - 1) / N * W + B / N) / W))


def diagnose(x) -> Diagnostic:
    """Rank-normalised split R-hat (max of bulk and tail) and bulk ESS.

    ``x`` has shape ``(chains, draws)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    flags = []
    if np.ptp(x) == 0:
        return Diagnostic(float("nan"), 1.0, ("constant",))
    if x.shape[1] < 100:
        flags.append("few_draws")
    split = _split(x)
    z = _z_scale(split)
    ess = _ess_raw(z)
    if x.shape[0] < 2:
        flags.append("single_chain")
        return Diagnostic(float("nan"), ess, tuple(flags))
    folded = np.abs(split - np.median(split))
    rhat = max(_rhat_raw(z), _rhat_raw(_z_scale(folded)))
    return Diagnostic(rhat, ess, tuple(flags))


def diagnostics(draws: "PosteriorDraws | np.ndarray", names: Sequence[str] | None = None) -> dict[str, Diagnostic]:
    """Per-parameter diagnostics for a ``(chains, draws, params)`` array."""
    if isinstance(draws, PosteriorDraws):
        names = draws.param_names
        draws = draws.draws
    arr = np.asarray(draws, dtype=float)
    if names is None:
        names = [f"p{k}" for k in range(arr.shape[-1])]
    return {name: diagnose(arr[:, :, k]) for k, name in enumerate(names)}


# ---------------------------------------------------------------------------
# sampler
# ---------------------------------------------------------------------------

@dataclass
class PosteriorDraws:
    draws: np.ndarray                 # (chains, draws, params), constrained
    param_names: list[str]
    spec: ModelSpec | None = None
    accept_rate: np.ndarray | None = None
    config: SamplerConfig | None = None
    diagnostics: dict[str, Diagnostic] = field(default_factory=dict)
    _pointwise_fn: Callable[[], np.ndarray] | None = field(default=None, repr=False)
    _pointwise: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def column(self, name: str) -> np.ndarray:
        """All draws of one parameter, flattened chain by chain."""
        return self.draws[:, :, self.param_names.index(name)].reshape(-1)

    def weights(self) -> np.ndarray | None:
        cols = [k for k, n in enumerate(self.param_names) if n.startswith(("rho[", "pi["))]
        if not cols:
            return None
        return self.draws[:, :, cols].reshape(-1, len(cols))

    @property
    def pointwise_loglik(self) -> np.ndarray:
        """``(chains * draws, studies)`` marginal log-likelihood matrix, computed on first use."""
        if self._pointwise is None and self._pointwise_fn is not None:
            self._pointwise = self._pointwise_fn()
        return self._pointwise

    def summary(self) -> dict:
        out = {}
        for k, name in enumerate(self.param_names):
            v = self.draws[:, :, k].reshape(-1)
            q = np.quantile(v, [0.025, 0.25, 0.5, 0.75, 0.975])
            d = self.diagnostics.get(name)
            out[name] = {
                "mean": float(v.mean()),
                "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                "q2.5": float(q[0]), "q25": float(q[1]), "q50": float(q[2]),
                "q75": float(q[3]), "q97.5": float(q[4]),
                "rhat": None if d is None or not np.isfinite(d.rhat) else d.rhat,
                "ess": None if d is None else d.ess,
                "flags": [] if d is None else list(d.flags),
            }
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "draw"] + self.param_names)
            for c in range(self.n_chains):
                for s in range(self.n_draws):
                    w.writerow([c, s] + [repr(float(v)) for v in self.draws[c, s]])

    def summary_json(self, extra: dict | None = None) -> str:
        payload = {
            "model": None if self.spec is None else {
                "family": self.spec.family, "effects": self.spec.effects,
                "cutoffs": list(self.spec.cutoffs.alphas),
            },
            "sampler": None if self.config is None else asdict(self.config),
            "accept_rate": None if self.accept_rate is None else self.accept_rate.tolist(),
            "parameters": self.summary(),
        }
        payload.update(extra or {})
        return json.dumps(payload, indent=2)


def _chol(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    for jitter in (0.0, 1e-10, 1e-8, 1e-6, 1e-4):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            continue
    return np.diag(np.sqrt(np.maximum(np.diag(cov), 1e-8)))


def _regularised_cov(window: np.ndarray) -> np.ndarray:
    n, d = window.shape
    cov = np.atleast_2d(np.cov(window, rowvar=False))
    return (n / (n + 5.0)) * cov + 1e-3 * (5.0 / (n + 5.0)) * np.eye(d)


def sample_target(
    logp: Callable[[np.ndarray], np.ndarray],
    dim: int,
    config: SamplerConfig,
    init: np.ndarray | None = None,
    latent: tuple[slice, Callable[[np.ndarray, np.ndarray], np.ndarray]] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run adaptive random-walk Metropolis on a vectorised log density.

    Parameters
    ----------
    logp
        Maps ``(chains, dim)`` to ``(chains,)`` log densities.
    dim
        Dimension of the unconstrained space.
    config
        Chain counts, lengths, seed and target acceptance rate.
    init
        Optional ``(chains, dim)`` starting points; otherwise uniform on
        ``[-1, 1]`` per coordinate, redrawn until the density is finite.
    latent
        Optional ``(slice, conditional)`` for a block of conditionally
        independent coordinates. ``conditional(Y, values)`` returns the
        elementwise log full conditional of ``values`` given the other
        coordinates of ``Y``. These coordinates get one-dimensional
        Metropolis updates (all at once) every iteration; the remaining
        coordinates form one multivariate block.

    Returns
    -------
    draws : ndarray, shape (chains, draws, dim)
    accept_rate : ndarray, shape (chains,)
        Post-warmup acceptance rate of the multivariate block.
    """
    C, W, S = config.chains, config.warmup, config.draws
    rngs = [Rng(config.seed, c) for c in range(C)]
    lat_slice, lat_cond = latent if latent is not None else (None, None)
    block = np.arange(dim)
    if lat_slice is not None:
        block = np.setdiff1d(block, np.arange(dim)[lat_slice])
    d = block.size

    if init is None:
        Y = np.stack([r.uniform(-1.0, 1.0, dim) for r in rngs])
    else:
        Y = np.array(init, dtype=float, copy=True).reshape(C, dim)
    lp = logp(Y)
    for _ in range(100):
        bad = ~np.isfinite(lp)
        if not bad.any():
            break
        for c in np.flatnonzero(bad):
            Y[c] = rngs[c].uniform(-2.0, 2.0, dim) if init is None else Y[c] + rngs[c].normal(0, 0.1, dim)
        lp = logp(Y)
    if not np.all(np.isfinite(lp)):
        raise AdaptationError("could not find a finite starting point", {"log_density": lp.tolist()})

    chol = np.stack([0.1 * np.eye(d) for _ in range(C)])
    log_scale = np.zeros(C)
    rm_t = 0
    target = config.target_accept
    if lat_slice is not None:
        n_lat = Y[:, lat_slice].shape[1]
        lat_log_scale = np.full((C, n_lat), np.log(0.1))
    checkpoints = sorted({max(1, int(W * f)) for f in (0.25, 0.5, 0.75)} | {W})
    window_start = 0
    window_accepts = np.zeros(C)
    history = np.empty((W, C, d))
    out = np.empty((C, S, dim))
    accepts = np.zeros(C)

    for it in range(W + S):
        warm = it < W
        if lat_slice is not None:
            cur = Y[:, lat_slice]
            eps = np.stack([r.standard_normal(n_lat) for r in rngs])
            prop = cur + np.exp(lat_log_scale) * eps
            log_u = np.log(np.stack([r.random(n_lat) for r in rngs]))
            ratio = lat_cond(Y, prop) - lat_cond(Y, cur)
            ok = np.nan_to_num(ratio, nan=-np.inf) > log_u
            new = np.where(ok, prop, cur)
            Y[:, lat_slice] = new
            lp = logp(Y)
            if warm:
                gamma = (it + 1) ** -0.6
                lat_log_scale += gamma * (np.minimum(np.exp(np.minimum(ratio, 0.0)), 1.0) - 0.44)

        eps = np.stack([r.standard_normal(d) for r in rngs])
        step = np.einsum("cij,cj->ci", chol, eps) * np.exp(log_scale)[:, None]
        Yp = Y.copy()
        Yp[:, block] += step
        lpp = logp(Yp)
        log_u = np.log(np.array([r.random() for r in rngs]))
        diff = np.where(np.isfinite(lpp), lpp - lp, -np.inf)
        ok = diff > log_u
        Y[ok] = Yp[ok]
        lp = np.where(ok, lpp, lp)

        if warm:
            history[it] = Y[:, block]
            window_accepts += ok
            rm_t += 1
            acc_prob = np.exp(np.minimum(np.nan_to_num(diff, nan=-np.inf), 0.0))
            log_scale += rm_t ** -0.6 * (acc_prob - target)
            if it + 1 in checkpoints:
                if np.any(window_accepts == 0):
                    stuck = np.flatnonzero(window_accepts == 0).tolist()
                    raise AdaptationError(
                        f"chains {stuck} rejected every proposal in warmup window "
                        f"[{window_start}, {it + 1})",
                        {"chains": stuck, "window": [window_start, it + 1],
                         "log_scale": log_scale.tolist(), "log_density": lp.tolist()},
                    )
                if it + 1 < W:
                    # second half of the warmup so far: long enough for a
                    # stable estimate, late enough to skip the transient
                    win = history[(it + 1) // 2:it + 1]
                    if win.shape[0] > 2 * d + 2:
                        for c in range(C):
                            chol[c] = _chol(_regularised_cov(win[:, c, :]))
                        log_scale[:] = np.log(2.38 / np.sqrt(d))
                        rm_t = 0
                window_start = it + 1
                window_accepts[:] = 0
        else:
            out[:, it - W] = Y
            accepts += ok
    return out, accepts / S


def run_sampler(studies: Sequence[Study], spec: ModelSpec, prior: PriorConfig = PriorConfig(),
                config: SamplerConfig = SamplerConfig()) -> PosteriorDraws:
    """Sample the posterior of ``spec`` given ``studies``."""
    if len(studies) == 0:
        raise DomainError("dataset is empty")
    post = Posterior(studies, spec, prior, config.quad_order, latent=config.latent)
    tr = post.transform
    latent = None
    init = None
    if tr.n_latent:
        sl = slice(tr.n_hyper, tr.dim)

        def cond(Y, values):
            theta0, tau, weights, _, _ = tr.unpack(Y)
            return post.latent_conditional(values, theta0, tau, weights)

        latent = (sl, cond)
        rngs = [Rng(config.seed, config.chains + c) for c in range(config.chains)]
        init = np.stack([
            np.concatenate([r.uniform(-1, 1, tr.n_hyper), post.x + r.normal(0, 0.05, post.x.size)])
            for r in rngs
        ])
    raw, acc = sample_target(post, tr.dim, config, init=init, latent=latent)
    flat = tr.flat(raw)
    draws = PosteriorDraws(flat, tr.param_names, spec, acc, config)
    draws.diagnostics = diagnostics(draws)

    def pointwise():
        theta0, tau, weights, _, _ = tr.unpack(raw.reshape(-1, tr.dim))
        return marginal_pointwise(post, theta0, tau, weights)

    draws._pointwise_fn = pointwise
    return draws


def marginal_pointwise(post: Posterior, theta0, tau, weights, chunk: int = 256) -> np.ndarray:
    """Marginal (latent-free) log-likelihood for every draw and study."""
    rows = []
    for start in range(0, theta0.shape[0], chunk):
        sl = slice(start, start + chunk)
        w = None if weights is None else weights[sl]
        rows.append(post.pointwise(theta0[sl], tau[sl], w))
    return np.concatenate(rows, axis=0)
