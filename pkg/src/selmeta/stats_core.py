"""Normal-distribution special functions and random-variate kernels.

Everything here is vectorised over numpy arrays. The log-space helpers
(``log_normal_cdf`` and ``log_normal_mass``) exist because normalising
constants of selection models subtract nearly equal CDF values far in the
tails, where the direct difference underflows or cancels.
"""

from __future__ import annotations

import numpy as np
from scipy import special

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class SingularRegionError(ArithmeticError):
    """A normalising constant is numerically zero."""


class PathologicalSelectionError(RuntimeError):
    """Rejection sampling exceeded its attempt cap."""


class Rng(np.random.Generator):
    """Counter-based generator identified by ``(seed, stream)``.

    Built on Philox with the stream folded into the seed sequence's spawn
    key, so distinct streams are independent by construction and any
    ``(seed, stream)`` pair reproduces the same variates bit for bit.
    """

    def __init__(self, seed: int, stream: int = 0):
        seed = int(seed)
        stream = int(stream)
        if not (0 <= seed < 2**64 and 0 <= stream < 2**64):
            raise DomainError("seed and stream must be 64-bit unsigned integers")
        ss = np.random.SeedSequence(seed, spawn_key=(stream,))
        super().__init__(np.random.Philox(ss))
        self.seed = seed
        self.stream = stream

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic 64-bit child seed for a hierarchical task path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _check_finite(z):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("input must be finite")
    return z


def _as_output(a):
    return a.item() if np.ndim(a) == 0 else a


def normal_cdf(z):
    """Standard normal CDF. Raises ``DomainError`` on non-finite input."""
    return _as_output(special.ndtr(_check_finite(z)))


def log_normal_cdf(z):
    """``log Phi(z)``, accurate deep in the lower tail. Accepts +-inf."""
    return _as_output(special.log_ndtr(np.asarray(z, dtype=float)))


def normal_quantile(p):
    """Inverse of :func:`normal_cdf` on the open unit interval."""
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise DomainError("p must lie strictly inside (0, 1)")
    return _as_output(special.ndtri(p))


def log_normal_pdf(z):
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore"):  # z*z overflows to inf, giving the correct -inf
        return -0.5 * z * z - LOG_SQRT_2PI


def log_normal_mass(a, b):
    """``log(Phi(b) - Phi(a))`` for standardised bounds ``a <= b``.

    Reflects intervals that sit in the upper half so both CDF values are
    taken from the lower tail, where ``log_ndtr`` keeps full relative
    precision. Returns ``-inf`` where the mass underflows.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    log_hi = special.log_ndtr(hi)
    log_lo = special.log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = log_lo - log_hi
        out = log_hi + np.log1p(-np.exp(diff))
    out = np.where((b <= a) | np.isneginf(log_hi), -np.inf, out)
    return _as_output(out)


def log_sum_exp(values, axis=None):
    """``log(sum(exp(values)))`` with a max shift. ``-inf`` iff all inputs are."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise DomainError("log_sum_exp of an empty sequence")
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(s.reshape(()))
    return np.squeeze(s, axis=axis)


def _check_trunc_args(sd, lo, hi):
    sd = np.asarray(sd, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(sd <= 0) or np.any(~np.isfinite(sd)):
        raise DomainError("sd must be positive and finite")
    if np.any(~(lo < hi)):
        raise DomainError("truncation bounds require lo < hi")
    return sd, lo, hi


def log_trunc_normal_pdf(x, mean, sd, lo, hi):
    """Log-density of ``N(mean, sd)`` truncated to ``[lo, hi)``.

    ``-inf`` outside the support. Raises ``SingularRegionError`` if the
    truncation mass underflows to zero.
    """
    sd, lo, hi = _check_trunc_args(sd, lo, hi)
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    log_mass = np.asarray(log_normal_mass((lo - mean) / sd, (hi - mean) / sd))
    if np.any(np.isneginf(log_mass)):
        raise SingularRegionError("truncation interval has zero probability mass")
    out = log_normal_pdf((x - mean) / sd) - np.log(sd) - log_mass
    inside = (x >= lo) & (x < hi)
    return _as_output(np.where(inside, out, -np.inf))


def truncated_normal_ppf(q, a, b):
    """Quantile of the standard normal truncated to ``[a, b]`` (standardised).

    Works in log space through ``ndtri_exp`` so bounds far in either tail
    (e.g. ``a = 40``) stay accurate.
    """
    q, a, b = np.broadcast_arrays(
        np.asarray(q, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    qq = np.where(flip, 1.0 - q, q)
    log_hi = special.log_ndtr(hi)
    log_lo = special.log_ndtr(lo)
    with np.errstate(divide="ignore"):
        log_p = np.logaddexp(log_hi + np.log(qq), log_lo + np.log1p(-qq))
    z = special.ndtri_exp(np.minimum(log_p, 0.0))
    z = np.clip(z, lo, hi)
    return np.where(flip, -z, z)


def sample_truncated_normal(rng: np.random.Generator, mean, sd, lo, hi, size=None):
    """Inverse-CDF draw(s) from ``N(mean, sd)`` truncated to ``[lo, hi)``."""
    sd, lo, hi = _check_trunc_args(sd, lo, hi)
    mean = np.asarray(mean, dtype=float)
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    if np.any(np.isneginf(np.asarray(log_normal_mass(a, b)))):
        raise SingularRegionError("truncation interval has zero probability mass")
    if size is None:
        size = np.broadcast(mean, sd, lo, hi).shape
    q = rng.random(size)
    x = mean + sd * truncated_normal_ppf(q, a, b)
    # guard the half-open upper bound against rounding
    x = np.where(x >= hi, np.nextafter(hi, -np.inf), x)
    x = np.maximum(x, lo)
    return _as_output(x)


def sample_dirichlet(rng: np.random.Generator, concentrations, size=None):
    alpha = np.asarray(concentrations, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0:
        raise DomainError("concentrations must be a nonempty 1-D sequence")
    if np.any(~(alpha > 0)) or np.any(~np.isfinite(alpha)):
        raise DomainError("concentrations must be positive and finite")
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    if alpha.size == 1:
        return np.ones(shape + (1,))
    g = rng.standard_gamma(alpha, size=shape + alpha.shape)
    total = g.sum(axis=-1, keepdims=True)
    bad = ~(total > 0)
    if np.any(bad):
        # every gamma underflowed (tiny concentrations); fall back to the
        # log-gamma construction Gamma(a) = Gamma(a + 1) * U**(1/a)
        lg = np.log(rng.standard_gamma(alpha + 1.0, size=shape + alpha.shape))
        lg += np.log(rng.random(shape + alpha.shape)) / alpha
        lg -= lg.max(axis=-1, keepdims=True)
        g = np.where(bad, np.exp(lg), g)
        total = g.sum(axis=-1, keepdims=True)
    return g / total
