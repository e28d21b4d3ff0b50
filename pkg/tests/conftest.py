import numpy as np
import pytest
from scipy import integrate

from selmeta.densities import CutoffGrid, effect_bounds


@pytest.fixture
def grid():
    return CutoffGrid()


def integrate_over_x(logpdf, se, centre, spread, cutoffs=CutoffGrid()):
    """``int exp(logpdf(x)) dx`` split at the effect-space cutoffs of ``se``."""
    edges = _window(se, centre, spread, cutoffs)
    f = lambda x: float(np.exp(logpdf(x)))  # noqa: E731
    return sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
               for a, b in zip(edges, edges[1:]))


def _window(se, centre, spread, cutoffs):
    c = effect_bounds(se, cutoffs)[1:-1]
    lo = min(centre - 14 * spread, float(np.min(c)) - 40 * se) - 1.0
    hi = max(centre + 14 * spread, float(np.max(c)) + 40 * se) + 1.0
    return [lo] + sorted(float(v) for v in c) + [hi]


def integrate_panels(logpdf_vec, se, centre, spread, cutoffs=CutoffGrid(), panels=64, order=20):
    """Vectorised composite Gauss-Legendre over segments split at the cutoffs.

    Each segment gets at least ``panels`` panels and at least one per ``se``.
    """
    t, w = np.polynomial.legendre.leggauss(order)
    edges = _window(se, centre, spread, cutoffs)
    xs, ws = [], []
    for a, b in zip(edges, edges[1:]):
        p = np.linspace(a, b, max(panels, int(np.ceil((b - a) / se))) + 1)
        half = 0.5 * np.diff(p)[:, None]
        xs.append(((p[:-1] + p[1:])[:, None] * 0.5 + half * t).ravel())
        ws.append((half * w).ravel())
    x, wt = np.concatenate(xs), np.concatenate(ws)
    return float(np.sum(wt * np.exp(logpdf_vec(x))))
