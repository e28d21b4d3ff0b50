"""Data generation under no selection, publication bias and p-hacking, and
the scenario-grid driver used to reproduce the simulation tables."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .densities import (
    CutoffGrid,
    ModelSpec,
    Study,
    check_pi,
    check_rho,
    effect_bounds,
    is_decreasing_rho,
    log_selection_normalizer,
)
from .mcmc import PosteriorDraws, SamplerConfig, run_sampler
from .priors import PriorConfig
from .stats_core import DomainError, PathologicalSelectionError, Rng, derive_seed, sample_truncated_normal

log = logging.getLogger(__name__)

SCENARIOS = ("none", "pubbias", "phack")
MAX_ATTEMPTS = 10_000_000


@dataclass(frozen=True)
class SeRule:
    """How per-study standard errors are drawn.

    ``infosize``: draw ``s`` uniformly from ``{low..high}`` and return
    ``1 / sqrt(s)``. ``literal``: draw the variance uniformly from the same
    set and return its square root. ``fixed``: always ``value``.
    """

    kind: str = "infosize"
    low: int = 20
    high: int = 80
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("infosize", "literal", "fixed"):
            raise DomainError(f"unknown se rule {self.kind!r}")
        if self.kind == "fixed" and not self.value > 0:
            raise DomainError("fixed se must be positive")
        if self.kind != "fixed" and not 0 < self.low <= self.high:
            raise DomainError("se rule needs 0 < low <= high")

    @classmethod
    def parse(cls, text: str) -> "SeRule":
        if text.startswith("fixed:"):
            return cls("fixed", value=float(text.split(":", 1)[1]))
        return cls(text)


def draw_se(rng: np.random.Generator, rule: SeRule = SeRule(), size=None):
    if rule.kind == "fixed":
        return rule.value if size is None else np.full(size, rule.value)
    s = rng.integers(rule.low, rule.high, endpoint=True, size=size)
    out = 1.0 / np.sqrt(s) if rule.kind == "infosize" else np.sqrt(s)
    return float(out) if size is None else out.astype(float)


def _p_values(x, se):
    from scipy.special import ndtr
    return ndtr(-np.asarray(x) / np.asarray(se))


def _step_weight(u, rho, cutoffs: CutoffGrid):
    j = np.searchsorted(cutoffs.as_array(), u, side="left")
    return np.asarray(rho)[j]


def sample_pubbias_studies(rng: np.random.Generator, theta0: float, tau: float, sigma, rho,
                           cutoffs: CutoffGrid = CutoffGrid(), max_attempts: int = MAX_ATTEMPTS):
    """Vectorised rejection sampler: one published ``x`` per entry of ``sigma``.

    ``(theta, x)`` are redrawn together until the editor accepts. Returns
    ``(x, attempts)`` arrays.
    """
    rho = check_rho(rho, cutoffs.J)
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    n = sigma.size
    x = np.empty(n)
    attempts = np.zeros(n, dtype=np.int64)
    todo = np.arange(n)
    while todo.size:
        s = sigma[todo]
        theta = theta0 + tau * rng.standard_normal(todo.size) if tau > 0 else np.full(todo.size, theta0)
        xs = theta + s * rng.standard_normal(todo.size)
        w = _step_weight(_p_values(xs, s), rho, cutoffs)
        accept = rng.random(todo.size) < w
        attempts[todo] += 1
        x[todo[accept]] = xs[accept]
        todo = todo[~accept]
        if todo.size and attempts[todo].max() > max_attempts:
            raise PathologicalSelectionError(
                f"no study accepted after {max_attempts} attempts; acceptance probability is "
                f"{np.exp(log_selection_normalizer(theta0, tau, sigma[todo[0]], rho, cutoffs)):.3g}"
            )
    return x, attempts


def sample_pubbias_study(rng, theta0, tau, sigma, rho, cutoffs: CutoffGrid = CutoffGrid()) -> tuple[Study, int]:
    x, attempts = sample_pubbias_studies(rng, theta0, tau, [sigma], rho, cutoffs)
    return Study(float(x[0]), float(sigma)), int(attempts[0])


def sample_phack_studies(rng: np.random.Generator, theta0: float, tau: float, sigma, pi,
                         cutoffs: CutoffGrid = CutoffGrid()) -> np.ndarray:
    """Draw ``theta``, then a hacking level ``j ~ pi``, then ``x`` truncated to interval ``j``."""
    pi = check_pi(pi, cutoffs.J)
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    n = sigma.size
    theta = theta0 + tau * rng.standard_normal(n) if tau > 0 else np.full(n, float(theta0))
    j = rng.choice(cutoffs.J, size=n, p=pi)
    c = effect_bounds(sigma, cutoffs)
    upper = c[np.arange(n), j]
    lower = c[np.arange(n), j + 1]
    return np.asarray(sample_truncated_normal(rng, theta, sigma, lower, upper, size=n), dtype=float)


def sample_phack_study(rng, theta0, tau, sigma, pi, cutoffs: CutoffGrid = CutoffGrid()) -> Study:
    return Study(float(sample_phack_studies(rng, theta0, tau, [sigma], pi, cutoffs)[0]), float(sigma))


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    n: int
    theta0: float
    tau: float
    weights: tuple[float, ...] | None = None
    cutoffs: CutoffGrid = field(default_factory=CutoffGrid)
    se_rule: SeRule = field(default_factory=SeRule)
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DomainError(f"unknown scenario {self.scenario!r}")
        if self.n < 1:
            raise DomainError("n must be at least 1")
        if self.tau < 0:
            raise DomainError("tau must be nonnegative")
        if self.scenario == "pubbias":
            check_rho(self.weights, self.cutoffs.J)
            if not is_decreasing_rho(self.weights):
                raise DomainError("rho must be nonincreasing")
        elif self.scenario == "phack":
            check_pi(self.weights, self.cutoffs.J)


@dataclass
class Replication:
    dataset: list[Study]
    true_params: dict
    rejection_count: int = 0


def simulate(config: ScenarioConfig, rng: np.random.Generator | None = None) -> Replication:
    """One simulated meta-analysis of ``config.n`` studies."""
    rng = Rng(config.seed, 0) if rng is None else rng
    sigma = np.asarray(draw_se(rng, config.se_rule, size=config.n), dtype=float)
    rejections = 0
    if config.scenario == "none":
        theta = config.theta0 + config.tau * rng.standard_normal(config.n)
        x = theta + sigma * rng.standard_normal(config.n)
    elif config.scenario == "pubbias":
        x, attempts = sample_pubbias_studies(rng, config.theta0, config.tau, sigma, config.weights, config.cutoffs)
        rejections = int(attempts.sum() - config.n)
    else:
        x = sample_phack_studies(rng, config.theta0, config.tau, sigma, config.weights, config.cutoffs)
    truth = {"scenario": config.scenario, "theta0": config.theta0, "tau": config.tau,
             "weights": None if config.weights is None else list(config.weights)}
    return Replication([Study(float(a), float(b)) for a, b in zip(x, sigma)], truth, rejections)


def selection_set_demo(rng, H: str, weight_rule, n_draws: int):
    """Algorithm-1 draws of ``(x, theta)`` under the normal-normal model; see :mod:`selection_lab`."""
    from .selection_lab import SelectionSpec, q_H_sampler
    return q_H_sampler(rng, SelectionSpec(weight_rule, H), n_draws)


# ---------------------------------------------------------------------------
# scenario grids
# ---------------------------------------------------------------------------

TABLE_SCENARIO = {2: "none", 3: "pubbias", 4: "phack"}
TABLE_WEIGHTS = {"none": None, "pubbias": (1.0, 0.7, 0.1), "phack": (0.6, 0.3, 0.1)}
GRID_TAUS = (0.1, 0.5)
GRID_THETA0S = (0.0, 0.2, 0.8)
GRID_NS = (5, 30, 100)

GRID_COLUMNS = ["scenario", "tau", "theta0", "n", "model", "mean_theta0", "sd_theta0",
                "mean_tau", "sd_tau", "replications", "failures"]


def table_grid(table: int, taus=GRID_TAUS, theta0s=GRID_THETA0S, ns=GRID_NS,
               se_rule: SeRule = SeRule()) -> list[ScenarioConfig]:
    """Cells of one of the three simulation tables, in table order."""
    if table not in TABLE_SCENARIO:
        raise DomainError("table must be 2, 3 or 4")
    scenario = TABLE_SCENARIO[table]
    return [
        ScenarioConfig(scenario, n, theta0, tau, TABLE_WEIGHTS[scenario], se_rule=se_rule)
        for tau in taus for theta0 in theta0s for n in ns
    ]


def fit_cell_replicate(cell: ScenarioConfig, rep: int, fit_specs: Sequence[ModelSpec], master_seed: int,
                       prior: PriorConfig, sampler: SamplerConfig, cell_index: int,
                       keep_draws: bool = False) -> list[dict]:
    data_seed = derive_seed(master_seed, cell_index, rep, 0)
    data = simulate(cell, Rng(data_seed, 0))
    rows = []
    for k, spec in enumerate(fit_specs):
        seed = derive_seed(master_seed, cell_index, rep, k + 1)
        cfg = SamplerConfig(sampler.chains, sampler.warmup, sampler.draws, sampler.target_accept,
                            seed, sampler.quad_order, sampler.latent)
        try:
            draws = run_sampler(data.dataset, spec, prior, cfg)
            diag = draws.diagnostics["theta0"]
            fit = {"model": spec.family, "theta0": float(draws.column("theta0").mean()),
                   "tau": float(draws.column("tau").mean()) if spec.random else 0.0,
                   "rhat_theta0": diag.rhat, "ess_theta0": diag.ess}
            if keep_draws:
                fit["draws"] = draws
            rows.append(fit)
        except Exception as exc:  # a failed fit is counted, never fatal for the grid
            log.warning("fit failed in cell %d rep %d (%s): %s", cell_index, rep, spec.label, exc)
            rows.append({"model": spec.family, "error": str(exc)})
    return rows


def run_scenario_grid(grid: Sequence[ScenarioConfig], replications: int, fit_specs: Sequence[ModelSpec],
                      master_seed: int = 0, prior: PriorConfig = PriorConfig(),
                      sampler: SamplerConfig = SamplerConfig(), workers: int = 1,
                      keep_fits: bool = False) -> list[dict]:
    """Simulate and fit every cell ``replications`` times; one summary row per (cell, model).

    Each summary carries the mean and standard deviation, across
    replications, of the posterior means of ``theta0`` and ``tau``.
    """
    if replications < 1:
        raise DomainError("replications must be at least 1")
    jobs = [(ci, r) for ci in range(len(grid)) for r in range(replications)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fit_cell_replicate, grid[ci], r, fit_specs, master_seed, prior, sampler, ci)
                       for ci, r in jobs]  # draws hold closures and are not shipped back
            results = [f.result() for f in futures]
    else:
        results = [fit_cell_replicate(grid[ci], r, fit_specs, master_seed, prior, sampler, ci, keep_fits)
                   for ci, r in jobs]
    by_cell: dict[int, list[list[dict]]] = {}
    for (ci, _), res in zip(jobs, results):
        by_cell.setdefault(ci, []).append(res)

    rows = []
    for ci, cell in enumerate(grid):
        for k, spec in enumerate(fit_specs):
            fits = [reps[k] for reps in by_cell.get(ci, [])]
            ok = [f for f in fits if "error" not in f]
            t0 = np.array([f["theta0"] for f in ok])
            tau = np.array([f["tau"] for f in ok])
            row = {
                "scenario": cell.scenario, "tau": cell.tau, "theta0": cell.theta0, "n": cell.n,
                "model": spec.family,
                "mean_theta0": float(t0.mean()) if t0.size else float("nan"),
                "sd_theta0": float(t0.std(ddof=1)) if t0.size > 1 else float("nan"),
                "mean_tau": float(tau.mean()) if tau.size else float("nan"),
                "sd_tau": float(tau.std(ddof=1)) if tau.size > 1 else float("nan"),
                "replications": len(fits),
                "failures": len(fits) - len(ok),
            }
            if keep_fits:
                row["fits"] = ok
            rows.append(row)
    return rows


def write_grid_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=GRID_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def write_dataset_csv(studies: Sequence[Study], path, header_comment: str | None = None) -> None:
    """Write ``effect,se`` rows to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_dataset(path, studies, header_comment)
        return
    with open(path, "w", newline="") as fh:
        _write_dataset(fh, studies, header_comment)


def _write_dataset(fh, studies, header_comment):
    if header_comment:
        for line in header_comment.splitlines():
            fh.write(f"# {line}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["effect", "se"])
    for s in studies:
        w.writerow([repr(s.effect), repr(s.se)])
