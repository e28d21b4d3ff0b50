"""Command-line interface: ``selmeta <command> [flags]``.

Every command accepts ``--config FILE`` holding ``key=value`` lines named
after its long flags; flags given on the command line win. The default
worker count comes from ``SELMETA_THREADS`` and is capped by ``--threads``.

Exit status: 0 when all outputs were written, 1 for input or usage
problems found after parsing, 2 for argparse usage errors, 3 for
numerical failures (a diagnostics JSON goes to stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .densities import CutoffGrid, ModelSpec, posterior_theta_given_x
from .equivalence import pi_to_rho, rho_to_pi
from .ingest import ParseError, parse_dataset
from .loo import exact_loo, importance_loo
from .mcmc import AdaptationError, SamplerConfig, run_sampler
from .priors import PriorConfig
from .selection_lab import SelectionSpec, StepWeight, q_H_sampler, theta_marginal_mean
from .simulate import (
    SCENARIOS,
    TABLE_WEIGHTS,
    ScenarioConfig,
    SeRule,
    run_scenario_grid,
    simulate,
    table_grid,
    write_dataset_csv,
    write_grid_csv,
)
from .stats_core import (
    DomainError,
    PathologicalSelectionError,
    Rng,
    SingularRegionError,
)

log = logging.getLogger("selmeta")

THREADS_ENV = "SELMETA_THREADS"
FAMILIES = ("uncorrected", "pubbias", "phack")


class UsageError(Exception):
    """Flags that parse but contradict each other."""


class NumericalFailure(Exception):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _cutoffs(text: str) -> CutoffGrid:
    vals = _floats(text)
    try:
        return CutoffGrid.from_splits(vals)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _se_rule(text: str) -> SeRule:
    try:
        return SeRule.parse(text)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _weight_rule(text: str) -> StepWeight:
    try:
        return StepWeight.parse(text)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _models(text: str) -> tuple[str, ...]:
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [n for n in names if n not in FAMILIES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"models must be drawn from {FAMILIES}")
    return names


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key=value file of defaults for this command's flags")
    p.add_argument("--threads", type=_pos_int, default=None,
                   help=f"cap on worker processes (default: ${THREADS_ENV} or 1)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _add_sampler(p: argparse.ArgumentParser, draws: int = 1000) -> None:
    g = p.add_argument_group("sampler")
    g.add_argument("--chains", type=_pos_int, default=8)
    g.add_argument("--warmup", type=_pos_int, default=1000)
    g.add_argument("--draws", type=_pos_int, default=draws, help="draws per chain after warmup")
    g.add_argument("--target-accept", type=float, default=0.3)
    g.add_argument("--seed", type=_nonneg_int, default=0)
    g.add_argument("--quad-order", type=_pos_int, default=SamplerConfig.quad_order,
                   help="minimum nodes of the latent-effect quadrature (random-effects p-hacking)")
    g.add_argument("--latent", action="store_true",
                   help="sample latent study effects instead of integrating them out")


def _add_model(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--effects", choices=["fixed", "random"], default="random")
    g.add_argument("--cutoffs", type=_cutoffs, default=CutoffGrid(), metavar="A1,A2",
                   help="one-sided p-value split points (default 0.025,0.05)")
    g.add_argument("--theta0-sd", type=float, default=None, help="prior sd of theta0 (default 1)")
    g.add_argument("--tau-scale", type=float, default=None,
                   help="half-normal prior scale of tau (default 1); random effects only")
    g.add_argument("--concentration", type=_floats, default=None, metavar="C1,C2,C3",
                   help="Dirichlet concentrations of the weight prior (default all ones)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selmeta",
        description="Bayesian meta-analysis under publication bias and p-hacking.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fit", help="fit one model to a dataset",
                       description="Fit a model; writes draws.csv, summary.json and loo.json to --out.")
    p.add_argument("--data", required=True, help="CSV with effect,se or statistic,stat_type,df columns")
    p.add_argument("--model", choices=FAMILIES, required=True)
    _add_model(p)
    _add_sampler(p)
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    p.add_argument("--exact-loo", action="store_true", help="also run exact leave-one-out by refitting")
    p.add_argument("--emit-plotdata", action="store_true",
                   help="also write plotdata.json with posterior density curves and shrinkage")
    _add_common(p)

    p = sub.add_parser("simulate", help="simulate one dataset",
                       description="Simulate one meta-analysis and write it as CSV.")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--n", type=_pos_int, required=True, help="number of published studies")
    p.add_argument("--theta0", type=float, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--weights", type=_floats, default=None,
                   help="rho (pubbias) or pi (phack); defaults 1,0.7,0.1 and 0.6,0.3,0.1")
    p.add_argument("--cutoffs", type=_cutoffs, default=CutoffGrid(), metavar="A1,A2")
    p.add_argument("--se-rule", type=_se_rule, default=SeRule(), metavar="{infosize|literal|fixed:V}")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out", default="-", help="output CSV (default stdout)")
    _add_common(p)

    p = sub.add_parser("replicate", help="rerun a simulation table at reduced scale",
                       description="Simulate and fit every cell of scenario grid 2, 3 or 4; writes grid.csv and config.json.")
    p.add_argument("--table", type=int, choices=[2, 3, 4], required=True)
    p.add_argument("--reps", type=_pos_int, default=10)
    p.add_argument("--taus", type=_floats, default=None, help="subset of tau values")
    p.add_argument("--theta0s", type=_floats, default=None, help="subset of theta0 values")
    p.add_argument("--ns", type=_floats, default=None, help="subset of study counts")
    p.add_argument("--models", type=_models, default=("pubbias", "phack"))
    p.add_argument("--se-rule", type=_se_rule, default=SeRule(), metavar="{infosize|literal|fixed:V}")
    _add_model(p)
    _add_sampler(p)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("compare", help="fit several models and compare LOOIC",
                       description="Fit each model and write a LOOIC table (smallest first).")
    p.add_argument("--data", required=True)
    p.add_argument("--models", type=_models, default=FAMILIES)
    _add_model(p)
    _add_sampler(p)
    p.add_argument("--out", default="-", help="output JSON (default stdout)")
    _add_common(p)

    p = sub.add_parser("convert-weights", help="map between rho and pi at one standard error",
                       description="Convert selection weights rho to hacking probabilities pi or back.")
    p.add_argument("--direction", choices=["rho-to-pi", "pi-to-rho"], required=True)
    p.add_argument("--weights", type=_floats, required=True)
    p.add_argument("--theta0", type=float, required=True)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--cutoffs", type=_cutoffs, default=CutoffGrid(), metavar="A1,A2")
    _add_common(p)

    p = sub.add_parser("demo-selection-set", help="rejection-sample a selection model",
                       description="Draw (x, theta) pairs from a selection model and summarise them.")
    p.add_argument("--H", dest="H", choices=["both", "x", "theta", "none"], default="both")
    p.add_argument("--weight", type=_weight_rule, default=StepWeight.parse("step:0.05:0.1"),
                   metavar="step:A1,..:W2,..|const:C")
    p.add_argument("--n", type=_pos_int, default=100_000)
    p.add_argument("--theta-mean", type=float, default=0.0)
    p.add_argument("--theta-sd", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    _add_common(p)
    return parser


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def read_config(path: str) -> list[tuple[str, str]]:
    items = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        items.append((key.replace("_", "-").lstrip("-"), value))
    return items


def _config_tokens(sub: argparse.ArgumentParser, items) -> list[str]:
    actions = {opt: a for a in sub._actions for opt in a.option_strings}
    tokens = []
    for key, value in items:
        flag = f"--{key}"
        action = actions.get(flag)
        if action is None or key == "config":
            raise UsageError(f"config key {key!r} is not a flag of this command")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"config key {key!r} expects true or false")
        else:
            tokens += [flag, value]
    return tokens


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        tokens = _config_tokens(sub, read_config(args.config))
        # config values first so explicit flags override them
        args = parser.parse_args([args.command] + tokens + list(argv[1:]))
    return args


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _resolved(args: argparse.Namespace) -> dict:
    out = {}
    for k, v in vars(args).items():
        if isinstance(v, CutoffGrid):
            v = list(v.alphas)
        elif isinstance(v, SeRule):
            v = asdict(v)
        elif isinstance(v, StepWeight):
            v = {"alphas": list(v.alphas), "weights": list(v.weights)}
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _prior(args) -> PriorConfig:
    if args.effects == "fixed" and args.tau_scale is not None:
        raise UsageError("--tau-scale sets the prior on tau and conflicts with --effects fixed")
    kw = {}
    if args.theta0_sd is not None:
        kw["theta0_sd"] = args.theta0_sd
    if args.tau_scale is not None:
        kw["tau_scale"] = args.tau_scale
    if args.concentration is not None:
        if len(args.concentration) != args.cutoffs.J:
            raise UsageError(f"--concentration needs {args.cutoffs.J} values")
        kw["simplex_concentration"] = args.concentration
    return PriorConfig(**kw)


def _sampler(args) -> SamplerConfig:
    if args.latent and args.effects == "fixed":
        raise UsageError("--latent requires --effects random")
    return SamplerConfig(args.chains, args.warmup, args.draws, args.target_accept, args.seed,
                         args.quad_order, args.latent)


def _spec(model: str, args) -> ModelSpec:
    return ModelSpec(model, args.effects, args.cutoffs)


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _fit(studies, spec, prior, sampler):
    try:
        return run_sampler(studies, spec, prior, sampler)
    except AdaptationError as exc:
        raise NumericalFailure(str(exc), {"model": spec.label, **exc.diagnostics}) from None
    except SingularRegionError as exc:
        raise NumericalFailure(str(exc), {"model": spec.label}) from None


def _plotdata(draws, studies, spec, grid_points: int = 200) -> dict:
    from scipy.stats import gaussian_kde

    curves = {}
    for name in draws.param_names:
        v = draws.column(name)
        if np.ptp(v) == 0:
            continue
        lo, hi = np.quantile(v, [0.001, 0.999])
        pad = 0.1 * (hi - lo)
        grid = np.linspace(lo - pad, hi + pad, grid_points)
        curves[name] = {"x": grid.tolist(), "density": gaussian_kde(v)(grid).tolist()}
    out = {"posterior_density": curves}
    if spec.random:
        theta0 = float(draws.column("theta0").mean())
        tau = float(draws.column("tau").mean())
        w = draws.weights()
        w = None if w is None else w.mean(axis=0)
        shrink = []
        for s in studies:
            post = posterior_theta_given_x(s, theta0, tau, spec, w)
            shrink.append({"effect": s.effect, "se": s.se, "posterior_mean": post.mean, "posterior_sd": post.sd})
        out["shrinkage"] = {"theta0": theta0, "tau": tau, "studies": shrink}
    return out


def cmd_fit(args) -> None:
    studies = parse_dataset(args.data)
    prior, sampler, spec = _prior(args), _sampler(args), _spec(args.model, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    draws = _fit(studies, spec, prior, sampler)
    loo = importance_loo(draws.pointwise_loglik, model=spec.label)
    payload = loo.to_dict()
    if args.exact_loo:
        payload["exact"] = exact_loo(studies, spec, prior, sampler, model=spec.label).to_dict()
    draws.to_csv(out / "draws.csv")
    extra = {"config": _resolved(args), "n_studies": len(studies),
             "prior": asdict(prior), "looic": loo.looic, "se_looic": loo.se_looic}
    _write_text(str(out / "summary.json"), draws.summary_json(extra))
    _write_text(str(out / "loo.json"), json.dumps(payload, indent=2))
    if args.emit_plotdata:
        _write_text(str(out / "plotdata.json"), json.dumps(_plotdata(draws, studies, spec)))


def cmd_simulate(args) -> None:
    weights = args.weights
    if args.scenario == "none" and weights is not None:
        raise UsageError("--weights has no meaning for --scenario none")
    if weights is None:
        weights = TABLE_WEIGHTS[args.scenario]
    cfg = ScenarioConfig(args.scenario, args.n, args.theta0, args.tau, weights, args.cutoffs,
                         args.se_rule, args.seed)
    try:
        rep = simulate(cfg, Rng(args.seed, 0))
    except PathologicalSelectionError as exc:
        raise NumericalFailure(str(exc), {"scenario": args.scenario}) from None
    header = json.dumps({"config": _resolved(args), "rejections": rep.rejection_count})
    write_dataset_csv(rep.dataset, sys.stdout if args.out == "-" else args.out, header)


def cmd_replicate(args, workers: int) -> None:
    prior, sampler = _prior(args), _sampler(args)
    kw = {}
    if args.taus is not None:
        kw["taus"] = args.taus
    if args.theta0s is not None:
        kw["theta0s"] = args.theta0s
    if args.ns is not None:
        kw["ns"] = tuple(int(n) for n in args.ns)
    grid = table_grid(args.table, se_rule=args.se_rule, **kw)
    grid = [ScenarioConfig(c.scenario, c.n, c.theta0, c.tau, c.weights, args.cutoffs, c.se_rule, args.seed)
            for c in grid]
    specs = [_spec(m, args) for m in args.models]
    rows = run_scenario_grid(grid, args.reps, specs, args.seed, prior, sampler, workers=workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_grid_csv(rows, out / "grid.csv")
    _write_text(str(out / "config.json"), json.dumps({"config": _resolved(args), "workers": workers}, indent=2))


def cmd_compare(args) -> None:
    studies = parse_dataset(args.data)
    prior, sampler = _prior(args), _sampler(args)
    rows = []
    for model in args.models:
        spec = _spec(model, args)
        draws = _fit(studies, spec, prior, sampler)
        loo = importance_loo(draws.pointwise_loglik, model=spec.label)
        rows.append({
            "model": spec.label, "looic": loo.looic, "se": loo.se_looic, "elpd_loo": loo.elpd_loo,
            "theta0_mean": float(draws.column("theta0").mean()),
            "max_pareto_k": float(np.nanmax(loo.pareto_k)) if np.any(np.isfinite(loo.pareto_k)) else None,
        })
    rows.sort(key=lambda r: r["looic"])
    best = rows[0]["looic"]
    for r in rows:
        r["delta_looic"] = r["looic"] - best
    _write_text(args.out, json.dumps({"config": _resolved(args), "comparison": rows}, indent=2))


def cmd_convert_weights(args) -> None:
    w = np.asarray(args.weights, dtype=float)
    if args.direction == "rho-to-pi":
        pi = rho_to_pi(w, args.theta0, args.tau, args.sigma, args.cutoffs)
        result = {"pi": pi.tolist()}
    else:
        res = pi_to_rho(w, args.theta0, args.tau, args.sigma, args.cutoffs)
        result = {"rho": res.rho.tolist(), "valid": res.valid}
    _write_text("-", json.dumps({"config": _resolved(args), **result}, indent=2))


def cmd_demo(args) -> None:
    spec = SelectionSpec(args.weight, args.H, args.theta_mean, args.theta_sd, args.sigma)
    try:
        x, theta, attempts = q_H_sampler(Rng(args.seed, 0), spec, args.n)
    except PathologicalSelectionError as exc:
        raise NumericalFailure(str(exc), {"H": args.H}) from None
    n = args.n
    summary = {
        "config": _resolved(args),
        "n": n,
        "attempts": attempts,
        "acceptance_rate": n / attempts,
        "x": {"mean": float(x.mean()), "sd": float(x.std(ddof=1)) if n > 1 else 0.0},
        "theta": {"mean": float(theta.mean()), "sd": float(theta.std(ddof=1)) if n > 1 else 0.0,
                  "mc_se": float(theta.std(ddof=1) / np.sqrt(n)) if n > 1 else None},
        "theta_mean_exact": theta_marginal_mean(spec),
    }
    _write_text("-", json.dumps(summary, indent=2))


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"selmeta: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    workers = default_threads()
    if args.threads is not None:
        workers = min(workers, args.threads) if THREADS_ENV in os.environ else args.threads
    try:
        if args.command == "fit":
            cmd_fit(args)
        elif args.command == "simulate":
            cmd_simulate(args)
        elif args.command == "replicate":
            cmd_replicate(args, workers)
        elif args.command == "compare":
            cmd_compare(args)
        elif args.command == "convert-weights":
            cmd_convert_weights(args)
        else:
            cmd_demo(args)
    except (UsageError, ParseError, DomainError, OSError) as exc:
        print(f"selmeta: error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(json.dumps({"error": str(exc), "diagnostics": exc.diagnostics}, indent=2, default=str),
              file=sys.stderr)
        return 3
    except SingularRegionError as exc:
        print(json.dumps({"error": str(exc), "diagnostics": {}}, indent=2), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
