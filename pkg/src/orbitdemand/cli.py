"""Command-line entry point: ``orbitdemand <command> --config run.ini [overrides]``.

Exit codes are 0 on success, 1 on a runtime failure and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .choice import ChoiceModelParams, fit_choice_model
from .core import DEFAULT_GRID, MODELED_GROUPS, N_OPERATORS, SPECIES_NAMES, InputError
from .count import COVARIATES, CountModelParams, fit_count_model
from .dataio import (
    add_prices, ensure_dir, impute_prices_group_mean, load_choice_occasions, load_count_observations,
    load_econ_series, load_launch_history, load_launch_prices, load_physical_params,
    load_state_history, operator_year_prices, write_count_observations, write_csv, write_json,
    write_trajectory,
)
from .scenario import (
    EconProjection, OtherSchedule, ScenarioSpec, build_count_observations, compare_trajectories,
    load_scenario, run_scenario, write_comparison,
)

logger = logging.getLogger("orbitdemand")

DATA_KEYS = ("orbital_state", "launches", "econ_series", "launch_prices", "choice_occasions",
             "count_observations", "params_physical", "params_operator")
FLOAT_PHYSICS = ("v_rel", "debris_debris_adjust", "catastrophic_threshold", "frag_min_size")
INT_PHYSICS = ("pmd_target_shell", "n_substeps")
PER_LAUNCH_PHYSICS = ("rb_per_launch", "mro_per_launch", "mro_per_sat")


@dataclass
class RunConfig:
    base: Path
    data: dict = field(default_factory=dict)
    physics: dict = field(default_factory=dict)
    estimation: dict = field(default_factory=dict)
    models_dir: Path | None = None
    seed: int = 0
    out: Path = Path("out")
    start: int | None = None
    end: int | None = None
    scenario: Path | None = None
    baseline: Path | None = None
    econ_growth: float = 0.15

    def path(self, key) -> Path:
        p = self.data.get(key)
        if p is None:
            raise InputError(f"configuration lacks [data] {key}")
        if not p.exists():
            raise InputError(f"input file not found: {p}")
        return p


def _check_seed(seed):
    if not 0 <= seed < 2**64:
        raise InputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise InputError(f"configuration file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as err:
        raise InputError(f"{path}: {err}") from None
    base = path.parent
    cfg = RunConfig(base=base, models_dir=base / "models", out=base / "out")
    try:
        if cp.has_section("data"):
            for key, val in cp.items("data"):
                if key not in DATA_KEYS:
                    raise InputError(f"unknown [data] key {key!r}")
                cfg.data[key] = base / val
        if cp.has_section("physics"):
            for key, val in cp.items("physics"):
                if key in FLOAT_PHYSICS or key in PER_LAUNCH_PHYSICS:
                    cfg.physics[key] = float(val)
                elif key in INT_PHYSICS:
                    cfg.physics[key] = int(val)
                elif key == "sat_avoidance":
                    cfg.physics[key] = cp.getboolean("physics", key)
                else:
                    raise InputError(f"unknown [physics] key {key!r}")
        if cp.has_section("estimation"):
            conv = dict(asc_penalty=float, grad_tol=float, max_iter=int, k_folds=int,
                        fold_mode=str, lambda_min=float, lambda_max=float, lambda_n=int,
                        rebuild_price_index=lambda s: s.strip().lower() in ("1", "true", "yes", "on"))
            for key, val in cp.items("estimation"):
                if key not in conv:
                    raise InputError(f"unknown [estimation] key {key!r}")
                cfg.estimation[key] = conv[key](val)
        if cp.has_option("models", "dir"):
            cfg.models_dir = base / cp.get("models", "dir")
        if cp.has_section("run"):
            run = cp["run"]
            cfg.seed = _check_seed(int(run.get("seed", "0")))
            if "out" in run:
                cfg.out = base / run["out"]
            cfg.start = int(run["from"]) if "from" in run else None
            cfg.end = int(run["to"]) if "to" in run else None
            cfg.scenario = base / run["scenario"] if "scenario" in run else None
            cfg.baseline = base / run["baseline"] if "baseline" in run else None
            cfg.econ_growth = float(run.get("econ_growth", "0.15"))
    except ValueError as err:
        if isinstance(err, InputError):
            raise InputError(f"{path}: {err}") from None
        raise InputError(f"{path}: invalid value ({err})") from None
    return cfg


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = _check_seed(args.seed)
    if getattr(args, "out", None):
        cfg.out = Path(args.out)
    if getattr(args, "start", None) is not None:
        cfg.start = args.start
    if getattr(args, "end", None) is not None:
        cfg.end = args.end
    if getattr(args, "spec", None):
        cfg.scenario = Path(args.spec)
    if getattr(args, "baseline", None):
        cfg.baseline = Path(args.baseline)
    return cfg


# --- loaders -----------------------------------------------------------------------------

def load_params(cfg: RunConfig, grid=DEFAULT_GRID):
    scalars = {k: v for k, v in cfg.physics.items() if k not in PER_LAUNCH_PHYSICS}
    for k in PER_LAUNCH_PHYSICS:
        if k in cfg.physics:
            scalars[k] = np.full((N_OPERATORS, grid.n_shells), cfg.physics[k])
    return load_physical_params(cfg.path("params_physical"), cfg.path("params_operator"),
                                grid.n_shells, **scalars)


def load_econ(cfg: RunConfig):
    econ = load_econ_series(cfg.path("econ_series"))
    if "launch_prices" in cfg.data:
        records = impute_prices_group_mean(load_launch_prices(cfg.path("launch_prices")))
        econ = add_prices(econ, operator_year_prices(records))
    return econ


def _selected(operator):
    if operator in (None, "all"):
        return [g.value for g in MODELED_GROUPS]
    return [operator]


def load_models(cfg: RunConfig):
    choice, count = {}, {}
    for g in _selected("all"):
        cp = cfg.models_dir / f"choice_{g}.json"
        np_ = cfg.models_dir / f"count_{g}.json"
        for p, cmd in ((cp, "estimate-choice"), (np_, "estimate-count")):
            if not p.exists():
                raise InputError(f"fitted model {p} not found; run {cmd} first")
        choice[g] = ChoiceModelParams.load(cp)
        count[g] = CountModelParams.load(np_)
    return choice, count


# --- reports -----------------------------------------------------------------------------

CHOICE_REPORT_ROWS = (("Civil payloads", 0), ("Commercial payloads", 1), ("Defense payloads", 2),
                      ("Other payloads", 3), ("Access cost", None), ("Total PIB collision rate", 4))


def choice_report(models: dict) -> str:
    ops = list(models)
    lines = [f"{'':28s}" + "".join(f"{op:>14s}" for op in ops)]
    for label, k in CHOICE_REPORT_ROWS:
        vals = [models[op].gamma if k is None else models[op].beta[k] for op in ops]
        lines.append(f"{label:28s}" + "".join(f"{v:14.4f}" for v in vals))
    lines.append(f"{'Observations':28s}" + "".join(f"{models[op].n_obs:14d}" for op in ops))
    lines.append(f"{'Log likelihood':28s}" + "".join(f"{models[op].log_likelihood:14.1f}" for op in ops))
    return "\n".join(lines)


def count_report(models: dict) -> str:
    ops = list(models)
    lines = [f"{'':36s}" + "".join(f"{op:>14s}" for op in ops)]
    for k, name in enumerate(("intercept",) + COVARIATES):
        lines.append(f"{name:36s}" + "".join(f"{models[op].omega[k]:14.4f}" for op in ops))
    lines.append(f"{'lambda':36s}" + "".join(f"{models[op].lam:14.4g}" for op in ops))
    return "\n".join(lines)


# --- commands ----------------------------------------------------------------------------

def cmd_estimate_choice(cfg: RunConfig, operator="all") -> dict:
    sets = load_choice_occasions(cfg.path("choice_occasions"), DEFAULT_GRID.n_shells)
    est = cfg.estimation
    models = {}
    for op in _selected(operator):
        if op not in sets:
            raise InputError(f"no choice occasions for operator {op}")
        try:
            models[op] = fit_choice_model(sets[op], max_iter=est.get("max_iter", 500),
                                          grad_tol=est.get("grad_tol", 1e-6),
                                          asc_penalty=est.get("asc_penalty", 1e-4), operator=op)
        except (RuntimeError, ValueError) as err:
            raise type(err)(f"{op}: {err}") from err
    out = ensure_dir(cfg.models_dir)
    for op, m in models.items():
        m.save(out / f"choice_{op}.json")
    report = choice_report(models)
    (out / "choice_report.txt").write_text(report + "\n", encoding="utf-8")
    print(report)
    return models


def _lambda_grid(est):
    return np.logspace(np.log10(est.get("lambda_min", 1e-4)), np.log10(est.get("lambda_max", 1e4)),
                       est.get("lambda_n", 50))


def count_observations_for(cfg: RunConfig, params=None):
    """Observations from file, with the price index recomputed from fitted choice models if present."""
    obs = load_count_observations(cfg.path("count_observations"))
    paths = [cfg.models_dir / f"choice_{g}.json" for g in _selected("all")]
    if not cfg.estimation.get("rebuild_price_index", True) or not all(p.exists() for p in paths):
        return obs
    choice = {g: ChoiceModelParams.load(p) for g, p in zip(_selected("all"), paths)}
    years = sorted({o.year for v in obs.values() for o in v})
    states = load_state_history(cfg.path("orbital_state"), DEFAULT_GRID.n_shells)
    launches = load_launch_history(cfg.path("launches"), DEFAULT_GRID.n_shells)
    params = params or load_params(cfg)
    return build_count_observations(states, launches, load_econ(cfg), choice, params, years)


def cmd_estimate_count(cfg: RunConfig, operator="all") -> dict:
    obs = count_observations_for(cfg)
    est = cfg.estimation
    models = {}
    for op in _selected(operator):
        if not obs.get(op):
            raise InputError(f"no count observations for operator {op}")
        try:
            models[op] = fit_count_model(obs[op], _lambda_grid(est), k_folds=est.get("k_folds", 5),
                                         max_iter=est.get("max_iter", 500),
                                         grad_tol=est.get("grad_tol", 1e-8),
                                         fold_mode=est.get("fold_mode", "contiguous"),
                                         seed=cfg.seed, operator=op)
        except (RuntimeError, ValueError, OverflowError) as err:
            raise type(err)(f"{op}: {err}") from err
    out = ensure_dir(cfg.models_dir)
    write_count_observations(obs, out / "count_observations_used.csv")
    for op, m in models.items():
        m.save(out / f"count_{op}.json")
    report = count_report(models)
    (out / "count_report.txt").write_text(report + "\n", encoding="utf-8")
    print(report)
    return models


def _run(cfg: RunConfig, spec: ScenarioSpec, context=None):
    context = context or _context(cfg)
    states = context["states"]
    if spec.start_year not in states:
        raise InputError(f"no observed orbital state for {spec.start_year}")
    return run_scenario(states[spec.start_year], context["choice"], context["count"], context["econ"],
                        spec, context["params"], DEFAULT_GRID, context["launches"])


def _context(cfg: RunConfig):
    choice, count = load_models(cfg)
    return dict(states=load_state_history(cfg.path("orbital_state"), DEFAULT_GRID.n_shells),
                launches=load_launch_history(cfg.path("launches"), DEFAULT_GRID.n_shells),
                econ=load_econ(cfg), params=load_params(cfg), choice=choice, count=count)


def _require_years(cfg):
    if cfg.start is None or cfg.end is None:
        raise InputError("both --from and --to (or [run] from/to) are required")
    return cfg.start, cfg.end


def cmd_simulate(cfg: RunConfig):
    start, end = _require_years(cfg)
    context = _context(cfg)
    last = max(context["launches"])
    spec = ScenarioSpec(start, end, events=(EconProjection(cfg.econ_growth),
                                            OtherSchedule("repeat_last", last, last)),
                        name="simulate", seed=cfg.seed)
    traj = _run(cfg, spec, context)
    write_trajectory(traj, cfg.out)
    return traj


def _with_seed(spec: ScenarioSpec, seed):
    from dataclasses import replace
    return replace(spec, seed=seed)


def cmd_scenario(cfg: RunConfig, seed_override=False):
    if cfg.scenario is None:
        raise InputError("no scenario given; use --spec")
    spec = load_scenario(cfg.scenario)
    if seed_override:
        spec = _with_seed(spec, cfg.seed)
    context = _context(cfg)
    traj = _run(cfg, spec, context)
    out = ensure_dir(cfg.out)
    write_trajectory(traj, out / "counterfactual")
    result = {"counterfactual": traj}
    if cfg.baseline is not None:
        base_spec = load_scenario(cfg.baseline)
        if seed_override:
            base_spec = _with_seed(base_spec, cfg.seed)
        base = _run(cfg, base_spec, context)
        write_trajectory(base, out / "baseline")
        comp = compare_trajectories(base, traj)
        write_comparison(comp, out / "comparison")
        result.update(baseline=base, comparison=comp)
    return result


VALIDATION_SERIES = ("launches_commercial", "launches_civil", "launches_defense",
                     "satellites", "debris")


def validation_tables(observed_states: dict, observed_launches: dict, projected_states: dict,
                      projected_launches: dict, years):
    """Projected-vs-observed rows for aggregate series, per-shell stocks and direction agreement."""
    years = list(years)

    def series(states, launches, name, y):
        if name == "satellites":
            return float(states[y].S.sum())
        if name == "debris":
            return float(states[y].D.sum())
        if y not in launches:
            return None
        from .core import operator_index
        return float(launches[y].q[operator_index(name.split("_", 1)[1])].sum())

    agg, shells, direction = [], [], []
    for name in VALIDATION_SERIES:
        pairs = []
        for y in years:
            o = series(observed_states, observed_launches, name, y)
            p = series(projected_states, projected_launches, name, y)
            if o is None or p is None:
                continue
            pairs.append((y, o, p))
            agg.append((y, name, o, p, p - o))
        if len(pairs) >= 2:
            do = pairs[-1][1] - pairs[0][1]
            dp = pairs[-1][2] - pairs[0][2]
            direction.append((name, pairs[0][0], pairs[-1][0], do, dp, bool(np.sign(do) == np.sign(dp))))
    for y in years:
        o = observed_states[y].stacked()
        p = projected_states[y].stacked()
        for s, name in enumerate(SPECIES_NAMES):
            for j in range(o.shape[1]):
                shells.append((y, name, j, float(o[s, j]), float(p[s, j]), float(p[s, j] - o[s, j])))
    return agg, shells, direction


def cmd_validate(cfg: RunConfig):
    start = cfg.start if cfg.start is not None else 2012
    end = cfg.end if cfg.end is not None else 2020
    context = _context(cfg)
    spec = ScenarioSpec(start, end, events=(OtherSchedule("historical"),), name="validation",
                        seed=cfg.seed)
    traj = _run(cfg, spec, context)
    obs_states = context["states"]
    missing = [y for y in range(start, end + 1) if y not in obs_states]
    if missing:
        raise InputError(f"no observed orbital state for {missing}")
    proj_states = {r.year: r.state for r in traj.records}
    proj_launches = {r.year: r.launches for r in traj.records if r.launches is not None}
    agg, shells, direction = validation_tables(obs_states, context["launches"], proj_states,
                                               proj_launches, traj.years)
    out = ensure_dir(cfg.out)
    write_trajectory(traj, out / "trajectory")
    write_csv(out / "validation.csv", ("year", "series", "observed", "projected", "error"), agg)
    write_csv(out / "validation_shells.csv",
              ("year", "species", "shell_id", "observed", "projected", "error"), shells)
    write_csv(out / "validation_direction.csv",
              ("series", "from_year", "to_year", "observed_change", "projected_change",
               "direction_agrees"), direction)
    metrics = {name: {"mean_abs_error": float(np.mean([abs(r[4]) for r in agg if r[1] == name]))}
               for name in VALIDATION_SERIES if any(r[1] == name for r in agg)}
    for row in direction:
        metrics[row[0]]["direction_agrees"] = row[5]
    write_json(out / "validation_summary.json", {"seed": cfg.seed, "from": start, "to": end,
                                                 "series": metrics})
    for name, m in metrics.items():
        print(f"{name:22s} MAE={m['mean_abs_error']:12.3f}  direction "
              f"{'agrees' if m.get('direction_agrees') else 'differs'}")
    return traj


def cmd_gen_synthetic(out, seed):
    from .synthetic import generate_synthetic
    config = generate_synthetic(out, seed)
    print(f"synthetic dataset written; configuration at {config}")
    return config


# --- entry point -------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="orbitdemand",
        description="Estimate orbit-choice and launch-demand models and run debris scenarios.",
        epilog="Exit status: 0 on success, 1 on a runtime failure, 2 on invalid input.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="run configuration (INI)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="seed for random draws (unsigned 64-bit)")

    helps = {"estimate-choice": "fit the shell-choice logit model per operator group",
             "estimate-count": "fit the Poisson ridge model of annual launch totals"}
    for name in ("estimate-choice", "estimate-count"):
        sp = sub.add_parser(name, help=helps[name])
        common(sp)
        sp.add_argument("--operator", choices=("commercial", "civil", "defense", "all"), default="all")
    helps = {"simulate": "project the coupled model forward from an observed state",
             "validate": "replay observed years and compare projections with observations"}
    for name in ("simulate", "validate"):
        sp = sub.add_parser(name, help=helps[name])
        common(sp)
        sp.add_argument("--from", dest="start", type=int, help="first (state) year")
        sp.add_argument("--to", dest="end", type=int, help="last simulated year")
    sp = sub.add_parser("scenario", help="run a scenario file, optionally against a baseline")
    common(sp)
    sp.add_argument("--spec", help="counterfactual scenario file")
    sp.add_argument("--baseline", help="baseline scenario file")
    sp = sub.add_parser("gen-synthetic", help="write a synthetic dataset and matching config.ini")
    common(sp, config_required=False)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-synthetic":
            seed = _check_seed(args.seed if args.seed is not None else 0)
            cmd_gen_synthetic(args.out or "synthetic", seed)
            return 0
        cfg = apply_overrides(load_config(args.config), args)
        if args.command == "estimate-choice":
            cmd_estimate_choice(cfg, args.operator)
        elif args.command == "estimate-count":
            cmd_estimate_count(cfg, args.operator)
        elif args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "validate":
            cmd_validate(cfg)
        elif args.command == "scenario":
            cmd_scenario(cfg, seed_override=args.seed is not None)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001
        logger.debug("command failed", exc_info=True)
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    return 0
