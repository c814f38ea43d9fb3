"""Deterministic synthetic world standing in for the licensed catalogue and market data.

A known data-generating process is simulated forward from a 2006 orbital state: each
year operators draw a launch total from a Poisson model on the economic series and
place each satellite by a logit draw using the published second-stage coefficients.
The resulting states, launches, choice occasions, count observations, prices and
economic series are written in the package's input formats, together with the true
model parameters and a run configuration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .choice import ChoiceModelParams, ChoiceSet, choice_probabilities, simulate_choices, utility
from .core import (
    DEFAULT_GRID, MODELED_GROUPS, N_OPERATORS, N_SPECIES, DebrisType, LaunchAllocation, OrbitalState,
    PhysicalParams, ShellGrid, operator_index, species_index,
)
from .count import COVARIATES, ECON_CATEGORIES, CountModelParams, CountObservation, poisson_mean
from .dataio import (
    EconSeries, PriceRecord, add_prices, ensure_dir, impute_prices_group_mean, operator_year_prices,
    project_econ, write_choice_occasions, write_count_observations, write_econ_series,
    write_launch_history, write_launch_prices, write_physical_params, write_state_history,
)
from .scenario import build_shell_characteristics
from .pib import step_year, unadjusted_collision_rates

logger = logging.getLogger(__name__)

INITIAL_YEAR = 2006
FIRST_YEAR = 2007
LAST_YEAR = 2020
LAST_ECON_YEAR = 2019
ECON_IMPUTATION_GROWTH = 0.15

# (mean, sd) of the sectoral series, billion USD
ECON_MOMENTS = {
    "insurance_premiums": (0.753, 0.175),
    "commercial_satellite_launch": (2.012, 0.482),
    "commercial_satellite_manufacturing": (4.761, 1.028),
    "direct_to_home_tv": (86.197, 13.522),
    "satellite_communications": (20.874, 3.190),
    "satellite_radio": (4.354, 1.884),
    "earth_observation": (2.483, 0.825),
    "infrastructure": (123.289, 53.251),
    "us_government": (49.658, 8.136),
    "non_us_governments": (31.978, 6.868),
}
# (mean, sd, trend direction) of launch prices, million USD
PRICE_MOMENTS = {"commercial": (31.754, 18.782, -1.0), "civil": (16.015, 3.811, 1.0),
                 "defense": (17.079, 3.059, 0.0)}
EVENTS_PER_YEAR = 77
OBSERVED_PRICE_SHARE = 0.11
VEHICLES = {"commercial": ("Falcon 9", "Proton-M", "Ariane 5", "Soyuz-2"),
            "civil": ("PSLV", "Long March 2D", "H-IIA", "Soyuz-2"),
            "defense": ("Atlas V", "Delta IV", "Long March 4B", "Soyuz-2")}

EOL_RATE = (0.125, 0.35, 0.25, 0.4, 0.2)
PMD_RATE = (0.6, 0.5, 0.4, 0.3, 0.9)
RB_PER_LAUNCH = 0.15
MRO_PER_LAUNCH = 0.1
# residence time tau_j = a * r**j years in shell j, scaled per debris species (RB, MRO, IP, COF)
RESIDENCE_BASE = 0.0757
RESIDENCE_GROWTH = 1.8
RESIDENCE_FACTOR = (1.2, 0.3, 1.0, 0.5)

# Historical breakups, COF added at the end of the year (altitude km -> fragments)
HISTORICAL_BREAKUPS = {2007: {825.0: 1400.0, 875.0: 700.0}, 2009: {775.0: 650.0}}

# Target launch rates and coefficients on the standardized economic covariates
TRUE_LAUNCH_RATE = {"commercial": 41.0, "civil": 84.0, "defense": 33.0}
TRUE_ECON_EFFECTS = {
    "commercial": (-0.04, 0.0, 0.03, 0.0, 0.0, 0.0, 0.0, 0.02, 0.0, 0.0),
    "civil": (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.02, 0.02),
    "defense": (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.03, 0.0),
}

# Shell preferences as Gaussian bumps (centre km, width km, height) over a floor
ASC_BUMPS = {
    "commercial": ((550.0, 60.0, 3.0), (775.0, 40.0, 2.0), (1250.0, 60.0, 1.0)),
    "civil": ((525.0, 60.0, 2.5), (675.0, 80.0, 2.5), (1000.0, 100.0, 0.5)),
    "defense": ((450.0, 50.0, 2.0), (625.0, 70.0, 1.5), (1125.0, 60.0, 1.5)),
}
ASC_FLOOR = -2.0

# Initial (2006) stocks: total and Gaussian-mixture profile over altitude
INITIAL_STOCKS = {
    "commercial": (165.0, ((775.0, 30.0, 0.55), (600.0, 80.0, 0.25), (1250.0, 40.0, 0.2))),
    "civil": (121.0, ((650.0, 120.0, 0.6), (850.0, 80.0, 0.4))),
    "defense": (81.0, ((600.0, 120.0, 0.5), (1100.0, 60.0, 0.5))),
    "amateur": (10.0, ((650.0, 100.0, 1.0),)),
    "constellation": (4.0, ((550.0, 30.0, 1.0),)),
    "RB": (780.0, ((850.0, 150.0, 0.7), (1250.0, 80.0, 0.3))),
    "MRO": (570.0, ((800.0, 150.0, 1.0),)),
    "IP": (1370.0, ((800.0, 150.0, 0.7), (1100.0, 100.0, 0.3))),
    "COF": (5800.0, ((850.0, 130.0, 0.8), (1000.0, 200.0, 0.2))),
}


def _bumps(grid: ShellGrid, bumps):
    x = grid.midpoints
    return sum(h * np.exp(-0.5 * ((x - c) / w) ** 2) for c, w, h in bumps)


def residence_times(grid: ShellGrid = DEFAULT_GRID) -> np.ndarray:
    """(4, n) years spent in each shell before decaying into the one below."""
    base = RESIDENCE_BASE * RESIDENCE_GROWTH ** np.arange(grid.n_shells)
    return np.array(RESIDENCE_FACTOR)[:, None] * base[None, :]


def default_physical_params(grid: ShellGrid = DEFAULT_GRID) -> PhysicalParams:
    decay = np.minimum(1.0, 1.0 / residence_times(grid))
    n = grid.n_shells
    return PhysicalParams(decay_rate=decay, eol_rate=EOL_RATE, pmd_rate=PMD_RATE,
                          rb_per_launch=np.full((N_OPERATORS, n), RB_PER_LAUNCH),
                          mro_per_launch=np.full((N_OPERATORS, n), MRO_PER_LAUNCH))


def true_choice_models(grid: ShellGrid = DEFAULT_GRID) -> dict:
    """Published slope coefficients with designed shell constants."""
    out = {}
    for g in MODELED_GROUPS:
        asc = ASC_FLOOR + _bumps(grid, ASC_BUMPS[g.value])
        ref = int(np.argmax(asc))
        out[g.value] = ChoiceModelParams.published(g.value, asc - asc[ref], reference_shell=ref)
    return out


def true_count_models() -> dict:
    means = np.array([ECON_MOMENTS[c][0] for c in ECON_CATEGORIES] + [0.0, 0.0])
    scales = np.array([ECON_MOMENTS[c][1] for c in ECON_CATEGORIES] + [1.0, 1.0])
    out = {}
    for g in MODELED_GROUPS:
        omega = np.concatenate([[np.log(TRUE_LAUNCH_RATE[g.value])], TRUE_ECON_EFFECTS[g.value], [0.0, 0.0]])
        out[g.value] = CountModelParams(omega=omega, means=means, scales=scales, operator=g.value)
    return out


def initial_state(grid: ShellGrid = DEFAULT_GRID, year=INITIAL_YEAR) -> OrbitalState:
    N = np.zeros((N_SPECIES, grid.n_shells))
    for name, (total, mix) in INITIAL_STOCKS.items():
        prof = _bumps(grid, mix)
        N[species_index(name)] = np.round(total * prof / prof.sum())
    return OrbitalState.from_stacked(year, N)


def other_launches(year, grid: ShellGrid = DEFAULT_GRID) -> np.ndarray:
    """(2, n) amateur and constellation launches in ``year``."""
    out = np.zeros((2, grid.n_shells))
    amateur = round(5 + 55 * ((year - FIRST_YEAR) / (LAST_YEAR - FIRST_YEAR)) ** 2)
    prof = _bumps(grid, ((500.0, 60.0, 1.0), (650.0, 60.0, 0.5)))
    out[0] = np.round(amateur * prof / prof.sum())
    const = {2018: 20, 2019: 60, 2020: 120}.get(year, 0)
    out[1, grid.shell_at(575.0)] = const
    return out


def _trend_series(rng, mean, sd, direction, n):
    z = direction * np.linspace(-1.6, 1.6, n) + 0.5 * rng.standard_normal(n)
    z = (z - z.mean()) / z.std()
    return np.maximum(mean + sd * z, 0.35 * mean)


def econ_history(rng) -> EconSeries:
    """Sectoral series through the last observed year, imputed one year ahead."""
    years = range(FIRST_YEAR, LAST_ECON_YEAR + 1)
    values = {}
    for cat in ECON_CATEGORIES:
        mean, sd = ECON_MOMENTS[cat]
        vals = _trend_series(rng, mean, sd, 1.0, len(years))
        values[cat] = {y: float(v) for y, v in zip(years, vals)}
    return project_econ(EconSeries(values), LAST_ECON_YEAR, ECON_IMPUTATION_GROWTH, LAST_YEAR)


def launch_price_records(rng) -> list:
    years = list(range(FIRST_YEAR, LAST_YEAR + 1))
    records = []
    k = 0
    for g in MODELED_GROUPS:
        mean, sd, direction = PRICE_MOMENTS[g.value]
        path = _trend_series(rng, mean, sd, direction, len(years))
        for y, p in zip(years, path):
            for _ in range(EVENTS_PER_YEAR):
                k += 1
                price = None
                if rng.random() < OBSERVED_PRICE_SHARE:
                    price = round(float(p * rng.lognormal(0.0, 0.2)), 3)
                vehicle = VEHICLES[g.value][rng.integers(len(VEHICLES[g.value]))]
                records.append(PriceRecord(f"L{k:05d}", y, g.value, vehicle, price))
    return records


@dataclass
class SyntheticWorld:
    states: dict
    launches: dict
    occasions: dict
    count_observations: dict
    econ: EconSeries
    price_records: list
    params: PhysicalParams
    choice_models: dict
    count_models: dict
    grid: ShellGrid


def simulate_world(seed=0, grid: ShellGrid = DEFAULT_GRID) -> SyntheticWorld:
    rng = np.random.default_rng(seed)
    params = default_physical_params(grid)
    choice = true_choice_models(grid)
    count = true_count_models()
    records = launch_price_records(rng)
    econ = add_prices(econ_history(rng), operator_year_prices(impute_prices_group_mean(records)))

    state = initial_state(grid)
    states = {state.year: state}
    launches = {}
    occ = {g.value: dict(X=[], ac=[], chosen=[], years=[]) for g in MODELED_GROUPS}
    count_obs = {g.value: [] for g in MODELED_GROUPS}
    for year in range(FIRST_YEAR, LAST_YEAR + 1):
        rates = unadjusted_collision_rates(state, params, grid)
        prices = {g.value: econ.get(f"price_{g.value}", year) for g in MODELED_GROUPS}
        chars = build_shell_characteristics(state, prices, params, grid, rates=rates)
        econ_z = [econ.get(c, year) for c in ECON_CATEGORIES]
        q = np.zeros((N_OPERATORS, grid.n_shells))
        for g in MODELED_GROUPS:
            m, c = choice[g.value], chars[g.value]
            idx = float(choice_probabilities(m, c) @ utility(m, c))
            covs = tuple(econ_z) + (idx, float(rates.mean()))
            n = int(rng.poisson(poisson_mean(count[g.value], np.array((1.0,) + covs))))
            X = np.repeat(c.X[None], n, axis=0)
            ac = np.repeat(c.access_cost[None], n, axis=0)
            chosen = simulate_choices(m, X, ac, rng)
            q[operator_index(g.value)] = np.bincount(chosen, minlength=grid.n_shells)
            o = occ[g.value]
            o["X"].append(X)
            o["ac"].append(ac)
            o["chosen"].append(chosen)
            o["years"].append(np.full(n, year))
            count_obs[g.value].append(CountObservation(g.value, year, float(n), covs))
        q[[operator_index("amateur"), operator_index("constellation")]] = other_launches(year, grid)
        launches[year] = LaunchAllocation(q)
        state, _ = step_year(state, launches[year], params, grid)
        for alt, frags in HISTORICAL_BREAKUPS.get(year, {}).items():
            add = np.zeros(grid.n_shells)
            add[grid.shell_at(alt)] = frags
            state = state.with_debris(DebrisType.COF, add)
        states[year] = state

    occasions = {g: ChoiceSet(np.concatenate(o["X"]), np.concatenate(o["ac"]),
                              np.concatenate(o["chosen"]), np.concatenate(o["years"]), group=g)
                 for g, o in occ.items()}
    return SyntheticWorld(states, launches, occasions, count_obs, econ, records, params,
                          choice, count, grid)


CONFIG_TEMPLATE = """\
[data]
orbital_state = orbital_state.csv
launches = launches.csv
econ_series = econ_series.csv
launch_prices = launch_prices.csv
choice_occasions = choice_occasions.csv
count_observations = count_observations.csv
params_physical = params_physical.csv
params_operator = params_operator.csv

[physics]
rb_per_launch = {rb}
mro_per_launch = {mro}

[estimation]
asc_penalty = 0.0001
k_folds = 5

[models]
dir = models

[run]
seed = {seed}
from = 2012
to = 2020
out = out
"""


def bundled_scenarios() -> dict:
    """Name -> text of the scenario files shipped with the package."""
    root = resources.files("orbitdemand") / "data" / "scenarios"
    return {p.name: p.read_text(encoding="utf-8") for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".ini")}


def generate_synthetic(out_dir, seed=0, grid: ShellGrid = DEFAULT_GRID) -> Path:
    """Write the synthetic dataset, true models, scenarios and ``config.ini`` into ``out_dir``."""
    out = ensure_dir(out_dir)
    world = simulate_world(seed, grid)
    write_state_history(world.states.values(), out / "orbital_state.csv")
    write_launch_history(world.launches, out / "launches.csv")
    write_econ_series(world.econ, out / "econ_series.csv", categories=list(ECON_CATEGORIES))
    write_launch_prices(world.price_records, out / "launch_prices.csv")
    write_choice_occasions(world.occasions, out / "choice_occasions.csv")
    write_count_observations(world.count_observations, out / "count_observations.csv")
    write_physical_params(world.params, out / "params_physical.csv", out / "params_operator.csv")
    truth = ensure_dir(out / "truth")
    for g in MODELED_GROUPS:
        world.choice_models[g.value].save(truth / f"choice_{g.value}.json")
        world.count_models[g.value].save(truth / f"count_{g.value}.json")
    scen = ensure_dir(out / "scenarios")
    for name, text in bundled_scenarios().items():
        (scen / name).write_text(text, encoding="utf-8")
    config = out / "config.ini"
    config.write_text(CONFIG_TEMPLATE.format(rb=RB_PER_LAUNCH, mro=MRO_PER_LAUNCH, seed=seed),
                      encoding="utf-8")
    logger.info("synthetic dataset written to %s", out)
    return config


__all__ = ["simulate_world", "generate_synthetic", "default_physical_params", "true_choice_models",
           "true_count_models", "initial_state", "SyntheticWorld", "COVARIATES"]
