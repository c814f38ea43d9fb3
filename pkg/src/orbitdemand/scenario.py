"""Coupled annual loop: environment -> shell characteristics -> choice -> launch totals -> environment.

Each simulated year ``t`` reads the state dated ``t - 1`` (end of the previous year),
applies price and compliance events, allocates launches, steps the debris model and
finally injects any fragmentation events dated ``t``.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .choice import ShellCharacteristics, choice_probabilities, energy_proxy, utility
from .core import (
    DEFAULT_GRID, MODELED_GROUPS, N_OPERATORS, OPERATORS, DebrisType, InputError, LaunchAllocation,
    OrbitalState, PhysicalParams, ShellGrid, operator_index,
)
from .count import ECON_CATEGORIES, CountObservation, predict_launch_total
from .dataio import EconSeries, price_category, project_econ
from .pib import collision_kernel, step_year, unadjusted_collision_rates

_AMATEUR = operator_index("amateur")
_CONSTELLATION = operator_index("constellation")
_OTHER_ROWS = (_AMATEUR, _CONSTELLATION)


# --- events ------------------------------------------------------------------------------

@dataclass(frozen=True)
class FragmentationEvent:
    """COF fragments added to the state at the end of ``year`` (per-shell counts)."""

    year: int
    additions: tuple


@dataclass(frozen=True)
class CostShock:
    """Persistent price multiplier from ``start_year`` on, for shells lying wholly below ``below_km``."""

    start_year: int
    below_km: float
    multiplier: float
    operators: tuple | None = None


@dataclass(frozen=True)
class CostTrend:
    """Prices follow ``p(after_year) * (1 + rate)**(t - after_year)`` for ``t > after_year``."""

    after_year: int
    rate: float


@dataclass(frozen=True)
class PMDRamp:
    """Linear move of compliance from each operator's baseline at ``start_year`` to ``target`` at ``end_year``."""

    start_year: int
    end_year: int
    target: float
    operators: tuple | None = None

    def compliance(self, base, year):
        if year <= self.start_year:
            return base
        frac = 1.0 if year >= self.end_year else (year - self.start_year) / (self.end_year - self.start_year)
        return base + (self.target - base) * frac


@dataclass(frozen=True)
class EconProjection:
    growth_rate: float
    categories: tuple | None = None


@dataclass(frozen=True)
class OtherSchedule:
    """Launches of the unmodeled "other" operators.

    ``historical`` replays the launch history year by year; ``repeat_last`` repeats the
    pattern of ``window_end`` for later years; ``cycle`` loops over
    ``window_start..window_end`` for later years.
    """

    mode: str = "historical"
    window_start: int | None = None
    window_end: int | None = None

    def source_year(self, year):
        if self.mode == "historical" or self.window_end is None or year <= self.window_end:
            return year
        if self.mode == "repeat_last":
            return self.window_end
        if self.mode == "cycle":
            span = self.window_end - self.window_start + 1
            return self.window_start + (year - self.window_end - 1) % span
        raise InputError(f"unknown other-schedule mode {self.mode!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    start_year: int
    end_year: int
    events: tuple = ()
    name: str = "scenario"
    seed: int = 0
    draw_launches: bool = False

    def __post_init__(self):
        if self.start_year >= self.end_year:
            raise InputError("scenario start year must precede the end year")
        for ev in self.events:
            if isinstance(ev, CostShock) and ev.multiplier <= 0:
                raise InputError("cost shock multiplier must be positive")
            if isinstance(ev, PMDRamp):
                if not 0 <= ev.target <= 1:
                    raise InputError("compliance target must lie in [0, 1]")
                if ev.end_year <= ev.start_year:
                    raise InputError("compliance ramp must end after it starts")
            if isinstance(ev, FragmentationEvent) and min(ev.additions) < 0:
                raise InputError("fragment additions must be non-negative")
            if isinstance(ev, OtherSchedule) and ev.mode not in ("historical", "repeat_last", "cycle"):
                raise InputError(f"unknown other-schedule mode {ev.mode!r}")

    def of_type(self, kind):
        return [ev for ev in self.events if isinstance(ev, kind)]

    @property
    def other_schedule(self) -> OtherSchedule:
        found = self.of_type(OtherSchedule)
        return found[-1] if found else OtherSchedule()


# --- scenario files ----------------------------------------------------------------------

def _key_lines(text):
    lines = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = n
        elif "=" in s and section and not s.startswith(("#", ";")):
            lines[(section, s.split("=", 1)[0].strip().lower())] = n
    return lines


def _floats(text):
    return [float(x) for x in re.split(r"[,\s]+", text.strip()) if x]


def parse_scenario(text, grid: ShellGrid = DEFAULT_GRID, source="<scenario>") -> ScenarioSpec:
    """Parse an INI scenario description.

    ``[run]`` holds ``start``, ``end`` and optional ``name``, ``seed``, ``draw_launches``.
    Each ``[event.N]`` section has a ``kind`` of ``fragmentation``, ``cost_shock``,
    ``cost_trend``, ``pmd_ramp``, ``econ_projection`` or ``other_schedule``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        raise InputError(f"{source}: {err}") from None
    lines = _key_lines(text)

    def fail(section, key, msg):
        n = lines.get((section, key), lines.get((section, None), "?"))
        raise InputError(f"{source}:{n}: [{section}] {key or ''}: {msg}")

    def get(section, key, conv, default=...):
        if not cp.has_option(section, key):
            if default is ...:
                fail(section, None, f"missing required key {key!r}")
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, InputError) as err:
            fail(section, key, f"invalid value {raw!r} ({err})")

    if not cp.has_section("run"):
        raise InputError(f"{source}: missing [run] section")
    boolean = lambda s: s.strip().lower() in ("1", "true", "yes", "on")  # noqa: E731
    ops = lambda s: tuple(x for x in re.split(r"[,\s]+", s.strip()) if x and x != "all") or None  # noqa: E731

    events = []
    for section in cp.sections():
        if not section.startswith("event"):
            if section != "run":
                fail(section, None, "unknown section")
            continue
        kind = get(section, "kind", str.strip)
        if kind == "fragmentation":
            alts = get(section, "altitudes_km", _floats)
            counts = get(section, "counts", _floats)
            if len(alts) != len(counts):
                fail(section, "counts", "needs one count per altitude")
            add = np.zeros(grid.n_shells)
            for a, c in zip(alts, counts):
                try:
                    add[grid.shell_at(a)] += c
                except InputError as err:
                    fail(section, "altitudes_km", str(err))
            events.append(FragmentationEvent(get(section, "year", int), tuple(float(x) for x in add)))
        elif kind == "cost_shock":
            events.append(CostShock(get(section, "start", int), get(section, "below_km", float),
                                    get(section, "multiplier", float),
                                    get(section, "operators", ops, None)))
        elif kind == "cost_trend":
            events.append(CostTrend(get(section, "after", int), get(section, "rate", float)))
        elif kind == "pmd_ramp":
            events.append(PMDRamp(get(section, "start", int), get(section, "end", int),
                                  get(section, "target", float), get(section, "operators", ops, None)))
        elif kind == "econ_projection":
            events.append(EconProjection(get(section, "growth", float),
                                         get(section, "categories", ops, None)))
        elif kind == "other_schedule":
            events.append(OtherSchedule(get(section, "mode", str.strip),
                                        get(section, "window_start", int, None),
                                        get(section, "window_end", int, None)))
        else:
            fail(section, "kind", f"unknown event kind {kind!r}")
    try:
        return ScenarioSpec(start_year=get("run", "start", int), end_year=get("run", "end", int),
                            events=tuple(events), name=get("run", "name", str.strip, "scenario"),
                            seed=get("run", "seed", int, 0),
                            draw_launches=get("run", "draw_launches", boolean, False))
    except InputError as err:
        if str(err).startswith(source):
            raise
        raise InputError(f"{source}: {err}") from None


def load_scenario(path, grid: ShellGrid = DEFAULT_GRID) -> ScenarioSpec:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: scenario file not found")
    return parse_scenario(path.read_text(encoding="utf-8"), grid, source=str(path))


# --- trajectory --------------------------------------------------------------------------

@dataclass
class YearRecord:
    """One simulated year. Decision fields are ``None`` for the initial year."""

    year: int
    state: OrbitalState
    launches: LaunchAllocation | None = None
    probabilities: dict | None = None
    price_index: dict | None = None
    totals: dict | None = None
    collision_rates: np.ndarray | None = None
    prices: dict | None = None
    access_cost: dict | None = None
    pmd_rate: np.ndarray | None = None


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    seed: int | None = None
    name: str = ""

    @property
    def years(self):
        return [r.year for r in self.records]

    @property
    def states(self):
        return [r.state for r in self.records]

    def record(self, year) -> YearRecord:
        for r in self.records:
            if r.year == year:
                return r
        raise KeyError(year)

    def summary(self):
        n = self.records[0].state.n_shells if self.records else 0
        years = {}
        for r in self.records:
            info = {"satellites": float(r.state.S.sum()), "debris": float(r.state.D.sum())}
            if r.totals is not None:
                info["totals"] = {k: float(v) for k, v in sorted(r.totals.items())}
                info["price_index"] = {k: float(v) for k, v in sorted(r.price_index.items())}
                info["launches"] = float(r.launches.q.sum())
            if r.collision_rates is not None:
                info["collision_rates"] = [float(x) for x in r.collision_rates]
            years[str(r.year)] = info
        return {"name": self.name, "seed": self.seed, "n_shells": n,
                "start_year": self.years[0] if self.records else None,
                "end_year": self.years[-1] if self.records else None, "years": years}


# --- the coupled loop --------------------------------------------------------------------

def build_shell_characteristics(state: OrbitalState, prices: dict, params: PhysicalParams,
                                grid: ShellGrid = DEFAULT_GRID, energy_table=None,
                                multipliers=None, rates=None) -> dict:
    """Attributes seen by each modeled group in ``state``.

    ``prices`` maps group name to launch price (million USD); ``multipliers`` optionally
    maps group name to a per-shell price multiplier.
    """
    S = state.S
    X = np.empty((grid.n_shells, 5))
    X[:, 0] = S[operator_index("civil")]
    X[:, 1] = S[operator_index("commercial")]
    X[:, 2] = S[operator_index("defense")]
    X[:, 3] = S[_AMATEUR] + S[_CONSTELLATION]
    X[:, 4] = unadjusted_collision_rates(state, params, grid) if rates is None else rates
    energy = energy_proxy(grid) if energy_table is None else np.asarray(energy_table, dtype=float)
    out = {}
    for g in MODELED_GROUPS:
        if g.value not in prices:
            raise InputError(f"no launch price for operator {g.value}")
        p = prices[g.value]
        if not p > 0:
            raise InputError(f"launch price for {g.value} must be positive")
        mult = np.ones(grid.n_shells) if multipliers is None else multipliers.get(g.value, 1.0)
        out[g.value] = ShellCharacteristics(X, p * energy * mult)
    return out


def _base_price(econ: EconSeries, group, year, trends):
    col = econ.values.get(price_category(group))
    if not col:
        raise InputError(f"no launch prices for operator {group}")

    def observed(y):
        earlier = [k for k in col if k <= y]
        if not earlier:
            raise InputError(f"no launch price for {group} at or before {y}")
        return col[max(earlier)]

    for tr in trends:
        if year > tr.after_year:
            return observed(tr.after_year) * (1.0 + tr.rate) ** (year - tr.after_year)
    return observed(year)


def _multipliers(spec, grid, year):
    out = {}
    for g in MODELED_GROUPS:
        m = np.ones(grid.n_shells)
        for ev in spec.of_type(CostShock):
            if year >= ev.start_year and (ev.operators is None or g.value in ev.operators):
                m[np.asarray(grid.alt_hi) <= ev.below_km] *= ev.multiplier
        out[g.value] = m
    return out


def _compliance(spec, base, year):
    pmd = np.array(base, dtype=float)
    for ev in spec.of_type(PMDRamp):
        for i, op in enumerate(OPERATORS):
            if ev.operators is None or op.value in ev.operators:
                pmd[i] = ev.compliance(base[i], year)
    return pmd


def _econ_covariates(econ, year):
    return [econ.get(c, year) for c in ECON_CATEGORIES]


def prepare_econ(econ: EconSeries, spec: ScenarioSpec) -> EconSeries:
    out = econ
    for ev in spec.of_type(EconProjection):
        cats = ev.categories or ECON_CATEGORIES
        for c in cats:
            out = project_econ(out, out.last_year(c), ev.growth_rate, spec.end_year, [c])
    return out


def run_scenario(initial: OrbitalState, choice_models: dict, count_models: dict, econ: EconSeries,
                 spec: ScenarioSpec, params: PhysicalParams, grid: ShellGrid = DEFAULT_GRID,
                 launch_history: dict | None = None, energy_table=None) -> Trajectory:
    """Simulate ``spec.start_year + 1 .. spec.end_year`` from ``initial`` (dated ``start_year``).

    Modeled groups launch ``N * P`` satellites where ``N`` is the first-stage prediction
    (conditional mean unless ``spec.draw_launches``) and ``P`` the second-stage choice
    probabilities; amateur and constellation launches come from ``launch_history``
    according to the scenario's other-operator schedule.
    """
    if initial.year != spec.start_year:
        raise InputError(f"initial state is dated {initial.year}, scenario starts {spec.start_year}")
    if initial.n_shells != grid.n_shells or params.n_shells != grid.n_shells:
        raise InputError("state, parameters and grid disagree on the number of shells")
    for g in MODELED_GROUPS:
        if g.value not in choice_models or g.value not in count_models:
            raise InputError(f"missing fitted models for {g.value}")
        if choice_models[g.value].asc.size != grid.n_shells:
            raise InputError(f"choice model for {g.value} has {choice_models[g.value].asc.size} shells")
    econ = prepare_econ(econ, spec)
    history = launch_history or {}
    schedule = spec.other_schedule
    trends = spec.of_type(CostTrend)
    frags = spec.of_type(FragmentationEvent)
    rng = np.random.default_rng(spec.seed)
    energy = energy_proxy(grid) if energy_table is None else np.asarray(energy_table, dtype=float)
    kernel = collision_kernel(params, grid)

    state = initial
    records = [YearRecord(year=initial.year, state=initial,
                          pmd_rate=np.array(params.pmd_rate, dtype=float))]
    for year in range(spec.start_year + 1, spec.end_year + 1):
        pmd = _compliance(spec, params.pmd_rate, year)
        year_params = params if np.array_equal(pmd, params.pmd_rate) else params.replace(pmd_rate=pmd)
        prices = {g.value: _base_price(econ, g.value, year, trends) for g in MODELED_GROUPS}
        mult = _multipliers(spec, grid, year)
        rates = unadjusted_collision_rates(state, params, grid, kernel)
        chars = build_shell_characteristics(state, prices, params, grid, energy, mult, rates)
        econ_z = _econ_covariates(econ, year)

        q = np.zeros((N_OPERATORS, grid.n_shells))
        probs, index, totals = {}, {}, {}
        for g in MODELED_GROUPS:
            name = g.value
            P = choice_probabilities(choice_models[name], chars[name])
            idx = float(P @ utility(choice_models[name], chars[name]))
            Z = np.array([1.0, *econ_z, idx, float(rates.mean())])
            N = predict_launch_total(count_models[name], Z, draw=spec.draw_launches, rng=rng)
            q[operator_index(name)] = N * P
            probs[name], index[name], totals[name] = P, idx, float(N)

        src = schedule.source_year(year)
        if src not in history:
            raise InputError(f"no launch history for 'other' operators in {src}")
        for row in _OTHER_ROWS:
            q[row] = history[src].q[row]

        launches = LaunchAllocation(q)
        state, _ = step_year(state, launches, year_params, grid)
        for ev in frags:
            if ev.year == year:
                state = state.with_debris(DebrisType.COF, ev.additions)
        records.append(YearRecord(
            year=year, state=state, launches=launches, probabilities=probs, price_index=index,
            totals=totals, collision_rates=rates,
            prices={k: prices[k] * mult[k] for k in prices},
            access_cost={k: chars[k].access_cost for k in chars}, pmd_rate=pmd))
    return Trajectory(records=records, seed=spec.seed, name=spec.name)


# --- comparison --------------------------------------------------------------------------

@dataclass
class TrajectoryComparison:
    years: list                # decision years
    stock_years: list
    probability: dict          # group -> (T, n) counterfactual minus baseline
    launches: np.ndarray       # (T, 5, n)
    stocks: np.ndarray         # (T_all, 9, n)
    mass_below: dict           # group -> (T,) change in probability mass below the cut
    mass_above: dict
    cut_km: float


def compare_trajectories(baseline: Trajectory, counterfactual: Trajectory, cut_km=600.0,
                         grid: ShellGrid = DEFAULT_GRID) -> TrajectoryComparison:
    if baseline.years != counterfactual.years:
        raise InputError("trajectories cover different years")
    if baseline.records and baseline.records[0].state.n_shells != counterfactual.records[0].state.n_shells:
        raise InputError("trajectories use different shell grids")
    below = np.asarray(grid.alt_hi) <= cut_km
    dec = [(b, c) for b, c in zip(baseline.records, counterfactual.records) if b.launches is not None]
    years = [b.year for b, _ in dec]
    prob, mb, ma = {}, {}, {}
    for g in MODELED_GROUPS:
        d = np.array([c.probabilities[g.value] - b.probabilities[g.value] for b, c in dec])
        d = d.reshape(len(dec), grid.n_shells)
        prob[g.value] = d
        mb[g.value] = d[:, below].sum(axis=1)
        ma[g.value] = d[:, ~below].sum(axis=1)
    launches = np.array([c.launches.q - b.launches.q for b, c in dec]).reshape(len(dec), N_OPERATORS, -1)
    stocks = np.array([c.state.stacked() - b.state.stacked()
                       for b, c in zip(baseline.records, counterfactual.records)])
    return TrajectoryComparison(years, baseline.years, prob, launches, stocks, mb, ma, cut_km)


def write_comparison(comp: TrajectoryComparison, out_dir):
    from .core import SPECIES_NAMES
    from .dataio import ensure_dir, write_csv

    out = ensure_dir(out_dir)

    def rows():
        for t, y in enumerate(comp.years):
            for g in sorted(comp.probability):
                for j, v in enumerate(comp.probability[g][t]):
                    yield (y, "probability", g, j, float(v))
            for i, op in enumerate(OPERATORS):
                for j, v in enumerate(comp.launches[t, i]):
                    yield (y, "launches", op.value, j, float(v))
        for t, y in enumerate(comp.stock_years):
            for s, name in enumerate(SPECIES_NAMES):
                for j, v in enumerate(comp.stocks[t, s]):
                    yield (y, "stock", name, j, float(v))
    write_csv(out / "deltas.csv", ("year", "quantity", "key", "shell_id", "delta"), rows())
    write_csv(out / "deltas_summary.csv",
              ("year", "operator", "cut_km", "mass_below_delta", "mass_above_delta"),
              [(y, g, comp.cut_km, float(comp.mass_below[g][t]), float(comp.mass_above[g][t]))
               for t, y in enumerate(comp.years) for g in sorted(comp.mass_below)])


# --- first-stage data --------------------------------------------------------------------

def build_count_observations(states: dict, launch_history: dict, econ: EconSeries,
                             choice_models: dict, params: PhysicalParams, years,
                             grid: ShellGrid = DEFAULT_GRID, energy_table=None) -> dict:
    """First-stage rows with the price index recomputed from ``choice_models``.

    Year ``t`` uses the state dated ``t - 1`` and the year-``t`` price, mirroring the
    simulation loop, so that fitted coefficients apply unchanged at simulation time.
    """
    out = {g.value: [] for g in MODELED_GROUPS}
    for year in years:
        if year - 1 not in states:
            raise InputError(f"no orbital state for {year - 1}")
        if year not in launch_history:
            raise InputError(f"no launch history for {year}")
        state = states[year - 1]
        rates = unadjusted_collision_rates(state, params, grid)
        prices = {g.value: econ.get(price_category(g.value), year) for g in MODELED_GROUPS}
        chars = build_shell_characteristics(state, prices, params, grid, energy_table, rates=rates)
        econ_z = _econ_covariates(econ, year)
        for g in MODELED_GROUPS:
            m = choice_models[g.value]
            V = utility(m, chars[g.value])
            idx = float(choice_probabilities(m, chars[g.value]) @ V)
            n = float(launch_history[year].q[operator_index(g.value)].sum())
            out[g.value].append(CountObservation(g.value, year, n,
                                                 tuple(econ_z) + (idx, float(rates.mean()))))
    return out
