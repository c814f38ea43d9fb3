"""CSV/JSON ingestion, validation, imputation and output writers.

All files are UTF-8, comma-delimited, one header row. Floats are written with ``repr``
so they reload bit-for-bit and output files are byte-stable across runs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (
    DEBRIS, N_OPERATORS, N_SPECIES, OPERATORS, SPECIES_NAMES, InputError, LaunchAllocation,
    OrbitalState, PhysicalParams, operator_index, species_index,
)

logger = logging.getLogger(__name__)

STATE_COLUMNS = ("year", "species", "shell_id", "count")
LAUNCH_COLUMNS = ("year", "operator", "shell_id", "count")
PHYSICAL_COLUMNS = ("species", "shell_id", "decay_rate", "mass_kg", "radius_m")
OPERATOR_COLUMNS = ("operator", "eol_rate", "pmd_rate")
ECON_COLUMNS = ("year", "category", "value")
PRICE_COLUMNS = ("event_id", "year", "operator", "vehicle", "price_musd")
OCCASION_COLUMNS = ("occasion_id", "operator", "year", "chosen_shell", "shell_id",
                    "civil_payloads", "commercial_payloads", "defense_payloads",
                    "other_payloads", "collision_rate", "access_cost")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err


def _rows(path, columns):
    """Yield ``(line_number, dict)`` after checking the header."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file, expected header {','.join(columns)}") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise InputError(f"{path}: header missing columns {missing}")
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            yield lineno, dict(zip(header, (c.strip() for c in raw)))


def _num(row, key, where, allow_negative=False, allow_empty=False):
    text = row[key]
    if text == "" and allow_empty:
        return None
    try:
        val = float(text)
    except ValueError:
        raise InputError(f"{where}: column {key!r} is not a number: {text!r}") from None
    if not math.isfinite(val):
        raise InputError(f"{where}: column {key!r} is not finite")
    if val < 0 and not allow_negative:
        raise InputError(f"{where}: column {key!r} is negative ({val})")
    return val


def _int(row, key, where):
    val = _num(row, key, where)
    if val != int(val):
        raise InputError(f"{where}: column {key!r} must be an integer")
    return int(val)


def _shell(row, where, n_shells):
    j = _int(row, "shell_id", where)
    if j >= n_shells:
        raise InputError(f"{where}: shell_id {j} outside grid of {n_shells} shells")
    return j


# --- orbital states -------------------------------------------------------------------------

def load_state_history(path, n_shells=24) -> dict:
    """All states in an ``orbital_state.csv`` keyed by year."""
    arrays = {}
    seen = set()
    for lineno, row in _rows(path, STATE_COLUMNS):
        where = f"{path}:{lineno}"
        year = _int(row, "year", where)
        s = species_index(row["species"])
        j = _shell(row, where, n_shells)
        key = (year, s, j)
        if key in seen:
            raise InputError(f"{where}: duplicate row for {row['species']} shell {j} in {year}")
        seen.add(key)
        arrays.setdefault(year, np.zeros((N_SPECIES, n_shells)))[s, j] = _num(row, "count", where)
    return {y: OrbitalState.from_stacked(y, a) for y, a in sorted(arrays.items())}


def load_orbital_state(path, year=None, n_shells=24) -> OrbitalState:
    history = load_state_history(path, n_shells)
    if not history:
        return OrbitalState.zeros(0 if year is None else year, n_shells)
    if year is None:
        if len(history) > 1:
            raise InputError(f"{path}: several years present, pass the year to load")
        return next(iter(history.values()))
    if year not in history:
        raise InputError(f"{path}: no state for year {year}")
    return history[year]


def state_rows(state: OrbitalState):
    N = state.stacked()
    for s, name in enumerate(SPECIES_NAMES):
        for j in range(N.shape[1]):
            yield (state.year, name, j, float(N[s, j]))


def write_state_history(states, path):
    write_csv(path, STATE_COLUMNS, (r for st in states for r in state_rows(st)))


# --- launches ------------------------------------------------------------------------------

def load_launch_history(path, n_shells=24) -> dict:
    """Launches per year as ``{year: LaunchAllocation}``."""
    arrays = {}
    for lineno, row in _rows(path, LAUNCH_COLUMNS):
        where = f"{path}:{lineno}"
        year = _int(row, "year", where)
        i = operator_index(row["operator"])
        j = _shell(row, where, n_shells)
        arrays.setdefault(year, np.zeros((N_OPERATORS, n_shells)))[i, j] += _num(row, "count", where)
    return {y: LaunchAllocation(a) for y, a in sorted(arrays.items())}


def write_launch_history(history: dict, path):
    rows = []
    for year, alloc in sorted(history.items()):
        for i, op in enumerate(OPERATORS):
            for j, v in enumerate(alloc.q[i]):
                rows.append((year, op.value, j, float(v)))
    write_csv(path, LAUNCH_COLUMNS, rows)


# --- physical parameters -------------------------------------------------------------------

def load_physical_params(physical_path, operator_path, n_shells=24, **scalars) -> PhysicalParams:
    """Build :class:`PhysicalParams` from the two parameter tables plus scalar overrides.

    Decay rates missing for a (debris species, shell) pair default to 0 with a warning.
    Mass and radius must agree across all rows of a species.
    """
    decay = np.full((len(DEBRIS), n_shells), np.nan)
    mass = [None] * N_SPECIES
    radius = [None] * N_SPECIES
    for lineno, row in _rows(physical_path, PHYSICAL_COLUMNS):
        where = f"{physical_path}:{lineno}"
        s = species_index(row["species"])
        j = _shell(row, where, n_shells)
        rate = _num(row, "decay_rate", where)
        if s < N_OPERATORS:
            if rate != 0:
                raise InputError(f"{where}: active satellites station-keep; decay_rate must be 0")
        else:
            if not np.isnan(decay[s - N_OPERATORS, j]):
                raise InputError(f"{where}: duplicate row for {row['species']} shell {j}")
            decay[s - N_OPERATORS, j] = rate
        for store, key in ((mass, "mass_kg"), (radius, "radius_m")):
            val = _num(row, key, where)
            if store[s] is not None and store[s] != val:
                raise InputError(f"{where}: {key} differs from earlier rows of {row['species']}")
            store[s] = val
    missing = np.isnan(decay)
    if missing.any():
        logger.warning("%d decay rates missing in %s; defaulting to 0", int(missing.sum()), physical_path)
        decay[missing] = 0.0
    for s, name in enumerate(SPECIES_NAMES):
        if mass[s] is None:
            raise InputError(f"{physical_path}: no rows for species {name}")

    eol = [None] * N_OPERATORS
    pmd = [None] * N_OPERATORS
    for lineno, row in _rows(operator_path, OPERATOR_COLUMNS):
        where = f"{operator_path}:{lineno}"
        i = operator_index(row["operator"])
        eol[i] = _num(row, "eol_rate", where)
        pmd[i] = _num(row, "pmd_rate", where)
    if any(v is None for v in eol):
        raise InputError(f"{operator_path}: every operator type needs a row")
    return PhysicalParams(decay_rate=decay, eol_rate=eol, pmd_rate=pmd, mass=mass, radius=radius,
                          **scalars)


def write_physical_params(params: PhysicalParams, physical_path, operator_path):
    rows = []
    for s, name in enumerate(SPECIES_NAMES):
        for j in range(params.n_shells):
            rate = 0.0 if s < N_OPERATORS else float(params.decay_rate[s - N_OPERATORS, j])
            rows.append((name, j, rate, float(params.mass[s]), float(params.radius[s])))
    write_csv(physical_path, PHYSICAL_COLUMNS, rows)
    write_csv(operator_path, OPERATOR_COLUMNS,
              [(op.value, float(params.eol_rate[i]), float(params.pmd_rate[i]))
               for i, op in enumerate(OPERATORS)])


# --- economic series -----------------------------------------------------------------------

@dataclass
class EconSeries:
    """``values[category][year]``; launch prices are stored as ``price_<operator>`` categories."""

    values: dict = field(default_factory=dict)

    def get(self, category, year):
        try:
            return self.values[category][year]
        except KeyError:
            raise InputError(f"economic series has no {category!r} value for {year}") from None

    def years(self, category):
        return sorted(self.values.get(category, {}))

    def last_year(self, category):
        ys = self.years(category)
        if not ys:
            raise InputError(f"economic series has no category {category!r}")
        return ys[-1]

    def with_category(self, category, by_year):
        vals = {k: dict(v) for k, v in self.values.items()}
        vals[category] = dict(by_year)
        return EconSeries(vals)

    def copy(self):
        return EconSeries({k: dict(v) for k, v in self.values.items()})


def price_category(operator) -> str:
    return f"price_{getattr(operator, 'value', operator)}"


def load_econ_series(path) -> EconSeries:
    values = defaultdict(dict)
    for lineno, row in _rows(path, ECON_COLUMNS):
        where = f"{path}:{lineno}"
        year = _int(row, "year", where)
        cat = row["category"]
        val = _num(row, "value", where)
        if val <= 0:
            raise InputError(f"{where}: economic values must be positive")
        if year in values[cat]:
            raise InputError(f"{where}: duplicate {cat} value for {year}")
        values[cat][year] = val
    for cat, series in values.items():
        ys = sorted(series)
        if ys != list(range(ys[0], ys[-1] + 1)):
            raise InputError(f"{path}: years for {cat!r} are not contiguous")
    return EconSeries(dict(values))


def write_econ_series(series: EconSeries, path, categories=None):
    cats = sorted(series.values) if categories is None else categories
    rows = [(y, c, series.values[c][y]) for c in cats for y in sorted(series.values[c])]
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(path, ECON_COLUMNS, rows)


def project_econ(series: EconSeries, from_year, growth_rate, to_year, categories=None) -> EconSeries:
    """Fill every missing year after ``from_year`` up to ``to_year`` by compound growth.

    Each missing year gets the previous year's value times ``1 + growth_rate``; observed
    values are never overwritten, so re-applying with the same rate changes nothing.
    """
    if growth_rate <= -1:
        raise InputError("growth rate must exceed -1")
    out = series.copy()
    cats = list(out.values) if categories is None else list(categories)
    for cat in cats:
        col = out.values.get(cat)
        if col is None or from_year not in col:
            raise InputError(f"anchor year {from_year} missing for {cat!r}")
        for y in range(from_year + 1, to_year + 1):
            if y not in col:
                col[y] = col[y - 1] * (1.0 + growth_rate)
    return out


# --- launch prices -------------------------------------------------------------------------

@dataclass(frozen=True)
class PriceRecord:
    event_id: str
    year: int
    operator: str
    vehicle: str
    price: float | None
    source: str = "observed"

    def __post_init__(self):
        if self.price is not None and not (math.isfinite(self.price) and self.price > 0):
            raise InputError(f"launch {self.event_id}: price must be positive")


def load_launch_prices(path) -> list:
    out = []
    for lineno, row in _rows(path, PRICE_COLUMNS):
        where = f"{path}:{lineno}"
        price = _num(row, "price_musd", where, allow_empty=True)
        if price is not None and price <= 0:
            raise InputError(f"{where}: price must be positive")
        out.append(PriceRecord(row["event_id"], _int(row, "year", where), row["operator"],
                               row["vehicle"], price, "observed" if price is not None else "missing"))
    return out


def write_launch_prices(records, path, with_source=False):
    header = PRICE_COLUMNS + (("imputation_source",) if with_source else ())
    rows = []
    for r in records:
        row = (r.event_id, r.year, r.operator, r.vehicle, "" if r.price is None else r.price)
        rows.append(row + ((r.source,) if with_source else ()))
    write_csv(path, header, rows)


def impute_prices_group_mean(records) -> list:
    """Fill missing prices with the (operator, year) mean of observed prices.

    Falls back to the operator's all-year mean, then the global mean. ``source`` records
    which level filled each row; observed prices pass through untouched.
    """
    observed = [r for r in records if r.price is not None]
    if not observed:
        raise InputError("no observed launch prices to impute from")
    by_group = defaultdict(list)
    by_op = defaultdict(list)
    for r in observed:
        by_group[(r.operator, r.year)].append(r.price)
        by_op[r.operator].append(r.price)
    global_mean = float(np.mean([r.price for r in observed]))
    out = []
    for r in records:
        if r.price is not None:
            out.append(r)
        elif (r.operator, r.year) in by_group:
            out.append(replace(r, price=float(np.mean(by_group[(r.operator, r.year)])), source="group_mean"))
        elif r.operator in by_op:
            out.append(replace(r, price=float(np.mean(by_op[r.operator])), source="operator_mean"))
        else:
            out.append(replace(r, price=global_mean, source="global_mean"))
    return out


def operator_year_prices(records) -> dict:
    """Mean price per operator and year from a completed record list."""
    acc = defaultdict(list)
    for r in records:
        if r.price is None:
            raise InputError(f"launch {r.event_id} has no price; impute first")
        acc[(r.operator, r.year)].append(r.price)
    out = defaultdict(dict)
    for (op, year), vals in sorted(acc.items()):
        out[op][year] = float(np.mean(vals))
    return dict(out)


def add_prices(series: EconSeries, prices: dict) -> EconSeries:
    out = series.copy()
    for op, by_year in prices.items():
        out.values[price_category(op)] = dict(by_year)
    return out


# --- JSON ----------------------------------------------------------------------------------

def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create output directory {path}: {err}") from err
    return path


# --- choice occasions ----------------------------------------------------------------------

def load_choice_occasions(path, n_shells=24) -> dict:
    """Long-format occasions grouped into one :class:`ChoiceSet` per operator group."""
    from .choice import ChoiceSet

    occ = {}
    for lineno, row in _rows(path, OCCASION_COLUMNS):
        where = f"{path}:{lineno}"
        oid = row["occasion_id"]
        j = _shell(row, where, n_shells)
        chosen = _int(row, "chosen_shell", where)
        rec = occ.get(oid)
        if rec is None:
            rec = occ[oid] = dict(operator=row["operator"], year=_int(row, "year", where),
                                  chosen=chosen, X=np.full((n_shells, 5), np.nan),
                                  ac=np.full(n_shells, np.nan))
        elif rec["chosen"] != chosen or rec["operator"] != row["operator"]:
            raise InputError(f"{where}: occasion {oid} has inconsistent operator or chosen shell")
        if not np.isnan(rec["ac"][j]):
            raise InputError(f"{where}: duplicate shell {j} for occasion {oid}")
        rec["X"][j] = [_num(row, c, where) for c in OCCASION_COLUMNS[5:10]]
        ac = _num(row, "access_cost", where)
        if ac <= 0:
            raise InputError(f"{where}: access cost must be positive")
        rec["ac"][j] = ac
    if not occ:
        raise InputError(f"{path}: no choice occasions")
    groups = defaultdict(list)
    for oid, rec in occ.items():
        if np.isnan(rec["ac"]).any():
            raise InputError(f"{path}: occasion {oid} lacks characteristics for some shells")
        if rec["chosen"] >= n_shells:
            raise InputError(f"{path}: occasion {oid} chose a shell outside the choice set")
        groups[rec["operator"]].append(rec)
    return {g: ChoiceSet(np.stack([r["X"] for r in recs]), np.stack([r["ac"] for r in recs]),
                         [r["chosen"] for r in recs], [r["year"] for r in recs], g)
            for g, recs in sorted(groups.items())}


def write_choice_occasions(sets: dict, path):
    def rows():
        k = 0
        for group, cs in sets.items():
            for o in range(cs.n_obs):
                year = "" if cs.years is None else int(cs.years[o])
                for j in range(cs.n_shells):
                    yield (k, group, year, int(cs.chosen[o]), j, *cs.F[o, j].tolist())
                k += 1
    write_csv(path, OCCASION_COLUMNS, rows())


# --- count observations --------------------------------------------------------------------

def load_count_observations(path) -> dict:
    from .count import COVARIATES, CountObservation

    out = defaultdict(list)
    for lineno, row in _rows(path, ("operator", "year", "launches") + COVARIATES):
        where = f"{path}:{lineno}"
        launches = _num(row, "launches", where)
        cov = tuple(_num(row, c, where, allow_negative=True) for c in COVARIATES)
        out[row["operator"]].append(CountObservation(row["operator"], _int(row, "year", where),
                                                     launches, cov))
    return {g: sorted(v, key=lambda o: o.year) for g, v in sorted(out.items())}


def write_count_observations(observations: dict, path):
    from .count import COVARIATES

    rows = [(o.group, o.year, o.launches, *o.covariates)
            for g in sorted(observations) for o in observations[g]]
    write_csv(path, ("operator", "year", "launches") + COVARIATES, rows)


# --- trajectories --------------------------------------------------------------------------

TRAJ_STOCK_COLUMNS = ("year", "species", "shell_id", "count")
TRAJ_CHOICE_COLUMNS = ("year", "operator", "shell_id", "probability", "launches")
TRAJ_PRICE_COLUMNS = ("year", "operator", "shell_id", "price_musd", "access_cost")
TRAJ_COMPLIANCE_COLUMNS = ("year", "operator", "pmd_rate")


def write_trajectory(traj, out_dir):
    """Write stocks, choices, prices, compliance and ``summary.json`` for a trajectory."""
    out = ensure_dir(out_dir)
    write_csv(out / "trajectory_stocks.csv", TRAJ_STOCK_COLUMNS,
              (r for rec in traj.records for r in state_rows(rec.state)))

    def choice_rows():
        for rec in traj.records:
            if rec.launches is None:
                continue
            for i, op in enumerate(OPERATORS):
                probs = rec.probabilities.get(op.value)
                for j in range(rec.launches.q.shape[1]):
                    p = "" if probs is None else float(probs[j])
                    yield (rec.year, op.value, j, p, float(rec.launches.q[i, j]))
    write_csv(out / "trajectory_choice.csv", TRAJ_CHOICE_COLUMNS, choice_rows())

    def price_rows():
        for rec in traj.records:
            for group in sorted(rec.prices or {}):
                for j, p in enumerate(rec.prices[group]):
                    yield (rec.year, group, j, float(p), float(rec.access_cost[group][j]))
    write_csv(out / "trajectory_prices.csv", TRAJ_PRICE_COLUMNS, price_rows())

    def compliance_rows():
        for rec in traj.records:
            if rec.pmd_rate is None:
                continue
            for i, op in enumerate(OPERATORS):
                yield (rec.year, op.value, float(rec.pmd_rate[i]))
    write_csv(out / "trajectory_compliance.csv", TRAJ_COMPLIANCE_COLUMNS, compliance_rows())
    write_json(out / "summary.json", traj.summary())


def read_trajectory(out_dir):
    """Reload a trajectory written by :func:`write_trajectory`."""
    from .scenario import Trajectory, YearRecord

    out = Path(out_dir)
    with open(out / "summary.json", encoding="utf-8") as fh:
        summary = json.load(fh)
    n_shells = summary["n_shells"]
    states = load_state_history(out / "trajectory_stocks.csv", n_shells)
    records = {y: YearRecord(year=y, state=s) for y, s in states.items()}

    q = {}
    probs = defaultdict(dict)
    for lineno, row in _rows(out / "trajectory_choice.csv", TRAJ_CHOICE_COLUMNS):
        where = f"{out}/trajectory_choice.csv:{lineno}"
        y = _int(row, "year", where)
        i = operator_index(row["operator"])
        j = _shell(row, where, n_shells)
        q.setdefault(y, np.zeros((N_OPERATORS, n_shells)))[i, j] = _num(row, "launches", where)
        if row["probability"] != "":
            probs[y].setdefault(row["operator"], np.zeros(n_shells))[j] = _num(row, "probability", where)
    for y, arr in q.items():
        records[y].launches = LaunchAllocation(arr)
        records[y].probabilities = probs.get(y, {})

    for lineno, row in _rows(out / "trajectory_prices.csv", TRAJ_PRICE_COLUMNS):
        where = f"{out}/trajectory_prices.csv:{lineno}"
        rec = records[_int(row, "year", where)]
        j = _shell(row, where, n_shells)
        g = row["operator"]
        rec.prices = rec.prices or {}
        rec.access_cost = rec.access_cost or {}
        rec.prices.setdefault(g, np.zeros(n_shells))[j] = _num(row, "price_musd", where)
        rec.access_cost.setdefault(g, np.zeros(n_shells))[j] = _num(row, "access_cost", where)

    for lineno, row in _rows(out / "trajectory_compliance.csv", TRAJ_COMPLIANCE_COLUMNS):
        where = f"{out}/trajectory_compliance.csv:{lineno}"
        rec = records[_int(row, "year", where)]
        if rec.pmd_rate is None:
            rec.pmd_rate = np.zeros(N_OPERATORS)
        rec.pmd_rate[operator_index(row["operator"])] = _num(row, "pmd_rate", where)

    for y_str, info in summary.get("years", {}).items():
        rec = records.get(int(y_str))
        if rec is None:
            continue
        for key in ("price_index", "totals"):
            if key in info:
                setattr(rec, key, {k: float(v) for k, v in info[key].items()})
        if "collision_rates" in info:
            rec.collision_rates = np.array(info["collision_rates"], dtype=float)
    return Trajectory(records=[records[y] for y in sorted(records)], seed=summary.get("seed"),
                      name=summary.get("name", ""))
