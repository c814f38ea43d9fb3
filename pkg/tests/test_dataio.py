import json

import numpy as np
import pytest

from conftest import run_truth, scenario_spec
from orbitdemand.core import InputError, LaunchAllocation, OrbitalState
from orbitdemand.dataio import (
    EconSeries, PriceRecord, add_prices, impute_prices_group_mean, load_choice_occasions,
    load_count_observations, load_econ_series, load_launch_history, load_launch_prices,
    load_orbital_state, load_physical_params, load_state_history, operator_year_prices,
    price_category, project_econ, read_trajectory, write_choice_occasions,
    write_count_observations, write_econ_series, write_launch_history, write_physical_params,
    write_state_history, write_trajectory,
)


def _write(path, text):
    path.write_text(text)
    return path


def test_state_loader_rejects_bad_rows(tmp_path):
    head = "year,species,shell_id,count\n"
    with pytest.raises(InputError, match=r":3: column 'count' is negative"):
        load_orbital_state(_write(tmp_path / "a.csv", head + "2012,COF,0,1\n2012,IP,0,-4\n"))
    with pytest.raises(InputError, match=r":2: column 'count' is not finite"):
        load_orbital_state(_write(tmp_path / "b.csv", head + "2012,COF,0,nan\n"))
    with pytest.raises(InputError, match="unknown species|species"):
        load_orbital_state(_write(tmp_path / "c.csv", head + "2012,asteroid,0,1\n"))
    with pytest.raises(InputError, match="outside grid"):
        load_orbital_state(_write(tmp_path / "d.csv", head + "2012,COF,24,1\n"))
    with pytest.raises(InputError, match="duplicate"):
        load_orbital_state(_write(tmp_path / "e.csv", head + "2012,COF,1,1\n2012,COF,1,2\n"))
    with pytest.raises(InputError, match="header missing"):
        load_orbital_state(_write(tmp_path / "f.csv", "year,species,count\n"))
    with pytest.raises(InputError, match="not found"):
        load_orbital_state(tmp_path / "missing.csv")


def test_state_round_trip(tmp_path, world):
    states = [world.states[y] for y in (2010, 2011)]
    write_state_history(states, tmp_path / "s.csv")
    back = load_state_history(tmp_path / "s.csv")
    assert list(back) == [2010, 2011]
    assert back[2011] == world.states[2011]
    assert load_orbital_state(tmp_path / "s.csv", 2010) == world.states[2010]
    with pytest.raises(InputError):
        load_orbital_state(tmp_path / "s.csv")
    empty = _write(tmp_path / "h.csv", "year,species,shell_id,count\n")
    assert load_orbital_state(empty, 2012) == OrbitalState.zeros(2012)


def test_launch_history_round_trip(tmp_path, world):
    hist = {y: world.launches[y] for y in (2015, 2016)}
    write_launch_history(hist, tmp_path / "l.csv")
    back = load_launch_history(tmp_path / "l.csv")
    assert np.array_equal(back[2016].q, hist[2016].q)
    _write(tmp_path / "bad.csv", "year,operator,shell_id,count\n2015,civil,3,-1\n")
    with pytest.raises(InputError, match=":2:"):
        load_launch_history(tmp_path / "bad.csv")


def test_physical_params_round_trip(tmp_path, world):
    write_physical_params(world.params, tmp_path / "p.csv", tmp_path / "o.csv")
    p = load_physical_params(tmp_path / "p.csv", tmp_path / "o.csv")
    assert np.array_equal(p.decay_rate, world.params.decay_rate)
    assert np.array_equal(p.mass, world.params.mass) and np.array_equal(p.pmd_rate, world.params.pmd_rate)
    text = (tmp_path / "p.csv").read_text().splitlines()
    text[1] = text[1].replace(",0.0,", ",0.3,", 1)  # decay on an active species
    _write(tmp_path / "p2.csv", "\n".join(text) + "\n")
    with pytest.raises(InputError, match="station-keep"):
        load_physical_params(tmp_path / "p2.csv", tmp_path / "o.csv")


def test_econ_loader(tmp_path):
    head = "year,category,value\n"
    s = load_econ_series(_write(tmp_path / "e.csv", head + "2010,x,1.5\n2011,x,2\n"))
    assert s.get("x", 2011) == 2.0 and s.last_year("x") == 2011
    with pytest.raises(InputError, match="contiguous"):
        load_econ_series(_write(tmp_path / "g.csv", head + "2010,x,1\n2012,x,2\n"))
    with pytest.raises(InputError, match=":3: economic values must be positive"):
        load_econ_series(_write(tmp_path / "z.csv", head + "2010,x,1\n2011,x,0\n"))
    with pytest.raises(InputError, match=":2:"):
        load_econ_series(_write(tmp_path / "n.csv", head + "2010,x,abc\n"))
    with pytest.raises(InputError):
        s.get("x", 2030)


def test_econ_projection():
    s = EconSeries({"x": {2019: 100.0}, "y": {2018: 10.0, 2019: 20.0}})
    p = project_econ(s, 2019, 0.15, 2021)
    assert p.get("x", 2020) == pytest.approx(115.0) and p.get("x", 2021) == pytest.approx(132.25)
    assert p.get("y", 2019) == 20.0
    assert project_econ(p, 2019, 0.15, 2021).values == p.values
    assert s.years("x") == [2019]
    with pytest.raises(InputError):
        project_econ(s, 2017, 0.1, 2020)
    with pytest.raises(InputError):
        project_econ(s, 2019, -1.0, 2020)


def test_econ_write_round_trip(tmp_path):
    s = EconSeries({"x": {2010: 1.0, 2011: 1.25}, "y": {2010: 3.0}})
    write_econ_series(s, tmp_path / "e.csv")
    assert load_econ_series(tmp_path / "e.csv").values == s.values


def test_price_imputation(tmp_path):
    recs = [PriceRecord("a", 2010, "civil", "v1", 10.0), PriceRecord("b", 2010, "civil", "v2", 20.0),
            PriceRecord("c", 2010, "civil", "v3", None), PriceRecord("d", 2011, "civil", "v1", None),
            PriceRecord("e", 2011, "defense", "v4", None)]
    out = impute_prices_group_mean(recs)
    assert out[2].price == 15.0 and out[2].source == "group_mean"
    assert out[3].price == 15.0 and out[3].source == "operator_mean"
    assert out[4].price == 15.0 and out[4].source == "global_mean"
    assert out[0] is recs[0]
    assert impute_prices_group_mean(out) == out
    assert operator_year_prices(out) == {"civil": {2010: 15.0, 2011: 15.0}, "defense": {2011: 15.0}}
    with pytest.raises(InputError):
        operator_year_prices(recs)
    with pytest.raises(InputError):
        impute_prices_group_mean([recs[2]])
    s = add_prices(EconSeries(), operator_year_prices(out))
    assert s.get(price_category("civil"), 2011) == 15.0


def test_price_loader(tmp_path):
    head = "event_id,year,operator,vehicle,price_musd\n"
    recs = load_launch_prices(_write(tmp_path / "p.csv", head + "1,2010,civil,A,50\n2,2010,civil,A,\n"))
    assert recs[0].price == 50.0 and recs[1].price is None and recs[1].source == "missing"
    with pytest.raises(InputError, match=":2: price must be positive"):
        load_launch_prices(_write(tmp_path / "q.csv", head + "1,2010,civil,A,0\n"))
    with pytest.raises(InputError, match=":2:"):
        load_launch_prices(_write(tmp_path / "r.csv", head + "1,2010,civil,A,-5\n"))


def test_choice_occasion_round_trip(tmp_path, world):
    sets = {g: world.occasions[g] for g in sorted(world.occasions)}
    write_choice_occasions(sets, tmp_path / "c.csv")
    back = load_choice_occasions(tmp_path / "c.csv")
    for g, cs in sets.items():
        assert np.array_equal(back[g].F, cs.F) and np.array_equal(back[g].chosen, cs.chosen)


def test_choice_occasion_errors(tmp_path):
    head = ("occasion_id,operator,year,chosen_shell,shell_id,civil_payloads,commercial_payloads,"
            "defense_payloads,other_payloads,collision_rate,access_cost\n")
    with pytest.raises(InputError, match="no choice occasions"):
        load_choice_occasions(_write(tmp_path / "e.csv", head))
    with pytest.raises(InputError, match="lacks characteristics"):
        load_choice_occasions(_write(tmp_path / "m.csv", head + "0,civil,2010,0,0,1,1,1,1,0,5\n"))
    rows = "".join(f"0,civil,2010,0,{j},1,1,1,1,0,5\n" for j in range(24))
    cs = load_choice_occasions(_write(tmp_path / "ok.csv", head + rows))["civil"]
    assert cs.n_obs == 1 and cs.n_shells == 24
    bad = rows.replace("0,civil,2010,0,5,1,1,1,1,0,5", "0,civil,2010,0,5,1,1,1,1,0,-5")
    with pytest.raises(InputError, match=":7:"):
        load_choice_occasions(_write(tmp_path / "neg.csv", head + bad))


def test_count_observation_round_trip(tmp_path, world):
    write_count_observations(world.count_observations, tmp_path / "n.csv")
    back = load_count_observations(tmp_path / "n.csv")
    for g, obs in world.count_observations.items():
        assert back[g] == sorted(obs, key=lambda o: o.year)


def test_trajectory_round_trip(tmp_path, world):
    traj = run_truth(world, scenario_spec("baseline_2012"))
    write_trajectory(traj, tmp_path / "t")
    back = read_trajectory(tmp_path / "t")
    assert back.years == traj.years and back.name == traj.name
    for a, b in zip(traj.records, back.records):
        assert a.state == b.state
        if a.launches is None:
            continue
        assert np.array_equal(a.launches.q, b.launches.q)
        for g, p in a.probabilities.items():
            assert np.array_equal(p, b.probabilities[g])
        assert a.totals == b.totals and a.price_index == b.price_index
    # writing the reloaded copy reproduces the files byte for byte
    write_trajectory(back, tmp_path / "u")
    for name in ("trajectory_stocks.csv", "trajectory_choice.csv", "trajectory_prices.csv",
                 "trajectory_compliance.csv", "summary.json"):
        assert (tmp_path / "t" / name).read_bytes() == (tmp_path / "u" / name).read_bytes()
    summary = json.loads((tmp_path / "t" / "summary.json").read_text())
    assert summary["n_shells"] == 24


def test_empty_trajectory_has_headers(tmp_path):
    from orbitdemand.scenario import Trajectory, YearRecord

    traj = Trajectory(records=[YearRecord(year=2012, state=OrbitalState.zeros(2012))], seed=0, name="x")
    write_trajectory(traj, tmp_path / "t")
    assert (tmp_path / "t" / "trajectory_choice.csv").read_text() == \
        "year,operator,shell_id,probability,launches\n"
    assert LaunchAllocation.zeros().q.sum() == 0
