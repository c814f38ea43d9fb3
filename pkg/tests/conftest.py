import shutil
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from orbitdemand.cli import main  # noqa: E402
from orbitdemand.core import DEFAULT_GRID, PhysicalParams  # noqa: E402
from orbitdemand.synthetic import generate_synthetic, simulate_world  # noqa: E402

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(scope="session")
def world():
    return simulate_world(0)


@pytest.fixture(scope="session")
def bundle(tmp_path_factory):
    """Synthetic dataset on disk with models fitted by the command-line pipeline."""
    root = tmp_path_factory.mktemp("bundle")
    config = generate_synthetic(root, seed=0)
    assert main(["estimate-choice", "--config", str(config)]) == 0
    assert main(["estimate-count", "--config", str(config)]) == 0
    return config


@pytest.fixture
def bundle_copy(bundle, tmp_path):
    dst = tmp_path / "bundle"
    shutil.copytree(bundle.parent, dst)
    return dst / "config.ini"


def simple_params(n=DEFAULT_GRID.n_shells, **kw):
    decay = np.full((4, n), 0.05)
    base = dict(decay_rate=decay, eol_rate=np.full(5, 0.2), pmd_rate=np.full(5, 0.5))
    base.update(kw)
    return PhysicalParams(**base)


def random_choice_data(params, n, rng, grid=DEFAULT_GRID):
    """Occasions with attributes drawn at realistic magnitudes and choices drawn from ``params``."""
    from orbitdemand.choice import energy_proxy, simulate_choices

    J = grid.n_shells
    X = np.empty((n, J, 5))
    X[..., :4] = rng.uniform(0, 60, (n, J, 4))
    X[..., 4] = rng.uniform(0, 20, (n, J))
    ac = rng.uniform(20, 80, (n, 1)) * energy_proxy(grid)[None, :]
    return X, ac, simulate_choices(params, X, ac, rng)


def run_truth(world, spec, **changes):
    """Coupled run from the synthetic world's state using the generating models."""
    from orbitdemand.scenario import run_scenario

    kw = dict(choice_models=world.choice_models, count_models=world.count_models, econ=world.econ,
              params=world.params, launch_history=world.launches)
    kw.update(changes)
    return run_scenario(world.states[spec.start_year], spec=spec, grid=world.grid, **kw)


def scenario_spec(name):
    from orbitdemand.scenario import parse_scenario
    from orbitdemand.synthetic import bundled_scenarios

    return parse_scenario(bundled_scenarios()[name + ".ini"], source=name)
