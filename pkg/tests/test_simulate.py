import json

import numpy as np
import pytest

from dpslab.ctmc import solve_stationary
from dpslab.errors import PopulationGuardTripped, ValidationError
from dpslab.model import DpsModel
from dpslab.product_form import egalitarian_distribution
from dpslab.simulate import SimConfig, merge, simulate, total_variation, write_run_metadata


def test_config_defaults_and_validation():
    cfg = SimConfig(1000.0, seed=1)
    assert cfg.warmup == 100.0 and cfg.window == 900.0
    with pytest.raises(ValidationError):
        SimConfig(10.0, seed=1, warmup=10.0)
    with pytest.raises(ValidationError):
        SimConfig(10.0, seed=-1)


def test_fixed_seed_is_reproducible(reference_model):
    a = simulate(reference_model, SimConfig(2000.0, seed=42))
    b = simulate(reference_model, SimConfig(2000.0, seed=42))
    assert a.masses == b.masses
    assert a.transitions == b.transitions
    c = simulate(reference_model, SimConfig(2000.0, seed=43))
    assert c.masses != a.masses


def test_masses_normalized(reference_model):
    sim = simulate(reference_model, SimConfig(5000.0, seed=3))
    assert sum(sim.masses.values()) == pytest.approx(1.0, abs=1e-9)
    assert sim.batch_population.shape == (20,)
    assert sim.batch_throughput.shape == (20, 2)


def test_population_guard(reference_model):
    heavy = DpsModel((0.45, 0.5), (1, 1), (1, 2))
    with pytest.raises(PopulationGuardTripped):
        simulate(heavy, SimConfig(1e5, seed=1, max_population_guard=3))


def test_total_variation_edge_cases():
    a = {(0,): 1.0}
    assert total_variation(a, a) == 0.0
    assert total_variation(a, {(1,): 1.0}) == 1.0
    assert total_variation({(0,): 0.5, (1,): 0.5}, {(0,): 1.0}) == pytest.approx(0.5)


def test_merge_adds_time(reference_model):
    runs = [simulate(reference_model, SimConfig(1000.0, seed=s)) for s in (1, 2)]
    pooled = merge(runs)
    assert pooled.total_time == pytest.approx(1800.0)
    assert sum(pooled.masses.values()) == pytest.approx(1.0)
    assert pooled.batch_empty.shape == (40,)


def test_exports(tmp_path, reference_model):
    sim = simulate(reference_model, SimConfig(500.0, seed=9))
    sim.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().startswith("n1,n2,probability\n")
    write_run_metadata(tmp_path / "run.json", sim)
    meta = json.loads((tmp_path / "run.json").read_text())
    assert {"seed", "horizon", "warmup", "transitions"} <= set(meta)
    assert meta["seed"] == 9 and meta["rng"] == "numpy.random.PCG64"


@pytest.mark.slow
def test_mm1_mean_population(mm1_model):
    sim = simulate(mm1_model, SimConfig(1e6, seed=11))
    mean, se = sim.mean_population()
    assert abs(mean - 1.0) <= 3 * se


@pytest.mark.slow
def test_egalitarian_total_variation(egalitarian_model):
    sim = simulate(egalitarian_model, SimConfig(1e6, seed=5))
    exact = egalitarian_distribution(egalitarian_model, 40)
    order = np.argsort(-exact.probs)
    keep = order[: np.searchsorted(np.cumsum(exact.probs[order]), 0.999) + 1]
    target = {tuple(exact.states[k]): exact.probs[k] for k in keep}
    assert total_variation(sim, target) <= 0.02


@pytest.mark.slow
def test_throughput_and_idle_probability(reference_model):
    sim = simulate(reference_model, SimConfig(3e5, seed=21))
    for i, lam in enumerate(reference_model.arrival_rates):
        est, se = sim.throughput(i)
        assert abs(est - lam) <= 3 * se
    p0, se = sim.empty_fraction()
    assert abs(p0 - 0.5) <= 3 * se


@pytest.mark.slow
def test_longer_runs_do_not_drift_from_solver(reference_model):
    P = solve_stationary(reference_model, 60)
    for seed in range(5):
        short = total_variation(simulate(reference_model, SimConfig(2e4, seed=seed)), P)
        long = total_variation(simulate(reference_model, SimConfig(4e4, seed=seed)), P)
        # statistical noise on the distance scales like 1/sqrt(horizon)
        assert long <= short + 0.02
