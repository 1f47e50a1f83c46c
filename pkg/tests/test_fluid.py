from pathlib import Path

import numpy as np
import pytest

from tnet import (
    RngStream,
    TimeGrid,
    UniformLaw,
    TriangularLaw,
    crossing_times,
    fluid_netput,
    fluid_solve,
    load_spec,
    simulate,
    solve_oblique_reflection,
    tandem_closed_form,
    tandem_spec,
)
from tnet.simulator import fluid_scale

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "src" / "tnet" / "scenarios"


def single_node_spec(mu, horizon=None):
    return tandem_spec([mu], UniformLaw(0.0, 1.0), horizon or TimeGrid(0.0, 2.5, 0.0025))


def test_netput_single_node():
    spec = single_node_spec(0.5)
    x = fluid_netput(spec)
    t = spec.horizon.times
    assert np.allclose(x.values[0], np.minimum(t, 1.0) - 0.5 * t, atol=1e-12)


def test_netput_tandem_structure():
    spec = tandem_spec([1.0, 0.5], UniformLaw(0.0, 1.0), TimeGrid(0.0, 2.0, 0.002))
    x = fluid_netput(spec)
    t = spec.horizon.times
    assert np.allclose(x.values[0], np.minimum(t, 1.0) - t, atol=1e-12)
    assert np.allclose(x.values[1], 0.5 * t, atol=1e-12)


def test_netput_zero_rates_is_arrival_cdf():
    spec = tandem_spec([0.0, 0.0], UniformLaw(0.0, 1.0), TimeGrid(0.0, 2.0, 0.002))
    x = fluid_netput(spec)
    t = spec.horizon.times
    assert np.allclose(x.values[0], np.minimum(t, 1.0), atol=1e-12)
    assert np.allclose(x.values[1], 0.0)


def test_fluid_solve_single_node_drains_at_two():
    spec = single_node_spec(0.5)
    sol = fluid_solve(spec)
    t = spec.horizon.times
    expected = np.maximum(np.minimum(t, 1.0) - 0.5 * t, 0.0)
    assert np.allclose(sol.queue.values[0], expected, atol=1e-10)
    # emptying time: last positive point sits at t = 2
    positive = sol.queue.values[0] > sol.tol_c
    last = t[np.max(np.flatnonzero(positive))]
    assert last == pytest.approx(2.0, abs=2 * spec.horizon.h)


def test_fluid_solve_tandem_tent():
    # head at rate 1 with uniform arrivals passes through; the 0.5-rate tail
    # accumulates the tent min(t,1) - 0.5t, draining at t = 2
    spec = tandem_spec([1.0, 0.5], UniformLaw(0.0, 1.0), TimeGrid(0.0, 2.5, 0.0025))
    sol = fluid_solve(spec)
    t = spec.horizon.times
    tent = np.maximum(np.minimum(t, 1.0) - 0.5 * t, 0.0)
    assert np.max(np.abs(sol.queue.values[0])) < 1e-10
    assert np.allclose(sol.queue.values[1], tent, atol=1e-10)


def test_fluid_solve_parallel_formula():
    # parallel network: the regulator is the coordinatewise running sup of
    # the negated netput
    import tnet

    par = tnet.NetworkSpec(
        K=2,
        P=np.zeros((2, 2)),
        entry_nodes=(0, 1),
        arrivals=(UniformLaw(0.0, 1.0), TriangularLaw(0.0, 1.0)),
        correlation=tnet.Independent(),
        services=tuple(tnet.ServiceProfile.constant(0.7, 0.0) for _ in range(2)),
        horizon=TimeGrid(0.0, 2.0, 0.002),
    )
    sol = fluid_solve(par)
    x = fluid_netput(par)
    direct = np.maximum.accumulate(np.maximum(-x.values, 0.0), axis=1)
    assert np.allclose(sol.regulator.values, direct, atol=1e-12)


def test_fluid_matches_tandem_closed_form():
    spec = tandem_spec([0.9, 0.6], UniformLaw(0.0, 1.0), TimeGrid(0.0, 2.2, 0.0022))
    sol = fluid_solve(spec)
    closed = tandem_closed_form(fluid_netput(spec), spec.P)
    assert np.max(np.abs(sol.queue.values - closed.z.values)) < 1e-8
    assert np.max(np.abs(sol.regulator.values - closed.y.values)) < 1e-8


def test_fluid_complementarity_and_nonnegativity():
    for name in ("example1.json", "example2.json", "tandem_uniform_ii.json"):
        spec = load_spec(str(SCENARIO_DIR / name))
        sol = fluid_solve(spec)
        assert np.min(sol.queue.values) > -1e-10
        assert np.min(np.diff(sol.regulator.values, axis=1)) > -1e-12
        assert sol.reflection.complementarity_defect() <= spec.K * spec.horizon.m * sol.tol_c


def test_fluid_mass_balance():
    spec = load_spec(str(SCENARIO_DIR / "example1.json"))
    sol = fluid_solve(spec)
    t = spec.horizon.times
    arrived = spec.arrivals[0].cdf(t)
    in_system = sol.queue.values.sum(axis=0)
    # departures from the network = regulated outflow of the tail node
    mu_k = 0.5
    tail_served = np.asarray(spec.services[2].cumulative(t)) - sol.regulator.values[2]
    assert np.max(np.abs(arrived - in_system - tail_served)) < 1e-9


def test_busy_time_forms_against_simulation():
    # the derivation-consistent form matches simulated busy time; the two
    # printed forms are exposed for comparison and differ when mu != 1
    spec = tandem_spec([1.0, 0.5], UniformLaw(0.0, 1.0), TimeGrid(0.0, 2.5, 0.0025))
    traj = simulate(spec, 200_000, RngStream(77))
    sim_busy = fluid_scale(traj).busy.values
    consistent = fluid_solve(spec, busy_time_form="consistent").busy.values
    corollary = fluid_solve(spec, busy_time_form="corollary").busy.values
    theorem = fluid_solve(spec, busy_time_form="theorem").busy.values
    assert np.max(np.abs(sim_busy - consistent)) < 0.02
    assert np.max(np.abs(corollary - consistent)) > 0.05
    assert np.max(np.abs(theorem - consistent)) > 0.05


def test_workload_definition():
    spec = tandem_spec([1.0, 0.5], UniformLaw(0.0, 1.0), TimeGrid(0.0, 2.0, 0.002))
    sol = fluid_solve(spec)
    assert sol.workload_defined
    assert np.allclose(sol.workload.values[1], 2.0 * sol.queue.values[1])
    varying = tandem_spec([1.0], UniformLaw(0.0, 1.0), TimeGrid(0.0, 2.0, 0.002))
    varying = type(varying)(
        K=1,
        P=varying.P,
        entry_nodes=varying.entry_nodes,
        arrivals=varying.arrivals,
        correlation=varying.correlation,
        services=(__import__("tnet").ServiceProfile(((0.0, 1.0), (1.0, 2.0))),),
        horizon=varying.horizon,
    )
    sol2 = fluid_solve(varying)
    assert not sol2.workload_defined
    assert sol2.workload is None and sol2.busy is None


def test_crossing_times_uniform():
    spec = single_node_spec(0.5)
    (c,) = crossing_times(spec)
    assert c.tau1 == pytest.approx(2.0, abs=1e-9)
    assert c.tau2 is None
    assert c.tau1p is None and c.tau2p is None


def test_crossing_times_triangular_density():
    spec = tandem_spec([1.5, 0.8], TriangularLaw(0.0, 1.0), TimeGrid(0.0, 2.0, 0.002))
    head, tail = crossing_times(spec)
    assert head.tau1p == pytest.approx(0.375, abs=1e-9)
    assert head.tau2p == pytest.approx(0.625, abs=1e-9)
    assert tail.tau1p == pytest.approx(0.2, abs=1e-9)
    assert tail.tau2p == pytest.approx(0.8, abs=1e-9)


def test_crossing_times_json_shape():
    spec = single_node_spec(0.5)
    (c,) = crossing_times(spec)
    doc = c.to_json_dict()
    assert doc == {"node": 1, "tau1": c.tau1, "tau2": None, "tau1p": None, "tau2p": None}
