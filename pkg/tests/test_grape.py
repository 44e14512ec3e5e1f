import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinqip import gates
from spinqip.dynamics import Channel, ControlSequence, evolve_controls, gate_fidelity
from spinqip.grape import (
    ControlProblem,
    EnsembleMember,
    OptimizerConfig,
    RobustnessEnsemble,
    array_to_controls,
    controllability_rank,
    controls_to_array,
    fitness,
    fitness_gradient,
    grape_optimize,
    inhomogeneity_sweep,
    simplex_optimize,
    sweep_from_csv,
    sweep_to_csv,
)
from spinqip.spins import SIGMA, TWO_PI, make_system, pauli_embed

H0 = Channel("H", 0.0)


def _random_instance(rng, n):
    offsets = rng.uniform(-2e3, 2e3, n)
    j = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            j[a, b] = j[b, a] = rng.uniform(-200, 200)
    system = make_system(offsets, "H", j)
    steps = int(rng.integers(3, 8))
    controls = ControlSequence(
        2e-5, (H0,), rng.uniform(0, 5e3, (1, steps)), rng.uniform(0, TWO_PI, (1, steps))
    )
    goal = gates.cnot(n, 0, n - 1) if n > 1 else gates.rotation(math.pi / 2, 0.3)
    return system, controls, goal


def _central_difference(controls, system, goal, h):
    u = controls_to_array(controls)
    grad = np.zeros_like(u)
    for idx in np.ndindex(u.shape):
        up, dn = u.copy(), u.copy()
        up[idx] += h
        dn[idx] -= h
        f_up = fitness(array_to_controls(up, controls.channels, controls.dt), system, goal)
        f_dn = fitness(array_to_controls(dn, controls.channels, controls.dt), system, goal)
        grad[idx] = (f_up - f_dn) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", range(8))
def test_exact_gradient_matches_independent_central_differences(seed):
    rng = np.random.default_rng(seed)
    system, controls, goal = _random_instance(rng, 1 + seed % 3)
    exact = fitness_gradient(controls, system, goal, "exact-first-order")
    fd = _central_difference(controls, system, goal, 1e-2)
    assert np.linalg.norm(exact - fd) <= 1e-4 * np.linalg.norm(fd)


def test_internal_finite_difference_mode_agrees():
    rng = np.random.default_rng(42)
    system, controls, goal = _random_instance(rng, 2)
    exact = fitness_gradient(controls, system, goal, "exact-first-order")
    fd = fitness_gradient(controls, system, goal, "finite-difference")
    assert np.linalg.norm(exact - fd) <= 1e-4 * np.linalg.norm(exact)


def test_approximate_gradient_close_for_short_steps():
    rng = np.random.default_rng(5)
    system, controls, goal = _random_instance(rng, 2)
    short = ControlSequence(1e-7, controls.channels, controls.amplitudes_hz, controls.phases)
    exact = fitness_gradient(short, system, goal, "exact-first-order")
    approx = fitness_gradient(short, system, goal, "approximate")
    assert np.linalg.norm(exact - approx) <= 1e-2 * np.linalg.norm(exact)


def test_single_spin_closed_form_gradient():
    # one step, identity goal: Phi = cos^2(a), a = dt |u| / 2
    system = make_system([0.0])
    dt = 1e-4
    ux, uy = 3000.0, -1200.0
    u = np.array([[[ux, uy]]])
    controls = array_to_controls(u, (H0,), dt)
    norm = math.hypot(ux, uy)
    a = dt * norm / 2
    assert fitness(controls, system, np.eye(2)) == pytest.approx(math.cos(a) ** 2, abs=1e-14)
    expected = -math.sin(2 * a) * dt / 2 * np.array([ux, uy]) / norm
    got = fitness_gradient(controls, system, np.eye(2))[0, 0]
    np.testing.assert_allclose(got, expected, rtol=1e-9)


def test_gradient_vanishes_at_exact_solution():
    system = make_system([0.0])
    controls = ControlSequence(1e-5, (H0,), np.full((1, 10), 2500.0), np.zeros((1, 10)))
    goal = gates.rotation(math.pi / 2, 0.0)
    assert fitness(controls, system, goal) == pytest.approx(1.0)
    g = fitness_gradient(controls, system, goal)
    assert np.max(np.abs(g)) < 1e-12


def test_fitness_in_unit_interval_and_goal_phase_invariant():
    rng = np.random.default_rng(2)
    system, controls, goal = _random_instance(rng, 2)
    f = fitness(controls, system, goal)
    assert 0 <= f <= 1
    assert fitness(controls, system, np.exp(1.3j) * goal) == pytest.approx(f, abs=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 4))
def test_ensemble_fitness_is_weighted_mean(seed, n_members):
    rng = np.random.default_rng(seed)
    system, controls, goal = _random_instance(rng, 2)
    members = tuple(
        EnsembleMember(rng.uniform(0.9, 1.1), rng.uniform(-100, 100), rng.uniform(0.1, 2.0)) for _ in range(n_members)
    )
    ens = RobustnessEnsemble(members)
    total = sum(m.weight for m in members)
    expected = sum(
        m.weight / total * gate_fidelity(evolve_controls(system, controls, "full", m.rf_scale, m.field_offset_hz), goal)
        for m in members
    )
    prob = ControlProblem(system, goal, controls.channels, controls.n_steps, controls.dt, ens)
    assert prob.fitness(controls_to_array(controls)) == pytest.approx(expected, abs=1e-12)
    assert fitness(controls, system, goal, ensemble=ens) == pytest.approx(expected, abs=1e-12)


def test_ensemble_rejects_bad_weights():
    with pytest.raises(ValueError):
        RobustnessEnsemble(())
    with pytest.raises(ValueError):
        RobustnessEnsemble((EnsembleMember(weight=-1.0), EnsembleMember()))


def _small_problem():
    system = make_system([0.0, 400.0], "H", [[0, 60.0], [60.0, 0]])
    return system, gates.cnot(2, 0, 1)


def test_steepest_ascent_trace_is_monotone():
    system, goal = _small_problem()
    cfg = OptimizerConfig(n_steps=40, dt=2e-4, max_iterations=30, target_fidelity=0.9999, method="steepest-ascent", seed=1)
    result = grape_optimize(system, goal, cfg)
    trace = np.array(result.trace)
    assert len(trace) > 2
    assert np.all(np.diff(trace) >= 0)
    assert result.trace[-1] == pytest.approx(result.extra["ensemble_fitness"])


def test_conjugate_gradient_reaches_target():
    system, goal = _small_problem()
    cfg = OptimizerConfig(n_steps=60, dt=2e-4, max_iterations=300, target_fidelity=0.999, seed=0, max_amplitude_hz=2e3)
    result = grape_optimize(system, goal, cfg)
    assert result.converged
    assert result.fidelity >= 0.999
    assert np.all(np.diff(result.trace) >= 0)
    assert np.all(result.controls.amplitudes_hz <= cfg.max_amplitude_hz * (1 + 1e-12))


def test_same_seed_gives_bitwise_identical_trace():
    system, goal = _small_problem()
    cfg = OptimizerConfig(n_steps=30, dt=2e-4, max_iterations=15, seed=7)
    a = grape_optimize(system, goal, cfg)
    b = grape_optimize(system, goal, cfg)
    assert a.trace == b.trace
    np.testing.assert_array_equal(a.controls.amplitudes_hz, b.controls.amplitudes_hz)
    c = grape_optimize(system, goal, OptimizerConfig(n_steps=30, dt=2e-4, max_iterations=15, seed=8))
    assert c.trace != a.trace


def test_failure_is_reported_not_raised():
    system, goal = _small_problem()
    cfg = OptimizerConfig(n_steps=4, dt=1e-5, max_iterations=3, seed=0)
    result = grape_optimize(system, goal, cfg)
    assert result.status in ("max-iterations", "stalled")
    assert not result.converged


def test_restarts_keep_trace_monotone():
    system, goal = _small_problem()
    cfg = OptimizerConfig(n_steps=6, dt=1e-5, max_iterations=120, seed=0, restarts=2, stall_window=5, stall_tolerance=1e-3)
    result = grape_optimize(system, goal, cfg)
    assert np.all(np.diff(result.trace) >= 0)
    assert result.iterations <= cfg.max_iterations


def test_config_validation_and_round_trip():
    cfg = OptimizerConfig(n_steps=12, seed=3, gradient_mode="finite-difference")
    assert OptimizerConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        OptimizerConfig(n_steps=0)
    with pytest.raises(ValueError):
        OptimizerConfig(gradient_mode="magic")
    with pytest.raises(ValueError):
        OptimizerConfig.from_dict({"bogus": 1})


@pytest.mark.parametrize("seed", range(3))
def test_simplex_single_period_x90(seed):
    system = make_system([0.0])
    cfg = OptimizerConfig(n_steps=100, dt=1e-6, max_iterations=200, target_fidelity=1 - 1e-7, seed=seed, max_amplitude_hz=1e4)
    result = simplex_optimize(system, gates.rotation(math.pi / 2, 0.0), 1, cfg)
    c = result.controls
    assert result.fidelity >= 1 - 1e-7
    assert np.ptp(c.amplitudes_hz) == 0 and np.ptp(c.phases) == 0
    # signed nutation about +x, modulo a full turn (which is only a global sign)
    signed = float(np.sum(TWO_PI * c.amplitudes_hz * c.dt) * math.cos(c.phases[0, 0]))
    assert math.remainder(signed - math.pi / 2, TWO_PI) == pytest.approx(0.0, abs=1e-4)


def test_simplex_rejects_zero_periods():
    with pytest.raises(ValueError):
        simplex_optimize(make_system([0.0]), np.eye(2), 0, OptimizerConfig())


def test_controllability_single_spin():
    assert controllability_rank(SIGMA["z"], [SIGMA["x"]]) == 3
    assert controllability_rank(SIGMA["z"], []) == 1
    assert controllability_rank(SIGMA["z"], [SIGMA["z"]]) == 1


def test_controllability_coupled_pair_is_full():
    n = 2
    drift = 100 * pauli_embed("z", 0, n) - 70 * pauli_embed("z", 1, n) + 30 * pauli_embed("z", 0, n) @ pauli_embed("z", 1, n)
    x = pauli_embed("x", 0, n) + pauli_embed("x", 1, n)
    assert controllability_rank(drift, [x]) == 15
    uncoupled = 100 * pauli_embed("z", 0, n) - 70 * pauli_embed("z", 1, n)
    assert controllability_rank(uncoupled, [x]) == 6


def test_controllability_basis_invariance():
    rng = np.random.default_rng(3)
    n = 2
    drift = 40 * pauli_embed("z", 0, n) @ pauli_embed("z", 1, n)
    a = pauli_embed("x", 0, n)
    b = pauli_embed("y", 1, n)
    m = rng.standard_normal((2, 2))
    mixed = [m[0, 0] * a + m[0, 1] * b, m[1, 0] * a + m[1, 1] * b]
    assert controllability_rank(drift, [a, b]) == controllability_rank(drift, mixed)


def test_controllability_rejects_non_hermitian():
    with pytest.raises(ValueError):
        controllability_rank(np.array([[0, 1.0], [0, 0]]), [])


def test_sweep_csv_round_trip_is_exact():
    system = make_system([0.0])
    controls = ControlSequence(1e-5, (H0,), np.full((1, 10), 2500.0), np.zeros((1, 10)))
    rows = inhomogeneity_sweep(controls, system, gates.rotation(math.pi / 2), [0.97, 1.0, 1.03], [-20.0, 0.0, 20.0])
    assert len(rows) == 9
    nominal = [r for r in rows if r[0] == 1.0 and r[1] == 0.0][0]
    assert nominal[2] == pytest.approx(1.0)
    text = sweep_to_csv(rows)
    assert sweep_from_csv(text) == rows
    assert sweep_to_csv(sweep_from_csv(text)) == text
    with pytest.raises(ValueError):
        sweep_from_csv("a,b\n1,2\n")


def _closure_dimension(mats):
    # brute force: all pairwise commutators of the current span, re-orthonormalised by SVD until stable
    d = len(mats[0])

    def orthonormal(ms):
        flat = np.array([np.concatenate([a.real.ravel(), a.imag.ravel()]) for a in ms])
        _, sv, vt = np.linalg.svd(flat, full_matrices=False)
        keep = vt[sv > 1e-9 * sv[0]]
        return [(v[: d * d] + 1j * v[d * d :]).reshape(d, d) for v in keep]

    span = orthonormal([1j * m - np.trace(1j * m) / d * np.eye(d) for m in mats])
    while True:
        grown = orthonormal(span + [a @ b - b @ a for a in span for b in span])
        if len(grown) == len(span):
            return len(span)
        span = grown


@pytest.mark.parametrize("seed", range(6))
def test_controllability_matches_brute_force_closure(seed):
    rng = np.random.default_rng(seed)
    n = 2
    terms = [pauli_embed(a, k, n) for a in "xyz" for k in range(n)]
    drift = rng.uniform(-1, 1) * pauli_embed("z", 0, n) + rng.uniform(-1, 1) * pauli_embed("z", 1, n)
    if seed % 2:
        drift = drift + 0.3 * pauli_embed("z", 0, n) @ pauli_embed("z", 1, n)
    controls = [terms[i] for i in rng.choice(len(terms), size=1 + seed % 2, replace=False)]
    assert controllability_rank(drift, controls) == _closure_dimension([drift] + controls)
