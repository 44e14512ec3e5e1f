"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line straight to the
terminal (bypassing capture) before asserting, so the report is visible in
``pytest -v`` output whether or not the criterion holds.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import brentq

from spinqip import cli, gates
from spinqip.dynamics import ControlSequence, Channel, gate_fidelity
from spinqip.grape import (
    OptimizerConfig,
    RobustnessEnsemble,
    fitness_gradient,
    grape_optimize,
    inhomogeneity_sweep,
)
from spinqip.protocols import (
    HbacConfig,
    compression_gate,
    hbac_run,
    hyperfine_rank,
    majority_polarization,
    measure_polarization,
    single_transition_gate,
    thermal_state,
)
from spinqip.dynamics import evolve_state
from spinqip.pulses import (
    Delay,
    HardPulse,
    PulseSequence,
    VirtualZ,
    certificate,
    compile_cnot,
    correct_delays,
    estimate_sequence_errors,
    phase_track,
    refocus_schedule,
    sequence_propagator,
    simulate_sequence,
)
from spinqip.spins import Hyperfine, TWO_PI, load_system, make_system, z_rotation

ROOT = Path(__file__).resolve().parents[1]
SYSTEMS = ROOT / "systems"


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return emit


def _phase_aligned_distance(a, b):
    # max-entry distance after removing the best global phase
    phase = np.vdot(b, a)
    phase = phase / abs(phase) if abs(phase) > 0 else 1.0
    return float(np.max(np.abs(a - phase * b)))


def test_criterion_1_cnot_pipeline(report):
    start = time.perf_counter()
    system = load_system(SYSTEMS / "hc_pair.json")  # 10 kHz apart, J = 100 Hz
    target = gates.cnot(2, 0, 1)
    ideal_seq = compile_cnot(system, 0, 1)
    ideal_fid = certificate(ideal_seq, system, target)
    finite = compile_cnot(system, 0, 1, pulse_duration=10e-6)
    raw_fid = gate_fidelity(simulate_sequence(finite, system), target)
    corrected = correct_delays(finite, estimate_sequence_errors(finite, system), system)
    corr_fid = gate_fidelity(simulate_sequence(corrected, system), target)
    elapsed = time.perf_counter() - start
    ok = ideal_fid >= 1 - 1e-9 and corr_fid >= 0.999 and elapsed < 1.0
    report(
        1,
        ok,
        f"ideal {ideal_fid:.12f} (>= 1-1e-9), 10 us pulses {raw_fid:.6f} -> corrected {corr_fid:.6f} (>= 0.999), "
        f"{elapsed:.3f} s (< 1 s)",
    )
    assert ok


def test_criterion_2_refocusing(report):
    start = time.perf_counter()
    worst = 1.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        j = np.zeros((3, 3))
        for a, b in ((0, 1), (0, 2), (1, 2)):
            j[a, b] = j[b, a] = rng.uniform(20, 200)
        system = make_system(rng.uniform(-5e3, 5e3, 3), "C", j)
        tau = rng.uniform(1e-3, 2e-2)
        seq = refocus_schedule(system, (0, 1), tau)
        goal = gates.zz_rotation(3, 0, 1, math.pi * tau / 2 * j[0, 1])
        worst = min(worst, gate_fidelity(sequence_propagator(seq, system), goal))
    elapsed = time.perf_counter() - start
    ok = worst >= 1 - 1e-9 and elapsed < 5.0
    report(2, ok, f"worst fidelity over 50 draws {worst:.12f} (>= 1-1e-9), {elapsed:.3f} s (< 5 s)")
    assert ok


def test_criterion_3_phase_tracking(report):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        system = make_system(rng.uniform(-4e3, 4e3, 3), "C", [[0, 40, 12], [40, 0, 77], [12, 77, 0]])
        events = []
        for _ in range(int(rng.integers(4, 16))):
            kind = rng.integers(3)
            if kind == 0:
                events.append(Delay(rng.uniform(0, 4e-3)))
            elif kind == 1:
                spins = tuple(sorted(rng.choice(3, size=rng.integers(1, 4), replace=False).tolist()))
                events.append(HardPulse(spins, rng.uniform(-2 * math.pi, 2 * math.pi), rng.uniform(-math.pi, math.pi)))
            else:
                events.append(VirtualZ(int(rng.integers(3)), rng.uniform(-10, 10)))
        seq = PulseSequence(3, tuple(events))
        tracked = phase_track(seq)
        assert not any(isinstance(ev, VirtualZ) for ev in tracked.events)
        bare = sequence_propagator(PulseSequence(3, tracked.events), system)
        lhs = sequence_propagator(seq, system)
        worst = max(worst, _phase_aligned_distance(lhs, z_rotation(tracked.frame_record) @ bare))
    ok = worst <= 1e-9
    report(3, ok, f"max entry deviation over 100 sequences {worst:.2e} (<= 1e-9)")
    assert ok


def test_criterion_4_gradient(report):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        n = 1 + seed % 3
        j = np.zeros((n, n))
        for a in range(n):
            for b in range(a + 1, n):
                j[a, b] = j[b, a] = rng.uniform(-300, 300)
        system = make_system(rng.uniform(-3e3, 3e3, n), "H", j, dipolar_hz=j * 0.5)
        steps = int(rng.integers(4, 12))
        controls = ControlSequence(
            rng.uniform(5e-6, 5e-5), (Channel("H", 0.0),), rng.uniform(0, 8e3, (1, steps)), rng.uniform(0, TWO_PI, (1, steps))
        )
        goal = gates.cnot(n, 0, n - 1) if n > 1 else gates.rotation(math.pi / 2, 0.0)
        exact = fitness_gradient(controls, system, goal, "exact-first-order")
        fd = fitness_gradient(controls, system, goal, "finite-difference")
        worst = max(worst, float(np.linalg.norm(exact - fd) / np.linalg.norm(fd)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 30.0
    report(4, ok, f"worst relative error over 20 instances {worst:.2e} (<= 1e-4), {elapsed:.2f} s (< 30 s)")
    assert ok


def test_criterion_5_grape_convergence(report):
    start = time.perf_counter()
    system = load_system(SYSTEMS / "strong_pair.json")  # offsets +-500 Hz, dipolar 800 Hz
    cfg = OptimizerConfig(n_steps=200, dt=1e-5, max_iterations=2000, target_fidelity=0.999, max_amplitude_hz=10e3, seed=0)
    result = grape_optimize(system, gates.cnot(2, 0, 1), cfg)
    elapsed = time.perf_counter() - start
    ok = result.fidelity >= 0.999 and result.iterations <= 2000 and elapsed < 300
    report(
        5,
        ok,
        f"fidelity {result.fidelity:.6f} (>= 0.999) after {result.iterations} iterations (<= 2000), "
        f"{elapsed:.2f} s (< 300 s)",
    )
    assert ok


@pytest.fixture(scope="module")
def robustness_runs():
    system = load_system(SYSTEMS / "strong_pair.json")
    goal = gates.cnot(2, 0, 1)
    delta = 20.0
    start = time.perf_counter()
    robust = grape_optimize(
        system,
        goal,
        OptimizerConfig(n_steps=200, dt=1e-5, max_iterations=2000, target_fidelity=0.998, max_amplitude_hz=10e3, seed=0),
        RobustnessEnsemble.default(0.03, delta),
    )
    nominal = grape_optimize(
        system,
        goal,
        OptimizerConfig(n_steps=200, dt=1e-5, max_iterations=2000, target_fidelity=0.999, max_amplitude_hz=10e3, seed=0),
    )
    rfs = np.linspace(0.97, 1.03, 13)
    offsets = np.linspace(-delta, delta, 5)
    robust_rows = inhomogeneity_sweep(robust.controls, system, goal, rfs, offsets)
    nominal_rows = inhomogeneity_sweep(nominal.controls, system, goal, rfs, offsets)
    return {
        "system": system,
        "goal": goal,
        "delta": delta,
        "robust": robust,
        "robust_rows": robust_rows,
        "nominal_rows": nominal_rows,
        "elapsed": time.perf_counter() - start,
    }


def test_criterion_6_robustness(report, robustness_runs):
    r = robustness_runs
    robust_min = min(row[2] for row in r["robust_rows"])
    nominal_min = min(row[2] for row in r["nominal_rows"])
    ok = robust_min >= 0.99 and nominal_min < 0.99 and r["elapsed"] < 600
    report(
        6,
        ok,
        f"rf 0.97..1.03 x offset +-{r['delta']:g} Hz: robust min {robust_min:.5f} (>= 0.99), "
        f"nominal-trained min {nominal_min:.5f} (< 0.99), {r['elapsed']:.1f} s (< 600 s)",
    )
    assert ok


def test_robust_pulse_self_refocuses_static_offsets(robustness_runs):
    r = robustness_runs
    rows = inhomogeneity_sweep(r["robust"].controls, r["system"], r["goal"], [1.0], [-r["delta"], 0.0, r["delta"]])
    nominal = rows[1][2]
    for _, _, fid, _ in rows:
        assert abs(fid - nominal) <= 0.01


def test_criterion_7_hbac(report):
    start = time.perf_counter()
    eps = 1e-5
    rho = evolve_state(thermal_state((eps, eps, eps)), compression_gate())
    oracle_err = abs(measure_polarization(rho)[1] - majority_polarization((eps, eps, eps)))
    big = 0.3
    rho_big = evolve_state(thermal_state((big, big, big)), compression_gate())
    oracle_err = max(oracle_err, abs(measure_polarization(rho_big)[1] - majority_polarization((big, big, big))))
    ratio = hbac_run(HbacConfig(eps_b=eps)).ratio(eps)
    # accounting: the per-gate loss that brings the simulated ratio to 1.39 retains 92.7%
    rate = brentq(lambda r: hbac_run(HbacConfig(eps_b=eps, loss_rate=r)).ratio(eps, compiled=True) - 1.39, 1e-9, 0.2)
    lossy = hbac_run(HbacConfig(eps_b=eps, loss_rate=rate))
    retained = lossy.ratio(eps, compiled=True) / lossy.ratio(eps, compiled=False)
    elapsed = time.perf_counter() - start
    ok = (
        oracle_err <= 1e-12
        and abs(ratio - 1.5) <= 1e-9
        and round(1.39 / 1.5, 3) == 0.927
        and abs(retained - 0.927) <= 5e-4
        and elapsed < 1.0
    )
    report(
        7,
        ok,
        f"oracle deviation {oracle_err:.1e} (<= 1e-12), ratio {ratio:.12f} (|r-1.5| <= 1e-9), "
        f"1.39/1.5 = {1.39 / 1.5:.4f}; per-gate loss {rate:.4f} retains {retained:.4f}, {elapsed:.3f} s (< 1 s)",
    )
    assert ok


def test_criterion_8_hyperfine(report):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    ranks_on, ranks_off = [], []
    for _ in range(20):
        nu_n = rng.uniform(2e6, 2e7)
        az = rng.uniform(2e6, 2e7)
        ax = nu_n * rng.uniform(0.5, 2.0)
        for ax_val, bucket in ((ax, ranks_on), (0.0, ranks_off)):
            system = make_system([0.0, nu_n], ["e", "n"], hyperfine=[Hyperfine(0, 1, az, ax_val)])
            bucket.append(hyperfine_rank(system))
    system = load_system(SYSTEMS / "electron_nucleus.json")
    cfg = OptimizerConfig(
        n_steps=250, dt=2e-9, max_iterations=2000, target_fidelity=0.99, max_amplitude_hz=20e6, seed=0, hamiltonian_mode="weak"
    )
    result = single_transition_gate(system, gates.cnot(2, 0, 1), cfg)
    elapsed = time.perf_counter() - start
    ok = all(r == 15 for r in ranks_on) and all(r < 15 for r in ranks_off) and result.fidelity >= 0.99 and elapsed < 600
    report(
        8,
        ok,
        f"rank with A_x != 0: {sorted(set(ranks_on))}, with A_x = 0: {sorted(set(ranks_off))} (20 draws); "
        f"electron-controlled CNOT fidelity {result.fidelity:.5f} (>= 0.99), {elapsed:.2f} s (< 600 s)",
    )
    assert ok


def test_criterion_9_determinism(report, tmp_path):
    jobs = [
        ["grape", "--system", SYSTEMS / "strong_pair.json", "--goal", "cnot:0,1", "--steps", "60", "--max-iterations", "25",
         "--seed", "11", "--sweep-rf", "0.97,1.0,1.03", "--sweep-offsets=-20,0,20"],
        ["grape", "--system", SYSTEMS / "strong_pair.json", "--goal", "cnot:0,1", "--steps", "30", "--max-iterations", "5",
         "--seed", "2", "--robust-rf", "0.03", "--robust-offset-hz", "20"],
        ["simplex", "--system", SYSTEMS / "single_h.json", "--goal", "x90:0", "--periods", "2", "--max-iterations", "20",
         "--seed", "5"],
        ["compile-cnot", "--system", SYSTEMS / "hc_pair.json", "--pulse-duration", "1e-5", "--correct"],
        ["hbac", "--rounds", "3", "--loss-rate", "0.01"],
        ["hyperfine", "--steps", "100", "--max-iterations", "15", "--target", "0.9999", "--seed", "4"],
    ]
    mismatched = []
    for k, job in enumerate(jobs):
        manifests = []
        for rep in range(2):
            out = tmp_path / f"job{k}_{rep}"
            code = cli.main([str(a) for a in job] + ["--out", str(out)])
            assert code == cli.EXIT_OK, job
            files = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "timing.json"}
            manifests.append(files)
        if manifests[0] != manifests[1]:
            mismatched.append(job[0])
    ok = not mismatched
    report(9, ok, f"{len(jobs)} jobs run twice, artifacts hash-identical: {'all' if ok else 'mismatch in ' + ', '.join(mismatched)}")
    assert ok
