"""
Algorithmic cooling with a heat bath and single-transition hyperfine control.

Cooling works on three computational spins. Spin 2 is the reset spin that
touches the bath, spin 1 is the target that gets boosted and spin 0 is the
second helper. Polarisations are expectation values of sigma_z, so the
thermal state of a spin with polarisation eps is (I + eps sigma_z) / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import gates
from .dynamics import (
    Channel,
    ControlSequence,
    DensityState,
    evolve_controls,
    evolve_state,
    gate_fidelity,
    worst_case_state_fidelity,
)
from .grape import (
    OptimizationResult,
    OptimizerConfig,
    controllability_rank,
    grape_optimize,
)
from .pulses import PulseSequence, simulate_sequence
from .spins import SpinSystem, natural_hamiltonian, pauli_embed

TARGET = 1
RESET = 2
HELPER = 0


class UncontrollableError(ValueError):
    """The drift plus single control do not generate the full operator algebra."""

    def __init__(self, rank: int, full: int):
        super().__init__(f"system is not controllable with one transition: Lie rank {rank} < {full}")
        self.rank = rank
        self.full = full


# ---------------------------------------------------------------------------
# states


def thermal_state(polarizations: Sequence[float]) -> DensityState:
    """Product of (I + eps_k sigma_z) / 2 over the spins."""
    diag = np.ones(1)
    for eps in polarizations:
        if not -1 <= eps <= 1:
            raise ValueError("polarisations must lie in [-1, 1]")
        diag = np.kron(diag, [(1 + eps) / 2, (1 - eps) / 2])
    return DensityState(np.diag(diag))


def measure_polarization(rho: DensityState) -> np.ndarray:
    """<sigma_z> of every spin."""
    n = rho.n_spins
    probs = np.real(np.diag(rho.matrix))
    idx = np.arange(rho.dim)
    return np.array([float(np.sum(probs * (1 - 2 * ((idx >> (n - 1 - k)) & 1)))) for k in range(n)])


def compression_gate() -> np.ndarray:
    """CNOTNOT . TOFFOLI . CNOTNOT with the target on the middle spin.

    The first CNOTNOT (control 1, targets 0 and 2) marks whether each helper
    disagrees with the target, the Toffoli flips the target when both do and
    the last CNOTNOT restores the helpers. The target ends up holding the
    majority of the three bits.
    """
    c = gates.multi_cnot(3, TARGET, (HELPER, RESET))
    t = gates.toffoli(3, (HELPER, RESET), TARGET)
    return c @ t @ c


def refresh(rho: DensityState, spin: int, eps_b: float) -> DensityState:
    """Replace ``spin`` by a fresh bath spin of polarisation ``eps_b``.

    Computes Tr_spin(rho) and reinserts (I + eps_b sigma_z) / 2 at the same
    tensor slot, dropping any correlations the spin carried.
    """
    n = rho.n_spins
    if not 0 <= spin < n:
        raise IndexError(f"spin {spin} out of range")
    if not -1 <= eps_b <= 1:
        raise ValueError("bath polarisation must lie in [-1, 1]")
    t = rho.matrix.reshape([2] * (2 * n))
    reduced = np.trace(t, axis1=spin, axis2=n + spin)  # axes of the other spins, rows then columns
    bath = np.diag([(1 + eps_b) / 2, (1 - eps_b) / 2])
    full = np.multiply.outer(reduced, bath)  # rows(others), cols(others), row(spin), col(spin)
    m = n - 1
    rows = list(range(m))
    cols = list(range(m, 2 * m))
    rows.insert(spin, 2 * m)
    cols.insert(spin, 2 * m + 1)
    full = np.transpose(full, rows + cols)
    return DensityState(full.reshape(rho.dim, rho.dim))


def depolarize(rho: DensityState, rate: float) -> DensityState:
    """(1 - r) rho + r I / d: scales every polarisation by (1 - r)."""
    if not 0 <= rate <= 1:
        raise ValueError("loss rate must lie in [0, 1]")
    return DensityState((1 - rate) * rho.matrix + rate * np.eye(rho.dim) / rho.dim)


# ---------------------------------------------------------------------------
# HBAC schedule


FIRST_ROUND = (
    ("refresh", RESET),
    ("swap", (RESET, TARGET)),
    ("refresh", RESET),
    ("swap", (RESET, HELPER)),
    ("refresh", RESET),
    ("compress", None),
)
LATER_ROUND = (
    ("refresh", RESET),
    ("swap", (RESET, HELPER)),
    ("refresh", RESET),
    ("compress", None),
)


def step_name(kind: str, arg) -> str:
    if kind == "swap":
        return f"swap_{arg[0]}_{arg[1]}"
    return kind


@dataclass(frozen=True)
class HbacConfig:
    """``initial`` defaults to eps_b / 4 on every spin (carbon vs proton polarisation)."""

    eps_b: float = 1e-5
    n_rounds: int = 1
    initial: tuple[float, ...] | None = None
    loss_rate: float = 0.0

    def __post_init__(self):
        if int(self.n_rounds) != self.n_rounds or self.n_rounds < 1:
            raise ValueError("n_rounds must be at least 1")
        if not 0 < abs(self.eps_b) <= 1:
            raise ValueError("bath polarisation must be nonzero and at most 1 in magnitude")
        if not 0 <= self.loss_rate < 1:
            raise ValueError("loss_rate must lie in [0, 1)")
        init = self.initial if self.initial is not None else (self.eps_b / 4,) * 3
        if len(init) != 3:
            raise ValueError("cooling needs exactly three computational spins")
        object.__setattr__(self, "initial", tuple(float(e) for e in init))


@dataclass
class HbacResult:
    """Polarisation after every step: rows (round, step, name, polarisations)."""

    ideal: list[tuple[int, int, str, np.ndarray]]
    compiled: list[tuple[int, int, str, np.ndarray]] | None = None
    gate_fidelities: dict[str, float] = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        trace = self.compiled if self.compiled is not None else self.ideal
        return trace[-1][3]

    def ratio(self, eps_b: float, compiled: bool | None = None) -> float:
        use_compiled = self.compiled is not None if compiled is None else compiled
        if use_compiled and self.compiled is None:
            raise ValueError("no compiled trace: pass gate implementations or a loss rate")
        trace = self.compiled if use_compiled else self.ideal
        return float(trace[-1][3][TARGET] / eps_b)


def _ideal_gate(kind: str, arg) -> np.ndarray:
    if kind == "swap":
        return gates.swap(3, *arg)
    return compression_gate()


def _realise(gate, system: SpinSystem | None) -> np.ndarray:
    if isinstance(gate, ControlSequence):
        if system is None:
            raise ValueError("control sequences need the spin system to simulate")
        return evolve_controls(system, gate, "full")
    if isinstance(gate, PulseSequence):
        if system is None:
            raise ValueError("pulse sequences need the spin system to simulate")
        return simulate_sequence(gate, system)
    u = np.asarray(gate, dtype=complex)
    if u.shape != (8, 8):
        raise ValueError("gate propagators must be 8 x 8")
    return u


def _run(config: HbacConfig, gate_of, loss: float):
    rho = thermal_state(config.initial)
    rows = [(0, 0, "initial", measure_polarization(rho))]
    for rnd in range(1, config.n_rounds + 1):
        schedule = FIRST_ROUND if rnd == 1 else LATER_ROUND
        for step, (kind, arg) in enumerate(schedule, start=1):
            if kind == "refresh":
                rho = refresh(rho, arg, config.eps_b)
            else:
                rho = evolve_state(rho, gate_of(kind, arg))
                if loss:
                    rho = depolarize(rho, loss)
            rows.append((rnd, step, step_name(kind, arg), measure_polarization(rho)))
    return rows


def hbac_run(
    config: HbacConfig,
    gate_implementations: Mapping[str, object] | None = None,
    system: SpinSystem | None = None,
) -> HbacResult:
    """Run the cooling schedule and record every spin's polarisation after each step.

    Round one is refresh, swap(2,1), refresh, swap(2,0), refresh, compress;
    later rounds are refresh, swap(2,0), refresh, compress. The ideal trace
    always uses exact permutation gates. If ``gate_implementations`` (keyed by
    ``swap_2_1``, ``swap_2_0``, ``compress``; each an 8x8 propagator, a
    ControlSequence or a PulseSequence simulated on ``system``) is given, or
    ``config.loss_rate`` is nonzero, a compiled trace is produced as well,
    with each gate followed by depolarisation at ``loss_rate``.
    """
    ideal = _run(config, _ideal_gate, 0.0)
    impls = dict(gate_implementations or {})
    known = {"swap_2_1", "swap_2_0", "compress"}
    unknown = set(impls) - known
    if unknown:
        raise ValueError(f"unknown gate names {sorted(unknown)}; expected {sorted(known)}")
    if not impls and not config.loss_rate:
        return HbacResult(ideal)
    realised = {name: _realise(g, system) for name, g in impls.items()}
    fids = {}
    for name, u in realised.items():
        kind = "compress" if name == "compress" else "swap"
        arg = None if kind == "compress" else tuple(int(c) for c in name.split("_")[1:])
        fids[name] = gate_fidelity(u, _ideal_gate(kind, arg))

    def gate_of(kind, arg):
        return realised.get(step_name(kind, arg), _ideal_gate(kind, arg))

    compiled = _run(config, gate_of, config.loss_rate)
    return HbacResult(ideal, compiled, fids)


def majority_polarization(eps: Sequence[float]) -> float:
    """Target polarisation after compression of independent spins, from the 8 populations."""
    p = [(1 + e) / 2 for e in eps]
    total = 0.0
    for bits in range(8):
        b = [(bits >> (2 - k)) & 1 for k in range(3)]
        prob = math.prod(p[k] if b[k] == 0 else 1 - p[k] for k in range(3))
        majority = 1 if sum(b) >= 2 else 0
        total += prob * (1 if majority == 0 else -1)
    return total


def per_step_error(ratio_fraction: float, n_steps: int) -> float:
    """Uniform per-step loss r with (1 - r)^n_steps = ratio_fraction."""
    if not 0 < ratio_fraction <= 1:
        raise ValueError("ratio fraction must lie in (0, 1]")
    return 1.0 - ratio_fraction ** (1.0 / n_steps)


def trace_to_csv(rows) -> str:
    lines = ["round,step,spin,polarization"]
    for rnd, step, _, pol in rows:
        for k, p in enumerate(pol):
            lines.append(f"{rnd},{step},{k},{float(p)!r}")
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str) -> list[tuple[int, int, int, float]]:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "round,step,spin,polarization":
        raise ValueError("not a cooling trace CSV")
    out = []
    for ln in lines[1:]:
        r, s, k, p = ln.split(",")
        out.append((int(r), int(s), int(k), float(p)))
    return out


# ---------------------------------------------------------------------------
# hyperfine single-transition control


def _electron_nucleus(system: SpinSystem) -> tuple[int, int]:
    if system.n_spins != 2 or len(system.hyperfine) != 1:
        raise ValueError("single-transition control expects one electron and one nucleus")
    h = system.hyperfine[0]
    return h.electron, h.nucleus


def energy_levels(system: SpinSystem) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (rad/s) and eigenvectors of the pair, numbered 1..4 in order.

    Levels are grouped by electron manifold (electron up first) and sorted
    by energy inside each manifold.
    """
    e, _ = _electron_nucleus(system)
    h = natural_hamiltonian(system, "weak")
    lam, v = np.linalg.eigh(h)
    sz = np.real(np.einsum("ji,jk,ki->i", v.conj(), pauli_embed("z", e, 2), v))
    order = sorted(range(4), key=lambda k: (-np.sign(round(sz[k], 9)), lam[k]))
    return lam[order], v[:, order]


def transition_table(system: SpinSystem) -> list[dict]:
    """All level pairs with frequency (Hz) and electron-drive matrix element.

    The frequency is (E_a - E_b) / 2 pi for levels a < b, which is the
    carrier (in the electron frame) that drives a -> b when a sits in the
    electron-up manifold.
    """
    e, _ = _electron_nucleus(system)
    lam, v = energy_levels(system)
    sx = 0.5 * pauli_embed("x", e, 2)
    rows = []
    for a in range(4):
        for b in range(a + 1, 4):
            strength = abs(np.vdot(v[:, a], sx @ v[:, b]))
            rows.append(
                {
                    "levels": f"{a + 1}-{b + 1}",
                    "frequency_hz": float((lam[a] - lam[b]) / (2 * math.pi)),
                    "electron_matrix_element": float(strength),
                }
            )
    return rows


def transition_channel(system: SpinSystem, levels: str = "1-3") -> Channel:
    e, _ = _electron_nucleus(system)
    for row in transition_table(system):
        if row["levels"] == levels:
            return Channel(system.spins[e].species.name, row["frequency_hz"])
    raise ValueError(f"unknown transition {levels!r}")


def hyperfine_rank(system: SpinSystem, levels: str = "1-3") -> int:
    """Lie rank of the pair with one sigma_x control on the electron.

    The drift is taken in the frame rotating with the carrier of the driven
    transition, where a single microwave channel is time independent.
    """
    e, _ = _electron_nucleus(system)
    channel = transition_channel(system, levels)
    drift = natural_hamiltonian(system, "weak") - math.pi * channel.offset_hz * pauli_embed("z", e, 2)
    return controllability_rank(drift, [pauli_embed("x", e, 2)])


def single_transition_gate(
    system: SpinSystem,
    u_goal: np.ndarray,
    config: OptimizerConfig,
    levels: str = "1-3",
) -> OptimizationResult:
    """Design a microwave pulse on one transition that implements ``u_goal``.

    Refuses with :class:`UncontrollableError` when the pair is not fully
    controllable. An identity goal is first tried with free evolution alone,
    picking the free-evolution length (up to the configured duration) whose
    propagator is closest to the identity; otherwise GRAPE runs with one
    channel at the transition carrier.
    """
    full = system.dim**2 - 1
    rank = hyperfine_rank(system, levels)
    if rank < full:
        raise UncontrollableError(rank, full)
    channel = transition_channel(system, levels)
    u_goal = np.asarray(u_goal, dtype=complex)
    if np.allclose(u_goal / u_goal[0, 0], np.eye(system.dim), atol=1e-12):
        h = natural_hamiltonian(system, "weak")
        lam = np.linalg.eigvalsh(h)
        n = np.arange(1, config.n_steps + 1)
        phases = np.exp(-1j * np.outer(n * config.dt, lam))
        fids = np.abs(phases.sum(axis=1)) ** 2 / system.dim**2
        best = int(np.argmax(fids))
        if fids[best] >= config.target_fidelity:
            controls = ControlSequence.zeros(config.dt, (channel,), best + 1)
            u = evolve_controls(system, controls, "weak")
            return OptimizationResult(
                controls=controls,
                trace=[gate_fidelity(u, u_goal)],
                status="converged",
                iterations=0,
                fidelity=gate_fidelity(u, u_goal),
                worst_case_fidelity=worst_case_state_fidelity(u, u_goal),
                config=config,
                extra={"free_evolution_steps": best + 1, "lie_rank": rank, "channel": channel.name},
            )
    if config.hamiltonian_mode != "weak":
        config = OptimizerConfig(**{**config.to_dict(), "hamiltonian_mode": "weak"})
    result = grape_optimize(system, u_goal, config, channels=(channel,))
    result.extra.update({"lie_rank": rank, "channel": channel.name})
    return result
