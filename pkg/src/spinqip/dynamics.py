"""
Time evolution and gate-quality measures.

Control fields are piecewise constant: inside each step the drive is frozen
at its step value in the rotating frame of the channel's species carrier
(rotating-wave approximation, counter-rotating terms dropped). A channel whose
carrier sits ``offset_hz`` away from the species carrier contributes an extra
phase ramp 2 pi offset_hz t, evaluated at the step midpoint.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .spins import (
    SIGMA,
    TWO_PI,
    SpinSystem,
    embed,
    natural_hamiltonian,
)

DENSITY_TRACE_TOL = 1e-10
DENSITY_HERMITIAN_TOL = 1e-12
DENSITY_EIG_TOL = 1e-10
# max |H| * dt above this (rad) triggers a step-size warning
MAX_PHASE_PER_STEP = 0.1
CSV_HEADER = ["t_s", "channel", "amplitude_hz", "phase_rad"]


def _check_hermitian(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    if h.ndim < 2 or h.shape[-1] != h.shape[-2]:
        raise ValueError("Hamiltonian must be square")
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    if np.max(np.abs(h - np.swapaxes(h.conj(), -1, -2)), initial=0.0) > 1e-12 * scale:
        raise ValueError("propagator requested for a non-Hermitian Hamiltonian")
    return 0.5 * (h + np.swapaxes(h.conj(), -1, -2))


def propagator_step(h: np.ndarray, dt: float) -> np.ndarray:
    """U = exp(-i H dt) by Hermitian eigendecomposition.

    Accepts a single (d, d) Hamiltonian or a stack (K, d, d).
    """
    h = _check_hermitian(h)
    evals, evecs = np.linalg.eigh(h)
    phases = np.exp(-1j * evals * dt)
    return (evecs * phases[..., None, :]) @ np.swapaxes(evecs.conj(), -1, -2)


def free_evolution(system: SpinSystem, tau: float, mode: str = "weak") -> np.ndarray:
    if tau < 0:
        raise ValueError("free evolution time must be non-negative")
    return propagator_step(natural_hamiltonian(system, mode), tau)


def suggest_dt(h_max: float) -> float:
    """Largest step keeping max|H| dt at or below ``MAX_PHASE_PER_STEP`` rad."""
    if h_max <= 0:
        return math.inf
    return MAX_PHASE_PER_STEP / h_max


# ---------------------------------------------------------------------------
# control sequences


@dataclass(frozen=True)
class Channel:
    species: str
    offset_hz: float = 0.0

    @property
    def name(self) -> str:
        return f"{self.species}@{self.offset_hz!r}"

    @classmethod
    def parse(cls, text: str) -> "Channel":
        species, sep, offset = text.rpartition("@")
        if not sep:
            return cls(text, 0.0)
        return cls(species, float(offset))


@dataclass(frozen=True, eq=False)
class ControlSequence:
    """Piecewise-constant drive: one amplitude/phase pair per channel and step.

    Amplitudes are stored as nutation frequencies in Hz (``amplitudes_hz``) so
    that the CSV form round-trips exactly; ``amplitudes`` gives omega_nut in
    rad/s. Arrays have shape (n_channels, n_steps).
    """

    dt: float
    channels: tuple[Channel, ...]
    amplitudes_hz: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        channels = tuple(c if isinstance(c, Channel) else Channel(*c) for c in self.channels)
        amps = np.atleast_2d(np.array(self.amplitudes_hz, dtype=float))
        phases = np.atleast_2d(np.array(self.phases, dtype=float))
        if amps.shape != phases.shape or amps.shape[0] != len(channels):
            raise ValueError("amplitude/phase arrays must have shape (n_channels, n_steps)")
        if amps.shape[1] < 1:
            raise ValueError("a control sequence needs at least one step")
        if np.any(amps < 0):
            raise ValueError("amplitudes must be non-negative (sign goes into the phase)")
        if not (np.all(np.isfinite(amps)) and np.all(np.isfinite(phases))):
            raise ValueError("control arrays must be finite")
        amps.setflags(write=False)
        phases.setflags(write=False)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "amplitudes_hz", amps)
        object.__setattr__(self, "phases", phases)

    @property
    def n_steps(self) -> int:
        return self.amplitudes_hz.shape[1]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def amplitudes(self) -> np.ndarray:
        return TWO_PI * self.amplitudes_hz

    def quadratures(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) = omega_nut (cos phase, sin phase), rad/s."""
        w = self.amplitudes
        return w * np.cos(self.phases), w * np.sin(self.phases)

    @classmethod
    def from_quadratures(cls, dt, channels, ux, uy) -> "ControlSequence":
        ux, uy = np.atleast_2d(ux), np.atleast_2d(uy)
        return cls(dt, tuple(channels), np.hypot(ux, uy) / TWO_PI, np.arctan2(uy, ux))

    @classmethod
    def zeros(cls, dt, channels, n_steps) -> "ControlSequence":
        shape = (len(channels), n_steps)
        return cls(dt, tuple(channels), np.zeros(shape), np.zeros(shape))

    def split(self, k: int) -> tuple["ControlSequence", "ControlSequence"]:
        if not 0 < k < self.n_steps:
            raise ValueError("split point must be inside the sequence")
        a = ControlSequence(self.dt, self.channels, self.amplitudes_hz[:, :k], self.phases[:, :k])
        b = ControlSequence(self.dt, self.channels, self.amplitudes_hz[:, k:], self.phases[:, k:])
        return a, b


def channel_operators(system: SpinSystem, channels: Sequence[Channel]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per channel, the (X, Y) drive operators (1/2) sum sigma_{x,y} over its species."""
    n = system.n_spins
    out = []
    for ch in channels:
        spins = system.spins_of(ch.species)
        x = sum(embed(0.5 * SIGMA["x"], k, n) for k in spins)
        y = sum(embed(0.5 * SIGMA["y"], k, n) for k in spins)
        out.append((x, y))
    return out


def carrier_ramps(channels: Sequence[Channel], dt: float, n_steps: int, t0: float = 0.0) -> np.ndarray:
    """Frame phase of each channel at each step midpoint, shape (n_channels, n_steps)."""
    t_mid = t0 + (np.arange(n_steps) + 0.5) * dt
    offsets = np.array([c.offset_hz for c in channels], dtype=float)
    return TWO_PI * offsets[:, None] * t_mid[None, :]


def step_hamiltonians(
    system: SpinSystem,
    controls: ControlSequence,
    mode: str = "weak",
    rf_scale: float = 1.0,
    field_offset_hz: float = 0.0,
) -> np.ndarray:
    """Stack (K, d, d) of the frozen rotating-frame Hamiltonian for every step."""
    drift = natural_hamiltonian(system.shifted(field_offset_hz), mode)
    ops = channel_operators(system, controls.channels)
    ux, uy = controls.quadratures()
    theta = carrier_ramps(controls.channels, controls.dt, controls.n_steps)
    # rotate quadratures into the species frame
    cx = ux * np.cos(theta) - uy * np.sin(theta)
    cy = ux * np.sin(theta) + uy * np.cos(theta)
    hs = np.broadcast_to(drift, (controls.n_steps,) + drift.shape).copy()
    for c, (x, y) in enumerate(ops):
        hs += rf_scale * (cx[c][:, None, None] * x + cy[c][:, None, None] * y)
    return hs


def ordered_product(us: np.ndarray) -> np.ndarray:
    """U_K ... U_2 U_1 for a stack ordered in time."""
    out = np.eye(us.shape[-1], dtype=complex)
    for u in us:
        out = u @ out
    return out


def evolve_controls(
    system: SpinSystem,
    controls: ControlSequence,
    hamiltonian_mode: str = "weak",
    rf_scale: float = 1.0,
    field_offset_hz: float = 0.0,
) -> np.ndarray:
    """Simulated propagator U_sim = U_K ... U_1 under a control sequence."""
    for ch in controls.channels:
        system.spins_of(ch.species)
    hs = step_hamiltonians(system, controls, hamiltonian_mode, rf_scale, field_offset_hz)
    return ordered_product(propagator_step(hs, controls.dt))


def check_step_size(system: SpinSystem, controls: ControlSequence, mode: str = "weak") -> float:
    """Return max|H| dt over the sequence, warning when it exceeds the frozen-step budget."""
    hs = step_hamiltonians(system, controls, mode)
    worst = float(np.max(np.abs(hs))) * controls.dt
    if worst > MAX_PHASE_PER_STEP:
        warnings.warn(
            f"max|H| dt = {worst:.3g} rad exceeds {MAX_PHASE_PER_STEP} rad; consider dt <= "
            f"{suggest_dt(worst / controls.dt):.3g} s",
            stacklevel=2,
        )
    return worst


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True, eq=False)
class DensityState:
    matrix: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] & (m.shape[0] - 1):
            raise ValueError("density matrix must be square with a power-of-two dimension")
        if self.validate:
            if abs(np.trace(m) - 1) > DENSITY_TRACE_TOL:
                raise ValueError(f"density matrix trace {np.trace(m).real:.12g} != 1")
            if np.max(np.abs(m - m.conj().T)) > DENSITY_HERMITIAN_TOL:
                raise ValueError("density matrix is not Hermitian")
            if np.min(np.linalg.eigvalsh(m)) < -DENSITY_EIG_TOL:
                raise ValueError("density matrix has negative eigenvalues")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_spins(self) -> int:
        return self.dim.bit_length() - 1

    @classmethod
    def pure(cls, psi) -> "DensityState":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def basis(cls, index: int, n_spins: int) -> "DensityState":
        psi = np.zeros(2**n_spins, dtype=complex)
        psi[index] = 1.0
        return cls.pure(psi)


def evolve_state(rho: DensityState, u: np.ndarray) -> DensityState:
    u = np.asarray(u)
    if u.shape != rho.matrix.shape:
        raise ValueError(f"dimension mismatch: state {rho.matrix.shape} vs propagator {u.shape}")
    out = u @ rho.matrix @ u.conj().T
    return DensityState(0.5 * (out + out.conj().T))


def bloch_components(rho: DensityState, spin: int) -> tuple[float, float, float]:
    n = rho.n_spins
    return tuple(float(np.real(np.trace(rho.matrix @ embed(SIGMA[a], spin, n)))) for a in "xyz")


# ---------------------------------------------------------------------------
# fidelities


def _pair(u_sim, u_goal):
    u_sim, u_goal = np.asarray(u_sim), np.asarray(u_goal)
    if u_sim.shape != u_goal.shape or u_sim.ndim != 2:
        raise ValueError(f"dimension mismatch: {u_sim.shape} vs {u_goal.shape}")
    return u_sim, u_goal


def gate_fidelity(u_sim: np.ndarray, u_goal: np.ndarray) -> float:
    """|Tr(U_sim^dagger U_goal)|^2 / d^2, insensitive to global phase."""
    u_sim, u_goal = _pair(u_sim, u_goal)
    d = u_sim.shape[0]
    overlap = np.vdot(u_sim, u_goal)  # Tr(U_sim^dagger U_goal)
    return float(min(1.0, abs(overlap) ** 2 / d**2))


def worst_case_state_fidelity(u_sim: np.ndarray, u_goal: np.ndarray) -> float:
    """min over pure |psi> of |<psi| U_goal^dagger U_sim |psi>|^2.

    The overlap ranges over the convex hull of the eigenvalues of
    W = U_goal^dagger U_sim on the unit circle; its distance to the origin is
    set by the largest angular gap between eigenphases.
    """
    u_sim, u_goal = _pair(u_sim, u_goal)
    w = u_goal.conj().T @ u_sim
    phases = np.sort(np.mod(np.angle(np.linalg.eigvals(w)), 2 * np.pi))
    gaps = np.diff(np.concatenate([phases, [phases[0] + 2 * np.pi]]))
    largest = float(np.max(gaps))
    if largest <= np.pi:
        return 0.0
    arc = 2 * np.pi - largest
    return float(np.cos(arc / 2) ** 2)


# ---------------------------------------------------------------------------
# CSV exchange format


def controls_to_csv(controls: ControlSequence) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for k in range(controls.n_steps):
        t = k * controls.dt
        for c, ch in enumerate(controls.channels):
            writer.writerow(
                [repr(t), ch.name, repr(float(controls.amplitudes_hz[c, k])), repr(float(controls.phases[c, k]))]
            )
    return buf.getvalue()


def controls_from_csv(text: str, dt: float | None = None) -> ControlSequence:
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader, [])]
    if header != CSV_HEADER:
        raise ValueError(f"control CSV header must be {', '.join(CSV_HEADER)}")
    rows: dict[float, dict[str, tuple[float, float]]] = {}
    order: list[str] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 4:
            raise ValueError(f"line {lineno}: expected 4 columns")
        t, name, amp, phase = (r.strip() for r in row)
        t = float(t)
        step = rows.setdefault(t, {})
        if name in step:
            raise ValueError(f"line {lineno}: duplicate channel {name!r} at t={t}")
        if name not in order:
            order.append(name)
        step[name] = (float(amp), float(phase))
    if not rows:
        raise ValueError("control CSV has no rows")
    times = sorted(rows)
    if len(times) > 1:
        inferred = times[1] - times[0]
        expected = times[0] + inferred * np.arange(len(times))
        if np.max(np.abs(np.array(times) - expected)) > 1e-9:
            raise ValueError("control CSV time column is not uniform to 1e-9 s")
        dt = inferred
    elif dt is None:
        raise ValueError("a single-step control CSV needs an explicit dt")
    amps = np.zeros((len(order), len(times)))
    phases = np.zeros_like(amps)
    for k, t in enumerate(times):
        for c, name in enumerate(order):
            if name not in rows[t]:
                raise ValueError(f"channel {name!r} missing at t={t}")
            amps[c, k], phases[c, k] = rows[t][name]
    return ControlSequence(dt, tuple(Channel.parse(n) for n in order), amps, phases)


def write_controls(controls: ControlSequence, path) -> None:
    Path(path).write_text(controls_to_csv(controls))


def read_controls(path, dt: float | None = None) -> ControlSequence:
    return controls_from_csv(Path(path).read_text(), dt)
