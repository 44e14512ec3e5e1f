"""
Symbolic pulse sequences and the compiler passes that act on them.

A :class:`PulseSequence` is an ordered list of events plus a ``frame_record``:
the per-spin z-rotation that has been commuted past the end of the sequence.
Its meaning as an operator is

    R_z(frame_record) . E_n ... E_2 E_1

where hard pulses are ideal rotations on the addressed spins, delays are free
evolution under the weak-coupling Hamiltonian and ``VirtualZ`` events are
exact z-rotations.

Finite-duration pulses are referenced to their centre: a pulse of length t_p
is the ideal rotation preceded and followed by t_p/2 of free evolution plus
whatever the drive does in between. Every spin of a driven species feels the
field, at the carrier of the first addressed spin of that species.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.linalg import hadamard

from . import gates
from .dynamics import gate_fidelity, propagator_step
from .spins import (
    TWO_PI,
    SpinSystem,
    drive_operator,
    make_system,
    natural_hamiltonian,
    z_rotation,
)

CERTIFICATE_TOL = 1e-9
FIT_RESIDUAL_TOL = 1e-3


class CompilationError(RuntimeError):
    pass


class FirstOrderFitError(RuntimeError):
    pass


class InfeasibleCorrectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Delay:
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "duration", float(self.duration))
        if not (self.duration >= 0 and math.isfinite(self.duration)):
            raise ValueError("delay duration must be finite and non-negative")


@dataclass(frozen=True)
class HardPulse:
    spins: tuple[int, ...]
    angle: float
    phase: float = 0.0
    duration: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "spins", tuple(int(s) for s in self.spins))
        if not self.spins:
            raise ValueError("a hard pulse must address at least one spin")
        if not (math.isfinite(self.angle) and math.isfinite(self.phase)):
            raise ValueError("pulse angle and phase must be finite")
        if not (self.duration >= 0 and math.isfinite(self.duration)):
            raise ValueError("pulse duration must be finite and non-negative")


@dataclass(frozen=True)
class ShapedPulse:
    """Amplitude-modulated pulse on one channel (species).

    ``envelope`` holds omega_nut samples in rad/s, each lasting
    ``duration / len(envelope)``. ``targets``/``angle`` describe the rotation
    the pulse is meant to perform; they are only used as its ideal form.
    """

    channel: str
    envelope: tuple[float, ...]
    duration: float
    carrier_offset_hz: float = 0.0
    phase: float = 0.0
    angle: float = 0.0
    targets: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "envelope", tuple(float(x) for x in self.envelope))
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if not self.duration > 0:
            raise ValueError("shaped pulse duration must be positive")
        if not self.envelope:
            raise ValueError("shaped pulse needs envelope samples")

    @property
    def dt(self) -> float:
        return self.duration / len(self.envelope)


@dataclass(frozen=True)
class VirtualZ:
    spin: int
    angle: float


Event = Union[Delay, HardPulse, ShapedPulse, VirtualZ]
PULSES = (HardPulse, ShapedPulse)


@dataclass(frozen=True)
class PulseSequence:
    n_spins: int
    events: tuple = ()
    frame_record: tuple[float, ...] = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        frame = self.frame_record
        if frame is None:
            frame = (0.0,) * self.n_spins
        frame = tuple(float(f) for f in frame)
        if len(frame) != self.n_spins:
            raise ValueError("frame_record needs one angle per spin")
        object.__setattr__(self, "frame_record", frame)
        for ev in self.events:
            for s in _event_spins(ev):
                if not 0 <= s < self.n_spins:
                    raise ValueError(f"event {ev} addresses spin {s} outside the register")

    @property
    def pulses(self) -> list:
        return [ev for ev in self.events if isinstance(ev, PULSES)]

    @property
    def duration(self) -> float:
        return sum(getattr(ev, "duration", 0.0) for ev in self.events)


def _event_spins(ev) -> tuple[int, ...]:
    if isinstance(ev, HardPulse):
        return ev.spins
    if isinstance(ev, VirtualZ):
        return (ev.spin,)
    if isinstance(ev, ShapedPulse):
        return ev.targets
    return ()


@dataclass(frozen=True, eq=False)
class ErrorModel:
    """First-order error angles around one pulse.

    Phase errors are z-rotations R_z(theta) = exp(-i theta sigma_z / 2);
    coupling errors are exp(-i c sigma_z^i sigma_z^j). ``pre_*`` act before
    the ideal pulse, ``post_*`` after it.
    """

    pre_phase: np.ndarray
    post_phase: np.ndarray
    pre_coupling: np.ndarray
    post_coupling: np.ndarray
    residual: float = 0.0

    @classmethod
    def zero(cls, n_spins: int) -> "ErrorModel":
        return cls(np.zeros(n_spins), np.zeros(n_spins), np.zeros((n_spins, n_spins)), np.zeros((n_spins, n_spins)))

    @property
    def n_spins(self) -> int:
        return len(self.pre_phase)

    def operators(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal (E_pre, E_post) on the full register."""
        return (
            _error_operator(self.pre_phase, self.pre_coupling),
            _error_operator(self.post_phase, self.post_coupling),
        )

    def is_zero(self) -> bool:
        return not (
            np.any(self.pre_phase) or np.any(self.post_phase) or np.any(self.pre_coupling) or np.any(self.post_coupling)
        )


def _z_diags(n: int) -> list[np.ndarray]:
    idx = np.arange(2**n)
    return [1.0 - 2.0 * ((idx >> (n - 1 - k)) & 1) for k in range(n)]


def _error_operator(phases, couplings) -> np.ndarray:
    n = len(phases)
    zs = _z_diags(n)
    gen = sum(0.5 * phases[k] * zs[k] for k in range(n)) + np.zeros(2**n)
    for i, j in combinations(range(n), 2):
        gen = gen + couplings[i, j] * zs[i] * zs[j]
    return np.diag(np.exp(-1j * gen))


# ---------------------------------------------------------------------------
# propagators


def pulse_carriers(pulse, system: SpinSystem) -> dict[str, float]:
    """Carrier (Hz, within the species frame) of every species a pulse drives."""
    if isinstance(pulse, ShapedPulse):
        return {pulse.channel: pulse.carrier_offset_hz}
    carriers: dict[str, float] = {}
    for s in pulse.spins:
        carriers.setdefault(system.spins[s].species.name, system.spins[s].offset_hz)
    return carriers


def _driven_propagator(
    system: SpinSystem,
    carriers: dict[str, float],
    samples: Sequence[float],
    phase: float,
    duration: float,
    mode: str,
) -> np.ndarray:
    n = system.n_spins
    h_nat = natural_hamiltonian(system, mode)
    driven = [k for k, s in enumerate(system.spins) if s.species.name in carriers]
    frame = np.zeros(2**n)
    for k, zk in zip(range(n), _z_diags(n)):
        name = system.spins[k].species.name
        if name in carriers:
            frame += np.pi * carriers[name] * zk
    h_frame = h_nat - np.diag(frame)
    drive = drive_operator(n, driven, phase)
    dt = duration / len(samples)
    hs = np.stack([h_frame + w * drive for w in samples])
    us = propagator_step(hs, dt)
    half = np.diag(np.exp(-1j * frame * duration / 2))
    out = half
    for u in us:
        out = u @ out
    return half @ out


def event_propagator(
    ev: Event,
    system: SpinSystem,
    mode: str = "weak",
    ideal: bool = True,
    carriers: dict[str, float] | None = None,
) -> np.ndarray:
    n = system.n_spins
    if isinstance(ev, Delay):
        return propagator_step(natural_hamiltonian(system, mode), ev.duration)
    if isinstance(ev, VirtualZ):
        angles = [0.0] * n
        angles[ev.spin] = ev.angle
        return z_rotation(angles)
    if isinstance(ev, HardPulse):
        if ideal or ev.duration == 0:
            return gates.local_rotation(n, ev.spins, ev.angle, ev.phase)
        carriers = carriers if carriers is not None else pulse_carriers(ev, system)
        return _driven_propagator(system, carriers, [ev.angle / ev.duration], ev.phase, ev.duration, mode)
    if isinstance(ev, ShapedPulse):
        if ideal and ev.targets:
            return gates.local_rotation(n, ev.targets, ev.angle, ev.phase)
        carriers = carriers if carriers is not None else pulse_carriers(ev, system)
        return _driven_propagator(system, carriers, ev.envelope, ev.phase, ev.duration, mode)
    raise TypeError(f"unknown event {ev!r}")


def sequence_propagator(seq: PulseSequence, system: SpinSystem, mode: str = "weak", ideal: bool = True) -> np.ndarray:
    """Operator meaning of a sequence, terminal frame rotation included.

    ``ideal=True`` treats every pulse as an instantaneous rotation; otherwise
    pulses with a duration are simulated with their drive.
    """
    if seq.n_spins != system.n_spins:
        raise ValueError("sequence and system sizes differ")
    u = np.eye(system.dim, dtype=complex)
    for ev in seq.events:
        u = event_propagator(ev, system, mode, ideal) @ u
    return z_rotation(seq.frame_record) @ u


def simulate_sequence(seq: PulseSequence, system: SpinSystem, mode: str = "weak") -> np.ndarray:
    return sequence_propagator(seq, system, mode, ideal=False)


def certificate(seq: PulseSequence, system: SpinSystem, target: np.ndarray) -> float:
    """Ideal-propagator gate fidelity against ``target``."""
    return gate_fidelity(sequence_propagator(seq, system, "weak", ideal=True), target)


# ---------------------------------------------------------------------------
# phase tracking


def _wrap(angle: float) -> float:
    return math.remainder(angle, 2 * math.pi)


def phase_track(seq: PulseSequence, system: SpinSystem | None = None) -> PulseSequence:
    """Commute every VirtualZ to the end of the sequence.

    A z-rotation by theta moved past a pulse of phase phi turns it into a pulse
    of phase phi - theta; delays commute with z-rotations in the weak-coupling
    picture. Hard pulses whose spins end up needing different phases are
    split. Shaped pulses need ``system`` and an equal frame on their channel.
    """
    frame = [0.0] * seq.n_spins
    out: list = []
    for ev in seq.events:
        if isinstance(ev, VirtualZ):
            frame[ev.spin] += ev.angle
        elif isinstance(ev, Delay):
            out.append(ev)
        elif isinstance(ev, HardPulse):
            groups: dict[float, list[int]] = {}
            for s in ev.spins:
                groups.setdefault(frame[s], []).append(s)
            for f, spins in groups.items():
                ph = ev.phase if f == 0 else _wrap(ev.phase - f)
                out.append(replace(ev, spins=tuple(spins), phase=ph))
        elif isinstance(ev, ShapedPulse):
            if system is None:
                raise ValueError("phase tracking through a shaped pulse needs the spin system")
            channel_frames = {frame[k] for k in system.spins_of(ev.channel)}
            if len(channel_frames) != 1:
                raise ValueError(f"spins on channel {ev.channel!r} carry different frames; cannot track")
            f = channel_frames.pop()
            out.append(ev if f == 0 else replace(ev, phase=_wrap(ev.phase - f)))
        else:
            raise TypeError(f"unknown event {ev!r}")
    record = tuple(_wrap(r + f) for r, f in zip(seq.frame_record, frame))
    return PulseSequence(seq.n_spins, tuple(out), record)


# ---------------------------------------------------------------------------
# refocusing


def _refocus_events(system: SpinSystem, active: Sequence[int], tau: float) -> list:
    """Delays and instantaneous pi pulses realising a refocused period ``tau``."""
    decoupled = [k for k in range(system.n_spins) if k not in active]
    if not decoupled:
        return [Delay(tau)]
    order = 1
    while order < len(decoupled) + 1:
        order *= 2
    signs = hadamard(order)
    seg = tau / order
    # boundary index -> spins flipped there; index ``order`` is the end of tau
    flips: dict[int, list[int]] = {}
    for row, spin in enumerate(decoupled, start=1):
        s = signs[row]
        for j in range(1, order):
            if s[j] != s[j - 1]:
                flips.setdefault(j, []).append(spin)
        if s[-1] < 0:
            flips.setdefault(order, []).append(spin)
    events: list = []
    last = 0
    for j in sorted(flips):
        if j > last:
            events.append(Delay((j - last) * seg))
        events.append(HardPulse(tuple(flips[j]), math.pi, 0.0))
        last = j
    if last < order:
        events.append(Delay((order - last) * seg))
    return events


def refocus_schedule(
    system: SpinSystem,
    active_pair: Sequence[int],
    tau: float,
) -> PulseSequence:
    """Free evolution for ``tau`` that keeps only couplings inside ``active_pair``.

    Each spin outside the active set follows one row of a Sylvester-Hadamard
    sign matrix (the all-ones row belongs to the active spins); a pi pulse
    sits at every sign change and at the end when the row finishes negative.
    Orthogonal rows cancel every unwanted coupling, and the Zeeman precession
    of the active spins is undone in ``frame_record``. Assumes the
    weak-coupling Hamiltonian.
    """
    if not tau > 0:
        raise ValueError("refocusing time must be positive")
    active = [system.index(k) for k in active_pair]
    if len(set(active)) != len(active) or len(active) > 2:
        raise ValueError("active set must hold at most two distinct spins")
    events = _refocus_events(system, active, tau)
    for k in active:
        events.append(VirtualZ(k, -TWO_PI * system.spins[k].offset_hz * tau))
    return phase_track(PulseSequence(system.n_spins, tuple(events)))


# ---------------------------------------------------------------------------
# CNOT


def compile_cnot(
    system: SpinSystem,
    control: int,
    target: int,
    pulse_duration: float = 0.0,
) -> PulseSequence:
    """Controlled-NOT from pi/2 pulses on the target and a 1/(2J) coupling period.

    CNOT = R_y^t(pi/2) . CZ . R_y^t(-pi/2) and
    CZ ~ exp(-i (pi/4) sgn(J) zz) R_z^c(-sgn(J) pi/2) R_z^t(-sgn(J) pi/2).
    Other spins are decoupled by refocusing. The ideal propagator is checked
    against the exact CNOT before returning.
    """
    c, t = system.index(control), system.index(target)
    if c == t:
        raise ValueError("control and target must differ")
    j = system.j_hz[c, t]
    if j == 0:
        raise CompilationError(f"no J coupling between spins {c} and {t}")
    if not system.weak_coupling_valid(c, t):
        raise CompilationError(
            f"spins {c} and {t} are strongly coupled; use numerical pulse design instead"
        )
    tau = 1.0 / (2.0 * abs(float(j)))
    sign = math.copysign(1.0, j)
    events: list = [HardPulse((t,), math.pi / 2, -math.pi / 2, pulse_duration)]
    events += _refocus_events(system, (c, t), tau)
    for k in (c, t):
        undo_zeeman = -TWO_PI * system.spins[k].offset_hz * tau
        events.append(VirtualZ(k, _wrap(undo_zeeman - sign * math.pi / 2)))
    events.append(HardPulse((t,), math.pi / 2, math.pi / 2, pulse_duration))
    seq = phase_track(PulseSequence(system.n_spins, tuple(events)))
    fid = certificate(seq, system, gates.cnot(system.n_spins, c, t))
    if fid < 1 - CERTIFICATE_TOL:
        raise CompilationError(f"compiled CNOT failed verification (fidelity {fid!r})")
    return seq


# ---------------------------------------------------------------------------
# selective pulses


def gaussian_pulse(
    channel: str,
    center_offset: float,
    angle: float,
    duration: float,
    n_samples: int = 64,
    phase: float = 0.0,
) -> ShapedPulse:
    """Gaussian envelope truncated at +-3 sigma (sigma = duration/6).

    Samples sit at interval midpoints and are scaled so that
    sum(omega_k) * dt equals ``angle``.
    """
    if not duration > 0:
        raise ValueError("pulse duration must be positive")
    if n_samples < 8:
        raise ValueError("a Gaussian pulse needs at least 8 samples")
    sigma = duration / 6.0
    dt = duration / n_samples
    t = (np.arange(n_samples) + 0.5) * dt
    shape = np.exp(-0.5 * ((t - duration / 2) / sigma) ** 2)
    env = shape * angle / (np.sum(shape) * dt)
    return ShapedPulse(channel, tuple(env), duration, center_offset, phase, angle)


def excitation_profile(pulse: ShapedPulse, detunings_hz: Iterable[float]) -> np.ndarray:
    """Transverse magnetisation left on a lone spin at each detuning, starting from |0>."""
    out = []
    for det in detunings_hz:
        sys1 = make_system([pulse.carrier_offset_hz + det], pulse.channel)
        u = event_propagator(pulse, sys1, ideal=False)
        psi = u[:, 0]
        mx = 2 * np.real(np.conj(psi[0]) * psi[1])
        my = 2 * np.imag(np.conj(psi[0]) * psi[1])
        out.append(math.hypot(mx, my))
    return np.array(out)


# ---------------------------------------------------------------------------
# first-order error estimation


def _local_factors(ideal: np.ndarray, n: int) -> list[np.ndarray]:
    """Split a product operator u_0 x u_1 x ... into its 2x2 factors."""
    factors = []
    for k in range(n):
        t = ideal.reshape([2] * (2 * n))
        perm = [k] + [a for a in range(n) if a != k] + [n + k] + [n + a for a in range(n) if a != k]
        t = np.transpose(t, perm).reshape(2, 2 ** (n - 1), 2, 2 ** (n - 1))
        m = np.transpose(t, (0, 2, 1, 3)).reshape(4, 4 ** (n - 1))
        uu, ss, _ = np.linalg.svd(m)
        if ss.size > 1 and ss[1] > 1e-8 * ss[0]:
            raise ValueError("ideal operator is not a product of single-spin rotations")
        f = uu[:, 0].reshape(2, 2)
        factors.append(f / np.sqrt(abs(np.linalg.det(f))))
    return factors


def _ideal_factors(pulse, n: int, ideal) -> list[np.ndarray]:
    if ideal is not None:
        ideal = np.asarray(ideal)
        if ideal.shape == (2**n, 2**n):
            return _local_factors(ideal, n)
        factors = [np.asarray(f) for f in ideal]
        if len(factors) != n:
            raise ValueError("ideal must be a full operator or one 2x2 factor per spin")
        return factors
    factors = [np.eye(2, dtype=complex) for _ in range(n)]
    spins = pulse.spins if isinstance(pulse, HardPulse) else pulse.targets
    if isinstance(pulse, ShapedPulse) and not spins:
        raise ValueError("shaped pulse has no declared targets; pass its ideal rotation explicitly")
    for s in spins:
        factors[s] = gates.rotation(pulse.angle, pulse.phase)
    return factors


def _fit_local_errors(u_sim: np.ndarray, u_ideal: np.ndarray, n: int, iterations: int = 60):
    """Gauss-Newton fit of U_sim ~ e^{i g} E_post U_ideal E_pre.

    Minimum-norm steps leave directions the data cannot see (commuting pre/post
    pairs) split evenly.
    """
    zs = _z_diags(n)
    gens = [0.5 * z for z in zs]
    if n == 2:
        gens.append(zs[0] * zs[1])
    m = len(gens)
    gens = np.array(gens)
    pre = np.zeros(m)
    post = np.zeros(m)
    gphase = float(np.angle(np.vdot(u_ideal, u_sim)))

    def model(pre, post, g):
        d_pre = np.exp(-1j * (pre @ gens))
        d_post = np.exp(-1j * (post @ gens))
        return np.exp(1j * g) * (d_post[:, None] * u_ideal * d_pre[None, :])

    def realify(z):
        return np.concatenate([z.real.ravel(), z.imag.ravel()])

    for _ in range(iterations):
        mod = model(pre, post, gphase)
        r = realify(mod - u_sim)
        cols = [realify(mod * (-1j * gens[k])[None, :]) for k in range(m)]
        cols += [realify((-1j * gens[k])[:, None] * mod) for k in range(m)]
        cols.append(realify(1j * mod))
        jac = np.stack(cols, axis=1)
        step = np.linalg.lstsq(jac, -r, rcond=1e-10)[0]
        pre += step[:m]
        post += step[m : 2 * m]
        gphase += step[-1]
        if np.max(np.abs(step)) < 1e-14:
            break
    residual = 1.0 - gate_fidelity(model(pre, post, gphase), u_sim)
    return pre, post, max(residual, 0.0)


def estimate_first_order_errors(
    pulse,
    system: SpinSystem,
    ideal=None,
    mode: str = "weak",
    threshold: float = FIT_RESIDUAL_TOL,
) -> ErrorModel:
    """Phase and coupling errors of a real pulse from 1- and 2-spin simulations.

    Each spin (and each pair) is simulated on its own reduced register with
    the pulse's full-system carriers; the result is fitted to
    E_post . U_ideal . E_pre with z and zz rotations. ``ideal`` may be the
    full product operator or a list of 2x2 factors; by default it is read off
    the pulse.
    """
    n = system.n_spins
    factors = _ideal_factors(pulse, n, ideal)
    carriers = pulse_carriers(pulse, system)
    model = ErrorModel.zero(n)
    worst = 0.0

    def simulate(idx):
        sub = system.subsystem(idx)
        if isinstance(pulse, HardPulse):
            if pulse.duration == 0:
                return gates.local_rotation(len(idx), [p for p, k in enumerate(idx) if k in pulse.spins], pulse.angle, pulse.phase)
            return _driven_propagator(sub, carriers, [pulse.angle / pulse.duration], pulse.phase, pulse.duration, mode)
        return _driven_propagator(sub, carriers, pulse.envelope, pulse.phase, pulse.duration, mode)

    for k in range(n):
        pre, post, res = _fit_local_errors(simulate([k]), factors[k], 1)
        model.pre_phase[k], model.post_phase[k] = pre[0], post[0]
        worst = max(worst, res)
    for i, j in combinations(range(n), 2):
        pre, post, res = _fit_local_errors(simulate([i, j]), np.kron(factors[i], factors[j]), 2)
        model.pre_coupling[i, j] = model.pre_coupling[j, i] = pre[2]
        model.post_coupling[i, j] = model.post_coupling[j, i] = post[2]
        worst = max(worst, res)
    if worst > threshold:
        raise FirstOrderFitError(
            f"first-order error model does not fit (residual {worst:.3g} > {threshold:.3g})"
        )
    return replace(model, residual=worst)


def estimate_sequence_errors(seq: PulseSequence, system: SpinSystem, mode: str = "weak", **kw) -> list:
    """One :class:`ErrorModel` (or None for instantaneous pulses) per pulse event."""
    out = []
    for ev in seq.pulses:
        if isinstance(ev, HardPulse) and ev.duration == 0:
            out.append(None)
        else:
            out.append(estimate_first_order_errors(ev, system, mode=mode, **kw))
    return out


def correct_delays(seq: PulseSequence, models: Sequence, system: SpinSystem) -> PulseSequence:
    """Cancel first-order pulse errors against the surrounding free evolution.

    Phase errors are undone with VirtualZ events on either side of the pulse.
    Coupling errors adjacent to a delay are absorbed by changing its length:
    each delay solves a small least-squares problem over its J-coupled pairs.
    Coupling errors with no neighbouring delay stay uncorrected. A negative
    required delay raises :class:`InfeasibleCorrectionError`.
    """
    pulses = seq.pulses
    if len(models) != len(pulses):
        raise ValueError(f"need one error model per pulse ({len(pulses)}), got {len(models)}")
    n = seq.n_spins
    model_of = {}
    it = iter(models)
    for pos, ev in enumerate(seq.events):
        if isinstance(ev, PULSES):
            model_of[pos] = next(it)

    def neighbour(pos, step):
        k = pos + step
        while 0 <= k < len(seq.events):
            ev = seq.events[k]
            if isinstance(ev, VirtualZ):
                k += step
                continue
            if isinstance(ev, PULSES):
                return model_of.get(k)
            return None
        return None

    jt = np.triu(system.j_hz, 1)
    norm = 0.5 * np.pi * float(np.sum(jt**2))
    out: list = []
    for pos, ev in enumerate(seq.events):
        if isinstance(ev, PULSES):
            m = model_of[pos]
            if m is None or m.is_zero():
                out.append(ev)
                continue
            out += [VirtualZ(k, -m.pre_phase[k]) for k in range(n) if m.pre_phase[k]]
            out.append(ev)
            out += [VirtualZ(k, -m.post_phase[k]) for k in range(n) if m.post_phase[k]]
        elif isinstance(ev, Delay):
            err = np.zeros((n, n))
            before, after = neighbour(pos, -1), neighbour(pos, +1)
            if before is not None:
                err += before.post_coupling
            if after is not None:
                err += after.pre_coupling
            if norm == 0 or not np.any(err):
                out.append(ev)
                continue
            shift = -float(np.sum(jt * np.triu(err, 1))) / norm
            new = ev.duration + shift
            if new < 0:
                raise InfeasibleCorrectionError(
                    f"delay of {ev.duration!r} s would need to become {new!r} s"
                )
            out.append(Delay(new))
            for k, s in enumerate(system.spins):
                if s.offset_hz:
                    out.append(VirtualZ(k, -TWO_PI * s.offset_hz * shift))
        else:
            out.append(ev)
    return PulseSequence(n, tuple(out), seq.frame_record)


# ---------------------------------------------------------------------------
# serialisation and display


def _event_to_dict(ev) -> dict:
    if isinstance(ev, Delay):
        return {"type": "delay", "duration": ev.duration}
    if isinstance(ev, HardPulse):
        return {"type": "hard", "spins": list(ev.spins), "angle": ev.angle, "phase": ev.phase, "duration": ev.duration}
    if isinstance(ev, ShapedPulse):
        return {
            "type": "shaped",
            "channel": ev.channel,
            "envelope": list(ev.envelope),
            "duration": ev.duration,
            "carrier_offset_hz": ev.carrier_offset_hz,
            "phase": ev.phase,
            "angle": ev.angle,
            "targets": list(ev.targets),
        }
    if isinstance(ev, VirtualZ):
        return {"type": "virtual_z", "spin": ev.spin, "angle": ev.angle}
    raise TypeError(f"unknown event {ev!r}")


def _event_from_dict(d: dict):
    kind = d.get("type")
    if kind == "delay":
        return Delay(float(d["duration"]))
    if kind == "hard":
        return HardPulse(tuple(d["spins"]), float(d["angle"]), float(d.get("phase", 0.0)), float(d.get("duration", 0.0)))
    if kind == "shaped":
        return ShapedPulse(
            d["channel"],
            tuple(d["envelope"]),
            float(d["duration"]),
            float(d.get("carrier_offset_hz", 0.0)),
            float(d.get("phase", 0.0)),
            float(d.get("angle", 0.0)),
            tuple(d.get("targets", ())),
        )
    if kind == "virtual_z":
        return VirtualZ(int(d["spin"]), float(d["angle"]))
    raise ValueError(f"unknown pulse-program event type {kind!r}")


def sequence_to_dict(seq: PulseSequence) -> dict:
    return {
        "n_spins": seq.n_spins,
        "events": [_event_to_dict(ev) for ev in seq.events],
        "frame_record": list(seq.frame_record),
    }


def sequence_from_dict(d: dict) -> PulseSequence:
    return PulseSequence(
        int(d["n_spins"]),
        tuple(_event_from_dict(e) for e in d.get("events", [])),
        tuple(d.get("frame_record") or [0.0] * int(d["n_spins"])),
    )


def save_sequence(seq: PulseSequence, path) -> None:
    Path(path).write_text(json.dumps(sequence_to_dict(seq), indent=2) + "\n")


def load_sequence(path) -> PulseSequence:
    return sequence_from_dict(json.loads(Path(path).read_text()))


def _fmt_time(t: float) -> str:
    if t >= 1e-3:
        return f"{t * 1e3:.4g}ms"
    if t >= 1e-6:
        return f"{t * 1e6:.4g}us"
    return f"{t * 1e9:.4g}ns"


def _fmt_pulse(angle: float, phase: float) -> str:
    deg = round(math.degrees(angle), 2)
    ph = round(math.degrees(phase) % 360, 2)
    axis = {0: "X", 90: "Y", 180: "-X", 270: "-Y"}.get(ph, f"{ph:g}")
    return f"{axis}:{deg:g}"


def render_timing(seq: PulseSequence, labels: Sequence[str] | None = None) -> str:
    """Aligned text timing diagram, one row per spin."""
    n = seq.n_spins
    labels = list(labels) if labels is not None else [f"q{k}" for k in range(n)]
    columns: list[list[str]] = []
    for ev in seq.events:
        cells = [""] * n
        if isinstance(ev, Delay):
            cells = [f"~{_fmt_time(ev.duration)}~"] * n
        elif isinstance(ev, HardPulse):
            for s in ev.spins:
                cells[s] = f"[{_fmt_pulse(ev.angle, ev.phase)}]"
        elif isinstance(ev, ShapedPulse):
            for s in ev.targets or range(n):
                cells[s] = f"({ev.channel} {_fmt_time(ev.duration)})"
        elif isinstance(ev, VirtualZ):
            cells[ev.spin] = f"z{math.degrees(ev.angle):+.1f}"
        columns.append(cells)
    widths = [max(len(c) for c in col) for col in columns]
    head = max(len(lab) for lab in labels)
    lines = []
    for k in range(n):
        row = [labels[k].ljust(head), "|"]
        for col, w in zip(columns, widths):
            row.append(col[k].center(w, "-") if col[k] else "-" * w)
        if any(seq.frame_record):
            row.append(f"| frame {math.degrees(seq.frame_record[k]):+.2f} deg")
        lines.append(" ".join(row))
    return "\n".join(lines)
