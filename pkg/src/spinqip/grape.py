"""
Gradient ascent pulse engineering and related numerical control tools.

Decision variables are the (x, y) quadratures of every channel at every
step, normalised by the amplitude bound ``omega_max``; each step's
quadrature pair is clipped back onto the disc of radius one after every
update. The objective is the weighted mean of the normalised trace fidelity
over a :class:`RobustnessEnsemble`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .dynamics import (
    Channel,
    ControlSequence,
    carrier_ramps,
    channel_operators,
    evolve_controls,
    gate_fidelity,
    worst_case_state_fidelity,
)
from .spins import TWO_PI, SpinSystem, natural_hamiltonian, pauli_embed

GRADIENT_MODES = ("exact-first-order", "approximate", "finite-difference")
METHODS = ("steepest-ascent", "conjugate-gradient", "simplex")
RANK_TOL = 1e-9


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings shared by the gradient and simplex optimisers.

    ``fd_step`` is relative to the amplitude bound. ``init_scale`` bounds the
    random initial amplitudes as a fraction of ``max_amplitude_hz``.
    """

    n_steps: int = 100
    dt: float = 1e-5
    max_iterations: int = 500
    target_fidelity: float = 0.999
    gradient_mode: str = "exact-first-order"
    method: str = "conjugate-gradient"
    seed: int = 0
    max_amplitude_hz: float = 10e3
    init_scale: float = 0.2
    fd_step: float = 1e-7
    armijo: float = 1e-4
    stall_window: int = 25
    stall_tolerance: float = 1e-10
    restarts: int = 0
    hamiltonian_mode: str = "full"

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not 0 < self.target_fidelity <= 1:
            raise ValueError("target_fidelity must lie in (0, 1]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.max_amplitude_hz > 0:
            raise ValueError("max_amplitude_hz must be positive")
        if self.hamiltonian_mode not in ("weak", "full"):
            raise ValueError("hamiltonian_mode must be 'weak' or 'full'")

    @property
    def omega_max(self) -> float:
        return TWO_PI * self.max_amplitude_hz

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizerConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown optimizer settings: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class EnsembleMember:
    rf_scale: float = 1.0
    field_offset_hz: float = 0.0
    weight: float = 1.0


@dataclass(frozen=True)
class RobustnessEnsemble:
    members: tuple[EnsembleMember, ...]

    def __post_init__(self):
        members = tuple(m if isinstance(m, EnsembleMember) else EnsembleMember(*m) for m in self.members)
        if not members:
            raise ValueError("a robustness ensemble needs at least one member")
        weights = np.array([m.weight for m in members], dtype=float)
        if np.any(weights < 0) or not np.all(np.isfinite(weights)) or weights.sum() <= 0:
            raise ValueError("ensemble weights must be non-negative with a positive sum")
        total = weights.sum()
        members = tuple(EnsembleMember(m.rf_scale, m.field_offset_hz, m.weight / total) for m in members)
        object.__setattr__(self, "members", members)

    @classmethod
    def nominal(cls) -> "RobustnessEnsemble":
        return cls((EnsembleMember(),))

    @classmethod
    def grid(cls, rf_scales: Sequence[float], offsets_hz: Sequence[float]) -> "RobustnessEnsemble":
        return cls(tuple(EnsembleMember(r, o, 1.0) for r in rf_scales for o in offsets_hz))

    @classmethod
    def default(cls, rf_spread: float = 0.05, offset_hz: float = 0.0) -> "RobustnessEnsemble":
        """Uniform 3 x 3 grid over rf scale 1 +- spread and field offset +- offset_hz."""
        return cls.grid((1 - rf_spread, 1.0, 1 + rf_spread), (-offset_hz, 0.0, offset_hz))


def default_channels(system: SpinSystem) -> tuple[Channel, ...]:
    return tuple(Channel(name, 0.0) for name in system.species)


# ---------------------------------------------------------------------------
# fitness and gradients


def _prefix_products(us: np.ndarray) -> np.ndarray:
    """P[k] = U_k ... U_0 by recursive doubling."""
    p = us.copy()
    shift = 1
    while shift < len(p):
        nxt = p.copy()
        nxt[shift:] = p[shift:] @ p[:-shift]
        p = nxt
        shift *= 2
    return p


def _suffix_products(us: np.ndarray) -> np.ndarray:
    """S[k] = U_{K-1} ... U_k."""
    s = us.copy()
    shift = 1
    while shift < len(s):
        nxt = s.copy()
        nxt[:-shift] = s[shift:] @ s[:-shift]
        s = nxt
        shift *= 2
    return s


def _tree_product(us: np.ndarray) -> np.ndarray:
    while len(us) > 1:
        if len(us) % 2:
            tail = us[-1:]
            us = us[:-1]
        else:
            tail = None
        us = us[1::2] @ us[0::2]
        if tail is not None:
            us = np.concatenate([us, tail])
    return us[0]


class ControlProblem:
    """Fitness and gradient of quadrature controls for a fixed target and ensemble.

    Controls ``u`` have shape (n_channels, n_steps, 2) in rad/s.
    """

    def __init__(
        self,
        system: SpinSystem,
        u_goal: np.ndarray,
        channels: Sequence[Channel],
        n_steps: int,
        dt: float,
        ensemble: RobustnessEnsemble | None = None,
        hamiltonian_mode: str = "full",
    ):
        u_goal = np.asarray(u_goal, dtype=complex)
        if u_goal.shape != (system.dim, system.dim):
            raise ValueError(f"goal must be {system.dim} x {system.dim}")
        self.system = system
        self.goal = u_goal
        self.channels = tuple(channels)
        self.n_steps = int(n_steps)
        self.dt = float(dt)
        self.dim = system.dim
        self.ensemble = ensemble or RobustnessEnsemble.nominal()
        self.drifts = [
            natural_hamiltonian(system.shifted(m.field_offset_hz), hamiltonian_mode) for m in self.ensemble.members
        ]
        ops = channel_operators(system, self.channels)
        theta = carrier_ramps(self.channels, self.dt, self.n_steps)
        c, s = np.cos(theta), np.sin(theta)
        dh = np.empty((len(self.channels), self.n_steps, 2, self.dim, self.dim), dtype=complex)
        for ch, (x, y) in enumerate(ops):
            dh[ch, :, 0] = c[ch][:, None, None] * x + s[ch][:, None, None] * y
            dh[ch, :, 1] = -s[ch][:, None, None] * x + c[ch][:, None, None] * y
        self.dh = dh

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.channels), self.n_steps, 2)

    def hamiltonians(self, u: np.ndarray, member: int) -> np.ndarray:
        scale = self.ensemble.members[member].rf_scale
        return self.drifts[member] + scale * np.einsum("ckq,ckqij->kij", u, self.dh)

    def _eig(self, u, member):
        lam, v = np.linalg.eigh(self.hamiltonians(u, member))
        e = np.exp(-1j * lam * self.dt)
        us = (v * e[:, None, :]) @ np.conj(np.swapaxes(v, 1, 2))
        return lam, v, e, us

    def member_propagator(self, u: np.ndarray, member: int = 0) -> np.ndarray:
        return _tree_product(self._eig(u, member)[3])

    def member_fitness(self, u: np.ndarray, member: int = 0) -> float:
        return gate_fidelity(self.member_propagator(u, member), self.goal)

    def fitness(self, u: np.ndarray) -> float:
        return float(sum(m.weight * self.member_fitness(u, k) for k, m in enumerate(self.ensemble.members)))

    def _member_gradient(self, u, member, mode):
        lam, v, e, us = self._eig(u, member)
        scale = self.ensemble.members[member].rf_scale
        pre = _prefix_products(us)
        suf = _suffix_products(us)
        eye = np.eye(self.dim, dtype=complex)[None]
        before = np.concatenate([eye, pre[:-1]])
        after = np.concatenate([suf[1:], eye])
        overlap = np.vdot(self.goal, pre[-1])
        lam_k = before @ np.conj(self.goal.T)[None] @ after
        if mode == "approximate":
            m = us @ lam_k
            do = -1j * self.dt * np.einsum("klj,ckqjl->ckq", m, self.dh)
        else:
            vh = np.conj(np.swapaxes(v, 1, 2))
            lam_eig = vh @ lam_k @ v
            hu = vh[None, :, None] @ self.dh @ v[None, :, None]
            diff = lam[:, :, None] - lam[:, None, :]
            ediff = e[:, :, None] - e[:, None, :]
            degenerate = np.abs(diff * self.dt) < 1e-10
            safe = np.where(degenerate, 1.0, diff)
            f = np.where(degenerate, -0.5j * self.dt * (e[:, :, None] + e[:, None, :]), ediff / safe)
            do = np.einsum("klj,ckqjl,kjl->ckq", lam_eig, hu, f)
        fit = abs(overlap) ** 2 / self.dim**2
        grad = 2.0 * scale * np.real(np.conj(overlap) * do) / self.dim**2
        return fit, grad

    def value_and_gradient(self, u: np.ndarray, mode: str = "exact-first-order", fd_step: float = 1e-3):
        """Ensemble fitness and dPhi/du; ``fd_step`` is the absolute step in rad/s."""
        if mode == "finite-difference":
            grad = np.zeros(self.shape)
            for idx in np.ndindex(*self.shape):
                up, dn = u.copy(), u.copy()
                up[idx] += fd_step
                dn[idx] -= fd_step
                grad[idx] = (self.fitness(up) - self.fitness(dn)) / (2 * fd_step)
            return self.fitness(u), grad
        if mode not in GRADIENT_MODES:
            raise ValueError(f"unknown gradient mode {mode!r}")
        total, grad = 0.0, np.zeros(self.shape)
        for k, m in enumerate(self.ensemble.members):
            fit, g = self._member_gradient(u, k, mode)
            total += m.weight * fit
            grad += m.weight * g
        return total, grad


def controls_to_array(controls: ControlSequence) -> np.ndarray:
    ux, uy = controls.quadratures()
    return np.stack([ux, uy], axis=-1)


def array_to_controls(u: np.ndarray, channels, dt: float) -> ControlSequence:
    return ControlSequence.from_quadratures(dt, channels, u[..., 0], u[..., 1])


def fitness(
    controls: ControlSequence,
    system: SpinSystem,
    u_goal: np.ndarray,
    hamiltonian_mode: str = "full",
    ensemble: RobustnessEnsemble | None = None,
) -> float:
    """Normalised |Tr(U_sim^dag U_goal)|^2 / d^2, averaged over ``ensemble``."""
    if ensemble is None:
        return gate_fidelity(evolve_controls(system, controls, hamiltonian_mode), u_goal)
    return float(
        sum(
            m.weight * gate_fidelity(evolve_controls(system, controls, hamiltonian_mode, m.rf_scale, m.field_offset_hz), u_goal)
            for m in ensemble.members
        )
    )


def fitness_gradient(
    controls: ControlSequence,
    system: SpinSystem,
    u_goal: np.ndarray,
    mode: str = "exact-first-order",
    hamiltonian_mode: str = "full",
    ensemble: RobustnessEnsemble | None = None,
    fd_step: float | None = None,
) -> np.ndarray:
    """dPhi/du per channel, step and quadrature (x, y), in 1/(rad/s).

    ``fd_step`` defaults to 1e-7 of the largest control amplitude (or of
    2 pi x 1 kHz for all-zero controls).
    """
    prob = ControlProblem(system, u_goal, controls.channels, controls.n_steps, controls.dt, ensemble, hamiltonian_mode)
    u = controls_to_array(controls)
    if fd_step is None:
        scale = float(np.max(np.abs(u))) or TWO_PI * 1e3
        fd_step = 1e-7 * scale
    return prob.value_and_gradient(u, mode, fd_step)[1]


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class OptimizationResult:
    controls: ControlSequence
    trace: list[float]
    status: str
    iterations: int
    fidelity: float
    worst_case_fidelity: float
    config: OptimizerConfig
    evaluations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def __iter__(self):
        yield self.controls
        yield self.trace

    def artifact(self) -> dict:
        """JSON-ready run record (timings are kept elsewhere so the record is reproducible)."""
        return {
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "status": self.status,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "fitness_trace": list(self.trace),
            "final_fidelity": self.fidelity,
            "final_worst_case_fidelity": self.worst_case_fidelity,
            **self.extra,
        }


def _clip(x: np.ndarray) -> np.ndarray:
    norm = np.hypot(x[..., 0], x[..., 1])
    factor = np.where(norm > 1.0, 1.0 / np.maximum(norm, 1e-300), 1.0)
    return x * factor[..., None]


def _random_start(rng: np.random.Generator, shape, init_scale: float) -> np.ndarray:
    amp = rng.uniform(0.0, init_scale, size=shape[:2])
    phase = rng.uniform(0.0, TWO_PI, size=shape[:2])
    return np.stack([amp * np.cos(phase), amp * np.sin(phase)], axis=-1)


class _Ascent:
    """Line-searched gradient ascent on normalised variables x = u / omega_max."""

    def __init__(self, problem: ControlProblem, config: OptimizerConfig):
        self.problem = problem
        self.config = config
        self.wmax = config.omega_max
        self.evaluations = 0

    def value(self, x):
        self.evaluations += 1
        return self.problem.fitness(x * self.wmax)

    def value_grad(self, x):
        self.evaluations += 1
        cfg = self.config
        f, g = self.problem.value_and_gradient(x * self.wmax, cfg.gradient_mode, cfg.fd_step * self.wmax)
        return f, g * self.wmax

    def run(self, x0: np.ndarray, budget: int):
        cfg = self.config
        cg = cfg.method == "conjugate-gradient"
        x = _clip(x0)
        f, g = self.value_grad(x)
        trace = [f]
        p = g.copy()
        alpha = None
        status = "max-iterations"
        it = 0
        while True:
            if f >= cfg.target_fidelity:
                status = "converged"
                break
            if it >= budget:
                break
            slope = float(np.vdot(g, p))
            if slope <= 0:
                p, slope = g.copy(), float(np.vdot(g, g))
            if slope <= 0:
                status = "stalled"
                break
            pmax = float(np.max(np.abs(p)))
            alpha = 0.1 / pmax if alpha is None else min(2.0 * alpha, 1.0 / pmax)
            accepted = False
            for _ in range(50):
                xn = _clip(x + alpha * p)
                fn = self.value(xn)
                if fn > f and fn >= f + cfg.armijo * float(np.vdot(g, xn - x)):
                    accepted = True
                    break
                alpha *= 0.5
            it += 1
            if not accepted:
                if cg and not np.array_equal(p, g):
                    p = g.copy()
                    alpha = None
                    trace.append(f)
                    continue
                status = "stalled"
                trace.append(f)
                break
            fn, gn = self.value_grad(xn)
            if cg:
                beta = max(0.0, float(np.vdot(gn, gn - g)) / max(float(np.vdot(g, g)), 1e-300))
                p = gn + beta * p
            else:
                p = gn.copy()
            x, f, g = xn, fn, gn
            trace.append(f)
            w = cfg.stall_window
            if len(trace) > w and trace[-1] - trace[-1 - w] < cfg.stall_tolerance * abs(trace[-1]):
                status = "stalled"
                break
        return x, f, trace, status, it


def grape_optimize(
    system: SpinSystem,
    u_goal: np.ndarray,
    config: OptimizerConfig,
    ensemble: RobustnessEnsemble | None = None,
    channels: Sequence[Channel] | None = None,
    initial: ControlSequence | None = None,
) -> OptimizationResult:
    """Optimise piecewise-constant controls towards ``u_goal``.

    Failing to reach ``target_fidelity`` is reported through ``status``
    ("max-iterations" or "stalled"), never raised. The trace holds the best
    fitness after every iteration and never decreases. ``method="simplex"``
    is routed to :func:`simplex_optimize` with ``n_steps`` periods.
    """
    if config.method == "simplex":
        return simplex_optimize(system, u_goal, config.n_steps, config, channels=channels)
    channels = tuple(channels) if channels is not None else default_channels(system)
    problem = ControlProblem(system, u_goal, channels, config.n_steps, config.dt, ensemble, config.hamiltonian_mode)
    rng = np.random.default_rng(config.seed)
    engine = _Ascent(problem, config)
    if initial is not None:
        if initial.n_steps != config.n_steps or initial.channels != channels:
            raise ValueError("initial controls do not match the configured steps/channels")
        x0 = controls_to_array(initial) / config.omega_max
    else:
        x0 = _random_start(rng, problem.shape, config.init_scale)
    best = None
    trace: list[float] = []
    used = 0
    for attempt in range(config.restarts + 1):
        x, f, tr, status, it = engine.run(x0, config.max_iterations - used)
        used += it
        if best is None or f > best[1]:
            best = (x, f, status)
        floor = trace[-1] if trace else -np.inf
        trace += [max(floor, v) for v in (tr if not trace else tr[1:])]
        if status != "stalled" or used >= config.max_iterations:
            break
        x0 = _random_start(rng, problem.shape, config.init_scale)
    x, f, status = best
    if status == "stalled" and f >= config.target_fidelity:
        status = "converged"
    controls = array_to_controls(x * config.omega_max, channels, config.dt)
    u_nom = evolve_controls(system, controls, config.hamiltonian_mode)
    return OptimizationResult(
        controls=controls,
        trace=trace,
        status=status,
        iterations=used,
        fidelity=gate_fidelity(u_nom, u_goal),
        worst_case_fidelity=worst_case_state_fidelity(u_nom, u_goal),
        config=config,
        evaluations=engine.evaluations,
        extra={"ensemble_fitness": f},
    )


# ---------------------------------------------------------------------------
# simplex baseline


def simplex_optimize(
    system: SpinSystem,
    u_goal: np.ndarray,
    n_periods: int,
    config: OptimizerConfig,
    channels: Sequence[Channel] | None = None,
    total_duration: float | None = None,
) -> OptimizationResult:
    """Few-period baseline: constant amplitude and phase per channel plus a duration per period.

    Nelder-Mead minimises 1 - Phi over continuous durations first. Durations
    are then rounded to whole ``config.dt`` steps and amplitudes and phases
    are polished on the resulting grid, which is what the returned
    ControlSequence represents. Channel carriers enter as phase ramps.
    """
    if int(n_periods) != n_periods or n_periods < 1:
        raise ValueError("n_periods must be a positive integer")
    channels = tuple(channels) if channels is not None else default_channels(system)
    total = total_duration if total_duration is not None else config.n_steps * config.dt
    n_ch = len(channels)
    wmax = config.omega_max
    drift = natural_hamiltonian(system, config.hamiltonian_mode)
    ops = channel_operators(system, channels)
    # carrier-frame generator per channel
    frame_gen = np.zeros(system.dim)
    for ch in channels:
        for k in system.spins_of(ch.species):
            frame_gen += 0.5 * TWO_PI * ch.offset_hz * np.real(np.diag(pauli_embed("z", k, system.n_spins)))
    if len({ch.species for ch in channels}) != n_ch:
        raise ValueError("simplex baseline supports one channel per species")
    h_frame = drift - np.diag(frame_gen)
    span = 4 * n_periods
    evaluations = [0]

    def propagate(amps, phases, taus):
        u = np.eye(system.dim, dtype=complex)
        for p in range(n_periods):
            h = h_frame.copy()
            for c, (x, y) in enumerate(ops):
                h = h + amps[c, p] * (np.cos(phases[c, p]) * x + np.sin(phases[c, p]) * y)
            lam, v = np.linalg.eigh(h)
            u = (v * np.exp(-1j * lam * taus[p])) @ np.conj(v.T) @ u
        t_end = float(np.sum(taus))
        return np.diag(np.exp(-1j * frame_gen * t_end)) @ u

    def unpack(theta):
        theta = np.asarray(theta)
        amps = wmax * np.clip(theta[: n_ch * n_periods].reshape(n_ch, n_periods), 0.0, 1.0)
        phases = theta[n_ch * n_periods : 2 * n_ch * n_periods].reshape(n_ch, n_periods)
        taus = (total / n_periods) * np.clip(theta[2 * n_ch * n_periods :], 0.0, None)
        return amps, phases, taus

    def loss(theta):
        evaluations[0] += 1
        return 1.0 - gate_fidelity(propagate(*unpack(theta)), u_goal)

    rng = np.random.default_rng(config.seed)
    best = None
    budget = max(config.max_iterations, 1) * max(span, 1)
    for attempt in range(config.restarts + 1):
        start = np.concatenate(
            [
                rng.uniform(0.2, 0.8, n_ch * n_periods),
                rng.uniform(0.0, TWO_PI, n_ch * n_periods),
                np.ones(n_periods),
            ]
        )
        if best is not None:
            start = best.x + 0.05 * rng.standard_normal(start.size)
        for _ in range(5):
            res = minimize(
                loss,
                start,
                method="Nelder-Mead",
                options={"maxfev": budget, "xatol": 1e-12, "fatol": 1e-15, "adaptive": True},
            )
            if best is None or res.fun < best.fun:
                best = res
            if res.fun <= 1 - config.target_fidelity or np.allclose(res.x, start, atol=1e-10):
                break
            start = res.x
        if best.fun <= 1 - config.target_fidelity:
            break
    amps, phases, taus = unpack(best.x)
    steps = np.maximum(np.rint(taus / config.dt).astype(int), 0)
    if steps.sum() == 0:
        steps[0] = 1
    period_of_step = np.repeat(np.arange(n_periods), steps)

    def expand(a, ph):
        return ControlSequence(config.dt, channels, a[:, period_of_step] / TWO_PI, ph[:, period_of_step])

    def grid_loss(theta):
        evaluations[0] += 1
        a = wmax * np.clip(theta[: n_ch * n_periods].reshape(n_ch, n_periods), 0.0, 1.0)
        ph = theta[n_ch * n_periods :].reshape(n_ch, n_periods)
        return 1.0 - gate_fidelity(evolve_controls(system, expand(a, ph), config.hamiltonian_mode), u_goal)

    theta_grid = np.concatenate([(amps / wmax).ravel(), phases.ravel()])
    polish = minimize(
        grid_loss,
        theta_grid,
        method="Nelder-Mead",
        options={"maxfev": budget, "xatol": 1e-12, "fatol": 1e-15, "adaptive": True},
    )
    theta_final = polish.x if polish.fun <= grid_loss(theta_grid) else theta_grid
    a = wmax * np.clip(theta_final[: n_ch * n_periods].reshape(n_ch, n_periods), 0.0, 1.0)
    ph = np.mod(theta_final[n_ch * n_periods :].reshape(n_ch, n_periods), TWO_PI)
    controls = expand(a, ph)
    u_nom = evolve_controls(system, controls, config.hamiltonian_mode)
    fid = gate_fidelity(u_nom, u_goal)
    return OptimizationResult(
        controls=controls,
        trace=[1.0 - best.fun, fid],
        status="converged" if fid >= config.target_fidelity else "max-iterations",
        iterations=int(best.nit + polish.nit),
        fidelity=fid,
        worst_case_fidelity=worst_case_state_fidelity(u_nom, u_goal),
        config=config,
        evaluations=evaluations[0],
        extra={
            "continuous_fidelity": 1.0 - float(best.fun),
            "period_durations_s": [float(t) for t in taus],
            "period_steps": [int(s) for s in steps],
        },
    )


# ---------------------------------------------------------------------------
# robustness sweep


def inhomogeneity_sweep(
    controls: ControlSequence,
    system: SpinSystem,
    u_goal: np.ndarray,
    rf_scales: Sequence[float],
    offsets_hz: Sequence[float],
    hamiltonian_mode: str = "full",
) -> list[tuple[float, float, float, float]]:
    """Rows (rf_scale, offset_hz, gate fidelity, worst-case state fidelity)."""
    rows = []
    for r in rf_scales:
        for o in offsets_hz:
            u = evolve_controls(system, controls, hamiltonian_mode, float(r), float(o))
            rows.append((float(r), float(o), gate_fidelity(u, u_goal), worst_case_state_fidelity(u, u_goal)))
    return rows


def sweep_to_csv(rows) -> str:
    lines = ["rf_scale,offset_hz,avg_fidelity,worst_fidelity"]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def sweep_from_csv(text: str) -> list[tuple[float, float, float, float]]:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "rf_scale,offset_hz,avg_fidelity,worst_fidelity":
        raise ValueError("not a fidelity sweep CSV")
    return [tuple(float(v) for v in ln.split(",")) for ln in lines[1:]]


# ---------------------------------------------------------------------------
# controllability


def _as_real(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a.real.ravel(), a.imag.ravel()])


def controllability_rank(h_drift: np.ndarray, h_controls: Sequence[np.ndarray], tol: float = RANK_TOL) -> int:
    """Dimension of the real Lie algebra generated by i H_drift and i H_c (traceless parts).

    Iterated commutators with the generators are orthogonalised against the
    growing basis; the final dimension is the numerical rank of the basis
    (singular values above ``tol`` times the largest).
    """
    mats = [np.asarray(h_drift, dtype=complex)] + [np.asarray(h, dtype=complex) for h in h_controls]
    d = mats[0].shape[0]
    for h in mats:
        if h.shape != (d, d):
            raise ValueError("all Hamiltonians must share one dimension")
        if not np.allclose(h, h.conj().T, atol=1e-10 * max(1.0, float(np.max(np.abs(h))))):
            raise ValueError("controllability needs Hermitian operators")
    cap = d * d - 1
    eye = np.eye(d)

    def traceless(a):
        return a - np.trace(a) / d * eye

    basis_mats: list[np.ndarray] = []
    basis_vecs: list[np.ndarray] = []

    def add(a, scale: float) -> bool:
        # ``scale`` bounds the norm of ``a``; anything far below it is rounding noise
        a = traceless(a)
        norm = np.linalg.norm(a)
        if norm <= tol * scale:
            return False
        v = _as_real(a / norm)
        for _ in range(2):
            for b in basis_vecs:
                v = v - np.dot(b, v) * b
        r = np.linalg.norm(v)
        if r <= tol:
            return False
        v = v / r
        basis_vecs.append(v)
        half = d * d
        basis_mats.append((v[:half] + 1j * v[half:]).reshape(d, d))
        return True

    gens = []
    for h in mats:
        if add(1j * h, np.linalg.norm(h)):
            gens.append(basis_mats[-1])
    frontier = list(basis_mats)
    while frontier and len(basis_mats) < cap:
        new = []
        for a in frontier:
            for g in gens:
                if len(basis_mats) >= cap:
                    break
                if add(a @ g - g @ a, 2.0):
                    new.append(basis_mats[-1])
        frontier = new
    if not basis_vecs:
        return 0
    sv = np.linalg.svd(np.array(basis_vecs), compute_uv=False)
    return int(np.sum(sv > tol * sv[0]))
