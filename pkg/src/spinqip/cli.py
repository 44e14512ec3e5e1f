"""Command-line front end: ``spinqip <command> --system S --out DIR --seed N``.

Exit codes: 0 success (non-convergence is reported in the manifest status),
2 command-line parse error, 3 invalid input, 1 unexpected internal failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import gates, grape, protocols, pulses
from .dynamics import (
    Channel,
    DensityState,
    bloch_components,
    controls_to_csv,
    evolve_controls,
    evolve_state,
    gate_fidelity,
    read_controls,
    worst_case_state_fidelity,
)
from .spins import (
    Hyperfine,
    SpinSystem,
    SpinSystemError,
    make_system,
    natural_hamiltonian,
    pauli_embed,
    system_from_dict,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_PARSE = 2
EXIT_INVALID = 3

COMMANDS = (
    "simulate",
    "compile-cnot",
    "refocus",
    "grape",
    "simplex",
    "hbac",
    "hyperfine",
    "controllability",
    "sweep",
)
WEAK_COUPLING_MESSAGE = "weak-coupling approximation invalid; use full Hamiltonian / GRAPE"

INPUT_ERRORS = (
    SpinSystemError,
    ValueError,
    KeyError,
    IndexError,
    FileNotFoundError,
    IsADirectoryError,
    pulses.CompilationError,
    pulses.FirstOrderFitError,
    pulses.InfeasibleCorrectionError,
)


class JobError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise JobError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


def _fmt(x: float) -> str:
    return repr(float(x))


def _json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


_ROT = re.compile(r"^(-?[xy])(\d+(?:\.\d*)?):([\d,]+)$")


def parse_goal(text: str, n_spins: int) -> np.ndarray:
    """Target unitary from a short name.

    ``identity``, ``cnot:c,t``, ``cz:i,j``, ``swap:i,j``, ``toffoli:a,b,t``,
    ``compress`` (three spins) or a rotation such as ``x90:0`` or ``-y180:0,2``
    (angle in degrees on the listed spins).
    """
    text = text.strip().lower()
    if text == "identity":
        return np.eye(2**n_spins, dtype=complex)
    if text == "compress":
        if n_spins != 3:
            raise JobError("the compression gate needs three spins")
        return protocols.compression_gate()
    m = _ROT.match(text)
    if m:
        axis, angle, spins = m.groups()
        phase = {"x": 0.0, "y": math.pi / 2, "-x": math.pi, "-y": -math.pi / 2}[axis]
        idx = [int(s) for s in spins.split(",")]
        _check_spins(idx, n_spins)
        return gates.local_rotation(n_spins, idx, math.radians(float(angle)), phase)
    name, _, args = text.partition(":")
    try:
        idx = [int(a) for a in args.split(",")] if args else []
    except ValueError:
        raise JobError(f"bad spin list in goal {text!r}") from None
    _check_spins(idx, n_spins)
    builders = {
        "cnot": (2, lambda: gates.cnot(n_spins, idx[0], idx[1])),
        "cz": (2, lambda: gates.controlled_z(n_spins, idx[0], idx[1])),
        "swap": (2, lambda: gates.swap(n_spins, idx[0], idx[1])),
        "toffoli": (3, lambda: gates.toffoli(n_spins, idx[:2], idx[2])),
    }
    if name not in builders:
        raise JobError(f"unknown goal {text!r}")
    need, build = builders[name]
    if len(idx) != need or len(set(idx)) != need:
        raise JobError(f"goal {name!r} needs {need} distinct spins")
    return build()


def _check_spins(idx, n):
    for k in idx:
        if not 0 <= k < n:
            raise JobError(f"spin {k} outside a {n}-spin register")


def _channels(spec, system: SpinSystem) -> tuple[Channel, ...]:
    if not spec:
        return grape.default_channels(system)
    items = spec.split(",") if isinstance(spec, str) else list(spec)
    out = tuple(Channel.parse(c.strip()) if isinstance(c, str) else Channel(*c) for c in items)
    for ch in out:
        system.spins_of(ch.species)
    return out


def _floats(spec) -> list[float]:
    if isinstance(spec, str):
        return [float(v) for v in spec.split(",") if v.strip()]
    return [float(v) for v in spec]


# ---------------------------------------------------------------------------
# validation


def validate_system_data(data) -> list[dict]:
    """Diagnostics for a parsed spin-system description."""
    diags: list[dict] = []
    try:
        system = system_from_dict(data)
    except (SpinSystemError, ValueError, TypeError, KeyError) as exc:
        return [{"location": "system", "severity": "error", "message": str(exc)}]
    for i in range(system.n_spins):
        for j in range(i + 1, system.n_spins):
            if not system.weak_coupling_valid(i, j):
                table = "j_hz" if system.j_hz[i, j] else "dipolar_hz"
                diags.append(
                    {
                        "location": f"{table}[{i}][{j}]",
                        "severity": "warning",
                        "message": WEAK_COUPLING_MESSAGE,
                    }
                )
    return diags


def validate_config(path) -> list[dict]:
    """Machine-readable diagnostics (location, severity, message) for a system file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        return [{"location": f"line {exc.lineno}", "severity": "error", "message": f"invalid JSON: {exc.msg}"}]
    if not isinstance(data, dict):
        return [{"location": "root", "severity": "error", "message": "expected a JSON object"}]
    return validate_system_data(data)


# ---------------------------------------------------------------------------
# job handlers: (system, params, seed) -> (status, {filename: text}, summary)


@dataclass
class JobOutput:
    status: str = "ok"
    files: dict[str, str] = field(default_factory=dict)


def _need_system(system):
    if system is None:
        raise JobError("this command needs --system")
    return system


def run_simulate(system, p, seed) -> JobOutput:
    system = _need_system(system)
    mode = p.get("mode", "weak")
    if p.get("pulse"):
        u = evolve_controls(system, read_controls(p["pulse"], p.get("dt")), mode)
    elif p.get("sequence"):
        u = pulses.simulate_sequence(pulses.load_sequence(p["sequence"]), system, mode)
    else:
        raise JobError("simulate needs --pulse (controls CSV) or --sequence (pulse program JSON)")
    rho = evolve_state(DensityState.basis(int(p.get("initial", 0)), system.n_spins), u)
    lines = ["spin,x,y,z"]
    for k in range(system.n_spins):
        x, y, z = bloch_components(rho, k)
        lines.append(f"{k},{_fmt(x)},{_fmt(y)},{_fmt(z)}")
    return JobOutput(files={"final_state.csv": "\n".join(lines) + "\n"})


def run_compile_cnot(system, p, seed) -> JobOutput:
    system = _need_system(system)
    c, t = int(p.get("control", 0)), int(p.get("target", 1))
    duration = float(p.get("pulse_duration", 0.0))
    seq = pulses.compile_cnot(system, c, t, duration)
    target = gates.cnot(system.n_spins, c, t)
    report = {"certificate_fidelity": pulses.certificate(seq, system, target), "pulse_duration_s": duration}
    out = JobOutput()
    out.files["sequence.json"] = _json(pulses.sequence_to_dict(seq))
    out.files["timing.txt"] = pulses.render_timing(seq, [s.label for s in system.spins]) + "\n"
    if duration > 0:
        report["simulated_fidelity"] = gate_fidelity(pulses.simulate_sequence(seq, system), target)
        if p.get("correct", False):
            models = pulses.estimate_sequence_errors(seq, system)
            fixed = pulses.phase_track(pulses.correct_delays(seq, models, system), system)
            report["corrected_fidelity"] = gate_fidelity(pulses.simulate_sequence(fixed, system), target)
            out.files["sequence_corrected.json"] = _json(pulses.sequence_to_dict(fixed))
    out.files["report.json"] = _json(report)
    return out


def run_refocus(system, p, seed) -> JobOutput:
    system = _need_system(system)
    active = [int(a) for a in (p.get("active") or [])]
    tau = float(p["tau"])
    seq = pulses.refocus_schedule(system, active, tau)
    n = system.n_spins
    goal = np.eye(2**n, dtype=complex)
    if len(active) == 2:
        i, j = active
        goal = gates.zz_rotation(n, i, j, 0.5 * math.pi * tau * system.j_hz[i, j])
    report = {"fidelity_vs_active_coupling": pulses.certificate(seq, system, goal), "tau_s": tau, "active": active}
    return JobOutput(
        files={
            "sequence.json": _json(pulses.sequence_to_dict(seq)),
            "timing.txt": pulses.render_timing(seq, [s.label for s in system.spins]) + "\n",
            "report.json": _json(report),
        }
    )


def _optimizer_config(p, seed, method_default="conjugate-gradient") -> grape.OptimizerConfig:
    return grape.OptimizerConfig(
        n_steps=int(p.get("steps", 100)),
        dt=float(p.get("dt", 1e-5)),
        max_iterations=int(p.get("max_iterations", 500)),
        target_fidelity=float(p.get("target", 0.999)),
        gradient_mode=p.get("gradient", "exact-first-order"),
        method=p.get("method", method_default),
        seed=int(seed),
        max_amplitude_hz=float(p.get("max_amplitude_hz", 10e3)),
        restarts=int(p.get("restarts", 0)),
        hamiltonian_mode=p.get("mode", "full"),
    )


def _result_files(result: grape.OptimizationResult, system, goal, p) -> JobOutput:
    out = JobOutput(status=result.status)
    out.files["controls.csv"] = controls_to_csv(result.controls)
    out.files["run.json"] = _json(_jsonable(result.artifact()))
    if p.get("sweep_rf") or p.get("sweep_offsets"):
        rows = grape.inhomogeneity_sweep(
            result.controls,
            system,
            goal,
            _floats(p.get("sweep_rf") or [1.0]),
            _floats(p.get("sweep_offsets") or [0.0]),
            result.config.hamiltonian_mode,
        )
        out.files["sweep.csv"] = grape.sweep_to_csv(rows)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def run_grape(system, p, seed) -> JobOutput:
    system = _need_system(system)
    goal = parse_goal(p.get("goal", "identity"), system.n_spins)
    config = _optimizer_config(p, seed)
    ensemble = None
    rf = float(p.get("robust_rf", 0.0))
    off = float(p.get("robust_offset_hz", 0.0))
    if rf or off:
        ensemble = grape.RobustnessEnsemble.default(rf, off)
    result = grape.grape_optimize(system, goal, config, ensemble, channels=_channels(p.get("channels"), system))
    return _result_files(result, system, goal, p)


def run_simplex(system, p, seed) -> JobOutput:
    system = _need_system(system)
    goal = parse_goal(p.get("goal", "identity"), system.n_spins)
    config = _optimizer_config(p, seed, "simplex")
    result = grape.simplex_optimize(
        system, goal, int(p.get("periods", 3)), config, channels=_channels(p.get("channels"), system)
    )
    return _result_files(result, system, goal, p)


def run_hbac(system, p, seed) -> JobOutput:
    eps = float(p.get("eps", 1e-5))
    config = protocols.HbacConfig(
        eps_b=eps,
        n_rounds=int(p.get("rounds", 1)),
        loss_rate=0.0 if p.get("ideal") else float(p.get("loss_rate", 0.0)),
    )
    result = protocols.hbac_run(config)
    out = JobOutput()
    summary = {"eps_b": eps, "rounds": config.n_rounds, "ideal_ratio": result.ratio(eps, compiled=False)}
    if result.compiled is not None:
        out.files["trace.csv"] = protocols.trace_to_csv(result.compiled)
        out.files["trace_ideal.csv"] = protocols.trace_to_csv(result.ideal)
        summary["compiled_ratio"] = result.ratio(eps, compiled=True)
        summary["loss_rate"] = config.loss_rate
    else:
        out.files["trace.csv"] = protocols.trace_to_csv(result.ideal)
    out.files["summary.json"] = _json(summary)
    return out


def _hyperfine_system(system, p) -> SpinSystem:
    if system is not None:
        return system
    return make_system(
        [float(p.get("nu_e_hz", 0.0)), float(p.get("nu_n_hz", 5e6))],
        ["e", "n"],
        hyperfine=[Hyperfine(0, 1, float(p.get("az_hz", 10e6)), float(p.get("ax_hz", 5e6)))],
    )


def run_hyperfine(system, p, seed) -> JobOutput:
    system = _hyperfine_system(system, p)
    table = protocols.transition_table(system)
    lines = ["levels,frequency_hz,electron_matrix_element"]
    lines += [f"{r['levels']},{_fmt(r['frequency_hz'])},{_fmt(r['electron_matrix_element'])}" for r in table]
    files = {"transitions.csv": "\n".join(lines) + "\n"}
    config = grape.OptimizerConfig(
        n_steps=int(p.get("steps", 250)),
        dt=float(p.get("dt", 2e-9)),
        max_iterations=int(p.get("max_iterations", 2000)),
        target_fidelity=float(p.get("target", 0.99)),
        seed=int(seed),
        max_amplitude_hz=float(p.get("max_amplitude_hz", 20e6)),
        hamiltonian_mode="weak",
    )
    goal = parse_goal(p.get("goal", "cnot:0,1"), 2)
    try:
        result = protocols.single_transition_gate(system, goal, config, p.get("transition", "1-3"))
    except protocols.UncontrollableError as exc:
        raise JobError(str(exc)) from None
    out = _result_files(result, system, goal, {})
    out.files.update(files)
    return out


def run_controllability(system, p, seed) -> JobOutput:
    system = _need_system(system)
    channels = _channels(p.get("channels"), system)
    drift = natural_hamiltonian(system, p.get("mode", "full"))
    controls = []
    for ch in channels:
        for k in system.spins_of(ch.species):
            drift = drift - math.pi * ch.offset_hz * pauli_embed("z", k, system.n_spins)
        x = sum(pauli_embed("x", k, system.n_spins) for k in system.spins_of(ch.species))
        y = sum(pauli_embed("y", k, system.n_spins) for k in system.spins_of(ch.species))
        controls += [x] if p.get("x_only") else [x, y]
    rank = grape.controllability_rank(drift, controls)
    full = system.dim**2 - 1
    report = {"lie_rank": rank, "full_dimension": full, "controllable": rank >= full}
    return JobOutput(files={"controllability.json": _json(report)})


def _sweep_point(args):
    system, controls, goal, mode, r, o = args
    u = evolve_controls(system, controls, mode, r, o)
    return (r, o, gate_fidelity(u, goal), worst_case_state_fidelity(u, goal))


def run_sweep(system, p, seed) -> JobOutput:
    system = _need_system(system)
    if not p.get("pulse"):
        raise JobError("sweep needs --pulse (controls CSV)")
    controls = read_controls(p["pulse"], p.get("dt"))
    goal = parse_goal(p.get("goal", "identity"), system.n_spins)
    mode = p.get("mode", "full")
    points = [
        (system, controls, goal, mode, r, o)
        for r in _floats(p.get("rf_scales", [1.0]))
        for o in _floats(p.get("offsets_hz", [0.0]))
    ]
    jobs = max(1, int(p.get("jobs", 1)))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        rows = list(pool.map(_sweep_point, points))
    return JobOutput(files={"sweep.csv": grape.sweep_to_csv(rows)})


HANDLERS: dict[str, Callable] = {
    "simulate": run_simulate,
    "compile-cnot": run_compile_cnot,
    "refocus": run_refocus,
    "grape": run_grape,
    "simplex": run_simplex,
    "hbac": run_hbac,
    "hyperfine": run_hyperfine,
    "controllability": run_controllability,
    "sweep": run_sweep,
}


# ---------------------------------------------------------------------------
# job execution


@dataclass
class JobSpec:
    command: str
    system_path: str | None = None
    parameters: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.command not in HANDLERS:
            raise JobError(f"unknown command {self.command!r}; expected one of {', '.join(COMMANDS)}")

    @classmethod
    def from_dict(cls, data: dict) -> "JobSpec":
        if not isinstance(data, dict) or "command" not in data:
            raise JobError("job spec needs a 'command'")
        unknown = set(data) - {"command", "system_path", "parameters", "output_dir", "seed"}
        if unknown:
            raise JobError(f"unknown job spec fields: {sorted(unknown)}")
        return cls(
            data["command"],
            data.get("system_path"),
            dict(data.get("parameters") or {}),
            data.get("output_dir", "out"),
            int(data.get("seed", 0)),
        )


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def run_job(spec: JobSpec) -> tuple[int, dict]:
    """Execute a job and write its artifacts plus ``manifest.json``.

    Wall-clock time goes to ``timing.json``, which the manifest does not
    list, so manifests of repeated runs are byte-identical.
    """
    start = time.perf_counter()
    system = None
    system_hash = None
    if spec.system_path:
        raw = Path(spec.system_path).read_bytes()
        system_hash = sha256(raw)
        diags = validate_config(spec.system_path)
        errors = [d for d in diags if d["severity"] == "error"]
        if errors:
            raise JobError("; ".join(f"{d['location']}: {d['message']}" for d in errors))
        system = system_from_dict(json.loads(raw))
    output = HANDLERS[spec.command](system, spec.parameters, spec.seed)
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for name in sorted(output.files):
        data = output.files[name].encode()
        (out_dir / name).write_bytes(data)
        artifacts.append({"path": name, "sha256": sha256(data), "bytes": len(data)})
    manifest = {
        "command": spec.command,
        "seed": spec.seed,
        "status": output.status,
        "parameters": _jsonable(spec.parameters),
        "system_sha256": system_hash,
        "artifacts": artifacts,
    }
    (out_dir / "manifest.json").write_text(_json(manifest))
    (out_dir / "timing.json").write_text(_json({"wall_time_s": time.perf_counter() - start}))
    return EXIT_OK, manifest


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sp):
    sp.add_argument("--system", help="spin-system JSON file")
    sp.add_argument("--out", default="out", help="output directory (default: out)")
    sp.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")


def _add_optimizer(sp, steps, dt, amp):
    sp.add_argument("--goal", default="identity", help="target gate, e.g. cnot:0,1, swap:0,1, x90:0, identity")
    sp.add_argument("--steps", type=int, default=steps, help="number of time steps")
    sp.add_argument("--dt", type=float, default=dt, help="step length in seconds")
    sp.add_argument("--max-iterations", type=int, default=500)
    sp.add_argument("--target", type=float, default=0.999, help="target fidelity")
    sp.add_argument("--max-amplitude-hz", type=float, default=amp, help="nutation-frequency bound")
    sp.add_argument("--channels", help="comma-separated species@offset_hz list (default: every species at 0)")
    sp.add_argument("--mode", choices=("weak", "full"), default="full", help="Hamiltonian model")
    sp.add_argument("--restarts", type=int, default=0)
    sp.add_argument("--sweep-rf", help="rf scales for a robustness sweep of the result")
    sp.add_argument("--sweep-offsets", help="field offsets (Hz) for a robustness sweep of the result")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinqip", description="Spin-system simulation and pulse engineering.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="propagate a pulse file and report the final Bloch vectors")
    _add_common(sp)
    sp.add_argument("--pulse", help="controls CSV (t_s, channel, amplitude_hz, phase_rad)")
    sp.add_argument("--sequence", help="pulse-program JSON")
    sp.add_argument("--initial", type=int, default=0, help="computational basis index of the start state")
    sp.add_argument("--dt", type=float, help="step length (s), needed for single-row pulse files")
    sp.add_argument("--mode", choices=("weak", "full"), default="weak")

    sp = sub.add_parser("compile-cnot", help="compile a CNOT from pulses and delays")
    _add_common(sp)
    sp.add_argument("--control", type=int, default=0)
    sp.add_argument("--target", type=int, default=1)
    sp.add_argument("--pulse-duration", type=float, default=0.0, help="hard-pulse length in seconds")
    sp.add_argument("--correct", action="store_true", help="apply first-order error corrections")

    sp = sub.add_parser("refocus", help="decoupling schedule that keeps one coupling")
    _add_common(sp)
    sp.add_argument("--active", type=int, nargs="*", default=[], help="spins whose coupling is kept")
    sp.add_argument("--tau", type=float, required=True, help="evolution time in seconds")

    sp = sub.add_parser("grape", help="gradient ascent pulse optimisation")
    _add_common(sp)
    _add_optimizer(sp, 100, 1e-5, 10e3)
    sp.add_argument("--method", choices=("steepest-ascent", "conjugate-gradient"), default="conjugate-gradient")
    sp.add_argument("--gradient", choices=grape.GRADIENT_MODES, default="exact-first-order")
    sp.add_argument("--robust-rf", type=float, default=0.0, help="train over rf scale 1 +- this")
    sp.add_argument("--robust-offset-hz", type=float, default=0.0, help="train over field offset +- this")

    sp = sub.add_parser("simplex", help="few-period simplex pulse search")
    _add_common(sp)
    _add_optimizer(sp, 100, 1e-5, 10e3)
    sp.add_argument("--periods", type=int, default=3)

    sp = sub.add_parser("hbac", help="heat-bath algorithmic cooling")
    _add_common(sp)
    sp.add_argument("--eps", type=float, default=1e-5, help="bath polarisation")
    sp.add_argument("--rounds", type=int, default=1)
    sp.add_argument("--ideal", action="store_true", help="ideal gates only")
    sp.add_argument("--loss-rate", type=float, default=0.0, help="polarisation loss per gate")

    sp = sub.add_parser("hyperfine", help="single-transition control of an electron-nuclear pair")
    _add_common(sp)
    sp.add_argument("--nu-e-hz", type=float, default=0.0)
    sp.add_argument("--nu-n-hz", type=float, default=5e6)
    sp.add_argument("--az-hz", type=float, default=10e6)
    sp.add_argument("--ax-hz", type=float, default=5e6)
    sp.add_argument("--goal", default="cnot:0,1")
    sp.add_argument("--transition", default="1-3")
    sp.add_argument("--steps", type=int, default=250)
    sp.add_argument("--dt", type=float, default=2e-9)
    sp.add_argument("--max-iterations", type=int, default=2000)
    sp.add_argument("--target", type=float, default=0.99)
    sp.add_argument("--max-amplitude-hz", type=float, default=20e6)

    sp = sub.add_parser("controllability", help="Lie-algebra rank of drift plus channels")
    _add_common(sp)
    sp.add_argument("--channels", help="comma-separated species@offset_hz list")
    sp.add_argument("--mode", choices=("weak", "full"), default="full")
    sp.add_argument("--x-only", action="store_true", help="one quadrature per channel")

    sp = sub.add_parser("sweep", help="fidelity versus rf scale and field offset")
    _add_common(sp)
    sp.add_argument("--pulse", required=True, help="controls CSV")
    sp.add_argument("--dt", type=float, help="step length (s), needed for single-row pulse files")
    sp.add_argument("--goal", default="identity")
    sp.add_argument("--rf-scales", default="1.0")
    sp.add_argument("--offsets-hz", default="0.0", help="field offsets in Hz; write --offsets-hz=-20,0,20 for negatives")
    sp.add_argument("--mode", choices=("weak", "full"), default="full")
    sp.add_argument("--jobs", type=int, default=1, help="parallel workers")

    sp = sub.add_parser("validate", help="check a spin-system file")
    sp.add_argument("path")

    sp = sub.add_parser("run", help="execute a JSON job spec")
    sp.add_argument("job")
    return parser


_COMMON = {"command", "system", "out", "seed"}


def _spec_from_args(args) -> JobSpec:
    params = {k: v for k, v in vars(args).items() if k not in _COMMON and v is not None}
    return JobSpec(args.command, args.system, params, args.out, args.seed)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PARSE
    try:
        if args.command == "validate":
            diags = validate_config(args.path)
            print(json.dumps(diags, indent=2))
            return EXIT_INVALID if any(d["severity"] == "error" for d in diags) else EXIT_OK
        if args.command == "run":
            spec = JobSpec.from_dict(_read_json(args.job))
        else:
            spec = _spec_from_args(args)
        code, manifest = run_job(spec)
        print(json.dumps({"status": manifest["status"], "artifacts": [a["path"] for a in manifest["artifacts"]]}))
        return code
    except protocols.UncontrollableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except INPUT_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # keep tracebacks away from users
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
