"""
Spin registers and the Hamiltonians built on them.

All frequencies enter as Hz (offsets relative to a per-species carrier) and
every Hamiltonian leaves this module in angular units (rad/s). Spin 0 is the
most significant tensor factor, so basis state ``|b0 b1 ... >`` has index
``int("b0b1...", 2)``.

Operators are plain complex ``numpy`` arrays.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi

DEFAULT_MAX_SPINS = 12
MAX_SPINS_ENV = "SPINQIP_MAX_SPINS"

# |nu_i - nu_j| must exceed this multiple of the coupling for the
# sigma_z sigma_z (weak) form to be trusted.
WEAK_COUPLING_FACTOR = 10.0

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
SIGMA = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    # ladder operators as sigma_x +/- i sigma_y (no factor 1/2)
    "+": np.array([[0, 2], [0, 0]], dtype=complex),
    "-": np.array([[0, 0], [2, 0]], dtype=complex),
}


class SpinSystemError(ValueError):
    """Raised when a spin-system description violates its invariants."""


def max_spins() -> int:
    """Dimension cap on the number of spins; overridable via ``SPINQIP_MAX_SPINS``."""
    raw = os.environ.get(MAX_SPINS_ENV)
    if raw is None:
        return DEFAULT_MAX_SPINS
    try:
        value = int(raw)
    except ValueError as exc:
        raise SpinSystemError(f"{MAX_SPINS_ENV} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise SpinSystemError(f"{MAX_SPINS_ENV} must be >= 1")
    return value


def is_hermitian(op: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        return False
    return bool(np.max(np.abs(op - op.conj().T), initial=0.0) <= tol)


def is_unitary(op: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        return False
    eye = np.eye(op.shape[0])
    return bool(np.max(np.abs(op.conj().T @ op - eye), initial=0.0) <= tol)


def embed(single: np.ndarray, spin_index: int, n_spins: int) -> np.ndarray:
    """Place a 2x2 operator at ``spin_index`` in an ``n_spins`` register."""
    if n_spins < 1:
        raise SpinSystemError("n_spins must be >= 1")
    cap = max_spins()
    if n_spins > cap:
        raise SpinSystemError(f"{n_spins} spins exceeds the dimension cap of {cap}")
    if not 0 <= spin_index < n_spins:
        raise IndexError(f"spin index {spin_index} out of range for {n_spins} spins")
    left = np.eye(2**spin_index, dtype=complex)
    right = np.eye(2 ** (n_spins - spin_index - 1), dtype=complex)
    return np.kron(np.kron(left, single), right)


def pauli_embed(axis: str, spin_index: int, n_spins: int) -> np.ndarray:
    """Return ``I x ... x sigma_axis x ... x I`` with the Pauli at ``spin_index``.

    ``axis`` is one of ``x``, ``y``, ``z``, ``+``, ``-``; the ladder operators
    follow sigma_+- = sigma_x +- i sigma_y.
    """
    try:
        single = SIGMA[axis]
    except KeyError:
        raise ValueError(f"unknown Pauli axis {axis!r}") from None
    return embed(single, spin_index, n_spins)


def _z_diagonal(spin_index: int, n_spins: int) -> np.ndarray:
    # diagonal of sigma_z^i, avoids building dense matrices for diagonal terms
    bits = (np.arange(2**n_spins) >> (n_spins - 1 - spin_index)) & 1
    return 1.0 - 2.0 * bits


@dataclass(frozen=True)
class SpinSpecies:
    name: str
    kind: str = "nuclear"
    gyromagnetic_class: float = 1.0

    def __post_init__(self):
        if not self.name:
            raise SpinSystemError("species name must be nonempty")
        if self.kind not in ("nuclear", "electron"):
            raise SpinSystemError(f"species kind must be 'nuclear' or 'electron', got {self.kind!r}")


@dataclass(frozen=True)
class Spin:
    label: str
    species: SpinSpecies
    offset_hz: float = 0.0


@dataclass(frozen=True)
class Hyperfine:
    electron: int
    nucleus: int
    az_hz: float
    ax_hz: float = 0.0


def _frozen_table(table, n: int, name: str) -> np.ndarray:
    if table is None:
        arr = np.zeros((n, n))
    else:
        arr = np.array(table, dtype=float)
    if arr.shape != (n, n):
        raise SpinSystemError(f"{name} table must be {n}x{n}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SpinSystemError(f"{name} table has non-finite entries")
    if np.any(np.diag(arr) != 0):
        raise SpinSystemError(f"{name} table must have a zero diagonal")
    if not np.array_equal(arr, arr.T):
        i, j = np.argwhere(arr != arr.T)[0]
        raise SpinSystemError(
            f"{name} table is not symmetric: [{i}][{j}]={arr[i, j]!r} vs [{j}][{i}]={arr[j, i]!r}"
        )
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """An N-spin register plus its coupling tables (all in Hz).

    ``j_hz`` and ``dipolar_hz`` are symmetric N x N tables with zero diagonal.
    Pairs of different species are treated in a doubly rotating frame, so only
    their secular zz parts survive in the full Hamiltonian.
    """

    spins: tuple[Spin, ...]
    j_hz: np.ndarray = None
    dipolar_hz: np.ndarray = None
    hyperfine: tuple[Hyperfine, ...] = field(default_factory=tuple)

    def __post_init__(self):
        spins = tuple(self.spins)
        n = len(spins)
        if n < 1:
            raise SpinSystemError("a spin system needs at least one spin")
        cap = max_spins()
        if n > cap:
            raise SpinSystemError(f"{n} spins exceeds the dimension cap of {cap}")
        labels = [s.label for s in spins]
        if len(set(labels)) != n or any(not lab for lab in labels):
            raise SpinSystemError("spin labels must be nonempty and unique")
        by_name: dict[str, SpinSpecies] = {}
        for s in spins:
            if not math.isfinite(s.offset_hz):
                raise SpinSystemError(f"spin {s.label!r} has a non-finite offset")
            prev = by_name.setdefault(s.species.name, s.species)
            if prev != s.species:
                raise SpinSystemError(f"species {s.species.name!r} declared inconsistently")
        object.__setattr__(self, "spins", spins)
        object.__setattr__(self, "j_hz", _frozen_table(self.j_hz, n, "J"))
        object.__setattr__(self, "dipolar_hz", _frozen_table(self.dipolar_hz, n, "dipolar"))
        hf = tuple(self.hyperfine)
        for h in hf:
            if not (0 <= h.electron < n and 0 <= h.nucleus < n):
                raise SpinSystemError(f"hyperfine entry {h} references a missing spin")
            if spins[h.electron].species.kind != "electron" or spins[h.nucleus].species.kind != "nuclear":
                raise SpinSystemError(f"hyperfine entry {h} must pair an electron with a nucleus")
            if not (math.isfinite(h.az_hz) and math.isfinite(h.ax_hz)):
                raise SpinSystemError(f"hyperfine entry {h} has non-finite couplings")
        object.__setattr__(self, "hyperfine", hf)

    @property
    def n_spins(self) -> int:
        return len(self.spins)

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    @property
    def offsets_hz(self) -> np.ndarray:
        return np.array([s.offset_hz for s in self.spins])

    @property
    def species(self) -> dict[str, SpinSpecies]:
        out: dict[str, SpinSpecies] = {}
        for s in self.spins:
            out.setdefault(s.species.name, s.species)
        return out

    def spins_of(self, species: str) -> list[int]:
        idx = [k for k, s in enumerate(self.spins) if s.species.name == species]
        if not idx:
            raise SpinSystemError(f"unknown channel/species {species!r}")
        return idx

    def index(self, label_or_index) -> int:
        if isinstance(label_or_index, (int, np.integer)):
            if not 0 <= label_or_index < self.n_spins:
                raise IndexError(f"spin index {label_or_index} out of range")
            return int(label_or_index)
        for k, s in enumerate(self.spins):
            if s.label == label_or_index:
                return k
        raise SpinSystemError(f"no spin labelled {label_or_index!r}")

    def homonuclear(self, i: int, j: int) -> bool:
        return self.spins[i].species.name == self.spins[j].species.name

    def weak_coupling_valid(self, i: int, j: int, factor: float = WEAK_COUPLING_FACTOR) -> bool:
        """True when the zz truncation of the (i, j) coupling is trustworthy."""
        if i == j:
            return True
        if not self.homonuclear(i, j):
            return True
        coupling = abs(self.j_hz[i, j]) + abs(self.dipolar_hz[i, j])
        if coupling == 0:
            return True
        return abs(self.spins[i].offset_hz - self.spins[j].offset_hz) > factor * coupling

    def subsystem(self, indices: Sequence[int]) -> "SpinSystem":
        """Reduced register over ``indices`` (in the given order)."""
        idx = [self.index(k) for k in indices]
        pos = {k: p for p, k in enumerate(idx)}
        hf = tuple(
            Hyperfine(pos[h.electron], pos[h.nucleus], h.az_hz, h.ax_hz)
            for h in self.hyperfine
            if h.electron in pos and h.nucleus in pos
        )
        return SpinSystem(
            spins=tuple(self.spins[k] for k in idx),
            j_hz=self.j_hz[np.ix_(idx, idx)],
            dipolar_hz=self.dipolar_hz[np.ix_(idx, idx)],
            hyperfine=hf,
        )

    def with_offsets(self, offsets_hz: Iterable[float]) -> "SpinSystem":
        offsets = list(offsets_hz)
        if len(offsets) != self.n_spins:
            raise SpinSystemError("offset list length must match the number of spins")
        spins = tuple(Spin(s.label, s.species, float(o)) for s, o in zip(self.spins, offsets))
        return SpinSystem(spins, self.j_hz, self.dipolar_hz, self.hyperfine)

    def shifted(self, field_offset_hz: float) -> "SpinSystem":
        """Same register with every offset moved by ``field_offset_hz``."""
        if field_offset_hz == 0:
            return self
        return self.with_offsets(self.offsets_hz + field_offset_hz)


def _zeeman_and_zz(system: SpinSystem) -> np.ndarray:
    n = system.n_spins
    diag = np.zeros(2**n)
    zs = [_z_diagonal(k, n) for k in range(n)]
    for k, s in enumerate(system.spins):
        # (1/2) * 2 pi nu * sigma_z, kept in the printed form
        diag += 0.5 * TWO_PI * s.offset_hz * zs[k]
    for i in range(n):
        for j in range(i + 1, n):
            if system.j_hz[i, j]:
                diag += 0.5 * np.pi * system.j_hz[i, j] * zs[i] * zs[j]
    return np.diag(diag).astype(complex)


def _hyperfine_terms(system: SpinSystem) -> np.ndarray:
    n = system.n_spins
    out = np.zeros((2**n, 2**n), dtype=complex)
    for h in system.hyperfine:
        sz = 0.5 * pauli_embed("z", h.electron, n)
        iz = 0.5 * pauli_embed("z", h.nucleus, n)
        ix = 0.5 * pauli_embed("x", h.nucleus, n)
        out += TWO_PI * (h.az_hz * sz @ iz + h.ax_hz * sz @ ix)
    return out


def build_weak_hamiltonian(system: SpinSystem) -> np.ndarray:
    """Weak-coupling natural Hamiltonian (rad/s).

    ``(1/2) sum_i 2 pi nu_i sigma_z^i + (pi/2) sum_{i<j} J_ij sigma_z^i sigma_z^j``
    plus any hyperfine terms. Dipolar couplings are ignored here.
    """
    return _zeeman_and_zz(system) + _hyperfine_terms(system)


def build_full_hamiltonian(system: SpinSystem) -> np.ndarray:
    """Strong-coupling Hamiltonian (rad/s).

    Homonuclear J pairs use the isotropic form (pi/2) J (xx + yy + zz) and
    homonuclear dipolar pairs the secular form (pi/2) d (2zz - xx - yy).
    Heteronuclear pairs keep only their zz parts.
    """
    n = system.n_spins
    h = build_weak_hamiltonian(system)
    for i in range(n):
        for j in range(i + 1, n):
            jc = system.j_hz[i, j]
            d = system.dipolar_hz[i, j]
            if not (jc or d):
                continue
            zz = pauli_embed("z", i, n) @ pauli_embed("z", j, n)
            if system.homonuclear(i, j):
                flipflop = pauli_embed("x", i, n) @ pauli_embed("x", j, n) + pauli_embed("y", i, n) @ pauli_embed(
                    "y", j, n
                )
                h += 0.5 * np.pi * jc * flipflop
                h += 0.5 * np.pi * d * (2 * zz - flipflop)
            else:
                h += np.pi * d * zz
    return h


def natural_hamiltonian(system: SpinSystem, mode: str = "weak") -> np.ndarray:
    if mode == "weak":
        return build_weak_hamiltonian(system)
    if mode == "full":
        return build_full_hamiltonian(system)
    raise ValueError(f"hamiltonian mode must be 'weak' or 'full', got {mode!r}")


def drive_operator(n_spins: int, spins: Iterable[int], phase: float) -> np.ndarray:
    """``(1/2) sum_k (cos(phase) sigma_x^k + sin(phase) sigma_y^k)`` over ``spins``."""
    single = 0.5 * (np.cos(phase) * SIGMA["x"] + np.sin(phase) * SIGMA["y"])
    out = np.zeros((2**n_spins, 2**n_spins), dtype=complex)
    for k in spins:
        out += embed(single, k, n_spins)
    return out


def build_rf_hamiltonian(
    system: SpinSystem,
    channel: str,
    amplitude: float,
    phase: float,
    frequency: float,
    t: float,
) -> np.ndarray:
    """Lab-frame RF drive on every spin of species ``channel``.

    ``amplitude`` is the nutation frequency omega_nut (rad/s), ``frequency``
    the carrier omega_rf (rad/s); the field axis sits at ``omega_rf t + phase``.
    """
    if amplitude < 0:
        raise ValueError("RF amplitude must be non-negative")
    spins = system.spins_of(channel)
    return amplitude * drive_operator(system.n_spins, spins, frequency * t + phase)


def z_rotation(angles: Sequence[float]) -> np.ndarray:
    """Product of R_z(angle_k) = exp(-i angle_k sigma_z^k / 2) over all spins (diagonal)."""
    n = len(angles)
    phase = np.zeros(2**n)
    for k, a in enumerate(angles):
        if a:
            phase += 0.5 * a * _z_diagonal(k, n)
    return np.diag(np.exp(-1j * phase))


def rotating_frame_hamiltonian(h_lab: np.ndarray, frame_frequencies: Sequence[float], t: float) -> np.ndarray:
    """Transform a lab Hamiltonian into frames rotating at ``frame_frequencies`` (rad/s per spin).

    H_r = R(t)^dagger H_lab R(t) - sum_k (omega_k / 2) sigma_z^k with
    R(t) = prod_k R_z^k(omega_k t).
    """
    freqs = np.asarray(frame_frequencies, dtype=float)
    n = len(freqs)
    if h_lab.shape != (2**n, 2**n):
        raise ValueError("frame frequency list length must match the register size")
    r = z_rotation(freqs * t)
    frame = np.zeros(2**n)
    for k, w in enumerate(freqs):
        frame += 0.5 * w * _z_diagonal(k, n)
    return r.conj().T @ h_lab @ r - np.diag(frame)


def build_hyperfine_hamiltonian(omega_e: float, omega_n: float, a_z: float, a_x: float) -> np.ndarray:
    """Electron-nuclear pair: omega_e S_z + omega_n I_z + A_z S_z I_z + A_x S_z I_x.

    Spin operators are sigma/2, the electron is spin 0. All inputs in rad/s.
    """
    sz = 0.5 * pauli_embed("z", 0, 2)
    iz = 0.5 * pauli_embed("z", 1, 2)
    ix = 0.5 * pauli_embed("x", 1, 2)
    return omega_e * sz + omega_n * iz + a_z * sz @ iz + a_x * sz @ ix


# ---------------------------------------------------------------------------
# JSON description files


def _matrix_table(rows, n: int, name: str) -> np.ndarray:
    try:
        table = np.array(rows, dtype=float)
    except (TypeError, ValueError):
        raise SpinSystemError(f"{name} must be an {n} x {n} numeric matrix") from None
    if table.shape != (n, n):
        raise SpinSystemError(f"{name} must be an {n} x {n} matrix, got shape {table.shape}")
    for i in range(n):
        if table[i, i] != 0:
            raise SpinSystemError(f"{name}[{i}][{i}]: diagonal coupling is not allowed")
        for j in range(i + 1, n):
            if table[i, j] != table[j, i]:
                raise SpinSystemError(
                    f"{name} is asymmetric: [{i}][{j}]={table[i, j]!r} vs [{j}][{i}]={table[j, i]!r}"
                )
    return table


def _pair_table(entries, n: int, name: str, labels: dict[str, int]) -> np.ndarray:
    """Coupling table from a list of {i, j, value} entries or a full matrix."""
    if entries and all(isinstance(row, (list, tuple)) for row in entries):
        return _matrix_table(entries, n, name)
    table = np.zeros((n, n))
    seen: dict[tuple[int, int], tuple[int, int]] = {}
    for e in entries or []:
        i, j = _resolve(e["i"], labels, n), _resolve(e["j"], labels, n)
        value = float(e["value"])
        if i == j:
            raise SpinSystemError(f"{name}[{i}][{j}]: diagonal coupling is not allowed")
        key = (min(i, j), max(i, j))
        if key in seen:
            pi, pj = seen[key]
            prev = table[i, j]
            if prev != value:
                raise SpinSystemError(
                    f"{name} is asymmetric: [{pi}][{pj}]={prev!r} vs [{i}][{j}]={value!r}"
                )
            raise SpinSystemError(f"{name}[{i}][{j}] duplicates [{pi}][{pj}]")
        seen[key] = (i, j)
        table[i, j] = table[j, i] = value
    return table


def _resolve(ref, labels: dict[str, int], n: int) -> int:
    if isinstance(ref, bool):
        raise SpinSystemError(f"bad spin reference {ref!r}")
    if isinstance(ref, int):
        if not 0 <= ref < n:
            raise SpinSystemError(f"spin index {ref} out of range")
        return ref
    if ref in labels:
        return labels[ref]
    raise SpinSystemError(f"unknown spin reference {ref!r}")


def system_from_dict(data: dict) -> SpinSystem:
    try:
        raw_spins = data["spins"]
    except (KeyError, TypeError):
        raise SpinSystemError("spin-system description needs a 'spins' array") from None
    species: dict[str, SpinSpecies] = {}
    spins = []
    for k, s in enumerate(raw_spins):
        name = s.get("species")
        if not name:
            raise SpinSystemError(f"spins[{k}] has no species")
        sp = SpinSpecies(name, s.get("kind", "nuclear"), float(s.get("gyromagnetic_class", 1.0)))
        if species.setdefault(name, sp) != sp:
            raise SpinSystemError(f"spins[{k}]: species {name!r} declared inconsistently")
        spins.append(Spin(str(s.get("label", f"{name}{k}")), sp, float(s.get("offset_hz", 0.0))))
    n = len(spins)
    labels = {s.label: k for k, s in enumerate(spins)}
    hf = tuple(
        Hyperfine(
            _resolve(h["electron"], labels, n),
            _resolve(h["nucleus"], labels, n),
            float(h["az_hz"]),
            float(h.get("ax_hz", 0.0)),
        )
        for h in data.get("hyperfine", []) or []
    )
    return SpinSystem(
        spins=tuple(spins),
        j_hz=_pair_table(data.get("j_hz"), n, "j_hz", labels),
        dipolar_hz=_pair_table(data.get("dipolar_hz"), n, "dipolar_hz", labels),
        hyperfine=hf,
    )


def system_to_dict(system: SpinSystem) -> dict:
    def pairs(table):
        n = table.shape[0]
        return [
            {"i": i, "j": j, "value": float(table[i, j])}
            for i in range(n)
            for j in range(i + 1, n)
            if table[i, j] != 0
        ]

    return {
        "spins": [
            {
                "label": s.label,
                "species": s.species.name,
                "kind": s.species.kind,
                "gyromagnetic_class": s.species.gyromagnetic_class,
                "offset_hz": s.offset_hz,
            }
            for s in system.spins
        ],
        "j_hz": pairs(system.j_hz),
        "dipolar_hz": pairs(system.dipolar_hz),
        "hyperfine": [
            {"electron": h.electron, "nucleus": h.nucleus, "az_hz": h.az_hz, "ax_hz": h.ax_hz}
            for h in system.hyperfine
        ],
    }


def load_system(path) -> SpinSystem:
    with open(path) as fh:
        return system_from_dict(json.load(fh))


def save_system(system: SpinSystem, path) -> None:
    Path(path).write_text(json.dumps(system_to_dict(system), indent=2) + "\n")


def make_system(
    offsets_hz: Sequence[float],
    species: Sequence[str] | str = "H",
    j_hz=None,
    dipolar_hz=None,
    hyperfine: Sequence[Hyperfine] = (),
    kinds: dict[str, str] | None = None,
) -> SpinSystem:
    """Shorthand constructor used by tests and examples."""
    n = len(offsets_hz)
    names = [species] * n if isinstance(species, str) else list(species)
    kinds = kinds or {}
    objs = {name: SpinSpecies(name, kinds.get(name, "electron" if name == "e" else "nuclear")) for name in names}
    spins = tuple(Spin(f"{names[k]}{k}", objs[names[k]], float(offsets_hz[k])) for k in range(n))
    return SpinSystem(spins, j_hz, dipolar_hz, tuple(hyperfine))
