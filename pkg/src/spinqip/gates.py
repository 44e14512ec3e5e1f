"""Ideal gate matrices under the spin-0-most-significant ordering."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .spins import SIGMA, embed, z_rotation


def rotation(angle: float, phase: float = 0.0) -> np.ndarray:
    """R_n(angle) = exp(-i angle/2 (cos(phase) sigma_x + sin(phase) sigma_y))."""
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    axis = np.cos(phase) * SIGMA["x"] + np.sin(phase) * SIGMA["y"]
    return c * np.eye(2) - 1j * s * axis


def rz(angle: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


def local_rotation(n_spins: int, spins: Sequence[int], angle: float, phase: float = 0.0) -> np.ndarray:
    r = rotation(angle, phase)
    out = np.eye(2**n_spins, dtype=complex)
    for k in spins:
        out = embed(r, k, n_spins) @ out
    return out


def zz_rotation(n_spins: int, i: int, j: int, angle: float) -> np.ndarray:
    """exp(-i angle sigma_z^i sigma_z^j) (note: no factor 1/2)."""
    zi = np.diag(embed(SIGMA["z"], i, n_spins)).real
    zj = np.diag(embed(SIGMA["z"], j, n_spins)).real
    return np.diag(np.exp(-1j * angle * zi * zj))


def permutation_gate(n_spins: int, mapping) -> np.ndarray:
    """Unitary sending basis index ``k`` to ``mapping(k)`` (callable or dict)."""
    dim = 2**n_spins
    f = mapping.__getitem__ if isinstance(mapping, dict) else mapping
    images = [int(f(k)) for k in range(dim)]
    if sorted(images) != list(range(dim)):
        raise ValueError("mapping is not a permutation of the basis states")
    out = np.zeros((dim, dim), dtype=complex)
    out[images, range(dim)] = 1.0
    return out


def _bit(k: int, spin: int, n: int) -> int:
    return (k >> (n - 1 - spin)) & 1


def _flip(k: int, spin: int, n: int) -> int:
    return k ^ (1 << (n - 1 - spin))


def cnot(n_spins: int = 2, control: int = 0, target: int = 1) -> np.ndarray:
    if control == target:
        raise ValueError("control and target must differ")
    return permutation_gate(
        n_spins, lambda k: _flip(k, target, n_spins) if _bit(k, control, n_spins) else k
    )


def multi_cnot(n_spins: int, control: int, targets: Sequence[int]) -> np.ndarray:
    """Controlled-NOT-NOT...: flips every target when ``control`` is 1."""

    def mapping(k):
        if _bit(k, control, n_spins):
            for t in targets:
                k = _flip(k, t, n_spins)
        return k

    return permutation_gate(n_spins, mapping)


def toffoli(n_spins: int = 3, controls: Sequence[int] = (0, 1), target: int = 2) -> np.ndarray:
    def mapping(k):
        if all(_bit(k, c, n_spins) for c in controls):
            return _flip(k, target, n_spins)
        return k

    return permutation_gate(n_spins, mapping)


def swap(n_spins: int = 2, i: int = 0, j: int = 1) -> np.ndarray:
    def mapping(k):
        if _bit(k, i, n_spins) != _bit(k, j, n_spins):
            return _flip(_flip(k, i, n_spins), j, n_spins)
        return k

    return permutation_gate(n_spins, mapping)


def controlled_z(n_spins: int = 2, i: int = 0, j: int = 1) -> np.ndarray:
    sign = [(-1) ** (_bit(k, i, n_spins) & _bit(k, j, n_spins)) for k in range(2**n_spins)]
    return np.diag(np.array(sign, dtype=complex))


__all__ = [
    "rotation",
    "rz",
    "local_rotation",
    "zz_rotation",
    "z_rotation",
    "permutation_gate",
    "cnot",
    "multi_cnot",
    "toffoli",
    "swap",
    "controlled_z",
]
