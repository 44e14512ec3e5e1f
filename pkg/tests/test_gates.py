import math

import numpy as np
import pytest
from scipy.linalg import expm

from spinqip import gates
from spinqip.spins import SIGMA, pauli_embed


def _is_unitary(u):
    return np.allclose(u.conj().T @ u, np.eye(len(u)), atol=1e-12)


def test_rotation_matches_exponential():
    for angle, phase in [(math.pi / 2, 0.0), (1.1, 0.4), (math.pi, -2.0)]:
        gen = math.cos(phase) * SIGMA["x"] + math.sin(phase) * SIGMA["y"]
        np.testing.assert_allclose(gates.rotation(angle, phase), expm(-0.5j * angle * gen), atol=1e-13)


def test_rz_and_zz_rotation():
    np.testing.assert_allclose(gates.rz(0.7), expm(-0.35j * SIGMA["z"]), atol=1e-13)
    zz = pauli_embed("z", 0, 3) @ pauli_embed("z", 2, 3)
    np.testing.assert_allclose(gates.zz_rotation(3, 0, 2, 0.3), expm(-0.3j * zz), atol=1e-13)


def test_cnot_truth_table():
    u = gates.cnot(2, 0, 1)
    for inp, out in [(0, 0), (1, 1), (2, 3), (3, 2)]:
        assert u[out, inp] == 1


def test_toffoli_and_multi_cnot_are_permutations():
    for u in (gates.toffoli(3, (0, 2), 1), gates.multi_cnot(3, 1, (0, 2)), gates.swap(3, 0, 2)):
        assert _is_unitary(u)
        assert set(np.unique(u)) <= {0, 1}
    # |110> -> |111> with controls 0,1 and target 2
    assert gates.toffoli(3)[7, 6] == 1


def test_swap_and_controlled_z():
    s = gates.swap(2)
    np.testing.assert_array_equal(s @ s, np.eye(4))
    assert s[2, 1] == 1 and s[1, 2] == 1
    np.testing.assert_allclose(np.diag(gates.controlled_z()), [1, 1, 1, -1])


def test_cnot_from_hadamard_conjugated_cz():
    h_t = gates.local_rotation(2, [1], math.pi / 2, math.pi / 2)
    built = h_t @ gates.controlled_z() @ h_t.conj().T
    np.testing.assert_allclose(built, gates.cnot(), atol=1e-12)


def test_permutation_rejects_non_bijection():
    with pytest.raises(ValueError):
        gates.permutation_gate(2, {0: 1, 1: 1, 2: 2, 3: 3})
