import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from ioncascade.qcore import (
    H,
    I2,
    X,
    Y,
    Z,
    QuantumState,
    apply,
    cnot,
    equal_up_to_phase,
    expand,
    is_unitary,
    partial_trace,
    pauli_expand,
    pauli_reconstruct,
    rz,
    tensor,
)


CNOT = cnot(0, 1)


def random_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


def test_fixed_gates_are_unitary():
    for U in (I2, X, Y, Z, H, CNOT, cnot(1, 0), rz(0.3)):
        assert is_unitary(U)


def test_cnot_pauli_expansion():
    # (II + IX + ZI - ZX) / 2
    coeffs = pauli_expand(cnot(0, 1))
    expected = {"II": 0.5, "IX": 0.5, "ZI": 0.5, "ZX": -0.5}
    for lab, c in coeffs.items():
        assert abs(c - expected.get(lab, 0.0)) < 1e-12


def test_qubit_zero_is_most_significant():
    s = apply(QuantumState.zeros(3), X, [0])
    assert np.argmax(s.probabilities()) == 0b100


def test_tensor_index_oracle():
    # <i|A (x) B|j> = A[i0, j0] B[i1, j1]
    rng = np.random.default_rng(1)
    A = rng.normal(size=(2, 2))
    B = rng.normal(size=(2, 2))
    T = tensor(A, B)
    for i in range(4):
        for j in range(4):
            assert T[i, j] == pytest.approx(A[i >> 1, j >> 1] * B[i & 1, j & 1])


def test_expand_matches_kron():
    assert np.allclose(expand(X, [1], 3), tensor(I2, X, I2))
    assert np.allclose(expand(CNOT, [0, 1], 2), CNOT)
    assert np.allclose(expand(CNOT, [1, 0], 2), cnot(1, 0))


def test_apply_rejects_bad_targets():
    s = QuantumState.zeros(2)
    with pytest.raises(ValueError):
        apply(s, X, [2])
    with pytest.raises(ValueError):
        apply(s, CNOT, [0, 0])
    with pytest.raises(ValueError):
        apply(s, CNOT, [0])


def test_density_and_vector_paths_agree():
    rng = np.random.default_rng(2)
    v = random_state(3, rng)
    U = unitary_group.rvs(4, random_state=3)
    pure = apply(QuantumState(v), U, [2, 0])
    mixed = apply(QuantumState(np.outer(v, v.conj())), U, [2, 0])
    assert np.allclose(pure.density(), mixed.data)


def test_partial_trace_of_product():
    a = QuantumState.from_label("0").density()
    b = H @ QuantumState.from_label("0").density() @ H
    rho = np.kron(a, b)
    assert np.allclose(partial_trace(rho, [0]), a)
    assert np.allclose(partial_trace(rho, [1]), b)


def test_state_validation():
    assert not QuantumState(np.array([1.0, 1.0])).is_valid()
    assert QuantumState.zeros(2).is_valid()
    with pytest.raises(ValueError):
        QuantumState(np.ones(3))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 4), k=st.integers(1, 2))
def test_apply_then_adjoint_restores(seed, n, k):
    k = min(k, n)
    rng = np.random.default_rng(seed)
    targets = list(rng.permutation(n)[:k])
    U = unitary_group.rvs(2**k, random_state=seed % 2**32) if k > 1 else unitary_group.rvs(2, random_state=seed % 2**32)
    v = random_state(n, rng)
    s = apply(apply(QuantumState(v), U, targets), U.conj().T, targets)
    assert np.allclose(s.data, v, atol=1e-12)
    assert is_unitary(expand(U, targets, n), 1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 4))
def test_partial_trace_keep_all_is_identity(seed, n):
    rng = np.random.default_rng(seed)
    v = random_state(n, rng)
    rho = np.outer(v, v.conj())
    assert np.allclose(partial_trace(rho, range(n)), rho)
    assert np.trace(partial_trace(rho, [0])) == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.sampled_from([2, 4]))
def test_pauli_round_trip(seed, dim):
    U = unitary_group.rvs(dim, random_state=seed % 2**32)
    assert np.allclose(pauli_reconstruct(pauli_expand(U)), U, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10))
def test_rz_composes(a, b):
    assert np.allclose(rz(a) @ rz(b), rz(a + b))
    assert equal_up_to_phase(rz(a) @ X @ rz(-a), X @ rz(-2 * a))
