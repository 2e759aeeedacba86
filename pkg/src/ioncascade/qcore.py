"""Small dense linear-algebra layer for qubit registers.

Conventions used everywhere in the package:

* qubit 0 is the leftmost label of a ket string and the most significant bit
  of a basis-state index, so ``|01>`` has index 1 and ``|10>`` has index 2;
* multi-qubit operators are built with ``np.kron`` in the same order.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from itertools import product
from typing import Sequence

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S = np.diag([1, 1j]).astype(complex)
T = np.diag([1, np.exp(1j * np.pi / 4)]).astype(complex)

PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}

UNITARY_TOL = 1e-12


def cnot(control: int = 0, target: int = 1, n_qubits: int = 2) -> np.ndarray:
    """CNOT as a dense matrix on ``n_qubits`` qubits."""
    dim = 2**n_qubits
    out = np.zeros((dim, dim), dtype=complex)
    for k in range(dim):
        bits = [(k >> (n_qubits - 1 - q)) & 1 for q in range(n_qubits)]
        if bits[control]:
            bits[target] ^= 1
        j = sum(b << (n_qubits - 1 - q) for q, b in enumerate(bits))
        out[j, k] = 1.0
    return out


def rz(alpha: float) -> np.ndarray:
    """``exp(-i alpha Z / 2)``."""
    return np.diag([np.exp(-0.5j * alpha), np.exp(0.5j * alpha)])


def is_unitary(U: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    return bool(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) <= tol)


def tensor(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product of the operands, qubit 0 leftmost."""
    if not ops:
        return np.eye(1, dtype=complex)
    return reduce(np.kron, [np.asarray(o, dtype=complex) for o in ops])


def phase_distance(A: np.ndarray, B: np.ndarray) -> float:
    """Global-phase-invariant distance ``1 - |Tr(A^dag B)| / dim``."""
    A = np.asarray(A)
    return float(1.0 - abs(np.trace(A.conj().T @ np.asarray(B))) / A.shape[0])


def equal_up_to_phase(A: np.ndarray, B: np.ndarray, tol: float = 1e-10) -> bool:
    return phase_distance(A, B) <= tol


def _n_qubits(dim: int) -> int:
    n = int(round(np.log2(dim)))
    if 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


@dataclass(frozen=True)
class QuantumState:
    """Pure state vector or density operator over ``n_qubits`` qubits.

    ``data`` is a vector of length ``2**n_qubits`` for pure states and a
    square matrix for mixed states.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=complex)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        if arr.ndim not in (1, 2):
            raise ValueError("state data must be a vector or a square matrix")
        if arr.ndim == 2 and arr.shape[0] != arr.shape[1]:
            raise ValueError("density operator must be square")
        _n_qubits(arr.shape[0])

    @classmethod
    def from_label(cls, label: str) -> "QuantumState":
        idx = int(label, 2)
        vec = np.zeros(2 ** len(label), dtype=complex)
        vec[idx] = 1.0
        return cls(vec)

    @classmethod
    def zeros(cls, n_qubits: int) -> "QuantumState":
        return cls.from_label("0" * n_qubits)

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    @property
    def n_qubits(self) -> int:
        return _n_qubits(self.data.shape[0])

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return np.array(self.data)

    def probabilities(self) -> np.ndarray:
        if self.is_pure:
            return np.abs(self.data) ** 2
        return np.real(np.diag(self.data)).copy()

    def is_valid(self, tol: float = 1e-10) -> bool:
        if self.is_pure:
            return abs(np.linalg.norm(self.data) - 1.0) <= tol
        rho = self.data
        if np.max(np.abs(rho - rho.conj().T)) > tol:
            return False
        if abs(np.trace(rho) - 1.0) > tol:
            return False
        return bool(np.min(np.linalg.eigvalsh(rho)) >= -tol)


def _check_targets(n: int, U: np.ndarray, targets: Sequence[int]) -> list[int]:
    targets = [int(t) for t in targets]
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate target in {targets}")
    for t in targets:
        if not 0 <= t < n:
            raise ValueError(f"target {t} outside register of {n} qubits")
    if U.shape != (2 ** len(targets), 2 ** len(targets)):
        raise ValueError(
            f"operator of shape {U.shape} does not act on {len(targets)} qubits"
        )
    return targets


def apply_to_vector(vec: np.ndarray, U: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Apply ``U`` to the listed qubits of a state vector (or a stack of them).

    ``vec`` may carry leading batch axes; the last axis is the register.
    """
    U = np.asarray(U, dtype=complex)
    n = _n_qubits(vec.shape[-1])
    targets = _check_targets(n, U, targets)
    k = len(targets)
    batch = vec.shape[:-1]
    nb = len(batch)
    psi = vec.reshape(batch + (2,) * n)
    axes = [nb + t for t in targets]
    psi = np.moveaxis(psi, axes, list(range(nb, nb + k)))
    rest = psi.shape[nb + k:]
    psi = psi.reshape(batch + (2**k, -1))
    psi = np.matmul(U, psi)
    psi = psi.reshape(batch + (2,) * k + rest)
    psi = np.moveaxis(psi, list(range(nb, nb + k)), axes)
    return psi.reshape(vec.shape)


def apply(state: QuantumState, U: np.ndarray, targets: Sequence[int]) -> QuantumState:
    """Apply a ``2**len(targets)`` square operator to the named qubits."""
    U = np.asarray(U, dtype=complex)
    if state.is_pure:
        return QuantumState(apply_to_vector(state.data, U, targets))
    rho = state.data
    n = state.n_qubits
    _check_targets(n, U, targets)
    # rho -> U rho U^dag, acting on rows then on columns
    half = apply_to_vector(rho.T, U, targets).T
    full = apply_to_vector(half.conj(), U, targets).conj()
    return QuantumState(full)


def expand(U: np.ndarray, targets: Sequence[int], n_qubits: int) -> np.ndarray:
    """Full ``2**n`` matrix of ``U`` acting on ``targets``."""
    dim = 2**n_qubits
    cols = apply_to_vector(np.eye(dim, dtype=complex), np.asarray(U), targets)
    # apply_to_vector acted on each row vector of the identity: rows are U e_k
    return cols.T


def partial_trace(rho: np.ndarray | QuantumState, keep: Sequence[int]) -> np.ndarray:
    """Reduced density operator on ``keep`` (kept in ascending order)."""
    if isinstance(rho, QuantumState):
        rho = rho.density()
    rho = np.asarray(rho, dtype=complex)
    n = _n_qubits(rho.shape[0])
    keep = sorted(int(k) for k in keep)
    if not keep:
        raise ValueError("keep set must not be empty")
    if len(set(keep)) != len(keep) or any(not 0 <= k < n for k in keep):
        raise ValueError(f"invalid keep set {keep} for {n} qubits")
    drop = [q for q in range(n) if q not in keep]
    t = rho.reshape((2,) * (2 * n))
    row_idx = list(range(n))
    col_idx = list(range(n, 2 * n))
    for q in drop:
        col_idx[q] = row_idx[q]
    out_idx = [row_idx[q] for q in keep] + [col_idx[q] for q in keep]
    reduced = np.einsum(t, row_idx + col_idx, out_idx)
    d = 2 ** len(keep)
    return reduced.reshape(d, d)


def pauli_labels(n_qubits: int) -> list[str]:
    return ["".join(p) for p in product("IXYZ", repeat=n_qubits)]


def pauli_matrix(label: str) -> np.ndarray:
    return tensor(*(PAULIS[c] for c in label))


def pauli_expand(U: np.ndarray) -> dict[str, complex]:
    """Coefficients ``a_P = Tr(P^dag U) / dim`` over the Pauli strings.

    Only one- and two-qubit operators are supported.
    """
    U = np.asarray(U, dtype=complex)
    if U.shape not in ((2, 2), (4, 4)):
        raise ValueError(f"unsupported dimension {U.shape}")
    n = _n_qubits(U.shape[0])
    dim = U.shape[0]
    return {
        lab: complex(np.trace(pauli_matrix(lab).conj().T @ U) / dim)
        for lab in pauli_labels(n)
    }


def pauli_reconstruct(coeffs: dict[str, complex]) -> np.ndarray:
    return sum(c * pauli_matrix(lab) for lab, c in coeffs.items())
