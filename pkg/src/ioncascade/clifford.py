"""The 24-element single-qubit Clifford group as a lookup table."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .qcore import H, S, equal_up_to_phase


def _canonical(U: np.ndarray) -> np.ndarray:
    """Fix the global phase: first entry of largest modulus made real positive."""
    flat = U.ravel()
    k = int(np.argmax(np.abs(flat) > np.max(np.abs(flat)) - 1e-9))
    return U * np.exp(-1j * np.angle(flat[k]))


@lru_cache(maxsize=1)
def _group() -> tuple[tuple[np.ndarray, ...], np.ndarray, np.ndarray]:
    elements = [np.eye(2, dtype=complex)]
    frontier = [elements[0]]
    while frontier:
        nxt = []
        for U in frontier:
            for g in (H, S):
                V = _canonical(g @ U)
                if not any(equal_up_to_phase(V, W, 1e-9) for W in elements):
                    elements.append(V)
                    nxt.append(V)
        frontier = nxt
    n = len(elements)
    mult = np.empty((n, n), dtype=int)
    for a in range(n):
        for b in range(n):
            P = elements[a] @ elements[b]
            mult[a, b] = next(k for k, W in enumerate(elements) if equal_up_to_phase(P, W, 1e-9))
    inv = np.array([int(np.flatnonzero(mult[a] == 0)[0]) for a in range(n)])
    for e in elements:
        e.setflags(write=False)
    return tuple(elements), mult, inv


def clifford_table() -> tuple[np.ndarray, ...]:
    """The 24 Cliffords; index 0 is the identity."""
    return _group()[0]


def clifford(index: int) -> np.ndarray:
    table = clifford_table()
    if not 0 <= index < len(table):
        raise ValueError(f"Clifford index {index} outside 0..{len(table) - 1}")
    return table[index]


def compose(a: int, b: int) -> int:
    """Index of ``C_a @ C_b`` (``b`` applied first)."""
    return int(_group()[1][a, b])


def inverse(a: int) -> int:
    return int(_group()[2][a])


def multiplication_table() -> np.ndarray:
    return _group()[1].copy()
