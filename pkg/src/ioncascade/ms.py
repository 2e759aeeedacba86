"""Molmer-Sorensen interaction: effective propagators, echoes and a Fock-space oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .qcore import X, Y, expand, rz, tensor

# Gate time of 169 us with two loops fixes |nu - delta| = 2 pi * 2 / 169 us.
DEFAULT_GAP = -2 * np.pi * 2 / 169e-6
# Prefactor between the closed-form area and the oracle-calibrated one.
AREA_CONSTANT = 1.0


def closure_time(gap: float, loops: int) -> float:
    return 2 * np.pi * loops / abs(gap)


def geometric_area(omega: float, eta: float, gap: float, loops: int) -> float:
    """Area ``A`` in ``U = exp(-i A Jx~^2)`` after ``loops`` closed loops.

    Second-order Magnus expansion of the linear spin-motion Hamiltonian gives
    ``A = -(omega eta)^2 t_n / gap``; the sign follows the detuning side.
    """
    return -AREA_CONSTANT * (omega * eta) ** 2 * closure_time(gap, loops) / gap


@dataclass(frozen=True)
class MsParams:
    """MS drive on a chain with coupling weights ``weights`` (the c_i)."""

    weights: tuple[float, ...]
    area: float
    loops: int = 2
    gap: float = DEFAULT_GAP
    eta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(c) for c in self.weights))

    @property
    def omega(self) -> float:
        """Peak Rabi rate producing ``area`` at closure."""
        unit = geometric_area(1.0, self.eta, self.gap, self.loops)
        if unit * self.area < 0:
            raise ValueError("area sign incompatible with the detuning side")
        return float(np.sqrt(self.area / unit))

    @property
    def duration(self) -> float:
        return closure_time(self.gap, self.loops)

    @classmethod
    def calibrated(
        cls,
        weights: Sequence[float],
        pair: tuple[int, int],
        theta: float = np.pi / 4,
        loops: int = 2,
        gap: float = DEFAULT_GAP,
        eta: float = 0.1,
    ) -> "MsParams":
        """Area giving ``exp(-i theta X_i X_j)`` on ``pair``: ``2 A c_i c_j = theta``."""
        ci, cj = weights[pair[0]], weights[pair[1]]
        return cls(tuple(weights), theta / (2 * ci * cj), loops, gap, eta)


def pair_sums(weights: Sequence[float]) -> np.ndarray:
    """``sum_{i<j} c_i c_j x_i x_j`` for every X-basis product state ``x``."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    signs = 1 - 2 * ((np.arange(2**n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1)
    s = signs * w[None, :]
    return 0.5 * (np.sum(s, axis=1) ** 2 - np.sum(s**2, axis=1))


def ms_propagator(
    params: MsParams | None = None,
    n_qubits: int | None = None,
    *,
    weights: Sequence[float] | None = None,
    area: float | None = None,
    phases: Sequence[float] | None = None,
) -> np.ndarray:
    """``exp(-2iA sum_{i<j} c_i c_j s_i s_j)`` with ``s_i`` = X rotated by ``phases[i]``."""
    if params is not None:
        weights = params.weights if weights is None else weights
        area = params.area if area is None else area
    w = np.asarray(weights, dtype=float)
    n = len(w) if n_qubits is None else n_qubits
    if len(w) != n:
        raise ValueError(f"{len(w)} weights for {n} qubits")
    Hn = tensor(*([np.array([[1, 1], [1, -1]]) / np.sqrt(2)] * n))
    U = Hn @ np.diag(np.exp(-2j * float(area) * pair_sums(w))) @ Hn
    if phases is not None:
        R = tensor(*(rz(p) for p in phases))
        U = R @ U @ R.conj().T
    return U


def ms_propagator_factored(weights: Sequence[float], area: float) -> np.ndarray:
    """Product of per-pair ``exp(-2iA c_i c_j X_i X_j)`` factors."""
    w = np.asarray(weights, dtype=float)
    n = len(w)
    U = np.eye(2**n, dtype=complex)
    XX = np.kron(X, X)
    for i, j in combinations(range(n), 2):
        a = 2 * area * w[i] * w[j]
        f = np.cos(a) * np.eye(4) - 1j * np.sin(a) * XX
        U = expand(f, [i, j], n) @ U
    return U


def gray_subsets(items: Sequence[int]) -> list[tuple[int, ...]]:
    """All subsets of ``items`` ordered so consecutive subsets differ by one element."""
    items = list(items)
    out = []
    for k in range(2 ** len(items)):
        g = k ^ (k >> 1)
        out.append(tuple(items[b] for b in range(len(items)) if (g >> b) & 1))
    return out


@dataclass(frozen=True)
class EchoSequence:
    """Echoed MS gate: ``segments`` equal MS pieces with flips in between.

    ``labels[k]`` is the set of flipped ions during segment ``k``;
    ``flips[k]`` lists the ions flipped right before segment ``k``, and
    ``flips[-1]`` (one extra entry) restores the frame after the last segment.
    """

    n_qubits: int
    targets: tuple[int, ...]
    decoupled: tuple[int, ...]
    labels: tuple[tuple[int, ...], ...]
    flips: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def segments(self) -> int:
        return len(self.labels)


def echo_sequence(
    n_qubits: int,
    targets: Sequence[int],
    decouple: Sequence[int] | None = None,
    flip_targets: bool = False,
) -> EchoSequence:
    """Decoupling sequence for an MS gate on ``targets``.

    Every subset of the decoupled set ``D`` (default: all other ions) labels
    one transformed propagator; ``2**|D|`` segments in Gray-code order need a
    single flip between neighbouring segments. With ``flip_targets`` (one
    decoupled ion only) the targeted ions are flipped instead.
    """
    targets = tuple(sorted(int(t) for t in targets))
    if not targets:
        raise ValueError("targets must not be empty")
    if any(not 0 <= t < n_qubits for t in targets):
        raise ValueError(f"targets {targets} outside chain of {n_qubits}")
    if decouple is None:
        decouple = [q for q in range(n_qubits) if q not in targets]
    D = tuple(sorted(int(d) for d in decouple))
    if set(D) & set(targets):
        raise ValueError("decoupled ions overlap the targets")
    labels = gray_subsets(D)
    if flip_targets:
        if len(D) != 1:
            raise ValueError("flipping the targeted ions only works for one decoupled ion")
        # flipping S or its complement gives the same sign pattern
        rest = tuple(q for q in range(n_qubits) if q not in D)
        labels = [rest if S == D else S for S in labels]
    flips = []
    prev: set = set()
    for S in labels:
        flips.append(tuple(sorted(prev ^ set(S))))
        prev = set(S)
    flips.append(tuple(sorted(prev)))
    return EchoSequence(n_qubits, targets, D, tuple(tuple(s) for s in labels), tuple(flips))


def echo_flip(ion: int, n_qubits: int, phase: float = 0.0) -> np.ndarray:
    """``E_k = -i Y_k`` in a frame whose x axis sits at ``phase``."""
    E = -1j * (rz(phase) @ Y @ rz(-phase))
    return expand(E, [ion], n_qubits)


def echoed_propagator(
    params: MsParams, sequence: EchoSequence, phases: Sequence[float] | None = None
) -> np.ndarray:
    """Time-ordered product of MS segments (area ``A / 2**d`` each) and flips."""
    n = sequence.n_qubits
    seg_area = params.area / sequence.segments
    seg = ms_propagator(weights=params.weights, area=seg_area, phases=phases)
    ph = np.zeros(n) if phases is None else np.asarray(phases)
    U = np.eye(2**n, dtype=complex)
    for k in range(sequence.segments):
        for q in sequence.flips[k]:
            U = echo_flip(q, n, ph[q]) @ U
        U = seg @ U
    for q in sequence.flips[-1]:
        U = echo_flip(q, n, ph[q]) @ U
    return U


# --- Fock-space oracle ----------------------------------------------------


class TruncationError(RuntimeError):
    pass


def _ladder(n_max: int):
    a = np.diag(np.sqrt(np.arange(1, n_max + 1)), 1).astype(complex)
    x = (a + a.conj().T) / np.sqrt(2)
    p = 1j * (a.conj().T - a) / np.sqrt(2)
    return x, p


def _jx(weights: np.ndarray) -> np.ndarray:
    n = len(weights)
    J = np.zeros((2**n, 2**n), dtype=complex)
    for i, c in enumerate(weights):
        J += c * expand(X, [i], n)
    return J


def _evolve(params: MsParams, t_final: float, n_max: int, y0: np.ndarray, t_eval=None, rtol=1e-10):
    """Integrate i dy/dt = H(t) y in units of tau = |gap| t."""
    w = np.asarray(params.weights, dtype=float)
    x, p = _ladder(n_max)
    J = _jx(w)
    g = params.gap
    scale = np.sqrt(2) * params.omega * params.eta / abs(g)
    s = np.sign(g)
    Hx = scale * np.kron(J, x)
    Hp = scale * np.kron(J, p)
    dim = Hx.shape[0]
    shape = y0.shape

    def rhs(tau, y):
        Y_ = y.reshape(dim, -1)
        H = Hx * np.cos(s * tau) + Hp * np.sin(s * tau)
        return (-1j * (H @ Y_)).ravel()

    tau_f = abs(g) * t_final
    te = None if t_eval is None else abs(g) * np.asarray(t_eval)
    if tau_f == 0:
        return y0.reshape(shape)[None] if t_eval is not None else y0
    sol = solve_ivp(rhs, (0, tau_f), y0.ravel().astype(complex), method="DOP853",
                    rtol=rtol, atol=rtol * 1e-2, t_eval=te)
    if not sol.success:
        raise RuntimeError(sol.message)
    if t_eval is None:
        return sol.y[:, -1].reshape(shape)
    return np.moveaxis(sol.y, -1, 0).reshape((-1,) + shape)


def fock_oracle(
    params: MsParams, t: float, n_max: int = 20, check_convergence: bool = False
) -> np.ndarray:
    """Full propagator on spins (x) Fock space, motion truncated at ``n_max`` quanta.

    Basis order is spin-major: index ``s * (n_max + 1) + n``.
    """
    if n_max < 10:
        raise ValueError("n_max must be at least 10")
    n = len(params.weights)
    dim = 2**n * (n_max + 1)
    U = _evolve(params, t, n_max, np.eye(dim, dtype=complex))
    if check_convergence:
        big = _evolve(params, t, n_max + 5, np.eye(2**n * (n_max + 6), dtype=complex))
        idx = np.array([s * (n_max + 6) + k for s in range(2**n) for k in range(n_max + 1)])
        small_idx = np.array([s * (n_max + 1) for s in range(2**n)])
        big_idx = np.array([s * (n_max + 6) for s in range(2**n)])
        shift = np.max(np.abs(U[np.ix_(np.arange(dim), small_idx)] - big[np.ix_(idx, big_idx)]))
        if shift > 1e-6:
            raise TruncationError(f"vacuum columns moved by {shift:.2e} when n_max grew")
    return U


def spin_block(U: np.ndarray, n_qubits: int, n_max: int, fock: int = 0) -> np.ndarray:
    """``<fock| U |fock>`` on the spin space."""
    idx = np.arange(2**n_qubits) * (n_max + 1) + fock
    return U[np.ix_(idx, idx)]


def jx_squared_propagator(weights: Sequence[float], area: float) -> np.ndarray:
    """``exp(-i A Jx~^2)`` including the global c_i^2 phase."""
    J = _jx(np.asarray(weights, dtype=float))
    evals, evecs = np.linalg.eigh(J)
    return evecs @ np.diag(np.exp(-1j * area * evals**2)) @ evecs.conj().T


def motional_populations(state: np.ndarray, n_qubits: int, n_max: int) -> np.ndarray:
    psi = state.reshape(2**n_qubits, n_max + 1)
    return np.sum(np.abs(psi) ** 2, axis=0)


def ms_population_trace(
    params: MsParams, times: Sequence[float], n_max: int = 20, initial: str | None = None
) -> np.ndarray:
    """Spin populations ``P_s(t)`` from the oracle, motion starting in vacuum.

    Returns an array of shape ``(len(times), 2**n)``; columns ordered
    ``00, 01, 10, 11`` for two ions.
    """
    n = len(params.weights)
    initial = "0" * n if initial is None else initial
    y0 = np.zeros(2**n * (n_max + 1), dtype=complex)
    y0[int(initial, 2) * (n_max + 1)] = 1.0
    times = np.asarray(times, dtype=float)
    traj = _evolve(params, float(np.max(times)), n_max, y0, t_eval=times)
    psi = traj.reshape(len(times), 2**n, n_max + 1)
    return np.sum(np.abs(psi) ** 2, axis=2)


def fit_area(spin_U: np.ndarray, weights: Sequence[float], guess: float) -> float:
    """Area whose ``exp(-i A Jx~^2)`` best matches ``spin_U`` up to global phase."""
    from scipy.optimize import minimize_scalar

    def cost(a):
        V = jx_squared_propagator(weights, a)
        return 1 - abs(np.trace(V.conj().T @ spin_U)) / V.shape[0]

    res = minimize_scalar(cost, bracket=(guess * 0.9, guess * 1.1), tol=1e-14)
    return float(res.x)
