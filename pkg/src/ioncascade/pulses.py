"""Equatorial rotations, PB1 composite pulses and pi/2-pulse synthesis.

Every physical single-qubit operation is a calibrated pi/2 rotation about an
axis in the equatorial plane. ``decompose`` finds the fewest such rotations
whose product equals a requested 2x2 unitary (up to global phase, and
optionally up to free z-rotations on either side).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import qmc

HALF_PI = np.pi / 2
PI2_DURATION = 4e-6


def r_phi(theta: float, phi: float) -> np.ndarray:
    """``exp(-i theta/2 (X cos phi + Y sin phi))``."""
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    return np.array(
        [[c, -1j * np.exp(-1j * phi) * s], [-1j * np.exp(1j * phi) * s, c]],
        dtype=complex,
    )


def r_phi_batch(theta, phi) -> np.ndarray:
    """Vectorised ``r_phi`` over broadcast arrays; returns ``(..., 2, 2)``."""
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = -1j * np.exp(-1j * phi) * s
    out[..., 1, 0] = -1j * np.exp(1j * phi) * s
    return out


@dataclass(frozen=True)
class EquatorialPulse:
    theta: float
    phi: float
    duration: float = PI2_DURATION

    def matrix(self, scale: float = 1.0, dphi: float = 0.0) -> np.ndarray:
        return r_phi(self.theta * scale, self.phi + dphi)


@dataclass(frozen=True)
class CompositePulse:
    """Ordered (time-ordered) list of equatorial pulses realising ``R_phi(theta)``."""

    pulses: tuple[EquatorialPulse, ...]
    theta: float
    phi: float
    scheme: str = "bare"
    overhead: float = 0.0

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.pulses) + self.overhead

    def matrix(self, scale: float = 1.0, dphi: float = 0.0) -> np.ndarray:
        return composite_unitary(
            [p.theta for p in self.pulses], [p.phi for p in self.pulses], scale, dphi
        )


def composite_unitary(thetas, phis, scale=1.0, dphi=0.0) -> np.ndarray:
    """Product of time-ordered rotations, each angle scaled and phase shifted.

    ``scale`` and ``dphi`` may be arrays of a common batch shape; the result
    then has shape ``batch + (2, 2)``.
    """
    scale = np.asarray(scale, dtype=float)
    dphi = np.asarray(dphi, dtype=float)
    batch = np.broadcast_shapes(scale.shape, dphi.shape)
    U = np.broadcast_to(np.eye(2, dtype=complex), batch + (2, 2)).copy()
    for th, ph in zip(thetas, phis):
        U = r_phi_batch(th * scale, ph + dphi) @ U
    return U


def pb1_phase(theta: float) -> float:
    return float(np.arccos(-theta / (8 * np.pi)))


def pb1(theta: float, phi: float, unit: float = HALF_PI, overhead: float = 0.0) -> CompositePulse:
    """PB1 passband sequence ``2pi(phi+a) 4pi(phi-a) 2pi(phi+a) theta(phi)``.

    ``cos a = -theta / (8 pi)`` cancels the first-order amplitude error, and
    with it the first-order response to weak (crosstalk) driving. Full turns
    are chained from calibrated ``unit`` rotations.
    """
    if not 0 < theta < 2 * np.pi:
        raise ValueError(f"PB1 target angle {theta} outside (0, 2pi)")
    a = pb1_phase(theta)
    seq = []
    for turns, ph in ((2 * np.pi, phi + a), (4 * np.pi, phi - a), (2 * np.pi, phi + a)):
        n = int(round(turns / unit))
        seq += [EquatorialPulse(unit, ph, PI2_DURATION * unit / HALF_PI)] * n
    n_main = theta / unit
    if abs(n_main - round(n_main)) < 1e-12:
        seq += [EquatorialPulse(unit, phi, PI2_DURATION * unit / HALF_PI)] * int(round(n_main))
    else:
        seq.append(EquatorialPulse(theta, phi, PI2_DURATION * theta / HALF_PI))
    return CompositePulse(tuple(seq), theta, phi, "PB1", overhead)


def bare(theta: float, phi: float, overhead: float = 0.0) -> CompositePulse:
    return CompositePulse((EquatorialPulse(theta, phi, PI2_DURATION * theta / HALF_PI),), theta, phi, "bare", overhead)


def rotation_angle(U: np.ndarray) -> float:
    """Net rotation angle in [0, pi] of a 2x2 unitary (global phase removed)."""
    U = np.asarray(U)
    su = U / np.sqrt(np.linalg.det(U))
    return float(2 * np.arccos(min(1.0, abs(np.trace(su)) / 2)))


# --- quaternion machinery -------------------------------------------------
# A unit quaternion (w, x, y, z) stands for w I - i (x X + y Y + z Z).


def qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Quaternion product ``a b`` on the last axis (matrix product order)."""
    w1, v1 = a[..., :1], a[..., 1:]
    w2, v2 = b[..., :1], b[..., 1:]
    w = w1 * w2 - np.sum(v1 * v2, axis=-1, keepdims=True)
    v = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    return np.concatenate([w, v], axis=-1)


def to_quat(U: np.ndarray) -> np.ndarray:
    """Unit quaternion of ``U`` after projecting to SU(2) (sign arbitrary)."""
    U = np.asarray(U, dtype=complex)
    su = U / np.sqrt(np.linalg.det(U))
    w = 0.5 * np.real(su[0, 0] + su[1, 1])
    x = -0.5 * np.imag(su[0, 1] + su[1, 0])
    y = 0.5 * np.real(su[1, 0] - su[0, 1])
    z = -0.5 * np.imag(su[0, 0] - su[1, 1])
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([[w - 1j * z, -1j * x - y], [-1j * x + y, w + 1j * z]], dtype=complex)


def _half_pi_quat(phi: np.ndarray) -> np.ndarray:
    s = np.sqrt(0.5)
    return np.stack([np.full_like(phi, s), s * np.cos(phi), s * np.sin(phi), np.zeros_like(phi)], axis=-1)


def _half_pi_dquat(phi: np.ndarray) -> np.ndarray:
    s = np.sqrt(0.5)
    z = np.zeros_like(phi)
    return np.stack([z, -s * np.sin(phi), s * np.cos(phi), z], axis=-1)


def _axis_quat(beta: np.ndarray, axis: np.ndarray) -> np.ndarray:
    c = np.cos(beta / 2)[..., None]
    s = np.sin(beta / 2)[..., None]
    return np.concatenate([c, s * axis], axis=-1)


def _axis_dquat(beta: np.ndarray, axis: np.ndarray) -> np.ndarray:
    c = np.cos(beta / 2)[..., None]
    s = np.sin(beta / 2)[..., None]
    return 0.5 * np.concatenate([-s, c * axis], axis=-1)


Z_AXIS = np.array([0.0, 0.0, 1.0])


def equatorial_axis(psi: float) -> np.ndarray:
    return np.array([np.cos(psi), np.sin(psi), 0.0])


@dataclass(frozen=True)
class DecompositionResult:
    """``target ~ R_left(left) . R(pi/2, phis[-1]) ... R(pi/2, phis[0]) . R_right(right)``.

    ``phis`` are time ordered. ``left`` / ``right`` are the angles of the free
    rotations about the requested axes (zero when not requested).
    """

    phis: tuple[float, ...]
    left: float = 0.0
    right: float = 0.0
    residual: float = 0.0
    left_axis: tuple | None = None
    right_axis: tuple | None = None

    @property
    def n_pulses(self) -> int:
        return len(self.phis)

    @property
    def rz(self) -> float:
        """Trailing (output-side) z rotation when the left axis is z."""
        return self.left

    def pulse_product(self) -> np.ndarray:
        U = np.eye(2, dtype=complex)
        for ph in self.phis:
            U = r_phi(HALF_PI, ph) @ U
        return U

    def matrix(self) -> np.ndarray:
        U = self.pulse_product()
        if self.left_axis is not None:
            U = from_quat(_axis_quat(np.array(self.left), np.array(self.left_axis))) @ U
        if self.right_axis is not None:
            U = U @ from_quat(_axis_quat(np.array(self.right), np.array(self.right_axis)))
        return U


class DecompositionError(RuntimeError):
    pass


@dataclass
class SearchSettings:
    # on the quaternion distance, which bounds the operator-norm error
    tol: float = 1e-9
    restarts: int = 32
    max_iter: int = 200
    max_pulses: int = 4
    seed: int = 2015


DEFAULT_SEARCH = SearchSettings()


def _starts(n_params: int, restarts: int, seed: int) -> np.ndarray:
    if n_params == 0:
        return np.zeros((1, 0))
    sob = qmc.Sobol(d=n_params, scramble=True, seed=seed + 17 * n_params)
    return 2 * np.pi * sob.random(restarts)


def _forward(params, n, target, left_axis, right_axis):
    """Quaternion of the parametrised product plus its Jacobian."""
    B = params.shape[0]
    k = 0
    factors, dfactors = [], []
    if right_axis is not None:
        factors.append(_axis_quat(params[:, k], right_axis))
        dfactors.append(_axis_dquat(params[:, k], right_axis))
        k += 1
    for _ in range(n):
        factors.append(_half_pi_quat(params[:, k]))
        dfactors.append(_half_pi_dquat(params[:, k]))
        k += 1
    if left_axis is not None:
        factors.append(_axis_quat(params[:, k], left_axis))
        dfactors.append(_axis_dquat(params[:, k], left_axis))
        k += 1
    m = len(factors)
    one = np.zeros((B, 4))
    one[:, 0] = 1.0
    # prefix[k] = f_{k-1} ... f_0 (time order: later factors multiply on the left)
    prefix = [one]
    for f in factors:
        prefix.append(qmul(f, prefix[-1]))
    suffix = [one]
    for f in reversed(factors):
        suffix.append(qmul(suffix[-1], f))
    suffix = suffix[::-1]  # suffix[k] = f_{m-1} ... f_k
    q = prefix[-1]
    J = np.empty((B, 4, m))
    for idx in range(m):
        J[:, :, idx] = qmul(qmul(suffix[idx + 1], dfactors[idx]), prefix[idx])
    return q, J


def _infeasible(target_q, n, left_axis, right_axis) -> bool:
    """Cheap necessary conditions that rule out very short products."""
    w, x, y, z = target_q
    zl = left_axis is not None and np.allclose(left_axis, Z_AXIS)
    zr = right_axis is not None and np.allclose(right_axis, Z_AXIS)
    if left_axis is not None or right_axis is not None:
        if (left_axis is None or zl) and (right_axis is None or zr):
            if n == 0:
                return abs(x) + abs(y) > 1e-6
            if n == 1:
                # R_z(a) R(pi/2, p) R_z(b) keeps w^2 + z^2 = 1/2
                return abs(w * w + z * z - 0.5) > 1e-6
        return False
    if n == 1:
        return abs(abs(w) - np.sqrt(0.5)) > 1e-6 or abs(z) > 1e-6
    if n == 2:
        # R(pi/2,b) R(pi/2,a) has w = (1 - cos(b-a))/2 and z = -sin(b-a)/2
        return abs(w * w + z * z - abs(w)) > 1e-6
    return False


def _quat_distance(q: np.ndarray, target_q: np.ndarray) -> np.ndarray:
    """Sign-invariant Euclidean distance between unit quaternions."""
    return np.minimum(np.linalg.norm(q - target_q, axis=-1), np.linalg.norm(q + target_q, axis=-1))


def _search(target_q, n, left_axis, right_axis, settings: SearchSettings):
    n_params = n + (left_axis is not None) + (right_axis is not None)
    if n_params == 0:
        d = float(_quat_distance(np.array([[1.0, 0, 0, 0]]), target_q)[0])
        return (np.zeros(0), d) if d <= settings.tol else (None, d)
    if _infeasible(target_q, n, left_axis, right_axis):
        return None, np.inf
    params = _starts(n_params, settings.restarts, settings.seed)
    eye = np.eye(n_params)

    def residual(p):
        q, J = _forward(p, n, target_q, left_axis, right_axis)
        sgn = np.where(q @ target_q < 0, -1.0, 1.0)
        r = q - sgn[:, None] * target_q
        return r, J, np.sum(r**2, axis=1)

    r, J, cost = residual(params)
    lam = np.full(params.shape[0], 1e-3)
    for _ in range(settings.max_iter):
        # stop at the first converged start, or once every start has stalled
        JtJ = np.einsum("bim,bin->bmn", J, J)
        Jtr = np.einsum("bim,bi->bm", J, r)
        stalled = (lam > 1e10) | ((np.sum(Jtr**2, axis=1) < 1e-18) & (cost > 1e-14))
        if np.any(cost < 1e-24) or np.all(stalled):
            break
        step = np.linalg.solve(JtJ + lam[:, None, None] * eye, Jtr[..., None])[..., 0]
        trial = params - step
        r2, J2, cost2 = residual(trial)
        better = cost2 < cost * (1 - 1e-9)
        params = np.where(better[:, None], trial, params)
        r = np.where(better[:, None], r2, r)
        J = np.where(better[:, None, None], J2, J)
        cost = np.where(better, cost2, cost)
        lam = np.where(better, lam * 0.2, lam * 8.0)
    q, _ = _forward(params, n, target_q, left_axis, right_axis)
    dist = _quat_distance(q, target_q)
    i = int(np.argmin(dist))
    if dist[i] > settings.tol:
        return None, float(dist[i])
    return np.mod(params[i], 2 * np.pi), float(dist[i])


def decompose(
    target: np.ndarray,
    up_to_rz: bool = False,
    *,
    free_input_rz: bool = False,
    left_axis: Sequence[float] | None = None,
    settings: SearchSettings = DEFAULT_SEARCH,
) -> DecompositionResult:
    """Fewest calibrated pi/2 pulses realising ``target``.

    Parameters
    ----------
    target : (2, 2) unitary
    up_to_rz : bool
        Allow a free z rotation after the pulses (a deferred frame shift).
    free_input_rz : bool
        Allow a free z rotation before the pulses; only sound when the ion
        is known to sit in a z eigenstate.
    left_axis : 3-vector, optional
        Free rotation axis after the pulses, overriding ``up_to_rz``. Used to
        leave rotations that commute with the MS interaction unperformed.

    The search minimises the quaternion distance to ``target`` from
    quasi-random starts, trying 0, 1, ... ``settings.max_pulses`` pulses and
    returning the first pulse count that reaches ``settings.tol``.
    """
    target = np.asarray(target, dtype=complex)
    if target.shape != (2, 2) or not np.allclose(target.conj().T @ target, np.eye(2), atol=1e-9):
        raise ValueError("target must be a 2x2 unitary")
    la = None
    if left_axis is not None:
        la = np.asarray(left_axis, dtype=float)
        la = la / np.linalg.norm(la)
    elif up_to_rz:
        la = Z_AXIS
    ra = Z_AXIS if free_input_rz else None
    tq = to_quat(target)
    tq = tq * np.sign(tq[np.argmax(np.abs(tq))])
    key = (
        np.round(tq, 13).tobytes(),
        None if la is None else tuple(np.round(la, 13)),
        ra is not None,
        (settings.tol, settings.restarts, settings.max_iter, settings.max_pulses, settings.seed),
    )
    hit = _CACHE.get(key)
    if hit is None:
        hit = _decompose_impl(tq, la, ra, settings)
        if len(_CACHE) > 200_000:
            _CACHE.clear()
        _CACHE[key] = hit
    return hit


_CACHE: dict = {}


def _decompose_impl(target_q, la, ra, settings):
    last = np.inf
    for n in range(settings.max_pulses + 1):
        params, dist = _search(target_q, n, la, ra, settings)
        last = dist
        if params is None:
            continue
        k = 0
        right = 0.0
        if ra is not None:
            right = float(params[0])
            k = 1
        phis = tuple(float(p) for p in params[k:k + n])
        left = float(params[k + n]) if la is not None else 0.0
        if la is not None:
            left = float(np.angle(np.exp(1j * left)))
        if ra is not None:
            right = float(np.angle(np.exp(1j * right)))
        return DecompositionResult(
            phis, left, right, dist,
            None if la is None else tuple(la), None if ra is None else tuple(ra),
        )
    raise DecompositionError(
        f"no decomposition with <= {settings.max_pulses} pulses (best distance {last:.3g})"
    )
