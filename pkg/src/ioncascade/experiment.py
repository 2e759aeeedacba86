"""Virtual experiment: executes pulse programs shot by shot."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields
from itertools import product

import numpy as np

from .chain import IonChain
from .compiler import (
    EchoFlip,
    MsSegment,
    Pulse,
    PulseProgram,
    Transport,
    WellChange,
)
from .ms import pair_sums as _pair_sums
from .pulses import r_phi_batch
from .qcore import rz, tensor


@dataclass(frozen=True)
class NoiseModel:
    """Error channels of the virtual apparatus.

    ``amp_error`` is a static fractional Rabi-rate error and ``amp_sigma``
    the standard deviation of a per-shot Gaussian one; both scale every pulse
    angle. ``dephasing`` (rad^2/s) sets a per-ion z-phase random walk accrued
    over each operation's duration. ``ms_area_error``/``ms_area_sigma`` are
    the same for the MS area. ``spam_flip`` prepares an ion in |1> instead of
    |0>. Detection reads each ion correctly with ``detection_fidelity``;
    a bright ion then lights each neighbouring channel with probability
    ``pmt_crosstalk``. ``leading_crosstalk`` adds the uncompensated spill on
    the far side of the beam. ``phase_sigma`` (rad) is a laser phase jitter
    drawn afresh for every addressed pulse; composite pulses do not cancel it.
    """

    amp_error: float = 0.0
    amp_sigma: float = 0.0
    dephasing: float = 0.0
    ms_area_error: float = 0.0
    ms_area_sigma: float = 0.0
    phase_sigma: float = 0.0
    spam_flip: float = 0.0
    detection_fidelity: float = 0.98
    pmt_crosstalk: float = 0.05
    leading_crosstalk: bool = False

    def __post_init__(self):
        for name in ("spam_flip", "detection_fidelity", "pmt_crosstalk"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")
        for name in ("amp_sigma", "dephasing", "ms_area_sigma", "phase_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def ideal(cls) -> "NoiseModel":
        return cls(detection_fidelity=1.0, pmt_crosstalk=0.0)

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseModel":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown noise parameters {sorted(unknown)}")
        return cls(**data)

    @property
    def coherent(self) -> bool:
        """True when the unitary part is noiseless."""
        return (
            self.amp_error == 0 and self.amp_sigma == 0 and self.dephasing == 0
            and self.ms_area_error == 0 and self.ms_area_sigma == 0 and self.phase_sigma == 0
            and not self.leading_crosstalk
        )


@dataclass(frozen=True)
class ShotRecord:
    """Channel readouts, ``outcomes[s, j]`` True when channel ``j`` was bright."""

    outcomes: np.ndarray
    seed: int | None
    probabilities: np.ndarray = field(repr=False, default=None)

    @property
    def n_shots(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.outcomes.shape[1]

    def counts(self) -> np.ndarray:
        """Histogram over joint patterns, index with ion 0 as the MSB."""
        n = self.n_qubits
        idx = self.outcomes.astype(int) @ (1 << np.arange(n - 1, -1, -1))
        return np.bincount(idx, minlength=2**n)

    def frequencies(self) -> np.ndarray:
        return self.counts() / self.n_shots

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        n = self.n_qubits
        w.writerow(["state", "count", "frequency"])
        for k, c in enumerate(self.counts()):
            w.writerow([format(k, f"0{n}b"), int(c), c / self.n_shots])
        return buf.getvalue()


class ProgramError(ValueError):
    pass


def _apply_single(psi: np.ndarray, U: np.ndarray, q: int, n: int) -> np.ndarray:
    """Apply ``U`` (shape (2,2) or (B,2,2)) to qubit ``q`` of ``psi`` (B, 2**n)."""
    B = psi.shape[0]
    v = psi.reshape(B, 2**q, 2, 2 ** (n - q - 1))
    if U.ndim == 2:
        out = np.einsum("ij,bajc->baic", U, v)
    else:
        out = np.einsum("bij,bajc->baic", U, v)
    return out.reshape(B, 2**n)


def _apply_z_phases(psi: np.ndarray, phases: np.ndarray, n: int) -> np.ndarray:
    """Per-batch ``R_z(phases[:, j])`` on every ion, as one diagonal."""
    bits = (np.arange(2**n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    s = 2 * bits - 1  # -1 for |0>, +1 for |1>
    return psi * np.exp(0.5j * phases @ s.T)


@dataclass
class _ShotParams:
    eps: np.ndarray
    ms: np.ndarray
    rng: np.random.Generator | None
    dephasing: float
    phase_sigma: float = 0.0

    def jitter(self, B: int):
        if self.phase_sigma > 0 and self.rng is not None:
            return self.rng.normal(0.0, self.phase_sigma, size=B)
        return 0.0


def _evolve(
    program: PulseProgram,
    chain: IonChain,
    psi: np.ndarray,
    params: _ShotParams,
    leading: bool = False,
    stop_after: int | None = None,
) -> np.ndarray:
    """Run the ops on the batch of states ``psi``.

    ``stop_after`` freezes the gate beams after that many gate operations;
    transports and well changes keep happening.
    """
    n = program.n_qubits
    if chain.n_ions != n:
        raise ProgramError(f"program for {n} ions, chain holds {chain.n_ions}")
    B = psi.shape[0]
    gates_done = 0
    Hn = tensor(*([np.array([[1, 1], [1, -1]]) / np.sqrt(2)] * n))
    ms_cache = {}
    for op in program.ops:
        if params.dephasing > 0 and params.rng is not None:
            kicks = params.rng.normal(0.0, np.sqrt(params.dephasing * op.duration), size=(B, n))
            psi = _apply_z_phases(psi, kicks, n)
        if isinstance(op, (Transport, WellChange)):
            continue
        if stop_after is not None and gates_done >= stop_after:
            continue
        gates_done += 1
        if isinstance(op, Pulse):
            resp = chain.responses[op.target]
            hits = dict(resp.trailing)
            if leading:
                hits.update(resp.leading)
            comp = op.composite
            thetas = [p.theta for p in comp.pulses]
            phis = [p.phi for p in comp.pulses]
            jitter = params.jitter(B)
            for j, (ratio, dphase) in hits.items():
                if ratio == 0.0:
                    continue
                scale = ratio * (1.0 + params.eps)
                U = np.broadcast_to(np.eye(2, dtype=complex), (B, 2, 2)).copy()
                for th, ph in zip(thetas, phis):
                    U = r_phi_batch(th * scale, ph + dphase + jitter) @ U
                psi = _apply_single(psi, U, j, n)
        elif isinstance(op, EchoFlip):
            U = r_phi_batch(np.pi * (1.0 + params.eps), op.phase + params.jitter(B))
            psi = _apply_single(psi, U, op.ion, n)
        elif isinstance(op, MsSegment):
            key = (op.pair, op.phase)
            if key not in ms_cache:
                weights, phases = chain.ms_frame(op.pair)
                R = tensor(*(rz(p + op.phase) for p in phases))
                # exp(-2iA sum c_i c_j x_i x_j) = exp(-2iA * pair_sum) in the rotated X basis
                pair_sum = _pair_sums(weights)
                ms_cache[key] = (Hn @ R.conj().T, R @ Hn, pair_sum)
            into, out, pair_sum = ms_cache[key]
            area = op.area * (1.0 + params.ms)
            phase = np.exp(-2j * area[:, None] * pair_sum[None, :])
            psi = (psi @ into.T) * phase
            psi = psi @ out.T
        else:
            raise ProgramError(f"unknown op {op!r}")
    return psi


def _shot_params(noise: NoiseModel, T: int, rng: np.random.Generator) -> _ShotParams:
    eps = noise.amp_error + noise.amp_sigma * rng.standard_normal(T) if noise.amp_sigma else np.full(T, noise.amp_error)
    ms = (
        noise.ms_area_error + noise.ms_area_sigma * rng.standard_normal(T)
        if noise.ms_area_sigma
        else np.full(T, noise.ms_area_error)
    )
    return _ShotParams(eps, ms, rng, noise.dephasing, noise.phase_sigma)


def simulate_probabilities(
    program: PulseProgram,
    chain: IonChain,
    noise: NoiseModel | None = None,
    trajectories: int = 1,
    seed: int | None = None,
    stop_after: int | None = None,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Per-trajectory basis-state probabilities, shape ``(trajectories, 2**n)``.

    SPAM preparation flips are sampled per trajectory.
    """
    noise = noise or NoiseModel.ideal()
    n = program.n_qubits
    rng = np.random.default_rng(seed)
    T = 1 if noise.coherent and noise.spam_flip == 0 else trajectories
    params = _shot_params(noise, T, rng)
    psi = np.zeros((T, 2**n), dtype=complex)
    if initial is not None:
        psi[:] = np.asarray(initial, dtype=complex)
    elif noise.spam_flip > 0:
        flips = rng.random((T, n)) < noise.spam_flip
        idx = flips.astype(int) @ (1 << np.arange(n - 1, -1, -1))
        psi[np.arange(T), idx] = 1.0
    else:
        psi[:, 0] = 1.0
    psi = _evolve(program, chain, psi, params, noise.leading_crosstalk, stop_after)
    probs = np.abs(psi) ** 2
    probs /= probs.sum(axis=1, keepdims=True)
    if T != trajectories:
        probs = np.repeat(probs, trajectories, axis=0)
    return probs


def confusion_matrix(n_qubits: int, crosstalk: float, fidelity: float = 1.0) -> np.ndarray:
    """``C[obs, true]``: probability of channel pattern ``obs`` given ion pattern ``true``."""
    pats = np.array(list(product((0, 1), repeat=n_qubits)), dtype=bool)
    C = np.zeros((2**n_qubits, 2**n_qubits))
    for t, true in enumerate(pats):
        # each ion read correctly with `fidelity`
        p_bright = np.where(true, fidelity, 1.0 - fidelity)
        # stage 1: ion-level detection patterns
        det_pats = pats
        p_det = np.prod(np.where(det_pats, p_bright, 1 - p_bright), axis=1)
        for d, pd in zip(det_pats, p_det):
            if pd == 0:
                continue
            nb = np.zeros(n_qubits)
            nb[1:] += d[:-1]
            nb[:-1] += d[1:]
            p_lit = np.where(d, 1.0, 1.0 - (1.0 - crosstalk) ** nb)
            C[:, t] += pd * np.prod(np.where(pats, p_lit, 1 - p_lit), axis=1)
    return C


def _sample_readout(patterns: np.ndarray, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    out = patterns.copy()
    if noise.detection_fidelity < 1:
        wrong = rng.random(out.shape) >= noise.detection_fidelity
        out ^= wrong
    if noise.pmt_crosstalk > 0:
        nb = np.zeros(out.shape)
        nb[:, 1:] += out[:, :-1]
        nb[:, :-1] += out[:, 1:]
        p = 1.0 - (1.0 - noise.pmt_crosstalk) ** nb
        out = out | (rng.random(out.shape) < p)
    return out


def run_program(
    program: PulseProgram,
    chain: IonChain,
    noise: NoiseModel | None = None,
    n_shots: int = 1000,
    seed: int = 0,
    max_trajectories: int | None = None,
    stop_after: int | None = None,
) -> ShotRecord:
    """Sample ``n_shots`` experiment repetitions.

    Every shot draws its own noise realisation unless ``max_trajectories``
    caps the number of simulated trajectories; shots then cycle through them.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be positive")
    program.validate()
    noise = noise or NoiseModel.ideal()
    n = program.n_qubits
    seq = np.random.SeedSequence(seed)
    sim_seed, shot_seed = seq.spawn(2)
    T = n_shots if max_trajectories is None else min(n_shots, max_trajectories)
    probs = simulate_probabilities(program, chain, noise, T, sim_seed, stop_after)
    rng = np.random.default_rng(shot_seed)
    traj = np.arange(n_shots) % T
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(n_shots)
    idx = np.minimum((u[:, None] > cdf[traj]).sum(axis=1), 2**n - 1)
    patterns = ((idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1).astype(bool)
    outcomes = _sample_readout(patterns, noise, rng)
    return ShotRecord(outcomes, seed, probs.mean(axis=0))


def program_unitary(
    program: PulseProgram, chain: IonChain, leading: bool = False, stop_after: int | None = None
) -> np.ndarray:
    """Ideal net unitary of the program (columns are images of basis states)."""
    n = program.n_qubits
    dim = 2**n
    params = _ShotParams(np.zeros(dim), np.zeros(dim), None, 0.0)
    psi = _evolve(program, chain, np.eye(dim, dtype=complex), params, leading, stop_after)
    return psi.T


def infer_populations(
    counts: np.ndarray | ShotRecord,
    crosstalk: float,
    fidelity: float = 1.0,
    tol: float = 1e-13,
    max_iter: int = 100_000,
) -> np.ndarray:
    """Maximum-likelihood ion populations from channel-pattern counts.

    Expectation maximisation over the joint confusion model keeps the
    estimate on the probability simplex.
    """
    if isinstance(counts, ShotRecord):
        counts = counts.counts()
    counts = np.asarray(counts, dtype=float)
    dim = counts.shape[0]
    n = int(round(np.log2(dim)))
    if 2**n != dim or np.any(counts < 0) or counts.sum() <= 0:
        raise ValueError("counts must be a non-negative histogram over 2**n patterns")
    if not 0 <= crosstalk < 0.5:
        raise ValueError(f"confusion model singular for crosstalk {crosstalk}")
    if not 0.5 < fidelity <= 1:
        raise ValueError(f"confusion model singular for fidelity {fidelity}")
    C = confusion_matrix(n, crosstalk, fidelity)
    freq = counts / counts.sum()
    if crosstalk == 0 and fidelity == 1:
        return freq
    p = np.linalg.lstsq(C, freq, rcond=None)[0]
    if np.all(p >= -1e-12):
        p = np.clip(p, 0.0, None)
        return p / p.sum()
    # warm start inside the simplex, away from the boundary
    p = np.clip(p, 0.0, None) + 1e-3
    p /= p.sum()
    for _ in range(max_iter):
        pred = C @ p
        ratio = np.divide(freq, pred, out=np.zeros_like(freq), where=pred > 0)
        new = p * (C.T @ ratio)
        new /= new.sum()
        if np.max(np.abs(new - p)) < tol:
            p = new
            break
        p = new
    return p


def gate_scan(
    program: PulseProgram,
    chain: IonChain,
    k: int,
    noise: NoiseModel | None = None,
    n_shots: int = 160,
    seed: int = 0,
    max_trajectories: int | None = None,
) -> np.ndarray:
    """Measured populations with the gate beams shut off after ``k`` gate operations."""
    n_gates = len(program.gate_op_indices)
    if not 0 <= k <= n_gates:
        raise ValueError(f"k={k} outside 0..{n_gates}")
    noise = noise or NoiseModel.ideal()
    rec = run_program(program, chain, noise, n_shots, seed, max_trajectories, stop_after=k)
    return infer_populations(rec, noise.pmt_crosstalk, noise.detection_fidelity)


def ideal_scan(program: PulseProgram, chain: IonChain) -> np.ndarray:
    """Noiseless populations after each number of gate operations, ``(n_gates + 1, 2**n)``."""
    n_gates = len(program.gate_op_indices)
    rows = []
    for k in range(n_gates + 1):
        rows.append(simulate_probabilities(program, chain, stop_after=k)[0])
    return np.array(rows)
