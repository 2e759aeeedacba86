"""Randomized benchmarking, parity flopping and two-qubit process tomography."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from .chain import IonChain, TrapConfig
from .clifford import clifford, clifford_table, compose, inverse
from .compiler import (
    CircuitIR,
    CompilerLedger,
    CompilerOptions,
    Gate,
    PulseProgram,
    compile_cascade,
    compile_with_ledger,
)
from .experiment import (
    NoiseModel,
    infer_populations,
    run_program,
)
from .pulses import r_phi
from .qcore import X, Y, Z, cnot, equal_up_to_phase, pauli_expand, pauli_labels, pauli_matrix

__all__ = [
    "clifford_table",
    "FitError",
    "RbFit",
    "rb_model",
    "fit_rb",
    "rb_run",
    "RbExperiment",
    "bell_fidelity",
    "ParityScan",
    "parity_scan",
    "fit_parity",
    "ProcessMatrix",
    "chi_from_unitary",
    "chi_to_choi",
    "choi_to_chi",
    "project_physical",
    "mle_choi",
    "reconstruct",
    "process_fidelity",
    "qpt_programs",
    "qpt",
    "qpt_cnot",
]


class FitError(RuntimeError):
    pass


# --- randomized benchmarking --------------------------------------------------


def rb_model(L, eps_g: float, eps_m: float, offset: float = 0.5):
    """Mean survival ``offset + (1/2)(1 - 2 eps_m)(1 - 2 eps_g)^L``."""
    L = np.asarray(L, dtype=float)
    return offset + 0.5 * (1 - 2 * eps_m) * (1 - 2 * eps_g) ** L


@dataclass
class RbFit:
    eps_g: float
    eps_m: float
    eps_g_err: float
    eps_m_err: float
    chi2_red: float
    offset: float = 0.5

    @property
    def fidelity(self) -> float:
        """Average Clifford fidelity ``1 - eps_g``."""
        return 1.0 - self.eps_g


def fit_rb(
    lengths: Sequence[float],
    survival: Sequence[float],
    sem: Sequence[float] | None = None,
    free_offset: bool = False,
) -> RbFit:
    """Least-squares fit of the decay; the offset stays at 1/2 unless ``free_offset``."""
    L = np.asarray(lengths, dtype=float)
    y = np.asarray(survival, dtype=float)
    sigma = None
    if sem is not None:
        sigma = np.maximum(np.asarray(sem, dtype=float), 1e-6)
    tight = dict(maxfev=20000, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    try:
        if free_offset:
            popt, pcov = curve_fit(
                lambda x, g, m, c: rb_model(x, g, m, c), L, y, p0=(0.01, 0.01, 0.5),
                sigma=sigma, absolute_sigma=sigma is not None, **tight,
            )
        else:
            popt, pcov = curve_fit(
                rb_model, L, y, p0=(0.01, 0.01), sigma=sigma,
                absolute_sigma=sigma is not None, bounds=([-0.5, -0.5], [0.5, 0.5]), **tight,
            )
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"RB fit did not converge: {exc}") from exc
    if not np.all(np.isfinite(pcov)):
        pcov = np.full_like(pcov, np.inf) if sigma is None else pcov
    resid = y - (rb_model(L, *popt))
    dof = max(1, len(L) - len(popt))
    chi2 = np.sum((resid / sigma) ** 2) / dof if sigma is not None else np.sum(resid**2) / dof
    err = np.sqrt(np.abs(np.diag(pcov)))
    return RbFit(
        float(popt[0]), float(popt[1]), float(err[0]), float(err[1]), float(chi2),
        float(popt[2]) if free_offset else 0.5,
    )


@dataclass
class RbExperiment:
    """Sequences, per-ion survival and fits.

    ``sequences[s]`` has shape ``(L, n_ions)`` of Clifford indices and
    ``inverting[s]`` the final gate per ion sending the ideal state to |1>.
    """

    lengths: list[int]
    n_seq: int
    sequences: dict[int, list[np.ndarray]]
    inverting: dict[int, list[np.ndarray]]
    survival: np.ndarray  # (n_lengths, n_seq, n_ions)
    fits: list[RbFit]
    fit: RbFit
    model: str

    @property
    def mean_survival(self) -> np.ndarray:
        return self.survival.mean(axis=(1, 2))

    @property
    def sem(self) -> np.ndarray:
        per_seq = self.survival.mean(axis=2)
        return per_seq.std(axis=1, ddof=1) / np.sqrt(self.n_seq)

    @property
    def eps_g(self) -> float:
        return self.fit.eps_g

    @property
    def eps_m(self) -> float:
        return self.fit.eps_m

    @property
    def fidelity(self) -> float:
        return self.fit.fidelity

    def report(self) -> dict:
        return {
            "model": self.model,
            "lengths": list(self.lengths),
            "n_seq": self.n_seq,
            "mean_survival": self.mean_survival.tolist(),
            "sem": self.sem.tolist(),
            "eps_g": self.fit.eps_g,
            "eps_g_err": self.fit.eps_g_err,
            "eps_m": self.fit.eps_m,
            "eps_m_err": self.fit.eps_m_err,
            "chi2_red": self.fit.chi2_red,
            "fidelity": self.fit.fidelity,
            "per_ion": [{"eps_g": f.eps_g, "eps_m": f.eps_m, "eps_g_err": f.eps_g_err} for f in self.fits],
        }


@lru_cache(maxsize=1)
def _x_index() -> int:
    return next(k for k, C in enumerate(clifford_table()) if equal_up_to_phase(C, X))


def _random_sequence(L: int, n_ions: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    seq = rng.integers(0, 24, size=(L, n_ions))
    x_index = _x_index()
    inv = np.empty(n_ions, dtype=int)
    for q in range(n_ions):
        total = 0
        for c in seq[:, q]:
            total = compose(int(c), total)
        inv[q] = compose(x_index, inverse(total))
    return seq, inv


def _survival_clifford_model(seq, inv, depolarizing, spam, shots, rng) -> np.ndarray:
    """Per-ion |1> frequency with a depolarising error after each random Clifford.

    The inverting gate is error-free so the injected rates map one-to-one
    onto the fitted ``eps_g`` and ``eps_m``.
    """
    L, n = seq.shape
    q = 1.5 * depolarizing  # random non-identity Pauli with prob q shrinks the Bloch vector by 1 - 2p
    paulis = np.stack([X, Y, Z])
    table = np.stack(clifford_table())
    out = np.empty(n)
    for ion in range(n):
        psi = np.zeros((shots, 2), dtype=complex)
        psi[:, 0] = 1.0
        gates = list(seq[:, ion]) + [inv[ion]]
        for k, c in enumerate(gates):
            psi = psi @ table[c].T
            if k == L:
                break
            hit = rng.random(shots) < q
            if np.any(hit):
                which = rng.integers(0, 3, size=hit.sum())
                psi[hit] = np.einsum("bij,bj->bi", paulis[which], psi[hit])
        p1 = np.abs(psi[:, 1]) ** 2
        bright = rng.random(shots) < p1
        flip = rng.random(shots) < spam
        out[ion] = np.mean(bright ^ flip)
    return out


def _marginals(pops: np.ndarray, n: int) -> np.ndarray:
    bits = (np.arange(2**n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    return pops @ bits


def _rb_program(seq, inv, chain, options) -> PulseProgram:
    """One cascade per pass, each applying one Clifford to every ion."""
    n = chain.n_ions
    ledger = CompilerLedger(n)
    program = PulseProgram.start(chain)
    rows = list(seq) + [inv]
    for k, row in enumerate(rows):
        targets = {q: clifford(int(row[q])) for q in range(n)}
        compile_cascade(targets, chain, ledger, program, options, up_to_rz=True)
    return program


def rb_run(
    n_ions: int = 2,
    lengths: Sequence[int] = (1, 2, 4, 8, 16, 32, 64),
    n_seq: int = 50,
    noise: NoiseModel | None = None,
    seed: int = 0,
    model: str = "clifford",
    depolarizing: float = 0.0,
    spam: float = 0.0,
    shots: int = 100,
    chain: IonChain | None = None,
    options: CompilerOptions | None = None,
    max_trajectories: int | None = 50,
    free_offset: bool = False,
    infer: bool = False,
) -> RbExperiment:
    """Simultaneous single-qubit RB on every ion of the chain.

    ``model="clifford"`` applies ideal Cliffords with an injected
    depolarising error ``depolarizing`` per gate and a readout flip ``spam``.
    ``model="pulse"`` compiles every pass into a crosstalk-corrected cascade
    and runs it through the virtual experiment with ``noise``; the survival
    is the raw channel bright fraction, so readout error lands in ``eps_m``,
    or each ion's inferred |1> population when ``infer`` is set.
    """
    lengths = [int(L) for L in lengths]
    if not lengths:
        raise ValueError("lengths must not be empty")
    if model not in ("clifford", "pulse"):
        raise ValueError(f"unknown RB model {model!r}")
    rng = np.random.default_rng(seed)
    if model == "pulse":
        chain = chain or IonChain(TrapConfig(n_ions=n_ions))
        if chain.n_ions != n_ions:
            raise ValueError("chain length differs from n_ions")
        noise = noise or NoiseModel()
        options = options or CompilerOptions()
    sequences, inverting = {}, {}
    survival = np.empty((len(lengths), n_seq, n_ions))
    for li, L in enumerate(lengths):
        sequences[L], inverting[L] = [], []
        for s in range(n_seq):
            seq, inv = _random_sequence(L, n_ions, rng)
            sequences[L].append(seq)
            inverting[L].append(inv)
            if model == "clifford":
                survival[li, s] = _survival_clifford_model(seq, inv, depolarizing, spam, shots, rng)
            else:
                prog = _rb_program(seq, inv, chain, options)
                rec = run_program(prog, chain, noise, shots, int(rng.integers(2**32)), max_trajectories)
                if infer:
                    pops = infer_populations(rec, noise.pmt_crosstalk, noise.detection_fidelity)
                    survival[li, s] = _marginals(pops, n_ions)
                else:
                    survival[li, s] = rec.outcomes.mean(axis=0)
    per_seq = survival.mean(axis=2)
    sem = per_seq.std(axis=1, ddof=1) / np.sqrt(n_seq) if n_seq > 1 else None
    fit = fit_rb(lengths, per_seq.mean(axis=1), sem, free_offset)
    fits = []
    for q in range(n_ions):
        y = survival[:, :, q]
        e = y.std(axis=1, ddof=1) / np.sqrt(n_seq) if n_seq > 1 else None
        fits.append(fit_rb(lengths, y.mean(axis=1), e, free_offset))
    return RbExperiment(lengths, n_seq, sequences, inverting, survival, fits, fit, model)


# --- Bell-state parity ----------------------------------------------------------


def bell_fidelity(p00: float, p11: float, amplitude: float) -> float:
    """``(P00 + P11)/2 + |a|/2`` from populations and parity-fringe amplitude."""
    for name, v in (("p00", p00), ("p11", p11), ("amplitude", amplitude)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    if p00 + p11 > 1.0 + 1e-12:
        raise ValueError("p00 + p11 exceeds 1")
    return 0.5 * (p00 + p11) + 0.5 * amplitude


@dataclass
class ParityScan:
    phases: np.ndarray
    parity: np.ndarray
    amplitude: float
    phase_offset: float
    p00: float
    p11: float
    p_spectator: float | None = None

    @property
    def fidelity(self) -> float:
        return bell_fidelity(self.p00, self.p11, min(1.0, self.amplitude))

    def report(self) -> dict:
        out = {
            "phases": self.phases.tolist(),
            "parity": self.parity.tolist(),
            "amplitude": self.amplitude,
            "p00": self.p00,
            "p11": self.p11,
            "F_bell": self.fidelity,
        }
        if self.p_spectator is not None:
            out["p1_spectator"] = self.p_spectator
        return out


def fit_parity(phases: np.ndarray, parity: np.ndarray) -> tuple[float, float]:
    """Amplitude and phase of ``a cos(2 phi) + b sin(2 phi) + c``."""
    phases = np.asarray(phases, dtype=float)
    if len(np.unique(np.round(np.mod(2 * phases, 2 * np.pi), 12))) < 3:
        raise FitError("parity scan needs at least three distinct phases (mod pi)")
    M = np.column_stack([np.cos(2 * phases), np.sin(2 * phases), np.ones_like(phases)])
    (a, b, _), *_ = np.linalg.lstsq(M, parity, rcond=None)
    return float(np.hypot(a, b)), float(np.arctan2(b, a))


def _pair_marginals(pops: np.ndarray, pair: tuple[int, int], n: int, spectator_zero: bool):
    """Two-ion populations (00, 01, 10, 11) of ``pair``; optionally post-selected."""
    bits = (np.arange(2**n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    others = [q for q in range(n) if q not in pair]
    keep = np.ones(2**n, dtype=bool)
    if spectator_zero and others:
        keep = np.all(bits[:, others] == 0, axis=1)
    out = np.zeros(4)
    for k in np.flatnonzero(keep):
        out[2 * bits[k, pair[0]] + bits[k, pair[1]]] += pops[k]
    total = out.sum()
    p_spec = float(pops[~np.all(bits[:, others] == 0, axis=1)].sum()) if others else None
    return (out / total if total > 0 else out), p_spec


def parity_scan(
    chain: IonChain,
    pair: tuple[int, int] = (0, 1),
    phases: Sequence[float] | None = None,
    n_shots: int = 1000,
    noise: NoiseModel | None = None,
    seed: int = 0,
    options: CompilerOptions | None = None,
    theta: float = np.pi / 4,
    prefix: Sequence[Gate] = (),
    max_trajectories: int | None = 200,
    infer: bool = True,
) -> ParityScan:
    """MS Bell state on ``pair``, analysed with a pi/2 pulse of phase ``phi`` on both ions.

    Every scan point is compiled as one circuit from the ground state, so
    the compiler sees the analysis pulses when it places the MS gate. In
    longer chains the parity uses shots where every other ion was dark, and
    the population that leaked onto those ions is reported.
    """
    noise = noise or NoiseModel.ideal()
    n = chain.n_ions
    if phases is None:
        phases = np.linspace(0, np.pi, 16, endpoint=False)
    phases = np.asarray(phases, dtype=float)
    if len(np.unique(np.round(np.mod(2 * phases, 2 * np.pi), 12))) < 3:
        raise FitError("parity scan needs at least three distinct phases (mod pi)")
    opts = replace(options or CompilerOptions(), ground_state_rz=True)
    ss = np.random.SeedSequence(seed).spawn(len(phases) + 1)

    def measure(extra, s):
        ir = CircuitIR(n, list(prefix) + [Gate("MS", tuple(pair), (theta,))] + extra)
        prog = compile_with_ledger(ir, chain, opts)[0]
        rec = run_program(prog, chain, noise, n_shots, int(s.generate_state(1)[0]), max_trajectories)
        if infer:
            pops = infer_populations(rec, noise.pmt_crosstalk, noise.detection_fidelity)
        else:
            pops = rec.frequencies()
        return _pair_marginals(pops, tuple(pair), n, True)

    m0, p_spec = measure([], ss[0])
    parity = np.empty(len(phases))
    for k, phi in enumerate(phases):
        m, _ = measure([Gate("R", (q,), (np.pi / 2, float(phi))) for q in pair], ss[k + 1])
        parity[k] = m[0] + m[3] - m[1] - m[2]
    amp, off = fit_parity(phases, parity)
    return ParityScan(phases, parity, amp, off, float(m0[0]), float(m0[3]), p_spec)


# --- process tomography ----------------------------------------------------------

# preparations / analyses: |0>, |1>, |+>, |-i> = Rx(pi/2)|0>
TOMOGRAPHY_ROTATIONS = (
    np.eye(2, dtype=complex),
    r_phi(np.pi, 0.0),
    r_phi(np.pi / 2, np.pi / 2),
    r_phi(np.pi / 2, 0.0),
)


def chi_from_unitary(U: np.ndarray) -> np.ndarray:
    """Process matrix of ``rho -> U rho U^dag`` in the unnormalised Pauli basis."""
    coeffs = pauli_expand(U)
    u = np.array([coeffs[lab] for lab in pauli_labels(2)])
    return np.outer(u, u.conj())


def _kets() -> list[np.ndarray]:
    single = [R @ np.array([1, 0], dtype=complex) for R in TOMOGRAPHY_ROTATIONS]
    return [np.kron(a, b) for a in single for b in single]


@lru_cache(maxsize=1)
def _operators() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Design matrix, Choi-space measurement operators and the chi-to-Choi basis.

    Setting ``k = 16 i + j`` prepares ket ``i`` and projects onto ket ``j``:
    ``p_k = A[k] . vec(chi) = Tr(S M_k)`` with ``M_k = E_j (x) rho_i^T``.
    """
    kets = _kets()
    P = np.stack([pauli_matrix(lab) for lab in pauli_labels(2)])
    A = np.empty((256, 256), dtype=complex)
    for i, ki in enumerate(kets):
        Pk = P @ ki
        for j, mj in enumerate(kets):
            v = Pk @ mj.conj()
            A[16 * i + j] = np.outer(v, v.conj()).ravel()
    proj = np.stack([np.outer(k, k.conj()) for k in kets])
    M = np.einsum("jab,icd->ijacbd", proj, proj.conj()).reshape(256, 16, 16)
    W = P.reshape(16, 16).T.copy()  # column a is vec(P_a), row-major
    for arr in (A, M, W):
        arr.setflags(write=False)
    return A, M, W


def _design_matrix() -> np.ndarray:
    return _operators()[0]


def chi_to_choi(chi: np.ndarray) -> np.ndarray:
    W = _operators()[2]
    return W @ chi @ W.conj().T


def choi_to_chi(S: np.ndarray) -> np.ndarray:
    W = _operators()[2]
    return W.conj().T @ S @ W / 16


def project_physical(chi: np.ndarray) -> np.ndarray:
    """Closest unit-trace positive matrix in the 2-norm (works on stacks).

    Negative eigenvalue mass is removed from the bottom up and spread evenly
    over the eigenvalues that survive.
    """
    chi = 0.5 * (chi + np.swapaxes(chi.conj(), -1, -2))
    w, V = np.linalg.eigh(chi)
    tr = w.sum(axis=-1, keepdims=True)
    if np.any(tr <= 0):
        raise FitError("process matrix projection failed: non-positive trace")
    w = w / tr
    d = w.shape[-1]
    # eigh sorts ascending; try zeroing the k smallest for every k
    csum = np.cumsum(w, axis=-1)
    k = np.arange(d)
    shift = np.concatenate([np.zeros(w.shape[:-1] + (1,)), csum[..., :-1]], axis=-1) / (d - k)
    first = np.argmax(w + shift >= 0, axis=-1)[..., None]
    w = np.where(k < first, 0.0, w + np.take_along_axis(shift, first, axis=-1))
    return np.einsum("...ik,...k,...jk->...ij", V, w, V.conj())


def _inv_sqrt(L: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(L)
    return np.einsum("...ik,...k,...jk->...ij", V, 1 / np.sqrt(np.clip(w, 1e-300, None)), V.conj())


def mle_choi(
    p00: np.ndarray, start: np.ndarray | None = None, max_iter: int = 5000, tol: float = 1e-10
) -> np.ndarray:
    """Maximum-likelihood Choi matrices for rows of measured ``P(00)``.

    Each setting is a two-outcome measurement, ``E_j`` or its complement.
    The fixed-point iteration ``S -> L^-1 R S R L^-1`` keeps every iterate
    completely positive and trace preserving.
    """
    _, M, _ = _operators()
    f = np.clip(np.atleast_2d(np.asarray(p00, dtype=float)), 0.0, 1.0)
    T = f.shape[0]
    S = np.broadcast_to(np.eye(16) / 4 if start is None else start, (T, 16, 16)).astype(complex)
    Mflat = M.transpose(0, 2, 1).reshape(256, 256)  # p = Mflat @ vec(S)
    M1 = M.reshape(256, 256)
    eye4 = np.eye(4)
    prev = None
    for _ in range(max_iter):
        p = np.clip((S.reshape(T, 256) @ Mflat.T).real, 0.0, 1.0)
        r1 = np.divide(f, p, out=np.zeros_like(f), where=p > 1e-300)
        r0 = np.divide(1 - f, 1 - p, out=np.zeros_like(f), where=1 - p > 1e-300)
        # sum_k r1 M_k + r0 (M_k^c), with M_k^c = I (x) rho_i^T - M_k
        R = ((r1 - r0) @ M1).reshape(T, 16, 16) + _complement_sum(r0)
        RSR = R @ S @ R
        lam = _inv_sqrt(np.einsum("...rcrd->...cd", RSR.reshape(T, 4, 4, 4, 4)))
        L = np.einsum("ab,tcd->tacbd", eye4, lam).reshape(T, 16, 16)
        S = L @ RSR @ L
        if prev is not None and np.max(np.abs(p - prev)) < tol:
            break
        prev = p
    return S


@lru_cache(maxsize=1)
def _complement_base() -> np.ndarray:
    """``I (x) rho_i^T`` per setting, flattened to ``(256, 256)``."""
    kets = _kets()
    rhoT = np.stack([np.outer(k, k.conj()).T for k in kets])
    base = np.einsum("ab,icd->iacbd", np.eye(4), rhoT).reshape(16, 256)
    return np.repeat(base, 16, axis=0)


def _complement_sum(r0: np.ndarray) -> np.ndarray:
    return (r0 @ _complement_base()).reshape(-1, 16, 16)


@dataclass
class ProcessMatrix:
    chi: np.ndarray
    chi_ideal: np.ndarray
    fidelity: float
    fidelity_std: float
    bootstrap: np.ndarray = field(repr=False, default=None)
    probabilities: np.ndarray = field(repr=False, default=None)
    method: str = "mle"

    @property
    def fidelity_mean(self) -> float:
        return float(np.mean(self.bootstrap)) if self.bootstrap is not None else self.fidelity

    def report(self) -> dict:
        return {
            "method": self.method,
            "fidelity": self.fidelity,
            "fidelity_bootstrap_mean": self.fidelity_mean,
            "fidelity_std": self.fidelity_std,
            "labels": pauli_labels(2),
            "chi_real": np.real(self.chi).round(6).tolist(),
            "chi_imag": np.imag(self.chi).round(6).tolist(),
        }


def process_fidelity(chi: np.ndarray, chi_ideal: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("ij,...ji->...", chi_ideal, chi))


def _linear_chi(p00: np.ndarray) -> np.ndarray:
    lin = p00 @ np.linalg.pinv(_design_matrix()).T
    chi = lin.reshape(p00.shape[:-1] + (16, 16))
    return 0.5 * (chi + np.swapaxes(chi.conj(), -1, -2))


def _is_physical(S: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Choi stacks that are positive and trace preserving within ``tol``."""
    pos = np.linalg.eigvalsh(S)[..., 0] >= -tol
    tr = np.einsum("...rcrd->...cd", S.reshape(S.shape[:-2] + (4, 4, 4, 4)))
    tp = np.max(np.abs(tr - np.eye(4)), axis=(-2, -1)) <= tol
    return pos & tp


def reconstruct(p00: np.ndarray, method: str = "mle", start: np.ndarray | None = None, **kw) -> np.ndarray:
    """Physical chi matrices from ``P(00)`` rows of shape ``(..., 256)``.

    ``"linear"`` inverts the design matrix and projects; ``"mle"`` maximises
    the binomial likelihood over completely positive trace-preserving maps.
    """
    p00 = np.asarray(p00, dtype=float)
    if p00.shape[-1] != 256:
        raise ValueError("insufficient tomography settings: need 256 probabilities")
    if method == "linear":
        return project_physical(_linear_chi(p00))
    if method == "mle":
        rows = p00.reshape(-1, 256)
        S = mle_choi(rows, start, **kw)
        # a physical linear inversion already maximises the likelihood
        lin = chi_to_choi(_linear_chi(rows))
        ok = _is_physical(lin)
        S[ok] = lin[ok]
        return choi_to_chi(S).reshape(p00.shape[:-1] + (16, 16))
    raise ValueError(f"unknown reconstruction {method!r}")


def qpt_programs(process: PulseProgram, chain: IonChain, options: CompilerOptions | None = None) -> list[PulseProgram]:
    """All 256 preparation / analysis wrappings of a two-ion ``process`` program."""
    if chain.n_ions != 2 or process.n_qubits != 2:
        raise ValueError("process tomography needs a two-ion chain")
    opts = options or CompilerOptions()
    prep_opts = replace(opts, ground_state_rz=True)
    preps = []
    for a in TOMOGRAPHY_ROTATIONS:
        for b in TOMOGRAPHY_ROTATIONS:
            prog, _ = compile_cascade([a, b], chain, options=prep_opts)
            preps.append(prog)
    analyses = []
    for a in TOMOGRAPHY_ROTATIONS:
        for b in TOMOGRAPHY_ROTATIONS:
            led = CompilerLedger(2)
            led.frames = process.frames.copy()
            prog = PulseProgram(2)
            compile_cascade([a.conj().T, b.conj().T], chain, led, prog, opts, up_to_rz=True)
            analyses.append(prog)
    out = []
    for p in preps:
        for m in analyses:
            full = p.copy()
            full.extend(process)
            full.extend(m)
            out.append(full)
    return out


def qpt(
    process: PulseProgram,
    chain: IonChain,
    ideal: np.ndarray,
    shots_per_setting: int = 10_000,
    noise: NoiseModel | None = None,
    seed: int = 0,
    n_bootstrap: int = 10_000,
    options: CompilerOptions | None = None,
    max_trajectories: int | None = 100,
    method: str = "mle",
    bootstrap_iter: int = 50,
) -> ProcessMatrix:
    """Process tomography from the inferred probability of |00> in 256 settings.

    The bootstrap redraws binomial counts from the measured probabilities
    and repeats the reconstruction, warm-started at the point estimate.
    """
    noise = noise or NoiseModel.ideal()
    progs = qpt_programs(process, chain, options)
    ss = np.random.SeedSequence(seed)
    run_seeds = ss.spawn(len(progs) + 1)
    p00 = np.empty(256)
    for k, prog in enumerate(progs):
        rec = run_program(
            prog, chain, noise, shots_per_setting, int(run_seeds[k].generate_state(1)[0]), max_trajectories
        )
        p00[k] = infer_populations(rec, noise.pmt_crosstalk, noise.detection_fidelity)[0]
    chi_ideal = chi_from_unitary(ideal)
    chi = reconstruct(p00, method)
    fid = float(process_fidelity(chi, chi_ideal))
    boot = None
    std = 0.0
    if n_bootstrap:
        rng = np.random.default_rng(run_seeds[-1])
        draws = rng.binomial(shots_per_setting, np.clip(p00, 0, 1), size=(n_bootstrap, 256)) / shots_per_setting
        if method == "mle":
            chis = reconstruct(draws, "mle", start=chi_to_choi(chi), max_iter=bootstrap_iter)
        else:
            chis = reconstruct(draws, method)
        boot = process_fidelity(chis, chi_ideal)
        std = float(np.std(boot, ddof=1))
    return ProcessMatrix(chi, chi_ideal, fid, std, boot, p00, method)


def qpt_cnot(
    program: PulseProgram,
    chain: IonChain,
    shots_per_setting: int = 10_000,
    noise: NoiseModel | None = None,
    seed: int = 0,
    control: int = 0,
    **kwargs,
) -> ProcessMatrix:
    return qpt(program, chain, cnot(control, 1 - control, 2), shots_per_setting, noise, seed, **kwargs)
