"""Cascaded compilation of circuits into transport-interleaved pulse programs.

The compiler keeps, for every ion ``j``, a frame angle ``f_j`` and a pending
unitary ``P_j`` such that

    R_z(f_j) . P_j . (physical unitary applied so far) = (requested unitary)

up to global phase. Requests multiply ``P_j`` from the left, physical
rotations (targeted pulses and calibrated crosstalk) from the right, and
deferred z rotations only move ``f_j``. Targeting ion ``j`` emits pulses that
realise ``P_j`` and leaves it at the identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .chain import IonChain
from .clifford import clifford
from .ms import DEFAULT_GAP, closure_time, echo_sequence, geometric_area
from .pulses import (
    DEFAULT_SEARCH,
    HALF_PI,
    PI2_DURATION,
    CompositePulse,
    SearchSettings,
    bare,
    decompose,
    equatorial_axis,
    pb1,
    r_phi,
)
from .qcore import H, I2, S, T, X, Y, Z, phase_distance, rz

TRANSPORT_TIME = 100e-6
WELL_CHANGE_TIME = 50e-6
ECHO_FLIP_TIME = 2 * PI2_DURATION


class CompilerError(ValueError):
    pass


class CircuitError(CompilerError):
    """Invalid circuit; ``index`` is the offending gate position."""

    def __init__(self, message: str, index: int | None = None, line: int | None = None):
        where = []
        if index is not None:
            where.append(f"gate {index}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.index = index
        self.line = line


def rx(theta: float) -> np.ndarray:
    return r_phi(theta, 0.0)


def ry(theta: float) -> np.ndarray:
    return r_phi(theta, HALF_PI)


# --- circuit IR -----------------------------------------------------------

FIXED_GATES = {"I": I2, "X": X, "Y": Y, "Z": Z, "H": H, "S": S, "T": T}
# diagonal gates handled as frame shifts
FRAME_ANGLES = {"I": 0.0, "Z": np.pi, "S": np.pi / 2, "T": np.pi / 4}
GATE_ARITY = {
    **{g: (1, 0) for g in FIXED_GATES},
    "RX": (1, 1),
    "RY": (1, 1),
    "RZ": (1, 1),
    "R": (1, 2),
    "C": (1, 1),
    "MS": (2, 1),
    "CNOT": (2, 0),
    "PREPARE": (0, 0),
    "MEASURE": (0, 0),
}


@dataclass(frozen=True)
class Gate:
    """One circuit instruction. ``params`` are angles, or the Clifford index."""

    name: str
    qubits: tuple[int, ...] = ()
    params: tuple[float, ...] = ()
    line: int | None = None

    def matrix(self) -> np.ndarray:
        n = self.name
        if n in FIXED_GATES:
            return FIXED_GATES[n]
        if n == "RX":
            return rx(self.params[0])
        if n == "RY":
            return ry(self.params[0])
        if n == "RZ":
            return rz(self.params[0])
        if n == "R":
            return r_phi(self.params[0], self.params[1])
        if n == "C":
            return clifford(int(self.params[0]))
        raise ValueError(f"{n} is not a single-qubit gate")

    @property
    def frame_angle(self) -> float | None:
        """z angle when the gate is diagonal, else None."""
        if self.name in FRAME_ANGLES:
            return FRAME_ANGLES[self.name]
        if self.name == "RZ":
            return float(self.params[0])
        return None

    @property
    def is_single(self) -> bool:
        return GATE_ARITY[self.name][0] == 1


@dataclass
class CircuitIR:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def validate(self) -> "CircuitIR":
        if self.n_qubits < 1:
            raise CircuitError("chain must hold at least one ion")
        measured = False
        for k, g in enumerate(self.gates):
            if g.name not in GATE_ARITY:
                raise CircuitError(f"unknown gate {g.name!r}", k, g.line)
            nq, npar = GATE_ARITY[g.name]
            if len(g.qubits) != nq:
                raise CircuitError(f"{g.name} takes {nq} ion(s), got {len(g.qubits)}", k, g.line)
            if len(g.params) != npar:
                raise CircuitError(f"{g.name} takes {npar} parameter(s), got {len(g.params)}", k, g.line)
            for q in g.qubits:
                if not 0 <= q < self.n_qubits:
                    raise CircuitError(f"ion {q} outside chain of {self.n_qubits}", k, g.line)
            if nq == 2:
                a, b = g.qubits
                if a == b:
                    raise CircuitError(f"{g.name} needs two distinct ions", k, g.line)
                if abs(a - b) != 1:
                    raise CircuitError(f"{g.name} on non-adjacent ions {a}, {b}", k, g.line)
            if g.name == "C" and not (float(g.params[0]).is_integer() and 0 <= g.params[0] < 24):
                raise CircuitError("Clifford index must be an integer in 0..23", k, g.line)
            if any(not np.isfinite(p) for p in g.params):
                raise CircuitError("non-finite parameter", k, g.line)
            if g.name == "PREPARE" and k != 0:
                raise CircuitError("PREPARE must be the first instruction", k, g.line)
            if measured and g.name != "MEASURE":
                raise CircuitError("gate after MEASURE", k, g.line)
            if g.name == "MEASURE":
                measured = True
        return self


def cnot_expansion(control: int, target: int, line: int | None = None) -> list[Gate]:
    """CNOT as single-qubit rotations around ``exp(-i pi/4 X_c X_t)``."""
    return [
        Gate("RY", (control,), (HALF_PI,), line),
        Gate("RX", (control,), (-HALF_PI,), line),
        Gate("RX", (target,), (-HALF_PI,), line),
        Gate("MS", (control, target), (np.pi / 4,), line),
        Gate("RY", (control,), (-HALF_PI,), line),
    ]


# --- physical program -----------------------------------------------------


@dataclass(frozen=True)
class Transport:
    offset: float
    well: str
    target: int | None = None
    duration: float = TRANSPORT_TIME


@dataclass(frozen=True)
class WellChange:
    mode: str
    duration: float = WELL_CHANGE_TIME


@dataclass(frozen=True)
class Pulse:
    """One calibrated pi/2 composite addressed at ``target``'s cascade position."""

    target: int
    composite: CompositePulse
    offset: float

    @property
    def duration(self) -> float:
        return self.composite.duration

    @property
    def phi(self) -> float:
        return self.composite.phi


@dataclass(frozen=True)
class MsSegment:
    pair: tuple[int, int]
    area: float
    theta: float
    offset: float
    loops: int = 2
    gap: float = DEFAULT_GAP
    duration: float = 169e-6
    # common spin phase added to every ion's MS phase
    phase: float = 0.0


@dataclass(frozen=True)
class EchoFlip:
    """pi rotation of ``ion`` about the equatorial axis at ``phase`` (ion frame)."""

    ion: int
    phase: float
    duration: float = ECHO_FLIP_TIME


GATE_OPS = (Pulse, MsSegment, EchoFlip)


@dataclass(frozen=True)
class MsPhaseFrame:
    """Angles used around one MS gate.

    ``phi1``/``phi2`` are the free x rotations commuted through the
    interaction on the two ions; ``phi3`` the z rotations into the MS frame
    before it and ``phi4`` the ones undoing them afterwards.
    """

    pair: tuple[int, int]
    phi1: float
    phi2: float
    phi3: tuple[float, float]
    phi4: tuple[float, float]
    n_pre: int
    op_index: int


@dataclass
class PulseProgram:
    n_qubits: int
    ops: list = field(default_factory=list)
    frames: np.ndarray | None = None
    ms_frames: list[MsPhaseFrame] = field(default_factory=list)
    well: str = "single-qubit"
    offset: float | None = None

    def __post_init__(self):
        if self.frames is None:
            self.frames = np.zeros(self.n_qubits)
        self.offset_at_start = self.offset

    @classmethod
    def start(cls, chain: IonChain) -> "PulseProgram":
        """Empty program with the chain parked at the first cascade position.

        Reaching that position belongs to state preparation and is not counted.
        """
        return cls(chain.n_ions, offset=float(chain.target_offsets[chain.cascade_order[0]]))

    def append(self, op) -> None:
        self.ops.append(op)

    def copy(self) -> "PulseProgram":
        new = PulseProgram(self.n_qubits, list(self.ops), self.frames.copy(), list(self.ms_frames), self.well, self.offset)
        new.offset_at_start = self.offset_at_start
        return new

    def extend(self, other: "PulseProgram") -> "PulseProgram":
        """Concatenate ``other`` (its first placement is re-emitted if needed)."""
        if other.n_qubits != self.n_qubits:
            raise CompilerError("programs act on different chains")
        if other.offset_at_start is not None:
            self.goto(other.offset_at_start, "single-qubit")
        self.ops.extend(other.ops)
        self.well, self.offset = other.well, other.offset
        self.ms_frames.extend(other.ms_frames)
        return self

    def goto(self, offset: float, well: str) -> None:
        if well != self.well:
            self.ops.append(WellChange(well))
            self.well = well
            self.offset = None
        if self.offset is None or abs(offset - self.offset) > 1e-9:
            self.ops.append(Transport(float(offset), well))
            self.offset = float(offset)

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def duration(self) -> float:
        return float(sum(op.duration for op in self.ops))

    def count(self, kind) -> int:
        return sum(isinstance(op, kind) for op in self.ops)

    @property
    def gate_op_indices(self) -> list[int]:
        return [k for k, op in enumerate(self.ops) if isinstance(op, GATE_OPS)]

    def pulses_around_ms(self) -> list[tuple[int, int]]:
        """``(pre, post)`` pulse counts bracketing each MS gate."""
        out = []
        ms_blocks = []
        k = 0
        ops = self.ops
        while k < len(ops):
            if isinstance(ops[k], MsSegment):
                start = k
                while k < len(ops) and isinstance(ops[k], (MsSegment, EchoFlip)):
                    k += 1
                ms_blocks.append((start, k))
            else:
                k += 1
        bounds = [0] + [b for blk in ms_blocks for b in blk] + [len(ops)]
        for m in range(len(ms_blocks)):
            lo, hi = bounds[2 * m], bounds[2 * m + 1]
            lo2, hi2 = bounds[2 * m + 2], bounds[2 * m + 3]
            pre = sum(isinstance(op, Pulse) for op in ops[lo:hi])
            post = sum(isinstance(op, Pulse) for op in ops[lo2:hi2])
            out.append((pre, post))
        return out

    def validate(self) -> None:
        """Pulses only in the single-qubit well after a transport; MS only in the two-qubit well."""
        well, placed = "single-qubit", self.offset_at_start is not None
        in_ms = False
        for k, op in enumerate(self.ops):
            if isinstance(op, WellChange):
                well, placed = op.mode, False
                in_ms = False
            elif isinstance(op, Transport):
                if op.well != well:
                    raise CompilerError(f"op {k}: transport in {op.well!r} while well is {well!r}")
                placed = True
            elif isinstance(op, Pulse):
                if well != "single-qubit" or not placed:
                    raise CompilerError(f"op {k}: pulse without a single-qubit transport")
                if in_ms:
                    raise CompilerError(f"op {k}: pulse inside an MS block")
            elif isinstance(op, MsSegment):
                if well != "two-qubit" or not placed:
                    raise CompilerError(f"op {k}: MS segment outside the two-qubit well")
                in_ms = True
            elif isinstance(op, EchoFlip):
                if well != "two-qubit":
                    raise CompilerError(f"op {k}: echo flip outside the two-qubit well")
            else:
                raise CompilerError(f"op {k}: unknown op {op!r}")
        # every MS block must be closed by a well change back
        last_ms = max((k for k, op in enumerate(self.ops) if isinstance(op, MsSegment)), default=None)
        if last_ms is not None and not any(isinstance(op, WellChange) for op in self.ops[last_ms:]):
            raise CompilerError("MS segment not followed by a well change")

    def summary(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "ops": len(self.ops),
            "pulses": self.count(Pulse),
            "transports": self.count(Transport),
            "well_changes": self.count(WellChange),
            "ms_segments": self.count(MsSegment),
            "echo_flips": self.count(EchoFlip),
            "ms_pulse_counts": self.pulses_around_ms(),
            "duration_us": self.duration * 1e6,
            "frames": [float(f) for f in self.frames],
        }


# --- compiler state ---------------------------------------------------------


@dataclass
class CompilerOptions:
    composite: str = "PB1"
    composite_overhead: float = 52e-6
    optimize_ms: bool = True
    grid: int = 16
    echo: bool = True
    flip_targets: bool = False
    ground_state_rz: bool = False
    final: str = "rz"
    ms_loops: int = 2
    ms_gap: float = DEFAULT_GAP
    # force (phi1, phi2) instead of optimising them
    ms_angles: tuple[float, float] | None = None
    search: SearchSettings = field(default_factory=lambda: DEFAULT_SEARCH)

    def composite_pulse(self, phi: float) -> CompositePulse:
        if self.composite == "PB1":
            return pb1(HALF_PI, phi, overhead=self.composite_overhead)
        if self.composite == "bare":
            return bare(HALF_PI, phi)
        raise CompilerError(f"unknown composite scheme {self.composite!r}")


def _is_diagonal(U: np.ndarray, tol: float = 1e-12) -> bool:
    return abs(U[0, 1]) <= tol and abs(U[1, 0]) <= tol


class CompilerLedger:
    """Per-ion pending unitaries, deferred frame angles and ground-state flags."""

    def __init__(self, n_qubits: int):
        self.n_qubits = n_qubits
        self.pending = [I2.copy() for _ in range(n_qubits)]
        self.frames = np.zeros(n_qubits)
        self.fresh = [True] * n_qubits

    def copy(self) -> "CompilerLedger":
        new = CompilerLedger(self.n_qubits)
        new.pending = [p.copy() for p in self.pending]
        new.frames = self.frames.copy()
        new.fresh = list(self.fresh)
        return new

    def _check(self, ion: int) -> None:
        if not 0 <= ion < self.n_qubits:
            raise IndexError(f"ion {ion} outside ledger of {self.n_qubits}")

    def local(self, ion: int) -> np.ndarray:
        """``R_z(f) P``: what still separates requested from physical."""
        return rz(self.frames[ion]) @ self.pending[ion]

    def request(self, ion: int, U: np.ndarray) -> None:
        self._check(ion)
        f = self.frames[ion]
        self.pending[ion] = rz(-f) @ np.asarray(U, dtype=complex) @ rz(f) @ self.pending[ion]

    def defer_rz(self, ion: int, alpha: float) -> None:
        self._check(ion)
        self.frames[ion] += alpha

    def physical(self, ion: int, U: np.ndarray) -> None:
        """Record a rotation that physically happened to ``ion``."""
        self._check(ion)
        self.pending[ion] = self.pending[ion] @ np.asarray(U).conj().T
        if not _is_diagonal(U):
            self.fresh[ion] = False

    def stored(self, ion: int) -> np.ndarray:
        return self.pending[ion].copy()

    def is_clear(self, ion: int, up_to_rz: bool = False, tol: float = 1e-10) -> bool:
        P = self.pending[ion]
        if up_to_rz:
            return abs(P[0, 1]) <= tol and abs(P[1, 0]) <= tol
        return phase_distance(P, I2) <= tol


def defer_rz(ledger: CompilerLedger, ion: int, alpha: float) -> CompilerLedger:
    """Fold ``R_z(alpha)`` on ``ion`` into its frame; later pulse phases shift by ``-alpha``."""
    ledger.defer_rz(ion, alpha)
    return ledger


# --- emission -------------------------------------------------------------


def _emit(program, ledger, chain: IonChain, ion: int, phis: Iterable[float], opts: CompilerOptions) -> int:
    phis = list(phis)
    if not phis:
        return 0
    offset = float(chain.target_offsets[ion])
    program.goto(offset, "single-qubit")
    resp = chain.responses[ion]
    for phi in phis:
        comp = opts.composite_pulse(float(phi))
        program.append(Pulse(ion, comp, offset))
        for j, (ratio, dphase) in resp.trailing.items():
            if ratio == 0.0:
                continue
            ledger.physical(j, comp.matrix(ratio, dphase))
    return len(phis)


def _flush(program, ledger, chain, ion, opts: CompilerOptions, up_to_rz: bool) -> int:
    """Target ``ion``: emit pulses realising its pending unitary."""
    if ledger.is_clear(ion, up_to_rz):
        if up_to_rz:
            P = ledger.pending[ion]
            ledger.frames[ion] += float(np.angle(P[1, 1]) - np.angle(P[0, 0]))
        ledger.pending[ion] = I2.copy()
        return 0
    P = ledger.pending[ion]
    free_in = opts.ground_state_rz and ledger.fresh[ion]
    res = decompose(P, up_to_rz, free_input_rz=free_in, settings=opts.search)
    if free_in:
        ledger.pending[ion] = P @ rz(-res.right)
    n = _emit(program, ledger, chain, ion, res.phis, opts)
    left = rz(res.left) if up_to_rz else I2
    if phase_distance(ledger.pending[ion], left) > 1e-9:
        raise CompilerError(f"ion {ion}: pending unitary not cleared after targeting")
    if up_to_rz:
        ledger.frames[ion] += res.left
    ledger.pending[ion] = I2.copy()
    return n


def compile_cascade(
    targets: Mapping[int, np.ndarray] | Sequence[np.ndarray],
    chain: IonChain,
    ledger: CompilerLedger | None = None,
    program: PulseProgram | None = None,
    options: CompilerOptions | None = None,
    up_to_rz: bool = False,
) -> tuple[PulseProgram, CompilerLedger]:
    """Request ``targets`` and sweep the chain once, clearing every ledger entry.

    Each step targets one ion with pulses realising its pending unitary,
    which already contains the crosstalk left by the previous steps; the
    crosstalk of this step lands on ions still ahead in the cascade.
    """
    opts = options or CompilerOptions()
    n = chain.n_ions
    ledger = ledger or CompilerLedger(n)
    program = program if program is not None else PulseProgram.start(chain)
    if ledger.n_qubits != n:
        raise CompilerError(f"ledger holds {ledger.n_qubits} ions, chain {n}")
    items = targets.items() if isinstance(targets, Mapping) else enumerate(targets)
    for ion, U in items:
        if U is not None:
            ledger.request(int(ion), U)
    for ion in chain.cascade_order:
        _flush(program, ledger, chain, ion, opts, up_to_rz)
    program.frames = ledger.frames.copy()
    return program, ledger


# --- MS gates ---------------------------------------------------------------


def _count(target, opts, *, up_to_rz=False, free_in=False) -> int:
    return decompose(target, up_to_rz, free_input_rz=free_in, settings=opts.search).n_pulses


def _post_target(beta: float, psi: float, post: Sequence[Gate]) -> np.ndarray:
    """Local ledger entry after the MS plus the gates that follow it."""
    f = 0.0
    P = rx(beta) @ rz(-psi)
    for g in post:
        ang = g.frame_angle
        if ang is not None:
            f += ang
        else:
            P = rz(-f) @ g.matrix() @ rz(f) @ P
    return P


def _choose_beta(L, psi, post, post_rz, free_in, opts: CompilerOptions) -> float:
    cands = [2 * np.pi * k / opts.grid for k in range(opts.grid)]
    axis = equatorial_axis(psi)
    pre_fit = decompose(rz(psi) @ L, left_axis=axis, free_input_rz=free_in, settings=opts.search)
    cands.append(pre_fit.left)
    B = _post_target(0.0, 0.0, post)
    post_fit = decompose(rz(psi) @ B.conj().T, left_axis=axis, settings=opts.search)
    cands.append(post_fit.left)
    best, best_score = 0.0, None
    for beta in cands:
        n_pre = _count(rz(psi) @ rx(-beta) @ L, opts, free_in=free_in)
        n_post = _count(_post_target(beta, psi, post), opts, up_to_rz=post_rz)
        score = (n_pre + n_post, n_pre)
        if best_score is None or score < best_score:
            best, best_score = float(beta), score
    return best


def _pre_ms(order, psi, ledger, program, chain, opts, post, post_rz, betas=None):
    """Emit the pulses bringing each pair ion into MS form; returns betas and counts."""
    chosen = {}
    n_pre = n_post = 0
    for j in order:
        L = ledger.local(j)
        free_in = opts.ground_state_rz and ledger.fresh[j]
        if betas is not None:
            beta = betas[j]
        elif opts.optimize_ms:
            beta = _choose_beta(L, psi[j], post.get(j, []), post_rz.get(j, False), free_in, opts)
        else:
            beta = 0.0
        chosen[j] = beta
        res = decompose(rz(psi[j]) @ rx(-beta) @ L, free_input_rz=free_in, settings=opts.search)
        if free_in:
            ledger.pending[j] = ledger.pending[j] @ rz(-res.right)
        n_pre += _emit(program, ledger, chain, j, res.phis, opts)
        if phase_distance(ledger.local(j), rx(beta) @ rz(-psi[j])) > 1e-9:
            raise CompilerError(f"ion {j}: ledger not in MS form before the gate")
        ledger.frames[j] = 0.0
        ledger.pending[j] = rx(beta) @ rz(-psi[j])
        ledger.fresh[j] = False
        n_post += _count(_post_target(beta, psi[j], post.get(j, [])), opts, up_to_rz=post_rz.get(j, False))
    return chosen, n_pre, n_post


def compile_ms(
    pair: tuple[int, int],
    theta: float,
    chain: IonChain,
    ledger: CompilerLedger,
    program: PulseProgram | None = None,
    options: CompilerOptions | None = None,
    post: Mapping[int, Sequence[Gate]] | None = None,
    post_rz: Mapping[int, bool] | None = None,
) -> tuple[PulseProgram, CompilerLedger]:
    """Append ``exp(-i theta X_a X_b)`` on an adjacent pair.

    Before the gate each targeted ion ``j`` receives pulses realising
    ``R_z(psi_j) R_x(-beta_j) L_j`` (``L_j`` its ledger entry, ``psi_j`` the
    MS phase in its frame), which leaves ``R_x(beta_j) R_z(-psi_j)`` in the
    ledger; that entry commutes through the interaction, so nothing else is
    needed afterwards. ``beta_j`` is picked to minimise the pulse count
    before and after the gate, given the gates in ``post``.
    """
    opts = options or CompilerOptions()
    n = chain.n_ions
    program = program if program is not None else PulseProgram.start(chain)
    a, b = (int(q) for q in pair)
    if abs(a - b) != 1:
        raise CompilerError(f"MS pair ({a}, {b}) is not adjacent")
    if theta == 0:
        return program, ledger
    post = post or {}
    post_rz = post_rz or {}
    key = (min(a, b), max(a, b))
    weights, psi = chain.ms_frame(key)
    if theta < 0:
        # X_a -> -X_a under a pi z rotation
        ledger.request(a, Z)
        post = dict(post)
        post[a] = [Gate("Z", (a,))] + list(post.get(a, []))
    order = [q for q in chain.cascade_order if q in (a, b)]
    phases = [0.0]
    forced = None
    if opts.ms_angles is not None:
        forced = {key[0]: float(opts.ms_angles[0]), key[1]: float(opts.ms_angles[1])}
    elif opts.optimize_ms:
        phases += [float(-psi[a]), float(-psi[b])]
    best = None
    for common in phases:
        trial = ledger.copy()
        scratch = PulseProgram(n)
        betas, n_pre, n_post = _pre_ms(order, psi + common, trial, scratch, chain, opts, post, post_rz, forced)
        score = (n_pre + n_post, n_pre)
        if best is None or score < best[0]:
            best = (score, common, betas)
    _, common, betas = best
    psi = psi + common
    # replay the chosen plan on the real ledger
    betas, n_pre, _ = _pre_ms(order, psi, ledger, program, chain, opts, post, post_rz, betas)

    ca, cb = weights[a], weights[b]
    if ca * cb <= 0:
        raise CompilerError(f"pair ({a}, {b}) has no usable MS coupling")
    area = abs(theta) / (2 * ca * cb)
    program.goto(chain.ms_offset(key), "two-qubit")
    ms_index = len(program.ops)
    spectators = [k for k in range(n) if k not in key and abs(weights[k]) > 1e-12]
    if opts.echo and spectators:
        seq = echo_sequence(n, key, spectators, flip_targets=opts.flip_targets)
    else:
        seq = echo_sequence(n, key, [])
    segs = seq.segments
    loops = max(1, opts.ms_loops // segs) if segs > 1 else opts.ms_loops
    omega_eta2 = area / geometric_area(1.0, 1.0, opts.ms_gap, opts.ms_loops)
    gap = -np.sqrt(omega_eta2 * 2 * np.pi * loops / (area / segs)) if segs > 1 else opts.ms_gap
    for s in range(segs):
        for k in seq.flips[s]:
            program.append(EchoFlip(k, float(psi[k] + HALF_PI)))
        program.append(
            MsSegment(
                key, area / segs, abs(theta) / segs, float(chain.ms_offset(key)),
                loops, gap, closure_time(gap, loops), common,
            )
        )
    for k in seq.flips[-1]:
        program.append(EchoFlip(k, float(psi[k] + HALF_PI)))
    program.append(WellChange("single-qubit"))
    program.well, program.offset = "single-qubit", None
    program.ms_frames.append(
        MsPhaseFrame(
            key,
            betas.get(key[0], 0.0),
            betas.get(key[1], 0.0),
            (float(psi[key[0]]), float(psi[key[1]])),
            (float(-psi[key[0]]), float(-psi[key[1]])),
            n_pre,
            ms_index,
        )
    )
    if theta < 0:
        ledger.request(a, Z)
    return program, ledger


# --- circuits ---------------------------------------------------------------


def expand_gates(ir: CircuitIR) -> list[Gate]:
    out = []
    for g in ir.gates:
        if g.name == "CNOT":
            out.extend(cnot_expansion(*g.qubits, line=g.line))
        else:
            out.append(g)
    return out


def _lookahead(gates: list[Gate], start: int, ion: int, final_rz: bool) -> tuple[list[Gate], bool]:
    """Single-qubit gates on ``ion`` after ``start`` up to its next flush."""
    out = []
    for g in gates[start:]:
        if g.name == "MEASURE":
            return out, True
        if g.name == "MS" and ion in g.qubits:
            return out, False
        if g.is_single and g.qubits[0] == ion:
            out.append(g)
    return out, final_rz


def compile_circuit(
    ir: CircuitIR, chain: IonChain, options: CompilerOptions | None = None
) -> PulseProgram:
    """Compile a validated circuit.

    Single-qubit gates accumulate in the ledger (diagonal ones as frame
    shifts) and are only emitted before an MS gate on that ion or before
    measurement, where they are realised up to a z rotation.
    """
    return compile_with_ledger(ir, chain, options)[0]


def compile_with_ledger(
    ir: CircuitIR,
    chain: IonChain,
    options: CompilerOptions | None = None,
    ledger: CompilerLedger | None = None,
    program: PulseProgram | None = None,
    finish: bool = True,
) -> tuple[PulseProgram, CompilerLedger]:
    """``compile_circuit`` continuing from (and returning) compiler state.

    With ``finish=False`` pending single-qubit gates stay in the ledger.
    """
    opts = options or CompilerOptions()
    if ir.n_qubits != chain.n_ions:
        raise CircuitError(f"circuit on {ir.n_qubits} ions, chain holds {chain.n_ions}")
    ir.validate()
    gates = expand_gates(ir)
    n = ir.n_qubits
    ledger = ledger if ledger is not None else CompilerLedger(n)
    program = program if program is not None else PulseProgram.start(chain)
    final_rz = opts.final == "rz"
    measured = False
    for k, g in enumerate(gates):
        if g.name == "PREPARE":
            continue
        if g.name == "MEASURE":
            for ion in chain.cascade_order:
                _flush(program, ledger, chain, ion, opts, True)
            measured = True
            continue
        if g.name == "MS":
            post, prz = {}, {}
            for q in g.qubits:
                post[q], prz[q] = _lookahead(gates, k + 1, q, final_rz)
            try:
                compile_ms(tuple(g.qubits), float(g.params[0]), chain, ledger, program, opts, post, prz)
            except CompilerError as exc:
                raise CircuitError(str(exc), k, g.line) from exc
            continue
        ion = g.qubits[0]
        ang = g.frame_angle
        if ang is not None:
            ledger.defer_rz(ion, ang)
        else:
            ledger.request(ion, g.matrix())
    if not measured and finish:
        for ion in chain.cascade_order:
            _flush(program, ledger, chain, ion, opts, final_rz)
    program.frames = ledger.frames.copy()
    return program, ledger
