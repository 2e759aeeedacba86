import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from ioncascade.compiler import (
    CircuitError,
    CircuitIR,
    CompilerError,
    CompilerLedger,
    CompilerOptions,
    Gate,
    MsSegment,
    Pulse,
    PulseProgram,
    Transport,
    WellChange,
    compile_cascade,
    compile_circuit,
    compile_with_ledger,
    defer_rz,
    expand_gates,
)
from ioncascade.experiment import program_unitary, simulate_probabilities
from ioncascade.ir import product_preparations
from ioncascade.qcore import cnot, expand, is_unitary, phase_distance, rz, tensor


def frame_op(program):
    return tensor(*(rz(f) for f in program.frames))


def ideal_unitary(ir):
    U = np.eye(2**ir.n_qubits, dtype=complex)
    for g in expand_gates(ir):
        if g.name in ("PREPARE", "MEASURE"):
            continue
        if g.name == "MS":
            a, b = g.qubits
            XX = expand(np.kron([[0, 1], [1, 0]], [[0, 1], [1, 0]]), [a, b], ir.n_qubits)
            M = np.cos(g.params[0]) * np.eye(len(XX)) - 1j * np.sin(g.params[0]) * XX
            U = M @ U
        else:
            U = expand(g.matrix(), g.qubits, ir.n_qubits) @ U
    return U


def test_identity_cascade_is_empty(chain4):
    prog, led = compile_cascade([np.eye(2)] * 4, chain4)
    assert prog.count(Pulse) == 0
    assert all(led.is_clear(i) for i in range(4))


def test_four_ion_cascade_with_crosstalk(chain4):
    Us = [unitary_group.rvs(2, random_state=k) for k in range(4)]
    prog, led = compile_cascade(Us, chain4)
    # crosstalk really is present in the model
    assert any(r < 1 for resp in chain4.responses for j, (r, _) in resp.trailing.items() if j != resp.target)
    assert phase_distance(program_unitary(prog, chain4), tensor(*Us)) < 1e-6
    assert all(led.is_clear(i) for i in range(4))


def test_ignoring_crosstalk_would_fail(chain4):
    # the compensation matters: replaying pulses without crosstalk bookkeeping differs
    Us = [unitary_group.rvs(2, random_state=10 + k) for k in range(4)]
    prog, _ = compile_cascade(Us, chain4, options=CompilerOptions(composite="bare"))
    assert phase_distance(program_unitary(prog, chain4), tensor(*Us)) < 1e-6


def test_81_preparations(chain4):
    for ir in product_preparations(4):
        prog = compile_circuit(ir, chain4)
        got = simulate_probabilities(prog, chain4)[0]
        ideal = np.abs(ideal_unitary(ir)[:, 0]) ** 2
        assert np.max(np.abs(got - ideal)) < 1e-6


def test_defer_rz_shifts_pulse_phase(chain2):
    led = CompilerLedger(2)
    defer_rz(led, 0, np.pi)
    led.request(0, np.array([[1, -1j], [-1j, 1]]) / np.sqrt(2))  # R(pi/2, 0)
    prog, _ = compile_cascade({}, chain2, led, options=CompilerOptions(composite="bare"))
    # ion 1 only cleans up crosstalk
    pulses = [op for op in prog.ops if isinstance(op, Pulse) and op.target == 0]
    assert len(pulses) == 1
    assert np.isclose(np.mod(pulses[0].phi, 2 * np.pi), np.pi)


def test_leading_rz_invisible_from_ground(chain2):
    a = compile_circuit(CircuitIR(2, [Gate("H", (0,)), Gate("H", (1,))]), chain2)
    b = compile_circuit(CircuitIR(2, [Gate("RZ", (0,), (0.9,)), Gate("T", (1,)), Gate("H", (0,)), Gate("H", (1,))]), chain2)
    psi_a = program_unitary(a, chain2)[:, 0]
    psi_b = program_unitary(b, chain2)[:, 0]
    pa = np.abs(frame_op(a) @ psi_a) ** 2
    pb = np.abs(psi_b) ** 2
    assert np.allclose(pa, pb, atol=1e-10)


def test_trailing_rz_leaves_probabilities(chain2):
    base = [Gate("H", (0,)), Gate("CNOT", (0, 1))]
    a = compile_circuit(CircuitIR(2, base), chain2)
    b = compile_circuit(CircuitIR(2, base + [Gate("RZ", (1,), (1.1,)), Gate("S", (0,))]), chain2)
    assert np.allclose(simulate_probabilities(a, chain2), simulate_probabilities(b, chain2), atol=1e-10)
    assert b.count(Pulse) == a.count(Pulse)


def test_ms_bell_output(chain2):
    prog = compile_circuit(CircuitIR(2, [Gate("MS", (0, 1), (np.pi / 4,))]), chain2)
    psi = frame_op(prog) @ program_unitary(prog, chain2)[:, 0]
    bell = np.array([1, 0, 0, -1j]) / np.sqrt(2)
    assert abs(abs(np.vdot(bell, psi)) - 1) < 1e-6


@pytest.mark.parametrize("c,t", [(0, 1), (1, 0)])
def test_cnot_matches_canonical(chain2, c, t):
    prog = compile_circuit(CircuitIR(2, [Gate("CNOT", (c, t))]), chain2)
    assert phase_distance(frame_op(prog) @ program_unitary(prog, chain2), cnot(c, t, 2)) < 1e-6


def test_cnot_pulse_counts(chain2):
    prog = compile_circuit(CircuitIR(2, [Gate("CNOT", (0, 1))]), chain2)
    pre, post = prog.pulses_around_ms()[0]
    assert (pre, post) == (2, 3)
    prog10 = compile_circuit(CircuitIR(2, [Gate("CNOT", (1, 0))]), chain2)
    pre, post = prog10.pulses_around_ms()[0]
    assert pre <= 2 and post == 3


def test_x_on_ion_zero(chain2):
    prog = compile_circuit(CircuitIR(2, [Gate("X", (0,))]), chain2)
    assert simulate_probabilities(prog, chain2)[0] == pytest.approx([0, 0, 1, 0], abs=1e-10)


@pytest.mark.parametrize("start", ["00", "01", "10", "11"])
def test_cnot_truth_table(chain2, start):
    prep = [Gate("X", (q,)) for q, b in enumerate(start) if b == "1"]
    prog = compile_circuit(CircuitIR(2, prep + [Gate("CNOT", (0, 1))]), chain2)
    out = int(start, 2)
    if start[0] == "1":
        out ^= 1
    p = simulate_probabilities(prog, chain2)[0]
    assert p[out] == pytest.approx(1.0, abs=1e-9)


def test_program_timing(chain2):
    prog = compile_circuit(CircuitIR(2, [Gate("CNOT", (0, 1))]), chain2)
    s = prog.summary()
    expected = (
        s["pulses"] * 120e-6
        + s["transports"] * 100e-6
        + s["well_changes"] * 50e-6
        + sum(op.duration for op in prog.ops if isinstance(op, MsSegment))
        + sum(op.duration for op in prog.ops if type(op).__name__ == "EchoFlip")
    )
    assert prog.duration == pytest.approx(expected)
    assert sum(op.duration for op in prog.ops if isinstance(op, MsSegment)) == pytest.approx(169e-6, rel=1e-3)


def test_program_legality(chain3):
    ir = CircuitIR(3, [Gate("H", (0,)), Gate("CNOT", (0, 1)), Gate("CNOT", (2, 1)), Gate("T", (2,))])
    prog = compile_circuit(ir, chain3)
    prog.validate()
    ops = prog.ops
    for k, op in enumerate(ops):
        if isinstance(op, MsSegment):
            before = [o for o in ops[:k] if isinstance(o, (WellChange, Pulse))]
            after = [o for o in ops[k + 1:] if isinstance(o, (WellChange, Pulse))]
            assert isinstance(before[-1], WellChange) and before[-1].mode == "two-qubit"
            assert isinstance(after[0], WellChange)
    pulse = next(op for op in ops if isinstance(op, Pulse))
    bad = PulseProgram(2, [WellChange("two-qubit"), Transport(0.0, "two-qubit"), pulse])
    with pytest.raises(CompilerError):
        bad.validate()


@pytest.mark.parametrize("angles", [(0.0, 0.0), (0.7, -1.3), (np.pi / 2, 2.0), (3.0, 0.1)])
def test_ms_optimization_angles_cancel(chain2, angles):
    ir = CircuitIR(2, [Gate("X", (0,)), Gate("RY", (1,), (0.6,)), Gate("CNOT", (0, 1))])
    ref = compile_circuit(ir, chain2)
    prog = compile_circuit(ir, chain2, CompilerOptions(ms_angles=angles))
    a = frame_op(ref) @ program_unitary(ref, chain2)[:, 0]
    b = frame_op(prog) @ program_unitary(prog, chain2)[:, 0]
    assert abs(abs(np.vdot(a, b)) - 1) < 1e-10
    assert np.argmax(np.abs(a)) == np.argmax(np.abs(b))


def test_invalid_circuits(chain2):
    with pytest.raises(CircuitError, match="gate 0"):
        compile_circuit(CircuitIR(2, [Gate("MS", (0, 0), (1.0,))]), chain2)
    with pytest.raises(CircuitError):
        compile_circuit(CircuitIR(3, [Gate("CNOT", (0, 2))]), chain2.with_ions(3))
    with pytest.raises(CircuitError):
        CircuitIR(2, [Gate("X", (5,))]).validate()
    with pytest.raises(CircuitError):
        CircuitIR(2, [Gate("C", (0,), (24,))]).validate()


single = st.sampled_from(["X", "Y", "Z", "H", "S", "T", "RX", "RY", "RZ", "R", "C"])


@st.composite
def circuits(draw, n=3):
    gates = []
    for _ in range(draw(st.integers(1, 6))):
        if draw(st.integers(0, 3)) == 0:
            a = draw(st.integers(0, n - 2))
            gates.append(Gate("MS", (a, a + 1), (draw(st.floats(0.1, 1.5)),)))
            continue
        name = draw(single)
        q = draw(st.integers(0, n - 1))
        if name in ("RX", "RY", "RZ"):
            params = (draw(st.floats(-3, 3)),)
        elif name == "R":
            params = (draw(st.floats(-3, 3)), draw(st.floats(-3, 3)))
        elif name == "C":
            params = (float(draw(st.integers(0, 23))),)
        else:
            params = ()
        gates.append(Gate(name, (q,), params))
    return CircuitIR(n, gates)


@settings(max_examples=20, deadline=None)
@given(ir=circuits())
def test_ledger_soundness(chain3, ir):
    # requested = (frames . pending) . physical at every stopping point
    prog, led = compile_with_ledger(ir, chain3, finish=False)
    local = tensor(*(led.local(i) for i in range(3)))
    for i in range(3):
        assert is_unitary(led.stored(i), 1e-12)
    assert phase_distance(local @ program_unitary(prog, chain3), ideal_unitary(ir)) < 1e-8


@settings(max_examples=20, deadline=None)
@given(ir=circuits())
def test_crosstalk_closure(chain3, ir):
    prog, led = compile_with_ledger(ir, chain3)
    for i in range(3):
        assert led.is_clear(i, up_to_rz=True, tol=1e-8)
    assert phase_distance(frame_op(prog) @ program_unitary(prog, chain3), ideal_unitary(ir)) < 1e-8
    prog.validate()
