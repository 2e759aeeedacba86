import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ioncascade.ms import (
    DEFAULT_GAP,
    MsParams,
    TruncationError,
    closure_time,
    echo_sequence,
    echoed_propagator,
    fock_oracle,
    geometric_area,
    gray_subsets,
    jx_squared_propagator,
    ms_population_trace,
    ms_propagator,
    ms_propagator_factored,
    spin_block,
)
from ioncascade.qcore import X, expand, is_unitary, partial_trace, phase_distance


def pair_xx(a, b, n, angle):
    XX = expand(np.kron(X, X), [a, b], n)
    return np.cos(angle) * np.eye(2**n) - 1j * np.sin(angle) * XX


def oracle_params(ratio=0.1, loops=2, eta=0.1, weights=(0.5, 0.5)):
    omega = ratio * abs(DEFAULT_GAP) / eta
    return MsParams(weights, geometric_area(omega, eta, DEFAULT_GAP, loops), loops, DEFAULT_GAP, eta)


def test_uniform_bell():
    U = ms_propagator(weights=(0.5, 0.5), area=np.pi / 2)
    assert phase_distance(U, pair_xx(0, 1, 2, np.pi / 4)) < 1e-12
    psi = U @ np.array([1, 0, 0, 0])
    assert np.allclose(psi, np.array([1, 0, 0, -1j]) / np.sqrt(2))


def test_zero_weight_unentangled():
    U = ms_propagator(weights=(0.5, 0.0, 0.4), area=1.7)
    psi = U @ np.eye(8)[0]
    rho1 = partial_trace(np.outer(psi, psi.conj()), [1])
    assert np.allclose(rho1, np.diag([1, 0]))


def test_three_qubit_commuting_factors():
    w = (0.5, 0.4, 0.2)
    oracle = np.eye(8, dtype=complex)
    for i, j in itertools.combinations(range(3), 2):
        oracle = pair_xx(i, j, 3, 2 * 1.3 * w[i] * w[j]) @ oracle
    assert np.allclose(ms_propagator(weights=w, area=1.3), oracle, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(w=st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=5), area=st.floats(0, 10))
def test_factored_equals_joint(w, area):
    U = ms_propagator(weights=w, area=area)
    assert is_unitary(U, 1e-12)
    assert np.allclose(U, ms_propagator_factored(w, area), atol=1e-12)


def test_gray_order_single_flips():
    subsets = gray_subsets([1, 2, 3])
    assert len(subsets) == 8 and len(set(subsets)) == 8
    for a, b in zip(subsets, subsets[1:]):
        assert len(set(a) ^ set(b)) == 1


def test_echo_segment_counts():
    assert echo_sequence(3, [0, 1], decouple=[]).segments == 1
    assert echo_sequence(3, [0, 1]).segments == 2
    assert echo_sequence(4, [0, 1]).segments == 4
    seq = echo_sequence(4, [0, 1])
    assert all(set(f) <= {2, 3} for f in seq.flips)
    assert all(len(f) <= 1 for f in seq.flips)
    with pytest.raises(ValueError):
        echo_sequence(3, [])


def test_echo_three_ions_asymmetric():
    w = (0.2, 0.5, 0.35)
    p = MsParams(w, 1.4)
    V = echoed_propagator(p, echo_sequence(3, [1, 2]))
    assert phase_distance(V, pair_xx(1, 2, 3, 2 * 1.4 * w[1] * w[2])) < 1e-10


def test_decouple_everything():
    p = MsParams((0.5, 0.3, 0.4), 2.0)
    seq = echo_sequence(3, [0], decouple=[1, 2])
    assert phase_distance(echoed_propagator(p, seq), np.eye(8)) < 1e-10


def test_flip_targets_variant():
    w = (0.5, 0.45, 0.3)
    seq = echo_sequence(3, [0, 1], flip_targets=True)
    V = echoed_propagator(MsParams(w, 1.2), seq)
    assert phase_distance(V, ms_propagator(weights=(0.5, 0.45, 0), area=1.2)) < 1e-10


def test_echo_all_subsets_four_ions():
    rng = np.random.default_rng(7)
    for D in itertools.chain.from_iterable(itertools.combinations(range(4), k) for k in range(5)):
        targets = [q for q in range(4) if q not in D]
        for _ in range(10):
            w = rng.uniform(-0.5, 0.5, 4)
            A = rng.uniform(0.1, 3.0)
            kept = w.copy()
            kept[list(D)] = 0
            if not targets:
                seq = echo_sequence(4, [0], decouple=[1, 2, 3])
                kept[0] = 0
            else:
                seq = echo_sequence(4, targets)
            V = echoed_propagator(MsParams(w, A), seq)
            assert phase_distance(V, ms_propagator(weights=kept, area=A)) < 1e-10


def test_oracle_identity_at_zero():
    p = oracle_params()
    U = fock_oracle(p, 0.0, 10)
    assert np.allclose(U, np.eye(len(U)), atol=1e-12)


def test_oracle_rejects_small_cutoff():
    with pytest.raises(ValueError):
        fock_oracle(oracle_params(), 1e-6, 5)


def test_oracle_truncation_check():
    # a strong drive at a tight cutoff must be flagged
    p = oracle_params(ratio=1.5)
    with pytest.raises(TruncationError):
        fock_oracle(p, p.duration / 2, 10, check_convergence=True)


def test_oracle_matches_effective_propagator():
    p = oracle_params()
    U = fock_oracle(p, p.duration, 20, check_convergence=True)
    assert is_unitary(U, 1e-7)
    spin = spin_block(U, 2, 20)
    assert phase_distance(spin, jx_squared_propagator(p.weights, p.area)) < 5e-3
    assert closure_time(DEFAULT_GAP, 2) == pytest.approx(169e-6)


def test_population_trace():
    p = MsParams.calibrated((0.5, 0.5), (0, 1))
    t = p.duration
    pops = ms_population_trace(p, [t / 4, t / 2, t])
    assert pops[-1] == pytest.approx([0.5, 0, 0, 0.5], abs=2e-2)
    assert pops[0, 1] == pytest.approx(pops[0, 2], abs=1e-9)
    # t/2 closes the first loop, t/4 is mid-loop
    assert pops[0, 1] + pops[0, 2] > 0.01


def test_far_detuning_no_interaction():
    p = MsParams((0.5, 0.5), 1e-6)
    pops = ms_population_trace(p, np.linspace(1e-6, p.duration, 5))
    assert np.all(pops[:, 0] > 0.999)
