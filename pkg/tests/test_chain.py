import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.constants import atomic_mass, epsilon_0, elementary_charge
from scipy.optimize import minimize

from ioncascade.chain import (
    BeamProfile,
    ConfigurationError,
    IonChain,
    TrapConfig,
    couplings,
    equilibrium_positions,
    radial_modes,
    scaled_equilibrium,
)


def potential_oracle(n):
    """Direct minimisation of the scaled harmonic plus Coulomb energy."""

    def energy(u):
        d = np.abs(u[:, None] - u[None, :])[np.triu_indices(n, 1)]
        return 0.5 * np.sum(u**2) + np.sum(1.0 / d)

    res = minimize(energy, np.linspace(-1, 1, n) * n / 2, method="BFGS", options={"gtol": 1e-12})
    return np.sort(res.x)


def test_single_ion_at_origin():
    assert scaled_equilibrium(1) == pytest.approx([0.0])


def test_two_ions():
    a = 0.5 ** (2 / 3)
    assert np.allclose(scaled_equilibrium(2), [-a, a], atol=1e-12)


def test_three_ions():
    a = 1.25 ** (1 / 3)
    assert np.allclose(scaled_equilibrium(3), [-a, 0, a], atol=1e-12)


@pytest.mark.parametrize("n", [4, 5, 7])
def test_longer_chains_match_energy_minimum(n):
    assert np.allclose(scaled_equilibrium(n), potential_oracle(n), atol=1e-6)


def test_length_scale_units():
    cfg = TrapConfig(n_ions=2)
    w = cfg.axial()
    ell = (elementary_charge**2 / (4 * np.pi * epsilon_0 * 171 * atomic_mass * w**2)) ** (1 / 3)
    x = equilibrium_positions(cfg)
    assert x[1] - x[0] == pytest.approx(2 * 0.5 ** (2 / 3) * ell * 1e6, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(s=st.floats(0.3, 3.0), n=st.integers(2, 6))
def test_axial_scaling(s, n):
    cfg = TrapConfig(n_ions=n)
    cfg2 = TrapConfig(n_ions=n, axial_freq=cfg.axial_freq * s)
    d1 = np.diff(equilibrium_positions(cfg))
    d2 = np.diff(equilibrium_positions(cfg2))
    assert np.allclose(d2, d1 * s ** (-2 / 3), rtol=1e-10)


def test_single_ion_mode():
    cfg = TrapConfig(n_ions=1)
    f, v = radial_modes(cfg)
    assert f[0] == pytest.approx(cfg.addressed_radial)
    assert np.allclose(np.abs(v), [[1.0]])


def test_two_ion_modes():
    f, v = radial_modes(TrapConfig(n_ions=2))
    assert np.allclose(v[0], np.array([1, 1]) / np.sqrt(2))
    assert np.allclose(np.abs(v[1]), np.array([1, 1]) / np.sqrt(2))
    assert v[1, 0] * v[1, 1] < 0
    assert f[0] > f[1]


def hessian_oracle(u, ratio):
    n = len(u)
    K = np.zeros((n, n))
    for i in range(n):
        K[i, i] = ratio**2
        for j in range(n):
            if i != j:
                K[i, i] -= 1 / abs(u[i] - u[j]) ** 3
                K[i, j] = 1 / abs(u[i] - u[j]) ** 3
    return np.sort(np.linalg.eigvalsh(K))[::-1]


@pytest.mark.parametrize("n", [3, 5])
def test_mode_frequencies_match_hessian(n):
    cfg = TrapConfig(n_ions=n)
    wz = cfg.axial("two-qubit")
    f, v = radial_modes(cfg)
    ev = hessian_oracle(scaled_equilibrium(n), cfg.addressed_radial / wz)
    assert np.allclose(f, wz * np.sqrt(ev), rtol=1e-10)
    assert np.allclose(v @ v.T, np.eye(n), atol=1e-10)
    assert np.all(np.diff(f) < 0)
    assert np.allclose(np.abs(v[0]), 1 / np.sqrt(n), atol=1e-10)


def test_buckling_reported():
    cfg = TrapConfig(n_ions=8, radial_freqs=(2 * np.pi * 0.6e6, 2 * np.pi * 0.7e6))
    with pytest.raises(ConfigurationError):
        radial_modes(cfg)


def test_invalid_configs():
    with pytest.raises(ConfigurationError):
        TrapConfig(n_ions=0)
    with pytest.raises(ConfigurationError):
        BeamProfile(waist_a=-1)


def test_symmetric_pair_equal_rabi():
    cfg = TrapConfig(n_ions=2)
    beam = BeamProfile(coma=0.0)
    m = couplings(beam, 0.0, cfg)
    assert m.rabi[0] == pytest.approx(m.rabi[1], rel=1e-12)


def test_neighbor_ratio_at_waist_spacing():
    cfg = TrapConfig(n_ions=2)
    x = equilibrium_positions(cfg, "two-qubit")
    spacing = x[1] - x[0]
    w = spacing * np.sqrt(2)  # w_eff of two equal waists
    beam = BeamProfile(waist_a=w, waist_b=w, coma=0.0)
    assert beam.w_eff == pytest.approx(spacing)
    m = couplings(beam, x[0], cfg)
    assert m.rabi[1] / m.rabi[0] == pytest.approx(np.exp(-1), rel=1e-12)


def test_coma_makes_crosstalk_asymmetric():
    chain = IonChain(TrapConfig(n_ions=4))
    x = chain.sq_positions
    # central ions: neighbours 0 and 3 of the pair (1, 2) sit symmetrically
    centre = 0.5 * (x[1] + x[2])
    rel = chain.beam.relative_rabi(x - centre)
    assert rel[0] > 1.2 * rel[3] or rel[3] > 1.2 * rel[0]
    flat = BeamProfile(coma=0.0).relative_rabi(x - centre)
    assert flat[0] == pytest.approx(flat[3], rel=1e-12)


def test_coupling_formula():
    cfg = TrapConfig(n_ions=3)
    beam = BeamProfile()
    m = couplings(beam, 1.0, cfg)
    d = m.positions - 1.0
    u = d / beam.w_eff
    expected = beam.rabi * np.exp(-(u**2)) * np.clip(1 + beam.coma * u**3, 0, None)
    assert np.allclose(m.rabi, expected)
    assert np.allclose(m.phase, beam.tilt * d + beam.curvature * d**2)
    assert np.allclose(m.weights, 0.5 * (m.rabi / m.rabi.max()) * (m.eta / 0.1))
    assert np.all(np.abs(m.weights) <= 0.5 + 1e-15)
    assert np.allclose(np.sum(m.mode_vectors**2, axis=1), 1.0)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 6), scale=st.floats(0.1, 10.0))
def test_rabi_scaling_leaves_weights(n, scale):
    cfg = TrapConfig(n_ions=n)
    b1 = BeamProfile()
    b2 = BeamProfile(rabi=b1.rabi * scale)
    m1 = couplings(b1, 0.7, cfg)
    m2 = couplings(b2, 0.7, cfg)
    assert np.allclose(m1.mode_vectors, m2.mode_vectors)
    assert np.allclose(m1.weights, m2.weights)
    assert np.allclose(m2.rabi, scale * m1.rabi)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 5))
def test_symmetric_profile_without_coma(n):
    cfg = TrapConfig(n_ions=n)
    m = couplings(BeamProfile(coma=0.0), 0.0, cfg)
    assert np.allclose(m.rabi, m.rabi[::-1], atol=1e-12 * m.rabi.max())
    # mode 0 is symmetric, so c is too
    assert np.allclose(m.weights, m.weights[::-1], atol=1e-12)


def test_cascade_responses_trailing_only():
    chain = IonChain(TrapConfig(n_ions=4))
    r = chain.pulse_response(1)
    assert set(r.trailing) == {1, 2, 3}
    assert set(r.leading) == {0}
    assert r.trailing[1] == (1.0, 0.0)
    assert 0 < r.trailing[2][0] < 1
