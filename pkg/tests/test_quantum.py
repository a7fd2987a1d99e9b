import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qscl.quantum import (PAULI_X, PAULI_Y, PAULI_Z, CapacityError, InvalidStateError, NoiseSpec, QubitDensity,
                          QubitPure, apply_channel, apply_readout_noise, cnot_chain, marginal_p1, measure_probs,
                          noisy_excited_probability, prepare_state, rx_gate, sample_noisy_counts, sample_shots)

angles = st.floats(-4 * np.pi, 4 * np.pi, allow_nan=False)
probs = st.floats(0.0, 1.0)


def random_density(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_rx_matches_matrix_exponential():
    # exp(-i t X / 2) from the eigen-decomposition of X, independent of the closed form
    t = 0.731
    w, v = np.linalg.eigh(PAULI_X)
    expected = v @ np.diag(np.exp(-1j * t * w / 2)) @ v.conj().T
    np.testing.assert_allclose(rx_gate(t), expected, atol=1e-14)


def test_rx_half_pi_entries():
    r = rx_gate(np.pi / 2)
    h = 1 / np.sqrt(2)
    np.testing.assert_allclose(r, [[h, -1j * h], [-1j * h, h]], atol=1e-15)


@given(angles)
def test_rx_is_unitary(t):
    r = rx_gate(t)
    np.testing.assert_allclose(r @ r.conj().T, np.eye(2), atol=1e-12)


def test_rx_rejects_non_finite():
    with pytest.raises(ValueError):
        rx_gate(float("nan"))


@pytest.mark.parametrize("theta,p1", [(0.0, 0.0), (np.pi, 1.0), (np.pi / 2, 0.5), (np.pi / 3, 0.25)])
def test_born_rule_values(theta, p1):
    assert measure_probs(prepare_state(theta))[1] == pytest.approx(p1, abs=1e-15)


def test_prepared_state_phase():
    s = prepare_state(np.pi / 3)
    assert s.amp0 == pytest.approx(np.cos(np.pi / 6))
    assert s.amp1 == pytest.approx(-1j * np.sin(np.pi / 6))


@given(angles)
def test_probabilities_sum_to_one(t):
    p0, p1 = measure_probs(prepare_state(t))
    assert p0 + p1 == pytest.approx(1.0, abs=1e-12)
    assert p1 == pytest.approx(np.sin(t / 2) ** 2, abs=1e-12)


def test_pure_state_norm_validated():
    with pytest.raises(InvalidStateError):
        QubitPure(1.0, 1.0)


@pytest.mark.parametrize("rho", [
    [[0.5, 0.1], [0.2, 0.5]],          # not Hermitian
    [[0.6, 0], [0, 0.6]],              # trace 1.2
    [[1.2, 0], [0, -0.2]],             # negative eigenvalue
])
def test_density_validation(rho):
    with pytest.raises(InvalidStateError):
        QubitDensity(np.array(rho, dtype=complex))


def test_sample_shots_edges():
    rng = np.random.default_rng(0)
    assert sample_shots(0.0, 100, rng) == 0
    assert sample_shots(1.0, 100, rng) == 100
    with pytest.raises(ValueError):
        sample_shots(0.5, 0, rng)


@pytest.mark.parametrize("p", [0.1, 0.3])
def test_depolarizing_ground_state(p):
    rho = apply_channel(prepare_state(0.0).density(), NoiseSpec(p_depolarizing=p))
    assert measure_probs(rho)[1] == pytest.approx(2 * p / 3, abs=1e-12)


def test_bitflip_and_phaseflip_on_basis_states():
    ground = prepare_state(0.0).density()
    assert measure_probs(apply_channel(ground, NoiseSpec(p_bitflip=0.2)))[1] == pytest.approx(0.2, abs=1e-15)
    # phase flips leave populations alone
    plus = prepare_state(np.pi / 2).density()
    flipped = apply_channel(plus, NoiseSpec(p_phaseflip=0.5))
    assert measure_probs(flipped)[1] == pytest.approx(0.5, abs=1e-15)
    assert abs(flipped.rho[0, 1]) == pytest.approx(0.0, abs=1e-15)


def test_full_depolarizing_reaches_bloch_shrink():
    # p = 3/4 sends every state to the maximally mixed state
    rng = np.random.default_rng(3)
    out = apply_channel(QubitDensity(random_density(rng)), NoiseSpec(p_depolarizing=0.75))
    np.testing.assert_allclose(out.rho, np.eye(2) / 2, atol=1e-12)


def test_channels_preserve_trace_on_random_states():
    rng = np.random.default_rng(1)
    spec = NoiseSpec(0.1, 0.2, 0.3)
    for _ in range(1000):
        out = apply_channel(QubitDensity(random_density(rng)), spec)
        assert abs(np.trace(out.rho) - 1) < 1e-12


@settings(max_examples=50)
@given(angles, probs, probs, probs)
def test_noisy_probability_matches_density_route(t, pb, pp, pd):
    spec = NoiseSpec(pb, pp, pd)
    direct = measure_probs(apply_channel(prepare_state(t).density(), spec))[1]
    assert noisy_excited_probability(np.array([t]), spec)[0] == pytest.approx(direct, abs=1e-12)


def test_noisy_probability_closed_form():
    # composed channels act on P1 as: bitflip mixes p and 1-p; phase flip is invisible;
    # depolarizing shrinks towards 1/2 by (1 - 4p/3)
    t, pb, pd = 1.1, 0.15, 0.2
    p = np.sin(t / 2) ** 2
    p = (1 - pb) * p + pb * (1 - p)
    p = 0.5 + (1 - 4 * pd / 3) * (p - 0.5)
    got = noisy_excited_probability(np.array([t]), NoiseSpec(pb, 0.4, pd))[0]
    assert got == pytest.approx(p, abs=1e-14)


def test_readout_single_shot():
    rng = np.random.default_rng(0)
    assert apply_readout_noise(1, 0.0, rng) == 1
    assert apply_readout_noise(0, 1.0, rng) == 1
    with pytest.raises(ValueError):
        apply_readout_noise(2, 0.1, rng)


def test_readout_thinning_distribution():
    # mean count must equal n * (p(1-r) + (1-p) r)
    rng = np.random.default_rng(5)
    p, r, n = 0.3, 0.1, 1000
    counts = sample_noisy_counts(np.full(2000, p), n, r, rng)
    q = p * (1 - r) + (1 - p) * r
    sd = np.sqrt(n * q * (1 - q) / counts.size)
    assert abs(counts.mean() - n * q) < 4 * sd


def test_cnot_chain_bell_and_ghz():
    plus = prepare_state(np.pi / 2)
    zero = prepare_state(0.0)
    psi = cnot_chain([plus, zero, zero])
    probs = np.abs(psi) ** 2
    assert probs[0] == pytest.approx(0.5) and probs[7] == pytest.approx(0.5)
    assert all(marginal_p1(psi, q) == pytest.approx(0.5) for q in range(3))


def test_cnot_chain_capacity():
    with pytest.raises(CapacityError):
        cnot_chain([prepare_state(0.0)] * 13)
    with pytest.raises(ValueError):
        cnot_chain([])


def test_paulis_anticommute():
    for a, b in [(PAULI_X, PAULI_Y), (PAULI_Y, PAULI_Z), (PAULI_X, PAULI_Z)]:
        np.testing.assert_allclose(a @ b + b @ a, 0, atol=0)
