"""Exact single-qubit simulation: Rx rotations, Born-rule readout and Pauli noise.

States are plain numpy objects. A pure state is a length-2 complex vector
wrapped in :class:`QubitPure`; a mixed state is a 2x2 density matrix in
:class:`QubitDensity`. Everything runs in complex128.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-12
MAX_CHAIN_QUBITS = 12

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class InvalidStateError(ValueError):
    """A state violates normalization, hermiticity or positivity."""


class CapacityError(ValueError):
    """Requested register is larger than the simulator supports."""


def _check_probability(name: str, p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {p}")
    return p


@dataclass(frozen=True)
class QubitPure:
    amp0: complex
    amp1: complex

    def __post_init__(self):
        norm = abs(self.amp0) ** 2 + abs(self.amp1) ** 2
        if abs(norm - 1.0) > TOL:
            raise InvalidStateError(f"state norm {norm!r} is not 1")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.amp0, self.amp1], dtype=complex)

    def density(self) -> "QubitDensity":
        v = self.vector
        return QubitDensity(np.outer(v, v.conj()))


@dataclass(frozen=True, eq=False)
class QubitDensity:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.shape != (2, 2):
            raise InvalidStateError(f"density matrix must be 2x2, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > TOL:
            raise InvalidStateError("density matrix is not Hermitian")
        if abs(np.trace(rho) - 1.0) > TOL:
            raise InvalidStateError(f"density matrix trace {np.trace(rho).real!r} is not 1")
        if np.linalg.eigvalsh(rho).min() < -TOL:
            raise InvalidStateError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True)
class NoiseSpec:
    p_bitflip: float = 0.0
    p_phaseflip: float = 0.0
    p_depolarizing: float = 0.0
    p_readout: float = 0.0

    def __post_init__(self):
        for name in ("p_bitflip", "p_phaseflip", "p_depolarizing", "p_readout"):
            object.__setattr__(self, name, _check_probability(name, getattr(self, name)))

    @property
    def is_noiseless(self) -> bool:
        return not (self.p_bitflip or self.p_phaseflip or self.p_depolarizing or self.p_readout)


def rx_gate(theta: float) -> np.ndarray:
    """Rotation about X: exp(-i theta/2 X)."""
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError(f"rotation angle must be finite, got {theta}")
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def prepare_state(theta: float) -> QubitPure:
    """Rx(theta)|0>."""
    col = rx_gate(theta)[:, 0]
    return QubitPure(complex(col[0]), complex(col[1]))


def measure_probs(state: QubitPure | QubitDensity) -> tuple[float, float]:
    if isinstance(state, QubitPure):
        p0, p1 = abs(state.amp0) ** 2, abs(state.amp1) ** 2
    elif isinstance(state, QubitDensity):
        p0, p1 = state.rho[0, 0].real, state.rho[1, 1].real
    else:
        raise InvalidStateError(f"not a qubit state: {type(state).__name__}")
    if abs(p0 + p1 - 1.0) > TOL or min(p0, p1) < -TOL:
        raise InvalidStateError(f"probabilities ({p0}, {p1}) are not normalized")
    return float(p0), float(p1)


def sample_shots(p1: float, n_shots: int, rng: np.random.Generator) -> int:
    """Number of |1> outcomes in ``n_shots`` ideal measurements."""
    if n_shots < 1:
        raise ValueError(f"n_shots must be >= 1, got {n_shots}")
    p1 = min(max(float(p1), 0.0), 1.0)
    return int(rng.binomial(int(n_shots), p1))


def _conjugate(op: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return op @ rho @ op.conj().T


def apply_channel_matrix(rho: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Bit-flip, then phase-flip, then depolarizing, on a bare 2x2 array.

    Also accepts a stack of shape (..., 2, 2).
    """
    if spec.p_bitflip:
        p = spec.p_bitflip
        rho = (1 - p) * rho + p * _conjugate(PAULI_X, rho)
    if spec.p_phaseflip:
        p = spec.p_phaseflip
        rho = (1 - p) * rho + p * _conjugate(PAULI_Z, rho)
    if spec.p_depolarizing:
        p = spec.p_depolarizing
        paulis = _conjugate(PAULI_X, rho) + _conjugate(PAULI_Y, rho) + _conjugate(PAULI_Z, rho)
        rho = (1 - p) * rho + (p / 3) * paulis
    return rho


def apply_channel(rho: QubitDensity, spec: NoiseSpec) -> QubitDensity:
    return QubitDensity(apply_channel_matrix(rho.rho, spec))


def apply_readout_noise(outcome: int, p_readout: float, rng: np.random.Generator) -> int:
    """Flip a measured bit with probability ``p_readout``."""
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    if p_readout <= 0:
        return outcome
    return outcome ^ int(rng.random() < p_readout)


def noisy_excited_probability(theta: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """P(|1>) after Rx(theta)|0> and the noise channel, vectorised over angles."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    # |psi><psi| for psi = (c, -i s)
    rho = np.empty(theta.shape + (2, 2), dtype=complex)
    rho[..., 0, 0] = c * c
    rho[..., 0, 1] = 1j * c * s
    rho[..., 1, 0] = -1j * c * s
    rho[..., 1, 1] = s * s
    rho = apply_channel_matrix(rho, spec)
    return np.clip(rho[..., 1, 1].real, 0.0, 1.0)


def sample_noisy_counts(p1: np.ndarray, n_shots: int, p_readout: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Per-qubit |1> counts over ``n_shots`` shots with independent per-shot readout flips.

    Equivalent in distribution to drawing each shot and flipping it with
    probability ``p_readout``, without materialising the shots.
    """
    if n_shots < 1:
        raise ValueError(f"n_shots must be >= 1, got {n_shots}")
    ones = rng.binomial(n_shots, np.clip(p1, 0.0, 1.0))
    if p_readout > 0:
        lost = rng.binomial(ones, p_readout)
        gained = rng.binomial(n_shots - ones, p_readout)
        ones = ones - lost + gained
    return ones


def cnot_chain(states: list[QubitPure]) -> np.ndarray:
    """Tensor the qubits together and apply CNOT(i -> i+1) for i in order.

    Qubit 0 is the most significant bit of the basis index.
    """
    n = len(states)
    if n > MAX_CHAIN_QUBITS:
        raise CapacityError(f"cnot_chain supports at most {MAX_CHAIN_QUBITS} qubits, got {n}")
    if n == 0:
        raise ValueError("cnot_chain needs at least one qubit")
    psi = np.array([1.0 + 0j])
    for st in states:
        psi = np.kron(psi, st.vector)
    psi = psi.reshape((2,) * n)
    for i in range(n - 1):
        # where control i is 1, swap target amplitudes
        idx = [slice(None)] * n
        idx[i] = 1
        sub = psi[tuple(idx)]
        psi[tuple(idx)] = np.flip(sub, axis=i).copy()  # axis i of sub is original axis i+1
    return psi.reshape(-1)


def marginal_p1(psi: np.ndarray, qubit: int) -> float:
    n = int(np.log2(psi.size))
    probs = (np.abs(psi) ** 2).reshape((2,) * n)
    return float(np.moveaxis(probs, qubit, 0)[1].sum())
