"""Dense statevector simulation for the RX / RZ / RXX gate set.

Basis convention: bit ``j`` of a basis index is the state of qubit ``j``,
and printed bitstrings put qubit 0 in the leftmost character. So for two
qubits the string ``'10'`` (qubit 0 set) is index 1.

Gate conventions::

    RX(t)  = cos(t/2) I - i sin(t/2) X
    RZ(t)  = diag(exp(-i t/2), exp(+i t/2))
    RXX(t) = cos(t/2) I - i sin(t/2) X (x) X

The kernels work in place on a flat complex128 array by stride pattern;
no gate matrix is ever built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "MAX_QUBITS",
    "StateVector",
    "apply_rx",
    "apply_rxx",
    "apply_rz",
    "bitstring_to_index",
    "index_to_bitstring",
    "probabilities",
    "sample",
    "sample_from_probabilities",
    "zero_state",
]

MAX_QUBITS = 20

# Gate kind codes shared with the fused circuit kernel in ``ansatz``.
KIND_RX = 0
KIND_RZ = 1
KIND_RXX = 2


@dataclass
class StateVector:
    """An ``n_qubits`` pure state held as ``2**n_qubits`` complex amplitudes."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        _check_qubit_count(self.n_qubits)
        self.amplitudes = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise ValueError(
                f"expected {1 << self.n_qubits} amplitudes for {self.n_qubits} qubits, "
                f"got shape {self.amplitudes.shape}"
            )

    def copy(self) -> StateVector:
        return StateVector(self.n_qubits, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


def _check_qubit_count(n_qubits: int) -> None:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"n_qubits must be an integer in [1, {MAX_QUBITS}], got {n_qubits!r}")


def _check_qubit(state: StateVector, qubit: int) -> None:
    if not 0 <= qubit < state.n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {state.n_qubits}-qubit state")


def index_to_bitstring(index: int, n_bits: int) -> str:
    """Print a basis index with qubit 0 as the leftmost character."""
    if not 0 <= index < (1 << n_bits):
        raise ValueError(f"index {index} out of range for {n_bits} bits")
    return "".join("1" if (index >> j) & 1 else "0" for j in range(n_bits))


def bitstring_to_index(bits: str) -> int:
    """Inverse of :func:`index_to_bitstring`."""
    if not bits or set(bits) - {"0", "1"}:
        raise ValueError(f"not a bitstring: {bits!r}")
    return sum(1 << j for j, ch in enumerate(bits) if ch == "1")


# --------------------------------------------------------------------------
# In-place kernels. ``psi`` is a flat complex128 array of length 2**n.
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _rx_inplace(psi, qubit, theta):
    c = np.cos(0.5 * theta)
    s = np.sin(0.5 * theta)
    m = 1 << qubit
    for i in range(psi.shape[0]):
        if i & m == 0:
            a0 = psi[i]
            a1 = psi[i | m]
            # c*a0 - i*s*a1 and c*a1 - i*s*a0
            psi[i] = complex(c * a0.real + s * a1.imag, c * a0.imag - s * a1.real)
            psi[i | m] = complex(c * a1.real + s * a0.imag, c * a1.imag - s * a0.real)


@numba.njit(cache=True)
def _rz_inplace(psi, qubit, theta):
    c = np.cos(0.5 * theta)
    s = np.sin(0.5 * theta)
    p0 = complex(c, -s)
    p1 = complex(c, s)
    m = 1 << qubit
    for i in range(psi.shape[0]):
        if i & m:
            psi[i] *= p1
        else:
            psi[i] *= p0


@numba.njit(cache=True)
def _rxx_inplace(psi, qubit_a, qubit_b, theta):
    c = np.cos(0.5 * theta)
    s = np.sin(0.5 * theta)
    ma = 1 << qubit_a
    flip = ma | (1 << qubit_b)
    # Each pair {i, i ^ flip} is visited once, from the member with bit a clear.
    for i in range(psi.shape[0]):
        if i & ma == 0:
            j = i ^ flip
            a0 = psi[i]
            a1 = psi[j]
            psi[i] = complex(c * a0.real + s * a1.imag, c * a0.imag - s * a1.real)
            psi[j] = complex(c * a1.real + s * a0.imag, c * a1.imag - s * a0.real)


@numba.njit(cache=True)
def _run_gates(psi, kinds, qubit_a, qubit_b, param_index, params):
    for g in range(kinds.shape[0]):
        theta = params[param_index[g]]
        k = kinds[g]
        if k == 0:
            _rx_inplace(psi, qubit_a[g], theta)
        elif k == 1:
            _rz_inplace(psi, qubit_a[g], theta)
        else:
            _rxx_inplace(psi, qubit_a[g], qubit_b[g], theta)


@numba.njit(cache=True)
def _run_gates_batch(out, kinds, qubit_a, qubit_b, param_index, params):
    # out: (batch, 2**n), params: (batch, P). Each row starts from |0...0>.
    for b in range(out.shape[0]):
        psi = out[b]
        psi[:] = 0.0
        psi[0] = 1.0
        _run_gates(psi, kinds, qubit_a, qubit_b, param_index, params[b])


# --------------------------------------------------------------------------
# Public, copy-returning operations
# --------------------------------------------------------------------------


def zero_state(n_qubits: int) -> StateVector:
    """Return ``|0...0>`` on ``n_qubits`` qubits."""
    _check_qubit_count(n_qubits)
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def apply_rx(state: StateVector, qubit: int, theta: float) -> StateVector:
    _check_qubit(state, qubit)
    out = state.copy()
    _rx_inplace(out.amplitudes, int(qubit), float(theta))
    return out


def apply_rz(state: StateVector, qubit: int, theta: float) -> StateVector:
    _check_qubit(state, qubit)
    out = state.copy()
    _rz_inplace(out.amplitudes, int(qubit), float(theta))
    return out


def apply_rxx(state: StateVector, qubit_a: int, qubit_b: int, theta: float) -> StateVector:
    """Apply ``exp(-i theta X_a X_b / 2)``; symmetric in the two qubits."""
    _check_qubit(state, qubit_a)
    _check_qubit(state, qubit_b)
    if qubit_a == qubit_b:
        raise ValueError("RXX needs two distinct qubits")
    out = state.copy()
    _rxx_inplace(out.amplitudes, int(qubit_a), int(qubit_b), float(theta))
    return out


def probabilities(state: StateVector) -> np.ndarray:
    """Born-rule probabilities ``|<x|psi>|^2`` for every basis index."""
    a = state.amplitudes
    return a.real**2 + a.imag**2


def sample_from_probabilities(probs: np.ndarray, q: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``q`` i.i.d. basis indices from a probability table.

    Inverse-CDF sampling on uniform draws; deterministic given the generator
    state, and tolerant of a total that is off from 1 by rounding.
    """
    if q < 1:
        raise ValueError(f"need at least one draw, got q={q}")
    cdf = np.cumsum(np.asarray(probs, dtype=np.float64))
    u = rng.random(q) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, cdf.shape[0] - 1).astype(np.int64)


def sample(state: StateVector, q: int, rng: np.random.Generator) -> np.ndarray:
    """Measure ``state`` in the computational basis ``q`` times."""
    return sample_from_probabilities(probabilities(state), q, rng)
