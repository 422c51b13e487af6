import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import gate_unitary
from qcbm.statevector import (
    StateVector,
    apply_rx,
    apply_rxx,
    apply_rz,
    bitstring_to_index,
    index_to_bitstring,
    probabilities,
    sample,
    zero_state,
)


def random_state(n, rng):
    a = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(n, a / np.linalg.norm(a))


def apply(state, kind, qubits, theta):
    if kind == "RX":
        return apply_rx(state, qubits[0], theta)
    if kind == "RZ":
        return apply_rz(state, qubits[0], theta)
    return apply_rxx(state, qubits[0], qubits[1], theta)


def random_gate(rng, n):
    kind = ["RX", "RZ", "RXX"][rng.integers(3)] if n > 1 else ["RX", "RZ"][rng.integers(2)]
    qubits = tuple(int(q) for q in rng.choice(n, size=2 if kind == "RXX" else 1, replace=False))
    return kind, qubits, float(rng.uniform(-2 * math.pi, 2 * math.pi))


class TestZeroState:
    def test_two_qubits(self):
        np.testing.assert_array_equal(zero_state(2).amplitudes, [1, 0, 0, 0])

    def test_twelve_qubits(self):
        s = zero_state(12)
        assert s.amplitudes.shape == (4096,)
        assert s.norm() == 1.0

    def test_sampling_is_deterministic(self):
        draws = sample(zero_state(4), 100, np.random.default_rng(0))
        assert [index_to_bitstring(int(i), 4) for i in draws] == ["0000"] * 100

    @pytest.mark.parametrize("n", [0, 21, -1])
    def test_out_of_range(self, n):
        with pytest.raises(ValueError):
            zero_state(n)


class TestBitOrder:
    def test_qubit_zero_is_leftmost(self):
        assert index_to_bitstring(1, 2) == "10"
        assert bitstring_to_index("10") == 1
        assert bitstring_to_index("0001") == 8

    @given(st.integers(1, 12).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, 2**n - 1))))
    def test_round_trip(self, case):
        n, idx = case
        assert bitstring_to_index(index_to_bitstring(idx, n)) == idx


class TestGates:
    def test_rx_pi_flips(self):
        np.testing.assert_allclose(probabilities(apply_rx(zero_state(1), 0, math.pi)), [0, 1], atol=1e-15)

    def test_rx_half_pi_superposition(self):
        np.testing.assert_allclose(probabilities(apply_rx(zero_state(1), 0, math.pi / 2)), [0.5, 0.5])

    def test_rx_inverse(self):
        s = random_state(3, np.random.default_rng(1))
        back = apply_rx(apply_rx(s, 1, 0.7), 1, -0.7)
        np.testing.assert_allclose(back.amplitudes, s.amplitudes, atol=1e-12, rtol=0)

    def test_rz_leaves_probabilities(self):
        rng = np.random.default_rng(2)
        s = random_state(4, rng)
        for q in range(4):
            out = apply_rz(s, q, float(rng.uniform(-7, 7)))
            # |e^{i phi}|^2 rounds to 1 within a few ulp, not exactly
            np.testing.assert_allclose(probabilities(out), probabilities(s), rtol=1e-14, atol=0)

    def test_rz_on_zero_is_global_phase(self):
        out = apply_rz(zero_state(1), 0, 1.234)
        assert abs(np.vdot(out.amplitudes, zero_state(1).amplitudes)) ** 2 == pytest.approx(1.0, abs=1e-15)

    def test_rxx_pi_maps_00_to_11(self):
        np.testing.assert_allclose(probabilities(apply_rxx(zero_state(2), 0, 1, math.pi)), [0, 0, 0, 1], atol=1e-15)

    def test_rxx_symmetric(self):
        s = random_state(4, np.random.default_rng(3))
        a = apply_rxx(s, 0, 3, 0.9).amplitudes
        b = apply_rxx(s, 3, 0, 0.9).amplitudes
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("kind,qubits", [("RX", (0,)), ("RZ", (1,)), ("RXX", (0, 2))])
    def test_zero_angle_is_identity(self, kind, qubits):
        s = random_state(3, np.random.default_rng(4))
        np.testing.assert_array_equal(apply(s, kind, qubits, 0.0).amplitudes, s.amplitudes)

    def test_usage_errors(self):
        s = zero_state(2)
        with pytest.raises(IndexError):
            apply_rx(s, 2, 0.1)
        with pytest.raises(IndexError):
            apply_rz(s, -1, 0.1)
        with pytest.raises(ValueError):
            apply_rxx(s, 1, 1, 0.1)
        with pytest.raises(IndexError):
            apply_rxx(s, 0, 5, 0.1)

    def test_inputs_not_mutated(self):
        s = random_state(2, np.random.default_rng(5))
        before = s.amplitudes.copy()
        apply_rxx(apply_rx(s, 0, 1.0), 0, 1, 1.0)
        apply_rx(s, 0, 1.0)
        np.testing.assert_array_equal(s.amplitudes, before)


class TestInvariants:
    @pytest.mark.parametrize("seed", range(10))
    def test_norm_preserved_over_long_sequences(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 7))
        s = random_state(n, rng)
        for _ in range(200):
            s = apply(s, *random_gate(rng, n))
        assert abs(s.norm() - 1) <= 1e-10

    @pytest.mark.parametrize("seed", range(10))
    def test_gate_inverses(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(2, 7))
        s = random_state(n, rng)
        for kind in ("RX", "RZ", "RXX"):
            _, qubits, theta = random_gate(rng, n)
            if kind == "RXX":
                qubits = tuple(int(q) for q in rng.choice(n, 2, replace=False))
            else:
                qubits = qubits[:1]
            back = apply(apply(s, kind, qubits, theta), kind, qubits, -theta)
            np.testing.assert_allclose(back.amplitudes, s.amplitudes, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_kronecker_oracle(self, seed):
        rng = np.random.default_rng(200 + seed)
        n = int(rng.integers(1, 4))
        s = random_state(n, rng)
        psi = s.amplitudes.copy()
        for _ in range(30):
            kind, qubits, theta = random_gate(rng, n)
            s = apply(s, kind, qubits, theta)
            psi = gate_unitary(kind, qubits, theta, n) @ psi
        np.testing.assert_allclose(s.amplitudes, psi, atol=1e-12, rtol=0)
        np.testing.assert_allclose(probabilities(s), np.abs(psi) ** 2, atol=1e-12, rtol=0)


class TestProbabilities:
    def test_uniform_two_qubits(self):
        s = apply_rx(apply_rx(zero_state(2), 0, math.pi / 2), 1, math.pi / 2)
        np.testing.assert_allclose(probabilities(s), [0.25] * 4)

    def test_zero_state_one_hot(self):
        np.testing.assert_array_equal(probabilities(zero_state(3)), [1, 0, 0, 0, 0, 0, 0, 0])

    def test_sums_to_one(self):
        s = random_state(6, np.random.default_rng(9))
        assert abs(probabilities(s).sum() - 1) < 1e-10


class TestSampling:
    def test_one_hot(self):
        s = apply_rx(zero_state(3), 2, math.pi)
        draws = sample(s, 50, np.random.default_rng(0))
        assert set(draws.tolist()) == {4}
        assert draws.shape == (50,)

    def test_uniform_binomial_band(self):
        s = apply_rx(apply_rx(zero_state(2), 0, math.pi / 2), 1, math.pi / 2)
        counts = np.bincount(sample(s, 40000, np.random.default_rng(1)), minlength=4)
        assert all(9400 <= c <= 10600 for c in counts)

    def test_seed_determinism(self):
        s = random_state(5, np.random.default_rng(3))
        a = sample(s, 1000, np.random.default_rng(42))
        b = sample(s, 1000, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            sample(zero_state(1), 0, np.random.default_rng(0))

    @pytest.mark.parametrize("seed", range(3))
    def test_chi_square(self, seed):
        rng = np.random.default_rng(seed)
        s = random_state(4, rng)
        p = probabilities(s)
        counts = np.bincount(sample(s, 100_000, rng), minlength=16)
        result = stats.chisquare(counts, p * 100_000)
        assert result.pvalue > 0.001

    def test_never_draws_zero_probability(self):
        s = apply_rx(zero_state(3), 1, math.pi / 3)
        draws = sample(s, 10_000, np.random.default_rng(5))
        assert set(draws.tolist()) <= {0, 2}


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_norm_property(n, seed):
    rng = np.random.default_rng(seed)
    s = random_state(n, rng)
    for _ in range(50):
        s = apply(s, *random_gate(rng, n))
    assert abs(s.norm() - 1) <= 1e-10
