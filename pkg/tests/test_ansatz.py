import math

import numpy as np
import pytest

from oracles import circuit_unitary
from qcbm.ansatz import (
    CircuitSpec,
    Topology,
    build_circuit,
    execute,
    execute_batch,
    param_count,
)
from qcbm.statevector import bitstring_to_index, probabilities


def as_tuples(circuit):
    return [(g.kind, g.qubits, g.param_index) for g in circuit.gates]


class TestParamCount:
    @pytest.mark.parametrize("layers,expected", [(2, 35), (4, 82), (8, 152), (16, 292)])
    def test_twelve_qubit_line(self, layers, expected):
        assert param_count(12, layers, Topology.LINE) == expected
        assert build_circuit(12, layers, Topology.LINE).n_params == expected

    def test_small_line(self):
        assert param_count(4, 4, "line") == 26

    def test_all_to_all_two_layers(self):
        assert param_count(12, 2, Topology.ALL_TO_ALL) == 90
        assert build_circuit(12, 2, "all_to_all").n_params == 90

    @pytest.mark.parametrize("n", range(2, 15))
    @pytest.mark.parametrize("layers", range(2, 33, 2))
    def test_closed_form(self, n, layers):
        expected = 3 * n - 1 if layers == 2 else (3 * layers // 2 + 1) * n - layers // 2
        assert param_count(n, layers, "line") == expected
        circuit = build_circuit(n, layers, "line")
        indices = [g.param_index for g in circuit.gates]
        assert sorted(indices) == list(range(expected))

    @pytest.mark.parametrize("layers", [0, 1, 3, -2])
    def test_bad_layers(self, layers):
        with pytest.raises(ValueError):
            build_circuit(4, layers, "line")
        with pytest.raises(ValueError):
            param_count(4, layers, "line")


class TestLayout:
    def test_two_layer_line(self):
        c = build_circuit(3, 2, "line")
        assert as_tuples(c) == [
            ("RX", (0,), 0), ("RZ", (0,), 1),
            ("RX", (1,), 2), ("RZ", (1,), 3),
            ("RX", (2,), 4), ("RZ", (2,), 5),
            ("RXX", (0, 1), 6), ("RXX", (1, 2), 7),
        ]

    def test_six_layer_sequences(self):
        c = build_circuit(2, 6, "line")
        kinds = [g.kind for g in c.gates]
        assert kinds == (
            ["RX", "RZ"] * 2 + ["RXX"]
            + ["RZ", "RX"] * 2 + ["RXX"]
            + ["RX", "RZ", "RX"] * 2 + ["RXX"]
        )

    def test_all_to_all_edges_lexicographic(self):
        c = build_circuit(4, 2, "all_to_all")
        pairs = [g.qubits for g in c.gates if g.kind == "RXX"]
        assert pairs == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]

    def test_json_round_trip(self):
        c = build_circuit(5, 4, "all_to_all")
        again = CircuitSpec.from_json(c.to_json())
        assert again == c
        assert again.to_dict()["schema_version"] == 1

    def test_json_rejects_other_versions(self):
        d = build_circuit(2, 2).to_dict()
        d["schema_version"] = 99
        with pytest.raises(ValueError):
            CircuitSpec.from_dict(d)


class TestExecute:
    def test_zero_params_give_zero_state(self):
        c = build_circuit(4, 4, "line")
        probs = probabilities(execute(c, np.zeros(c.n_params)))
        assert probs[0] == 1.0 and probs[1:].sum() == 0.0

    def test_single_flip(self):
        c = build_circuit(2, 2, "line")
        params = np.zeros(c.n_params)
        params[0] = math.pi  # RX on qubit 0
        probs = probabilities(execute(c, params))
        np.testing.assert_allclose(probs[bitstring_to_index("10")], 1.0, atol=1e-15)

    @pytest.mark.parametrize("topology", ["line", "all_to_all"])
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_kronecker_oracle(self, topology, seed):
        c = build_circuit(3, 4, topology)
        params = np.random.default_rng(seed).uniform(-math.pi, math.pi, c.n_params)
        u = circuit_unitary(as_tuples(c), params, 3)
        expected = u[:, 0]
        np.testing.assert_allclose(execute(c, params).amplitudes, expected, atol=1e-12, rtol=0)

    def test_length_mismatch(self):
        c = build_circuit(3, 2, "line")
        with pytest.raises(ValueError):
            execute(c, np.zeros(c.n_params + 1))

    def test_deterministic(self):
        c = build_circuit(6, 8, "line")
        params = np.random.default_rng(1).normal(size=c.n_params)
        a = probabilities(execute(c, params))
        b = probabilities(execute(c, params))
        assert np.array_equal(a, b)

    def test_batch_matches_single(self):
        c = build_circuit(5, 4, "all_to_all")
        params = np.random.default_rng(2).normal(size=(7, c.n_params))
        batch = execute_batch(c, params)
        for row, p in zip(batch, params):
            assert np.array_equal(row, execute(c, p).amplitudes)

    def test_normalized(self):
        c = build_circuit(8, 6, "line")
        state = execute(c, np.random.default_rng(3).normal(size=c.n_params))
        assert abs(state.norm() - 1) < 1e-12


def test_two_qubit_expressivity():
    """A two-layer, two-qubit circuit can be fitted to arbitrary 2-bit targets."""
    from qcbm.cmaes import CMAConfig, cma_es_minimize

    c = build_circuit(2, 2, "line")
    rng = np.random.default_rng(11)
    for _ in range(5):
        target = rng.dirichlet(np.ones(4))

        def tv(params):
            return 0.5 * np.abs(probabilities(execute(c, params)) - target).sum()

        best_tv = min(
            cma_es_minimize(tv, c.n_params, CMAConfig(max_iterations=400, initial_step=1.0, seed=s),
                            x0=rng.uniform(-math.pi, math.pi, c.n_params))[1].best_values[-1]
            for s in range(3)
        )
        assert best_tv < 0.05
