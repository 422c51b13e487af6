"""QCBM circuit layouts (line and all-to-all) and their execution.

Layout for ``L`` layers is ``SQ_1, E_1, SQ_2, E_2, ..., SQ_{L/2}, E_{L/2}``:

* ``SQ_1`` applies ``RX, RZ`` on each qubit (the leading ``RZ`` of a full
  Euler rotation acts on ``|0>`` as a global phase and is dropped),
* intermediate sequences apply ``RZ, RX`` (their leading ``RX`` commutes
  through the preceding ``XX`` layer and merges backwards),
* the last sequence applies ``RX, RZ, RX`` since nothing follows it,
* each ``E`` layer holds one ``RXX`` per topology edge.

For ``L = 2`` only ``SQ_1`` exists, giving ``3N - 1`` parameters on a line.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from qcbm.statevector import (
    KIND_RX,
    KIND_RXX,
    KIND_RZ,
    MAX_QUBITS,
    StateVector,
    _run_gates,
    _run_gates_batch,
    zero_state,
)

CIRCUIT_SCHEMA_VERSION = 1

_KIND_NAMES = {KIND_RX: "RX", KIND_RZ: "RZ", KIND_RXX: "RXX"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}


class Topology(str, enum.Enum):
    LINE = "line"
    ALL_TO_ALL = "all_to_all"

    def edges(self, n_qubits: int) -> list[tuple[int, int]]:
        if self is Topology.LINE:
            return [(j, j + 1) for j in range(n_qubits - 1)]
        return list(combinations(range(n_qubits), 2))


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    param_index: int


@dataclass(frozen=True)
class CircuitSpec:
    """Immutable gate list for an ``(n_qubits, n_layers, topology)`` ansatz."""

    n_qubits: int
    n_layers: int
    topology: Topology
    gates: tuple[Gate, ...]

    @property
    def n_params(self) -> int:
        return len(self.gates)

    def _arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        # Cached flat arrays for the compiled kernels; the dataclass is frozen.
        cached = self.__dict__.get("_kernel_arrays")
        if cached is None:
            kinds = np.array([_KIND_CODES[g.kind] for g in self.gates], dtype=np.int64)
            qa = np.array([g.qubits[0] for g in self.gates], dtype=np.int64)
            qb = np.array([g.qubits[-1] for g in self.gates], dtype=np.int64)
            pidx = np.array([g.param_index for g in self.gates], dtype=np.int64)
            cached = (kinds, qa, qb, pidx)
            object.__setattr__(self, "_kernel_arrays", cached)
        return cached

    def to_dict(self) -> dict:
        return {
            "schema_version": CIRCUIT_SCHEMA_VERSION,
            "n_qubits": self.n_qubits,
            "n_layers": self.n_layers,
            "topology": self.topology.value,
            "gates": [
                {"kind": g.kind, "qubits": list(g.qubits), "param_index": g.param_index}
                for g in self.gates
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> CircuitSpec:
        version = data.get("schema_version")
        if version != CIRCUIT_SCHEMA_VERSION:
            raise ValueError(f"unsupported circuit schema version {version!r}")
        gates = tuple(
            Gate(g["kind"], tuple(int(q) for q in g["qubits"]), int(g["param_index"]))
            for g in data["gates"]
        )
        for g in gates:
            if g.kind not in _KIND_CODES:
                raise ValueError(f"unknown gate kind {g.kind!r}")
        return cls(int(data["n_qubits"]), int(data["n_layers"]), Topology(data["topology"]), gates)

    @classmethod
    def from_json(cls, text: str) -> CircuitSpec:
        return cls.from_dict(json.loads(text))


def _validate(n_qubits: int, n_layers: int) -> None:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ValueError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits!r}")
    if not isinstance(n_layers, (int, np.integer)) or n_layers < 2 or n_layers % 2:
        raise ValueError(f"n_layers must be an even integer >= 2, got {n_layers!r}")


def build_circuit(n_qubits: int, n_layers: int, topology: Topology | str = Topology.LINE) -> CircuitSpec:
    """Build the reduced-rotation QCBM ansatz.

    Parameter indices are assigned in gate order, so every index in
    ``[0, P)`` is used exactly once.
    """
    _validate(n_qubits, n_layers)
    topology = Topology(topology)
    edges = topology.edges(n_qubits)
    n_blocks = n_layers // 2

    gates: list[Gate] = []

    def add(kind: str, *qubits: int) -> None:
        gates.append(Gate(kind, qubits, len(gates)))

    for block in range(n_blocks):
        if block == 0:
            sequence = ("RX", "RZ")
        elif block == n_blocks - 1:
            sequence = ("RX", "RZ", "RX")
        else:
            sequence = ("RZ", "RX")
        for q in range(n_qubits):
            for kind in sequence:
                add(kind, q)
        for a, b in edges:
            add("RXX", a, b)
    return CircuitSpec(int(n_qubits), int(n_layers), topology, tuple(gates))


def param_count(n_qubits: int, n_layers: int, topology: Topology | str = Topology.LINE) -> int:
    """Closed-form parameter count of :func:`build_circuit`."""
    _validate(n_qubits, n_layers)
    topology = Topology(topology)
    n_edges = len(topology.edges(n_qubits))
    blocks = n_layers // 2
    if blocks == 1:
        single = 2 * n_qubits
    else:
        single = 2 * n_qubits * (blocks - 1) + 3 * n_qubits
    return single + blocks * n_edges


def _check_params(circuit: CircuitSpec, params: np.ndarray) -> np.ndarray:
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.shape[-1] != circuit.n_params:
        raise ValueError(f"expected {circuit.n_params} parameters, got {params.shape[-1]}")
    return params


def execute(circuit: CircuitSpec, params: np.ndarray) -> StateVector:
    """Run ``circuit`` on ``|0...0>`` with the given parameter vector."""
    params = _check_params(circuit, params)
    if params.ndim != 1:
        raise ValueError("execute takes a single parameter vector; see execute_batch")
    state = zero_state(circuit.n_qubits)
    _run_gates(state.amplitudes, *circuit._arrays(), params)
    return state


def execute_batch(circuit: CircuitSpec, params: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Run ``circuit`` for each row of ``params``; returns ``(batch, 2**n)`` amplitudes."""
    params = _check_params(circuit, params)
    if params.ndim != 2:
        raise ValueError("execute_batch takes a (batch, P) parameter array")
    shape = (params.shape[0], 1 << circuit.n_qubits)
    if out is None or out.shape != shape:
        out = np.empty(shape, dtype=np.complex128)
    _run_gates_batch(out, *circuit._arrays(), params)
    return out
