"""Dense statevector simulator.

Conventions used everywhere in the package:

* qubit 0 is the most significant bit of a basis index, so the bitstring
  ``"10"`` on two qubits is index 2;
* rotations are ``RX(t) = exp(-i t X/2)``, ``RZ(t) = exp(-i t Z/2)`` and
  ``RZZ(t) = exp(-i t Z⊗Z/2)``;
* ``CNOT`` and ``CCX`` list controls first and the target last.

Operations never mutate their inputs; each returns a new ``StateVector``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ArgumentError, DimensionError, GateIndexError, SizeError

MAX_QUBITS = 12

GATE_CODES = {"H": kernels.H, "X": kernels.X, "RX": kernels.RX,
              "RZ": kernels.RZ, "RZZ": kernels.RZZ, "CZ": kernels.CZ,
              "CNOT": kernels.CNOT, "CCX": kernels.CCX, "SWAP": kernels.SWAP}
GATE_ARITY = {"H": 1, "X": 1, "RX": 1, "RZ": 1, "RZZ": 2, "CZ": 2,
              "CNOT": 2, "CCX": 3, "SWAP": 2}
ROTATIONS = ("RX", "RZ", "RZZ")


class StateVector:
    """Pure state of ``n_qubits`` qubits stored as 2**n complex amplitudes."""

    __slots__ = ("n_qubits", "amplitudes")

    def __init__(self, n_qubits, amplitudes):
        _check_size(n_qubits)
        amps = np.array(amplitudes, dtype=np.complex128)
        if amps.shape != (1 << n_qubits,):
            raise DimensionError(
                f"expected {1 << n_qubits} amplitudes, got shape {amps.shape}")
        amps.setflags(write=False)
        self.n_qubits = int(n_qubits)
        self.amplitudes = amps

    def probabilities(self):
        p = self.amplitudes.real ** 2 + self.amplitudes.imag ** 2
        return p

    def norm(self):
        return float(np.sqrt(self.probabilities().sum()))

    def copy_amplitudes(self):
        return np.array(self.amplitudes, dtype=np.complex128)

    def __repr__(self):
        return f"StateVector(n_qubits={self.n_qubits})"


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in GATE_CODES:
            raise ArgumentError(f"unknown gate kind {self.kind!r}")
        targets = tuple(int(t) for t in self.targets)
        if len(targets) != GATE_ARITY[self.kind]:
            raise ArgumentError(
                f"{self.kind} takes {GATE_ARITY[self.kind]} qubits, got {targets}")
        if len(set(targets)) != len(targets):
            raise ArgumentError(f"repeated qubit in {self.kind}{targets}")
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "angle", float(self.angle))


@dataclass
class Circuit:
    n_qubits: int
    gates: list = field(default_factory=list)

    def add(self, kind, *targets, angle=0.0):
        self.gates.append(Gate(kind, targets, angle))
        return self

    def extend(self, other):
        if other.n_qubits != self.n_qubits:
            raise DimensionError("circuit widths differ")
        self.gates.extend(other.gates)
        return self

    def __len__(self):
        return len(self.gates)

    def program(self):
        """Compile to the flat arrays consumed by ``kernels.apply_program``."""
        _check_size(self.n_qubits)
        m = len(self.gates)
        codes = np.zeros(m, dtype=np.int64)
        qs = np.zeros((3, m), dtype=np.int64)
        angles = np.zeros(m)
        for g, gate in enumerate(self.gates):
            for t in gate.targets:
                if not 0 <= t < self.n_qubits:
                    raise GateIndexError(
                        f"gate {gate.kind}{gate.targets} outside {self.n_qubits} qubits")
            codes[g] = GATE_CODES[gate.kind]
            qs[:len(gate.targets), g] = gate.targets
            angles[g] = gate.angle
        return Program(self.n_qubits, codes, qs[0], qs[1], qs[2], angles)


@dataclass(frozen=True)
class Program:
    """Compiled circuit; arrays are passed straight to the kernel."""
    n_qubits: int
    codes: np.ndarray
    qa: np.ndarray
    qb: np.ndarray
    qc: np.ndarray
    angles: np.ndarray

    def run_inplace(self, psi):
        return kernels.apply_program(psi, self.n_qubits, self.codes, self.qa,
                                     self.qb, self.qc, self.angles)

    @staticmethod
    def concat(programs):
        n = programs[0].n_qubits
        if any(p.n_qubits != n for p in programs):
            raise DimensionError("program widths differ")
        return Program(n, *(np.concatenate([getattr(p, k) for p in programs])
                            for k in ("codes", "qa", "qb", "qc", "angles")))


@dataclass
class ShotCounts:
    shots: int
    counts: dict


def _check_size(n):
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise SizeError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n!r}")


def init_basis_state(n_qubits, bitstring):
    _check_size(n_qubits)
    if len(bitstring) != n_qubits or set(bitstring) - {"0", "1"}:
        raise ArgumentError(f"bitstring {bitstring!r} does not fit {n_qubits} qubits")
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[int(bitstring, 2)] = 1.0
    return StateVector(n_qubits, amps)


def zero_state(n_qubits):
    return init_basis_state(n_qubits, "0" * n_qubits)


def apply_gate(state, gate):
    return run_circuit(state, Circuit(state.n_qubits, [gate]))


def run_circuit(state, circuit):
    if circuit.n_qubits != state.n_qubits:
        raise DimensionError(
            f"circuit has {circuit.n_qubits} qubits, state has {state.n_qubits}")
    return run_program(state, circuit.program())


def run_program(state, program):
    if program.n_qubits != state.n_qubits:
        raise DimensionError("program width does not match state")
    psi = state.copy_amplitudes()
    program.run_inplace(psi)
    return StateVector(state.n_qubits, psi)


def pauli_masks(pauli_string):
    """Return (x_mask, z_mask, n_y) for a string over {I, X, Y, Z}."""
    n = len(pauli_string)
    xm = zm = 0
    n_y = 0
    for q, ch in enumerate(pauli_string.upper()):
        bit = 1 << (n - 1 - q)
        if ch == "X":
            xm |= bit
        elif ch == "Z":
            zm |= bit
        elif ch == "Y":
            xm |= bit
            zm |= bit
            n_y += 1
        elif ch != "I":
            raise ArgumentError(f"bad Pauli letter {ch!r}")
    return xm, zm, n_y


def _parity(x):
    x = x.copy()
    out = np.zeros_like(x)
    while np.any(x):
        out ^= x & 1
        x >>= 1
    return out


def expect_pauli(state, pauli_string):
    """Exact <psi|P|psi> for a Pauli word given as a string, e.g. ``"ZXIZ"``."""
    if len(pauli_string) != state.n_qubits:
        raise DimensionError(
            f"Pauli string of length {len(pauli_string)} on {state.n_qubits} qubits")
    xm, zm, n_y = pauli_masks(pauli_string)
    psi = state.amplitudes
    idx = np.arange(psi.shape[0])
    # P|i> = i^{n_y} (-1)^{popcount(i & z)} |i ^ x>
    sign = 1 - 2 * _parity(idx & zm)
    val = np.vdot(psi[idx ^ xm], sign * psi) * (1j ** n_y)
    return float(np.clip(val.real, -1.0, 1.0))


def sample_counts_array(probs, shots, rng):
    """Multinomial histogram over basis indices."""
    if shots < 1:
        raise ArgumentError("shots must be at least 1")
    p = np.clip(probs, 0.0, None)
    p = p / p.sum()
    return rng.multinomial(int(shots), p)


def sample_bitstrings(state, shots, rng):
    if not isinstance(shots, (int, np.integer)) or shots < 1:
        raise ArgumentError(f"shots must be a positive integer, got {shots!r}")
    hist = sample_counts_array(state.probabilities(), shots, rng)
    n = state.n_qubits
    counts = {format(int(i), f"0{n}b"): int(c) for i, c in enumerate(hist) if c}
    return ShotCounts(int(shots), counts)


def z_from_histogram(hist, n_qubits):
    """Per-qubit <Z> estimate from a histogram over basis indices."""
    total = hist.sum()
    if total <= 0:
        raise ArgumentError("empty histogram")
    return kernels.z_expectations(np.asarray(hist, dtype=np.float64) / total, n_qubits)


def estimate_z_expectations(counts, n_qubits):
    items = counts.counts if isinstance(counts, ShotCounts) else counts
    if not items:
        raise ArgumentError("no counts to estimate from")
    hist = np.zeros(1 << n_qubits)
    for bits, c in items.items():
        if len(bits) != n_qubits:
            raise DimensionError(f"bitstring {bits!r} is not {n_qubits} long")
        hist[int(bits, 2)] += c
    return z_from_histogram(hist, n_qubits)


def exact_z_expectations(state):
    return kernels.z_expectations(state.probabilities(), state.n_qubits)


def rx_row(n_qubits, angles):
    c = Circuit(n_qubits)
    for q, a in enumerate(angles):
        c.add("RX", q, angle=a)
    return c


def noise_angles(n_qubits, p, rng):
    if not 0.0 <= p <= 1.0:
        raise ArgumentError(f"noise level must lie in [0, 1], got {p}")
    return rng.uniform(0.0, 2.0 * np.pi * p, size=n_qubits)


def apply_rx_noise(state, p, rng):
    """One RX(u_j) per qubit with u_j ~ Uniform[0, 2*pi*p], fresh per call."""
    angles = noise_angles(state.n_qubits, p, rng)
    return run_circuit(state, rx_row(state.n_qubits, angles))


def random_state(n_qubits, rng):
    v = rng.normal(size=1 << n_qubits) + 1j * rng.normal(size=1 << n_qubits)
    return StateVector(n_qubits, v / np.linalg.norm(v))
