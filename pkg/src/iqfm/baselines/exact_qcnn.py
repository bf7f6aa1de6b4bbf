"""Parameter-free QCNN that reads out the cluster string order on 9 qubits.

Qubits form blocks (0,1,2), (3,4,5), (6,7,8) with middle qubits 1, 4, 7
kept.  The circuit is: two brickwork layers of nearest-neighbour CZ,
CZ(1,4) and CZ(4,7), a Toffoli per block whose outer controls fire on
|->  (Hadamards around a standard CCX), pooling (H then CZ towards the
middle qubit from both ends of every block), and CZ(1,4), CZ(4,7).  The
output is <X_4>; SPT is predicted when the estimate exceeds 0.5.

``swap=True`` inserts SWAP(2,3) and SWAP(5,6) after the Toffolis.
"""
import numpy as np

from ..errors import ArgumentError
from ..statevector import Circuit, StateVector, run_circuit

N_QUBITS = 9
BLOCKS = ((0, 1, 2), (3, 4, 5), (6, 7, 8))
THRESHOLD = 0.5


def build_exact_qcnn(swap=False):
    c = Circuit(N_QUBITS)
    for a in range(0, 8, 2):
        c.add("CZ", a, a + 1)
    for a in range(1, 8, 2):
        c.add("CZ", a, a + 1)
    c.add("CZ", 1, 4).add("CZ", 4, 7)
    for c1, t, c2 in BLOCKS:
        c.add("H", c1).add("H", c2)
        c.add("CCX", c1, c2, t)
        c.add("H", c1).add("H", c2)
    if swap:
        c.add("SWAP", 2, 3).add("SWAP", 5, 6)
    for i in (0, 3, 6):
        c.add("H", i).add("CZ", i, i + 1)
    for i in (2, 5, 8):
        c.add("H", i).add("CZ", i, i - 1)
    c.add("CZ", 1, 4).add("CZ", 4, 7)
    # rotate X_4 onto Z_4 for the readout
    c.add("H", 4)
    return c


def output_p0(state, swap=False):
    """Probability that the readout qubit reports +1 for X_4."""
    out = run_circuit(state, build_exact_qcnn(swap))
    probs = out.probabilities()
    bit = (np.arange(1 << N_QUBITS) >> (N_QUBITS - 1 - 4)) & 1
    return float(np.clip(probs[bit == 0].sum(), 0.0, 1.0))


def exact_qcnn_predict(state9, shots, rng, swap=False):
    """(estimate of <X_4>, class) with class 1 = SPT.  ``shots=None`` is exact."""
    if not isinstance(state9, StateVector):
        state9 = StateVector(N_QUBITS, state9)
    if state9.n_qubits != N_QUBITS:
        raise ArgumentError("the exact QCNN acts on 9 qubits")
    p0 = output_p0(state9, swap)
    if shots is None:
        est = 2.0 * p0 - 1.0
    else:
        if shots < 1:
            raise ArgumentError("shots must be at least 1")
        est = (2.0 * rng.binomial(int(shots), p0) - shots) / shots
    return est, int(est > THRESHOLD)


def shot_sigma(value, shots):
    """Standard deviation of the shot estimate of a +-1 observable."""
    return float(np.sqrt(max(1.0 - value ** 2, 0.0) / shots))
