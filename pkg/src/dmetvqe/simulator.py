"""Density-matrix circuit simulation with depolarizing gate noise, shot
sampling over qubit-wise measurement groups, and readout mitigation.

The depolarizing channel is the replace-with-maximally-mixed form
rho -> (1-p)*rho + p * I/2^k (x) Tr_supp(rho), so a traceless observable on
the gate's support contracts by exactly (1-p).

Basis-index convention: qubit 0 is the most significant bit of the density
matrix index; bitstring "b0 b1 ... b{n-1}" therefore reads left to right.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import circuits
from .operators import group_qubitwise, _dense_pauli

PERTH_LIKE = {"p1": 0.002, "p2": 0.03, "readout_e": 0.02}


class SimulationError(RuntimeError):
    pass


@dataclass
class DensityState:
    n_qubits: int
    matrix: np.ndarray

    def validate(self, tol=1e-10):
        tr = np.trace(self.matrix)
        if abs(tr - 1.0) > tol:
            raise SimulationError(f"trace {tr} deviates from 1")
        if np.max(np.abs(self.matrix - self.matrix.conj().T)) > tol:
            raise SimulationError("density matrix is not Hermitian")
        eigs = np.linalg.eigvalsh(self.matrix)
        if eigs.min() < -tol:
            raise SimulationError(f"negative eigenvalue {eigs.min()}")
        return self

    @classmethod
    def ground(cls, n_qubits):
        dim = 2 ** n_qubits
        m = np.zeros((dim, dim), dtype=complex)
        m[0, 0] = 1.0
        return cls(n_qubits, m)


@dataclass
class NoiseModel:
    """Depolarizing probabilities per gate arity plus per-qubit readout
    confusion.  readout_e may be a float (shared) or a per-qubit list."""

    p1: float = 0.0
    p2: float = 0.0
    readout_e: object = 0.0

    def __post_init__(self):
        if not (0.0 <= self.p1 <= 1.0 and 0.0 <= self.p2 <= 1.0):
            raise ValueError("depolarizing probabilities must lie in [0, 1]")

    def flip_probability(self, qubit):
        if np.isscalar(self.readout_e):
            return float(self.readout_e)
        return float(self.readout_e[qubit])

    def confusion(self, qubit):
        """Row-stochastic 2x2: row = true bit, column = observed bit."""
        e = self.flip_probability(qubit)
        return np.array([[1.0 - e, e], [e, 1.0 - e]])

    def has_readout_error(self, n_qubits):
        return any(self.flip_probability(q) > 0.0 for q in range(n_qubits))

    @classmethod
    def perth_like(cls):
        return cls(PERTH_LIKE["p1"], PERTH_LIKE["p2"], PERTH_LIKE["readout_e"])

    @classmethod
    def from_config(cls, path):
        """Key-value config: p1, p2, readout_e or readout_e_<q> per line."""
        values = {}
        with open(path) as fh:
            for raw in fh:
                line = raw.split("#")[0].strip()
                if not line:
                    continue
                key, _, val = line.partition("=")
                values[key.strip()] = float(val)
        per_qubit = {int(k.rsplit("_", 1)[1]): v for k, v in values.items()
                     if k.startswith("readout_e_")}
        if per_qubit:
            readout = [per_qubit.get(q, values.get("readout_e", 0.0))
                       for q in range(max(per_qubit) + 1)]
        else:
            readout = values.get("readout_e", 0.0)
        return cls(values.get("p1", 0.0), values.get("p2", 0.0), readout)


def resolve_noise(spec):
    """Map a CLI-style noise spec (None/'none'/'perth-like'/path/NoiseModel)."""
    if spec is None or spec == "none":
        return None
    if isinstance(spec, NoiseModel):
        return spec
    if spec == "perth-like":
        return NoiseModel.perth_like()
    return NoiseModel.from_config(spec)


@dataclass
class ShotResult:
    counts: dict
    shots: int
    basis: str
    n_qubits: int = field(default=0)

    def __post_init__(self):
        if self.n_qubits == 0 and self.basis:
            self.n_qubits = len(self.basis)
        if sum(self.counts.values()) != self.shots:
            raise SimulationError("counts do not sum to the shot total")

    def probabilities(self):
        p = np.zeros(2 ** self.n_qubits)
        for bits, c in self.counts.items():
            p[int(bits, 2)] = c / self.shots
        return p


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------

def _depolarize(matrix, support, p, n_qubits):
    if p <= 0.0:
        return matrix
    keep = [q for q in range(n_qubits) if q not in support]
    shape = [2] * (2 * n_qubits)
    t = matrix.reshape(shape)
    # Trace out the support, then re-embed the maximally mixed factor.
    for q in sorted(support, reverse=True):
        t = np.trace(t, axis1=q, axis2=t.ndim // 2 + q)
    reduced = t
    k = len(support)
    mixed = reduced
    for _ in range(k):
        mixed = np.tensordot(mixed, np.eye(2) / 2.0, axes=0)
    # mixed currently has kept axes first then support axes; restore order.
    dims = len(keep)
    order_rows = []
    order_cols = []
    for q in range(n_qubits):
        if q in support:
            idx = 2 * dims + 2 * support.index(q)
            order_rows.append(idx)
            order_cols.append(idx + 1)
        else:
            idx = keep.index(q)
            order_rows.append(idx)
            order_cols.append(dims + idx)
    mixed = np.transpose(mixed, order_rows + order_cols)
    dim = 2 ** n_qubits
    return (1.0 - p) * matrix + p * mixed.reshape(dim, dim)


def _local_matrix(gate):
    """Gate unitary on its own support only (not for pauli_rot)."""
    if gate.kind == "cnot":
        return np.array([[1, 0, 0, 0], [0, 1, 0, 0],
                         [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    return circuits._single_qubit_matrix(gate)


def _apply_unitary(rho, u, qubits, n_qubits):
    """rho -> U rho U+ with U acting on the listed qubits."""
    k = len(qubits)
    t = rho.reshape([2] * (2 * n_qubits))
    u_t = u.reshape([2] * (2 * k))
    row_axes = list(qubits)
    col_axes = [n_qubits + q for q in qubits]
    t = np.tensordot(u_t, t, axes=(list(range(k, 2 * k)), row_axes))
    t = np.moveaxis(t, range(k), row_axes)
    t = np.tensordot(np.conj(u_t), t, axes=(list(range(k, 2 * k)), col_axes))
    t = np.moveaxis(t, range(k), col_axes)
    dim = 2 ** n_qubits
    return t.reshape(dim, dim)


def evolve(circuit, noise=None, validate=False):
    """Run a bound circuit from |0...0>, applying depolarizing noise on each
    gate's support when a noise model is given."""
    if not circuit.is_bound:
        raise circuits.BindError("circuit must be fully bound before evolution")
    state = DensityState.ground(circuit.n_qubits)
    rho = state.matrix
    for gate in circuit.gates:
        support = list(gate.qubits)
        if gate.kind == "pauli_rot":
            u = circuits.embed_gate_matrix(gate, circuit.n_qubits)
            rho = u @ rho @ u.conj().T
        else:
            rho = _apply_unitary(rho, _local_matrix(gate), support, circuit.n_qubits)
        if noise is not None:
            p = noise.p2 if len(support) == 2 else noise.p1
            rho = _depolarize(rho, support, p, circuit.n_qubits)
        if validate:
            DensityState(circuit.n_qubits, rho).validate()
    return DensityState(circuit.n_qubits, rho)


def statevector(circuit):
    """Pure-state evolution from |0...0> (noiseless fast path)."""
    if not circuit.is_bound:
        raise circuits.BindError("circuit must be fully bound before evolution")
    n = circuit.n_qubits
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1.0
    for gate in circuit.gates:
        if gate.kind == "pauli_rot":
            u = circuits.embed_gate_matrix(gate, n)
            psi = u @ psi
            continue
        u = _local_matrix(gate)
        k = len(gate.qubits)
        t = psi.reshape([2] * n)
        t = np.tensordot(u.reshape([2] * (2 * k)), t,
                         axes=(list(range(k, 2 * k)), list(gate.qubits)))
        psi = np.moveaxis(t, range(k), gate.qubits).reshape(-1)
    return psi


def expectation_exact(state, hamiltonian):
    """Tr(rho H) as a real number."""
    if state.n_qubits != hamiltonian.n_qubits:
        raise SimulationError("state and operator widths differ")
    acc = 0.0 + 0.0j
    for string, coeff in hamiltonian.items():
        dense = _dense_pauli(string.x, string.z, state.n_qubits)
        acc += coeff * np.sum(state.matrix.T * dense)
    if abs(acc.imag) > 1e-9:
        raise SimulationError(f"imaginary expectation residue {acc.imag}")
    return float(acc.real)


# ---------------------------------------------------------------------------
# Sampling and readout
# ---------------------------------------------------------------------------

def _basis_rotation(basis):
    """Circuit gates rotating the group's shared eigenbasis onto Z."""
    gates = []
    for q, letter in enumerate(basis):
        if letter == "X":
            gates.append(circuits.Gate("h", (q,)))
        elif letter == "Y":
            gates.append(circuits.Gate("rx", (q,), angle=np.pi / 2))
    return gates


def measurement_probabilities(state, basis):
    """Diagonal of the state after rotating `basis` onto the Z basis."""
    rho = state.matrix
    for gate in _basis_rotation(basis):
        rho = _apply_unitary(rho, _local_matrix(gate), list(gate.qubits), state.n_qubits)
    p = np.real(np.diag(rho)).copy()
    p[p < 0] = 0.0
    total = p.sum()
    if total <= 0:
        raise SimulationError("degenerate measurement distribution")
    return p / total


def _apply_confusion(probs, noise, n_qubits, inverse=False):
    p = probs.reshape([2] * n_qubits)
    for q in range(n_qubits):
        a = noise.confusion(q)
        m = a.T  # column-stochastic: observed <- true
        if inverse:
            if abs(np.linalg.det(m)) < 1e-12:
                raise SimulationError(f"singular confusion matrix on qubit {q}")
            m = np.linalg.inv(m)
        p = np.moveaxis(np.tensordot(m, np.moveaxis(p, q, 0), axes=(1, 0)), 0, q)
    return p.reshape(-1)


def sample(state, group, shots, noise=None, seed=0):
    """Sample bitstrings for one qubit-wise group, deterministic per seed."""
    if shots <= 0:
        raise SimulationError("shot count must be positive")
    probs = measurement_probabilities(state, group.basis)
    if noise is not None and noise.has_readout_error(state.n_qubits):
        probs = _apply_confusion(probs, noise, state.n_qubits)
        probs = np.clip(probs, 0.0, None)
        probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(shots, probs)
    counts = {}
    for idx, c in enumerate(draws):
        if c:
            counts[format(idx, f"0{state.n_qubits}b")] = int(c)
    return ShotResult(counts, shots, group.basis, state.n_qubits)


def mitigate_readout(result, noise):
    """Invert the tensor-product confusion on the empirical distribution,
    clip negatives, renormalize."""
    probs = result.probabilities()
    corrected = _apply_confusion(probs, noise, result.n_qubits, inverse=True)
    corrected = np.clip(corrected, 0.0, None)
    total = corrected.sum()
    if total <= 0:
        raise SimulationError("readout mitigation produced an empty distribution")
    return corrected / total


def _string_estimate(probs, string, n_qubits):
    """<P> from a diagonal-basis probability vector."""
    support_mask = 0
    for q, letter in enumerate(string.letters()):
        if letter != "I":
            support_mask |= 1 << (n_qubits - 1 - q)
    signs = np.array([1.0 if bin(idx & support_mask).count("1") % 2 == 0 else -1.0
                      for idx in range(len(probs))])
    return float(np.dot(probs, signs))


def estimate_group(probs, group, n_qubits):
    return {s.key: _string_estimate(probs, s, n_qubits) for s in group.strings}


def estimate_energy(circuit, hamiltonian, shots=None, noise=None, seed=0,
                    mitigate=True, state=None, groups=None):
    """Energy of a bound circuit under a PauliSum.

    shots=None (or "exact") evaluates Tr(rho H) directly; otherwise one
    ShotResult is drawn per qubit-wise measurement group and combined with
    the term coefficients.  Readout mitigation is applied to sampled
    distributions whenever the noise model has readout error.
    """
    if state is None and shots in (None, "exact") and noise is None:
        # Pure-state fast path for exact evaluation.
        psi = statevector(circuit)
        value = np.vdot(psi, hamiltonian.dense_matrix() @ psi)
        return float(np.real(value))
    if state is None:
        state = evolve(circuit, noise)
    if shots in (None, "exact"):
        return expectation_exact(state, hamiltonian)
    if groups is None:
        groups = group_qubitwise(hamiltonian)
    energy = hamiltonian.identity_coeff
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = seq.spawn(len(groups))
    for group, sub in zip(groups, seeds):
        result = sample(state, group, shots, noise, seed=sub)
        if noise is not None and mitigate and noise.has_readout_error(state.n_qubits):
            probs = mitigate_readout(result, noise)
        else:
            probs = result.probabilities()
        estimates = estimate_group(probs, group, state.n_qubits)
        for string, coeff in zip(group.strings, group.coeffs):
            energy += coeff * estimates[string.key]
    return float(energy)
