"""Exact references: dense diagonalization of qubit Hamiltonians and dense
circuit evaluation, for systems small enough to enumerate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_QUBITS = 12


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    ground_vector: np.ndarray | None = None

    @property
    def ground_energy(self):
        return float(self.eigenvalues[0])


def exact_ground_energy(hamiltonian, n_electrons=None, with_vector=False):
    """Full diagonalization of a PauliSum, optionally within a particle sector.

    When `n_electrons` is given, the Hamiltonian is restricted to the span of
    computational states whose occupation (Jordan-Wigner convention, |1> =
    occupied) sums to that electron count before diagonalizing.
    """
    n_q = hamiltonian.n_qubits
    if n_q > MAX_QUBITS:
        raise ValueError(f"dense diagonalization capped at {MAX_QUBITS} qubits")
    matrix = hamiltonian.to_matrix()
    if np.max(np.abs(matrix - matrix.conj().T)) > 1e-9:
        raise ValueError("Hamiltonian matrix is not Hermitian")

    if n_electrons is not None:
        basis = [i for i in range(2 ** n_q) if _popcount(i) == n_electrons]
        matrix = matrix[np.ix_(basis, basis)]
        if matrix.size == 0:
            raise ValueError("empty particle sector")

    if with_vector:
        vals, vecs = np.linalg.eigh(matrix)
        ground = vecs[:, 0]
        if n_electrons is not None:
            full = np.zeros(2 ** n_q, dtype=complex)
            full[basis] = ground
            ground = full
        return SpectrumResult(vals, ground)
    return SpectrumResult(np.linalg.eigvalsh(matrix))


def _popcount(index):
    # Qubit q corresponds to bit q of the basis index read from the LEFT in
    # the Kronecker ordering used by PauliSum.to_matrix: index bit (n-1-q).
    return bin(index).count("1")


def _annihilator_matrices(n_qubits):
    sigma_minus = np.array([[0, 1], [0, 0]], dtype=complex)
    z = np.diag([1.0, -1.0]).astype(complex)
    ops = []
    for p in range(n_qubits):
        m = np.array([[1.0]], dtype=complex)
        for q in range(n_qubits):
            if q < p:
                m = np.kron(m, z)
            elif q == p:
                m = np.kron(m, sigma_minus)
            else:
                m = np.kron(m, np.eye(2))
        ops.append(m)
    return ops


def fermionic_rdms(state_vector, n_qubits):
    """Spin-orbital RDMs of a pure state via dense ladder operators.

    Returns (d1, d2) with d1[p,q] = <a+_p a_q> and the chemists' pairing
    d2[p,q,r,s] = <a+_p a+_r a_s a_q>.  Used as the reference solver and as
    the independent check against the measurement-based RDM route.
    """
    ann = _annihilator_matrices(n_qubits)
    a_psi = [a @ state_vector for a in ann]
    d1 = np.zeros((n_qubits, n_qubits))
    for p in range(n_qubits):
        for q in range(n_qubits):
            d1[p, q] = np.real(np.vdot(a_psi[p], a_psi[q]))
    aa_psi = {}
    for r in range(n_qubits):
        for p in range(n_qubits):
            aa_psi[(r, p)] = ann[r] @ a_psi[p]
    d2 = np.zeros((n_qubits,) * 4)
    for p in range(n_qubits):
        for q in range(n_qubits):
            for r in range(n_qubits):
                for s in range(n_qubits):
                    d2[p, q, r, s] = np.real(np.vdot(aa_psi[(r, p)], aa_psi[(s, q)]))
    return d1, d2


def dense_unitary(circuit):
    """Gate-by-gate Kronecker composition of a fully bound circuit."""
    if circuit.n_qubits > 6:
        raise ValueError("dense circuit evaluation capped at 6 qubits")
    dim = 2 ** circuit.n_qubits
    u = np.eye(dim, dtype=complex)
    for gate in circuit.gates:
        u = gate_matrix(gate, circuit.n_qubits) @ u
    return u


def gate_matrix(gate, n_qubits):
    """Dense matrix of a single bound gate embedded in the full register."""
    from . import circuits

    return circuits.embed_gate_matrix(gate, n_qubits)
