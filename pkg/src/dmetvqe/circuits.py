"""Parameterized circuits and the trotterized UCCSD ansatz.

Rotation conventions: RX/RY/RZ(angle) = exp(-i*angle/2 * P) and the
multi-qubit Pauli rotation gate follows the same half-angle convention.
Circuits are immutable; bind() returns a new circuit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .operators import (PauliString, PauliSum, ladder_product,
                        spin_orbital_index, hartree_fock_bits, taper,
                        taper_bits, _dense_pauli)

_H_MATRIX = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_X_MATRIX = np.array([[0, 1], [1, 0]], dtype=complex)


class BindError(ValueError):
    """Parameter vector does not match the circuit's parameter table."""


@dataclass(frozen=True)
class Gate:
    """A single gate; `angle` is set when bound, `param` = (index, scale)
    references the circuit parameter table while symbolic."""

    kind: str
    qubits: tuple
    angle: float | None = None
    param: tuple | None = None
    pauli: str | None = None

    def is_two_qubit(self):
        return len(self.qubits) == 2 and self.kind == "cnot"

    def describe(self):
        where = ",".join(str(q) for q in self.qubits)
        if self.param is not None:
            idx, scale = self.param
            return f"{self.kind}({where}) angle=p{idx}*{scale:g}"
        if self.angle is not None:
            return f"{self.kind}({where}) angle={self.angle:.12g}"
        return f"{self.kind}({where})"


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple
    parameter_count: int = 0

    @property
    def is_bound(self):
        return all(g.param is None for g in self.gates)

    def bind(self, theta):
        """Substitute numeric angles for every symbolic parameter reference."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.parameter_count,):
            raise BindError(
                f"expected {self.parameter_count} parameters, got shape {theta.shape}")
        bound = []
        for g in self.gates:
            if g.param is not None:
                idx, scale = g.param
                bound.append(replace(g, angle=float(theta[idx]) * scale, param=None))
            else:
                bound.append(g)
        return Circuit(self.n_qubits, tuple(bound), self.parameter_count)

    def to_text(self):
        return "\n".join(g.describe() for g in self.gates) + "\n"


def count_resources(circuit):
    """CNOT count, dependency-DAG depth, and parameter count."""
    depth_per_qubit = [0] * circuit.n_qubits
    cnots = 0
    for g in circuit.gates:
        if g.is_two_qubit():
            cnots += 1
        level = max((depth_per_qubit[q] for q in g.qubits), default=0) + 1
        for q in g.qubits:
            depth_per_qubit[q] = level
    return {
        "cnot_count": cnots,
        "depth": max(depth_per_qubit, default=0),
        "parameter_count": circuit.parameter_count,
    }


# ---------------------------------------------------------------------------
# UCCSD construction
# ---------------------------------------------------------------------------

def _dagger(ps):
    out = PauliSum(ps.n_qubits)
    for key, coeff in ps.terms.items():
        out.terms[key] = np.conj(coeff)
    return out


def _excitation_generator(creations, annihilations, n_q):
    """Hermitian G with exp(theta*(T - T+)) = exp(i*theta*G) for the listed
    spin-orbital excitation T."""
    ops = tuple((c, 1) for c in creations) + tuple((a, 0) for a in annihilations)
    t = ladder_product(ops, n_q)
    a_jw = t + (-1.0) * _dagger(t)
    return (-1j * a_jw).hermitian().pruned()


def uccsd_excitations(n_spatial, n_electrons):
    """Spin-adapted singles and doubles with shared spatial amplitudes.

    Returns a list of (label, [(creations, annihilations), ...]) entries,
    one per parameter; single excitations first, then doubles, each block
    lexicographically ordered.
    """
    nocc = n_electrons // 2
    occ = range(nocc)
    virt = range(nocc, n_spatial)
    n_q = 2 * n_spatial

    def so(p, s):
        return spin_orbital_index(p, s, n_spatial)

    entries = []
    for i in occ:
        for a in virt:
            terms = [((so(a, s),), (so(i, s),)) for s in (0, 1)]
            entries.append((f"s_{i}_{a}", terms))

    pair_list = [(i, a) for i in occ for a in virt]
    for idx1, (i, a) in enumerate(pair_list):
        for (j, b) in pair_list[idx1:]:
            terms = []
            for s1 in (0, 1):
                for s2 in (0, 1):
                    c1, c2 = so(a, s1), so(b, s2)
                    a1, a2 = so(j, s2), so(i, s1)
                    if c1 == c2 or a1 == a2:
                        continue
                    terms.append(((c1, c2), (a2, a1)))
            if terms:
                entries.append((f"d_{i}_{a}_{j}_{b}", terms))
    return entries


def _pauli_rotation_gates(string, angle_param):
    """Compile exp(-i*phi/2 * P) into basis changes + CNOT ladder + RZ.

    `angle_param` is (index, scale) so phi = theta[index]*scale at bind time.
    """
    letters = string.letters()
    support = [q for q, c in enumerate(letters) if c != "I"]
    if not support:
        return []
    gates = []
    for q in support:
        if letters[q] == "X":
            gates.append(Gate("h", (q,)))
        elif letters[q] == "Y":
            gates.append(Gate("rx", (q,), angle=np.pi / 2))
    for a, b in zip(support, support[1:]):
        gates.append(Gate("cnot", (a, b)))
    gates.append(Gate("rz", (support[-1],), param=angle_param))
    for a, b in reversed(list(zip(support, support[1:]))):
        gates.append(Gate("cnot", (a, b)))
    for q in reversed(support):
        if letters[q] == "X":
            gates.append(Gate("h", (q,)))
        elif letters[q] == "Y":
            gates.append(Gate("rx", (q,), angle=-np.pi / 2))
    return gates


def uccsd_generators(n_spatial, n_electrons, tapering=None):
    """Per-parameter Hermitian generators G_k with the ansatz unitary
    prod_k exp(i*theta_k*G_k), plus the reference occupation bits on the
    (possibly tapered) register.

    With a tapering map, generator strings leaving the symmetry sector are
    dropped and excitations tapered to nothing are pruned from the
    parameter table.  The strings inside one spin-adapted excitation
    mutually commute, so the compiled rotation product equals exp(i*theta*G)
    exactly.
    """
    n_q = 2 * n_spatial
    hf_bits = hartree_fock_bits(n_electrons, n_q)
    if tapering is not None and len(tapering) > 0:
        reg_bits = taper_bits(hf_bits, tapering)
    else:
        tapering = None
        reg_bits = hf_bits

    labels, generators = [], []
    for label, terms in uccsd_excitations(n_spatial, n_electrons):
        gen = PauliSum(n_q)
        for creations, annihilations in terms:
            gen += _excitation_generator(creations, annihilations, n_q)
        gen = gen.pruned()
        if tapering is not None:
            gen = taper(gen, tapering, strict=False)
        if not gen.non_identity_items():
            continue
        labels.append(label)
        generators.append(gen)
    return reg_bits, generators, labels


def build_uccsd(n_spatial, n_electrons, tapering=None):
    """Hartree-Fock preparation plus one trotter step of UCCSD.

    One parameter per spin-adapted excitation; each Jordan-Wigner string of
    an excitation generator becomes a compiled Pauli rotation with angle
    -2 * coeff * theta (CNOT ladder + RZ + basis changes).
    """
    reg_bits, generators, _ = uccsd_generators(n_spatial, n_electrons, tapering)
    gates = [Gate("x", (q,)) for q, bit in enumerate(reg_bits) if bit]
    for idx, gen in enumerate(generators):
        items = sorted(gen.non_identity_items(), key=lambda t: t[0].key)
        for string, coeff in items:
            gates.extend(_pauli_rotation_gates(string, (idx, -2.0 * float(np.real(coeff)))))
    return Circuit(len(reg_bits), tuple(gates), len(generators))


# ---------------------------------------------------------------------------
# Dense gate matrices (shared by the simulator and the dense oracle)
# ---------------------------------------------------------------------------

def _single_qubit_matrix(gate):
    a = gate.angle
    if gate.kind == "h":
        return _H_MATRIX
    if gate.kind == "x":
        return _X_MATRIX
    if gate.kind == "rx":
        return np.cos(a / 2) * np.eye(2) - 1j * np.sin(a / 2) * _X_MATRIX
    if gate.kind == "ry":
        y = np.array([[0, -1j], [1j, 0]], dtype=complex)
        return np.cos(a / 2) * np.eye(2) - 1j * np.sin(a / 2) * y
    if gate.kind == "rz":
        return np.diag([np.exp(-1j * a / 2), np.exp(1j * a / 2)])
    raise ValueError(f"unknown single-qubit gate {gate.kind}")


def embed_gate_matrix(gate, n_qubits):
    """Dense full-register unitary of one bound gate."""
    if gate.param is not None:
        raise BindError("cannot evaluate an unbound gate")
    if gate.kind == "cnot":
        control, target = gate.qubits
        p0 = np.array([[1, 0], [0, 0]], dtype=complex)
        p1 = np.array([[0, 0], [0, 1]], dtype=complex)
        m0 = np.array([[1.0]], dtype=complex)
        m1 = np.array([[1.0]], dtype=complex)
        for q in range(n_qubits):
            m0 = np.kron(m0, p0 if q == control else np.eye(2))
            m1 = np.kron(m1, p1 if q == control else (_X_MATRIX if q == target else np.eye(2)))
        return m0 + m1
    if gate.kind == "pauli_rot":
        string = PauliString.from_letters(gate.pauli)
        dense = _dense_pauli(string.x, string.z, n_qubits)
        dim = 2 ** n_qubits
        return np.cos(gate.angle / 2) * np.eye(dim) - 1j * np.sin(gate.angle / 2) * dense
    u = _single_qubit_matrix(gate)
    q = gate.qubits[0]
    m = np.array([[1.0]], dtype=complex)
    for k in range(n_qubits):
        m = np.kron(m, u if k == q else np.eye(2))
    return m
