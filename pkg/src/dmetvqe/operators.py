"""Qubit-operator layer: Pauli algebra, fermion-to-qubit mapping, Z2 tapering,
and qubit-wise measurement grouping.

Pauli strings are kept in symplectic form: bit vectors x, z with position k
reading I/X/Z/Y for (0,0)/(1,0)/(0,1)/(1,1), plus a phase in {1, i, -1, -i}.
A string with phase 1 is the plain tensor product of its letters, which is
the normal form used as a PauliSum key; Hermitian sums then have purely real
coefficients.

Spin orbitals are block ordered: qubits 0..n-1 carry the alpha orbitals and
qubits n..2n-1 the beta orbitals of the n spatial orbitals.  Blocked order
makes the spin parities single-block Z strings and is what reproduces the
published measurement-group structure after tapering.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

_LETTERS = {(0, 0): "I", (1, 0): "X", (0, 1): "Z", (1, 1): "Y"}
_BITS = {"I": (0, 0), "X": (1, 0), "Z": (0, 1), "Y": (1, 1)}
_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

COEFF_TOL = 1e-12


class DimensionError(ValueError):
    """Operands act on different qubit counts."""


class TaperingError(ValueError):
    """Inconsistent tapering data (bad sector, non-commuting term in strict mode)."""


class PauliString:
    """Immutable Pauli string in symplectic (x, z) form with a quartic phase."""

    __slots__ = ("x", "z", "k")

    def __init__(self, x, z, phase_power=0):
        self.x = tuple(int(b) for b in x)
        self.z = tuple(int(b) for b in z)
        if len(self.x) != len(self.z):
            raise DimensionError("x and z bit vectors differ in length")
        self.k = phase_power % 4

    @classmethod
    def from_letters(cls, letters):
        bits = [_BITS[c] for c in letters]
        return cls([b[0] for b in bits], [b[1] for b in bits])

    @classmethod
    def identity(cls, n_qubits):
        return cls((0,) * n_qubits, (0,) * n_qubits)

    @property
    def n_qubits(self):
        return len(self.x)

    @property
    def phase(self):
        return 1j ** self.k

    @property
    def key(self):
        return (self.x, self.z)

    def letters(self):
        return "".join(_LETTERS[(xb, zb)] for xb, zb in zip(self.x, self.z))

    def is_identity(self):
        return not any(self.x) and not any(self.z)

    def weight(self):
        return sum(xb | zb for xb, zb in zip(self.x, self.z))

    def commutes(self, other):
        if self.n_qubits != other.n_qubits:
            raise DimensionError("qubit count mismatch")
        form = sum(a & b for a, b in zip(self.x, other.z))
        form += sum(a & b for a, b in zip(self.z, other.x))
        return form % 2 == 0

    def normalized(self):
        """Same letters with phase 1."""
        return PauliString(self.x, self.z, 0)

    def to_matrix(self):
        m = np.array([[complex(self.phase)]])
        for letter in self.letters():
            m = np.kron(m, _MATRICES[letter])
        return m

    def __eq__(self, other):
        return isinstance(other, PauliString) and self.key == other.key and self.k == other.k

    def __hash__(self):
        return hash((self.x, self.z, self.k))

    def __repr__(self):
        pre = {0: "", 1: "i*", 2: "-", 3: "-i*"}[self.k]
        return f"{pre}{self.letters()}"


def _y_count(x, z):
    return sum(a & b for a, b in zip(x, z))


def pauli_mul(a, b):
    """Product of two Pauli strings with exact phase tracking."""
    if a.n_qubits != b.n_qubits:
        raise DimensionError("qubit count mismatch")
    x = tuple(p ^ q for p, q in zip(a.x, b.x))
    z = tuple(p ^ q for p, q in zip(a.z, b.z))
    # Operator form i^k X^x Z^z: commuting Z^za past X^xb costs (-1)^(za.xb),
    # and the Y-letter bookkeeping converts letter phases to operator phases.
    cross = sum(p & q for p, q in zip(a.z, b.x))
    k = a.k + b.k + _y_count(a.x, a.z) + _y_count(b.x, b.z) + 2 * cross - _y_count(x, z)
    return PauliString(x, z, k)


class PauliSum:
    """Weighted sum of phase-normalized Pauli strings on a fixed register."""

    def __init__(self, n_qubits, terms=None):
        self.n_qubits = n_qubits
        self.terms = {}
        self._dense = None
        if isinstance(terms, dict):
            # Internal normal form: {(x_bits, z_bits): coefficient}.
            self.terms = dict(terms)
        elif terms:
            for string, coeff in terms:
                self.add_term(string, coeff)

    @classmethod
    def from_text(cls, text, n_qubits=None):
        """Parse the `<coeff> <letters>` per-line serialization."""
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            coeff_str, letters = line.split()
            entries.append((PauliString.from_letters(letters), float(coeff_str)))
        if n_qubits is None:
            if not entries:
                raise ValueError("cannot infer qubit count from empty text")
            n_qubits = entries[0][0].n_qubits
        return cls(n_qubits, entries)

    def to_text(self):
        lines = []
        for string, coeff in sorted(self.terms.items()):
            letters = "".join(_LETTERS[(xb, zb)] for xb, zb in zip(*string))
            lines.append(f"{_real(coeff)!r} {letters}")
        return "\n".join(lines) + "\n"

    def add_term(self, string, coeff):
        if isinstance(string, str):
            string = PauliString.from_letters(string)
        if string.n_qubits != self.n_qubits:
            raise DimensionError("term width does not match PauliSum register")
        value = complex(coeff) * string.phase
        self.terms[string.key] = self.terms.get(string.key, 0.0) + value
        self._dense = None

    def items(self):
        """Yield (PauliString in normal form, coefficient)."""
        for (x, z), coeff in self.terms.items():
            yield PauliString(x, z), coeff

    def pruned(self, tol=COEFF_TOL):
        out = PauliSum(self.n_qubits)
        for key, coeff in self.terms.items():
            if abs(coeff) > tol:
                out.terms[key] = coeff
        return out

    def hermitian(self, tol=1e-9):
        """Drop negligible imaginary residue and return real coefficients."""
        out = PauliSum(self.n_qubits)
        for key, coeff in self.terms.items():
            if abs(coeff.imag if isinstance(coeff, complex) else 0.0) > tol:
                raise ValueError(f"non-Hermitian coefficient {coeff} on {key}")
            value = coeff.real if isinstance(coeff, complex) else coeff
            if abs(value) > COEFF_TOL:
                out.terms[key] = value
        return out

    @property
    def identity_coeff(self):
        key = ((0,) * self.n_qubits, (0,) * self.n_qubits)
        return _real(self.terms.get(key, 0.0))

    def non_identity_items(self):
        return [(s, c) for s, c in self.items() if not s.is_identity()]

    def __len__(self):
        return len(self.terms)

    def __add__(self, other):
        if self.n_qubits != other.n_qubits:
            raise DimensionError("qubit count mismatch")
        out = PauliSum(self.n_qubits, dict(self.terms))
        for key, coeff in other.terms.items():
            out.terms[key] = out.terms.get(key, 0.0) + coeff
        return out

    def __mul__(self, other):
        if np.isscalar(other):
            out = PauliSum(self.n_qubits)
            for key, coeff in self.terms.items():
                out.terms[key] = coeff * other
            return out
        if self.n_qubits != other.n_qubits:
            raise DimensionError("qubit count mismatch")
        out = PauliSum(self.n_qubits)
        for (xa, za), ca in self.terms.items():
            pa = PauliString(xa, za)
            for (xb, zb), cb in other.terms.items():
                prod = pauli_mul(pa, PauliString(xb, zb))
                out.terms[prod.key] = out.terms.get(prod.key, 0.0) + ca * cb * prod.phase
        return out

    __rmul__ = __mul__

    def to_matrix(self):
        dim = 2 ** self.n_qubits
        m = np.zeros((dim, dim), dtype=complex)
        for string, coeff in self.items():
            m += coeff * _dense_pauli(string.x, string.z, self.n_qubits)
        return m

    def dense_matrix(self):
        """Cached to_matrix; callers must not mutate the sum afterwards."""
        if self._dense is None:
            self._dense = self.to_matrix()
        return self._dense

    def expectation(self, state_matrix):
        return complex(np.trace(state_matrix @ self.to_matrix()))

    def __repr__(self):
        parts = [f"{_real(c):+.6g}*{s.letters()}" for s, c in sorted(self.items(), key=lambda t: t[0].key)]
        return " ".join(parts) if parts else "0"


def _real(coeff):
    return coeff.real if isinstance(coeff, complex) else float(coeff)


@functools.lru_cache(maxsize=65536)
def _dense_pauli_cached(x, z, n_qubits):
    m = np.array([[1.0 + 0j]])
    for xb, zb in zip(x, z):
        m = np.kron(m, _MATRICES[_LETTERS[(xb, zb)]])
    m.setflags(write=False)
    return m


def _dense_pauli(x, z, n_qubits):
    return _dense_pauli_cached(tuple(x), tuple(z), n_qubits)


# ---------------------------------------------------------------------------
# Jordan-Wigner mapping
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=4096)
def _ladder(index, dagger, n_qubits):
    """JW image of a single ladder operator: Z-string times (X -+ iY)/2."""
    zs = [1] * index
    x_string = PauliString(tuple([0] * index + [1] + [0] * (n_qubits - index - 1)),
                           tuple(zs + [0] * (n_qubits - index)))
    y_string = PauliString(tuple([0] * index + [1] + [0] * (n_qubits - index - 1)),
                           tuple(zs + [1] + [0] * (n_qubits - index - 1)))
    out = PauliSum(n_qubits)
    out.add_term(x_string, 0.5)
    out.add_term(y_string, -0.5j if dagger else 0.5j)
    return out


@functools.lru_cache(maxsize=65536)
def ladder_product(ops, n_qubits):
    """JW image of a product of ladder operators.

    `ops` is a tuple of (spin_orbital_index, dagger) pairs, applied left to
    right as written (so ((2, True), (0, False)) is a^dag_2 a_0).
    """
    result = None
    for index, dagger in ops:
        factor = _ladder(index, bool(dagger), n_qubits)
        result = factor if result is None else result * factor
    if result is None:
        result = PauliSum(n_qubits, {PauliString.identity(n_qubits).key: 1.0})
    return result


def spin_orbital_index(spatial, spin, n_spatial):
    """Blocked spin-orbital index: alpha block first, then beta."""
    return spatial + spin * n_spatial


def jordan_wigner(h1, h2=None, e_core=0.0, tol=COEFF_TOL):
    """Map spatial-orbital integrals to a blocked-spin qubit Hamiltonian.

    Accepts an IntegralSet-like object (with h1/h2/e_core attributes) or raw
    tensors in chemists' notation.  The fermionic form is
    sum h_pq a+_ps a_qs + 1/2 sum g_pqrs a+_ps a+_rt a_st a_qs + e_core.
    """
    if hasattr(h1, "h1"):
        ints = h1
        h1, h2, e_core = ints.h1, ints.h2, ints.e_core
    n_spatial = h1.shape[0]
    n_q = 2 * n_spatial
    total = PauliSum(n_q)
    total.add_term(PauliString.identity(n_q), e_core)

    def so(p, spin):
        return spin_orbital_index(p, spin, n_spatial)

    for p in range(n_spatial):
        for q in range(n_spatial):
            if abs(h1[p, q]) <= tol:
                continue
            for spin in (0, 1):
                ops = ((so(p, spin), 1), (so(q, spin), 0))
                total += ladder_product(ops, n_q) * h1[p, q]

    if h2 is not None:
        for p in range(n_spatial):
            for q in range(n_spatial):
                for r in range(n_spatial):
                    for s in range(n_spatial):
                        coeff = h2[p, q, r, s]
                        if abs(coeff) <= tol:
                            continue
                        for sp in (0, 1):
                            for tp in (0, 1):
                                ops = ((so(p, sp), 1), (so(r, tp), 1),
                                       (so(s, tp), 0), (so(q, sp), 0))
                                total += ladder_product(ops, n_q) * (0.5 * coeff)

    return total.hermitian()


def total_number_operator(n_qubits):
    """JW total number operator sum_p (I - Z_p)/2."""
    out = PauliSum(n_qubits)
    out.add_term(PauliString.identity(n_qubits), 0.5 * n_qubits)
    for p in range(n_qubits):
        z = [0] * n_qubits
        z[p] = 1
        out.add_term(PauliString((0,) * n_qubits, tuple(z)), -0.5)
    return out


def hartree_fock_bits(n_electrons, n_qubits):
    """Occupation bitstring of the restricted reference (blocked ordering).

    The lowest n_electrons/2 spatial orbitals are doubly occupied, so the
    first nocc qubits of each spin block read 1.
    """
    if n_electrons > n_qubits:
        raise ValueError("more electrons than spin orbitals")
    if n_electrons % 2 != 0:
        raise ValueError("restricted reference requires an even electron count")
    n_spatial = n_qubits // 2
    nocc = n_electrons // 2
    bits = [0] * n_qubits
    for p in range(nocc):
        bits[spin_orbital_index(p, 0, n_spatial)] = 1
        bits[spin_orbital_index(p, 1, n_spatial)] = 1
    return tuple(bits)


# ---------------------------------------------------------------------------
# Z2 symmetry tapering
# ---------------------------------------------------------------------------

@dataclass
class TaperingMap:
    """Symmetry generators, the measurement sector, and the Clifford recipe."""

    n_qubits: int
    generators: list = field(default_factory=list)
    sector: list = field(default_factory=list)
    pivot_ops: list = field(default_factory=list)
    removed_qubits: list = field(default_factory=list)

    @property
    def clifford(self):
        """(tau, sigma) pairs; each basis change is (sigma + tau)/sqrt(2)."""
        return list(zip(self.generators, self.pivot_ops))

    def __len__(self):
        return len(self.generators)

    def validate(self):
        if not (len(self.generators) == len(self.sector) == len(self.pivot_ops)
                == len(self.removed_qubits)):
            raise TaperingError("generator/sector/pivot lists differ in length")
        if any(s not in (-1, 1) for s in self.sector):
            raise TaperingError("sector eigenvalues must be +-1")
        for i, g in enumerate(self.generators):
            for j, h in enumerate(self.generators):
                if i < j and not g.commutes(h):
                    raise TaperingError("generators must mutually commute")
        return self


def _gf2_rref(matrix):
    m = matrix.copy() % 2
    rows, cols = m.shape
    pivot_cols = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        pivot = None
        for rr in range(r, rows):
            if m[rr, c]:
                pivot = rr
                break
        if pivot is None:
            continue
        m[[r, pivot]] = m[[pivot, r]]
        for rr in range(rows):
            if rr != r and m[rr, c]:
                m[rr] ^= m[r]
        pivot_cols.append(c)
        r += 1
    return m[:r], pivot_cols


def _gf2_nullspace(matrix):
    if matrix.size == 0:
        n = matrix.shape[1]
        return [np.eye(n, dtype=int)[i] for i in range(n)]
    rref, pivot_cols = _gf2_rref(matrix)
    cols = matrix.shape[1]
    free_cols = [c for c in range(cols) if c not in pivot_cols]
    basis = []
    for fc in free_cols:
        vec = np.zeros(cols, dtype=int)
        vec[fc] = 1
        for row, pc in zip(rref, pivot_cols):
            if row[fc]:
                vec[pc] = 1
        basis.append(vec)
    return basis


def _gf2_independent(vectors, candidate):
    """True if candidate is outside the GF(2) span of vectors."""
    if not vectors:
        return candidate.any()
    stack = np.vstack(vectors + [candidate]) % 2
    rank_with = len(_gf2_rref(stack)[1])
    rank_without = len(_gf2_rref(np.vstack(vectors) % 2)[1])
    return rank_with > rank_without


def find_z2_symmetries(hamiltonian, n_electrons=None, hf_bits=None):
    """Find Z2 symmetry generators of a PauliSum and fix their sector.

    Generators span the kernel of the terms' symplectic parity-check matrix
    over GF(2); the basis is post-selected to be mutually commuting, with
    Z-type symmetries preferred.  The sector is read off the Hartree-Fock
    computational state when the generator is diagonal there, otherwise by
    picking the sector whose tapered spectrum retains the input ground
    energy (dense check, small registers only).
    """
    n_q = hamiltonian.n_qubits
    terms = [s for s, _ in hamiltonian.items() if not s.is_identity()]
    if not terms:
        raise ValueError("cannot find symmetries of an empty Hamiltonian")

    parity = np.zeros((len(terms), 2 * n_q), dtype=int)
    for i, t in enumerate(terms):
        parity[i, :n_q] = t.z
        parity[i, n_q:] = t.x
    kernel = _gf2_nullspace(parity)

    # Enumerate the whole (small) symmetry group so generator selection is
    # canonical rather than an accident of the nullspace basis.
    if len(kernel) <= 12:
        members = set()
        for mask in range(1, 2 ** len(kernel)):
            vec = np.zeros(2 * n_q, dtype=int)
            for bit, basis_vec in enumerate(kernel):
                if (mask >> bit) & 1:
                    vec ^= basis_vec
            members.add(tuple(vec))
        pool = [np.array(v) for v in members]
    else:
        pool = kernel

    candidates = [PauliString(tuple(v[:n_q]), tuple(v[n_q:])) for v in pool]
    candidates = [c for c in candidates if not c.is_identity()]
    # Prefer Z-only, then light, then lexicographically early generators.
    candidates.sort(key=lambda s: (any(s.x), s.weight(), s.letters()))

    chosen = []
    chosen_vecs = []
    for cand in candidates:
        vec = np.array(cand.z + cand.x, dtype=int)
        if not _gf2_independent(chosen_vecs, vec):
            continue
        if any(not cand.commutes(g) for g in chosen):
            continue
        chosen.append(cand)
        chosen_vecs.append(vec)

    generators, pivots, removed = _assign_pivots(chosen, n_q)
    tmap = TaperingMap(n_q, generators, [1] * len(generators), pivots, removed)
    if not generators:
        return tmap

    if hf_bits is None and n_electrons is not None:
        hf_bits = hartree_fock_bits(n_electrons, n_q)
    tmap.sector = _select_sector(hamiltonian, tmap, hf_bits)
    return tmap.validate()


def _assign_pivots(generators, n_q):
    """Pick a distinct qubit and single-qubit Pauli per generator.

    The pivot must anticommute with its own generator and commute with every
    other one.  Higher qubit indices are preferred so that low qubits (the
    occupied reference orbitals) survive tapering.  Generators admitting no
    pivot are discarded.
    """
    kept, pivots, removed = [], [], []
    remaining = list(generators)
    while remaining:
        progress = False
        for gen in list(remaining):
            others = [g for g in remaining if g is not gen] + kept
            found = None
            for q in reversed(range(n_q)):
                if q in removed:
                    continue
                for letter in ("X", "Z", "Y"):
                    sigma = _single(letter, q, n_q)
                    if sigma.commutes(gen):
                        continue
                    if all(sigma.commutes(o) for o in others):
                        found = (q, sigma)
                        break
                if found:
                    break
            if found:
                kept.append(gen)
                pivots.append(found[1])
                removed.append(found[0])
                remaining.remove(gen)
                progress = True
        if not progress:
            break  # leftover generators are unpivotable; drop them
    order = sorted(range(len(kept)), key=lambda i: removed[i])
    return ([kept[i] for i in order], [pivots[i] for i in order],
            [removed[i] for i in order])


def _single(letter, qubit, n_q):
    x, z = [0] * n_q, [0] * n_q
    xb, zb = _BITS[letter]
    x[qubit], z[qubit] = xb, zb
    return PauliString(tuple(x), tuple(z))


def _select_sector(hamiltonian, tmap, hf_bits):
    sector = []
    unresolved = []
    for i, gen in enumerate(tmap.generators):
        value = None
        if hf_bits is not None and not any(gen.x):
            parity = sum(b for b, zb in zip(hf_bits, gen.z) if zb) % 2
            value = -1 if parity else 1
        if value is None:
            unresolved.append(i)
            value = 1
        sector.append(value)
    if unresolved:
        sector = _sector_by_ground_energy(hamiltonian, tmap, sector, unresolved)
    return sector


def _sector_by_ground_energy(hamiltonian, tmap, sector, unresolved):
    if hamiltonian.n_qubits > 12:
        raise TaperingError("cannot brute-force a sector on more than 12 qubits")
    target = np.min(np.linalg.eigvalsh(hamiltonian.to_matrix()))
    best = None
    for mask in range(2 ** len(unresolved)):
        trial = list(sector)
        for bit, idx in enumerate(unresolved):
            trial[idx] = -1 if (mask >> bit) & 1 else 1
        trial_map = TaperingMap(tmap.n_qubits, tmap.generators, trial,
                                tmap.pivot_ops, tmap.removed_qubits)
        tapered = taper(hamiltonian, trial_map)
        low = np.min(np.linalg.eigvalsh(tapered.to_matrix()))
        if best is None or low < best[0]:
            best = (low, trial)
        if abs(low - target) < 1e-9:
            return trial
    return best[1]


def _conjugate_by_clifford(string, coeff, clifford_pairs):
    """Conjugate coeff*string by each U = (sigma + tau)/sqrt(2) in turn."""
    acc = {string.key: coeff * string.phase}
    for tau, sigma in clifford_pairs:
        nxt = {}
        for (x, z), c in acc.items():
            p = PauliString(x, z)
            for left in (sigma, tau):
                for right in (sigma, tau):
                    prod = pauli_mul(pauli_mul(left, p), right)
                    value = 0.5 * c * prod.phase
                    nxt[prod.key] = nxt.get(prod.key, 0.0) + value
        acc = {k: v for k, v in nxt.items() if abs(v) > COEFF_TOL}
    return acc


def taper(hamiltonian, tmap, strict=True):
    """Project a PauliSum onto the tapering map's symmetry sector.

    Terms anticommuting with a generator map outside the sector; in strict
    mode they raise, otherwise they are dropped (their sector expectation is
    exactly zero, which is the correct treatment for observables).
    """
    if len(tmap) == 0:
        return hamiltonian
    tmap.validate()
    if tmap.n_qubits != hamiltonian.n_qubits:
        raise DimensionError("tapering map width does not match Hamiltonian")

    removed = set(tmap.removed_qubits)
    kept = [q for q in range(tmap.n_qubits) if q not in removed]
    pivot_letter = {}
    for q, sigma in zip(tmap.removed_qubits, tmap.pivot_ops):
        pivot_letter[q] = sigma.letters()[q]

    out = PauliSum(len(kept))
    for string, coeff in hamiltonian.items():
        if any(not string.commutes(g) for g in tmap.generators):
            if strict:
                raise TaperingError(
                    f"term {string.letters()} anticommutes with a symmetry generator")
            continue
        conj = _conjugate_by_clifford(string, coeff, tmap.clifford)
        for (x, z), value in conj.items():
            letters = PauliString(x, z).letters()
            factor = value
            ok = True
            for idx, q in enumerate(tmap.removed_qubits):
                letter = letters[q]
                if letter == "I":
                    continue
                if letter == pivot_letter[q]:
                    factor *= tmap.sector[idx]
                else:
                    ok = False
                    break
            if not ok:
                if strict:
                    raise TaperingError(
                        f"conjugated term {letters} is not diagonal on removed qubits")
                continue
            reduced = PauliString.from_letters("".join(letters[q] for q in kept))
            out.add_term(reduced, factor)
    return out.hermitian()


def taper_bits(bits, tmap):
    """Restrict a computational occupation bitstring to the kept qubits.

    Valid when every kept-qubit Z is untouched by the Clifford (true for
    Z-type generators with single-qubit pivots), which covers the molecular
    Hamiltonians handled here.
    """
    if any(any(g.x) for g in tmap.generators):
        raise TaperingError("bitstring tapering requires Z-type generators")
    removed = set(tmap.removed_qubits)
    return tuple(b for q, b in enumerate(bits) if q not in removed)


# ---------------------------------------------------------------------------
# Measurement grouping
# ---------------------------------------------------------------------------

@dataclass
class MeasurementGroup:
    """Pauli strings sharing a single-basis measurement circuit."""

    n_qubits: int
    strings: list
    coeffs: list
    basis: str  # per-qubit letter; 'I' marks an unconstrained position

    def covers(self, string):
        return all(b == "I" or s == "I" or s == b
                   for s, b in zip(string.letters(), self.basis))


def _qubitwise_compatible(a, b):
    return all(la == "I" or lb == "I" or la == lb
               for la, lb in zip(a.letters(), b.letters()))


_GROUPING_RANK = {"I": 0, "Z": 1, "X": 2, "Y": 3}


def group_qubitwise(hamiltonian):
    """Greedy first-fit grouping of non-identity terms into qubit-wise
    compatible measurement groups.

    Strings are inserted in diagonal-first canonical order (per-position
    letter rank I < Z < X < Y), so Z-basis terms seed the first group and
    progressively off-diagonal strings open new ones.  The order is fixed by
    the strings alone, which keeps the partition stable across geometries
    and coefficient changes.
    """
    items = hamiltonian.non_identity_items()
    items.sort(key=lambda t: tuple(_GROUPING_RANK[c] for c in t[0].letters()))
    groups = []
    for string, coeff in items:
        placed = False
        for grp in groups:
            if grp.covers(string):
                grp.strings.append(string)
                grp.coeffs.append(_real(coeff))
                grp.basis = "".join(
                    s if s != "I" else b
                    for s, b in zip(string.letters(), grp.basis))
                placed = True
                break
        if not placed:
            groups.append(MeasurementGroup(
                hamiltonian.n_qubits, [string], [_real(coeff)], string.letters()))
    return groups
