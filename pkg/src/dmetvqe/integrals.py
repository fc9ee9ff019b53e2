"""FCIDUMP ingestion and the restricted mean field used by the embedding driver.

Integrals are expected in an orthonormal orbital basis (the fixtures are
Lowdin-orthonormalized), so the SCF below never touches an overlap matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FcidumpFormatError(ValueError):
    """Malformed FCIDUMP content (bad header, bad line, missing fields)."""


class FcidumpBoundsError(IndexError):
    """An orbital index in the FCIDUMP body is outside 1..NORB."""


class ScfConvergenceError(RuntimeError):
    """SCF failed to converge; carries the last commutator norm and energy delta."""

    def __init__(self, msg, energy_delta=None, commutator_norm=None):
        super().__init__(msg)
        self.energy_delta = energy_delta
        self.commutator_norm = commutator_norm


@dataclass
class IntegralSet:
    """One/two-electron integrals plus the core constant, chemists' notation.

    h2[p, q, r, s] holds (pq|rs); both tensors are in hartree and carry the
    usual real-orbital permutational symmetries.
    """

    n_orbitals: int
    n_electrons: int
    h1: np.ndarray
    h2: np.ndarray
    e_core: float
    metadata: dict = field(default_factory=dict)

    def validate(self, tol=1e-12):
        if self.n_electrons % 2 != 0:
            raise ValueError("restricted mean field requires an even electron count")
        if self.h1.shape != (self.n_orbitals,) * 2:
            raise ValueError("h1 shape does not match n_orbitals")
        if self.h2.shape != (self.n_orbitals,) * 4:
            raise ValueError("h2 shape does not match n_orbitals")
        if np.max(np.abs(self.h1 - self.h1.T)) > tol:
            raise ValueError("h1 is not symmetric")
        g = self.h2
        for perm in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
            if np.max(np.abs(g - g.transpose(perm))) > tol:
                raise ValueError(f"h2 violates permutational symmetry {perm}")
        return self


@dataclass
class MeanField:
    """Converged restricted mean field in the working orthonormal basis."""

    orbital_coeffs: np.ndarray
    orbital_energies: np.ndarray
    rdm1: np.ndarray
    scf_energy: float

    @property
    def n_orbitals(self):
        return self.rdm1.shape[0]


def parse_fcidump(text):
    """Parse FCIDUMP text into an :class:`IntegralSet`.

    Accepts the namelist header (NORB/NELEC required), then one value and
    four 1-based indices per line.  Two-electron entries are expanded to all
    eight symmetry-equivalent index orders; `value 0 0 0 0` sets the core
    constant and `value p q 0 0` a one-electron element.
    """
    lines = text.splitlines()
    header_end = None
    header_parts = []
    for i, line in enumerate(lines):
        header_parts.append(line)
        if "&END" in line.upper() or "/" == line.strip():
            header_end = i
            break
    if header_end is None:
        raise FcidumpFormatError("no &END terminator found in FCIDUMP header")

    header = " ".join(header_parts).upper().replace("&FCI", " ").replace("&END", " ")
    fields = {}
    for chunk in header.replace(",", " , ").split(","):
        if "=" in chunk:
            key, _, value = chunk.partition("=")
            fields[key.strip()] = value.strip().split()[0] if value.strip() else ""
    if "NORB" not in fields:
        raise FcidumpFormatError("FCIDUMP header is missing NORB")
    if "NELEC" not in fields:
        raise FcidumpFormatError("FCIDUMP header is missing NELEC")
    try:
        n_orb = int(fields["NORB"])
        n_elec = int(fields["NELEC"])
    except ValueError as exc:
        raise FcidumpFormatError(f"non-integer NORB/NELEC in header: {exc}") from exc

    h1 = np.zeros((n_orb, n_orb))
    h2 = np.zeros((n_orb, n_orb, n_orb, n_orb))
    e_core = 0.0

    for lineno, line in enumerate(lines[header_end + 1:], start=header_end + 2):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 5:
            raise FcidumpFormatError(f"line {lineno}: expected value + 4 indices, got {line!r}")
        try:
            value = float(tokens[0])
            p, q, r, s = (int(t) for t in tokens[1:])
        except ValueError as exc:
            raise FcidumpFormatError(f"line {lineno}: {exc}") from exc
        for idx in (p, q, r, s):
            if idx < 0 or idx > n_orb:
                raise FcidumpBoundsError(f"line {lineno}: index {idx} outside 0..{n_orb}")
        if p == q == r == s == 0:
            e_core = value
        elif r == s == 0:
            if p == 0 or q == 0:
                raise FcidumpFormatError(f"line {lineno}: one-electron entry with zero index")
            h1[p - 1, q - 1] = value
            h1[q - 1, p - 1] = value
        else:
            if 0 in (p, q, r, s):
                raise FcidumpFormatError(f"line {lineno}: two-electron entry with zero index")
            i, j, k, l = p - 1, q - 1, r - 1, s - 1
            for a, b, c, d in (
                (i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
                (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i),
            ):
                h2[a, b, c, d] = value

    ints = IntegralSet(n_orb, n_elec, h1, h2, e_core)
    return ints.validate()


def serialize_fcidump(ints):
    """Render an IntegralSet back to FCIDUMP text (unique entries only).

    Values are written with repr-exact precision so parse -> serialize ->
    parse reproduces every tensor element bit for bit.
    """
    n = ints.n_orbitals
    lines = [f"&FCI NORB={n},NELEC={ints.n_electrons},MS2=0,"]
    lines.append(" ORBSYM=" + ",".join(["1"] * n) + ",")
    lines.append(" ISYM=1,")
    lines.append("&END")
    seen = set()
    for p in range(n):
        for q in range(p + 1):
            for r in range(n):
                for s in range(r + 1):
                    if (p, q) < (r, s) or (p, q, r, s) in seen:
                        continue
                    seen.add((p, q, r, s))
                    val = ints.h2[p, q, r, s]
                    if val != 0.0:
                        lines.append(f"{float(val)!r} {p + 1} {q + 1} {r + 1} {s + 1}")
    for p in range(n):
        for q in range(p + 1):
            if ints.h1[p, q] != 0.0:
                lines.append(f"{float(ints.h1[p, q])!r} {p + 1} {q + 1} 0 0")
    lines.append(f"{float(ints.e_core)!r} 0 0 0 0")
    return "\n".join(lines) + "\n"


def load_fcidump(path, **metadata):
    with open(path) as fh:
        ints = parse_fcidump(fh.read())
    ints.metadata = {"source": str(path), **metadata}
    return ints


def coulomb_exchange(h2, rdm1):
    """Coulomb and exchange matrices for a spin-summed density, chemists' notation."""
    j = np.einsum("pqrs,rs->pq", h2, rdm1, optimize=True)
    k = np.einsum("psrq,rs->pq", h2, rdm1, optimize=True)
    return j, k


def restricted_fock(h1, h2, rdm1):
    j, k = coulomb_exchange(h2, rdm1)
    return h1 + j - 0.5 * k


def run_rhf(ints, max_iter=2000, tol=1e-10, mixing=0.5):
    """Damped Roothaan iteration in the orthonormal working basis.

    Convergence is the Fock/density commutator norm max|FD - DF| < tol.
    Returns a :class:`MeanField`; raises :class:`ScfConvergenceError` with
    the last energy delta if max_iter is exhausted.
    """
    ints.validate()
    n = ints.n_orbitals
    nocc = ints.n_electrons // 2
    if ints.n_electrons > 2 * n:
        raise ValueError("more electrons than spin orbitals")

    def energy(d, f):
        return 0.5 * np.einsum("pq,pq->", d, ints.h1 + f) + ints.e_core

    # Core-Hamiltonian guess.
    _, c = np.linalg.eigh(ints.h1)
    d = 2.0 * c[:, :nocc] @ c[:, :nocc].T
    e_old = energy(d, restricted_fock(ints.h1, ints.h2, d))
    last_delta = np.inf
    for _ in range(max_iter):
        f = restricted_fock(ints.h1, ints.h2, d)
        comm = np.max(np.abs(f @ d - d @ f))
        if comm < tol:
            # Rebuild the density from the converged Fock so the returned
            # rdm1 is exactly idempotent, free of damping residue.
            eps, c = np.linalg.eigh(f)
            d = 2.0 * c[:, :nocc] @ c[:, :nocc].T
            f = restricted_fock(ints.h1, ints.h2, d)
            return MeanField(c, eps, d, energy(d, f))
        eps, c = np.linalg.eigh(f)
        d_new = 2.0 * c[:, :nocc] @ c[:, :nocc].T
        d = mixing * d + (1.0 - mixing) * d_new
        e_new = energy(d, restricted_fock(ints.h1, ints.h2, d))
        last_delta = abs(e_new - e_old)
        e_old = e_new
    raise ScfConvergenceError(
        f"RHF not converged after {max_iter} iterations (|dE| = {last_delta:.3e})",
        energy_delta=last_delta,
        commutator_norm=comm,
    )
