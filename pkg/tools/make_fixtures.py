"""Generate the checked-in FCIDUMP fixtures for hydrogen chains.

Computes STO-3G integrals for linear H_n chains from first principles
(s-type Gaussians only, so overlap/kinetic/attraction/repulsion reduce to
closed forms plus the Boys F0 function), symmetrically orthonormalizes the
basis (Lowdin), and writes the resulting one/two-electron integrals in
FCIDUMP format.  An atomic-orbital-basis RHF (generalized eigenproblem,
no orthonormal-basis shortcut) is run per geometry and its energy stored
next to the fixtures as an independent mean-field reference.

Run from the repository root:

    python tools/make_fixtures.py

Outputs land in fixtures/<molecule>/d<distance>.fcidump and a
scf_reference.csv per molecule.  Fixtures are frozen; rerun only to
regenerate from scratch.
"""

import math
import os

import numpy as np

ANGSTROM_TO_BOHR = 1.0 / 0.529177210903

# STO-3G hydrogen 1s contraction (exponents, contraction coefficients).
H_EXPONENTS = np.array([3.42525091, 0.62391373, 0.16885540])
H_COEFFS = np.array([0.15432897, 0.53532814, 0.44463454])


def boys_f0(t):
    if t < 1e-12:
        return 1.0 - t / 3.0
    return 0.5 * math.sqrt(math.pi / t) * math.erf(math.sqrt(t))


def s_overlap(a, b, ra, rb):
    p = a + b
    ab2 = float(np.dot(ra - rb, ra - rb))
    return (math.pi / p) ** 1.5 * math.exp(-a * b / p * ab2)


def s_kinetic(a, b, ra, rb):
    p = a + b
    ab2 = float(np.dot(ra - rb, ra - rb))
    return a * b / p * (3.0 - 2.0 * a * b / p * ab2) * s_overlap(a, b, ra, rb)


def s_nuclear(a, b, ra, rb, rc):
    p = a + b
    ab2 = float(np.dot(ra - rb, ra - rb))
    rp = (a * ra + b * rb) / p
    pc2 = float(np.dot(rp - rc, rp - rc))
    return -2.0 * math.pi / p * math.exp(-a * b / p * ab2) * boys_f0(p * pc2)


def s_repulsion(a, b, c, d, ra, rb, rc, rd):
    p = a + b
    q = c + d
    ab2 = float(np.dot(ra - rb, ra - rb))
    cd2 = float(np.dot(rc - rd, rc - rd))
    rp = (a * ra + b * rb) / p
    rq = (c * rc + d * rd) / q
    pq2 = float(np.dot(rp - rq, rp - rq))
    pref = 2.0 * math.pi ** 2.5 / (p * q * math.sqrt(p + q))
    return pref * math.exp(-a * b / p * ab2 - c * d / q * cd2) * boys_f0(p * q / (p + q) * pq2)


def contracted_basis(centers):
    """One normalized STO-3G 1s contraction per center."""
    basis = []
    for r in centers:
        prims = []
        for alpha, coeff in zip(H_EXPONENTS, H_COEFFS):
            norm = (2.0 * alpha / math.pi) ** 0.75
            prims.append((alpha, coeff * norm, r))
        basis.append(prims)
    return basis


def ao_integrals(centers):
    basis = contracted_basis(centers)
    n = len(basis)
    s = np.zeros((n, n))
    t = np.zeros((n, n))
    v = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            for ai, ci, ri in basis[i]:
                for aj, cj, rj in basis[j]:
                    s[i, j] += ci * cj * s_overlap(ai, aj, ri, rj)
                    t[i, j] += ci * cj * s_kinetic(ai, aj, ri, rj)
                    for rc in centers:
                        v[i, j] += ci * cj * s_nuclear(ai, aj, ri, rj, rc)
    g = np.zeros((n, n, n, n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    acc = 0.0
                    for ai, ci, ri in basis[i]:
                        for aj, cj, rj in basis[j]:
                            for ak, ck, rk in basis[k]:
                                for al, cl, rl in basis[l]:
                                    acc += ci * cj * ck * cl * s_repulsion(
                                        ai, aj, ak, al, ri, rj, rk, rl)
                    g[i, j, k, l] = acc
    return s, t + v, g


def nuclear_repulsion(centers):
    e = 0.0
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            e += 1.0 / float(np.linalg.norm(centers[i] - centers[j]))
    return e


def lowdin_orthonormalize(s, h, g):
    eigs, vecs = np.linalg.eigh(s)
    x = vecs @ np.diag(eigs ** -0.5) @ vecs.T
    h_oao = x.T @ h @ x
    g_oao = np.einsum("pi,qj,rk,sl,pqrs->ijkl", x, x, x, x, g, optimize=True)
    return h_oao, g_oao


def ao_rhf(s, h, g, n_elec, e_nuc, max_iter=5000, tol=1e-11, mixing=0.5, shift=0.3):
    """Restricted HF solved in the raw AO basis via the generalized eigenproblem.

    Density damping plus a virtual-orbital level shift keeps stretched
    geometries from oscillating; the shift leaves the fixed point unchanged.
    """
    import scipy.linalg

    n = h.shape[0]
    nocc = n_elec // 2
    d = np.zeros((n, n))
    for _ in range(max_iter):
        j = np.einsum("pqrs,rs->pq", g, d, optimize=True)
        k = np.einsum("psrq,rs->pq", g, d, optimize=True)
        f = h + j - 0.5 * k
        # Shift the virtual manifold up: F + shift*(S - S D S / 2).
        f_shifted = f + shift * (s - 0.5 * s @ d @ s)
        _, c = scipy.linalg.eigh(f_shifted, s)
        d_new = 2.0 * c[:, :nocc] @ c[:, :nocc].T
        if np.max(np.abs(d_new - d)) < tol:
            e = 0.5 * np.einsum("pq,pq->", d_new, h + f) + e_nuc
            return e
        d = mixing * d + (1.0 - mixing) * d_new
    raise RuntimeError("AO-basis RHF did not converge")


def write_fcidump(path, h, g, e_core, n_elec, tol=1e-14):
    n = h.shape[0]
    lines = [f"&FCI NORB={n},NELEC={n_elec},MS2=0,"]
    lines.append(" ORBSYM=" + ",".join(["1"] * n) + ",")
    lines.append(" ISYM=1,")
    lines.append("&END")
    # Unique two-electron entries under the 8-fold permutational symmetry.
    seen = set()
    for p in range(n):
        for q in range(p + 1):
            for r in range(n):
                for s_ in range(r + 1):
                    if (p, q) < (r, s_):
                        continue
                    key = (p, q, r, s_)
                    if key in seen:
                        continue
                    seen.add(key)
                    val = g[p, q, r, s_]
                    if abs(val) > tol:
                        lines.append(f"{val:23.16e} {p + 1:3d} {q + 1:3d} {r + 1:3d} {s_ + 1:3d}")
    for p in range(n):
        for q in range(p + 1):
            if abs(h[p, q]) > tol:
                lines.append(f"{h[p, q]:23.16e} {p + 1:3d} {q + 1:3d}   0   0")
    lines.append(f"{e_core:23.16e}   0   0   0   0")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def chain_centers(n_atoms, spacing_angstrom):
    d = spacing_angstrom * ANGSTROM_TO_BOHR
    return [np.array([0.0, 0.0, i * d]) for i in range(n_atoms)]


def generate(root):
    systems = {
        "h2": (2, [0.735]),
        "h4": (4, [1.0, 1.25, 1.3, 1.5, 1.6, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0]),
    }
    for name, (n_atoms, distances) in systems.items():
        outdir = os.path.join(root, name)
        os.makedirs(outdir, exist_ok=True)
        scf_rows = ["distance,e_rhf_ao_basis"]
        for dist in distances:
            centers = chain_centers(n_atoms, dist)
            s, h_ao, g_ao = ao_integrals(centers)
            e_nuc = nuclear_repulsion(centers)
            h, g = lowdin_orthonormalize(s, h_ao, g_ao)
            label = f"{dist:.2f}" if name == "h4" else f"{dist:.3f}"
            path = os.path.join(outdir, f"d{label}.fcidump")
            write_fcidump(path, h, g, e_nuc, n_atoms)
            e_rhf = ao_rhf(s, h_ao, g_ao, n_atoms, e_nuc)
            scf_rows.append(f"{label},{e_rhf:.12f}")
            print(f"{path}: e_nuc={e_nuc:.10f}  e_rhf={e_rhf:.10f}")
        with open(os.path.join(outdir, "scf_reference.csv"), "w") as fh:
            fh.write("\n".join(scf_rows) + "\n")


if __name__ == "__main__":
    repo_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    generate(os.path.join(repo_root, "fixtures"))
