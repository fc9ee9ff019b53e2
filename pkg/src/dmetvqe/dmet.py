"""Embedding engine: Schmidt bath construction with optional bath
truncation, embedded Hamiltonians with democratic energy partitioning,
chemical-potential fitting over embedding cycles, and RDM measurement
through a noisy or noiseless circuit backend.

Each fragment is solved in its own canonical (embedding-space RHF) orbital
basis; correlated RDMs are rotated back to the embedding basis before the
energy assembly.  Fragment energies follow the democratic partitioning
rule: one-body contractions weighted 1/4 over row/column fragment
restrictions of (h + h_with_core), two-body weighted 1/8 over the four
single-index fragment restrictions, summed with the bare nuclear constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import circuits, integrals, oracle, simulator, vqe
from .operators import (PauliSum, group_qubitwise, jordan_wigner,
                        ladder_product, find_z2_symmetries, taper,
                        spin_orbital_index)


class EmbeddingConsistencyError(RuntimeError):
    """Projected mean-field electron count is too far from an integer."""


class FragmentationError(ValueError):
    """Fragments overlap or fail to cover every orbital."""


@dataclass
class FragmentSpec:
    orbital_indices: list
    label: str = ""

    def __post_init__(self):
        self.orbital_indices = list(self.orbital_indices)
        if not self.label:
            self.label = "f" + "_".join(str(i) for i in self.orbital_indices)

    def __len__(self):
        return len(self.orbital_indices)


def validate_fragments(fragments, n_orbitals):
    seen = []
    for frag in fragments:
        for p in frag.orbital_indices:
            if p < 0 or p >= n_orbitals:
                raise FragmentationError(f"orbital index {p} out of range")
            if p in seen:
                raise FragmentationError(f"orbital {p} appears in two fragments")
            seen.append(p)
    if len(seen) != n_orbitals:
        missing = sorted(set(range(n_orbitals)) - set(seen))
        raise FragmentationError(f"orbitals {missing} belong to no fragment")


@dataclass
class EmbeddingProblem:
    """Fragment plus retained bath, embedded tensors, and the mu in force."""

    fragment: FragmentSpec
    bath_coeffs: np.ndarray        # n_orbitals x n_bath, environment support
    bath_scores: np.ndarray        # descending over retained orbitals
    env_occupations: np.ndarray    # all environment eigenvalues, score order
    projector: np.ndarray          # n_orbitals x n_emb_orbitals
    core_density: np.ndarray
    n_emb_orbitals: int = 0
    n_emb_electrons: int = 0
    chemical_potential: float = 0.0
    h_bare: np.ndarray | None = None
    v_core: np.ndarray | None = None
    g_emb: np.ndarray | None = None
    e_const: float = 0.0

    @property
    def n_qubits(self):
        return 2 * self.n_emb_orbitals


def build_bath(mf, fragment, bath_count=None, score_tol=1e-6):
    """Schmidt bath from the mean-field density.

    Environment eigenvectors of the spin-summed rdm1 are scored by their
    occupation entanglement s = min(lambda, 2 - lambda).  Automatic mode
    keeps every orbital with s > score_tol; explicit mode keeps the
    bath_count highest scores (warning via fewer retained when not enough
    entangled orbitals exist).  Dropped environment orbitals are assigned
    to the doubly-occupied core when their occupation rounds to 2.
    """
    n = mf.n_orbitals
    frag_idx = list(fragment.orbital_indices)
    env_idx = [p for p in range(n) if p not in frag_idx]
    if env_idx:
        d_env = mf.rdm1[np.ix_(env_idx, env_idx)]
        lam, vec = np.linalg.eigh(d_env)
        scores = np.minimum(lam, 2.0 - lam)
        order = np.argsort(-scores, kind="stable")
        lam, vec, scores = lam[order], vec[:, order], scores[order]
    else:
        lam = np.zeros(0)
        vec = np.zeros((0, 0))
        scores = np.zeros(0)

    if bath_count is None:
        keep = int(np.sum(scores > score_tol))
    else:
        keep = min(int(bath_count), len(env_idx))

    bath = np.zeros((n, keep))
    for i in range(keep):
        bath[env_idx, i] = vec[:, i]

    core = np.zeros((n, n))
    n_core = 0
    for i in range(keep, len(env_idx)):
        if lam[i] >= 1.0:
            v = np.zeros(n)
            v[env_idx] = vec[:, i]
            core += 2.0 * np.outer(v, v)
            n_core += 1

    n_emb = len(frag_idx) + keep
    projector = np.zeros((n, n_emb))
    for i, p in enumerate(frag_idx):
        projector[p, i] = 1.0
    projector[:, len(frag_idx):] = bath

    return EmbeddingProblem(
        fragment=fragment,
        bath_coeffs=bath,
        bath_scores=scores[:keep],
        env_occupations=lam,
        projector=projector,
        core_density=core,
        n_emb_orbitals=n_emb,
        n_emb_electrons=int(mf.rdm1.trace().round()) - 2 * n_core,
    )


def build_embedded_hamiltonian(ints, mf, emb, mu=0.0, consistency_tol=0.3):
    """Project integrals into fragment + bath, folding core electrons into
    the one-body potential and the constant; -mu lands on the fragment
    diagonal of the solver Hamiltonian only."""
    c = emb.projector
    h_bare = c.T @ ints.h1 @ c
    j, k = integrals.coulomb_exchange(ints.h2, emb.core_density)
    v_core = c.T @ (j - 0.5 * k) @ c
    g_emb = np.einsum("pi,qj,rk,sl,pqrs->ijkl", c, c, c, c, ints.h2, optimize=True)
    e_core_elec = (np.einsum("pq,pq->", emb.core_density, ints.h1)
                   + 0.5 * np.einsum("pq,pq->", emb.core_density, j - 0.5 * k))
    e_const = ints.e_core + e_core_elec

    n_float = float(np.trace(c.T @ mf.rdm1 @ c))
    n_emb = emb.n_emb_electrons
    if abs(n_float - n_emb) > consistency_tol:
        raise EmbeddingConsistencyError(
            f"projected electron count {n_float:.3f} is {abs(n_float - n_emb):.3f} "
            f"away from the assigned count {n_emb}")

    return replace(emb, h_bare=h_bare, v_core=v_core, g_emb=g_emb,
                   e_const=e_const, chemical_potential=mu)


def solver_integrals(emb):
    """Embedding-basis solver tensors with the chemical potential applied."""
    h = emb.h_bare + emb.v_core
    h_mu = h.copy()
    for i in range(len(emb.fragment)):
        h_mu[i, i] -= emb.chemical_potential
    return integrals.IntegralSet(emb.n_emb_orbitals, emb.n_emb_electrons,
                                 h_mu, emb.g_emb, emb.e_const)


@dataclass
class RdmPair:
    """Spin-summed spatial RDMs, chemists' pairing: rdm2[p,q,r,s] pairs
    (p,q) on electron one and (r,s) on electron two."""

    rdm1: np.ndarray
    rdm2: np.ndarray

    def validate(self, n_electrons=None, tol=1e-6):
        if np.max(np.abs(self.rdm1 - self.rdm1.T)) > tol:
            raise ValueError("rdm1 is not symmetric")
        if n_electrons is not None and abs(np.trace(self.rdm1) - n_electrons) > tol:
            raise ValueError(
                f"rdm1 trace {np.trace(self.rdm1):.6f} != {n_electrons}")
        return self


def contract_energy(h1, h2, rdms, e_const=0.0):
    """Total energy from spatial RDMs: sum h*D + 1/2 sum g*G + const."""
    return (np.einsum("pq,pq->", h1, rdms.rdm1)
            + 0.5 * np.einsum("pqrs,pqrs->", h2, rdms.rdm2) + e_const)


def fragment_energy(emb, rdms):
    """Democratic-partitioning energy of one fragment (no constant)."""
    nf = len(emb.fragment)
    hf = 2.0 * emb.h_bare + emb.v_core  # h + (h + v_core)
    d1, d2 = rdms.rdm1, rdms.rdm2
    g = emb.g_emb
    e1 = 0.25 * (np.einsum("ij,ij->", d1[:nf, :], hf[:nf, :])
                 + np.einsum("ij,ij->", d1[:, :nf], hf[:, :nf]))
    e2 = 0.125 * (np.einsum("ijkl,ijkl->", d2[:nf], g[:nf])
                  + np.einsum("ijkl,ijkl->", d2[:, :nf], g[:, :nf])
                  + np.einsum("ijkl,ijkl->", d2[:, :, :nf], g[:, :, :nf])
                  + np.einsum("ijkl,ijkl->", d2[:, :, :, :nf], g[:, :, :, :nf]))
    return float(e1 + e2)


def assemble_total_energy(embeddings, rdm_pairs, ints):
    """Sum democratic fragment energies plus the molecular core constant."""
    if len(embeddings) != len(rdm_pairs):
        raise ValueError("one RdmPair per fragment is required")
    return float(sum(fragment_energy(e, r) for e, r in zip(embeddings, rdm_pairs))
                 + ints.e_core)


# ---------------------------------------------------------------------------
# Fragment solvers
# ---------------------------------------------------------------------------

@dataclass
class FragmentModel:
    """Everything needed to solve one embedded fragment at a fixed mu."""

    emb: EmbeddingProblem
    mo_coeffs: np.ndarray          # embedding -> fragment MO
    h_qubit: PauliSum              # fragment-MO qubit Hamiltonian
    tmap: object
    h_tapered: PauliSum
    ansatz: circuits.Circuit
    generators: list = field(default_factory=list)
    reference_bits: tuple = ()


def prepare_fragment(emb, use_tapering=True):
    """Embedding-space RHF, MO rotation, qubit mapping, tapering, ansatz."""
    sints = solver_integrals(emb)
    fmf = integrals.run_rhf(sints)
    c = fmf.orbital_coeffs
    h_mo = c.T @ sints.h1 @ c
    g_mo = np.einsum("pi,qj,rk,sl,pqrs->ijkl", c, c, c, c, sints.h2, optimize=True)
    mints = integrals.IntegralSet(emb.n_emb_orbitals, emb.n_emb_electrons,
                                  h_mo, g_mo, emb.e_const)
    h_qubit = jordan_wigner(mints)
    if use_tapering:
        tmap = find_z2_symmetries(h_qubit, n_electrons=emb.n_emb_electrons)
        h_tapered = taper(h_qubit, tmap)
    else:
        tmap = None
        h_tapered = h_qubit
    reg_bits, generators, _ = circuits.uccsd_generators(
        emb.n_emb_orbitals, emb.n_emb_electrons, tapering=tmap)
    ansatz = circuits.build_uccsd(emb.n_emb_orbitals, emb.n_emb_electrons,
                                  tapering=tmap)
    return FragmentModel(emb, c, h_qubit, tmap, h_tapered, ansatz,
                         generators, reg_bits)


def _so_rdm_operators(n_spatial):
    """Spin-orbital ladder index patterns for the spatial RDM elements."""
    n_q = 2 * n_spatial

    def so(p, s):
        return spin_orbital_index(p, s, n_spatial)

    one_body = {}
    for p in range(n_spatial):
        for q in range(n_spatial):
            one_body[(p, q)] = [((so(p, s), 1), (so(q, s), 0)) for s in (0, 1)]
    two_body = {}
    for p in range(n_spatial):
        for q in range(n_spatial):
            for r in range(n_spatial):
                for s in range(n_spatial):
                    ops = []
                    for s1 in (0, 1):
                        for s2 in (0, 1):
                            ops.append(((so(p, s1), 1), (so(r, s2), 1),
                                        (so(s, s2), 0), (so(q, s1), 0)))
                    two_body[(p, q, r, s)] = ops
    return one_body, two_body, n_q


def _element_pauli(ops_list, n_q, tmap):
    total = PauliSum(n_q)
    for ops in ops_list:
        total += ladder_product(ops, n_q)
    # RDM operators need not be Hermitian individually; measure the
    # Hermitian part, which carries the full real expectation.
    herm = PauliSum(n_q)
    for key, coeff in total.terms.items():
        herm.terms[key] = coeff.real if isinstance(coeff, complex) else coeff
    herm = herm.pruned()
    if tmap is not None:
        herm = taper(herm, tmap, strict=False)
    return herm


def measure_rdms(model, theta, backend="noiseless", shots=None, noise=None,
                 seed=0):
    """Spatial RDMs of the optimized fragment state.

    Every RDM element's fermionic operator is mapped through Jordan-Wigner
    with the fragment's tapering; expectations come either from the exact
    noiseless state or from shot sampling (readout-mitigated) of the noisy
    state, one ShotResult per measurement group shared by all elements.
    """
    n_spatial = model.emb.n_emb_orbitals
    one_body, two_body, n_q = _so_rdm_operators(n_spatial)
    bound = model.ansatz.bind(theta)

    element_sums = {}
    for key, ops_list in one_body.items():
        element_sums[("d1", key)] = _element_pauli(ops_list, n_q, model.tmap)
    for key, ops_list in two_body.items():
        element_sums[("d2", key)] = _element_pauli(ops_list, n_q, model.tmap)

    if backend == "noiseless":
        state = simulator.evolve(bound, None)
        values = {k: simulator.expectation_exact(state, ps) if len(ps) else 0.0
                  for k, ps in element_sums.items()}
    elif backend == "noisy":
        state = simulator.evolve(bound, noise)
        strings = {}
        for ps in element_sums.values():
            for s, _ in ps.non_identity_items():
                strings[s.key] = s
        probe = PauliSum(bound.n_qubits,
                         [(s, 1.0) for s in strings.values()])
        groups = group_qubitwise(probe)
        seq = np.random.SeedSequence(seed)
        estimates = {}
        for group, sub in zip(groups, seq.spawn(len(groups))):
            result = simulator.sample(state, group, shots, noise, seed=sub)
            if noise is not None and noise.has_readout_error(bound.n_qubits):
                probs = simulator.mitigate_readout(result, noise)
            else:
                probs = result.probabilities()
            estimates.update(simulator.estimate_group(probs, group,
                                                      bound.n_qubits))
        values = {}
        for k, ps in element_sums.items():
            acc = ps.identity_coeff
            for s, coeff in ps.non_identity_items():
                acc += np.real(coeff) * estimates[s.key]
            values[k] = float(acc)
    else:
        raise ValueError(f"unknown RDM backend {backend!r}")

    d1_mo = np.zeros((n_spatial, n_spatial))
    for (p, q) in one_body:
        d1_mo[p, q] = values[("d1", (p, q))]
    d2_mo = np.zeros((n_spatial,) * 4)
    for (p, q, r, s) in two_body:
        d2_mo[p, q, r, s] = values[("d2", (p, q, r, s))]

    d1_mo = 0.5 * (d1_mo + d1_mo.T)
    d2_mo = 0.5 * (d2_mo + d2_mo.transpose(1, 0, 3, 2))

    c = model.mo_coeffs
    d1 = c @ d1_mo @ c.T
    d2 = np.einsum("pi,qj,rk,sl,ijkl->pqrs", c, c, c, c, d2_mo, optimize=True)
    return RdmPair(d1, d2)


def oracle_rdms(model):
    """Exact fragment RDMs by dense diagonalization (reference solver)."""
    spec = oracle.exact_ground_energy(model.h_qubit,
                                      n_electrons=model.emb.n_emb_electrons,
                                      with_vector=True)
    d1_so, d2_so = oracle.fermionic_rdms(spec.ground_vector, model.h_qubit.n_qubits)
    d1_mo, d2_mo = spin_summed_rdms(d1_so, d2_so)
    c = model.mo_coeffs
    d1 = c @ d1_mo @ c.T
    d2 = np.einsum("pi,qj,rk,sl,ijkl->pqrs", c, c, c, c, d2_mo, optimize=True)
    return RdmPair(d1, d2), spec.ground_energy


def spin_summed_rdms(d1_so, d2_so):
    """Blocked spin-orbital RDMs -> spatial spin-summed (chemists)."""
    n_q = d1_so.shape[0]
    n = n_q // 2

    def so(p, s):
        return spin_orbital_index(p, s, n)

    d1 = np.zeros((n, n))
    for p in range(n):
        for q in range(n):
            d1[p, q] = sum(d1_so[so(p, s), so(q, s)] for s in (0, 1))
    d2 = np.zeros((n, n, n, n))
    for p in range(n):
        for q in range(n):
            for r in range(n):
                for s in range(n):
                    d2[p, q, r, s] = sum(
                        d2_so[so(p, s1), so(q, s1), so(r, s2), so(s, s2)]
                        for s1 in (0, 1) for s2 in (0, 1))
    return d1, d2


# ---------------------------------------------------------------------------
# The embedding cycle driver
# ---------------------------------------------------------------------------

@dataclass
class DmetConfig:
    fragments: list
    bath_count: object = None         # None = automatic; int, or one per fragment
    solver: str = "vqe"               # "vqe" | "oracle"
    shots: object = None              # int | None/"exact"
    noise: object = None
    rdm_backend: str = "noiseless"    # "noiseless" | "noisy"
    refine: bool = False
    refine_nu: float = 5.5
    refine_lambda: float = 1e-4
    refine_c: float = 1.0
    max_cycles: int = 10
    electron_tol: float = 0.01
    mu_bracket: float = 1.0
    mu_bracket_max: float = 8.0
    seed: int = 0
    spsa: object = None
    use_tapering: bool = True


@dataclass
class CycleRecord:
    index: int
    mu: float
    energy: float
    electron_mismatch: float
    fragment_electrons: list


@dataclass
class DmetResult:
    energy: float
    mu: float
    cycles: list
    converged: bool
    warning: str | None = None

    @property
    def n_cycles(self):
        return len(self.cycles)

    def cycles_csv(self):
        lines = ["cycle,mu,energy,electron_mismatch"]
        for c in self.cycles:
            lines.append(f"{c.index},{float(c.mu)!r},{float(c.energy)!r},"
                         f"{float(c.electron_mismatch)!r}")
        return "\n".join(lines) + "\n"


def _solve_fragment(model, config, cycle_seed, warm_theta):
    if config.solver == "oracle":
        rdms, _ = oracle_rdms(model)
        return rdms, None, None
    if config.solver != "vqe":
        raise ValueError(f"unknown fragment solver {config.solver!r}")

    noise = config.noise
    exact_obj = None
    if config.shots in (None, "exact") and noise is None:
        exact_obj = vqe.ExactAnsatzObjective(model.h_tapered, model.generators,
                                             model.reference_bits)
    result = vqe.run_vqe(model.h_tapered, model.ansatz, shots=config.shots,
                         noise=noise, cfg=config.spsa, seed=cycle_seed,
                         theta0=warm_theta, exact_objective=exact_obj)
    theta = result.theta
    if config.refine and model.ansatz.parameter_count > 0:
        from . import refine as refine_mod
        cfg = refine_mod.RefinementConfig(c=config.refine_c, seed=cycle_seed)
        theta = refine_mod.refine_parameters(
            result.history, kernel_family="matern", nu=config.refine_nu,
            lam=config.refine_lambda, cfg=cfg)
    rdm_noise = noise if config.rdm_backend == "noisy" else None
    rdm_shots = config.shots if config.rdm_backend == "noisy" else None
    backend = "noisy" if (config.rdm_backend == "noisy"
                          and rdm_shots not in (None, "exact")) else "noiseless"
    rdms = measure_rdms(model, theta, backend=backend, shots=rdm_shots,
                        noise=rdm_noise, seed=cycle_seed + 104729)
    return rdms, theta, result


def _bath_count_for(config, fragment_index, n_fragments):
    bc = config.bath_count
    if bc is None or np.isscalar(bc):
        return bc
    if len(bc) != n_fragments:
        raise ValueError("one bath count per fragment is required")
    return bc[fragment_index]


def run_cycle(ints, mf, fragments, mu, config, cycle_index, warm_thetas):
    """Solve every fragment at one chemical potential."""
    embeddings, rdm_pairs, thetas = [], [], []
    n_frag_total = 0.0
    for fi, frag in enumerate(fragments):
        emb = build_bath(mf, frag, _bath_count_for(config, fi, len(fragments)))
        emb = build_embedded_hamiltonian(ints, mf, emb, mu)
        model = prepare_fragment(emb, use_tapering=config.use_tapering)
        seed = int(np.random.SeedSequence(
            entropy=(config.seed, cycle_index, fi)).generate_state(1)[0] % (2**31))
        warm = warm_thetas.get(fi)
        if warm is not None and len(warm) != model.ansatz.parameter_count:
            # Tapering structure can change with mu; a stale warm start from
            # a different parameterization is dropped.
            warm = None
        rdms, theta, _ = _solve_fragment(model, config, seed, warm)
        nf = len(frag)
        n_frag_total += float(np.trace(rdms.rdm1[:nf, :nf]))
        embeddings.append(emb)
        rdm_pairs.append(rdms)
        thetas.append(theta)
    energy = assemble_total_energy(embeddings, rdm_pairs, ints)
    for fi, theta in enumerate(thetas):
        if theta is not None:
            warm_thetas[fi] = theta
    mismatch = n_frag_total - ints.n_electrons
    return CycleRecord(cycle_index, mu, energy, mismatch,
                       [float(np.trace(r.rdm1[:len(f), :len(f)]))
                        for f, r in zip(fragments, rdm_pairs)])


def run_dmet(ints, config):
    """Algorithm: mean field, fragmentation, then chemical-potential cycles
    until the summed fragment electron count matches the molecule (or the
    cycle budget is spent); the minimum-energy cycle is reported."""
    fragments = [f if isinstance(f, FragmentSpec) else FragmentSpec(f)
                 for f in config.fragments]
    validate_fragments(fragments, ints.n_orbitals)
    mf = integrals.run_rhf(ints)

    warm = {}
    cycles = []

    def evaluate(mu, idx):
        rec = run_cycle(ints, mf, fragments, mu, config, idx, warm)
        cycles.append(rec)
        return rec

    rec = evaluate(0.0, 1)
    converged = abs(rec.electron_mismatch) < config.electron_tol
    warning = None

    if not converged:
        lo_mu, hi_mu = None, None
        # The fragment electron count grows with mu; walk outward for a
        # sign change, then bisect.
        base = rec
        step = config.mu_bracket
        direction = -1.0 if base.electron_mismatch > 0 else 1.0
        probe_mu = direction * step
        while len(cycles) < config.max_cycles:
            rec = evaluate(probe_mu, len(cycles) + 1)
            if abs(rec.electron_mismatch) < config.electron_tol:
                converged = True
                break
            if np.sign(rec.electron_mismatch) != np.sign(base.electron_mismatch):
                lo_mu = (min(base.mu, rec.mu),
                         base.electron_mismatch if base.mu < rec.mu else rec.electron_mismatch)
                hi_mu = (max(base.mu, rec.mu),
                         rec.electron_mismatch if base.mu < rec.mu else base.electron_mismatch)
                break
            if abs(probe_mu) >= config.mu_bracket_max:
                warning = "chemical-potential bracketing failed; best mu reported"
                break
            probe_mu *= 2.0
        while (not converged and warning is None and lo_mu is not None
               and len(cycles) < config.max_cycles):
            mid = 0.5 * (lo_mu[0] + hi_mu[0])
            rec = evaluate(mid, len(cycles) + 1)
            if abs(rec.electron_mismatch) < config.electron_tol:
                converged = True
                break
            if np.sign(rec.electron_mismatch) == np.sign(lo_mu[1]):
                lo_mu = (mid, rec.electron_mismatch)
            else:
                hi_mu = (mid, rec.electron_mismatch)
        if not converged and warning is None:
            warning = "cycle budget exhausted before electron-count convergence"

    best = min(cycles, key=lambda r: r.energy)
    return DmetResult(best.energy, best.mu, cycles, converged, warning)
