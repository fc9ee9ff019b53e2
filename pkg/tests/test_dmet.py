import numpy as np
import pytest

from dmetvqe import dmet, integrals, operators, oracle, simulator, vqe
from dmetvqe.dmet import (FragmentSpec, DmetConfig, build_bath,
                          build_embedded_hamiltonian, prepare_fragment,
                          measure_rdms, oracle_rdms, assemble_total_energy,
                          run_dmet, validate_fragments, FragmentationError,
                          EmbeddingConsistencyError, solver_integrals,
                          contract_energy)

from conftest import H4_DISTANCES, load_golden, load_ints


H4_SPLIT = [[0, 1], [2, 3]]


def mf_for(label):
    return integrals.run_rhf(load_ints("h4", label))


class TestFragments:
    def test_overlapping_fragments_rejected(self):
        with pytest.raises(FragmentationError):
            validate_fragments([FragmentSpec([0, 1]), FragmentSpec([1, 2, 3])], 4)

    def test_missing_orbital_rejected(self):
        with pytest.raises(FragmentationError):
            validate_fragments([FragmentSpec([0, 1])], 4)

    def test_out_of_range_rejected(self):
        with pytest.raises(FragmentationError):
            validate_fragments([FragmentSpec([0, 5])], 4)


class TestBath:
    def test_h4_automatic_two_bath_orbitals(self, h4_25_ints):
        mf = integrals.run_rhf(h4_25_ints)
        emb = build_bath(mf, FragmentSpec([0, 1]))
        assert emb.bath_coeffs.shape[1] == 2
        assert emb.n_emb_orbitals == 4
        assert emb.n_qubits == 8

    def test_bath_counts_give_table_sizes(self, h4_25_ints):
        mf = integrals.run_rhf(h4_25_ints)
        for bc, orbitals, qubits in ((1, 3, 6), (0, 2, 4)):
            emb = build_bath(mf, FragmentSpec([0, 1]), bath_count=bc)
            assert emb.n_emb_orbitals == orbitals
            assert emb.n_qubits == qubits

    def test_whole_molecule_fragment_no_bath(self, h4_25_ints):
        mf = integrals.run_rhf(h4_25_ints)
        emb = build_bath(mf, FragmentSpec([0, 1, 2, 3]))
        assert emb.bath_coeffs.shape[1] == 0
        assert emb.n_emb_orbitals == 4

    def test_scores_sorted_descending(self, h4_25_ints):
        mf = integrals.run_rhf(h4_25_ints)
        emb = build_bath(mf, FragmentSpec([0, 1]))
        assert np.all(np.diff(emb.bath_scores) <= 1e-12)

    def test_bath_count_exceeding_environment_clamped(self, h4_25_ints):
        mf = integrals.run_rhf(h4_25_ints)
        emb = build_bath(mf, FragmentSpec([0, 1]), bath_count=5)
        assert emb.bath_coeffs.shape[1] == 2


class TestEmbeddedHamiltonian:
    def test_whole_molecule_identity_projection(self, h4_25_ints):
        mf = integrals.run_rhf(h4_25_ints)
        emb = build_bath(mf, FragmentSpec([0, 1, 2, 3]))
        emb = build_embedded_hamiltonian(h4_25_ints, mf, emb, mu=0.0)
        assert np.allclose(emb.h_bare, h4_25_ints.h1)
        assert np.allclose(emb.g_emb, h4_25_ints.h2)
        assert np.allclose(emb.v_core, 0.0)
        assert emb.e_const == pytest.approx(h4_25_ints.e_core)
        assert emb.n_emb_electrons == 4

    def test_mu_shift_changes_energy_linearly(self, h4_25_ints):
        # d<H>/d(mu) = -(fragment electron count) for a fixed state.
        mf = integrals.run_rhf(h4_25_ints)
        emb = build_bath(mf, FragmentSpec([0, 1]), bath_count=0)
        delta = 0.05
        states = {}
        for mu in (0.0, delta):
            e = build_embedded_hamiltonian(h4_25_ints, mf, emb, mu=mu)
            model = prepare_fragment(e)
            theta = np.full(model.ansatz.parameter_count, 0.1)
            bound = model.ansatz.bind(theta)
            state = simulator.evolve(bound)
            states[mu] = (model, state)
        model0, state0 = states[0.0]
        model1, state1 = states[delta]
        # Same theta but different fragment MO bases; use mu=0 model's state
        # against both Hamiltonians via the RDM contraction instead.
        rdms = measure_rdms(model0, np.full(model0.ansatz.parameter_count, 0.1))
        n_frag = np.trace(rdms.rdm1[:2, :2])
        e0 = contract_energy(states[0.0][0].emb.h_bare + states[0.0][0].emb.v_core,
                             states[0.0][0].emb.g_emb, rdms, states[0.0][0].emb.e_const)
        h_mu = states[0.0][0].emb.h_bare + states[0.0][0].emb.v_core
        h_mu = h_mu.copy()
        for i in range(2):
            h_mu[i, i] -= delta
        e1 = contract_energy(h_mu, states[0.0][0].emb.g_emb, rdms,
                             states[0.0][0].emb.e_const)
        assert e1 - e0 == pytest.approx(-delta * n_frag, abs=1e-10)

    def test_bath0_has_eight_tapered_strings(self, h4_25_ints):
        mf = integrals.run_rhf(h4_25_ints)
        emb = build_bath(mf, FragmentSpec([0, 1]), bath_count=0)
        emb = build_embedded_hamiltonian(h4_25_ints, mf, emb, mu=0.0)
        model = prepare_fragment(emb)
        assert model.emb.n_qubits == 4
        assert model.h_tapered.n_qubits == 2
        assert len(model.h_tapered.non_identity_items()) == 8

    def test_consistency_guard(self, h4_25_ints):
        mf = integrals.run_rhf(h4_25_ints)
        emb = build_bath(mf, FragmentSpec([0, 1]), bath_count=0)
        # Force a wrong electron assignment to trip the guard.
        emb.n_emb_electrons = 4
        with pytest.raises(EmbeddingConsistencyError):
            build_embedded_hamiltonian(h4_25_ints, mf, emb, mu=0.0)


class TestQubitAccounting:
    def test_table_counts_raw_and_tapered(self, h4_25_ints):
        mf = integrals.run_rhf(h4_25_ints)
        expected = {None: (8, 5), 1: (6, 4), 0: (4, 2)}
        for bc, (raw, tapered) in expected.items():
            emb = build_bath(mf, FragmentSpec([0, 1]), bath_count=bc)
            emb = build_embedded_hamiltonian(h4_25_ints, mf, emb, 0.0)
            model = prepare_fragment(emb)
            assert model.h_qubit.n_qubits == raw
            assert model.h_tapered.n_qubits == tapered


class TestRdms:
    def fragment_model(self, ints, bath_count=0):
        mf = integrals.run_rhf(ints)
        emb = build_bath(mf, FragmentSpec([0, 1]), bath_count=bath_count)
        emb = build_embedded_hamiltonian(ints, mf, emb, 0.0)
        return prepare_fragment(emb)

    def test_noiseless_trace_equals_embedded_electrons(self, h4_25_ints):
        model = self.fragment_model(h4_25_ints)
        result = vqe.run_vqe(model.h_tapered, model.ansatz, seed=0)
        rdms = measure_rdms(model, result.theta, backend="noiseless")
        rdms.validate(n_electrons=model.emb.n_emb_electrons, tol=1e-6)

    def test_pauli_route_matches_dense_ladder_route(self, h4_25_ints):
        # Dual-route check: measurement-based RDMs against the dense
        # fermionic oracle on the same state.
        model = self.fragment_model(h4_25_ints)
        spec = oracle.exact_ground_energy(model.h_qubit,
                                          n_electrons=model.emb.n_emb_electrons,
                                          with_vector=True)
        rd_oracle, _ = oracle_rdms(model)
        result = vqe.run_vqe(model.h_tapered, model.ansatz, seed=0)
        rd_meas = measure_rdms(model, result.theta, backend="noiseless")
        # VQE reaches the exact ground state for this 2-electron fragment.
        assert np.max(np.abs(rd_meas.rdm1 - rd_oracle.rdm1)) < 1e-4
        assert np.max(np.abs(rd_meas.rdm2 - rd_oracle.rdm2)) < 1e-4

    def test_noisy_rdms_deviate_then_shrink_with_shots(self, h4_25_ints):
        model = self.fragment_model(h4_25_ints)
        result = vqe.run_vqe(model.h_tapered, model.ansatz, seed=0)
        clean = measure_rdms(model, result.theta, backend="noiseless")
        noise = simulator.NoiseModel(readout_e=0.02)
        devs = {}
        for shots in (200, 20000):
            ds = []
            for seed in range(4):
                noisy = measure_rdms(model, result.theta, backend="noisy",
                                     shots=shots, noise=noise, seed=seed)
                ds.append(np.max(np.abs(noisy.rdm1 - clean.rdm1)))
            devs[shots] = np.mean(ds)
        assert devs[200] > 0
        assert devs[20000] < devs[200]

    def test_bath0_energy_needs_four_circuit_executions(self, h4_25_ints,
                                                        monkeypatch):
        model = self.fragment_model(h4_25_ints)
        calls = []
        original = simulator.sample

        def counting(*args, **kwargs):
            calls.append(1)
            return original(*args, **kwargs)

        monkeypatch.setattr(simulator, "sample", counting)
        bound = model.ansatz.bind(np.zeros(model.ansatz.parameter_count))
        simulator.estimate_energy(bound, model.h_tapered, shots=500, seed=0)
        assert len(calls) == 4

    def test_bath0_spsa_noiseless_reaches_oracle(self, h4_25_ints):
        model = self.fragment_model(h4_25_ints)
        e0 = oracle.exact_ground_energy(model.h_tapered).ground_energy
        obj = vqe.ExactAnsatzObjective(model.h_tapered, model.generators,
                                       model.reference_bits)
        _, hist = vqe.spsa_minimize(obj, model.ansatz.parameter_count,
                                    vqe.SpsaConfig(iterations=150, seed=2))
        _, best = hist.best()
        assert best - e0 < 1.6e-3

    def test_energy_reassembly_matches_vqe_energy(self, h2_ints):
        # Whole-molecule single fragment: contraction of measured RDMs with
        # the solver integrals reproduces the VQE energy.
        mf = integrals.run_rhf(h2_ints)
        emb = build_bath(mf, FragmentSpec([0, 1]))
        emb = build_embedded_hamiltonian(h2_ints, mf, emb, 0.0)
        model = prepare_fragment(emb)
        result = vqe.run_vqe(model.h_tapered, model.ansatz, seed=0)
        rdms = measure_rdms(model, result.theta, backend="noiseless")
        sints = solver_integrals(emb)
        e = contract_energy(sints.h1, sints.h2, rdms, emb.e_const)
        assert e == pytest.approx(result.energy, abs=1e-6)


class TestTotalEnergy:
    def test_exact_limit_identity(self, h4_golden):
        for label in ("1.00", "2.00", "3.00"):
            ints = load_ints("h4", label)
            cfg = DmetConfig(fragments=[[0, 1, 2, 3]], solver="oracle")
            res = run_dmet(ints, cfg)
            assert res.energy == pytest.approx(h4_golden[label][0], abs=1e-8)
            assert res.converged and res.n_cycles == 1

    def test_symmetric_split_mu_near_zero(self, h4_25_ints, h4_golden):
        cfg = DmetConfig(fragments=H4_SPLIT, solver="oracle")
        res = run_dmet(h4_25_ints, cfg)
        assert abs(res.mu) < 0.05
        assert res.converged

    def test_full_bath_oracle_solver_exact_for_two_fragments(self, h4_golden):
        ints = load_ints("h4", "1.30")
        cfg = DmetConfig(fragments=H4_SPLIT, solver="oracle")
        res = run_dmet(ints, cfg)
        assert res.energy == pytest.approx(h4_golden["1.30"][0], abs=1e-8)

    def test_missing_fragment_rejected(self, h4_25_ints):
        with pytest.raises(ValueError):
            assemble_total_energy([], [dmet.RdmPair(np.eye(2), np.zeros((2,) * 4))],
                                  h4_25_ints)

    def test_max_cycles_honored_and_min_energy_reported(self, h4_25_ints):
        # An unsatisfiable electron tolerance forces the bisection walk to
        # spend the whole cycle budget; the minimum-energy cycle is reported
        # with a warning.
        cfg = DmetConfig(fragments=H4_SPLIT, solver="oracle", bath_count=0,
                         electron_tol=-1.0, max_cycles=4)
        res = run_dmet(h4_25_ints, cfg)
        assert res.n_cycles == 4
        assert not res.converged
        assert res.warning is not None
        assert res.energy == pytest.approx(min(c.energy for c in res.cycles))

    def test_bath_error_ordering_short_vs_long(self, h4_golden):
        # Noiseless: full bath beats truncated baths at short distance; at
        # 2.5 A the bath-0 truncation error is itself small.
        errs = {}
        for label in ("1.00", "2.50"):
            ints = load_ints("h4", label)
            e_fci = h4_golden[label][0]
            for bc in (None, 1, 0):
                cfg = DmetConfig(fragments=H4_SPLIT, solver="oracle", bath_count=bc)
                res = run_dmet(ints, cfg)
                errs[(label, bc)] = abs(res.energy - e_fci)
        assert errs[("1.00", None)] <= errs[("1.00", 1)] <= errs[("1.00", 0)]
        assert errs[("2.50", 0)] < 1e-3


class TestDriverPlumbing:
    def test_unknown_solver_rejected(self, h4_25_ints):
        cfg = DmetConfig(fragments=H4_SPLIT, solver="ccsd")
        with pytest.raises(ValueError):
            run_dmet(h4_25_ints, cfg)

    def test_seeded_determinism_noisy(self, h4_25_ints):
        nm = simulator.NoiseModel.perth_like()
        cfg = DmetConfig(fragments=H4_SPLIT, bath_count=0, solver="vqe",
                         shots=400, noise=nm, rdm_backend="noisy",
                         max_cycles=2, seed=7,
                         spsa=vqe.SpsaConfig(iterations=8, seed=7))
        e1 = run_dmet(h4_25_ints, cfg).energy
        e2 = run_dmet(h4_25_ints, cfg).energy
        assert e1 == e2
