import numpy as np
import pytest

from dmetvqe import circuits, operators, oracle, simulator
from dmetvqe.circuits import Gate, Circuit
from dmetvqe.operators import PauliString, PauliSum, group_qubitwise
from dmetvqe.simulator import (DensityState, NoiseModel, evolve, sample,
                               expectation_exact, mitigate_readout,
                               estimate_energy, SimulationError)

P = PauliString.from_letters


def bell_circuit():
    return Circuit(2, (Gate("h", (0,)), Gate("cnot", (0, 1))), 0)


def pauli_sum(n, *pairs):
    return PauliSum(n, [(P(w), c) for w, c in pairs])


class TestEvolve:
    def test_empty_circuit_pure_ground(self):
        state = evolve(Circuit(2, (), 0))
        expected = np.zeros((4, 4))
        expected[0, 0] = 1.0
        assert np.allclose(state.matrix, expected)
        state.validate()

    def test_full_depolarization_maximally_mixed(self):
        state = evolve(Circuit(1, (Gate("x", (0,)),), 0), NoiseModel(p1=1.0))
        assert np.allclose(state.matrix, np.eye(2) / 2)

    def test_bell_zz_contracts_by_two_qubit_rate(self):
        h = pauli_sum(2, ("ZZ", 1.0))
        state = evolve(bell_circuit(), NoiseModel(p1=0.0, p2=0.03))
        assert expectation_exact(state, h) == pytest.approx(0.97, abs=1e-12)

    def test_channel_sanity_along_circuit(self):
        ansatz = circuits.build_uccsd(2, 2)
        bound = ansatz.bind(np.full(ansatz.parameter_count, 0.2))
        state = evolve(bound, NoiseModel.perth_like(), validate=True)
        state.validate()

    def test_unbound_circuit_rejected(self):
        c = Circuit(1, (Gate("rz", (0,), param=(0, 1.0)),), 1)
        with pytest.raises(circuits.BindError):
            evolve(c)

    def test_statevector_matches_density(self):
        ansatz = circuits.build_uccsd(2, 2)
        bound = ansatz.bind(np.array([0.1, -0.2]))
        psi = simulator.statevector(bound)
        rho = evolve(bound).matrix
        assert np.max(np.abs(rho - np.outer(psi, psi.conj()))) < 1e-12

    def test_depolarizing_contraction_single_paulis(self):
        # Noisy magnitudes never exceed clean ones on product circuits.
        gates = (Gate("h", (0,)), Gate("rx", (1,), angle=0.7),
                 Gate("ry", (0,), angle=-0.4))
        circ = Circuit(2, gates, 0)
        clean = evolve(circ)
        noisy = evolve(circ, NoiseModel(p1=0.05, p2=0.05))
        for word in ("XI", "YI", "ZI", "IX", "IY", "IZ"):
            h = pauli_sum(2, (word, 1.0))
            assert (abs(expectation_exact(noisy, h))
                    <= abs(expectation_exact(clean, h)) + 1e-12)


class TestExpectation:
    def test_z_on_ground(self):
        state = evolve(Circuit(1, (), 0))
        assert expectation_exact(state, pauli_sum(1, ("Z", 1.0))) == pytest.approx(1.0)

    def test_traceless_on_maximally_mixed(self):
        state = DensityState(1, np.eye(2) / 2)
        for word in ("X", "Y", "Z"):
            assert expectation_exact(state, pauli_sum(1, (word, 1.0))) == pytest.approx(0.0)

    def test_dimension_mismatch(self):
        state = evolve(Circuit(1, (), 0))
        with pytest.raises(SimulationError):
            expectation_exact(state, pauli_sum(2, ("ZZ", 1.0)))


class TestSampling:
    def test_perfect_readout_all_zeros(self):
        state = evolve(Circuit(1, (), 0))
        group = group_qubitwise(pauli_sum(1, ("Z", 1.0)))[0]
        result = sample(state, group, 1000, None, seed=1)
        assert result.counts == {"0": 1000}

    def test_zero_shots_rejected(self):
        state = evolve(Circuit(1, (), 0))
        group = group_qubitwise(pauli_sum(1, ("Z", 1.0)))[0]
        with pytest.raises(SimulationError):
            sample(state, group, 0, None, seed=1)

    def test_readout_flip_shifts_z(self):
        state = evolve(Circuit(1, (), 0))
        group = group_qubitwise(pauli_sum(1, ("Z", 1.0)))[0]
        noise = NoiseModel(readout_e=0.1)
        result = sample(state, group, 100000, noise, seed=3)
        probs = result.probabilities()
        z = probs[0] - probs[1]
        sigma = np.sqrt(0.8 * 0.2 / 100000) * 2
        assert abs(z - 0.8) < 3 * sigma + 1e-3

    def test_seeded_determinism(self):
        state = evolve(bell_circuit(), NoiseModel.perth_like())
        group = group_qubitwise(pauli_sum(2, ("ZZ", 1.0)))[0]
        a = sample(state, group, 500, NoiseModel.perth_like(), seed=11)
        b = sample(state, group, 500, NoiseModel.perth_like(), seed=11)
        assert a.counts == b.counts

    def test_group_measures_all_strings_at_once(self):
        # One circuit estimates <IZ>, <ZI>, <ZZ> simultaneously.
        h = pauli_sum(2, ("IZ", 0.5), ("ZI", 0.5), ("ZZ", 0.25))
        groups = group_qubitwise(h)
        assert len(groups) == 1
        state = evolve(bell_circuit())
        result = sample(state, groups[0], 4000, None, seed=5)
        probs = result.probabilities()
        est = simulator.estimate_group(probs, groups[0], 2)
        assert est[P("ZZ").key] == pytest.approx(1.0, abs=1e-12)
        assert abs(est[P("IZ").key]) < 0.05
        assert abs(est[P("ZI").key]) < 0.05


class TestMitigation:
    def test_identity_confusion_unchanged(self):
        state = evolve(Circuit(1, (), 0))
        group = group_qubitwise(pauli_sum(1, ("Z", 1.0)))[0]
        result = sample(state, group, 1000, None, seed=2)
        corrected = mitigate_readout(result, NoiseModel(readout_e=0.0))
        assert np.allclose(corrected, result.probabilities())

    def test_inverse_restores_z(self):
        state = evolve(Circuit(1, (), 0))
        group = group_qubitwise(pauli_sum(1, ("Z", 1.0)))[0]
        noise = NoiseModel(readout_e=0.1)
        result = sample(state, group, 400000, noise, seed=4)
        corrected = mitigate_readout(result, noise)
        assert corrected[0] - corrected[1] == pytest.approx(1.0, abs=0.01)

    def test_two_qubit_correction_matches_kron_inverse(self):
        counts = {"00": 500, "01": 120, "10": 200, "11": 180}
        result = simulator.ShotResult(counts, 1000, "ZZ", 2)
        noise = NoiseModel(readout_e=[0.05, 0.12])
        corrected = mitigate_readout(result, noise)
        a0 = noise.confusion(0).T
        a1 = noise.confusion(1).T
        inv = np.linalg.inv(np.kron(a0, a1))
        direct = inv @ result.probabilities()
        direct = np.clip(direct, 0, None)
        direct /= direct.sum()
        assert np.allclose(corrected, direct, atol=1e-12)

    def test_singular_confusion_raises(self):
        counts = {"0": 10}
        result = simulator.ShotResult(counts, 10, "Z", 1)
        with pytest.raises(SimulationError):
            mitigate_readout(result, NoiseModel(readout_e=0.5))


class TestEstimateEnergy:
    def test_exact_matches_expectation(self, h2_mo_hamiltonian):
        ansatz = circuits.build_uccsd(2, 2)
        bound = ansatz.bind(np.array([0.05, -0.12]))
        state = evolve(bound)
        direct = expectation_exact(state, h2_mo_hamiltonian)
        assert estimate_energy(bound, h2_mo_hamiltonian) == pytest.approx(direct, abs=1e-12)

    def test_executions_match_group_count(self, monkeypatch):
        h = pauli_sum(2, ("IZ", 0.5), ("ZI", 0.5), ("IX", 0.2), ("XX", 0.1))
        groups = group_qubitwise(h)
        calls = []
        original = simulator.sample

        def counting(*args, **kwargs):
            calls.append(1)
            return original(*args, **kwargs)

        monkeypatch.setattr(simulator, "sample", counting)
        estimate_energy(bell_circuit(), h, shots=200, seed=0)
        assert len(calls) == len(groups)

    def test_shot_estimates_converge(self, h2_mo_hamiltonian):
        ansatz = circuits.build_uccsd(2, 2)
        bound = ansatz.bind(np.array([0.05, -0.12]))
        exact = estimate_energy(bound, h2_mo_hamiltonian)
        errors = []
        for shots in (100, 1600, 25600):
            errs = [abs(estimate_energy(bound, h2_mo_hamiltonian, shots=shots,
                                        seed=s) - exact) for s in range(12)]
            errors.append(np.mean(errs))
        # 1/sqrt(shots) scaling: each 16x shot increase shrinks error ~4x.
        assert errors[1] < errors[0]
        assert errors[2] < errors[1]
        assert errors[2] < errors[0] / 6

    def test_identity_only_hamiltonian(self):
        h = pauli_sum(1, ("I", -2.5))
        assert estimate_energy(Circuit(1, (), 0), h, shots=100, seed=0) == pytest.approx(-2.5)

    def test_thousand_shot_estimates_within_five_sigma(self, h2_mo_hamiltonian):
        ansatz = circuits.build_uccsd(2, 2)
        bound = ansatz.bind(np.array([0.07, -0.3]))
        exact = estimate_energy(bound, h2_mo_hamiltonian)
        estimates = np.array([estimate_energy(bound, h2_mo_hamiltonian,
                                              shots=1000, seed=s)
                              for s in range(100)])
        se = estimates.std(ddof=1)
        assert np.all(np.abs(estimates - exact) <= 5 * se)


class TestNoiseModelConfig:
    def test_invalid_probability_rejected(self):
        with pytest.raises(ValueError):
            NoiseModel(p1=1.5)

    def test_config_file_roundtrip(self, tmp_path):
        path = tmp_path / "noise.cfg"
        path.write_text("p1 = 0.004\np2 = 0.05  # two-qubit\nreadout_e_0 = 0.01\n"
                        "readout_e_1 = 0.03\n")
        nm = NoiseModel.from_config(str(path))
        assert nm.p1 == 0.004 and nm.p2 == 0.05
        assert nm.flip_probability(0) == 0.01
        assert nm.flip_probability(1) == 0.03

    def test_resolve_presets(self):
        assert simulator.resolve_noise("none") is None
        assert simulator.resolve_noise(None) is None
        nm = simulator.resolve_noise("perth-like")
        assert nm.p1 == 0.002 and nm.p2 == 0.03
