"""VQE driver: SPSA (noisy path) or coordinate-wise sequential minimization
(noiseless path) over a parameterized ansatz, with every objective
evaluation recorded for downstream surrogate refinement."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import simulator


class SpsaDivergenceError(RuntimeError):
    """Objective returned a non-finite value; carries the partial history."""

    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


@dataclass
class HistoryRecord:
    iteration: int
    kind: str  # "iterate" | "plus" | "minus" | "scan"
    theta: np.ndarray
    y: float


@dataclass
class OptHistory:
    d: int
    records: list = field(default_factory=list)

    def append(self, iteration, kind, theta, y):
        theta = np.asarray(theta, dtype=float).copy()
        if theta.shape != (self.d,):
            raise ValueError(f"theta record has wrong dimension {theta.shape}")
        self.records.append(HistoryRecord(iteration, kind, theta, float(y)))

    def __len__(self):
        return len(self.records)

    def data(self, kinds=None):
        """(thetas, ys) arrays, optionally filtered to the given kinds."""
        recs = [r for r in self.records if kinds is None or r.kind in kinds]
        if not recs:
            return np.zeros((0, self.d)), np.zeros(0)
        return (np.array([r.theta for r in recs]),
                np.array([r.y for r in recs]))

    def best(self, kinds=("iterate",)):
        recs = [r for r in self.records if r.kind in kinds]
        if not recs:
            recs = self.records
        winner = min(recs, key=lambda r: r.y)
        return winner.theta.copy(), winner.y

    def to_csv(self):
        buf = io.StringIO()
        cols = ",".join(f"theta_{i}" for i in range(self.d))
        buf.write(f"iteration,kind,y,{cols}\n" if self.d else "iteration,kind,y\n")
        for r in self.records:
            comps = ",".join(f"{float(v)!r}" for v in r.theta)
            buf.write(f"{r.iteration},{r.kind},{r.y!r}" + ("," + comps if self.d else "") + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [l for l in text.splitlines() if l.strip()]
        header = lines[0].split(",")
        d = len(header) - 3
        hist = cls(d)
        for line in lines[1:]:
            parts = line.split(",")
            hist.append(int(parts[0]), parts[1],
                        np.array([float(v) for v in parts[3:]]), float(parts[2]))
        return hist


@dataclass
class SpsaConfig:
    iterations: int = 120
    a: float | None = None  # None -> calibrated for a first step of ~0.1
    c: float = 0.1
    A: float | None = None  # None -> iterations / 10
    alpha: float = 0.602
    gamma: float = 0.101
    seed: int = 0
    first_step: float = 0.1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.c <= 0 or (self.a is not None and self.a <= 0):
            raise ValueError("gain scalars must be positive")
        if not (0 < self.alpha <= 1 and 0 < self.gamma <= 1):
            raise ValueError("gain exponents must lie in (0, 1]")


def _checked(value, history):
    if not np.isfinite(value):
        raise SpsaDivergenceError(f"objective returned {value}", history)
    return float(value)


def spsa_minimize(objective, d, cfg, theta0=None):
    """Simultaneous-perturbation descent over [-pi, pi]^d.

    Gains: a_k = a/(k+1+A)^alpha, c_k = c/(k+1)^gamma with Rademacher
    perturbations.  Each iteration records the two perturbed evaluations
    and one evaluation at the updated iterate; the initial point is also
    recorded.  Returns (theta_final, history).
    """
    rng = np.random.default_rng(cfg.seed)
    big_a = cfg.A if cfg.A is not None else cfg.iterations / 10.0
    theta = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    history = OptHistory(d)
    if d == 0:
        y = _checked(objective(theta), history)
        history.append(0, "iterate", theta, y)
        return theta, history
    history.append(0, "iterate", theta, _checked(objective(theta), history))

    a_gain = cfg.a
    for k in range(cfg.iterations):
        c_k = cfg.c / (k + 1) ** cfg.gamma
        delta = rng.integers(0, 2, size=d) * 2 - 1
        theta_plus = np.clip(theta + c_k * delta, -np.pi, np.pi)
        theta_minus = np.clip(theta - c_k * delta, -np.pi, np.pi)
        y_plus = _checked(objective(theta_plus), history)
        history.append(k + 1, "plus", theta_plus, y_plus)
        y_minus = _checked(objective(theta_minus), history)
        history.append(k + 1, "minus", theta_minus, y_minus)
        grad = (y_plus - y_minus) / (2.0 * c_k) * delta.astype(float)
        if a_gain is None:
            # Calibrate so the first update moves each coordinate ~first_step.
            scale = np.mean(np.abs(grad))
            a_gain = (cfg.first_step * (big_a + 1.0) ** cfg.alpha / scale
                      if scale > 1e-12 else 1.0)
        a_k = a_gain / (k + 1 + big_a) ** cfg.alpha
        theta = np.clip(theta - a_k * grad, -np.pi, np.pi)
        history.append(k + 1, "iterate", theta, _checked(objective(theta), history))
    return theta, history


def _coordinate_descent(objective, theta, history, it_offset, sweeps, coarse,
                        polish_evals, bounds, tol):
    """One coordinate-descent run from `theta`; never accepts a worse point."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    lo_b, hi_b = bounds
    theta = theta.copy()
    y = float(objective(theta))
    history.append(it_offset, "iterate", theta, y)
    it = it_offset
    for _ in range(sweeps):
        y_sweep = y
        for i in range(len(theta)):
            it += 1

            def f(x):
                trial = theta.copy()
                trial[i] = x
                val = float(objective(trial))
                history.append(it, "scan", trial, val)
                return val

            grid = list(np.linspace(lo_b, hi_b, coarse)) + [theta[i]]
            values = [f(x) for x in grid]
            j = int(np.argmin(values))
            probes = [(grid[j], values[j])]
            h = (hi_b - lo_b) / (coarse - 1)
            lo, hi = max(lo_b, grid[j] - h), min(hi_b, grid[j] + h)
            x1 = hi - inv_phi * (hi - lo)
            x2 = lo + inv_phi * (hi - lo)
            f1, f2 = f(x1), f(x2)
            probes += [(x1, f1), (x2, f2)]
            for _ in range(polish_evals):
                if f1 <= f2:
                    hi, x2, f2 = x2, x1, f1
                    x1 = hi - inv_phi * (hi - lo)
                    f1 = f(x1)
                    probes.append((x1, f1))
                else:
                    lo, x1, f1 = x1, x2, f2
                    x2 = lo + inv_phi * (hi - lo)
                    f2 = f(x2)
                    probes.append((x2, f2))
            x_best, f_best = min(probes, key=lambda t: t[1])
            if f_best < y:
                theta[i] = x_best
                y = f_best
            history.append(it, "iterate", theta, y)
        if y_sweep - y < tol:
            break
    return theta, y, it


def coordinate_minimize(objective, d, sweeps=30, coarse=13, polish_evals=20,
                        bounds=(-np.pi, np.pi), tol=1e-12, theta0=None,
                        restarts=4, kicks=3, kick_scale=0.35, seed=0):
    """Derivative-free sequential minimization, one coordinate at a time.

    Each coordinate pass scans a coarse grid (always including the current
    value) and polishes the best bracket by golden section, accepting only
    improvements.  The descent is repeated from seeded random restarts and
    from perturbations of the incumbent ("kicks") to escape the zigzag
    minima coordinate methods fall into on coupled landscapes; every
    evaluation is recorded ("scan"), with an "iterate" record per accepted
    coordinate update.
    """
    history = OptHistory(d)
    rng = np.random.default_rng(seed)
    start = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    if d == 0:
        y = float(objective(start))
        history.append(0, "iterate", start, y)
        return start, history

    starts = [start]
    starts += [np.clip(rng.normal(0.0, 0.4, d), *bounds) for _ in range(restarts)]
    best_theta, best_y = None, np.inf
    it = 0
    for s in starts:
        theta, y, it = _coordinate_descent(objective, s, history, it + 1,
                                           sweeps, coarse, polish_evals, bounds, tol)
        if y < best_y:
            best_theta, best_y = theta, y
    for _ in range(kicks):
        kicked = np.clip(best_theta + rng.normal(0.0, kick_scale, d), *bounds)
        theta, y, it = _coordinate_descent(objective, kicked, history, it + 1,
                                           sweeps, coarse, polish_evals, bounds, tol)
        if y < best_y:
            best_theta, best_y = theta, y
    return best_theta, history


class ExactAnsatzObjective:
    """Noiseless exact energies without per-call circuit evolution.

    Applies the same trotterized string rotations as the compiled ansatz,
    exp(i*theta_k*c_m*P_m) in compile order, using exp(i*a*P)|psi> =
    cos(a)|psi> + i*sin(a)*P|psi> with dense Pauli matrices cached once.
    Values match the circuit route to machine precision.
    """

    def __init__(self, hamiltonian, generators, reference_bits):
        from .operators import _dense_pauli

        n = len(reference_bits)
        self.h_dense = hamiltonian.dense_matrix()
        psi = np.zeros(2 ** n, dtype=complex)
        index = 0
        for bit in reference_bits:
            index = (index << 1) | bit
        psi[index] = 1.0
        self.reference = psi
        self.factors = []  # (parameter index, coeff, dense Pauli)
        for k, gen in enumerate(generators):
            items = sorted(gen.non_identity_items(), key=lambda t: t[0].key)
            for string, coeff in items:
                self.factors.append(
                    (k, float(np.real(coeff)), _dense_pauli(string.x, string.z, n)))

    def state(self, theta):
        psi = self.reference
        for k, coeff, dense in self.factors:
            a = theta[k] * coeff
            psi = np.cos(a) * psi + 1j * np.sin(a) * (dense @ psi)
        return psi

    def __call__(self, theta):
        psi = self.state(theta)
        return float(np.real(np.vdot(psi, self.h_dense @ psi)))


@dataclass
class VqeResult:
    theta: np.ndarray
    energy: float
    history: OptHistory


def run_vqe(hamiltonian, ansatz, shots=None, noise=None, cfg=None, seed=0,
            theta0=None, optimizer=None, exact_objective=None):
    """Minimize the estimated energy of `ansatz` under `hamiltonian`.

    optimizer: "spsa" or "coordinate"; default picks SPSA whenever the
    evaluation is stochastic (finite shots or gate noise) and the coordinate
    minimizer otherwise.  theta* is the best-observed iterate; the returned
    energy is re-evaluated there with the same backend.  An
    ExactAnsatzObjective may be supplied to shortcut noiseless exact
    evaluation (identical values, no circuit evolution per call).
    """
    if ansatz.n_qubits != hamiltonian.n_qubits:
        raise ValueError("ansatz width does not match Hamiltonian register")
    stochastic = shots not in (None, "exact") or noise is not None
    if optimizer is None:
        optimizer = "spsa" if stochastic else "coordinate"

    groups = None
    if shots not in (None, "exact"):
        from .operators import group_qubitwise
        groups = group_qubitwise(hamiltonian)

    counter = [0]

    if exact_objective is not None and not stochastic:
        objective = exact_objective
    else:
        def objective(theta):
            counter[0] += 1
            bound = ansatz.bind(theta)
            return simulator.estimate_energy(
                bound, hamiltonian, shots=shots, noise=noise,
                seed=np.random.SeedSequence(entropy=(seed, counter[0])),
                groups=groups)

    d = ansatz.parameter_count
    if optimizer == "spsa":
        cfg = cfg or SpsaConfig(seed=seed)
        _, history = spsa_minimize(objective, d, cfg, theta0=theta0)
    elif optimizer == "coordinate":
        _, history = coordinate_minimize(objective, d, theta0=theta0, seed=seed)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")

    theta_star, _ = history.best(kinds=("iterate",))
    energy = objective(theta_star)
    return VqeResult(theta_star, energy, history)
