"""Gaussian-process post-processing of optimizer histories.

A kernel-ridge surrogate is fit to every (theta, energy) record produced by
the optimizer; the refined parameter minimizes the surrogate mean over a
search box subject to a cap on the posterior uncertainty.  Includes the two
regularizer-selection procedures: re-measurement of the refined point over a
candidate grid, and the sine-fit validation that needs no extra
measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HALF_INTEGER_NUS = (0.5, 1.5, 2.5, 3.5, 4.5, 5.5)


class InfeasibleRefinementError(RuntimeError):
    """No candidate satisfies the uncertainty threshold; advise a larger c."""


class GpNumericalError(RuntimeError):
    """Gram factorization failed even with jitter."""


def matern_eval(nu, length_scale, r):
    """Closed-form Matern kernel for half-integer smoothness.

    nu = p + 1/2 gives exp(-u) * (p!/(2p)!) * sum_i ((p+i)!/(i!(p-i)!)) (2u)^(p-i)
    with u = sqrt(2 nu) r / l; nu = 1/2 reduces to exp(-r/l).
    """
    if nu not in HALF_INTEGER_NUS:
        raise ValueError(f"unsupported smoothness {nu}; use one of {HALF_INTEGER_NUS}")
    p = int(nu - 0.5)
    r = np.asarray(r, dtype=float)
    u = math.sqrt(2.0 * nu) * r / length_scale
    poly = np.zeros_like(u)
    for i in range(p + 1):
        coeff = math.factorial(p + i) / (math.factorial(i) * math.factorial(p - i))
        poly = poly + coeff * (2.0 * u) ** (p - i)
    poly = poly * (math.factorial(p) / math.factorial(2 * p))
    return np.exp(-u) * poly


def squared_exponential_eval(length_scale, r):
    """k(r) = exp(-r^2 / l)."""
    r = np.asarray(r, dtype=float)
    return np.exp(-(r ** 2) / length_scale)


@dataclass
class Kernel:
    family: str = "matern"     # "matern" | "squared-exponential"
    nu: float = 5.5
    length_scale: float = 1.0

    def __post_init__(self):
        if self.length_scale <= 0:
            raise ValueError("length scale must be positive")
        if self.family not in ("matern", "squared-exponential"):
            raise ValueError(f"unknown kernel family {self.family!r}")

    def of_distance(self, r):
        if self.family == "matern":
            return matern_eval(self.nu, self.length_scale, r)
        return squared_exponential_eval(self.length_scale, r)

    def __call__(self, a, b):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        diff = a[:, None, :] - b[None, :, :]
        return self.of_distance(np.linalg.norm(diff, axis=-1))


@dataclass
class GpModel:
    """Kernel-ridge surrogate mu_n / sigma_n over an optimizer history."""

    kernel: Kernel
    lam: float
    thetas: np.ndarray
    ys: np.ndarray
    _chol: np.ndarray = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)

    @classmethod
    def fit(cls, kernel, lam, thetas, ys):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        ys = np.asarray(ys, dtype=float)
        if len(ys) < 1:
            raise ValueError("at least one observation is required")
        if lam <= 0:
            raise ValueError("regularizer must be positive")
        model = cls(kernel, lam, thetas, ys)
        gram = kernel(thetas, thetas) + lam * np.eye(len(ys))
        model._chol = _chol_with_jitter(gram)
        model._alpha = _chol_solve(model._chol, ys)
        return model

    @property
    def n(self):
        return len(self.ys)

    def posterior(self, theta):
        """(mu_n, sigma_n) at one point or a batch of points."""
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        pts = np.atleast_2d(theta)
        k_vec = self.kernel(self.thetas, pts)          # n x m
        mu = k_vec.T @ self._alpha
        v = _chol_forward(self._chol, k_vec)           # L^-1 k
        prior = self.kernel.of_distance(np.zeros(len(pts)))
        var = prior - np.sum(v * v, axis=0)
        sigma = np.sqrt(np.clip(var, 0.0, None))
        if single:
            return float(mu[0]), float(sigma[0])
        return mu, sigma

    def log_marginal_likelihood(self):
        n = self.n
        log_det = 2.0 * np.sum(np.log(np.diag(self._chol)))
        return float(-0.5 * self.ys @ self._alpha - 0.5 * log_det
                     - 0.5 * n * np.log(2.0 * np.pi))


def _chol_with_jitter(gram, max_jitter=1e-10):
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(gram + jitter * np.eye(gram.shape[0]))
        except np.linalg.LinAlgError:
            jitter = 1e-14 if jitter == 0.0 else jitter * 10.0
            if jitter > max_jitter:
                raise GpNumericalError(
                    f"Gram matrix not positive definite within jitter {max_jitter}")


def _chol_forward(chol, b):
    import numpy.linalg as la
    return np.linalg.solve(chol, b) if b.ndim > 1 else la.solve(chol, b)


def _chol_solve(chol, b):
    return np.linalg.solve(chol.T, np.linalg.solve(chol, b))


def gp_posterior(model, theta):
    return model.posterior(theta)


def fit_kernel_hyperparams(thetas, ys, family="matern", nu=5.5, lam=1e-4,
                           grid_size=32):
    """Pick the length scale maximizing the log marginal likelihood over a
    logarithmic grid spanning [1e-2, 1e2] x median pairwise distance."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    ys = np.asarray(ys, dtype=float)
    if len(ys) < 3:
        raise ValueError("hyperparameter fitting needs at least 3 points")
    diffs = thetas[:, None, :] - thetas[None, :, :]
    dists = np.linalg.norm(diffs, axis=-1)
    upper = dists[np.triu_indices(len(ys), k=1)]
    positive = upper[upper > 1e-12]
    if positive.size == 0:
        raise ValueError("degenerate history: all parameter vectors identical")
    median = float(np.median(positive))
    grid = median * np.logspace(-2, 2, grid_size)
    best = None
    for l in grid:
        model = GpModel.fit(Kernel(family, nu, l), lam, thetas, ys)
        mll = model.log_marginal_likelihood()
        if best is None or mll > best[0]:
            best = (mll, l)
    return Kernel(family, nu, best[1])


@dataclass
class RefinementConfig:
    c: float = 1.0
    box_low: float = -np.pi
    box_high: float = np.pi
    candidate_count: int = 64
    anchor_count: int = 10
    polish_steps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("uncertainty threshold c must be positive")
        if self.box_low >= self.box_high:
            raise ValueError("empty search box")


def _history_arrays(history):
    if hasattr(history, "data"):
        return history.data()
    thetas, ys = history
    return np.atleast_2d(np.asarray(thetas, float)), np.asarray(ys, float)


def refine_parameters(history, kernel_family="matern", nu=5.5, lam=1e-4,
                      cfg=None, kernel=None, return_model=False):
    """Minimize the surrogate mean subject to sigma_n <= c over the box.

    Candidates are the in-box history points plus seeded local perturbations
    around the best anchors; the feasible minimizer is polished by
    coordinate-wise golden-section steps that reject any move violating the
    constraint or the box.
    """
    cfg = cfg or RefinementConfig()
    thetas, ys = _history_arrays(history)
    if len(ys) == 0:
        raise ValueError("empty history")
    d = thetas.shape[1]
    if kernel is None:
        if len(ys) >= 3 and len(np.unique(thetas, axis=0)) >= 2:
            kernel = fit_kernel_hyperparams(thetas, ys, kernel_family, nu, lam)
        else:
            kernel = Kernel(kernel_family, nu, 1.0)
    model = GpModel.fit(kernel, lam, thetas, ys)

    rng = np.random.default_rng(cfg.seed)
    in_box = np.all((thetas >= cfg.box_low) & (thetas <= cfg.box_high), axis=1)
    candidates = [thetas[i] for i in range(len(ys)) if in_box[i]]
    anchors_idx = np.argsort(ys)[:cfg.anchor_count]
    radius = kernel.length_scale / 2.0
    for _ in range(cfg.candidate_count):
        anchor = thetas[rng.choice(anchors_idx)]
        trial = np.clip(anchor + rng.uniform(-radius, radius, size=d),
                        cfg.box_low, cfg.box_high)
        candidates.append(trial)
    # Box-wide samples so the surrogate minimum is reachable even when the
    # optimizer never visited its basin.
    for _ in range(cfg.candidate_count):
        candidates.append(rng.uniform(cfg.box_low, cfg.box_high, size=d))
    if not candidates:
        raise InfeasibleRefinementError("no candidate lies inside the search box")

    cand = np.array(candidates)
    mu, sigma = model.posterior(cand)
    feasible = sigma <= cfg.c
    if not np.any(feasible):
        raise InfeasibleRefinementError(
            f"no candidate satisfies sigma <= {cfg.c}; increase the threshold")
    best_idx = int(np.argmin(np.where(feasible, mu, np.inf)))
    theta_star = cand[best_idx].copy()
    mu_star, _ = model.posterior(theta_star)

    golden = (np.sqrt(5.0) - 1.0) / 2.0
    step = radius
    for it in range(cfg.polish_steps):
        i = it % max(d, 1)
        improved = False
        for direction in (-1.0, 1.0):
            trial = theta_star.copy()
            trial[i] = np.clip(trial[i] + direction * step, cfg.box_low, cfg.box_high)
            mu_t, sigma_t = model.posterior(trial)
            if sigma_t <= cfg.c and mu_t < mu_star - 1e-15:
                theta_star, mu_star = trial, mu_t
                improved = True
                break
        if not improved:
            step *= golden
    if return_model:
        return theta_star, model
    return theta_star


def select_regularizer_reeval(history, objective, lam_grid, budget,
                              kernel_family="matern", nu=5.5, cfg=None):
    """Refine under each candidate regularizer, re-measure the objective at
    each refined point with an even split of the extra budget, and return
    the regularizer with the lowest re-measured mean."""
    lam_grid = list(lam_grid)
    if not lam_grid:
        raise ValueError("empty regularizer grid")
    per_lam = max(1, budget // len(lam_grid))
    best = None
    for lam in lam_grid:
        theta = refine_parameters(history, kernel_family, nu, lam, cfg)
        samples = [float(objective(theta)) for _ in range(per_lam)]
        score = float(np.mean(samples))
        if best is None or score < best[0]:
            best = (score, lam)
    return best[1]


def _fit_sine(xs, ys):
    """Least-squares a*sin(x + phi) + b via the linear form
    p*sin(x) + q*cos(x) + b."""
    design = np.column_stack([np.sin(xs), np.cos(xs), np.ones_like(xs)])
    coeffs, *_ = np.linalg.lstsq(design, ys, rcond=None)
    p, q, b = coeffs
    return p, q, b


def _sine_value(p, q, b, xs):
    return p * np.sin(xs) + q * np.cos(xs) + b


def select_regularizer_sinefit(history, lam_grid, coord=0, m=16, seed=0,
                               kernel_family="matern", nu=5.5,
                               return_errors=False):
    """Regularizer selection without extra measurements.

    For each candidate lambda, the surrogate restricted to one coordinate
    around the optimizer's solution is fit by a sinusoid on m surrogate
    samples; a second independent sample set scores the fit, and the
    regularizer with the smallest validation error wins.
    """
    if m < 4:
        raise ValueError("sine fitting needs at least 4 samples")
    lam_grid = list(lam_grid)
    if not lam_grid:
        raise ValueError("empty regularizer grid")
    thetas, ys = _history_arrays(history)
    if len(ys) == 0:
        raise ValueError("empty history")
    d = thetas.shape[1]
    if coord < 0 or coord >= d:
        raise ValueError("coordinate index out of range")
    theta_tilde = thetas[int(np.argmin(ys))]

    rng = np.random.default_rng(seed)
    best = None
    errors = {}
    for lam in lam_grid:
        if len(ys) >= 3 and len(np.unique(thetas, axis=0)) >= 2:
            kernel = fit_kernel_hyperparams(thetas, ys, kernel_family, nu, lam)
        else:
            kernel = Kernel(kernel_family, nu, 1.0)
        model = GpModel.fit(kernel, lam, thetas, ys)

        def surrogate_samples(count):
            xs = theta_tilde[coord] + rng.uniform(-np.pi, np.pi, size=count)
            pts = np.tile(theta_tilde, (count, 1))
            pts[:, coord] = xs
            mu, _ = model.posterior(pts)
            return xs, mu

        xs_fit, ys_fit = surrogate_samples(m)
        p, q, b = _fit_sine(xs_fit, ys_fit)
        xs_val, ys_val = surrogate_samples(m)
        err = float(np.mean((_sine_value(p, q, b, xs_val) - ys_val) ** 2))
        errors[lam] = err
        if best is None or err < best[0]:
            best = (err, lam)
    if return_errors:
        return best[1], errors
    return best[1]
