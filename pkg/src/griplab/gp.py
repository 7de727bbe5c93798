"""Gaussian-process dynamics learning and particle-based prediction.

One squared-exponential GP per state dimension learns the one-step change of
that dimension from (state, control) pairs; zero prior mean on the change
means the model reverts to "nothing happens" away from data.  Long-horizon
predictions are produced by propagating a set of particles through the
learned model with common random numbers, so a whole predicted rollout is a
deterministic, smooth function of the policy parameters and can be
differentiated numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.optimize import minimize

from .reactive import ReactiveGain, SlipCalibration

__all__ = [
    "GPHyper",
    "GaussianProcess",
    "BatchPredictor",
    "DynamicsModel",
    "StateDistribution",
    "FitError",
    "NumericError",
    "se_kernel",
    "log_marginal_likelihood",
    "fit_gp",
    "fit_dynamics",
    "make_draws",
    "initial_particles",
    "propagate",
]

JITTERS = (0.0, 1e-10, 1e-8, 1e-6)
LOG_HYPER_BOUNDS = (-10.0, 10.0)


class FitError(ValueError):
    """Raised for datasets a GP cannot be fitted to."""


class NumericError(RuntimeError):
    """Raised when the kernel matrix stays non-positive-definite after jitter escalation."""


@dataclass(frozen=True)
class GPHyper:
    """Squared-exponential hyperparameters: per-input length scales plus
    signal and noise variances."""

    length_scales: np.ndarray
    signal_variance: float
    noise_variance: float

    def __post_init__(self) -> None:
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        if np.any(ls <= 0.0) or self.signal_variance <= 0.0 or self.noise_variance <= 0.0:
            raise ValueError("all hyperparameters must be strictly positive")

    def to_log_vector(self) -> np.ndarray:
        return np.concatenate(
            [np.log(self.length_scales), [np.log(self.signal_variance), np.log(self.noise_variance)]]
        )

    @staticmethod
    def from_log_vector(v: np.ndarray) -> "GPHyper":
        v = np.asarray(v, dtype=float)
        return GPHyper(
            length_scales=np.exp(v[:-2]),
            signal_variance=float(np.exp(v[-2])),
            noise_variance=float(np.exp(v[-1])),
        )


def se_kernel(a: np.ndarray, b: np.ndarray, hyper: GPHyper) -> float:
    """Squared-exponential covariance between two input points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = (a - b) / hyper.length_scales
    return float(hyper.signal_variance * np.exp(-0.5 * np.dot(d, d)))


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, length_scales: np.ndarray) -> np.ndarray:
    """Pairwise squared distances after per-dimension scaling; shape (len(A), len(B))."""
    As = A / length_scales
    Bs = B / length_scales
    a2 = np.sum(As * As, axis=1)[:, None]
    b2 = np.sum(Bs * Bs, axis=1)[None, :]
    return np.maximum(a2 + b2 - 2.0 * As @ Bs.T, 0.0)


def _kernel_matrix(A: np.ndarray, B: np.ndarray, hyper: GPHyper) -> np.ndarray:
    return hyper.signal_variance * np.exp(-0.5 * _scaled_sqdist(A, B, hyper.length_scales))


def _chol_with_jitter(K: np.ndarray):
    """Cholesky factorization with escalating diagonal jitter; returns (factor, jitter)."""
    for jitter in JITTERS:
        try:
            return cho_factor(K + jitter * np.eye(K.shape[0]), lower=True), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericError("kernel matrix is not positive definite even after jitter escalation")


def log_marginal_likelihood(
    X: np.ndarray, y: np.ndarray, hyper: GPHyper
) -> tuple[float, np.ndarray]:
    """Exact log evidence of the data under the GP, plus its gradient.

    The gradient is taken with respect to the *logs* of the hyperparameters,
    ordered (length scales..., signal variance, noise variance).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    D = _scaled_sqdist(X, X, hyper.length_scales)
    R = np.exp(-0.5 * D)
    K = hyper.signal_variance * R + hyper.noise_variance * np.eye(n)
    factor, _ = _chol_with_jitter(K)
    alpha = cho_solve(factor, y)
    L = factor[0]
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * np.log(2.0 * np.pi)

    # tmp = alpha alpha^T - K^{-1}; grad_j = 0.5 tr(tmp dK/dtheta_j)
    K_inv = cho_solve(factor, np.eye(n))
    tmp = np.outer(alpha, alpha) - K_inv
    sR = hyper.signal_variance * R
    grad = np.empty(hyper.length_scales.size + 2)
    scaled = X / hyper.length_scales
    for d in range(hyper.length_scales.size):
        diff = scaled[:, d][:, None] - scaled[:, d][None, :]
        dK = sR * (diff * diff)  # d/dlog(ls_d)
        grad[d] = 0.5 * float(np.sum(tmp * dK))
    grad[-2] = 0.5 * float(np.sum(tmp * sR))
    grad[-1] = 0.5 * hyper.noise_variance * float(np.trace(tmp))
    return lml, grad


class GaussianProcess:
    """A fitted single-output GP with cached factorization."""

    def __init__(self, X: np.ndarray, y: np.ndarray, hyper: GPHyper):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.hyper = hyper
        K = _kernel_matrix(self.X, self.X, hyper) + hyper.noise_variance * np.eye(len(self.y))
        factor, self.jitter = _chol_with_jitter(K)
        self._factor = factor
        self.alpha = cho_solve(factor, self.y)
        self._K_inv = cho_solve(factor, np.eye(len(self.y)))
        self._X_scaled = self.X / hyper.length_scales

    def predict(self, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and (latent) variance at query inputs, shape (m,)."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Qs = Xq / self.hyper.length_scales
        q2 = np.sum(Qs * Qs, axis=1)[:, None]
        x2 = np.sum(self._X_scaled * self._X_scaled, axis=1)[None, :]
        sq = np.maximum(q2 + x2 - 2.0 * Qs @ self._X_scaled.T, 0.0)
        k_star = self.hyper.signal_variance * np.exp(-0.5 * sq)
        mean = k_star @ self.alpha
        var = self.hyper.signal_variance - np.sum((k_star @ self._K_inv) * k_star, axis=1)
        return mean, np.clip(var, 0.0, None)


def _initial_hyper(X: np.ndarray, y: np.ndarray, ls_floor: np.ndarray | None) -> GPHyper:
    ls = np.std(X, axis=0)
    ls[ls == 0.0] = 1.0
    if ls_floor is not None:
        ls = np.maximum(ls, ls_floor)
    sf = max(float(np.std(y)), 1e-3)
    return GPHyper(length_scales=ls, signal_variance=sf**2, noise_variance=(0.1 * sf) ** 2)


def fit_gp(
    X: np.ndarray,
    y: np.ndarray,
    init: GPHyper | None = None,
    optimize: bool = True,
    restarts: int = 3,
    seed: int = 0,
    ls_floor: np.ndarray | None = None,
) -> GaussianProcess:
    """Fit one GP output dimension, optimizing the log evidence from
    ``restarts`` perturbed starting points.

    ``ls_floor`` puts a per-dimension lower bound on the length scales;
    rollout data can leave input dimensions barely excited, and without the
    floor the evidence happily declares them irrelevant, killing the policy
    gradients that must reach through them.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise FitError(f"inputs and targets disagree: {X.shape[0]} vs {y.shape[0]}")
    if X.shape[0] < 2:
        raise FitError("need at least 2 data points")
    if np.all(np.all(X == X[0], axis=1)):
        raise FitError("all training inputs are identical")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise FitError("training data must be finite")

    hyper = init if init is not None else _initial_hyper(X, y, ls_floor)
    if not optimize:
        return GaussianProcess(X, y, hyper)

    def objective(v: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            lml, grad = log_marginal_likelihood(X, y, GPHyper.from_log_vector(v))
        except NumericError:
            return 1e25, np.zeros_like(v)
        return -lml, -grad

    rng = np.random.default_rng(seed)
    v0 = hyper.to_log_vector()
    lo = np.full(v0.size, LOG_HYPER_BOUNDS[0])
    if ls_floor is not None:
        lo[: ls_floor.size] = np.log(ls_floor)
    hi = np.full(v0.size, LOG_HYPER_BOUNDS[1])
    starts = [v0] + [v0 + rng.normal(0.0, 0.5, size=v0.size) for _ in range(restarts - 1)]
    bounds = list(zip(lo, hi))
    best_v, best_f = v0, objective(v0)[0]
    for start in starts:
        res = minimize(objective, np.clip(start, lo, hi), jac=True,
                       method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and res.fun < best_f:
            best_v, best_f = res.x, res.fun
    return GaussianProcess(X, y, GPHyper.from_log_vector(best_v))


class BatchPredictor:
    """All output dimensions of a dynamics model fused into stacked arrays.

    Used on the hot path of particle propagation, where thousands of small
    per-dimension predictions would otherwise dominate the runtime.
    """

    def __init__(self, gps: list[GaussianProcess]):
        ls = np.stack([gp.hyper.length_scales for gp in gps])          # (K, d)
        self._inv_ls = 1.0 / ls
        self._Xs = np.stack([gp._X_scaled for gp in gps])              # (K, n, d)
        self._x2 = np.sum(self._Xs * self._Xs, axis=2)                 # (K, n)
        self._alpha = np.stack([gp.alpha for gp in gps])               # (K, n)
        self._K_inv = np.stack([gp._K_inv for gp in gps])              # (K, n, n)
        self._sf2 = np.array([gp.hyper.signal_variance for gp in gps]) # (K,)

    def predict_delta(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of the state change at query inputs.

        Z has shape (M, d); both returns have shape (M, K).
        """
        Q = Z[None, :, :] * self._inv_ls[:, None, :]                   # (K, M, d)
        q2 = np.sum(Q * Q, axis=2)                                     # (K, M)
        sq = q2[:, :, None] + self._x2[:, None, :] - 2.0 * (Q @ self._Xs.transpose(0, 2, 1))
        k_star = self._sf2[:, None, None] * np.exp(-0.5 * np.maximum(sq, 0.0))
        mean = np.einsum("kmn,kn->km", k_star, self._alpha)
        quad = np.einsum("kmn,kmn->km", k_star @ self._K_inv, k_star)
        var = np.clip(self._sf2[:, None] - quad, 0.0, None)
        return mean.T, var.T


@dataclass
class DynamicsModel:
    """Per-dimension GPs over the one-step state change, plus input metadata."""

    gps: list[GaussianProcess]
    state_dim: int
    control_dim: int = 3

    def batch_predictor(self) -> BatchPredictor:
        return BatchPredictor(self.gps)

    def predict(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Next-state mean and variance for a batch of (state, control) pairs.

        Means are absolute next states (the learned change is added back onto
        the query state); variances are per-dimension.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        Z = np.hstack([x, u])
        means = np.empty((Z.shape[0], self.state_dim))
        variances = np.empty((Z.shape[0], self.state_dim))
        for d, gp in enumerate(self.gps):
            mean_delta, var = gp.predict(Z)
            means[:, d] = x[:, d] + mean_delta
            variances[:, d] = var
        return means, variances


def fit_dynamics(
    states: np.ndarray,
    controls: np.ndarray,
    next_states: np.ndarray,
    optimize: bool = True,
    init: GPHyper | None = None,
    seed: int = 0,
    max_points: int | None = None,
    ls_floor: np.ndarray | None = None,
) -> DynamicsModel:
    """Fit the one-step dynamics model from observed transitions.

    With ``max_points`` set, larger datasets are thinned by a deterministic
    uniform stride to bound the cost of later predictions.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    if max_points is not None and states.shape[0] > max_points:
        idx = np.unique(np.linspace(0, states.shape[0] - 1, max_points).astype(int))
        states, controls, next_states = states[idx], controls[idx], next_states[idx]
    Z = np.hstack([states, controls])
    deltas = next_states - states
    gps = [
        fit_gp(Z, deltas[:, d], init=init, optimize=optimize, seed=seed + d, ls_floor=ls_floor)
        for d in range(states.shape[1])
    ]
    return DynamicsModel(gps=gps, state_dim=states.shape[1], control_dim=controls.shape[1])


@dataclass(frozen=True)
class StateDistribution:
    """Gaussian over the learner-visible state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")

    @staticmethod
    def at_point(x: np.ndarray) -> "StateDistribution":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return StateDistribution(mean=x, cov=np.zeros((x.size, x.size)))


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = eigh(cov)
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


def initial_particles(init: StateDistribution, z0: np.ndarray) -> np.ndarray:
    """Materialize the particle cloud of a state distribution from unit draws."""
    return init.mean + z0 @ _psd_sqrt(init.cov).T


def _standardize(z: np.ndarray) -> np.ndarray:
    """Force each column of draws to exact zero mean and unit variance.

    The draws are policy-independent constants, so this keeps the propagation
    deterministic and smooth while removing sampling bias from the first two
    moments.  Degenerate batches (fewer than 2 particles) collapse to zero.
    """
    if z.shape[0] < 2:
        return np.zeros_like(z)
    z = z - z.mean(axis=0)
    s = z.std(axis=0)
    s[s == 0.0] = 1.0
    return z / s


def _action_fn(policy):
    if callable(policy):
        return policy

    A = np.asarray(policy.A, dtype=float)
    b = np.asarray(policy.b, dtype=float)
    bounds = np.asarray(policy.bounds, dtype=float)

    def act(states: np.ndarray) -> np.ndarray:
        return np.clip(states @ A.T + b, bounds[:, 0], bounds[:, 1])

    return act


def make_draws(seed: int, horizon: int, n_particles: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """The common random numbers behind a seeded propagation.

    Returns (initial draws (N, D), step draws (T, N, D)), standardized so the
    particle cloud carries the exact first two moments of each predictive
    distribution.  Precompute these once when many propagations share a seed.
    """
    rng = np.random.default_rng(seed)
    z0 = _standardize(rng.standard_normal((n_particles, dim)))
    z_steps = rng.standard_normal((horizon, n_particles, dim))
    for t in range(horizon):
        z_steps[t] = _standardize(z_steps[t])
    return z0, z_steps


def propagate(
    model: DynamicsModel,
    policy,
    init: StateDistribution,
    horizon: int,
    calibration: SlipCalibration | None = None,
    gain: ReactiveGain | None = None,
    seed: int = 0,
    n_particles: int = 300,
    bounds: np.ndarray | None = None,
    initial_reactive_offset: np.ndarray | None = None,
) -> np.ndarray:
    """Predict a rollout as a particle cloud; returns shape (horizon+1, N, D).

    Index 0 holds the initial particles.  Each step every particle takes its
    command from the policy, the modeled reflex loop (when ``calibration``
    and ``gain`` are given) adds its accumulated closing offset, and the next
    state is sampled from the GP posterior using normal draws fixed by
    ``seed``.  With the seed held constant the entire trajectory cloud is a
    deterministic, smooth function of the policy parameters.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    D = model.state_dim
    act = _action_fn(policy)
    if bounds is None and not callable(policy):
        bounds = np.asarray(policy.bounds, dtype=float)
    reactive = calibration is not None and gain is not None
    if reactive and D < 4:
        raise ValueError("the modeled reflex loop needs force dimensions in the state")
    if reactive and bounds is None:
        raise ValueError("reflex-in-the-loop propagation needs motor bounds")

    z0, z_steps = make_draws(seed, horizon, n_particles, D)
    predictor = model.batch_predictor()

    states = np.empty((horizon + 1, n_particles, D))
    states[0] = initial_particles(init, z0)

    if reactive:
        span = bounds[:, 1] - bounds[:, 0]
        offset = np.zeros((n_particles, 3))
        if initial_reactive_offset is not None:
            offset = offset + np.asarray(initial_reactive_offset, dtype=float)

    for t in range(horizon):
        x = states[t]
        u = act(x)
        if reactive:
            forces = x[:, 1:4] / calibration.force_scale
            alpha = np.clip(np.exp(-np.sum(forces * forces, axis=1)), 0.0, 1.0)
            e_r = alpha - calibration.alpha_des
            offset = np.clip(offset + e_r[:, None] * gain.k[None, :], -span, span)
            u = np.clip(u + offset, bounds[:, 0], bounds[:, 1])
        mean_delta, var = predictor.predict_delta(np.hstack([x, u]))
        states[t + 1] = x + mean_delta + np.sqrt(var) * z_steps[t]
    return states
