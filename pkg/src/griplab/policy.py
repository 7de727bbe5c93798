"""Linear policies, rollout costs, and gradient-based policy improvement.

The policy is an affine map from the observed state to motor commands,
saturated into the grasp-time motor bounds.  Its parameters are improved by
quasi-Newton descent on the expected return of particle-predicted rollouts;
because the particles use common random numbers, the return is a smooth
deterministic function of the parameters and finite differences give usable
gradients.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .gp import DynamicsModel, StateDistribution, initial_particles, make_draws, propagate
from .reactive import ReactiveGain, SlipCalibration

__all__ = [
    "Condition",
    "Policy",
    "CostSpec",
    "OptimizationError",
    "policy_action",
    "step_cost",
    "make_step_cost",
    "expected_return",
    "improve_policy",
    "random_policy",
]


class OptimizationError(RuntimeError):
    """Raised when policy improvement encounters a non-finite return."""


class Condition(enum.Enum):
    """The three learning setups compared by the experiments."""

    VISUAL = "visual"
    VISUO_TACTILE = "visuotactile"
    SYNERGY = "synergy"


@dataclass
class Policy:
    """Affine state-to-command map with saturation bounds.

    ``A`` has shape (3, state_dim): state_dim is 4 for the full observation
    and 1 when the learner sees only the object yaw.
    """

    A: np.ndarray
    b: np.ndarray
    bounds: np.ndarray

    def __post_init__(self) -> None:
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float)
        self.bounds = np.asarray(self.bounds, dtype=float)
        if self.A.shape[0] != 3 or self.b.shape != (3,) or self.bounds.shape != (3, 2):
            raise ValueError(
                f"expected A (3, d), b (3,), bounds (3, 2); got {self.A.shape}, "
                f"{self.b.shape}, {self.bounds.shape}"
            )
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("policy parameters must be finite")

    @property
    def state_dim(self) -> int:
        return self.A.shape[1]

    def theta(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.b])

    def with_theta(self, theta: np.ndarray) -> "Policy":
        d = self.state_dim
        return Policy(A=theta[: 3 * d].reshape(3, d), b=theta[3 * d :], bounds=self.bounds)


def policy_action(policy: Policy, x) -> np.ndarray:
    """Evaluate the policy at one observation; the command is saturated."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (policy.state_dim,):
        raise ValueError(f"state has dimension {x.shape}, policy expects ({policy.state_dim},)")
    u = policy.A @ x + policy.b
    return np.clip(u, policy.bounds[:, 0], policy.bounds[:, 1])


@dataclass(frozen=True)
class CostSpec:
    """Which per-tick cost the learner minimizes.

    VISUAL scores only the yaw error; VISUO_TACTILE averages the yaw error
    with a force-target term; SYNERGY mixes the yaw error with the reflex
    loop's intervention magnitude.  All variants stay inside [0, 1].
    """

    variant: Condition
    phi_des: float
    f_des: np.ndarray | None = None
    lambda1: float = 0.5
    lambda2: float = 0.5
    alpha_des: float = 0.25

    def __post_init__(self) -> None:
        if not (0.0 <= self.lambda1 <= 1.0 and 0.0 <= self.lambda2 <= 1.0):
            raise ValueError("cost weights must lie in [0, 1]")
        if abs(self.lambda1 + self.lambda2 - 1.0) > 1e-12:
            raise ValueError("cost weights must sum to 1")
        if self.f_des is not None:
            object.__setattr__(self, "f_des", np.asarray(self.f_des, dtype=float))
        if self.variant is Condition.VISUO_TACTILE and self.f_des is None:
            raise ValueError("the visuo-tactile cost needs a force target")


def step_cost(x, e_r: float, spec: CostSpec) -> float:
    """Instantaneous cost of one observation (angles in radians)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    phi_err = x[0] - spec.phi_des
    goal_term = 1.0 - np.exp(-(phi_err * phi_err))
    if spec.variant is Condition.VISUAL:
        return float(goal_term)
    if spec.variant is Condition.VISUO_TACTILE:
        df = x[1:4] - spec.f_des
        b = np.exp(-float(df @ df))
        a = np.exp(-(phi_err * phi_err))
        return float(1.0 - (0.5 * a + 0.5 * b))
    return float(spec.lambda1 * goal_term + spec.lambda2 * abs(e_r))


def make_step_cost(spec: CostSpec, force_scale: float = 1.0):
    """Build the batched cost: states (N, D) -> costs (N,).

    The synergy variant recomputes the reflex error from the force entries of
    each state, so predicted rollouts are scored exactly like real ones.
    """

    def cost(states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        phi_err = states[:, 0] - spec.phi_des
        goal_term = 1.0 - np.exp(-(phi_err * phi_err))
        if spec.variant is Condition.VISUAL:
            return goal_term
        if spec.variant is Condition.VISUO_TACTILE:
            df = states[:, 1:4] - spec.f_des
            b = np.exp(-np.sum(df * df, axis=1))
            return 1.0 - (0.5 * (1.0 - goal_term) + 0.5 * b)
        f = states[:, 1:4] / force_scale
        alpha = np.clip(np.exp(-np.sum(f * f, axis=1)), 0.0, 1.0)
        return spec.lambda1 * goal_term + spec.lambda2 * np.abs(alpha - spec.alpha_des)

    return cost


def expected_return(
    model: DynamicsModel,
    policy: Policy,
    cost,
    horizon: int,
    seed: int,
    init: StateDistribution,
    calibration: SlipCalibration | None = None,
    gain: ReactiveGain | None = None,
    n_particles: int = 300,
    initial_reactive_offset: np.ndarray | None = None,
) -> float:
    """Expected summed cost over t = 0..horizon of predicted rollouts.

    ``cost`` is either a CostSpec or a batched callable states -> costs.
    """
    cost_fn = make_step_cost(cost, 1.0 if calibration is None else calibration.force_scale) \
        if isinstance(cost, CostSpec) else cost
    states = propagate(
        model,
        policy,
        init,
        horizon,
        calibration=calibration,
        gain=gain,
        seed=seed,
        n_particles=n_particles,
        initial_reactive_offset=initial_reactive_offset,
    )
    return float(sum(np.mean(cost_fn(states[t])) for t in range(horizon + 1)))


def _ensemble_returns(
    thetas: np.ndarray,
    template: Policy,
    predictor,
    cost_fn,
    horizon: int,
    x0: np.ndarray,
    z_steps: np.ndarray,
    calibration: SlipCalibration | None,
    gain: ReactiveGain | None,
    initial_reactive_offset: np.ndarray | None,
) -> np.ndarray:
    """Search objective (expected return plus saturation barrier) for many
    policies under shared random draws.

    Every finite-difference probe of the policy search sees exactly the same
    particle noise, so the whole batch costs one propagation instead of one
    per probe.  ``thetas`` has shape (P, n_params); returns shape (P,).
    """
    P = thetas.shape[0]
    N, D = x0.shape
    d = template.state_dim
    A_all = thetas[:, : 3 * d].reshape(P, 3, d)
    b_all = thetas[:, 3 * d :]
    bounds = template.bounds
    reactive = calibration is not None and gain is not None
    if reactive:
        span = bounds[:, 1] - bounds[:, 0]
        offset = np.zeros((P, N, 3))
        if initial_reactive_offset is not None:
            offset = offset + np.asarray(initial_reactive_offset, dtype=float)

    x = np.broadcast_to(x0, (P, N, D)).copy()
    J = np.full(P, float(np.mean(cost_fn(x0))))
    barrier = np.zeros(P)
    for t in range(horizon):
        u = np.einsum("pnd,pkd->pnk", x, A_all) + b_all[:, None, :]
        # Commands driven deep past the motor bounds sit on a flat of the
        # clamped objective where finite differences see nothing; a small
        # quadratic barrier keeps a restoring gradient alive out there.
        over = np.maximum(u - bounds[:, 1], 0.0) + np.maximum(bounds[:, 0] - u, 0.0)
        barrier += 1e-3 * np.sum(over * over, axis=2).mean(axis=1)
        np.clip(u, bounds[:, 0], bounds[:, 1], out=u)
        if reactive:
            f = x[:, :, 1:4] / calibration.force_scale
            alpha = np.clip(np.exp(-np.sum(f * f, axis=2)), 0.0, 1.0)
            e_r = alpha - calibration.alpha_des
            offset = np.clip(offset + e_r[:, :, None] * gain.k, -span, span)
            u = np.clip(u + offset, bounds[:, 0], bounds[:, 1])
        Z = np.concatenate([x, u], axis=2).reshape(P * N, D + 3)
        mean_delta, var = predictor.predict_delta(Z)
        x = x + mean_delta.reshape(P, N, D) + np.sqrt(var).reshape(P, N, D) * z_steps[t]
        J += cost_fn(x.reshape(P * N, D)).reshape(P, N).mean(axis=1)
    return J + barrier


def improve_policy(
    model: DynamicsModel,
    init_policy: Policy,
    cost,
    horizon: int,
    seed: int,
    init: StateDistribution,
    calibration: SlipCalibration | None = None,
    gain: ReactiveGain | None = None,
    n_particles: int = 300,
    initial_reactive_offset: np.ndarray | None = None,
    max_iter: int = 200,
    fd_step: float = 1e-6,
) -> Policy:
    """Locally minimize the expected return over the policy parameters.

    Quasi-Newton descent with finite-difference gradients over the seeded
    particle objective; the same seed is used for every evaluation, so the
    returned policy never scores worse than the starting one.  Stops on
    gradient norm below 1e-5, negligible steps, or ``max_iter`` iterations.
    """
    cost_fn = make_step_cost(cost, 1.0 if calibration is None else calibration.force_scale) \
        if isinstance(cost, CostSpec) else cost
    z0, z_steps = make_draws(seed, horizon, n_particles, init.mean.size)
    x0 = initial_particles(init, z0)
    predictor = model.batch_predictor()
    theta0 = init_policy.theta()
    n_params = theta0.size
    probes = fd_step * np.eye(n_params)

    def fun_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        thetas = np.vstack([theta, theta + probes])
        Js = _ensemble_returns(
            thetas, init_policy, predictor, cost_fn, horizon, x0, z_steps,
            calibration, gain, initial_reactive_offset,
        )
        if not np.all(np.isfinite(Js)):
            raise OptimizationError(f"non-finite return at theta={theta}")
        grad = (Js[1:] - Js[0]) / fd_step
        return float(Js[0]), grad

    res = minimize(
        fun_and_grad,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": 1e-5, "ftol": 1e-12},
    )

    def plain_return(policy: Policy) -> float:
        return expected_return(
            model, policy, cost_fn, horizon, seed, init,
            calibration=calibration, gain=gain, n_particles=n_particles,
            initial_reactive_offset=initial_reactive_offset,
        )

    candidate = init_policy.with_theta(res.x)
    if np.isfinite(res.fun) and plain_return(candidate) <= plain_return(init_policy):
        return candidate
    return init_policy


def random_policy(
    state_dim: int,
    bounds: np.ndarray,
    seed: int,
    initial_state: np.ndarray,
    scale: float = 1.0,
) -> Policy:
    """Zero-mean Gaussian policy parameters, shrunk until the command at the
    initial state lies strictly inside the motor bounds."""
    bounds = np.asarray(bounds, dtype=float)
    if not np.all((bounds[:, 0] < 0.0) & (0.0 < bounds[:, 1])):
        raise ValueError("motor bounds must strictly contain zero for a zero-mean policy")
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, scale, size=(3, state_dim))
    b = rng.normal(0.0, scale, size=3)
    x0 = np.atleast_1d(np.asarray(initial_state, dtype=float))
    u0 = A @ x0 + b
    while np.any(u0 <= bounds[:, 0]) or np.any(u0 >= bounds[:, 1]):
        A *= 0.7
        b *= 0.7
        u0 = A @ x0 + b
    return Policy(A=A, b=b, bounds=bounds)
