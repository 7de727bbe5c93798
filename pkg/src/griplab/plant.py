"""Ground-truth simulator of the hand/object system.

The plant stands in for the unknown dynamics of a compliant, underactuated
three-finger hand holding an object.  Motor commands set finger closure
positions instantly; fingertip normal forces arise from how deeply each
finger presses *against opposition* (a one-sided push loses the object and
produces no force).  Rolling contact makes the object's yaw relax toward an
equilibrium offset from the grasp pose in proportion to the differential
finger position, so holding the fingers still holds the object still.  Poor
grips roll sluggishly, sag downward (shifting the grasp reference for good),
and after enough consecutive slipping ticks the object irreversibly falls.

All angles are radians.  The plant classifies its own grip each tick through
the same slip classifier the reflex layer uses, so the two never disagree.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .reactive import SlipClass, default_calibration, slip_class, slipping_coefficient

__all__ = [
    "PlantConfig",
    "PlantState",
    "State",
    "Event",
    "Plant",
    "ConfigurationError",
    "IrreversibleEventError",
    "default_plant_config",
]


YAW_TRACK_RATE = 0.05
"""Fraction of the pose error the rolling contact closes per tick at full grip."""


class ConfigurationError(ValueError):
    """Raised for invalid plant configurations."""


class IrreversibleEventError(RuntimeError):
    """Raised when stepping a plant whose object has already fallen."""


class Event(enum.Enum):
    NONE = "none"
    FELL = "fell"


@dataclass(frozen=True)
class PlantConfig:
    """Immutable plant parameters.

    contact_positions: motor position at which each fingertip touches the
        object (motor units, 3 entries).
    motor_bounds: admissible command interval per finger, shape (3, 2).
    force_gain: newtons of normal force per motor unit of opposed closure.
    force_saturation: force ceiling in newtons.
    rotation_gain: equilibrium yaw change per motor unit of differential
        finger position (rad per motor unit).
    slip_drift_rate: yaw lost per tick while the grip is not firm (rad).
    slip_fall_ticks: consecutive non-firm ticks before the object falls.
    quick_fall_ticks: consecutive slipped-class ticks before it falls.
    process_noise_std: per-dimension std of the additive state noise,
        4 entries for (yaw, f1, f2, f3); a scalar is broadcast.
    tick_duration: simulated seconds per tick.
    rng_seed: seed for the plant's private noise stream.
    """

    contact_positions: np.ndarray
    motor_bounds: np.ndarray
    force_gain: float
    force_saturation: float
    rotation_gain: float
    slip_drift_rate: float
    slip_fall_ticks: int
    quick_fall_ticks: int
    process_noise_std: np.ndarray
    tick_duration: float
    rng_seed: int

    def __post_init__(self) -> None:
        contact = np.asarray(self.contact_positions, dtype=float)
        bounds = np.asarray(self.motor_bounds, dtype=float)
        noise = np.broadcast_to(np.asarray(self.process_noise_std, dtype=float), (4,)).copy()
        object.__setattr__(self, "contact_positions", contact)
        object.__setattr__(self, "motor_bounds", bounds)
        object.__setattr__(self, "process_noise_std", noise)
        if contact.shape != (3,):
            raise ConfigurationError(f"contact_positions must have 3 entries, got {contact.shape}")
        if bounds.shape != (3, 2) or np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ConfigurationError("motor_bounds must be 3 nonempty intervals")
        if np.any(contact < bounds[:, 0]) or np.any(contact > bounds[:, 1]):
            raise ConfigurationError("each motor interval must contain its contact position")
        if min(self.force_gain, self.force_saturation, self.rotation_gain) <= 0.0:
            raise ConfigurationError("force_gain, force_saturation, rotation_gain must be positive")
        if self.slip_drift_rate < 0.0 or np.any(noise < 0.0):
            raise ConfigurationError("slip_drift_rate and noise stds must be nonnegative")
        if not (self.slip_fall_ticks > self.quick_fall_ticks > 0):
            raise ConfigurationError("require slip_fall_ticks > quick_fall_ticks > 0")
        if self.tick_duration <= 0.0:
            raise ConfigurationError("tick_duration must be positive")


def default_plant_config(rng_seed: int = 0) -> PlantConfig:
    """Committed fixture plant used by the experiments and the test suite."""
    # Motor zero is the registered grasp posture; contact sits at the lower
    # bound, so commands below it only open the hand to the contact point.
    return PlantConfig(
        contact_positions=np.full(3, -2.0),
        motor_bounds=np.array([[-2.0, 6.0]] * 3),
        force_gain=1.0,
        force_saturation=10.0,
        rotation_gain=0.3,
        slip_drift_rate=0.002,
        slip_fall_ticks=1000,
        quick_fall_ticks=30,
        process_noise_std=np.array([0.001, 0.03, 0.03, 0.03]),
        tick_duration=0.01,
        rng_seed=rng_seed,
    )


@dataclass
class PlantState:
    """Full (hidden) plant state; ``fallen`` never reverts within a rollout."""

    yaw: float
    forces: np.ndarray
    closure: np.ndarray
    slip_timer: int = 0
    fallen: bool = False


@dataclass(frozen=True)
class State:
    """The observation visible to the learner: yaw plus fingertip forces."""

    yaw: float
    forces: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate(([self.yaw], self.forces))

    @staticmethod
    def from_vector(v: np.ndarray) -> "State":
        v = np.asarray(v, dtype=float)
        return State(yaw=float(v[0]), forces=v[1:4].copy())


class Plant:
    """Seeded, deterministic simulator instance.

    ``reset`` re-seeds the private noise stream, so identical
    (config, seed, command sequence) triples give bitwise-identical traces.
    A plant instance must not be shared between threads; the config may.
    """

    def __init__(self, config: PlantConfig):
        self.config = config
        self._cal = default_calibration()
        self._rng = np.random.default_rng(config.rng_seed)
        self._grasp_yaw = 0.0

    def reset(self, initial_yaw: float, grip_offset: float = 2.0) -> PlantState:
        """Start a fresh grasp: fingers closed ``grip_offset`` past contact.

        The default offset produces a firmly-held grip on the fixture plant.
        The grasp pose becomes the reference for rolling: a symmetric grip
        holds the object at ``initial_yaw``.
        """
        if not np.isfinite(initial_yaw):
            raise ConfigurationError(f"initial_yaw must be finite, got {initial_yaw}")
        cfg = self.config
        self._rng = np.random.default_rng(cfg.rng_seed)
        self._grasp_yaw = float(initial_yaw)
        closure = np.clip(cfg.contact_positions + grip_offset, cfg.motor_bounds[:, 0], cfg.motor_bounds[:, 1])
        forces = self._closure_forces(closure)
        return PlantState(yaw=float(initial_yaw), forces=forces, closure=closure)

    def step(self, state: PlantState, command: np.ndarray) -> tuple[PlantState, Event]:
        """Apply one motor command for one tick."""
        if state.fallen:
            raise IrreversibleEventError("the object has fallen; reset the plant")
        cfg = self.config
        u = np.clip(np.asarray(command, dtype=float), cfg.motor_bounds[:, 0], cfg.motor_bounds[:, 1])

        noise = self._rng.normal(0.0, 1.0, size=4) * cfg.process_noise_std
        forces = np.clip(self._closure_forces(u) + noise[1:], 0.0, cfg.force_saturation)

        alpha = slipping_coefficient(forces, self._cal.force_scale)
        grip = slip_class(alpha, self._cal)

        differential = u[0] - (u[1] + u[2]) / 2.0
        if grip is SlipClass.FIRMLY_HELD:
            quality = 1.0
        else:
            quality = max(0.0, (1.0 - alpha) / (1.0 - self._cal.firm_threshold))
        yaw_eq = self._grasp_yaw + cfg.rotation_gain * differential
        yaw = state.yaw + YAW_TRACK_RATE * (yaw_eq - state.yaw) * quality + noise[0]
        if grip is not SlipClass.FIRMLY_HELD:
            yaw -= cfg.slip_drift_rate
            self._grasp_yaw -= cfg.slip_drift_rate

        slip_timer = 0 if grip is SlipClass.FIRMLY_HELD else state.slip_timer + 1
        fell = slip_timer > cfg.slip_fall_ticks or (
            grip is SlipClass.SLIPPED and slip_timer > cfg.quick_fall_ticks
        )

        new_state = PlantState(
            yaw=float(yaw), forces=forces, closure=u, slip_timer=slip_timer, fallen=fell
        )
        return new_state, Event.FELL if fell else Event.NONE

    def observe(self, state: PlantState) -> State:
        """Project the hidden state onto the learner-visible observation."""
        return State(yaw=state.yaw, forces=state.forces.copy())

    def _closure_forces(self, closure: np.ndarray) -> np.ndarray:
        """Opposed-penetration force law.

        A finger produces force only up to the depth its opposition also
        presses: the thumb is opposed by the mean of index and middle, each
        of those by the thumb.  Pressing with one side alone pushes the
        object away instead of squeezing it.
        """
        cfg = self.config
        pen = np.maximum(closure - cfg.contact_positions, 0.0)
        opposition = np.array([(pen[1] + pen[2]) / 2.0, pen[0], pen[0]])
        return np.clip(cfg.force_gain * np.minimum(pen, opposition), 0.0, cfg.force_saturation)
