"""Slip detection and low-level reactive grip control.

The reflex layer watches the fingertip normal forces, condenses them into a
single slipping coefficient in (0, 1], classifies the grasp into three classes
(firmly held / not firmly held / slipped), and issues closing corrections that
drive the coefficient back to a calibrated set point.  Everything here is a
pure function of its inputs except :class:`ReactiveLoop`, which accumulates
the per-tick corrections into a persistent motor offset.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SlipClass",
    "SlipCalibration",
    "ReactiveGain",
    "LabeledForceSample",
    "CalibrationError",
    "slipping_coefficient",
    "slip_class",
    "control_error",
    "reactive_correction",
    "combine",
    "reactive_energy",
    "calibrate",
    "count_interventions",
    "ReactiveLoop",
    "default_calibration",
    "default_gain",
    "load_force_samples",
    "save_calibration",
    "load_calibration",
]


class CalibrationError(ValueError):
    """Raised when a labeled force dataset cannot be calibrated."""


class SlipClass(enum.Enum):
    FIRMLY_HELD = "firmly_held"
    NOT_FIRMLY_HELD = "not_firmly_held"
    SLIPPED = "slipped"


@dataclass(frozen=True)
class SlipCalibration:
    """Set point and class boundaries for the slipping coefficient.

    ``alpha_des`` is the coefficient the reflex loop regulates toward,
    ``firm_threshold`` is the (exclusive) upper edge of the firmly-held class,
    ``slip_threshold`` the (inclusive) lower edge of the slipped class, and
    ``force_scale`` normalizes forces before the coefficient is computed.
    """

    alpha_des: float
    firm_threshold: float
    slip_threshold: float
    force_scale: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha_des < self.firm_threshold < self.slip_threshold < 1.0):
            raise CalibrationError(
                "require 0 < alpha_des < firm_threshold < slip_threshold < 1, got "
                f"({self.alpha_des}, {self.firm_threshold}, {self.slip_threshold})"
            )
        if self.force_scale <= 0.0:
            raise CalibrationError(f"force_scale must be positive, got {self.force_scale}")


@dataclass(frozen=True)
class ReactiveGain:
    """Per-finger gain applied to the slip error (motor units per unit error)."""

    k: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "k", np.asarray(self.k, dtype=float))
        if self.k.shape != (3,) or not np.all(self.k > 0.0):
            raise ValueError(f"gain must be 3 positive entries, got {self.k}")


@dataclass(frozen=True)
class LabeledForceSample:
    forces: np.ndarray
    label: SlipClass

    def __post_init__(self) -> None:
        object.__setattr__(self, "forces", np.asarray(self.forces, dtype=float))
        if self.forces.shape != (3,) or not np.all(np.isfinite(self.forces)) or np.any(self.forces < 0.0):
            raise ValueError(f"forces must be 3 finite nonnegative entries, got {self.forces}")


def default_calibration() -> SlipCalibration:
    """Committed fixture calibration for the simulated hand.

    The class map matches the committed sample dataset (which calibrates at
    unit force scale); the 2 N scale places the regulated grip far enough
    from the class boundary that sensor noise cannot masquerade as slipping.
    """
    return SlipCalibration(alpha_des=0.25, firm_threshold=0.3, slip_threshold=0.7, force_scale=2.0)


def default_gain() -> ReactiveGain:
    """Committed fixture gain, pinned by the closed-loop stabilization test."""
    return ReactiveGain(k=np.array([0.4, 0.4, 0.4]))


def slipping_coefficient(forces, force_scale: float = 1.0):
    """Map fingertip normal forces to a slip measure in (0, 1].

    Zero force gives 1.0 (object about to be lost); large force norms drive
    the value toward 0.  Accepts a single 3-vector (returns float) or an
    (..., 3) batch (returns an array).
    """
    if force_scale <= 0.0:
        raise ValueError(f"force_scale must be positive, got {force_scale}")
    f = np.asarray(forces, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("forces must be finite")
    scaled = f / force_scale
    nsq = np.sum(scaled * scaled, axis=-1)
    alpha = np.exp(-nsq)
    if alpha.ndim == 0:
        return float(alpha)
    return alpha


def slip_class(alpha: float, cal: SlipCalibration) -> SlipClass:
    """Classify a slipping-coefficient value; boundaries belong to the upper class."""
    if not (0.0 <= alpha <= 1.0) or not math.isfinite(alpha):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha < cal.firm_threshold:
        return SlipClass.FIRMLY_HELD
    if alpha < cal.slip_threshold:
        return SlipClass.NOT_FIRMLY_HELD
    return SlipClass.SLIPPED


def control_error(alpha: float, cal: SlipCalibration) -> float:
    """Reflex-loop error: positive when the grasp is more slippery than desired."""
    if not (0.0 <= alpha <= 1.0) or not math.isfinite(alpha):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha - cal.alpha_des


def reactive_correction(e_r: float, gain: ReactiveGain) -> np.ndarray:
    """Per-tick motor correction; positive error closes the fingers."""
    if not math.isfinite(e_r):
        raise ValueError(f"error must be finite, got {e_r}")
    return gain.k * e_r


def combine(u_p: np.ndarray, u_r: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Sum the policy command and the reactive correction, saturated into bounds."""
    b = np.asarray(bounds, dtype=float)
    u = np.asarray(u_p, dtype=float) + np.asarray(u_r, dtype=float)
    return np.clip(u, b[:, 0], b[:, 1])


def reactive_energy(e_r: float) -> float:
    """Magnitude of the reflex-loop error; 0 means no intervention needed."""
    if not math.isfinite(e_r):
        raise ValueError(f"error must be finite, got {e_r}")
    return abs(e_r)


def calibrate(
    samples: list[LabeledForceSample],
    force_scale: float = 1.0,
    margin: float = 0.05,
) -> SlipCalibration:
    """Derive class thresholds and the set point from labeled force samples.

    Each threshold is placed at the midpoint between the adjacent classes'
    extreme coefficient values; the set point sits ``margin`` below the
    firmly-held boundary.  Classes must be separable in coefficient space.
    """
    by_class: dict[SlipClass, list[float]] = {c: [] for c in SlipClass}
    for s in samples:
        by_class[s.label].append(slipping_coefficient(s.forces, force_scale))
    for c in SlipClass:
        if len(by_class[c]) < 2:
            raise CalibrationError(f"need at least 2 samples of class {c.value}, got {len(by_class[c])}")

    firm_hi = max(by_class[SlipClass.FIRMLY_HELD])
    mid_lo = min(by_class[SlipClass.NOT_FIRMLY_HELD])
    mid_hi = max(by_class[SlipClass.NOT_FIRMLY_HELD])
    slip_lo = min(by_class[SlipClass.SLIPPED])
    if firm_hi >= mid_lo:
        raise CalibrationError(
            f"classes firmly_held and not_firmly_held overlap in coefficient space "
            f"({firm_hi} >= {mid_lo})"
        )
    if mid_hi >= slip_lo:
        raise CalibrationError(
            f"classes not_firmly_held and slipped overlap in coefficient space "
            f"({mid_hi} >= {slip_lo})"
        )

    firm_threshold = (firm_hi + mid_lo) / 2.0
    slip_threshold = (mid_hi + slip_lo) / 2.0
    return SlipCalibration(
        alpha_des=firm_threshold - margin,
        firm_threshold=firm_threshold,
        slip_threshold=slip_threshold,
        force_scale=force_scale,
    )


def count_interventions(trace, threshold: float = 0.25) -> int:
    """Count ticks whose reactive energy strictly exceeds the threshold.

    Accepts anything with a ``reactive_energy`` array attribute (a rollout
    trace) or a bare sequence of energy values.
    """
    energy = getattr(trace, "reactive_energy", trace)
    energy = np.asarray(energy, dtype=float)
    return int(np.sum(energy > threshold))


class ReactiveLoop:
    """Stateful reflex controller accumulating per-tick corrections.

    A single proportional correction cannot hold the slipping coefficient at
    the set point (it leaves a command-dependent steady-state error), so the
    loop integrates the corrections into a motor offset.  The offset is
    clamped to the motor span to avoid windup.
    """

    def __init__(self, gain: ReactiveGain, calibration: SlipCalibration, bounds: np.ndarray):
        self.gain = gain
        self.calibration = calibration
        bounds = np.asarray(bounds, dtype=float)
        self._span = bounds[:, 1] - bounds[:, 0]
        self.offset = np.zeros(3)

    def reset(self) -> None:
        self.offset = np.zeros(3)

    def update(self, forces: np.ndarray) -> tuple[np.ndarray, float]:
        """Advance one tick; returns (current offset, current error)."""
        alpha = slipping_coefficient(forces, self.calibration.force_scale)
        e_r = control_error(min(1.0, max(0.0, alpha)), self.calibration)
        self.offset = np.clip(self.offset + reactive_correction(e_r, self.gain), -self._span, self._span)
        return self.offset, e_r


def load_force_samples(path: str | Path) -> list[LabeledForceSample]:
    """Read a labeled force dataset from a CSV with columns f1,f2,f3,label."""
    labels = {c.value: c for c in SlipClass}
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"f1", "f2", "f3", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise CalibrationError(f"{path}: expected CSV columns f1,f2,f3,label")
        for row in reader:
            label = row["label"].strip()
            if label not in labels:
                raise CalibrationError(f"{path}: unknown class label {label!r}")
            forces = np.array([float(row["f1"]), float(row["f2"]), float(row["f3"])])
            samples.append(LabeledForceSample(forces=forces, label=labels[label]))
    if not samples:
        raise CalibrationError(f"{path}: no samples")
    return samples


def save_calibration(path: str | Path, cal: SlipCalibration) -> None:
    with open(path, "w") as fh:
        fh.write(f"alpha_des = {cal.alpha_des!r}\n")
        fh.write(f"firm_threshold = {cal.firm_threshold!r}\n")
        fh.write(f"slip_threshold = {cal.slip_threshold!r}\n")
        fh.write(f"force_scale = {cal.force_scale!r}\n")


def load_calibration(path: str | Path) -> SlipCalibration:
    values: dict[str, float] = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = float(raw.strip())
    try:
        return SlipCalibration(**values)
    except TypeError as exc:
        raise CalibrationError(f"{path}: {exc}") from exc
