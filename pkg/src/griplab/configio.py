"""Plain-text experiment configuration files.

The format is flat ``key = value`` lines with ``#`` comments.  Vectors are
comma-separated; motor bounds use ``lo:hi`` pairs.  Angles are given in
degrees in the file and converted to radians at this boundary.  Every key is
optional: omitted keys take the committed fixture defaults, so a minimal
config is just ``condition = synergy`` and ``task = cup``.
"""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .harness import TASKS, ExperimentConfig, make_experiment_config
from .plant import PlantConfig, default_plant_config
from .policy import Condition, CostSpec
from .reactive import ReactiveGain, SlipCalibration, default_calibration

__all__ = ["ConfigFileError", "parse_config_text", "load_config", "config_to_text", "save_config"]

KNOWN_KEYS = {
    "condition", "task", "goal_deg", "start_deg", "n_trials", "max_rollouts",
    "episode_ticks", "hold_ticks", "tolerance_deg", "ticks_per_policy_step",
    "n_particles", "improve_max_iter", "gp_max_points", "n_jobs", "master_seed",
    "seeds", "policy_scale", "grip_offset",
    "reactive",
    "plant.contact_positions", "plant.motor_bounds", "plant.force_gain",
    "plant.force_saturation", "plant.rotation_gain", "plant.slip_drift_rate",
    "plant.slip_fall_ticks", "plant.quick_fall_ticks", "plant.process_noise_std",
    "plant.tick_duration", "plant.rng_seed",
    "calibration.alpha_des", "calibration.firm_threshold", "calibration.slip_threshold",
    "calibration.force_scale",
    "gain.k",
    "cost.lambda1", "cost.lambda2", "cost.f_des", "cost.alpha_des",
}


class ConfigFileError(ValueError):
    """Raised for malformed or unknown configuration entries."""


def _parse_kv(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise ConfigFileError(f"line {lineno}: unknown key {key!r}")
        entries[key] = value.strip()
    return entries


def _floats(value: str) -> np.ndarray:
    return np.array([float(p) for p in value.split(",")])


def _ints(value: str) -> list[int]:
    return [int(p) for p in value.split(",")]


def _bounds(value: str) -> np.ndarray:
    pairs = []
    for part in value.split(","):
        lo, _, hi = part.partition(":")
        pairs.append([float(lo), float(hi)])
    return np.array(pairs)


def parse_config_text(text: str) -> ExperimentConfig:
    entries = _parse_kv(text)
    try:
        return _build(entries)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigFileError):
            raise
        raise ConfigFileError(str(exc)) from exc


def _build(entries: dict[str, str]) -> ExperimentConfig:
    condition = Condition(entries.get("condition", "synergy"))
    task = entries.get("task", "cup")
    if task not in TASKS:
        raise ConfigFileError(f"unknown task {task!r}")
    goal_deg = float(entries.get("goal_deg", TASKS[task]["goal_deg"]))
    start_deg = float(entries.get("start_deg", TASKS[task]["initial_deg"]))

    plant = default_plant_config()
    plant_overrides = {}
    if "plant.contact_positions" in entries:
        plant_overrides["contact_positions"] = _floats(entries["plant.contact_positions"])
    if "plant.motor_bounds" in entries:
        plant_overrides["motor_bounds"] = _bounds(entries["plant.motor_bounds"])
    for scalar in ("force_gain", "force_saturation", "rotation_gain", "slip_drift_rate",
                   "tick_duration"):
        key = f"plant.{scalar}"
        if key in entries:
            plant_overrides[scalar] = float(entries[key])
    for count in ("slip_fall_ticks", "quick_fall_ticks", "rng_seed"):
        key = f"plant.{count}"
        if key in entries:
            plant_overrides[count] = int(entries[key])
    if "plant.process_noise_std" in entries:
        plant_overrides["process_noise_std"] = _floats(entries["plant.process_noise_std"])
    if plant_overrides:
        plant = replace(plant, **plant_overrides)

    cal = default_calibration()
    cal_overrides = {
        name: float(entries[f"calibration.{name}"])
        for name in ("alpha_des", "firm_threshold", "slip_threshold", "force_scale")
        if f"calibration.{name}" in entries
    }
    if cal_overrides:
        cal = replace(cal, **cal_overrides)

    gain = ReactiveGain(k=_floats(entries["gain.k"])) if "gain.k" in entries else None

    phi_des = math.radians(goal_deg)
    cost_kwargs = {"variant": condition, "phi_des": phi_des}
    if condition is Condition.VISUO_TACTILE:
        cost_kwargs["f_des"] = _floats(entries.get("cost.f_des", "2, 2, 2"))
    if "cost.lambda1" in entries:
        cost_kwargs["lambda1"] = float(entries["cost.lambda1"])
    if "cost.lambda2" in entries:
        cost_kwargs["lambda2"] = float(entries["cost.lambda2"])
    cost_kwargs["alpha_des"] = float(entries.get("cost.alpha_des", cal.alpha_des))
    cost = CostSpec(**cost_kwargs)

    kwargs = dict(plant=plant, calibration=cal, cost=cost)
    if gain is not None:
        kwargs["gain"] = gain
    for name, conv in (
        ("n_trials", int), ("max_rollouts", int), ("episode_ticks", int),
        ("hold_ticks", int), ("ticks_per_policy_step", int), ("n_particles", int),
        ("improve_max_iter", int), ("gp_max_points", int),
        ("n_jobs", int), ("master_seed", int),
        ("policy_scale", float), ("grip_offset", float),
    ):
        if name in entries:
            kwargs[name] = conv(entries[name])
    if "tolerance_deg" in entries:
        kwargs["tolerance"] = math.radians(float(entries["tolerance_deg"]))
    if "seeds" in entries:
        kwargs["seeds"] = tuple(_ints(entries["seeds"]))

    config = make_experiment_config(condition, task=task, **kwargs)
    config = replace(config, phi_des=phi_des, initial_yaw=math.radians(start_deg))
    if "reactive" in entries:
        wanted = entries["reactive"].lower() in ("1", "true", "yes", "on")
        config = replace(config, reactive_enabled=wanted)
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def config_to_text(config: ExperimentConfig) -> str:
    """Serialize a config as a parseable snapshot with every field explicit."""
    p = config.plant
    lines = [
        f"condition = {config.condition.value}",
        f"task = {config.task}",
        f"goal_deg = {math.degrees(config.phi_des)!r}",
        f"start_deg = {math.degrees(config.initial_yaw)!r}",
        f"n_trials = {config.n_trials}",
        f"max_rollouts = {config.max_rollouts}",
        f"episode_ticks = {config.episode_ticks}",
        f"hold_ticks = {config.hold_ticks}",
        f"tolerance_deg = {math.degrees(config.tolerance)!r}",
        f"ticks_per_policy_step = {config.ticks_per_policy_step}",
        f"n_particles = {config.n_particles}",
        f"improve_max_iter = {config.improve_max_iter}",
        f"gp_max_points = {config.gp_max_points}",
        f"n_jobs = {config.n_jobs}",
        f"master_seed = {config.master_seed}",
        f"policy_scale = {config.policy_scale!r}",
        f"grip_offset = {config.grip_offset!r}",
        f"reactive = {str(config.reactive_enabled).lower()}",
        f"plant.contact_positions = {', '.join(repr(v) for v in p.contact_positions)}",
        "plant.motor_bounds = "
        + ", ".join(f"{lo!r}:{hi!r}" for lo, hi in p.motor_bounds),
        f"plant.force_gain = {p.force_gain!r}",
        f"plant.force_saturation = {p.force_saturation!r}",
        f"plant.rotation_gain = {p.rotation_gain!r}",
        f"plant.slip_drift_rate = {p.slip_drift_rate!r}",
        f"plant.slip_fall_ticks = {p.slip_fall_ticks}",
        f"plant.quick_fall_ticks = {p.quick_fall_ticks}",
        f"plant.process_noise_std = {', '.join(repr(v) for v in p.process_noise_std)}",
        f"plant.tick_duration = {p.tick_duration!r}",
        f"plant.rng_seed = {p.rng_seed}",
        f"calibration.alpha_des = {config.calibration.alpha_des!r}",
        f"calibration.firm_threshold = {config.calibration.firm_threshold!r}",
        f"calibration.slip_threshold = {config.calibration.slip_threshold!r}",
        f"calibration.force_scale = {config.calibration.force_scale!r}",
        f"gain.k = {', '.join(repr(v) for v in config.gain.k)}",
        f"cost.lambda1 = {config.cost.lambda1!r}",
        f"cost.lambda2 = {config.cost.lambda2!r}",
        f"cost.alpha_des = {config.cost.alpha_des!r}",
    ]
    if config.seeds is not None:
        lines.insert(14, f"seeds = {', '.join(str(s) for s in config.seeds)}")
    if config.cost.f_des is not None:
        lines.append(f"cost.f_des = {', '.join(repr(v) for v in config.cost.f_des)}")
    return "\n".join(lines) + "\n"


def save_config(path: str | Path, config: ExperimentConfig) -> None:
    Path(path).write_text(config_to_text(config))
