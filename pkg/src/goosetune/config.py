"""Declarative experiment configuration: dataclasses plus YAML loading.

A config fully determines an experiment: hyperparameters, boxes, schedules,
scheme, and seeds. Re-running the same config with the same seed reproduces
the artifact byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml


@dataclass(frozen=True)
class GpParams:
    """Per-model hyperparameters in the declarative file's vocabulary."""

    sigma_n: float
    mu_0: float | str  # "c" ties the prior mean to the constraint limit
    sigma_v: float
    beta: float = 3.0


@dataclass(frozen=True)
class ConstraintSpec:
    """Task-dependent vibration limit: c = c0 + payload_slope*(payload - ref)."""

    c0: float = 0.32
    payload_slope: float = 0.5
    payload_ref: float = 0.4
    payload_index: int | None = 1  # position of payload in the task vector

    def limit(self, task: np.ndarray) -> float:
        task = np.atleast_1d(task)
        if self.payload_index is None or self.payload_index >= task.size:
            return self.c0
        return self.c0 + self.payload_slope * (float(task[self.payload_index]) - self.payload_ref)


@dataclass(frozen=True)
class ScheduleSpec:
    """Task schedule generator parameters."""

    kind: str  # "fixed" | "payload-alternation" | "random-steps" | "drift"
    iterations: int
    stepsize_mm: float = 10.0
    payloads: tuple = (0.4, 2.0)
    alternate_every: int = 15
    stepsize_range_mm: tuple = (1.0, 100.0)
    probe_steps_mm: tuple = ()  # deterministic off-grid probes woven into random schedules
    drift_max_um_s: float = 300.0


@dataclass(frozen=True)
class ParallelSpec:
    scheme: str = "para"  # "para" | "lookup"
    workers: int = 4
    horizon: int = 4
    k: float = 1.0
    delta_tau: tuple = (0.3, 0.2)
    task_grid: tuple | None = None
    cycle_time: float = 2.4
    seconds_per_op: float = 2e-8
    predictor: str = "perfect"  # "perfect" | "constant"


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    seed: int
    schedule: ScheduleSpec
    task_names: tuple = ("log10_stepsize_mm", "payload_kg")
    scheme: str = "serial"  # "serial" | "para" | "lookup"
    variant: str = "modified"  # "modified" | "baseline"
    lengthscales: tuple = (75.0, 350.0, 300.0, 0.8, 0.25, 0.6)
    f_params: GpParams = GpParams(sigma_n=0.03, mu_0=0.5, sigma_v=1.25, beta=3.0)
    q_params: GpParams = GpParams(sigma_n=0.04, mu_0="c", sigma_v=0.35, beta=3.0)
    bounds: tuple = ((150.0, 450.0), (500.0, 2600.0), (800.0, 1600.0), (0.0, 3.0))
    safe_seed_gains: tuple = (200.0, 600.0, 1000.0, 0.0)
    initial_aff_samples: tuple = (0.0, 1.0, 2.0)
    constraint: ConstraintSpec = ConstraintSpec()
    xi: float = -3.2
    cost_transform: str = "log10"
    error_scale: float = 1e6
    velocity_scale: float = 2e4
    data_limit: int | None = 60
    termination_points: int = 30
    epsilon: float | None = None
    pso_particles: int = 50
    pso_iterations: int = 60
    pso_inertia: float = 0.75
    pso_v0_scale: float = 1.5
    parallel: ParallelSpec | None = None
    plant_overrides: dict = field(default_factory=dict)
    stop_after_points: int | None = None  # end the run once this many points entered the models
    track_optimum: bool = False
    compare_lpv: bool = False
    lpv_gain_grid: tuple = (
        (200.0, 300.0, 400.0),
        (800.0, 1600.0, 2400.0),
        (1000.0, 1250.0, 1500.0),
    )
    lpv_aff: float = 1.5
    lpv_task_grid: tuple | None = None

    @property
    def d_opt(self) -> int:
        return len(self.bounds)

    @property
    def d_tau(self) -> int:
        return len(self.task_names)


def _to_plain(obj):
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


def save_config(cfg: ExperimentConfig, path) -> None:
    data = _to_plain(asdict(cfg))
    Path(path).write_text(yaml.safe_dump(data, sort_keys=True))


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def load_config(path) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text())
    return config_from_dict(data)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    data["schedule"] = ScheduleSpec(**{k: _tuplify(v) for k, v in data["schedule"].items()})
    data["f_params"] = GpParams(**data["f_params"])
    data["q_params"] = GpParams(**data["q_params"])
    data["constraint"] = ConstraintSpec(**data.get("constraint", {}))
    if data.get("parallel"):
        data["parallel"] = ParallelSpec(**{k: _tuplify(v) for k, v in data["parallel"].items()})
    for key in (
        "task_names",
        "lengthscales",
        "bounds",
        "safe_seed_gains",
        "initial_aff_samples",
        "lpv_gain_grid",
        "lpv_task_grid",
    ):
        if key in data and data[key] is not None:
            data[key] = _tuplify(data[key])
    return ExperimentConfig(**data)


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Field-path-labelled validation problems; empty list when clean."""
    problems = []
    if cfg.schedule.iterations < 1:
        problems.append("schedule.iterations: must be positive")
    if cfg.d_opt != 4:
        problems.append("bounds: expected the four controller gain dimensions")
    if len(cfg.lengthscales) != cfg.d_opt + cfg.d_tau:
        problems.append(
            f"lengthscales: expected {cfg.d_opt + cfg.d_tau} entries "
            f"(gains + tasks), got {len(cfg.lengthscales)}"
        )
    for i, (lo, hi) in enumerate(cfg.bounds):
        if not lo < hi:
            problems.append(f"bounds[{i}]: low must be below high")
    for i, g in enumerate(cfg.safe_seed_gains):
        lo, hi = cfg.bounds[i]
        if not lo <= g <= hi:
            problems.append(f"safe_seed_gains[{i}]: {g} outside [{lo}, {hi}]")
    if cfg.scheme not in ("serial", "para", "lookup"):
        problems.append(f"scheme: unknown value {cfg.scheme!r}")
    if cfg.variant not in ("modified", "baseline"):
        problems.append(f"variant: unknown value {cfg.variant!r}")
    if cfg.cost_transform not in ("raw", "log10"):
        problems.append(f"cost_transform: unknown value {cfg.cost_transform!r}")
    if cfg.scheme in ("para", "lookup") and cfg.parallel is None:
        problems.append("parallel: required for parallel schemes")
    if cfg.scheme == "lookup" and (cfg.parallel is None or cfg.parallel.task_grid is None):
        problems.append("parallel.task_grid: required for the lookup scheme")
    return problems


# ---------------------------------------------------------------------------
# scenario library
# ---------------------------------------------------------------------------


def _lookup_task_grid(desk_scale: bool) -> tuple:
    if desk_scale:
        steps = (1.0, 3.0, 10.0, 30.0, 100.0)
        payloads = (0.4, 1.2, 2.0)
    else:
        steps = tuple(float(v) for v in list(range(1, 11)) + list(range(20, 101, 10)))
        payloads = tuple(round(0.4 + 0.2 * i, 1) for i in range(9))
    return (tuple(round(math.log10(s), 10) for s in steps), payloads)


def scenario_config(name: str, seed: int, desk_scale: bool = False) -> ExperimentConfig:
    """Built-in scenario library; desk-scale variants shrink the horizon."""
    if name == "payload-alternation":
        t = 60 if desk_scale else 135
        return ExperimentConfig(
            scenario=name,
            seed=seed,
            schedule=ScheduleSpec(
                kind="payload-alternation",
                iterations=t,
                stepsize_mm=10.0,
                payloads=(0.4, 2.0),
                alternate_every=15,
            ),
            track_optimum=True,
        )
    if name == "payload-alternation-baseline":
        cfg = scenario_config("payload-alternation", seed, desk_scale)
        return replace(cfg, scenario=name, variant="baseline", data_limit=None)
    if name == "random-steps":
        t = 60 if desk_scale else 120
        return ExperimentConfig(
            scenario=name,
            seed=seed,
            schedule=ScheduleSpec(
                kind="random-steps",
                iterations=t,
                payloads=(0.4, 2.0),
                alternate_every=20,
                stepsize_range_mm=(1.0, 100.0),
                probe_steps_mm=(1.5, 3.0, 6.0, 8.5, 9.0, 15.0, 30.0, 70.0, 85.0),
            ),
            compare_lpv=True,
            lpv_task_grid=(
                tuple(round(math.log10(s), 10) for s in (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)),
                (0.4, 1.2),
            ),
        )
    if name in ("drift", "drift-unaware"):
        t = 70 if desk_scale else 120
        aware = name == "drift"
        return ExperimentConfig(
            scenario=name,
            seed=seed,
            schedule=ScheduleSpec(
                kind="drift", iterations=t, stepsize_mm=10.0, drift_max_um_s=300.0
            ),
            task_names=("log10_stepsize_mm", "drift_um_s")
            if aware
            else ("log10_stepsize_mm",),
            lengthscales=(75.0, 350.0, 300.0, 0.8, 0.25, 100.0)
            if aware
            else (75.0, 350.0, 300.0, 0.8, 0.25),
            constraint=ConstraintSpec(c0=0.35, payload_slope=0.0, payload_index=None),
            termination_points=10_000,  # stays in the learning phase throughout
        )
    if name == "parallel-compare":
        t = 40 if desk_scale else 80
        base = ExperimentConfig(
            scenario=name,
            seed=seed,
            schedule=ScheduleSpec(
                kind="random-steps",
                iterations=t,
                payloads=(0.4, 1.2, 2.0),
                alternate_every=5,
                stepsize_range_mm=(1.0, 100.0),
            ),
            scheme="para",
            termination_points=16,
            stop_after_points=16,
            pso_particles=30,
            pso_iterations=30,
            parallel=ParallelSpec(
                scheme="para",
                workers=4,
                horizon=4,
                task_grid=_lookup_task_grid(desk_scale),
                predictor="perfect",
            ),
        )
        return base
    raise ValueError(f"unknown scenario {name!r}")


SCENARIOS = (
    "payload-alternation",
    "payload-alternation-baseline",
    "random-steps",
    "drift",
    "drift-unaware",
    "parallel-compare",
)
