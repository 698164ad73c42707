"""Experiment engine: runs a configured scenario against the axis simulator
and persists a fully deterministic artifact (records, optima, summary).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import lpv_interpolate, record_grid, select_per_task_optima
from .config import ExperimentConfig, ParallelSpec, save_config, validate_config
from .goose import (
    ACTIVE,
    STREAM_TRACK,
    Criteria,
    GooseConfig,
    GooseTuner,
    compute_optimizer,
    derive_rng_seed,
)
from .gp import GpModel, KernelSpec
from .metrics import MetricConfig, constraint, cost
from .parallel import (
    ParallelConfig,
    ParallelCoordinator,
    constant_hold_predictor,
    perfect_predictor,
)
from .plant import (
    ControllerGains,
    PlantParams,
    TaskLayout,
    apply_task,
    simulate_cycle,
    trajectory_for,
)
from .safeset import SafeSeed

logger = logging.getLogger(__name__)

# RNG stream tags for the experiment layer
STREAM_PLANT = 10
STREAM_SCHEDULE = 11
STREAM_GRID = 12
STREAM_INIT = 13
STREAM_FINAL_EVAL = 14
STREAM_LPV_PLANT = 15

PLANT_LAYOUT = TaskLayout(("log10_stepsize_mm", "payload_kg", "drift_um_s"))


@dataclass(frozen=True)
class PhysicalTask:
    """Full physical state of one machine run."""

    stepsize_mm: float
    payload_kg: float
    drift_um_s: float = 0.0

    @property
    def vector(self) -> np.ndarray:
        return np.array([np.log10(self.stepsize_mm), self.payload_kg, self.drift_um_s])

    def gp_vector(self, names) -> np.ndarray:
        lut = {
            "log10_stepsize_mm": np.log10(self.stepsize_mm),
            "payload_kg": self.payload_kg,
            "drift_um_s": self.drift_um_s,
        }
        return np.array([lut[n] for n in names])


def build_schedule(cfg: ExperimentConfig) -> list[PhysicalTask]:
    spec = cfg.schedule
    rng = np.random.default_rng(derive_rng_seed(cfg.seed, STREAM_SCHEDULE, 0))
    out = []
    for k in range(spec.iterations):
        if spec.kind == "fixed":
            out.append(PhysicalTask(spec.stepsize_mm, spec.payloads[0]))
        elif spec.kind == "payload-alternation":
            payload = spec.payloads[(k // spec.alternate_every) % len(spec.payloads)]
            out.append(PhysicalTask(spec.stepsize_mm, payload))
        elif spec.kind == "random-steps":
            lo, hi = np.log10(spec.stepsize_range_mm[0]), np.log10(spec.stepsize_range_mm[1])
            s = 10 ** rng.uniform(lo, hi)
            if spec.probe_steps_mm and k % 5 == 2:
                # deterministic off-grid probes: steps the grid baseline never
                # tuned directly, exercising its interpolation
                s = spec.probe_steps_mm[(k // 5) % len(spec.probe_steps_mm)]
            payload = spec.payloads[(k // spec.alternate_every) % len(spec.payloads)]
            out.append(PhysicalTask(s, payload))
        elif spec.kind == "drift":
            frac = k / max(spec.iterations - 1, 1)
            out.append(PhysicalTask(spec.stepsize_mm, spec.payloads[0], frac * spec.drift_max_um_s))
        else:
            raise ValueError(f"unknown schedule kind {spec.kind!r}")
    return out


def make_metric_config(cfg: ExperimentConfig) -> MetricConfig:
    return MetricConfig(
        cost_transform=cfg.cost_transform,
        c=cfg.constraint.limit,
        error_scale=cfg.error_scale,
        velocity_scale=cfg.velocity_scale,
    )


def make_plant(cfg: ExperimentConfig) -> PlantParams:
    defaults = dict(res_drive=0.3, res_sense=-0.24, res_damping=0.05, noise_std=1e-4)
    defaults.update(cfg.plant_overrides)
    return PlantParams(**defaults)


def make_measure(cfg: ExperimentConfig, schedule: list[PhysicalTask], stream: int = STREAM_PLANT):
    """One machine cycle: apply the gains under the scheduled physical task."""
    base_plant = make_plant(cfg)
    metric_cfg = make_metric_config(cfg)

    def measure(x_opt: np.ndarray, task: np.ndarray, iteration: int) -> tuple[float, float]:
        phys = schedule[iteration]
        plant = apply_task(base_plant, phys.vector, PLANT_LAYOUT)
        profile = trajectory_for(phys.stepsize_mm * 1e-3)
        gains = ControllerGains.from_vector(x_opt)
        run = simulate_cycle(gains, profile, plant, derive_rng_seed(cfg.seed, stream, iteration))
        return cost(run, metric_cfg), constraint(run, metric_cfg)

    return measure


def build_tuner(cfg: ExperimentConfig, validate: bool = True) -> GooseTuner:
    problems = validate_config(cfg)
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    ls = np.asarray(cfg.lengthscales, dtype=float)
    f = cfg.f_params
    q = cfg.q_params
    limit = cfg.constraint.limit
    d_opt = cfg.d_opt

    gp_f = GpModel(KernelSpec(ls, f.sigma_v), f.sigma_n, prior_mean=float(f.mu_0), beta=f.beta)
    if q.mu_0 == "c":
        prior_q = lambda X: np.array([limit(row[d_opt:]) for row in np.atleast_2d(X)])
    else:
        prior_q = float(q.mu_0)
    gp_q = GpModel(KernelSpec(ls, q.sigma_v), q.sigma_n, prior_mean=prior_q, beta=q.beta)

    goose_cfg = GooseConfig(
        bounds=np.asarray(cfg.bounds, dtype=float),
        c=limit,
        xi=cfg.xi,
        criteria=Criteria(termination_points=cfg.termination_points),
        data_limit=cfg.data_limit,
        mode=cfg.variant,
        epsilon=cfg.epsilon,
        pso_particles=cfg.pso_particles,
        pso_iterations=cfg.pso_iterations,
        pso_inertia=cfg.pso_inertia,
        pso_v0_scale=cfg.pso_v0_scale,
        base_seed=cfg.seed,
    )
    seed = SafeSeed(np.asarray(cfg.safe_seed_gains, dtype=float)[None, :])
    return GooseTuner(gp_f, gp_q, seed, goose_cfg, validate=validate)


def feed_initial_samples(tuner: GooseTuner, cfg: ExperimentConfig, schedule) -> None:
    """Evaluate the configured starting set and fold it into the models."""
    measure = make_measure(cfg, schedule, stream=STREAM_INIT)
    task0 = schedule[0].gp_vector(cfg.task_names)
    base = np.asarray(cfg.safe_seed_gains, dtype=float)
    n0 = len(cfg.initial_aff_samples)
    for i, aff in enumerate(cfg.initial_aff_samples):
        x = base.copy()
        x[3] = aff
        y_f, y_q = measure(x, task0, i)
        tuner.report_measurement(x, task0, y_f, y_q, iteration=i - n0)


@dataclass
class RunRecord:
    iteration: int
    task: np.ndarray
    x_opt: np.ndarray
    y_f: float
    y_q: float
    phase: str
    violation: bool
    used_seed: bool
    accepted: bool
    mispredicted: bool
    virtual_time: float
    compute_ops: int


@dataclass
class RunArtifact:
    config: ExperimentConfig
    records: list[RunRecord] = field(default_factory=list)
    tracker: list = field(default_factory=list)  # (iteration, mean, lcb, ucb)
    lpv_records: list = field(default_factory=list)
    final_optima: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def timing_spec(cfg: ExperimentConfig) -> ParallelSpec:
    return cfg.parallel if cfg.parallel is not None else ParallelSpec()


def run_serial(
    cfg: ExperimentConfig, tuner: GooseTuner, schedule
) -> tuple[list[RunRecord], list]:
    """Lock-step loop: the machine waits for each optimization."""
    measure = make_measure(cfg, schedule)
    timing = timing_spec(cfg)
    records = []
    tracker = []
    t = 0.0
    for k, phys in enumerate(schedule):
        task = phys.gp_vector(cfg.task_names)
        step = tuner.propose(task, k)
        y_f, y_q = measure(step.x_opt, task, k)
        phase = tuner.phase
        update_ops = tuner.report_measurement(step.x_opt, task, y_f, y_q, k)
        ops = step.ops + update_ops
        t += timing.cycle_time + ops * timing.seconds_per_op
        records.append(
            RunRecord(
                iteration=k,
                task=task,
                x_opt=step.x_opt,
                y_f=y_f,
                y_q=y_q,
                phase=phase,
                violation=y_q > tuner.config.limit(task),
                used_seed=step.used_seed_fallback,
                accepted=True,
                mispredicted=False,
                virtual_time=t,
                compute_ops=ops,
            )
        )
        if cfg.track_optimum:
            snap = tuner.snapshot()
            probe = compute_optimizer(
                snap, task, 3_000_000 + k, acquisition="ucb"
            )
            joint = np.concatenate([probe.x_opt, task])[None, :]
            mean, _ = tuner.gp_f.posterior(joint)
            tracker.append(
                (
                    k,
                    float(mean[0]),
                    float(tuner.gp_f.lcb(joint)[0]),
                    float(tuner.gp_f.ucb(joint)[0]),
                )
            )
    return records, tracker


def run_parallel(cfg: ExperimentConfig, tuner: GooseTuner, schedule):
    spec = cfg.parallel
    pcfg = ParallelConfig(
        scheme=spec.scheme,
        workers=spec.workers,
        horizon=spec.horizon,
        k=spec.k,
        delta_tau=spec.delta_tau,
        task_grid=spec.task_grid,
        cycle_time=spec.cycle_time,
        seconds_per_op=spec.seconds_per_op,
    )
    gp_tasks = [p.gp_vector(cfg.task_names) for p in schedule]
    predictor = (
        perfect_predictor(gp_tasks) if spec.predictor == "perfect" else constant_hold_predictor(gp_tasks)
    )
    coord = ParallelCoordinator(tuner, pcfg, predictor=predictor)
    measure = make_measure(cfg, schedule)
    result = coord.run(gp_tasks, measure, stop_after_points=cfg.stop_after_points)
    records = [
        RunRecord(
            iteration=r.iteration,
            task=r.task,
            x_opt=r.x_opt,
            y_f=r.y_f,
            y_q=r.y_q,
            phase=r.phase,
            violation=r.violation,
            used_seed=r.used_seed,
            accepted=r.accepted,
            mispredicted=r.mispredicted,
            virtual_time=r.virtual_time,
            compute_ops=r.compute_ops,
        )
        for r in result.records
    ]
    return records, result


def run_lpv_comparison(cfg: ExperimentConfig, schedule) -> list[RunRecord]:
    """Record the gain/task grid once, then replay the schedule on the
    interpolated per-task optima (no run-time safety checking, by design)."""
    base_plant = make_plant(cfg)
    metric_cfg = make_metric_config(cfg)
    counter = [0]

    def evaluate(x_opt, x_tau):
        phys = PhysicalTask(10.0 ** x_tau[0], x_tau[1])
        plant = apply_task(base_plant, phys.vector, PLANT_LAYOUT)
        profile = trajectory_for(phys.stepsize_mm * 1e-3)
        run = simulate_cycle(
            ControllerGains.from_vector(x_opt),
            profile,
            plant,
            derive_rng_seed(cfg.seed, STREAM_GRID, counter[0]),
        )
        counter[0] += 1
        return cost(run, metric_cfg), constraint(run, metric_cfg), not run.unstable

    # acceleration feedforward is fixed for the grid baseline
    grid = record_grid(
        [list(v) for v in cfg.lpv_gain_grid],
        [list(v) for v in cfg.lpv_task_grid],
        lambda g, t: evaluate(np.append(g, cfg.lpv_aff), t),
    )
    table = select_per_task_optima(grid, cfg.constraint.limit)
    fallback = np.asarray(cfg.safe_seed_gains[:3], dtype=float)
    bounds3 = np.asarray(cfg.bounds[:3], dtype=float)

    measure = make_measure(cfg, schedule, stream=STREAM_LPV_PLANT)
    records = []
    for k, phys in enumerate(schedule):
        lpv_task = np.array([np.log10(phys.stepsize_mm), phys.payload_kg])
        g3 = lpv_interpolate(table, lpv_task, fallback, bounds3)
        x_opt = np.append(g3, cfg.lpv_aff)
        gp_task = phys.gp_vector(cfg.task_names)
        y_f, y_q = measure(x_opt, gp_task, k)
        records.append(
            RunRecord(
                iteration=k,
                task=gp_task,
                x_opt=x_opt,
                y_f=y_f,
                y_q=y_q,
                phase="lpv",
                violation=y_q > cfg.constraint.limit(gp_task),
                used_seed=False,
                accepted=True,
                mispredicted=False,
                virtual_time=(k + 1) * timing_spec(cfg).cycle_time,
                compute_ops=0,
            )
        )
    return records


def compute_final_optima(cfg: ExperimentConfig, tuner: GooseTuner, schedule) -> list[dict]:
    """Per-task pessimistic optimum after the run, with one verification run."""
    seen = []
    tasks = []
    for phys in schedule:
        key = tuple(np.round(phys.gp_vector(cfg.task_names), 9))
        if key not in seen:
            seen.append(key)
            tasks.append(phys)
    tasks = tasks[:40]
    measure = make_measure(cfg, [p for p in tasks], stream=STREAM_FINAL_EVAL)
    out = []
    for i, phys in enumerate(tasks):
        task = phys.gp_vector(cfg.task_names)
        step = tuner.final_optimum(task, salt=i)
        y_f, y_q = measure(step.x_opt, task, i)
        out.append(
            {
                "task": [float(v) for v in task],
                "stepsize_mm": float(phys.stepsize_mm),
                "payload_kg": float(phys.payload_kg),
                "x_opt": [float(v) for v in step.x_opt],
                "predicted_ucb": float(step.acq_value),
                "measured_cost": float(y_f),
                "measured_constraint": float(y_q),
                "used_seed": bool(step.used_seed_fallback),
            }
        )
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunArtifact:
    """Execute one scenario end to end and optionally persist the artifact."""
    problems = validate_config(cfg)
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    schedule = build_schedule(cfg)
    tuner = build_tuner(cfg)
    feed_initial_samples(tuner, cfg, schedule)

    artifact = RunArtifact(config=cfg)
    if cfg.scheme == "serial":
        artifact.records, artifact.tracker = run_serial(cfg, tuner, schedule)
        par_stats = None
    else:
        artifact.records, par_stats = run_parallel(cfg, tuner, schedule)

    if cfg.compare_lpv:
        if cfg.lpv_task_grid is None:
            raise ValueError("compare_lpv requires lpv_task_grid")
        artifact.lpv_records = run_lpv_comparison(cfg, schedule)

    artifact.final_optima = compute_final_optima(cfg, tuner, schedule)

    recs = artifact.records
    summary = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "scheme": cfg.scheme,
        "variant": cfg.variant,
        "iterations_executed": len(recs),
        "violations": int(sum(r.violation for r in recs)),
        "seed_fallbacks": int(sum(r.used_seed for r in recs)),
        "accepted_measurements": int(sum(r.accepted for r in recs)),
        "phase_restarts": tuner.restarts,
        "validity": tuner.validity.describe(),
        "lpv_violations": int(sum(r.violation for r in artifact.lpv_records)),
    }
    if par_stats is not None:
        summary.update(
            {
                "ignored_measurements": par_stats.ignored,
                "seed_uses": par_stats.seed_uses,
                "scheduling_misses": par_stats.scheduling_misses,
                "mispredictions": par_stats.mispredictions,
                "points_added": par_stats.points_added,
                "termination_time": par_stats.termination_time,
                "initial_refresh_done_at": par_stats.initial_refresh_done_at,
            }
        )
    artifact.summary = summary

    if out_dir is not None:
        save_artifact(artifact, out_dir)
    return artifact


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _record_rows(records: list[RunRecord], task_names) -> tuple[list[str], list[list]]:
    d_tau = len(task_names)
    header = (
        ["iteration"]
        + [f"task_{n}" for n in task_names]
        + ["Kp", "Vkp", "Vki", "Aff"]
        + [
            "y_f",
            "y_q",
            "phase",
            "violation",
            "used_seed",
            "accepted",
            "mispredicted",
            "virtual_time",
            "compute_ops",
        ]
    )
    rows = []
    for r in records:
        rows.append(
            [r.iteration]
            + [repr(float(v)) for v in np.atleast_1d(r.task)[:d_tau]]
            + [repr(float(v)) for v in r.x_opt]
            + [
                repr(float(r.y_f)),
                repr(float(r.y_q)),
                r.phase,
                int(r.violation),
                int(r.used_seed),
                int(r.accepted),
                int(r.mispredicted),
                repr(float(r.virtual_time)),
                int(r.compute_ops),
            ]
        )
    return header, rows


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def save_artifact(artifact: RunArtifact, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = artifact.config
    save_config(cfg, out / "config.yaml")

    header, rows = _record_rows(artifact.records, cfg.task_names)
    _write_csv(out / "records.csv", header, rows)
    if artifact.lpv_records:
        header, rows = _record_rows(artifact.lpv_records, cfg.task_names)
        _write_csv(out / "records_lpv.csv", header, rows)
    if artifact.tracker:
        _write_csv(
            out / "tracker.csv",
            ["iteration", "predicted_optimum", "lcb", "ucb"],
            [[k, repr(m), repr(lo), repr(hi)] for k, m, lo, hi in artifact.tracker],
        )
    with open(out / "optima.json", "w") as fh:
        json.dump(artifact.final_optima, fh, indent=2, sort_keys=True)
    with open(out / "summary.json", "w") as fh:
        json.dump(artifact.summary, fh, indent=2, sort_keys=True)
    return out


def load_summary(out_dir) -> dict:
    return json.loads((Path(out_dir) / "summary.json").read_text())
