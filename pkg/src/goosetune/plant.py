"""Deterministic simulator of a cascade-controlled linear motion axis.

Reference generation is a time-optimal jerk-limited S-curve. The control
structure is a P position loop with velocity feedforward, a PI velocity loop
with anti-windup, and acceleration feedforward onto the force command. The
plant is a rigid body with viscous damping, one lightly damped structural
resonance observed by the encoder, a first-order current-loop lag, Gaussian
velocity measurement noise, and an optional sensor drift ramp.

Everything is a pure function of its inputs plus an explicit RNG seed, so
runs are bit-reproducible and safe to execute concurrently.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

try:
    from numba import njit
except ModuleNotFoundError:  # pragma: no cover - slow but equivalent path
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControllerGains:
    """Cascade controller parameters.

    Kp: position loop proportional gain [1/s]
    Vkp, Vki: velocity loop PI gains [N s/m], [N/m]
    Aff: acceleration feedforward gain [kg]
    Vff: velocity feedforward gain (held fixed, assumed well calibrated)
    """

    Kp: float
    Vkp: float
    Vki: float
    Aff: float = 0.0
    Vff: float = 1.0

    def __post_init__(self):
        for name in ("Kp", "Vkp", "Vki", "Aff", "Vff"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"gain {name} must be finite")

    @classmethod
    def from_vector(cls, x_opt: np.ndarray, vff: float = 1.0) -> "ControllerGains":
        x = np.asarray(x_opt, dtype=float)
        return cls(Kp=x[0], Vkp=x[1], Vki=x[2], Aff=x[3] if x.size > 3 else 0.0, Vff=vff)

    def as_vector(self) -> np.ndarray:
        return np.array([self.Kp, self.Vkp, self.Vki, self.Aff])


@dataclass(frozen=True)
class MotionLimits:
    """Kinematic limits of the reference movement."""

    v_max: float = 0.9
    a_max: float = 20.0
    j_max: float = 200.0


@dataclass(frozen=True)
class MotionProfile:
    """Sampled jerk-limited reference trajectory plus post-move hold."""

    stepsize: float
    f_s: float
    limits: MotionLimits
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    n_s: int  # first sample at/after the reference reaches its final value
    n_p: int  # end of the scored settling window

    @property
    def n_samples(self) -> int:
        return self.pos.size


@dataclass(frozen=True)
class PlantParams:
    """Physical parameters of the simulated axis.

    The resonance is a structural mode of fixed modal mass excited by the
    motor force and seen by the encoder; its frequency softens with total
    moving mass. ``drift_rate`` is a sensor drift ramp in m/s applied to the
    measured position.
    """

    base_mass: float = 1.0
    payload: float = 0.4
    damping: float = 5.0
    res_freq_hz: float = 300.0
    res_damping: float = 0.02
    res_drive: float = 0.25  # force fraction entering the mode
    res_sense: float = 0.12  # mode deflection fraction seen by the encoder
    res_modal_mass: float = 1.0
    res_ref_mass: float = 1.4  # total mass at which res_freq_hz is nominal
    current_tau: float = 2e-4
    noise_std: float = 2e-4  # velocity measurement noise [m/s]
    drift_rate: float = 0.0
    cog_amp: float = 3.0  # motor cogging force ripple amplitude [N]
    cog_pitch: float = 5e-4  # cogging spatial period [m]
    force_limit: float = 400.0
    guard_error: float = 0.05  # |p_e| beyond this flags the run unstable [m]

    def __post_init__(self):
        if self.base_mass <= 0 or self.payload < 0:
            raise ValueError("masses must be positive")
        if self.res_freq_hz <= 0:
            raise ValueError("resonance frequency must be positive")

    @property
    def total_mass(self) -> float:
        return self.base_mass + self.payload

    def resonance_rad(self, f_s: float) -> float:
        """Payload-softened resonance frequency, clipped below Nyquist."""
        w = 2 * math.pi * self.res_freq_hz * math.sqrt(self.res_ref_mass / self.total_mass)
        return min(w, 2 * math.pi * 0.45 * f_s)


@dataclass(frozen=True)
class MotionRun:
    """Recorded closed-loop run: error series over the move plus settle phase."""

    p_ref: np.ndarray
    p_meas: np.ndarray
    p_e: np.ndarray
    v_e: np.ndarray
    n_s: int
    n_p: int
    f_s: float
    gains: ControllerGains
    task: np.ndarray
    unstable: bool = False

    def save_csv(self, path) -> None:
        t = np.arange(self.p_ref.size) / self.f_s
        data = np.column_stack([t, self.p_ref, self.p_meas, self.p_e, self.v_e])
        np.savetxt(
            path,
            data,
            delimiter=",",
            header="t,p_ref,p,p_e,v_e",
            comments="",
            fmt="%.9e",
        )


# ---------------------------------------------------------------------------
# reference generation
# ---------------------------------------------------------------------------


def _scurve_segments(s: float, lim: MotionLimits) -> tuple[list[float], list[float]]:
    """Durations and jerk values of the up-to-7-phase time-optimal profile."""
    v, a, j = lim.v_max, lim.a_max, lim.j_max

    def accel_times(v_peak: float) -> tuple[float, float]:
        # time structure to ramp 0 -> v_peak: jerk, hold, jerk
        if v_peak * j >= a * a:
            return a / j, v_peak / a - a / j
        return math.sqrt(v_peak / j), 0.0

    t_j, t_a = accel_times(v)
    d_full = v * (2 * t_j + t_a)  # accel + decel distance at v_max
    if s >= d_full:
        v_peak = v
        t_v = (s - d_full) / v
    else:
        t_v = 0.0
        # peak velocity with the acceleration plateau still reached
        v_peak = a * (-a / j + math.sqrt((a / j) ** 2 + 4 * s / a)) / 2
        if v_peak * j >= a * a:
            t_j, t_a = a / j, v_peak / a - a / j
        else:
            # fully triangular: distance = 2 j t_j^3
            t_j = (s / (2 * j)) ** (1.0 / 3.0)
            t_a = 0.0
            v_peak = j * t_j * t_j
    durations = [t_j, t_a, t_j, t_v, t_j, t_a, t_j]
    jerks = [j, 0.0, -j, 0.0, -j, 0.0, j]
    return durations, jerks


def generate_trajectory(
    stepsize: float,
    limits: MotionLimits = MotionLimits(),
    f_s: float = 20_000.0,
    settle_time: float = 0.25,
) -> MotionProfile:
    """Time-optimal jerk-limited point-to-point reference sampled at f_s.

    The profile ends with a hold of ``settle_time`` at the target; the scored
    settling window starts at the first sample where the reference has
    reached its final value.
    """
    if stepsize <= 0:
        raise ValueError(f"stepsize must be positive, got {stepsize}")
    durations, jerks = _scurve_segments(stepsize, limits)
    bounds = np.concatenate([[0.0], np.cumsum(durations)])
    t_total = bounds[-1]

    # segment-start states by exact piecewise integration
    p0, v0, a0 = [0.0], [0.0], [0.0]
    for dur, jk in zip(durations, jerks):
        p, v, a = p0[-1], v0[-1], a0[-1]
        p0.append(p + v * dur + a * dur**2 / 2 + jk * dur**3 / 6)
        v0.append(v + a * dur + jk * dur**2 / 2)
        a0.append(a + jk * dur)

    n_move = int(math.ceil(t_total * f_s))
    n_settle = int(round(settle_time * f_s))
    n = n_move + n_settle + 1
    t = np.arange(n) / f_s
    seg = np.clip(np.searchsorted(bounds, t, side="right") - 1, 0, len(durations) - 1)
    tau = t - bounds[seg]
    jk = np.asarray(jerks)[seg]
    p_seg = np.asarray(p0)[seg]
    v_seg = np.asarray(v0)[seg]
    a_seg = np.asarray(a0)[seg]
    pos = p_seg + v_seg * tau + a_seg * tau**2 / 2 + jk * tau**3 / 6
    vel = v_seg + a_seg * tau + jk * tau**2 / 2
    acc = a_seg + jk * tau
    done = t >= t_total - 1e-12
    pos[done] = stepsize
    vel[done] = 0.0
    acc[done] = 0.0

    n_s = int(np.argmax(done))
    n_p = min(n_s + n_settle, n - 1)
    return MotionProfile(
        stepsize=stepsize, f_s=f_s, limits=limits, pos=pos, vel=vel, acc=acc, n_s=n_s, n_p=n_p
    )


@lru_cache(maxsize=256)
def _trajectory_cached(stepsize: float, limits: MotionLimits, f_s: float, settle_time: float):
    return generate_trajectory(stepsize, limits, f_s, settle_time)


def trajectory_for(
    stepsize: float,
    limits: MotionLimits = MotionLimits(),
    f_s: float = 20_000.0,
    settle_time: float = 0.25,
) -> MotionProfile:
    """Cached trajectory lookup (profiles are immutable)."""
    return _trajectory_cached(round(float(stepsize), 12), limits, float(f_s), float(settle_time))


# ---------------------------------------------------------------------------
# closed-loop simulation
# ---------------------------------------------------------------------------


def _discretize(plant: PlantParams, f_s: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization of the linear plant.

    State z = [p, v, x_r, v_r, F]. Two inputs: the force command (through the
    current-loop lag) and a direct force disturbance (cogging ripple).
    """
    m = plant.total_mass
    w = plant.resonance_rad(f_s)
    zeta = plant.res_damping
    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, -plant.damping / m, 0.0, 0.0, 1.0 / m],
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, -w * w, -2 * zeta * w, plant.res_drive / plant.res_modal_mass],
            [0.0, 0.0, 0.0, 0.0, -1.0 / plant.current_tau],
        ]
    )
    B_cmd = np.array([0.0, 0.0, 0.0, 0.0, 1.0 / plant.current_tau])
    B_dist = np.array([0.0, 1.0 / m, 0.0, plant.res_drive / plant.res_modal_mass, 0.0])
    M = np.zeros((7, 7))
    M[:5, :5] = A
    M[:5, 5] = B_cmd
    M[:5, 6] = B_dist
    E = expm(M / f_s)
    return (
        np.ascontiguousarray(E[:5, :5]),
        np.ascontiguousarray(E[:5, 5]),
        np.ascontiguousarray(E[:5, 6]),
    )


@njit(cache=True)
def _step_loop(
    p_ref, v_ref, a_ref, v_noise, drift, Ad, Bd, Bdist,
    kp, vkp, vki, aff, vff, dt, f_lim, guard, sense, start,
    cog_amp, cog_k, p_e, v_e, p_meas_arr,
):
    """Per-sample cascade loop; returns the stop index (n if it ran through)."""
    z0 = start
    z1 = 0.0
    z2 = 0.0
    z3 = 0.0
    z4 = 0.0
    integ = 0.0
    n = p_ref.shape[0]
    for i in range(n):
        p_meas = z0 + sense * z2 + drift[i]
        v_meas = z1 + sense * z3 + v_noise[i]
        pe = p_ref[i] - p_meas
        ve = v_ref[i] - v_meas
        p_e[i] = pe
        v_e[i] = ve
        p_meas_arr[i] = p_meas
        if abs(pe) > guard:
            return i + 1
        v_sp = kp * pe + vff * v_ref[i]
        e_v = v_sp - v_meas
        integ_new = integ + vki * e_v * dt
        u = vkp * e_v + integ_new + aff * a_ref[i]
        if u > f_lim:
            u = f_lim
            if e_v > 0:
                integ_new = integ  # anti-windup: hold the integrator
        elif u < -f_lim:
            u = -f_lim
            if e_v < 0:
                integ_new = integ
        integ = integ_new
        f_dist = cog_amp * math.sin(cog_k * z0)
        n0 = Ad[0, 0] * z0 + Ad[0, 1] * z1 + Ad[0, 2] * z2 + Ad[0, 3] * z3 + Ad[0, 4] * z4 + Bd[0] * u + Bdist[0] * f_dist
        n1 = Ad[1, 0] * z0 + Ad[1, 1] * z1 + Ad[1, 2] * z2 + Ad[1, 3] * z3 + Ad[1, 4] * z4 + Bd[1] * u + Bdist[1] * f_dist
        n2 = Ad[2, 0] * z0 + Ad[2, 1] * z1 + Ad[2, 2] * z2 + Ad[2, 3] * z3 + Ad[2, 4] * z4 + Bd[2] * u + Bdist[2] * f_dist
        n3 = Ad[3, 0] * z0 + Ad[3, 1] * z1 + Ad[3, 2] * z2 + Ad[3, 3] * z3 + Ad[3, 4] * z4 + Bd[3] * u + Bdist[3] * f_dist
        n4 = Ad[4, 0] * z0 + Ad[4, 1] * z1 + Ad[4, 2] * z2 + Ad[4, 3] * z3 + Ad[4, 4] * z4 + Bd[4] * u + Bdist[4] * f_dist
        z0, z1, z2, z3, z4 = n0, n1, n2, n3, n4
    return n


def simulate_closed_loop(
    gains: ControllerGains,
    profile: MotionProfile,
    plant: PlantParams,
    rng_seed,
    reverse: bool = False,
) -> MotionRun:
    """Fixed-step simulation of the cascade loop tracking the profile.

    ``reverse`` runs the mirrored movement (target back to zero), used for
    the return stroke of a back-and-forth cycle. A run whose position error
    exceeds the guard bound is truncated, padded at the guard level, and
    flagged unstable; it still gets scored, which penalizes it heavily.
    """
    f_s = profile.f_s
    dt = 1.0 / f_s
    n = profile.n_samples
    if reverse:
        p_ref = profile.stepsize - profile.pos
        v_ref = -profile.vel
        a_ref = -profile.acc
        start = profile.stepsize
    else:
        p_ref, v_ref, a_ref = profile.pos, profile.vel, profile.acc
        start = 0.0

    Ad, Bd, Bdist = _discretize(plant, f_s)
    rng = np.random.default_rng(rng_seed)
    v_noise = rng.normal(0.0, plant.noise_std, size=n) if plant.noise_std > 0 else np.zeros(n)
    drift = plant.drift_rate * np.arange(n) * dt

    p_e = np.empty(n)
    v_e = np.empty(n)
    p_meas_arr = np.empty(n)
    i_stop = _step_loop(
        np.ascontiguousarray(p_ref), np.ascontiguousarray(v_ref), np.ascontiguousarray(a_ref),
        v_noise, drift, Ad, Bd, Bdist,
        gains.Kp, gains.Vkp, gains.Vki, gains.Aff, gains.Vff,
        dt, plant.force_limit, plant.guard_error, plant.res_sense, start,
        plant.cog_amp, 2.0 * math.pi / plant.cog_pitch,
        p_e, v_e, p_meas_arr,
    )
    unstable = i_stop < n
    if unstable:
        p_e[i_stop:] = math.copysign(plant.guard_error, p_e[i_stop - 1])
        v_e[i_stop:] = profile.limits.v_max
        p_meas_arr[i_stop:] = p_meas_arr[i_stop - 1]
        logger.debug("unstable run truncated at sample %d (gains %s)", i_stop, gains)

    return MotionRun(
        p_ref=p_ref,
        p_meas=p_meas_arr,
        p_e=p_e,
        v_e=v_e,
        n_s=profile.n_s,
        n_p=profile.n_p,
        f_s=f_s,
        gains=gains,
        task=np.empty(0),
        unstable=unstable,
    )


def simulate_cycle(
    gains: ControllerGains,
    profile: MotionProfile,
    plant: PlantParams,
    rng_seed,
) -> MotionRun:
    """One machine cycle: forward stroke plus mirrored return stroke.

    Metrics are taken from the forward stroke; the return stroke is run for
    fidelity of the duty cycle but not scored.
    """
    seq = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    fwd_seed, rev_seed = seq.spawn(2)
    fwd = simulate_closed_loop(gains, profile, plant, fwd_seed)
    if not fwd.unstable:
        simulate_closed_loop(gains, profile, plant, rev_seed, reverse=True)
    return fwd


# ---------------------------------------------------------------------------
# task routing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskLayout:
    """Names the dimensions of the task vector, in order.

    Recognized names: ``log10_stepsize_mm``, ``payload_kg``, ``drift_um_s``.
    """

    names: tuple[str, ...] = ("log10_stepsize_mm", "payload_kg")

    def index(self, name: str) -> int | None:
        try:
            return self.names.index(name)
        except ValueError:
            return None

    def value(self, task: np.ndarray, name: str, default: float) -> float:
        i = self.index(name)
        return float(np.asarray(task)[i]) if i is not None else default

    def stepsize_m(self, task: np.ndarray, default_mm: float = 10.0) -> float:
        return 10.0 ** self.value(task, "log10_stepsize_mm", math.log10(default_mm)) * 1e-3


def apply_task(plant: PlantParams, task: np.ndarray, layout: TaskLayout) -> PlantParams:
    """Plant parameters adjusted for a task (payload, drift)."""
    payload = layout.value(task, "payload_kg", plant.payload)
    drift = layout.value(task, "drift_um_s", plant.drift_rate * 1e6) * 1e-6
    return replace(plant, payload=payload, drift_rate=drift)
