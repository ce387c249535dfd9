"""Synthetic mill stand-in and multiplicative CV disturbance scenarios.

The plant is a two-state hold-up model sampled every 30 s:

* rock hold-up ``H`` (t): fed by ``u1``, discharged at a rate that grows with
  speed ``u3`` and pulp dilution (lower solids ``u2``) and shrinks with ore
  hardness;
* water ``W`` (t): fed with the slurry water ``u1 (100 - u2) / u2`` and
  drained at a fixed rate.

Bearing pressure is a concave function of the charge ``H + W``; motor power
is a large no-load draw plus a small ``speed x charge x (1 - charge / charge_max)``
term, all scaled by a slowly wandering efficiency factor (lifter/ball-charge
condition). Pressure is therefore mostly
explained by the feed history, while power is dominated by its own recent
level. It is plumbing for tests and demos, not a calibrated mill model.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from . import expert as ex
from .errors import UnstablePlantConfig
from .pipeline import SAMPLE_PERIOD, SampledSeries
from .regulatory import StateSpaceModel, advance

N_CV, N_MV = 2, 3


@dataclass(frozen=True)
class SyntheticPlant:
    dt_hours: float = SAMPLE_PERIOD / 3600.0
    discharge_rate: float = 3.0  # 1/h at nominal speed and solids
    solids_sensitivity: float = 0.03  # relative discharge change per % solids
    water_rate: float = 12.0  # 1/h
    hardness: float = 1.0
    pressure_offset: float = 200.0  # kPa
    pressure_gain: float = 37.0  # kPa / sqrt(t)
    power_offset: float = 6800.0  # kW
    power_gain: float = 3.0  # kW / (t rpm-ratio)
    charge_max: float = 1610.0  # t
    u_nominal: tuple = (2000.0, 72.0, 9.5)
    y_lim: tuple = (1250.0, 11000.0)
    noise_sigma: tuple = (2.5, 80.0)  # CV measurement noise (kPa, kW)
    holdup_noise: float = 2.0  # t per step, ore feed-size variability
    efficiency_noise: float = 0.004  # per-step log-efficiency innovation
    efficiency_memory: float = 0.995
    mv_noise: tuple = (10.0, 0.2, 0.02)  # actuator deviation from the loop response
    cv_range: tuple = ((800.0, 1600.0), (4000.0, 12000.0))

    def discharge(self, u):
        speed = u[2] / self.u_nominal[2]
        dilution = 1.0 - self.solids_sensitivity * (u[1] - self.u_nominal[1])
        return self.discharge_rate * speed * max(dilution, 0.05) / self.hardness

    def steady_state(self, u):
        """Hold-ups ``(H, W)`` at constant MVs."""
        u = np.asarray(u, dtype=float)
        H = u[0] / self.discharge(u)
        W = u[0] * (100.0 - u[1]) / u[1] / self.water_rate
        return np.array([H, W])

    def advance_state(self, state, u, holdup_shock=0.0):
        """Exact zero-order-hold update of the two linear hold-up balances."""
        H, W = state
        k_h, k_w = self.discharge(u), self.water_rate
        water_in = u[0] * (100.0 - u[1]) / u[1]
        ah, aw = np.exp(-k_h * self.dt_hours), np.exp(-k_w * self.dt_hours)
        H = ah * H + (1.0 - ah) * u[0] / k_h + holdup_shock
        W = aw * W + (1.0 - aw) * water_in / k_w
        return np.array([max(H, 0.0), max(W, 0.0)])

    def outputs(self, state, u, efficiency=1.0):
        """Noise-free pressure and power."""
        charge = max(state[0] + state[1], 0.0)
        pressure = self.pressure_offset + self.pressure_gain * np.sqrt(charge)
        load = charge * (1.0 - charge / self.charge_max)
        power = efficiency * (self.power_offset + self.power_gain * (u[2] / self.u_nominal[2]) * load)
        return np.array([pressure, power])


def first_order_loops(time_constants=(0.6, 0.5, 0.3)):
    """Regulatory loops ``u[t] = a u[t-1] + (1 - a) u_sp[t]`` as a state-space model."""
    a = np.asarray(time_constants, dtype=float)
    return StateSpaceModel(A=np.diag(a), B=np.diag(1 - a), C=np.diag(a), D=np.diag(1 - a))


def _check_bounded(plant, y, k):
    bound = 10.0 * np.max(np.abs(np.asarray(plant.cv_range)), axis=1)
    if not np.all(np.isfinite(y)) or np.any(np.abs(y) > bound):
        raise UnstablePlantConfig(f"CV {y} left ten times its operating range at step {k}")


def generate(plant=SyntheticPlant(), rulebase=None, regulatory=None, steps=2000, seed=0,
             warmup=400, u_sp0=None, y_lim=None, limit_schedule=None):
    """Closed-loop data: expert supervisor, regulatory loops and plant.

    Each 30 s step the supervisor looks at the previous ``slope_window``
    samples, moves the setpoints, the loops move the MVs and the plant moves
    the CVs. ``warmup`` steps from the nominal steady state are discarded.

    Parameters
    ----------
    rulebase : FuzzyRuleBase, optional
        Defaults to the shipped rule base.
    regulatory : StateSpaceModel, optional
        True loop dynamics in engineering units; defaults to
        :func:`first_order_loops`.
    y_lim : array of shape (2,), optional
        CV limits given to the supervisor; defaults to ``plant.y_lim``.
    limit_schedule : sequence of (k, y_lim), optional
        Limit changes at sample ``k`` (counted after warm-up), as an operator
        moving the supervisory limits would make.

    Returns
    -------
    SampledSeries
    """
    rulebase = ex.default_rulebase() if rulebase is None else rulebase
    regulatory = first_order_loops() if regulatory is None else regulatory
    if steps < 1:
        raise ValueError("steps must be positive")
    rng = np.random.default_rng(seed)
    y_lim = np.asarray(plant.y_lim if y_lim is None else y_lim, dtype=float)
    u_sp = np.asarray(plant.u_nominal if u_sp0 is None else u_sp0, dtype=float)
    total = warmup + steps
    s = rulebase.slope_window

    # start at rest: loop state consistent with u = u_sp, plant at its fixed point
    x = _loop_state_at_rest(regulatory, u_sp)
    state = plant.steady_state(u_sp)
    log_eff = 0.0
    y_meas = np.empty((total, N_CV))
    u_meas = np.empty((total, N_MV))
    sp = np.empty((total, N_MV))
    hist_y = np.tile(plant.outputs(state, u_sp), (s, 1))
    hist_u = np.tile(u_sp, (s, 1))
    sigma_y = np.asarray(plant.noise_sigma, dtype=float)
    sigma_u = np.asarray(plant.mv_noise, dtype=float)
    changes = {int(k) + warmup: np.asarray(v, dtype=float) for k, v in (limit_schedule or ())}
    for k in range(total):
        y_lim = changes.get(k, y_lim)
        cmd = ex.step(rulebase, hist_y, hist_u, y_lim)
        u_sp = ex.apply_command(rulebase, u_sp, cmd)
        u_clean, x = advance(regulatory, x, u_sp)
        u = u_clean + sigma_u * rng.standard_normal(N_MV)
        log_eff = plant.efficiency_memory * log_eff + plant.efficiency_noise * rng.standard_normal()
        state = plant.advance_state(state, u, plant.holdup_noise * rng.standard_normal())
        y = plant.outputs(state, u, np.exp(log_eff)) + sigma_y * rng.standard_normal(N_CV)
        _check_bounded(plant, y, k)
        y_meas[k], u_meas[k], sp[k] = y, u, u_sp
        hist_y = np.vstack([hist_y[1:], y])
        hist_u = np.vstack([hist_u[1:], u])
    keep = slice(warmup, total)
    n = steps
    return SampledSeries(
        timestamp=np.arange(n, dtype=float) * SAMPLE_PERIOD,
        u=u_meas[keep], u_sp=sp[keep], y=y_meas[keep],
        sag_running=np.ones(n, dtype=bool), expert_online=np.ones(n, dtype=bool),
    )


def random_limit_schedule(rng, steps, every=240, y1_range=(1150.0, 1350.0), y2_lim=11000.0):
    """Pressure limit redrawn uniformly every ``every`` samples."""
    return [(k, (float(rng.uniform(*y1_range)), y2_lim)) for k in range(0, steps, every)]


def _loop_state_at_rest(model, u_sp):
    """State with ``x = A x + B s`` for constant standardised setpoint ``s``."""
    s = model.scaler.transform(u_sp)
    n = model.order
    return np.linalg.solve(np.eye(n) - model.A, model.B @ s + model.K @ model.e) if n else np.zeros(0)


def to_raw(series, rng, jitter=None, block=6):
    """Expand a 30 s series into 5 s records (for ingest demos).

    Each sample becomes ``block`` records: the sample itself twice and
    ``+-`` jittered copies in pairs, so the median of every block is the
    original value.
    """
    jitter = np.asarray([1.0, 5.0] if jitter is None else jitter, dtype=float)
    if block % 2:
        raise ValueError("block must be even")
    L = len(series)
    period = series.sample_period / block
    ts = (np.arange(L * block) + 1) * period + series.timestamp[0] - series.sample_period
    half = rng.standard_normal((L, (block - 2) // 2, N_CV)) * jitter
    noise = np.concatenate([half, -half, np.zeros((L, 2, N_CV))], axis=1)
    noise = noise[:, rng.permutation(block)]
    y = np.repeat(series.y, block, axis=0) + noise.reshape(-1, N_CV)
    return SampledSeries(
        timestamp=ts, u=np.repeat(series.u, block, axis=0), u_sp=np.repeat(series.u_sp, block, axis=0),
        y=y, sag_running=np.repeat(series.sag_running, block), expert_online=np.repeat(series.expert_online, block),
        sample_period=period,
    )


# -- disturbance scenarios ------------------------------------------------------

@dataclass(frozen=True)
class DisturbanceScenario:
    """Per-CV piecewise-constant factor schedules ``((k_start, factor), ...)``.

    Before the first breakpoint a CV's factor is 1.
    """

    name: str
    schedules: tuple = ((), ())
    description: str = ""

    def __post_init__(self):
        scheds = tuple(tuple(sorted((int(k), float(f)) for k, f in s)) for s in self.schedules)
        if len(scheds) != N_CV:
            raise ValueError("one schedule per CV is required")
        for s in scheds:
            if any(f <= 0 or not np.isfinite(f) for _, f in s):
                raise ValueError("factors must be positive and finite")
        object.__setattr__(self, "schedules", scheds)

    def factors(self, k):
        """Factor matrix ``(len(k), 2)`` at sample indices ``k``."""
        k = np.atleast_1d(np.asarray(k))
        out = np.ones((k.size, N_CV))
        for j, sched in enumerate(self.schedules):
            if not sched:
                continue
            starts = np.array([b for b, _ in sched])
            vals = np.array([f for _, f in sched])
            idx = np.searchsorted(starts, k, side="right") - 1
            out[:, j] = np.where(idx >= 0, vals[np.maximum(idx, 0)], 1.0)
        return out

    def to_dict(self):
        return {"name": self.name, "description": self.description,
                "factors": {f"y{j + 1}": [list(p) for p in s] for j, s in enumerate(self.schedules)}}

    @classmethod
    def from_dict(cls, d):
        f = d.get("factors", {})
        return cls(d["name"], (tuple(f.get("y1", ())), tuple(f.get("y2", ()))), d.get("description", ""))


def identity_scenario():
    return DisturbanceScenario("identity", ((), ()), "no disturbance")


def wear_scenario(months, rate=0.02):
    """Liner wear: constant pressure factor ``1 + rate * months``; power untouched."""
    if months < 0:
        raise ValueError("months must be non-negative")
    factor = 1.0 + rate * months
    return DisturbanceScenario(
        f"wear_{months:g}m", (((0, factor),), ()),
        f"liner wear after {months:g} months, pressure x{factor:g}")


def hardness_scenario(increase, onset=0, ramp=0):
    """Harder ore: both CVs scaled by ``1 + increase`` from ``onset``.

    With ``ramp > 0`` the factor rises linearly over ``ramp`` samples.
    """
    if increase < 0:
        raise ValueError("increase must be non-negative")
    if increase == 0:
        return DisturbanceScenario("hardness_0", ((), ()), "no hardness change")
    if ramp > 0:
        steps = [(onset + i, 1.0 + increase * (i + 1) / (ramp + 1)) for i in range(ramp)]
        steps.append((onset + ramp, 1.0 + increase))
    else:
        steps = [(onset, 1.0 + increase)]
    steps = tuple(steps)
    return DisturbanceScenario(
        f"hardness_{increase:g}", (steps, steps),
        f"ore hardness +{100 * increase:g}% from sample {onset}")


def apply(scenario, series):
    """Multiply the CVs by the scenario factors; everything else is copied."""
    f = scenario.factors(np.arange(len(series)))
    if np.all(f == 1.0):
        return replace(series, y=np.array(series.y, copy=True))
    return replace(series, y=np.asarray(series.y) * f)


def load_scenario(path):
    with open(path) as fh:
        return DisturbanceScenario.from_dict(json.load(fh))


def save_scenario(scenario, path):
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
