"""Deterministic lane-change experiment: a cut-in ahead of an ACC+AEB ego vehicle.

The scenario variable is ``x = [1/TTC, 1/R]`` at the moment the cut-in
completes; the lead vehicle then holds its speed ``v`` and the ego reacts.
The event of interest is the minimum range dropping below a threshold.

Integration scheme: the ACC phase uses fixed-step RK4 on ``(R, v_ego)``.
AEB engagement is located inside the step (secant on ``R + T*Rdot``), the
braking phase is integrated exactly (constant deceleration), and braking
stays latched until the range rate reaches zero. Locating the switch keeps
the result insensitive to ``dt``; the latch avoids chattering at the TTC
boundary.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .distributions import Exponential, Pareto, Product


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    horizon: float = 10.0
    acc_time_headway: float = 1.5
    acc_gain_spacing: float = 0.1
    acc_gain_speed: float = 0.5
    aeb_ttc_trigger: float = 1.5
    aeb_decel: float = 6.0
    ego_accel_min: float = -6.0
    ego_accel_max: float = 2.0
    range_event_threshold: float = 2.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least dt")
        if not self.aeb_decel > 0:
            raise ValueError("aeb_decel must be positive")
        if not self.range_event_threshold > 0:
            raise ValueError("range_event_threshold must be positive")
        if self.aeb_ttc_trigger < 0:
            raise ValueError("aeb_ttc_trigger must be non-negative")
        if self.ego_accel_min > 0 or self.ego_accel_max < 0:
            raise ValueError("ego accel limits must bracket zero")

    def as_dict(self) -> dict:
        return asdict(self)

    def _args(self):
        return (
            float(self.dt), float(self.horizon), float(self.acc_time_headway),
            float(self.acc_gain_spacing), float(self.acc_gain_speed), float(self.aeb_ttc_trigger),
            float(self.aeb_decel), float(self.ego_accel_min), float(self.ego_accel_max),
        )


@dataclass(frozen=True)
class LaneChangeInitial:
    v: float
    R: float
    TTC: float

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("initial range must be positive")
        if self.v < 0:
            raise ValueError("lead speed must be non-negative")
        if not self.TTC > 0:
            raise ValueError("TTC must be positive (use inf for a non-closing cut-in)")

    @property
    def range_rate(self) -> float:
        return 0.0 if np.isinf(self.TTC) else -self.R / self.TTC

    @property
    def ego_speed(self) -> float:
        return self.v - self.range_rate

    def encode(self) -> np.ndarray:
        return np.array([0.0 if np.isinf(self.TTC) else 1.0 / self.TTC, 1.0 / self.R])


@dataclass(frozen=True)
class Trajectory:
    time: np.ndarray
    ego_speed: np.ndarray
    lead_speed: np.ndarray
    range: np.ndarray
    range_rate: np.ndarray
    min_range: float
    aeb_triggered: bool


def ttc(R: float, R_dot: float) -> float:
    if not R > 0:
        raise ValueError("range must be positive")
    return float("inf") if R_dot >= 0 else -R / R_dot


def decode(x, v: float = 10.0) -> LaneChangeInitial:
    ttc_inv, r_inv = float(x[0]), float(x[1])
    if not r_inv > 0:
        raise ValueError("1/R must be positive")
    if ttc_inv < 0:
        raise ValueError("1/TTC must be non-negative")
    return LaneChangeInitial(v=float(v), R=1.0 / r_inv, TTC=np.inf if ttc_inv == 0 else 1.0 / ttc_inv)


def encode(init: LaneChangeInitial) -> np.ndarray:
    return init.encode()


# -- numerical core ---------------------------------------------------------


@njit(cache=True, nogil=True)
def _acc_accel(R, ve, v, h, ks, kv, amin, amax):
    a = ks * (R - h * ve) + kv * (v - ve)
    if a < amin:
        a = amin
    elif a > amax:
        a = amax
    if ve <= 0.0 and a < 0.0:
        a = 0.0
    return a


@njit(cache=True, nogil=True)
def _rk4(R, ve, v, s, h, ks, kv, amin, amax):
    k1r = v - ve
    k1v = _acc_accel(R, ve, v, h, ks, kv, amin, amax)
    k2r = v - (ve + 0.5 * s * k1v)
    k2v = _acc_accel(R + 0.5 * s * k1r, ve + 0.5 * s * k1v, v, h, ks, kv, amin, amax)
    k3r = v - (ve + 0.5 * s * k2v)
    k3v = _acc_accel(R + 0.5 * s * k2r, ve + 0.5 * s * k2v, v, h, ks, kv, amin, amax)
    k4r = v - (ve + s * k3v)
    k4v = _acc_accel(R + s * k3r, ve + s * k3v, v, h, ks, kv, amin, amax)
    R1 = R + s * (k1r + 2.0 * k2r + 2.0 * k3r + k4r) / 6.0
    ve1 = ve + s * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
    return R1, ve1


@njit(cache=True, nogil=True)
def _run(R0, ve0, v, dt, horizon, h, ks, kv, trig, dec, amin, amax, record, out):
    """Integrate one episode. Returns (min_range, aeb_triggered, rows_written).

    ``out`` rows are (t, v_ego, range) at step boundaries when ``record``.
    """
    R = R0
    ve = ve0
    t = 0.0
    rmin = R0
    aeb = R + trig * (v - ve) < 0.0
    fired = aeb
    rows = 0
    if record:
        out[0, 0] = 0.0
        out[0, 1] = ve
        out[0, 2] = R
        rows = 1
    n_steps = int(np.ceil(horizon / dt - 1e-9))
    for k in range(n_steps):
        step = min(dt, horizon - k * dt)
        left = step
        crashed = False
        while left > 1e-15:
            if aeb:
                rd = v - ve
                if rd >= 0.0:
                    aeb = False
                    continue
                t_rel = -rd / dec
                s = t_rel if t_rel < left else left
                # exact constant-deceleration segment; range minimum sits at its end
                R_end = R + rd * s + 0.5 * dec * s * s
                if R_end <= 0.0:
                    rmin = 0.0
                    crashed = True
                    break
                R = R_end
                ve = ve - dec * s
                if t_rel <= left:
                    ve = v
                    aeb = False
                left -= s
                if R < rmin:
                    rmin = R
            else:
                R1, ve1 = _rk4(R, ve, v, left, h, ks, kv, amin, amax)
                g0 = R + trig * (v - ve)
                g1 = R1 + trig * (v - ve1)
                s = left
                if g1 < 0.0:
                    # locate the TTC crossing by secant on the RK4 substep length
                    lo, glo, hi, ghi = 0.0, g0, left, g1
                    for _ in range(30):
                        mid = lo + (hi - lo) * glo / (glo - ghi)
                        Rm, vm = _rk4(R, ve, v, mid, h, ks, kv, amin, amax)
                        gm = Rm + trig * (v - vm)
                        if gm < 0.0:
                            hi, ghi = mid, gm
                        else:
                            lo, glo = mid, gm
                        if hi - lo < 1e-12 or abs(gm) < 1e-12:
                            break
                    s = hi if glo > 1e-12 else lo
                    R1, ve1 = _rk4(R, ve, v, s, h, ks, kv, amin, amax)
                    aeb = True
                    fired = True
                rd0 = v - ve
                rd1 = v - ve1
                if rd0 < 0.0 < rd1 and s > 0.0:
                    rdd = (rd1 - rd0) / s
                    r_int = R - rd0 * rd0 / (2.0 * rdd)
                    if r_int < rmin:
                        rmin = r_int
                if R1 <= 0.0 or rmin <= 0.0:
                    rmin = 0.0
                    crashed = True
                    break
                R = R1
                ve = ve1
                if R < rmin:
                    rmin = R
                left -= s
        t = k * dt + step
        if record:
            out[rows, 0] = t
            out[rows, 1] = ve
            out[rows, 2] = R if not crashed else 0.0
            rows += 1
        if crashed:
            break
    return max(rmin, 0.0), fired, rows


@njit(cache=True, nogil=True)
def _min_range_batch(R0, ve0, v, dt, horizon, h, ks, kv, trig, dec, amin, amax):
    n = R0.shape[0]
    res = np.empty(n)
    dummy = np.empty((1, 3))
    for i in range(n):
        res[i] = _run(R0[i], ve0[i], v[i], dt, horizon, h, ks, kv, trig, dec, amin, amax, False, dummy)[0]
    return res


def simulate(init: LaneChangeInitial, cfg: SimConfig = SimConfig()) -> Trajectory:
    """Run one episode and return the sampled trajectory."""
    n_steps = int(np.ceil(cfg.horizon / cfg.dt - 1e-9))
    out = np.zeros((n_steps + 1, 3))
    rmin, fired, rows = _run(
        float(init.R), float(init.ego_speed), float(init.v), *cfg._args(), True, out
    )
    out = out[:rows]
    return Trajectory(
        time=out[:, 0].copy(),
        ego_speed=out[:, 1].copy(),
        lead_speed=np.full(rows, float(init.v)),
        range=out[:, 2].copy(),
        range_rate=init.v - out[:, 1],
        min_range=float(rmin),
        aeb_triggered=bool(fired),
    )


def min_range(x, v=10.0, cfg: SimConfig = SimConfig(), workers: int = 1) -> np.ndarray:
    """Vectorised minimum range for encoded points ``x`` of shape ``(n, 2)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 2:
        raise ValueError("lane-change points are [1/TTC, 1/R]")
    if np.any(x[:, 1] <= 0) or np.any(x[:, 0] < 0):
        raise ValueError("need 1/TTC >= 0 and 1/R > 0")
    v = np.broadcast_to(np.asarray(v, dtype=float), (x.shape[0],))
    R0 = 1.0 / x[:, 1]
    ve0 = v + R0 * x[:, 0]
    args = cfg._args()
    if workers <= 1 or x.shape[0] < 2048:
        return _min_range_batch(R0, ve0, np.ascontiguousarray(v), *args)
    chunks = np.array_split(np.arange(x.shape[0]), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda idx: _min_range_batch(R0[idx], ve0[idx], np.ascontiguousarray(v[idx]), *args), chunks)
        return np.concatenate(list(parts))


def indicator(x, v=10.0, cfg: SimConfig = SimConfig(), workers: int = 1) -> np.ndarray:
    """1 where the episode's minimum range falls below ``cfg.range_event_threshold``."""
    return (min_range(x, v, cfg, workers) < cfg.range_event_threshold).astype(float)


class LaneChangeSimulator:
    """Callable black-box indicator with a call counter.

    The simulation kernel releases the GIL and is safe to call from several
    threads. ``serialize=True`` forces one batch at a time anyway.
    """

    def __init__(self, v: float = 10.0, cfg: SimConfig = SimConfig(), workers: int = 1, serialize: bool = False):
        self.v = float(v)
        self.cfg = cfg
        self.workers = workers
        self.serialize = serialize
        self.calls = 0
        self._count_lock = threading.Lock()
        self._run_lock = threading.Lock()

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        with self._count_lock:
            self.calls += x.shape[0]
        if self.serialize:
            with self._run_lock:
                return indicator(x, self.v, self.cfg, self.workers)
        return indicator(x, self.v, self.cfg, self.workers)


# Synthetic natural distribution; no fitted values exist for the source data.
# With the default SimConfig the crude event rate is about 3e-3.
DEFAULT_TTC_INV_RATE = 15.0
DEFAULT_R_INV_SCALE = 0.01
DEFAULT_R_INV_SHAPE = 2.5


def natural_distribution(
    ttc_inv_rate: float = DEFAULT_TTC_INV_RATE,
    r_inv_scale: float = DEFAULT_R_INV_SCALE,
    r_inv_shape: float = DEFAULT_R_INV_SHAPE,
) -> Product:
    return Product((Exponential(ttc_inv_rate), Pareto(r_inv_scale, r_inv_shape)))
