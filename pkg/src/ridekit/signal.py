"""Denoising, resampling, and vehicle-frame inference for raw sensor streams.

Three smoothers are provided for the accelerometer/gyroscope channels: a
centered moving average (the production default), a second-order trend
filter, and first-order total-variation denoising. The latter two solve

    minimize  0.5 * ||x - v||^2 + lam * ||D_k x||_1

with D_k the k-th order difference operator, via a primal-dual interior
point method on the box-constrained dual QP. The returned objective is
certified by a duality gap, so the result is within the requested
tolerance of the true optimum and fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, solveh_banded

from . import RidekitError
from .geo import initial_bearing_deg, wrap_deg
from .ingest import Ride

GRAVITY_MPS2 = 9.80665

# Inclusive-window slack so samples landing exactly on a window edge are
# kept despite decimal timestamps not being exact binary floats.
_EDGE_EPS_S = 1e-9

AXES = ("x", "y", "z")


class SignalError(RidekitError):
    pass


class EmptySeries(SignalError):
    pass


class NonUniformSpacing(SignalError):
    pass


class NonConvergence(SignalError):
    pass


@dataclass
class Series:
    """A finite, strictly time-ordered scalar series.

    `gap` marks timestamps that carry no real observation (their value is a
    placeholder zero); downstream consumers must skip them.
    """

    t: np.ndarray
    v: np.ndarray
    gap: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.t.shape != self.v.shape:
            raise SignalError("t and v must have the same length")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise SignalError("timestamps must be strictly increasing")
        real = self.v if self.gap is None else self.v[~np.asarray(self.gap, dtype=bool)]
        if real.size and not np.all(np.isfinite(real)):
            raise SignalError("values must be finite")
        if self.gap is not None:
            self.gap = np.asarray(self.gap, dtype=bool)

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class AxisMapping:
    """Which phone axes carry the vehicle's forward and sideways motion."""

    longitudinal_axis: str
    longitudinal_sign: int
    lateral_axis: str
    lateral_sign: int
    confidence: float

    def __post_init__(self):
        if self.longitudinal_axis == self.lateral_axis:
            raise SignalError("longitudinal and lateral axis must differ")


#: Orientation assumed when turn data is too thin to infer one: phone in
#: landscape on the dashboard, forward motion on Z, side-to-side on Y.
LANDSCAPE_DEFAULT = AxisMapping("z", 1, "y", 1, 0.0)


@dataclass
class VehicleKinematics:
    """1 Hz vehicle-frame kinematics on a shared integer-second grid."""

    ride_id: str
    driver_id: str
    start_time: object
    t: np.ndarray
    speed: np.ndarray
    lon_accel: np.ndarray
    lat_accel: np.ndarray
    yaw_rate: np.ndarray
    gap: np.ndarray

    def __len__(self) -> int:
        return len(self.t)


def moving_average(s: Series, window: float = 1.0) -> Series:
    """Centered moving average over [t - window/2, t + window/2].

    Output timestamps equal input timestamps; windows are truncated at the
    series boundaries. Window edges are inclusive (with a nanosecond-scale
    slack for decimal timestamps).
    """
    if len(s) == 0:
        raise EmptySeries("cannot smooth an empty series")
    if window <= 0:
        raise SignalError("window must be positive")
    half = window / 2.0 + _EDGE_EPS_S
    lo = np.searchsorted(s.t, s.t - half, side="left")
    hi = np.searchsorted(s.t, s.t + half, side="right")
    csum = np.concatenate(([0.0], np.cumsum(s.v)))
    out = (csum[hi] - csum[lo]) / (hi - lo)
    return Series(s.t.copy(), out, None if s.gap is None else s.gap.copy())


def _diff_t(nu: np.ndarray) -> np.ndarray:
    # transpose of the first-difference operator
    a = np.concatenate(([0.0], nu))
    b = np.concatenate((nu, [0.0]))
    return a - b


def _apply_dt(nu: np.ndarray, order: int) -> np.ndarray:
    out = nu
    for _ in range(order):
        out = _diff_t(out)
    return out


def _banded_gram(order: int, m: int) -> np.ndarray:
    """D D^T for the difference operator of the given order, in upper banded form."""
    ab = np.zeros((order + 1, m))
    if order == 1:
        ab[0, 1:] = -1.0
        ab[1, :] = 2.0
    else:
        ab[0, 2:] = 1.0
        ab[1, 1:] = -4.0
        ab[2, :] = 6.0
    return ab


def _solve_difference_l1(
    y: np.ndarray,
    lam: float,
    order: int,
    gap_tol: float = 1e-12,
    max_iter: int = 100,
) -> np.ndarray:
    """Minimize 0.5*||x-y||^2 + lam*||D_order x||_1 with a certified duality gap.

    Interior point iteration on the dual
        minimize 0.5*nu' DD' nu - nu' D y   s.t.  |nu| <= lam,
    recovering x = y - D' nu. Stops when the primal-dual gap falls below
    gap_tol * max(1, primal objective); raises NonConvergence otherwise.
    """
    n = y.size
    m = n - order
    if lam < 0:
        raise SignalError("lambda must be non-negative")
    if lam == 0 or m <= 0:
        return y.copy()

    Dy = np.diff(y, n=order)
    gram = _banded_gram(order, m)
    gram_chol = cholesky_banded(gram, lower=False)

    ALPHA, BETA, MU, MAX_LS = 0.01, 0.5, 2.0, 40
    z = np.zeros(m)
    mu1 = np.ones(m)
    mu2 = np.ones(m)
    t_barrier = 1e-12
    step = math.inf

    for _ in range(max_iter):
        DTz = _apply_dt(z, order)
        DDTz = np.diff(DTz, n=order)
        w = Dy - (mu1 - mu2)

        # Two upper bounds on the optimal primal objective: the first stays
        # informative when lam is huge, the second when constraints bind.
        pobj1 = 0.5 * float(w @ cho_solve_banded((gram_chol, False), w)) + lam * float(
            (mu1 + mu2).sum()
        )
        Dx = Dy - DDTz
        pobj2 = 0.5 * float(DTz @ DTz) + lam * float(np.abs(Dx).sum())
        pobj = min(pobj1, pobj2)
        dobj = -0.5 * float(DTz @ DTz) + float(Dy @ z)
        gap = pobj - dobj
        if gap <= gap_tol * max(1.0, abs(pobj)):
            return y - DTz

        if step >= 0.2:
            t_barrier = max(2.0 * m * MU / gap, 1.2 * t_barrier)

        f1 = z - lam
        f2 = -z - lam
        inv_t = 1.0 / t_barrier
        s_band = gram.copy()
        s_band[order] += -(mu1 / f1 + mu2 / f2)
        rhs = -DDTz + Dy + inv_t / f1 - inv_t / f2
        dz = solveh_banded(s_band, rhs, lower=False)
        dmu1 = -(mu1 + (inv_t + dz * mu1) / f1)
        dmu2 = -(mu2 + (inv_t - dz * mu2) / f2)

        res_dual = DDTz - w
        res_cent = np.concatenate((-mu1 * f1 - inv_t, -mu2 * f2 - inv_t))
        res_norm = math.sqrt(float(res_dual @ res_dual) + float(res_cent @ res_cent))

        step = 1.0
        neg1 = dmu1 < 0
        neg2 = dmu2 < 0
        if neg1.any():
            step = min(step, 0.99 * float(np.min(-mu1[neg1] / dmu1[neg1])))
        if neg2.any():
            step = min(step, 0.99 * float(np.min(-mu2[neg2] / dmu2[neg2])))

        for _ in range(MAX_LS):
            new_z = z + step * dz
            new_mu1 = mu1 + step * dmu1
            new_mu2 = mu2 + step * dmu2
            new_f1 = new_z - lam
            new_f2 = -new_z - lam
            if max(float(new_f1.max()), float(new_f2.max())) < 0:
                new_DTz = _apply_dt(new_z, order)
                new_res_dual = np.diff(new_DTz, n=order) - Dy + (new_mu1 - new_mu2)
                new_res_cent = np.concatenate(
                    (-new_mu1 * new_f1 - inv_t, -new_mu2 * new_f2 - inv_t)
                )
                new_norm = math.sqrt(
                    float(new_res_dual @ new_res_dual) + float(new_res_cent @ new_res_cent)
                )
                if new_norm <= (1.0 - ALPHA * step) * res_norm:
                    break
            step *= BETA
        z, mu1, mu2 = new_z, new_mu1, new_mu2

    raise NonConvergence(f"duality gap above tolerance after {max_iter} iterations")


def _check_uniform(s: Series) -> None:
    if len(s) < 3:
        raise SignalError("need at least 3 samples")
    dt = np.diff(s.t)
    mean_dt = float(dt.mean())
    if mean_dt <= 0 or float(np.max(np.abs(dt - mean_dt))) > 1e-6 * mean_dt:
        raise NonUniformSpacing("series must be uniformly spaced; resample first")


def l1_trend_filter(s: Series, lam: float, gap_tol: float = 1e-12, max_iter: int = 100) -> Series:
    """Piecewise-linear trend fit: second-difference l1 penalty.

    lam = 0 returns the input unchanged; as lam grows the output approaches
    the least-squares affine fit.
    """
    _check_uniform(s)
    x = _solve_difference_l1(s.v, lam, order=2, gap_tol=gap_tol, max_iter=max_iter)
    return Series(s.t.copy(), x, None if s.gap is None else s.gap.copy())


def tv_denoise(s: Series, lam: float, gap_tol: float = 1e-12, max_iter: int = 100) -> Series:
    """Piecewise-constant denoising: first-difference l1 penalty."""
    _check_uniform(s)
    x = _solve_difference_l1(s.v, lam, order=1, gap_tol=gap_tol, max_iter=max_iter)
    return Series(s.t.copy(), x, None if s.gap is None else s.gap.copy())


def difference_l1_objective(y: np.ndarray, x: np.ndarray, lam: float, order: int) -> float:
    """Objective value of the trend/TV program at x (for checks and tests)."""
    r = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return 0.5 * float(r @ r) + lam * float(np.abs(np.diff(x, n=order)).sum())


def resample_to_1hz(s: Series) -> Series:
    """Bin-average onto the integer-second grid spanned by the input.

    Output second k is the mean of samples with t in [k - 0.5, k + 0.5);
    grid seconds with no samples are emitted with gap=True and value 0.
    """
    if len(s) == 0:
        raise EmptySeries("cannot resample an empty series")
    k_min = int(math.ceil(s.t[0] - _EDGE_EPS_S))
    k_max = int(math.floor(s.t[-1] + _EDGE_EPS_S))
    if k_max < k_min:
        return Series(np.empty(0), np.empty(0), np.empty(0, dtype=bool))
    grid = np.arange(k_min, k_max + 1, dtype=float)
    bins = np.floor(s.t + 0.5).astype(int) - k_min
    ok = (bins >= 0) & (bins < len(grid))
    sums = np.bincount(bins[ok], weights=s.v[ok], minlength=len(grid))
    counts = np.bincount(bins[ok], minlength=len(grid))
    gap = counts == 0
    out = sums / np.maximum(counts, 1)
    out[gap] = 0.0
    return Series(grid, out, gap)


def _variance(v: np.ndarray) -> float:
    return float(np.var(v)) if v.size else 0.0


def _windows_mask(t: np.ndarray, windows) -> np.ndarray:
    mask = np.zeros(len(t), dtype=bool)
    for a, b in windows:
        mask |= (t >= a) & (t <= b)
    return mask


def _heading_rate(gps) -> tuple[np.ndarray, np.ndarray]:
    """Compass heading change rate (deg/s) at GPS fix times.

    Prefers the receiver-reported heading column; falls back to bearings
    between consecutive fixes when most headings are missing.
    """
    t = gps.t
    heading = gps.heading
    if np.isfinite(heading).sum() < 0.5 * len(t) and len(t) >= 2:
        heading = np.full(len(t), np.nan)
        brg = initial_bearing_deg(gps.lat[:-1], gps.lon[:-1], gps.lat[1:], gps.lon[1:])
        heading[:-1] = brg
        heading[-1] = brg[-1] if len(brg) else np.nan
    if len(t) < 2:
        return t, np.zeros(len(t))
    dh = wrap_deg(np.diff(heading))
    dt = np.diff(t)
    rate = np.where(np.isfinite(dh) & (dt > 0), dh / np.maximum(dt, 1e-9), 0.0)
    return t[1:], rate


def infer_axis_mapping(ride: Ride, turn_windows) -> AxisMapping:
    """Infer forward/sideways phone axes from driving dynamics.

    The gravity-carrying axis is the one with the largest absolute median.
    Of the other two, the forward axis is the one that tracks the GPS
    speed derivative (turn-heavy driving can put more raw variance on the
    sideways axis, so variance alone misleads); the sideways axis then
    dominates variance inside turn windows among the rest. Signs are fixed
    so forward acceleration means speeding up and positive lateral
    acceleration means a left turn. Fewer than 3 turn windows falls back
    to LANDSCAPE_DEFAULT.
    """
    if len(turn_windows) < 3:
        return AxisMapping(
            LANDSCAPE_DEFAULT.longitudinal_axis,
            LANDSCAPE_DEFAULT.longitudinal_sign,
            LANDSCAPE_DEFAULT.lateral_axis,
            LANDSCAPE_DEFAULT.lateral_sign,
            0.0,
        )

    accel = ride.accel
    smoothed = {}
    medians = {}
    for name in AXES:
        raw = accel.axis(name)
        medians[name] = float(np.median(raw))
        sm = moving_average(Series(accel.t, raw), 1.0)
        smoothed[name] = sm.v - medians[name]

    gravity_axis = max(AXES, key=lambda a: abs(medians[a]))
    candidates = [a for a in AXES if a != gravity_axis]

    gps = ride.gps
    speed_corr = {}
    if len(gps) >= 3:
        speed_sm = moving_average(Series(gps.t, gps.speed), 1.0)
        dv = np.gradient(speed_sm.v, gps.t)
        dv_norm = float(np.sqrt(dv @ dv))
        for name in candidates:
            on_gps = np.interp(gps.t, accel.t, smoothed[name])
            norm = float(np.sqrt(on_gps @ on_gps))
            speed_corr[name] = (
                float(np.dot(on_gps, dv)) / (norm * dv_norm) if norm * dv_norm > 0 else 0.0
            )
    if speed_corr and any(abs(c) > 0 for c in speed_corr.values()):
        longitudinal = max(candidates, key=lambda a: abs(speed_corr[a]))
    else:
        longitudinal = max(candidates, key=lambda a: _variance(smoothed[a]))

    turn_mask = _windows_mask(accel.t, turn_windows)
    rest = [a for a in AXES if a != longitudinal]
    turn_var = {a: _variance(smoothed[a][turn_mask]) for a in rest}
    lateral = max(rest, key=lambda a: turn_var[a])
    runner_up = min(rest, key=lambda a: turn_var[a])
    if turn_var[lateral] <= 0:
        confidence = 0.0
    else:
        confidence = min(1.0, max(0.0, 1.0 - turn_var[runner_up] / turn_var[lateral]))

    lon_sign = 1
    if speed_corr.get(longitudinal, 0.0) < 0:
        lon_sign = -1

    # Lateral sign: a left turn lowers the compass heading, so positive
    # lateral acceleration must track -d(heading)/dt scaled by speed.
    lat_sign = 1
    rate_t, rate = _heading_rate(gps)
    if len(rate_t):
        speed_on_rate = np.interp(rate_t, gps.t, gps.speed)
        target = -np.radians(rate) * speed_on_rate
        lat_on_rate = np.interp(rate_t, accel.t, smoothed[lateral]) * GRAVITY_MPS2
        in_turns = _windows_mask(rate_t, turn_windows)
        if in_turns.any():
            c = float(np.dot(lat_on_rate[in_turns], target[in_turns]))
            if c < 0:
                lat_sign = -1

    return AxisMapping(longitudinal, lon_sign, lateral, lat_sign, confidence)


Smoother = Callable[[Series], Series]


def _default_smoother(s: Series) -> Series:
    return moving_average(s, 1.0)


def _gravity_axis(accel) -> tuple[str, float]:
    medians = {name: float(np.median(accel.axis(name))) for name in AXES}
    axis = max(AXES, key=lambda a: abs(medians[a]))
    return axis, medians[axis]


def to_vehicle_frame(
    ride: Ride,
    mapping: AxisMapping,
    smoother: Smoother | None = None,
) -> VehicleKinematics:
    """Produce 1 Hz vehicle-frame kinematics from a parsed ride.

    Accelerations are converted from G units to m/s^2, de-biased by each
    axis's ride-long median (gravity leakage plus sensor bias), smoothed,
    and bin-averaged onto the integer-second grid. Speed comes from GPS
    with a 1 s moving average. Yaw rate is the gyro axis most aligned with
    gravity, signed so positive means a left turn.
    """
    smoother = smoother or _default_smoother
    accel = ride.accel

    def accel_series(axis: str, sign: int) -> Series:
        raw = accel.axis(axis) * sign * GRAVITY_MPS2
        centered = raw - float(np.median(raw))
        return resample_to_1hz(smoother(Series(accel.t, centered)))

    lon = accel_series(mapping.longitudinal_axis, mapping.longitudinal_sign)
    lat = accel_series(mapping.lateral_axis, mapping.lateral_sign)

    gps = ride.gps
    speed = resample_to_1hz(moving_average(Series(gps.t, gps.speed), 1.0))

    if ride.gyro is not None and len(ride.gyro):
        g_axis, g_median = _gravity_axis(accel)
        sign = 1.0 if g_median >= 0 else -1.0
        yaw_raw = ride.gyro.axis(g_axis) * sign
        yaw = resample_to_1hz(smoother(Series(ride.gyro.t, yaw_raw)))
    else:
        yaw = Series(lon.t.copy(), np.zeros(len(lon)), np.zeros(len(lon), dtype=bool))

    k_lo = int(max(s.t[0] for s in (lon, lat, speed, yaw) if len(s)))
    k_hi = int(min(s.t[-1] for s in (lon, lat, speed, yaw) if len(s)))
    if k_hi < k_lo:
        raise SignalError("GPS and accelerometer cover disjoint time ranges")

    def window(s: Series) -> Series:
        i = int(k_lo - s.t[0])
        j = i + (k_hi - k_lo) + 1
        return Series(s.t[i:j], s.v[i:j], s.gap[i:j] if s.gap is not None else None)

    lon, lat, speed, yaw = window(lon), window(lat), window(speed), window(yaw)
    gap = np.zeros(len(lon), dtype=bool)
    for s in (lon, lat, speed, yaw):
        if s.gap is not None:
            gap |= s.gap

    return VehicleKinematics(
        ride_id=ride.ride_id,
        driver_id=ride.driver_id,
        start_time=ride.start_time,
        t=lon.t,
        speed=np.maximum(speed.v, 0.0),
        lon_accel=lon.v,
        lat_accel=lat.v,
        yaw_rate=yaw.v,
        gap=gap,
    )
