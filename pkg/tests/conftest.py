from __future__ import annotations

import sys
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ridekit import synth
from ridekit.ingest import AxisStream, GpsStream, Ride

START = datetime.fromisoformat("2016-06-14T08:00:00-07:00")


@pytest.fixture(scope="session")
def grid_network():
    """Small street grid without a highway; shared read-only."""
    return synth.generate_network(5, block_m=240.0, highway=False, seed=11)


def make_ride(
    gps_t,
    gps_latlon,
    gps_speed,
    accel_t,
    accel_xyz,
    gyro_xyz=None,
    heading=None,
    ride_id="ride-t",
    driver_id="drv-t",
    start_time=START,
) -> Ride:
    """Assemble a Ride from raw arrays (test scripting helper)."""
    gps_t = np.asarray(gps_t, dtype=float)
    latlon = np.asarray(gps_latlon, dtype=float)
    heading = (
        np.full(len(gps_t), np.nan) if heading is None else np.asarray(heading, dtype=float)
    )
    gps = GpsStream(
        t=gps_t,
        lat=latlon[:, 0],
        lon=latlon[:, 1],
        speed=np.asarray(gps_speed, dtype=float),
        heading=heading,
    )
    accel_t = np.asarray(accel_t, dtype=float)
    ax, ay, az = (np.asarray(a, dtype=float) for a in accel_xyz)
    accel = AxisStream("accel", accel_t, ax, ay, az)
    gyro = None
    if gyro_xyz is not None:
        gx, gy, gz = (np.asarray(g, dtype=float) for g in gyro_xyz)
        gyro = AxisStream("gyro", accel_t.copy(), gx, gy, gz)
    return Ride(ride_id, driver_id, start_time, gps, accel, gyro=gyro)
