"""3-D urban world: statistical building realization, line-of-sight tests, kinematics.

Buildings follow the ITU-style local statistical model: a built-up area ratio
alpha, a density beta (buildings per km^2), and Rayleigh-distributed heights
with mean delta_m. Layout is a jittered grid of square footprints sized so the
total footprint equals alpha * area.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_USER_HEIGHT_M = 1.5
DEFAULT_HOVER_POWER_W = 100.0
DEFAULT_PROPULSION_J_PER_M = 5.0

QUASI_STATIONARY = "quasi_stationary"
RANDOM_WAYPOINT = "random_waypoint"


class WorldConfigError(ValueError):
    """Raised for infeasible or inconsistent world parameters."""


@dataclass(frozen=True)
class WorldConfig:
    area_x_m: float = 1000.0
    area_y_m: float = 1000.0
    alpha: float = 0.3            # built-up area ratio
    beta: float = 300.0           # buildings per km^2
    delta_m: float = 30.0         # mean building height
    gcs_position: tuple = (0.0, 500.0, 0.0)
    seed: int = 0
    num_users: int = 30
    num_uavs: int = 3
    uav_h_min_m: float = 23.0
    uav_h_max_m: float = 300.0
    uav_tx_power_dbm: float = 24.0
    uav_init_alt_m: float | None = None
    user_mobility: str = QUASI_STATIONARY
    user_speed_min_mps: float = 0.5
    user_speed_max_mps: float = 2.0
    user_height_m: float = DEFAULT_USER_HEIGHT_M

    def __post_init__(self):
        if self.area_x_m <= 0 or self.area_y_m <= 0:
            raise WorldConfigError("area dimensions must be positive")
        if not (0.0 <= self.alpha < 1.0):
            raise WorldConfigError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.beta < 0:
            raise WorldConfigError(f"beta must be >= 0, got {self.beta}")
        if self.delta_m <= 0:
            raise WorldConfigError(f"delta_m must be positive, got {self.delta_m}")
        if self.uav_h_min_m > self.uav_h_max_m:
            raise WorldConfigError("uav_h_min_m must not exceed uav_h_max_m")
        if self.user_mobility not in (QUASI_STATIONARY, RANDOM_WAYPOINT):
            raise WorldConfigError(f"unknown user mobility mode {self.user_mobility!r}")

    @property
    def area_km2(self) -> float:
        return self.area_x_m * self.area_y_m / 1e6


@dataclass(frozen=True)
class Building:
    x: float
    y: float
    width: float
    depth: float
    height_m: float


@dataclass
class UavState:
    position: np.ndarray          # (3,) meters
    h_min_m: float
    h_max_m: float
    tx_power_dbm: float = 24.0
    cumulative_energy_j: float = 0.0
    violated_boundary: bool = False


@dataclass
class UserState:
    position: np.ndarray          # (3,) meters, z fixed
    mobility: str = QUASI_STATIONARY
    speed_min_mps: float = 0.5
    speed_max_mps: float = 2.0
    waypoint: np.ndarray | None = None
    speed_mps: float = 0.0


@dataclass
class MovementAction:
    """Per-UAV control: travel distance plus pitch/yaw direction angles."""

    distance_m: float
    pitch_rad: float    # [-pi/2, pi/2]
    yaw_rad: float      # [0, 2*pi)


@dataclass
class WorldRealization:
    """One generated 3-D scene; immutable after generation apart from agent states."""

    config: WorldConfig
    buildings: list[Building]
    users: list[UserState]
    uavs: list[UavState]
    gcs_position: np.ndarray
    # column arrays over buildings, for vectorized LoS tests
    bx: np.ndarray = field(repr=False, default=None)
    by: np.ndarray = field(repr=False, default=None)
    bw: np.ndarray = field(repr=False, default=None)
    bd: np.ndarray = field(repr=False, default=None)
    bh: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.bx is None:
            self.bx = np.array([b.x for b in self.buildings])
            self.by = np.array([b.y for b in self.buildings])
            self.bw = np.array([b.width for b in self.buildings])
            self.bd = np.array([b.depth for b in self.buildings])
            self.bh = np.array([b.height_m for b in self.buildings])


def building_count(config: WorldConfig) -> int:
    return int(round(config.beta * config.area_km2))


def generate_world(config: WorldConfig, seed: int | None = None) -> WorldRealization:
    """Generate buildings, users, and UAVs deterministically from the seed.

    Building count is round(beta * area_km2); square footprints on a jittered
    grid sized so total footprint equals alpha * area; heights i.i.d. Rayleigh
    with mean delta_m. alpha = 0 yields an empty skyline regardless of beta
    (zero-footprint buildings cannot exist). Users are uniform in the area.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n_b = building_count(config) if config.alpha > 0 else 0

    buildings: list[Building] = []
    if n_b > 0:
        side = math.sqrt(config.alpha * config.area_x_m * config.area_y_m / n_b)
        nx = max(1, math.ceil(math.sqrt(n_b * config.area_x_m / config.area_y_m)))
        ny = math.ceil(n_b / nx)
        cell_w = config.area_x_m / nx
        cell_h = config.area_y_m / ny
        if side > min(cell_w, cell_h):
            raise WorldConfigError(
                f"infeasible packing: footprint side {side:.1f} m exceeds grid cell "
                f"{cell_w:.1f} x {cell_h:.1f} m (alpha={config.alpha}, beta={config.beta})")
        cells = rng.permutation(nx * ny)[:n_b]
        heights = rng.rayleigh(scale=config.delta_m * math.sqrt(2.0 / math.pi), size=n_b)
        jit_x = rng.uniform(0.0, cell_w - side, size=n_b)
        jit_y = rng.uniform(0.0, cell_h - side, size=n_b)
        for i, cell in enumerate(cells):
            cx = (cell % nx) * cell_w
            cy = (cell // nx) * cell_h
            buildings.append(Building(cx + jit_x[i], cy + jit_y[i], side, side, heights[i]))

    users = []
    for _ in range(config.num_users):
        pos = np.array([rng.uniform(0, config.area_x_m), rng.uniform(0, config.area_y_m),
                        config.user_height_m])
        users.append(UserState(pos, config.user_mobility,
                               config.user_speed_min_mps, config.user_speed_max_mps))

    uavs = []
    for _ in range(config.num_uavs):
        alt = (config.uav_init_alt_m if config.uav_init_alt_m is not None
               else rng.uniform(config.uav_h_min_m, config.uav_h_max_m))
        pos = np.array([rng.uniform(0, config.area_x_m), rng.uniform(0, config.area_y_m), alt])
        uavs.append(UavState(pos, config.uav_h_min_m, config.uav_h_max_m,
                             config.uav_tx_power_dbm))

    return WorldRealization(config, buildings, users, uavs,
                            np.asarray(config.gcs_position, dtype=float))


def is_los(a, b, world: WorldRealization) -> bool:
    """True iff the open segment a-b clears every building.

    A building blocks the segment when the segment's height drops to or below
    the roof somewhere over the footprint. The degenerate a == b case counts
    as LoS by convention.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.array_equal(a, b):
        return True
    if len(world.buildings) == 0:
        return True
    d = b - a

    t_lo = np.zeros(len(world.buildings))
    t_hi = np.ones(len(world.buildings))
    for axis, (lo_arr, hi_arr) in enumerate(((world.bx, world.bx + world.bw),
                                             (world.by, world.by + world.bd))):
        if d[axis] == 0.0:
            inside = (lo_arr <= a[axis]) & (a[axis] <= hi_arr)
            t_lo = np.where(inside, t_lo, np.inf)
            t_hi = np.where(inside, t_hi, -np.inf)
        else:
            t1 = (lo_arr - a[axis]) / d[axis]
            t2 = (hi_arr - a[axis]) / d[axis]
            t_lo = np.maximum(t_lo, np.minimum(t1, t2))
            t_hi = np.minimum(t_hi, np.maximum(t1, t2))

    crossing = t_lo <= t_hi
    if not crossing.any():
        return True
    # open segment: a crossing confined to exactly one endpoint does not count
    endpoint_touch = (t_lo == t_hi) & ((t_lo == 0.0) | (t_lo == 1.0))
    z_lo = a[2] + t_lo * d[2]
    z_hi = a[2] + t_hi * d[2]
    blocked = crossing & ~endpoint_touch & (np.minimum(z_lo, z_hi) <= world.bh)
    return not bool(blocked.any())


def step_uav(state: UavState, action: MovementAction, slot_dt_s: float,
             area_x_m: float, area_y_m: float,
             hover_power_w: float = DEFAULT_HOVER_POWER_W,
             propulsion_j_per_m: float = DEFAULT_PROPULSION_J_PER_M) -> UavState:
    """Advance one UAV by a (distance, pitch, yaw) command, clipping to the airspace box.

    Sets violated_boundary on the returned state iff the pre-clip position left
    the box. Energy drawn = hover_power_w * dt + propulsion_j_per_m * distance
    actually travelled (post-clip displacement).
    """
    comps = (action.distance_m, action.pitch_rad, action.yaw_rad)
    if not all(math.isfinite(c) for c in comps):
        raise ValueError(f"non-finite movement action {action}")
    if action.distance_m < 0:
        raise ValueError(f"negative movement distance {action.distance_m}")

    direction = np.array([
        math.cos(action.pitch_rad) * math.cos(action.yaw_rad),
        math.cos(action.pitch_rad) * math.sin(action.yaw_rad),
        math.sin(action.pitch_rad),
    ])
    raw = state.position + action.distance_m * direction
    clipped = np.array([
        min(max(raw[0], 0.0), area_x_m),
        min(max(raw[1], 0.0), area_y_m),
        min(max(raw[2], state.h_min_m), state.h_max_m),
    ])
    violated = bool(np.any(raw != clipped))
    moved = float(np.linalg.norm(clipped - state.position))
    energy = hover_power_w * slot_dt_s + propulsion_j_per_m * moved
    return UavState(clipped, state.h_min_m, state.h_max_m, state.tx_power_dbm,
                    state.cumulative_energy_j + energy, violated)


def step_users(users: list[UserState], slot_dt_s: float, rng: np.random.Generator,
               area_x_m: float, area_y_m: float) -> list[UserState]:
    """Advance user positions one slot.

    Quasi-stationary users are returned unchanged; random-waypoint users move
    toward their waypoint at their drawn speed (displacement <= v_max * dt),
    picking a fresh waypoint and speed on arrival.
    """
    out = []
    for u in users:
        if u.mobility == QUASI_STATIONARY:
            out.append(u)
            continue
        pos = u.position.copy()
        waypoint, speed = u.waypoint, u.speed_mps
        if waypoint is None or np.linalg.norm(waypoint[:2] - pos[:2]) < 1e-9:
            waypoint = np.array([rng.uniform(0, area_x_m), rng.uniform(0, area_y_m), pos[2]])
            speed = rng.uniform(u.speed_min_mps, u.speed_max_mps)
        delta = waypoint[:2] - pos[:2]
        dist = float(np.linalg.norm(delta))
        step = min(speed * slot_dt_s, dist)
        if dist > 0:
            pos[:2] += delta / dist * step
        out.append(UserState(pos, u.mobility, u.speed_min_mps, u.speed_max_mps,
                             waypoint, speed))
    return out


def export_buildings_csv(world: WorldRealization, path) -> None:
    """Write one building per row: x, y, w, d, h."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "w", "d", "h"])
        for b in world.buildings:
            writer.writerow([repr(b.x), repr(b.y), repr(b.width), repr(b.depth),
                             repr(b.height_m)])
