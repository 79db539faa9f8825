"""Deterministic 2D world: kinematics, sensing, submaps, global map.

The simulator stands in for a real robot. Everything it produces is a
pure function of (environment, seed, command history): odometry noise
comes from a counter-based generator, sensing is grid ray marching, and
map fusion is tri-state with a fixed precedence. Submaps are painted in
the SLAM frame on a lattice aligned with the world grid, so a noiseless
run reproduces the environment cell-for-cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .pose_graph import PoseGraph
from .se2 import Pose2, between, compose, inverse, normalize_angle

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

DEFAULT_RESOLUTION = 0.05
ROBOT_RADIUS = 0.17
SUBMAP_CELLS = 120          # 6 m x 6 m at 0.05 m/cell
SENSOR_RANGE = 4.0
SENSOR_BEAMS = 360
RAY_STRIDE = 0.025
LOOP_CLOSURE_RANGE = 1.5
LOOP_CLOSURE_FEATURE_MIN = 0.3
MIN_LOOP_SEPARATION = 10
LOOP_NOISE_SIGMA = (0.05, 0.05, 0.025)

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class NoiseStream:
    """Counter-based Gaussian stream.

    Draw i is a pure function of (seed, i), so the whole stream is
    reproducible from the seed plus the number of draws taken, which is
    the only state a checkpoint needs to record.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)
        self._base = _splitmix64(self.seed ^ 0xD1B54A32D192ED03)

    def _uniform(self, index: int) -> float:
        word = _splitmix64(self._base ^ _splitmix64(index & _MASK64))
        return ((word >> 11) + 1) * (2.0 ** -53)

    def normal(self, sigma: float) -> float:
        """One Gaussian draw. Advances the counter even when sigma = 0."""
        i = self.counter
        self.counter += 1
        u1 = self._uniform(2 * i)
        u2 = self._uniform(2 * i + 1)
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return float(sigma) * z


class Environment:
    """Static world: wall grid, per-cell feature richness, dock pose."""

    def __init__(self, name: str, walls: np.ndarray, feature: np.ndarray,
                 dock: Pose2, resolution: float = DEFAULT_RESOLUTION):
        self.name = name
        self.walls = np.ascontiguousarray(walls, dtype=bool)
        self.feature = np.ascontiguousarray(feature, dtype=np.float64)
        self.dock = dock
        self.resolution = float(resolution)
        if self.walls.shape != self.feature.shape:
            raise ValueError("wall and feature grids disagree in shape")
        border = np.concatenate([self.walls[0], self.walls[-1],
                                 self.walls[:, 0], self.walls[:, -1]])
        if not border.all():
            raise ValueError("environment boundary must be all wall")
        # Meters from each cell center to the nearest wall cell center.
        self.clearance = ndimage.distance_transform_edt(
            ~self.walls) * self.resolution
        dr, dc = self.world_to_cell(dock.x, dock.y)
        if self.walls[dr, dc]:
            raise ValueError("dock cell must be free")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.walls.shape

    def world_to_cell(self, x: float, y: float) -> Tuple[int, int]:
        return (int(math.floor(y / self.resolution)),
                int(math.floor(x / self.resolution)))

    def cell_center(self, row: int, col: int) -> Tuple[float, float]:
        return ((col + 0.5) * self.resolution, (row + 0.5) * self.resolution)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.walls.shape[0] and 0 <= col < self.walls.shape[1]

    def is_wall_at(self, x: float, y: float) -> bool:
        row, col = self.world_to_cell(x, y)
        if not self.in_bounds(row, col):
            return True
        return bool(self.walls[row, col])

    def clearance_at(self, x: float, y: float) -> float:
        row, col = self.world_to_cell(x, y)
        if not self.in_bounds(row, col):
            return 0.0
        return float(self.clearance[row, col])

    def feature_at(self, x: float, y: float) -> float:
        row, col = self.world_to_cell(x, y)
        if not self.in_bounds(row, col):
            return 0.0
        return float(self.feature[row, col])

    def line_of_sight(self, a: Tuple[float, float], b: Tuple[float, float],
                      stride: float = RAY_STRIDE) -> bool:
        ax, ay = a
        bx, by = b
        dist = math.hypot(bx - ax, by - ay)
        if dist < 1e-12:
            return not self.is_wall_at(ax, ay)
        steps = int(dist / stride) + 1
        for k in range(steps + 1):
            t = min(k * stride, dist)
            if self.is_wall_at(ax + (bx - ax) * t / dist,
                               ay + (by - ay) * t / dist):
                return False
        return True

    # Text format: header lines `key: value`, then `grid:` followed by
    # one row per line, '#' wall and '.' free, first line = top row.
    @classmethod
    def from_text(cls, text: str) -> "Environment":
        name = "unnamed"
        resolution = DEFAULT_RESOLUTION
        dock = None
        zones: List[Tuple[float, float, float, float, float]] = []
        lines = text.splitlines()
        grid_rows: List[str] = []
        in_grid = False
        for line in lines:
            if in_grid:
                if line.strip():
                    grid_rows.append(line.rstrip("\n"))
                continue
            stripped = line.strip()
            if not stripped or stripped.startswith("//"):
                continue
            if stripped == "grid:":
                in_grid = True
                continue
            key, _, value = stripped.partition(":")
            key = key.strip()
            value = value.strip()
            if key == "name":
                name = value
            elif key == "resolution":
                resolution = float(value)
            elif key == "dock":
                x, y, theta = (float(v) for v in value.split())
                dock = Pose2(x, y, theta)
            elif key == "feature_zone":
                zones.append(tuple(float(v) for v in value.split()))
            else:
                raise ValueError(f"unknown environment key {key!r}")
        if dock is None:
            raise ValueError("environment file missing dock pose")
        if not grid_rows:
            raise ValueError("environment file missing grid")
        width = max(len(r) for r in grid_rows)
        rows = len(grid_rows)
        walls = np.ones((rows, width), dtype=bool)
        for i, row in enumerate(reversed(grid_rows)):
            for j, ch in enumerate(row):
                if ch == ".":
                    walls[i, j] = False
                elif ch != "#":
                    raise ValueError(f"bad grid character {ch!r}")
        feature = np.where(walls, 0.0, 1.0)
        for (x0, y0, x1, y1, score) in zones:
            c0 = int(math.floor(min(x0, x1) / resolution))
            c1 = int(math.ceil(max(x0, x1) / resolution))
            r0 = int(math.floor(min(y0, y1) / resolution))
            r1 = int(math.ceil(max(y0, y1) / resolution))
            r0, r1 = max(r0, 0), min(r1, rows)
            c0, c1 = max(c0, 0), min(c1, width)
            patch = feature[r0:r1, c0:c1]
            patch[~walls[r0:r1, c0:c1]] = score
        return cls(name, walls, feature, dock, resolution)

    @classmethod
    def load(cls, path) -> "Environment":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())


@dataclass
class SimRobot:
    true_pose: Pose2
    odom_pose: Pose2
    stream: NoiseStream
    radius: float = ROBOT_RADIUS
    odom_trans_sigma: float = 0.0
    odom_rot_sigma: float = 0.0

    @classmethod
    def at_dock(cls, env: Environment, seed: int,
                odom_trans_sigma: float = 0.0,
                odom_rot_sigma: float = 0.0) -> "SimRobot":
        return cls(env.dock, env.dock, NoiseStream(seed),
                   odom_trans_sigma=odom_trans_sigma,
                   odom_rot_sigma=odom_rot_sigma)


def _position_clear(env: Environment, x: float, y: float, radius: float) -> bool:
    return env.clearance_at(x, y) >= radius


def step_robot(robot: SimRobot, env: Environment,
               command: Tuple[float, float], dt: float) -> Tuple[Pose2, Pose2]:
    """Advance one control step and return (true_pose, odom_increment).

    Differential drive integrated with the midpoint heading. A blocked
    move is clamped per axis so the robot slides along walls. Odometry
    noise is drawn every step (two draws, even for zero motion): forward
    noise scales with distance actually moved, rotation noise with the
    turn angle.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v, omega = command
    before = robot.true_pose
    dtheta = omega * dt
    heading = before.theta + 0.5 * dtheta
    dist = v * dt
    tx = before.x + dist * math.cos(heading)
    ty = before.y + dist * math.sin(heading)
    if not _position_clear(env, tx, ty, robot.radius):
        if _position_clear(env, tx, before.y, robot.radius):
            ty = before.y
        elif _position_clear(env, before.x, ty, robot.radius):
            tx = before.x
        else:
            tx, ty = before.x, before.y
    after = Pose2(tx, ty, before.theta + dtheta)
    robot.true_pose = after

    moved = math.hypot(after.x - before.x, after.y - before.y)
    noise_forward = robot.stream.normal(robot.odom_trans_sigma * moved)
    noise_rot = robot.stream.normal(robot.odom_rot_sigma * abs(dtheta))
    local = between(before, after)
    increment = Pose2(local.x + noise_forward, local.y,
                      normalize_angle(local.theta + noise_rot))
    robot.odom_pose = compose(robot.odom_pose, increment)
    return after, increment


@dataclass
class Submap:
    """Local tri-state grid painted in the SLAM frame of its keyframe.

    The grid lattice is aligned with the world grid and the origin is
    snapped to it, so when the SLAM estimate is exact the painted cells
    land exactly on environment cells.
    """
    id: int
    attached_keyframe: int
    origin: Tuple[float, float]
    creation_pose: Pose2
    grid: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    frozen_pose: Optional[Pose2] = None

    def painted(self):
        """Cached (rows, cols, values) of non-unknown cells.

        Grids are write-once after sense(), so the extraction is done at
        most once per submap no matter how often the map is rebuilt.
        """
        cached = getattr(self, "_painted", None)
        if cached is None:
            rows, cols = np.nonzero(self.grid)
            cached = (rows, cols, self.grid[rows, cols])
            object.__setattr__(self, "_painted", cached)
        return cached

    def painted_world(self, correction: Pose2):
        """World-grid cell indices of painted cells under a correction.

        Memoized on the exact correction, so a submap whose keyframe did
        not move between rebuilds (frozen ones in particular) never
        recomputes the transform.
        """
        key = (correction.x, correction.y, correction.theta)
        cached = getattr(self, "_world_cells", None)
        if cached is not None and cached[0] == key:
            return cached[1]
        sub_rows, sub_cols, values = self.painted()
        res = self.resolution
        if (abs(correction.x) < 1e-9 and abs(correction.y) < 1e-9
                and abs(correction.theta) < 1e-9):
            rows = sub_rows + int(round(self.origin[1] / res))
            cols = sub_cols + int(round(self.origin[0] / res))
        else:
            cx = self.origin[0] + (sub_cols + 0.5) * res
            cy = self.origin[1] + (sub_rows + 0.5) * res
            cs, sn = math.cos(correction.theta), math.sin(correction.theta)
            wx = correction.x + cs * cx - sn * cy
            wy = correction.y + sn * cx + cs * cy
            rows = np.floor(wy / res).astype(np.int64)
            cols = np.floor(wx / res).astype(np.int64)
        result = (rows, cols, values)
        object.__setattr__(self, "_world_cells", (key, result))
        return result


def _paint_max(grid: np.ndarray, rows: np.ndarray, cols: np.ndarray,
               value: int) -> None:
    """grid[r, c] = max(grid[r, c], value) for a uniform scalar value.

    Duplicate indices are harmless here, which lets the update use fancy
    assignment instead of the much slower np.maximum.at.
    """
    sel = grid[rows, cols] < value
    grid[rows[sel], cols[sel]] = value


def sense(robot: SimRobot, env: Environment, submap_id: int,
          attached_keyframe: int, slam_pose: Pose2,
          beams: int = SENSOR_BEAMS, max_range: float = SENSOR_RANGE) -> Submap:
    """Ray-cast from the true pose and paint a submap in the SLAM frame.

    360 world-aligned beams are marched at half-cell stride; samples
    before the first wall mark their cells free, the wall sample marks
    its cell occupied. Sample points are mapped through the rigid
    transform (slam_pose o true_pose^-1) before painting, so submaps
    inherit exactly the localization error of their keyframe.
    """
    res = env.resolution
    true = robot.true_pose
    angles = np.arange(beams) * (2.0 * math.pi / beams)
    dists = np.arange(RAY_STRIDE, max_range + 0.5 * RAY_STRIDE, RAY_STRIDE)
    px = true.x + np.outer(np.cos(angles), dists)
    py = true.y + np.outer(np.sin(angles), dists)
    rows = np.floor(py / res).astype(np.int64)
    cols = np.floor(px / res).astype(np.int64)
    inside = ((rows >= 0) & (rows < env.walls.shape[0]) &
              (cols >= 0) & (cols < env.walls.shape[1]))
    wall = np.ones_like(inside, dtype=bool)
    wall[inside] = env.walls[rows[inside], cols[inside]]
    any_wall = wall.any(axis=1)
    first_wall = np.where(any_wall, wall.argmax(axis=1), wall.shape[1])
    sample_index = np.arange(wall.shape[1])[None, :]
    free_mask = sample_index < first_wall[:, None]
    hit_beams = np.nonzero(any_wall)[0]

    origin_row = int(math.floor(slam_pose.y / res)) - SUBMAP_CELLS // 2
    origin_col = int(math.floor(slam_pose.x / res)) - SUBMAP_CELLS // 2
    origin = (origin_col * res, origin_row * res)
    grid = np.zeros((SUBMAP_CELLS, SUBMAP_CELLS), dtype=np.int8)

    # World (true) coordinates -> SLAM frame of the keyframe. A correction
    # this small is localization-exact: reuse the lookup cells as integers
    # so samples sitting on cell edges cannot flip across them.
    correction = compose(slam_pose, inverse(true))
    exact = (abs(correction.x) < 1e-9 and abs(correction.y) < 1e-9
             and abs(correction.theta) < 1e-9)
    if exact:
        def paint_cells(r_env, c_env, value):
            r = r_env - origin_row
            c = c_env - origin_col
            keep = (r >= 0) & (r < SUBMAP_CELLS) & (c >= 0) & (c < SUBMAP_CELLS)
            _paint_max(grid, r[keep], c[keep], value)

        paint_cells(rows[free_mask], cols[free_mask], FREE)
        paint_cells(rows[hit_beams, first_wall[hit_beams]],
                    cols[hit_beams, first_wall[hit_beams]], OCCUPIED)
    else:
        cos_c, sin_c = math.cos(correction.theta), math.sin(correction.theta)

        def paint_points(xs, ys, value):
            sx = correction.x + cos_c * xs - sin_c * ys
            sy = correction.y + sin_c * xs + cos_c * ys
            r = np.floor(sy / res).astype(np.int64) - origin_row
            c = np.floor(sx / res).astype(np.int64) - origin_col
            keep = (r >= 0) & (r < SUBMAP_CELLS) & (c >= 0) & (c < SUBMAP_CELLS)
            _paint_max(grid, r[keep], c[keep], value)

        paint_points(px[free_mask], py[free_mask], FREE)
        paint_points(px[hit_beams, first_wall[hit_beams]],
                     py[hit_beams, first_wall[hit_beams]], OCCUPIED)
    return Submap(submap_id, attached_keyframe, origin, slam_pose, grid,
                  resolution=res)


def detect_loop_closure(graph: PoseGraph, robot_kf: int, env: Environment,
                        true_poses: Dict[int, Pose2],
                        stream: Optional[NoiseStream] = None,
                        max_range: float = LOOP_CLOSURE_RANGE,
                        min_separation: int = MIN_LOOP_SEPARATION,
                        feature_min: float = LOOP_CLOSURE_FEATURE_MIN,
                        sigma: Tuple[float, float, float] = LOOP_NOISE_SIGMA):
    """Nearest revisited keyframe, or None.

    A candidate must be at least min_separation keyframe ids older, not
    already tied to the robot by a factor, within max_range true
    distance, visible (line of sight through the true world), and in a
    feature-rich cell. The measurement is the true relative pose plus
    seeded noise; draws happen only when a closure fires.
    """
    here = true_poses[robot_kf]
    ids = []
    coords = []
    for kf in graph.keyframes():
        if kf.id == robot_kf or kf.id not in true_poses:
            continue
        if robot_kf - kf.id < min_separation:
            continue
        there = true_poses[kf.id]
        ids.append(kf.id)
        coords.append((there.x, there.y))
    if not ids:
        return None
    xy = np.asarray(coords)
    dists = np.hypot(xy[:, 0] - here.x, xy[:, 1] - here.y)
    in_range = np.nonzero(dists <= max_range)[0]
    ids_arr = np.asarray(ids)
    # Nearest first (id breaks ties); the visibility and feature checks
    # cost a ray march each, so stop at the first survivor instead of
    # screening every candidate in range.
    order = in_range[np.lexsort((ids_arr[in_range], dists[in_range]))]
    target = None
    for idx in order:
        cand = int(ids_arr[idx])
        if graph.has_factor_between(robot_kf, cand):
            continue
        cx, cy = xy[idx]
        if env.feature_at(cx, cy) < feature_min:
            continue
        if not env.line_of_sight((here.x, here.y), (cx, cy)):
            continue
        target = cand
        break
    if target is None:
        return None
    true_rel = between(here, true_poses[target])
    if stream is not None:
        noise = [stream.normal(s) for s in sigma]
    else:
        noise = [0.0, 0.0, 0.0]
    measurement = Pose2(true_rel.x + noise[0], true_rel.y + noise[1],
                        normalize_angle(true_rel.theta + noise[2]))
    information = np.diag([1.0 / max(s, 1e-3) ** 2 for s in sigma])
    return target, measurement, information


@dataclass
class OccupancyMap:
    grid: np.ndarray
    origin: Tuple[float, float]
    resolution: float = DEFAULT_RESOLUTION

    def world_to_cell(self, x: float, y: float) -> Tuple[int, int]:
        return (int(math.floor((y - self.origin[1]) / self.resolution)),
                int(math.floor((x - self.origin[0]) / self.resolution)))

    def cell_center(self, row: int, col: int) -> Tuple[float, float]:
        return (self.origin[0] + (col + 0.5) * self.resolution,
                self.origin[1] + (row + 0.5) * self.resolution)

    def value_at(self, x: float, y: float) -> int:
        row, col = self.world_to_cell(x, y)
        if 0 <= row < self.grid.shape[0] and 0 <= col < self.grid.shape[1]:
            return int(self.grid[row, col])
        return UNKNOWN


def _submap_render_pose(submap: Submap, graph: PoseGraph) -> Pose2:
    if graph.has(submap.attached_keyframe):
        return graph.pose(submap.attached_keyframe)
    if submap.frozen_pose is not None:
        return submap.frozen_pose
    raise ValueError(f"submap {submap.id} lost keyframe "
                     f"{submap.attached_keyframe} without a frozen pose")


def _corner_extent(sm: Submap, correction: Pose2):
    """World bounding box of a submap square under a rigid correction."""
    res = sm.resolution
    extent = SUBMAP_CELLS * res
    cs, sn = math.cos(correction.theta), math.sin(correction.theta)
    lo_x = lo_y = math.inf
    hi_x = hi_y = -math.inf
    for dx in (0.0, extent):
        for dy in (0.0, extent):
            x = sm.origin[0] + dx
            y = sm.origin[1] + dy
            wx = correction.x + cs * x - sn * y
            wy = correction.y + sn * x + cs * y
            lo_x, hi_x = min(lo_x, wx), max(hi_x, wx)
            lo_y, hi_y = min(lo_y, wy), max(hi_y, wy)
    return lo_x, lo_y, hi_x, hi_y


def _grid_bounds(lo_x, lo_y, hi_x, hi_y, res):
    """Integer canvas bounds with a one-cell pad on every side."""
    origin_col = int(math.floor(lo_x / res)) - 1
    origin_row = int(math.floor(lo_y / res)) - 1
    n_cols = int(math.ceil(hi_x / res)) - origin_col + 1
    n_rows = int(math.ceil(hi_y / res)) - origin_row + 1
    return origin_row, origin_col, n_rows, n_cols


def _paint_submap(grid: np.ndarray, origin_row: int, origin_col: int,
                  sm: Submap, correction: Pose2) -> None:
    world_rows, world_cols, values = sm.painted_world(correction)
    if world_rows.size == 0:
        return
    rows = world_rows - origin_row
    cols = world_cols - origin_col
    n_rows, n_cols = grid.shape
    keep = (rows >= 0) & (rows < n_rows) & (cols >= 0) & (cols < n_cols)
    rows, cols, vals = rows[keep], cols[keep], values[keep]
    for value in (FREE, OCCUPIED):
        m = vals == value
        _paint_max(grid, rows[m], cols[m], value)


def rebuild_global_map(submaps: Sequence[Submap],
                       graph: PoseGraph) -> OccupancyMap:
    """Fuse submaps at their current keyframe poses.

    Each submap is repainted through the rigid correction between its
    keyframe's pose now and at creation; an identity correction becomes
    an integer blit, which keeps noiseless maps exact. Precedence on
    overlap: occupied > free > unknown.
    """
    if not submaps:
        return OccupancyMap(np.zeros((1, 1), dtype=np.int8), (0.0, 0.0))
    res = submaps[0].resolution
    placements = []
    lo_x = lo_y = math.inf
    hi_x = hi_y = -math.inf
    for sm in sorted(submaps, key=lambda s: s.id):
        pose_now = _submap_render_pose(sm, graph)
        correction = compose(pose_now, inverse(sm.creation_pose))
        placements.append((sm, correction))
        sm_lo_x, sm_lo_y, sm_hi_x, sm_hi_y = _corner_extent(sm, correction)
        lo_x, hi_x = min(lo_x, sm_lo_x), max(hi_x, sm_hi_x)
        lo_y, hi_y = min(lo_y, sm_lo_y), max(hi_y, sm_hi_y)
    origin_row, origin_col, n_rows, n_cols = _grid_bounds(
        lo_x, lo_y, hi_x, hi_y, res)
    grid = np.zeros((n_rows, n_cols), dtype=np.int8)
    for sm, correction in placements:
        _paint_submap(grid, origin_row, origin_col, sm, correction)
    return OccupancyMap(grid, (origin_col * res, origin_row * res), res)


class MapStitcher:
    """Incremental alternative to rebuild_global_map.

    A submap whose keyframe has left the graph renders at its frozen
    pose forever, so its raster is painted exactly once into a
    persistent layer; each rebuild then blits that layer and repaints
    only the submaps that can still move. Because fusion is a per-cell
    max, batching commutes and the result equals the one-shot rebuild.

    The shortcut assumes keyframe removal is permanent, which holds
    within one world; call reset() whenever the graph or the submap
    list is replaced wholesale (fresh run, checkpoint restore).
    """

    def __init__(self, resolution: float = DEFAULT_RESOLUTION):
        self.resolution = resolution
        self.reset()

    def reset(self) -> None:
        self._frozen_ids = set()
        self._frozen_grid = None
        self._frozen_row = 0
        self._frozen_col = 0
        self._frozen_world = None

    def rebuild(self, submaps: Sequence[Submap],
                graph: PoseGraph) -> OccupancyMap:
        res = self.resolution
        if not submaps:
            return OccupancyMap(np.zeros((1, 1), dtype=np.int8), (0.0, 0.0))
        live = []
        fresh = []
        for sm in sorted(submaps, key=lambda s: s.id):
            if sm.id in self._frozen_ids:
                continue
            pose_now = _submap_render_pose(sm, graph)
            correction = compose(pose_now, inverse(sm.creation_pose))
            if graph.has(sm.attached_keyframe):
                live.append((sm, correction))
            else:
                fresh.append((sm, correction))
        if fresh:
            self._absorb(fresh)

        lo_x = lo_y = math.inf
        hi_x = hi_y = -math.inf
        if self._frozen_world is not None:
            lo_x, lo_y, hi_x, hi_y = self._frozen_world
        for sm, correction in live:
            sm_lo_x, sm_lo_y, sm_hi_x, sm_hi_y = _corner_extent(sm, correction)
            lo_x, hi_x = min(lo_x, sm_lo_x), max(hi_x, sm_hi_x)
            lo_y, hi_y = min(lo_y, sm_lo_y), max(hi_y, sm_hi_y)
        origin_row, origin_col, n_rows, n_cols = _grid_bounds(
            lo_x, lo_y, hi_x, hi_y, res)
        grid = np.zeros((n_rows, n_cols), dtype=np.int8)
        if self._frozen_grid is not None:
            fh, fw = self._frozen_grid.shape
            r0 = self._frozen_row - origin_row
            c0 = self._frozen_col - origin_col
            grid[r0:r0 + fh, c0:c0 + fw] = self._frozen_grid
        for sm, correction in live:
            _paint_submap(grid, origin_row, origin_col, sm, correction)
        return OccupancyMap(grid, (origin_col * res, origin_row * res), res)

    def _absorb(self, fresh) -> None:
        """Paint newly immovable submaps into the persistent layer."""
        res = self.resolution
        lo_x = lo_y = math.inf
        hi_x = hi_y = -math.inf
        if self._frozen_world is not None:
            lo_x, lo_y, hi_x, hi_y = self._frozen_world
        for sm, correction in fresh:
            sm_lo_x, sm_lo_y, sm_hi_x, sm_hi_y = _corner_extent(sm, correction)
            lo_x, hi_x = min(lo_x, sm_lo_x), max(hi_x, sm_hi_x)
            lo_y, hi_y = min(lo_y, sm_lo_y), max(hi_y, sm_hi_y)
        self._frozen_world = (lo_x, lo_y, hi_x, hi_y)
        origin_row, origin_col, n_rows, n_cols = _grid_bounds(
            lo_x, lo_y, hi_x, hi_y, res)
        if (self._frozen_grid is None
                or origin_row != self._frozen_row
                or origin_col != self._frozen_col
                or self._frozen_grid.shape != (n_rows, n_cols)):
            grown = np.zeros((n_rows, n_cols), dtype=np.int8)
            if self._frozen_grid is not None:
                fh, fw = self._frozen_grid.shape
                r0 = self._frozen_row - origin_row
                c0 = self._frozen_col - origin_col
                grown[r0:r0 + fh, c0:c0 + fw] = self._frozen_grid
            self._frozen_grid = grown
            self._frozen_row = origin_row
            self._frozen_col = origin_col
        for sm, correction in fresh:
            _paint_submap(self._frozen_grid, self._frozen_row,
                          self._frozen_col, sm, correction)
            self._frozen_ids.add(sm.id)


_PGM_BYTES = {OCCUPIED: 0, UNKNOWN: 127, FREE: 255}


def write_pgm(path, occupancy: OccupancyMap) -> None:
    """P5 graymap, top row first: occupied = 0, unknown = 127, free = 255."""
    grid = occupancy.grid
    out = np.full(grid.shape, 127, dtype=np.uint8)
    out[grid == OCCUPIED] = 0
    out[grid == FREE] = 255
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii"))
        fh.write(out[::-1].tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 graymap back into tri-state codes (bottom row first)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM file")
    fields: List[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    width, height, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError("expected 8-bit graymap")
    pos += 1
    raw = np.frombuffer(data[pos:pos + width * height], dtype=np.uint8)
    img = raw.reshape(height, width)[::-1]
    grid = np.full(img.shape, UNKNOWN, dtype=np.int8)
    grid[img == 0] = OCCUPIED
    grid[img == 255] = FREE
    return grid
