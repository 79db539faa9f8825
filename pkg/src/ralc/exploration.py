"""Region-gated exploration: frontier planning, active loop closing,
and hull-tour stabilization.

Exploration proceeds one rectangular region at a time. While a region
is being discovered the planner first checks whether revisiting a
nearby keyframe cluster would shrink pose uncertainty enough to be
worth the detour; only then does it chase the cheapest in-region
frontier. A region with no frontiers left is swept once around the
convex hull of its keyframes before being handed to marginalization.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .pose_graph import PoseGraph
from .se2 import Pose2, normalize_angle
from .sim import FREE, OCCUPIED, UNKNOWN, OccupancyMap

SQRT2 = math.sqrt(2.0)

PHASE_ORDER = ("discovering", "refining", "completed")


class NoPathError(RuntimeError):
    """Raised when no traversable route exists; message is "no path"."""


@dataclass
class PlannerConfig:
    regions_enabled: bool = True     # False: one unbounded search space
    region_min_size: float = 4.0
    region_max_size: float = 8.0
    growth_radius: float = 2.0
    beta_angle: float = 0.5        # meters per radian of heading error
    beta_switch: float = 1.0       # meters charged for abandoning a target
    beta_size: float = 0.02        # meters credited per frontier cell
    alc_threshold: float = 2.0
    alc_distance_weight: float = 0.05
    alc_cooldown_cycles: int = 25
    cluster_radius: float = 0.5
    cluster_min_feature: float = 0.3
    min_frontier_size: int = 6
    robot_radius: float = 0.17
    clearance_margin: float = 0.04
    arrival_tolerance: float = 0.3
    frontier_identity_radius: float = 0.25
    waypoint_projection_radius: float = 1.0
    goal_projection_radius: float = 0.5


@dataclass
class Region:
    id: int
    rect: Tuple[float, float, float, float]   # x_min, y_min, x_max, y_max
    phase: str = "discovering"

    @property
    def width(self) -> float:
        return self.rect[2] - self.rect[0]

    @property
    def height(self) -> float:
        return self.rect[3] - self.rect[1]

    def contains(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.rect
        return x0 <= x <= x1 and y0 <= y <= y1

    def advance_phase(self, new_phase: str) -> None:
        if PHASE_ORDER.index(new_phase) < PHASE_ORDER.index(self.phase):
            raise ValueError(
                f"region phase may not move back: {self.phase} -> {new_phase}")
        self.phase = new_phase


@dataclass(frozen=True)
class Frontier:
    cells: Tuple[Tuple[int, int], ...]
    centroid: Tuple[float, float]
    size: int


@dataclass(frozen=True)
class AlcCandidate:
    keyframe_ids: Tuple[int, ...]
    centroid_pose: Pose2
    representative: int


@dataclass(frozen=True)
class Navigate:
    path: Tuple[Tuple[float, float], ...]
    goal: Tuple[float, float]
    purpose: str                   # "alc" | "frontier" | "pgs" | "stabilize"
    target_id: Optional[int] = None
    delta_u: Optional[float] = None
    cost: Optional[float] = None


@dataclass(frozen=True)
class MarkRegionComplete:
    region_id: int


@dataclass(frozen=True)
class StartGlobalStabilization:
    pass


@dataclass(frozen=True)
class Finish:
    pass


@dataclass(frozen=True)
class Fail:
    reason: str


Action = object


class _PlannerCache:
    """Per-map traversability products, invalidated by graph version."""

    def __init__(self):
        self.key = None
        self.traversable = None
        self.csr = None
        self.flood_key = None
        self.flood = None

    def refresh(self, occ: OccupancyMap, graph_version: int,
                config: PlannerConfig) -> None:
        key = (graph_version, occ.grid.shape, occ.origin)
        if key == self.key:
            return
        self.key = key
        self.traversable = traversable_mask(
            occ, config.robot_radius + config.clearance_margin)
        self.csr = _grid_adjacency(self.traversable, occ.resolution)
        self.flood_key = None
        self.flood = None

    def flood_from(self, cell: Tuple[int, int]) -> np.ndarray:
        if self.flood_key != cell:
            self.flood = _flood_distances(self.traversable, self.csr, cell)
            self.flood_key = cell
        return self.flood


@dataclass
class ExplorationState:
    regions: List[Region] = field(default_factory=list)
    active_region_id: Optional[int] = None
    phase: str = "region_discovery"
    previous_frontier: Optional[Frontier] = None
    last_frontier_goal: Optional[Tuple[float, float]] = None
    cycle: int = 0
    alc_resume_cycle: int = 0
    blacklist: List[Tuple[float, float]] = field(default_factory=list)
    tour: Optional[List[Tuple[float, float]]] = None
    tour_index: int = 0
    tour_skipped: int = 0
    stabilization_announced: bool = False
    fail_reason: Optional[str] = None
    next_region_id: int = 0
    cache: _PlannerCache = field(default_factory=_PlannerCache, repr=False)

    def active_region(self) -> Region:
        for region in self.regions:
            if region.id == self.active_region_id:
                return region
        raise LookupError(f"no active region {self.active_region_id}")

    def completed_count(self) -> int:
        return sum(1 for r in self.regions if r.phase == "completed")


def make_initial_state(dock: Pose2, config: PlannerConfig) -> ExplorationState:
    state = ExplorationState()
    if config.regions_enabled:
        _create_region(state, (dock.x, dock.y), config)
    return state


def _create_region(state: ExplorationState, center: Tuple[float, float],
                   config: PlannerConfig) -> Region:
    half = config.region_min_size / 2.0
    rect = (center[0] - half, center[1] - half,
            center[0] + half, center[1] + half)
    region = Region(state.next_region_id, rect)
    state.next_region_id += 1
    state.regions.append(region)
    state.active_region_id = region.id
    state.phase = "region_discovery"
    state.previous_frontier = None
    state.last_frontier_goal = None
    state.tour = None
    state.tour_index = 0
    return region


def grow_region(region: Region, robot_xy: Tuple[float, float],
                radius: float, max_size: float) -> Region:
    """Expand the rect minimally to cover the robot's neighborhood disk.

    Each axis is capped at max_size; when the cap binds, the edge away
    from the robot stays put so existing content is never shed.
    """
    if region.phase != "discovering":
        raise ValueError("only a discovering region may grow")

    def grow_axis(lo, hi, c):
        lo2 = min(lo, c - radius)
        hi2 = max(hi, c + radius)
        if hi2 - lo2 > max_size:
            if lo2 < lo and hi2 > hi:      # disk wider than the cap
                lo2 = min(lo, c - max_size / 2.0)
                hi2 = lo2 + max_size
                if hi2 < hi:
                    hi2 = hi
                    lo2 = hi2 - max_size
            elif lo2 < lo:
                lo2 = hi2 - max_size
            else:
                hi2 = lo2 + max_size
        return lo2, hi2

    x0, y0, x1, y1 = region.rect
    nx0, nx1 = grow_axis(x0, x1, robot_xy[0])
    ny0, ny1 = grow_axis(y0, y1, robot_xy[1])
    region.rect = (nx0, ny0, nx1, ny1)
    return region


def detect_frontiers(occ: OccupancyMap,
                     region: Optional[Region] = None) -> List[Frontier]:
    """Unknown cells touching free space, grouped 8-connected."""
    free = occ.grid == FREE
    unknown = occ.grid == UNKNOWN
    touching = ndimage.binary_dilation(
        free, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool))
    frontier_cells = unknown & touching
    labels, count = ndimage.label(frontier_cells, structure=np.ones((3, 3)))
    out = []
    for idx in range(1, count + 1):
        rows, cols = np.nonzero(labels == idx)
        cx = float(np.mean(occ.origin[0] + (cols + 0.5) * occ.resolution))
        cy = float(np.mean(occ.origin[1] + (rows + 0.5) * occ.resolution))
        if region is not None and not region.contains(cx, cy):
            continue
        cells = tuple(sorted(zip(rows.tolist(), cols.tolist())))
        out.append(Frontier(cells, (cx, cy), len(cells)))
    out.sort(key=lambda f: (f.centroid[1], f.centroid[0]))
    return out


def traversable_mask(occ: OccupancyMap, clearance: float) -> np.ndarray:
    """Free cells whose centers keep at least clearance from occupied ones."""
    occupied = occ.grid == OCCUPIED
    if occupied.any():
        dist = ndimage.distance_transform_edt(~occupied,
                                              sampling=occ.resolution)
    else:
        dist = np.full(occ.grid.shape, np.inf)
    return (occ.grid == FREE) & (dist >= clearance)


_MOVES = ((-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
          (-1, -1, SQRT2), (-1, 1, SQRT2), (1, -1, SQRT2), (1, 1, SQRT2))


def _grid_adjacency(traversable: np.ndarray, resolution: float):
    """Sparse 8-connected adjacency over traversable cells."""
    h, w = traversable.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, data = [], [], []
    for dr, dc, cost in _MOVES:
        src_r = slice(max(0, -dr), h - max(0, dr))
        src_c = slice(max(0, -dc), w - max(0, dc))
        dst_r = slice(max(0, dr), h + min(0, dr))
        dst_c = slice(max(0, dc), w + min(0, dc))
        ok = traversable[src_r, src_c] & traversable[dst_r, dst_c]
        rows.append(idx[src_r, src_c][ok])
        cols.append(idx[dst_r, dst_c][ok])
        data.append(np.full(int(ok.sum()), cost * resolution))
    if not rows:
        return sparse.csr_matrix((h * w, h * w))
    return sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(h * w, h * w))


def _flood_distances(traversable: np.ndarray, adjacency,
                     start: Tuple[int, int]) -> np.ndarray:
    h, w = traversable.shape
    if not (0 <= start[0] < h and 0 <= start[1] < w
            and traversable[start[0], start[1]]):
        return np.full((h, w), np.inf)
    flat = csgraph.dijkstra(adjacency, directed=False,
                            indices=start[0] * w + start[1])
    return flat.reshape(h, w)


def plan_path(occ: OccupancyMap, start_xy: Tuple[float, float],
              goal_xy: Tuple[float, float], robot_radius: float,
              clearance_margin: float = 0.04,
              traversable: Optional[np.ndarray] = None,
              flood: Optional[np.ndarray] = None
              ) -> List[Tuple[float, float]]:
    """8-connected A* between world points; returns cell-center waypoints.

    When the Dijkstra distance field from the start cell is already at
    hand it can be passed as flood; the path is then read off by
    steepest descent, which reproduces an exact shortest path (every
    hop retraces a predecessor relaxation) without a search.
    """
    if traversable is None:
        traversable = traversable_mask(occ, robot_radius + clearance_margin)
    h, w = traversable.shape
    start = occ.world_to_cell(*start_xy)
    goal = occ.world_to_cell(*goal_xy)
    for cell in (start, goal):
        if not (0 <= cell[0] < h and 0 <= cell[1] < w
                and traversable[cell[0], cell[1]]):
            raise NoPathError("no path")
    if start == goal:
        return [occ.cell_center(*start)]

    res = occ.resolution

    if flood is not None and flood[start] == 0.0:
        if not np.isfinite(flood[goal]):
            raise NoPathError("no path")
        cells = [goal]
        cur = goal
        while cur != start:
            best = None
            for dr, dc, cost in _MOVES:
                nr, nc = cur[0] + dr, cur[1] + dc
                if not (0 <= nr < h and 0 <= nc < w):
                    continue
                f = flood[nr, nc]
                if not np.isfinite(f):
                    continue
                key = (f + cost * res, nr, nc)
                if best is None or key < best:
                    best = key
            cur = (best[1], best[2])
            cells.append(cur)
        cells.reverse()
        return [occ.cell_center(*cell) for cell in cells]

    def heuristic(r, c):
        dr, dc = abs(r - goal[0]), abs(c - goal[1])
        return res * (max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc))

    g_score = np.full((h, w), np.inf)
    g_score[start] = 0.0
    parent: Dict[Tuple[int, int], Tuple[int, int]] = {}
    open_heap = [(heuristic(*start), 0.0, start)]
    closed = np.zeros((h, w), dtype=bool)
    while open_heap:
        f, g, (r, c) = heapq.heappop(open_heap)
        if closed[r, c]:
            continue
        closed[r, c] = True
        if (r, c) == goal:
            cells = [(r, c)]
            while cells[-1] != start:
                cells.append(parent[cells[-1]])
            cells.reverse()
            return [occ.cell_center(*cell) for cell in cells]
        for dr, dc, cost in _MOVES:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                continue
            if not traversable[nr, nc] or closed[nr, nc]:
                continue
            ng = g + cost * res
            if ng < g_score[nr, nc]:
                g_score[nr, nc] = ng
                parent[(nr, nc)] = (r, c)
                heapq.heappush(open_heap, (ng + heuristic(nr, nc), ng, (nr, nc)))
    raise NoPathError("no path")


def path_length(path: Sequence[Tuple[float, float]]) -> float:
    return float(sum(math.hypot(b[0] - a[0], b[1] - a[1])
                     for a, b in zip(path, path[1:])))


def _traversable_candidates(occ: OccupancyMap, traversable: np.ndarray,
                            xy: Tuple[float, float], radius: float,
                            flood: Optional[np.ndarray] = None):
    """Traversable (and reachable, when flood given) cells within radius.

    Returns (rows, cols) sorted nearest first; ties on distance break on
    (row, col) so the order is stable.
    """
    h, w = traversable.shape
    r0, c0 = occ.world_to_cell(*xy)
    span = int(math.ceil(radius / occ.resolution)) + 1
    rlo, rhi = max(0, r0 - span), min(h, r0 + span + 1)
    clo, chi = max(0, c0 - span), min(w, c0 + span + 1)
    empty = (np.empty(0, dtype=np.int64),) * 2
    if rlo >= rhi or clo >= chi:
        return empty
    ok = traversable[rlo:rhi, clo:chi]
    if flood is not None:
        ok = ok & np.isfinite(flood[rlo:rhi, clo:chi])
    rr, cc = np.nonzero(ok)
    if rr.size == 0:
        return empty
    cx = occ.origin[0] + (cc + clo + 0.5) * occ.resolution
    cy = occ.origin[1] + (rr + rlo + 0.5) * occ.resolution
    d = np.hypot(cx - xy[0], cy - xy[1])
    near = d <= radius
    if not near.any():
        return empty
    rr, cc, d = rr[near], cc[near], d[near]
    order = np.lexsort((cc, rr, d))
    return rr[order] + rlo, cc[order] + clo


def _project_to_traversable(occ: OccupancyMap, traversable: np.ndarray,
                            xy: Tuple[float, float], radius: float,
                            flood: Optional[np.ndarray] = None
                            ) -> Optional[Tuple[int, int]]:
    """Nearest traversable (and reachable, when flood given) cell to xy."""
    rows, cols = _traversable_candidates(occ, traversable, xy, radius, flood)
    if rows.size == 0:
        return None
    return (int(rows[0]), int(cols[0]))


def _segment_clear(occ: OccupancyMap, a: Tuple[float, float],
                   b: Tuple[float, float]) -> bool:
    """No occupied cell on the straight segment from a to b."""
    dist = math.hypot(b[0] - a[0], b[1] - a[1])
    steps = max(1, int(math.ceil(dist / (0.5 * occ.resolution))))
    h, w = occ.grid.shape
    for i in range(steps + 1):
        t = i / steps
        row, col = occ.world_to_cell(a[0] + t * (b[0] - a[0]),
                                     a[1] + t * (b[1] - a[1]))
        if 0 <= row < h and 0 <= col < w and occ.grid[row, col] == OCCUPIED:
            return False
    return True


def _project_start(occ: OccupancyMap, traversable: np.ndarray,
                   xy: Tuple[float, float], radius: float = 0.4,
                   flood: Optional[np.ndarray] = None,
                   scan_limit: int = 48) -> Optional[Tuple[int, int]]:
    """Project the robot itself onto the traversable grid.

    Unlike goal projection, the stand-in must be physically attainable
    from where the robot actually is: the nearest traversable cell can
    sit on the far side of a thin obstacle, and a path planned from
    there parks the robot against the wall for good. Candidates are
    scanned nearest first and the first one with a clear straight
    segment wins; if none has, the nearest is returned so the caller
    still makes some attempt rather than failing outright.
    """
    rows, cols = _traversable_candidates(occ, traversable, xy, radius, flood)
    if rows.size == 0:
        return None
    for i in range(min(rows.size, scan_limit)):
        cell = (int(rows[i]), int(cols[i]))
        if _segment_clear(occ, xy, occ.cell_center(*cell)):
            return cell
    return (int(rows[0]), int(cols[0]))


def same_frontier(a: Optional[Frontier], b: Optional[Frontier],
                  radius: float = 0.25) -> bool:
    if a is None or b is None:
        return False
    return math.hypot(a.centroid[0] - b.centroid[0],
                      a.centroid[1] - b.centroid[1]) <= radius


def frontier_cost(frontier: Frontier, robot: Pose2, occ: OccupancyMap,
                  previous: Optional[Frontier],
                  weights: Tuple[float, float, float] = (0.5, 1.0, 0.02),
                  robot_radius: float = 0.17,
                  clearance_margin: float = 0.04,
                  route_length: Optional[float] = None) -> float:
    """Weighted frontier attractiveness; lower is better.

    Path length to the projected centroid, plus a turn penalty and a
    target-switch penalty, minus credit for frontier size. route_length
    short-circuits the A* when the caller already knows the distance.
    """
    beta_angle, beta_switch, beta_size = weights
    dx = frontier.centroid[0] - robot.x
    dy = frontier.centroid[1] - robot.y
    if route_length is None:
        if math.hypot(dx, dy) < occ.resolution:
            route_length = 0.0
        else:
            traversable = traversable_mask(occ, robot_radius + clearance_margin)
            goal = _project_to_traversable(occ, traversable, frontier.centroid,
                                           radius=0.5)
            if goal is None:
                raise NoPathError("no path")
            path = plan_path(occ, (robot.x, robot.y), occ.cell_center(*goal),
                             robot_radius, clearance_margin, traversable)
            route_length = path_length(path)
    if math.hypot(dx, dy) < occ.resolution:
        heading_error = 0.0
    else:
        heading_error = abs(normalize_angle(math.atan2(dy, dx) - robot.theta))
    switch = 0.0
    if previous is not None and not same_frontier(frontier, previous):
        switch = 1.0
    return (route_length + beta_angle * heading_error
            + beta_switch * switch - beta_size * frontier.size)


def build_alc_candidates(graph: PoseGraph, region: Optional[Region],
                         cluster_radius: float = 0.5,
                         min_feature: float = 0.3) -> List[AlcCandidate]:
    """Cluster in-region keyframes around leaders; keep feature-rich ones.

    With no region the whole graph is eligible (region-free baseline).
    """
    if region is None:
        members = graph.keyframes()
    else:
        members = graph.region_keyframes(region.id)
    clusters: List[List] = []
    for kf in members:
        placed = False
        for cluster in clusters:
            leader = cluster[0]
            if math.hypot(kf.pose.x - leader.pose.x,
                          kf.pose.y - leader.pose.y) <= cluster_radius:
                cluster.append(kf)
                placed = True
                break
        if not placed:
            clusters.append([kf])
    out = []
    for cluster in clusters:
        if np.mean([kf.feature_score for kf in cluster]) < min_feature:
            continue
        cx = float(np.mean([kf.pose.x for kf in cluster]))
        cy = float(np.mean([kf.pose.y for kf in cluster]))
        ct = math.atan2(float(np.mean([math.sin(kf.pose.theta) for kf in cluster])),
                        float(np.mean([math.cos(kf.pose.theta) for kf in cluster])))
        rep = min(cluster,
                  key=lambda kf: (math.hypot(kf.pose.x - cx, kf.pose.y - cy),
                                  kf.id))
        out.append(AlcCandidate(tuple(kf.id for kf in cluster),
                                Pose2(cx, cy, ct), rep.id))
    return out


def select_alc_target(graph: PoseGraph, robot_vertex: int,
                      candidates: Sequence[AlcCandidate],
                      threshold: float = 2.0,
                      distance_weight: float = 0.05,
                      route_length: Optional[Callable[[AlcCandidate],
                                                      float]] = None
                      ) -> Optional[Tuple[AlcCandidate, float]]:
    """Best expected-information target, gated by the trigger threshold.

    Candidates are ranked by uncertainty reduction minus a travel charge;
    the winner is returned only if revisiting it beats the threshold.
    """
    reachable = []
    for candidate in candidates:
        if candidate.representative == robot_vertex:
            continue
        if route_length is not None:
            distance = route_length(candidate)
        else:
            robot_pose = graph.pose(robot_vertex)
            distance = math.hypot(candidate.centroid_pose.x - robot_pose.x,
                                  candidate.centroid_pose.y - robot_pose.y)
        if not math.isfinite(distance):
            continue
        reachable.append((candidate, distance))
    reductions = graph.uncertainty_reductions(
        robot_vertex, [c.representative for c, _ in reachable])
    best = None
    for (candidate, distance), delta_u in zip(reachable, reductions):
        score = delta_u - distance_weight * distance
        if best is None or score > best[0]:
            best = (score, candidate, delta_u)
    if best is None or best[2] <= threshold:
        return None
    return best[1], best[2]


def convex_hull(points: Sequence[Tuple[float, float]]
                ) -> List[Tuple[float, float]]:
    """Strict convex hull, counter-clockwise, via recursive splitting."""
    unique = sorted(set((float(x), float(y)) for x, y in points))
    if not unique:
        raise ValueError("hull needs at least one point")
    if len(unique) <= 2:
        return list(unique)

    def cross(o, a, b):
        return ((a[0] - o[0]) * (b[1] - o[1])
                - (a[1] - o[1]) * (b[0] - o[0]))

    def side_points(a, b, pts):
        return [p for p in pts if cross(a, b, p) > 1e-12]

    def expand(a, b, pts):
        if not pts:
            return []
        far = max(pts, key=lambda p: (cross(a, b, p), p))
        return (expand(a, far, side_points(a, far, pts))
                + [far]
                + expand(far, b, side_points(far, b, pts)))

    lo = unique[0]
    hi = unique[-1]
    above = side_points(lo, hi, unique)
    below = side_points(hi, lo, unique)
    # expand() walks each chain in its split direction; stitching the
    # reversed chains yields the counter-clockwise ring starting at lo.
    ccw = ([lo] + expand(hi, lo, below)[::-1]
           + [hi] + expand(lo, hi, above)[::-1])
    if len(ccw) >= 3 and _signed_area(ccw) < 0:
        ccw = [ccw[0]] + ccw[1:][::-1]
    return ccw


def _signed_area(poly: Sequence[Tuple[float, float]]) -> float:
    s = 0.0
    for (x0, y0), (x1, y1) in zip(poly, poly[1:] + [poly[0]]):
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def pgs_tour(hull: Sequence[Tuple[float, float]], occ: OccupancyMap,
             robot: Pose2, robot_radius: float = 0.17,
             clearance_margin: float = 0.04,
             projection_radius: float = 1.0,
             traversable: Optional[np.ndarray] = None,
             flood: Optional[np.ndarray] = None
             ) -> Tuple[List[Tuple[float, float]], int]:
    """Both-ways sweep of the hull, starting nearest the robot.

    Each vertex is projected to the closest reachable cell within
    projection_radius; unprojectable vertices are skipped and counted.
    Returns (waypoints, skipped).
    """
    if not hull:
        raise ValueError("hull needs at least one point")
    if traversable is None:
        traversable = traversable_mask(occ, robot_radius + clearance_margin)
    waypoints = []
    skipped = 0
    for vertex in hull:
        cell = _project_to_traversable(occ, traversable, vertex,
                                       projection_radius, flood)
        if cell is None:
            skipped += 1
        else:
            waypoints.append(occ.cell_center(*cell))
    if not waypoints:
        raise NoPathError("no path")
    start = min(range(len(waypoints)),
                key=lambda i: (math.hypot(waypoints[i][0] - robot.x,
                                          waypoints[i][1] - robot.y), i))
    ordered = waypoints[start:] + waypoints[:start]
    return ordered + ordered[::-1], skipped


@dataclass(frozen=True)
class _FrontierChoice:
    cost: float
    frontier: Frontier
    goal: Tuple[int, int]
    length: float


def _frontier_choices(state: ExplorationState, robot: Pose2,
                      occ: OccupancyMap, config: PlannerConfig,
                      region: Optional[Region]) -> List[_FrontierChoice]:
    """Cost-sorted reachable frontiers with their projected goal cells."""
    cache = state.cache
    start = _project_start(occ, cache.traversable, (robot.x, robot.y))
    if start is None:
        return []
    flood = cache.flood_from(start)
    choices = []
    for frontier in detect_frontiers(occ, region):
        if any(math.hypot(frontier.centroid[0] - bx, frontier.centroid[1] - by)
               <= config.frontier_identity_radius
               for bx, by in state.blacklist):
            continue
        goal = _project_to_traversable(occ, cache.traversable,
                                       frontier.centroid,
                                       config.goal_projection_radius, flood)
        if goal is None:
            continue
        length = float(flood[goal])
        if not math.isfinite(length):
            continue
        cost = frontier_cost(
            frontier, robot, occ, state.previous_frontier,
            (config.beta_angle, config.beta_switch, config.beta_size),
            route_length=length)
        choices.append(_FrontierChoice(cost, frontier, goal, length))
    # Sizable frontiers first; the sub-threshold fragments that ragged
    # max-range boundaries shed are only mopped up once no frontier worth
    # a dedicated approach remains.
    big = [c for c in choices
           if c.frontier.size >= config.min_frontier_size]
    if big:
        choices = big
    choices.sort(key=lambda item: (item.cost, item.frontier.centroid[1],
                                   item.frontier.centroid[0]))
    return choices


def _blacklist_stuck_frontier(state: ExplorationState, robot: Pose2,
                              occ: OccupancyMap, config: PlannerConfig,
                              region: Optional[Region]) -> None:
    """Drop a frontier that survives being stood next to.

    Sensing from the projected goal resolves every cell it can see; a
    frontier still detected there is occluded from all traversable
    ground and would be re-picked forever.
    """
    goal = state.last_frontier_goal
    prev = state.previous_frontier
    if goal is None or prev is None:
        return
    if math.hypot(robot.x - goal[0], robot.y - goal[1]) \
            > config.arrival_tolerance:
        return
    state.last_frontier_goal = None
    cx, cy = prev.centroid
    for frontier in detect_frontiers(occ, region):
        if (math.hypot(frontier.centroid[0] - cx, frontier.centroid[1] - cy)
                <= config.frontier_identity_radius):
            state.blacklist.append((cx, cy))
            state.previous_frontier = None
            return


def abandon_target(state: ExplorationState, config: PlannerConfig,
                   purpose: str) -> str:
    """Give up on the current navigation target.

    Called by the executor when cycles of following produced no motion:
    a target can be unreachable in ways the grid planner cannot see
    (thin clutter between the robot and its projected stand-in, a
    doorway narrower than it paints). Returns what was dropped.
    """
    if purpose == "frontier" and state.previous_frontier is not None:
        cx, cy = state.previous_frontier.centroid
        state.blacklist.append((cx, cy))
        state.previous_frontier = None
        state.last_frontier_goal = None
        return "frontier_blacklisted"
    if purpose == "alc":
        state.alc_resume_cycle = state.cycle + config.alc_cooldown_cycles
        return "alc_cooldown"
    if purpose in ("pgs", "stabilize") and state.tour is not None:
        state.tour_index += 1
        state.tour_skipped += 1
        return "waypoint_skipped"
    return "none"


def _navigate_to(state: ExplorationState, occ: OccupancyMap, robot: Pose2,
                 goal_xy: Tuple[float, float], purpose: str,
                 config: PlannerConfig, **extra) -> Action:
    """Plan toward a traversable goal point; failure fails the run."""
    try:
        start = _project_start(occ, state.cache.traversable,
                               (robot.x, robot.y))
        if start is None:
            raise NoPathError("no path")
        path = plan_path(occ, occ.cell_center(*start), goal_xy,
                         config.robot_radius, config.clearance_margin,
                         state.cache.traversable,
                         flood=state.cache.flood_from(start))
    except NoPathError:
        state.phase = "failed"
        state.fail_reason = f"no path ({purpose})"
        return Fail(state.fail_reason)
    return Navigate(tuple(path), goal_xy, purpose, **extra)


def _tour_step(state: ExplorationState, robot: Pose2, occ: OccupancyMap,
               config: PlannerConfig, purpose: str) -> Optional[Action]:
    """Advance along the stored tour; None means the tour is finished.

    Waypoints are re-projected against the current map each step:
    sensing during the tour keeps sharpening walls, so a point that
    projected fine at build time can end up inside the inflated band.
    Points with no reachable stand-in left are skipped, not fatal.
    """
    tour = state.tour
    start = _project_start(occ, state.cache.traversable, (robot.x, robot.y))
    flood = None if start is None else state.cache.flood_from(start)
    while state.tour_index < len(tour):
        goal = tour[state.tour_index]
        if (math.hypot(goal[0] - robot.x, goal[1] - robot.y)
                <= config.arrival_tolerance):
            state.tour_index += 1
            continue
        cell = _project_to_traversable(occ, state.cache.traversable, goal,
                                       config.waypoint_projection_radius,
                                       flood)
        if cell is None:
            state.tour_index += 1
            state.tour_skipped += 1
            continue
        projected = occ.cell_center(*cell)
        if (math.hypot(projected[0] - robot.x, projected[1] - robot.y)
                <= config.arrival_tolerance):
            state.tour_index += 1
            continue
        return _navigate_to(state, occ, robot, projected, purpose, config)
    return None


def _build_tour(state: ExplorationState, points: Sequence[Tuple[float, float]],
                robot: Pose2, occ: OccupancyMap,
                config: PlannerConfig) -> Optional[Fail]:
    start = _project_start(occ, state.cache.traversable, (robot.x, robot.y))
    flood = None if start is None else state.cache.flood_from(start)
    try:
        hull = convex_hull(points)
        waypoints, skipped = pgs_tour(
            hull, occ, robot, config.robot_radius, config.clearance_margin,
            config.waypoint_projection_radius, state.cache.traversable, flood)
    except NoPathError:
        state.phase = "failed"
        state.fail_reason = "no path (stabilization tour)"
        return Fail(state.fail_reason)
    state.tour = waypoints
    state.tour_index = 0
    state.tour_skipped = skipped
    return None


def planning_cycle(state: ExplorationState, robot: Pose2, robot_vertex: int,
                   graph: PoseGraph, occ: OccupancyMap,
                   config: PlannerConfig) -> Action:
    """One decision step of the exploration state machine."""
    if state.phase == "done":
        raise RuntimeError("planning after completion")
    if state.phase == "failed":
        return Fail(state.fail_reason or "failed")
    state.cycle += 1
    state.cache.refresh(occ, graph.version, config)

    if state.phase == "region_discovery":
        region = state.active_region() if config.regions_enabled else None
        if region is not None and region.phase == "discovering":
            grow_region(region, (robot.x, robot.y), config.growth_radius,
                        config.region_max_size)

        if state.cycle >= state.alc_resume_cycle:
            candidates = build_alc_candidates(graph, region,
                                              config.cluster_radius,
                                              config.cluster_min_feature)
            robot_cell = _project_start(occ, state.cache.traversable,
                                        (robot.x, robot.y))
            flood = (state.cache.flood_from(robot_cell)
                     if robot_cell is not None else None)

            def route(candidate):
                if flood is None:
                    return math.inf
                goal = _project_to_traversable(
                    occ, state.cache.traversable,
                    (candidate.centroid_pose.x, candidate.centroid_pose.y),
                    config.goal_projection_radius, flood)
                return math.inf if goal is None else float(flood[goal])

            chosen = select_alc_target(graph, robot_vertex, candidates,
                                       config.alc_threshold,
                                       config.alc_distance_weight, route)
            if chosen is not None:
                candidate, delta_u = chosen
                goal = (candidate.centroid_pose.x, candidate.centroid_pose.y)
                if (math.hypot(goal[0] - robot.x, goal[1] - robot.y)
                        <= config.arrival_tolerance):
                    # Standing on the target: let the closure land and
                    # keep the trigger quiet while it takes effect.
                    state.alc_resume_cycle = (state.cycle
                                              + config.alc_cooldown_cycles)
                else:
                    goal_cell = _project_to_traversable(
                        occ, state.cache.traversable, goal,
                        config.goal_projection_radius, flood)
                    return _navigate_to(
                        state, occ, robot, occ.cell_center(*goal_cell),
                        "alc", config,
                        target_id=candidate.representative, delta_u=delta_u)

        _blacklist_stuck_frontier(state, robot, occ, config, region)
        choices = _frontier_choices(state, robot, occ, config, region)
        if choices:
            best = choices[0]
            state.previous_frontier = best.frontier
            goal_xy = occ.cell_center(*best.goal)
            state.last_frontier_goal = goal_xy
            return _navigate_to(state, occ, robot, goal_xy,
                                "frontier", config, cost=best.cost)
        if region is None:
            # Region-free baseline: exhausting the map ends the run.
            state.phase = "done"
            return Finish()
        region.advance_phase("refining")
        state.phase = "region_refinement"
        state.tour = None
        state.last_frontier_goal = None

    if state.phase == "region_refinement":
        region = state.active_region()
        if state.tour is None:
            points = [(kf.pose.x, kf.pose.y)
                      for kf in graph.region_keyframes(region.id)]
            if not points:
                points = [(robot.x, robot.y)]
            failure = _build_tour(state, points, robot, occ, config)
            if failure is not None:
                return failure
        action = _tour_step(state, robot, occ, config, "pgs")
        if action is not None:
            return action
        state.tour = None
        return MarkRegionComplete(region.id)

    if state.phase == "global_stabilization":
        if not state.stabilization_announced:
            state.stabilization_announced = True
            return StartGlobalStabilization()
        if state.tour is None:
            points = [(kf.pose.x, kf.pose.y) for kf in graph.keyframes()]
            failure = _build_tour(state, points, robot, occ, config)
            if failure is not None:
                return failure
        action = _tour_step(state, robot, occ, config, "stabilize")
        if action is not None:
            return action
        state.phase = "done"
        return Finish()

    raise RuntimeError(f"unhandled exploration phase {state.phase!r}")


def finish_region(state: ExplorationState, region_id: int) -> None:
    """Mark a region completed after its SLAM bookkeeping is done."""
    for region in state.regions:
        if region.id == region_id:
            region.advance_phase("completed")
            return
    raise LookupError(f"unknown region {region_id}")


def begin_next_region(state: ExplorationState, robot: Pose2,
                      occ: OccupancyMap, graph: PoseGraph,
                      config: PlannerConfig) -> Optional[Region]:
    """Open the next region at the robot, or hand over to stabilization.

    The new rect is recentered onto the nearest remaining frontier when
    the robot's surroundings hold none, so empty regions cannot recur.
    Returns None when the whole map is frontier-free.
    """
    state.cache.refresh(occ, graph.version, config)
    choices = _frontier_choices(state, robot, occ, config, region=None)
    if not choices:
        state.active_region_id = None
        state.phase = "global_stabilization"
        state.tour = None
        state.previous_frontier = None
        state.last_frontier_goal = None
        return None
    region = _create_region(state, (robot.x, robot.y), config)
    if not any(region.contains(*c.frontier.centroid) for c in choices):
        nearest = min(choices, key=lambda c: c.length)
        _recenter(region, nearest.frontier.centroid)
    return region


def _recenter(region: Region, center: Tuple[float, float]) -> None:
    w, h = region.width, region.height
    region.rect = (center[0] - w / 2.0, center[1] - h / 2.0,
                   center[0] + w / 2.0, center[1] + h / 2.0)
