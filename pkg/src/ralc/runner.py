"""Batch run loop: simulation, keyframing, loop closure, regions, recovery.

One planning cycle per simulated second. The robot drives the planner's
current path with a carrot controller, drops a keyframe (and senses a
submap) every half meter or half radian of odometry, attempts a loop
closure after a keyframe cooldown, and runs the region lifecycle on the
planner's say-so. Failures tear the run down to the latest snapshot.
"""
from __future__ import annotations

import json
import math
import os
import time
from typing import Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import (ColdStartError, MapSnapshot, SnapshotError,
                         restore_latest, save_snapshot)
from .config import RunConfig, config_hash, config_text, parse_injection
from .evaluation import RunMetrics
from .exploration import (Fail, Finish, MarkRegionComplete, Navigate,
                          StartGlobalStabilization, abandon_target,
                          begin_next_region, finish_region,
                          make_initial_state, planning_cycle)
from .marginalization import marginalize_region
from .pose_graph import (DEFAULT_CLOSURE_INFORMATION, CholeskyFailureError,
                         PoseGraph, PoseGraphError)
from .se2 import Pose2, between, compose, normalize_angle
from .sim import (FREE, OCCUPIED, Environment, MapStitcher, NoiseStream,
                  OccupancyMap, SimRobot, detect_loop_closure, sense,
                  step_robot, write_pgm)

CLOSURE_STREAM_SALT = 0x9E3779B97F4A7C15
MIN_ODOM_VARIANCE = 1e-6     # keeps noiseless odometry factors finite
LOOKAHEAD = 0.35
WAYPOINT_PASSED = 0.12
STALE_DRIFT = 0.05           # a cell of pose drift forces a repaint
SUBMAP_LEVER_ARM = 3.0       # m, worst-case cell displacement per radian
SPIN_THRESHOLD = 1.5         # rad; arc through smaller heading errors
STALL_CYCLES = 8             # navigation cycles watched for progress
STALL_DISTANCE = 0.05        # m of travel below which the target is dropped


class Runner:
    """Owns one run directory and drives one exploration to completion."""

    def __init__(self, env: Environment, cfg: RunConfig, out_dir: str):
        self.env = env
        self.cfg = cfg
        self.out_dir = out_dir
        self.hash = config_hash(cfg)
        self.injection = (parse_injection(cfg.inject_failure)
                          if cfg.inject_failure else None)
        self.injection_done = False

        self.robot = SimRobot.at_dock(env, cfg.seed,
                                      cfg.odom_trans_sigma, cfg.odom_rot_sigma)
        self.closure_stream = NoiseStream(cfg.seed ^ CLOSURE_STREAM_SALT)

        self.metrics = RunMetrics()
        self.keyframes_created = 0
        self.alc_legs = 0
        self.restores = 0
        self.cycles = 0
        self.status = "running"
        self._log_events: List[dict] = []
        self._files: List[str] = []
        self._last_purpose = ""
        self._stall_poses: List[Pose2] = []

        self._fresh_world()

    # -- world state ---------------------------------------------------------

    def _fresh_world(self) -> None:
        self.graph = PoseGraph()
        self.state = make_initial_state(self.env.dock, self.cfg.planner)
        self.submaps: List = []
        self.true_poses: Dict[int, Pose2] = {}
        self.occ: Optional[OccupancyMap] = None
        self._painted_at: Dict[int, Pose2] = {}
        self._stitcher = MapStitcher()
        self._stall_poses = []
        self._reset_odometry_reference()
        self.kf_since_closure = 0
        kf = self.graph.add_keyframe(self.env.dock,
                                     region_id=self._new_keyframe_region())
        self.keyframes_created += 1
        self.true_poses[kf] = self.robot.true_pose
        self.last_kf = kf
        self._sense(kf)

    def _reset_odometry_reference(self) -> None:
        self._odom_ref = self.robot.odom_pose
        self._var_t = 0.0
        self._var_r = 0.0

    def _new_keyframe_region(self) -> Optional[int]:
        if not self.cfg.planner.regions_enabled:
            return None
        if self.state.phase in ("region_discovery", "region_refinement"):
            return self.state.active_region_id
        return None

    def _slam_pose(self) -> Pose2:
        return compose(self.graph.pose(self.last_kf),
                       between(self._odom_ref, self.robot.odom_pose))

    # -- mapping -------------------------------------------------------------

    def _sense(self, kf_id: int) -> None:
        submap = sense(self.robot, self.env, len(self.submaps), kf_id,
                       slam_pose=self.graph.pose(kf_id))
        self.submaps.append(submap)
        self._blit(submap)
        self._painted_at[submap.id] = submap.creation_pose

    def _blit(self, submap) -> None:
        """Fold a freshly painted submap into the running global map."""
        if self.occ is None:
            self.occ = OccupancyMap(submap.grid.copy(),
                                    submap.origin, submap.resolution)
            return
        occ = self.occ
        res = occ.resolution
        rows, cols = occ.grid.shape
        sub_rows, sub_cols = submap.grid.shape
        r0 = int(round((submap.origin[1] - occ.origin[1]) / res))
        c0 = int(round((submap.origin[0] - occ.origin[0]) / res))
        pad_top = max(0, -r0)
        pad_left = max(0, -c0)
        pad_bottom = max(0, r0 + sub_rows - rows)
        pad_right = max(0, c0 + sub_cols - cols)
        if pad_top or pad_left or pad_bottom or pad_right:
            grid = np.zeros((rows + pad_top + pad_bottom,
                             cols + pad_left + pad_right), dtype=occ.grid.dtype)
            grid[pad_top:pad_top + rows, pad_left:pad_left + cols] = occ.grid
            occ = OccupancyMap(grid,
                               (occ.origin[0] - pad_left * res,
                                occ.origin[1] - pad_top * res), res)
            r0 += pad_top
            c0 += pad_left
            self.occ = occ
        window = occ.grid[r0:r0 + sub_rows, c0:c0 + sub_cols]
        np.maximum(window, submap.grid, out=window)

    def _render_pose(self, submap) -> Pose2:
        if self.graph.has(submap.attached_keyframe):
            return self.graph.pose(submap.attached_keyframe)
        return submap.frozen_pose

    def _map_is_stale(self) -> bool:
        for submap in self.submaps:
            now = self._render_pose(submap)
            old = self._painted_at.get(submap.id)
            if old is None:
                return True
            drift = (abs(now.x - old.x) + abs(now.y - old.y)
                     + SUBMAP_LEVER_ARM * abs(normalize_angle(now.theta
                                                              - old.theta)))
            if drift > STALE_DRIFT:
                return True
        return False

    def _rebuild_map(self, force: bool = False) -> None:
        # Optimization usually nudges poses by far less than a cell;
        # repainting then would reproduce the same grid, so the rebuild
        # only runs once some submap has drifted from where it was last
        # painted. The final map is always rebuilt exactly.
        if not force and not self._map_is_stale():
            return
        self.occ = self._stitcher.rebuild(self.submaps, self.graph)
        self._painted_at = {submap.id: self._render_pose(submap)
                            for submap in self.submaps}

    # -- SLAM events ---------------------------------------------------------

    def _optimize(self, trigger: str) -> None:
        if self._injection_fires("cholesky"):
            raise CholeskyFailureError(0, "injected fault")
        started = time.perf_counter()
        report = self.graph.optimize()
        self.metrics.pgo_wall_times.append(time.perf_counter() - started)
        self.metrics.pgo_count += 1
        self._log("optimize", trigger=trigger, iterations=report.iterations,
                  vertices=len(self.graph), final_cost=report.final_cost)

    def _maybe_keyframe(self) -> None:
        rel = between(self._odom_ref, self.robot.odom_pose)
        if (math.hypot(rel.x, rel.y) < self.cfg.keyframe_distance
                and abs(rel.theta) < self.cfg.keyframe_rotation):
            return
        self._add_keyframe(rel)

    def _add_keyframe(self, rel: Pose2,
                      region_id: Optional[int] = None,
                      use_region: bool = True) -> int:
        estimate = compose(self.graph.pose(self.last_kf), rel)
        var_t = max(self._var_t, MIN_ODOM_VARIANCE)
        var_r = max(self._var_r, MIN_ODOM_VARIANCE)
        information = np.diag([1.0 / var_t, 1.0 / var_t, 1.0 / var_r])
        kf = self.graph.add_keyframe(
            estimate, odometry=(self.last_kf, rel, information),
            region_id=self._new_keyframe_region() if use_region else region_id)
        self.keyframes_created += 1
        self.true_poses[kf] = self.robot.true_pose
        self.last_kf = kf
        self._reset_odometry_reference()
        self._sense(kf)
        self.kf_since_closure += 1
        if self.kf_since_closure >= self.cfg.closure_cooldown_keyframes:
            self._attempt_closure(kf)
        return kf

    def _attempt_closure(self, kf_id: int) -> None:
        hit = detect_loop_closure(self.graph, kf_id, self.env, self.true_poses,
                                  self.closure_stream,
                                  self.cfg.loop_closure_range,
                                  self.cfg.loop_min_separation,
                                  self.cfg.loop_feature_min)
        if hit is None:
            return
        target, measurement, information = hit
        self.graph.add_loop_closure(kf_id, target, measurement, information)
        self.metrics.loop_closure_count += 1
        self.kf_since_closure = 0
        self._log("loop_closure", keyframe=kf_id, target=target)
        self._optimize("loop_closure")
        self._rebuild_map()

    # -- motion --------------------------------------------------------------

    def _check_progress(self, purpose: str) -> None:
        """Abandon the current target after cycles without motion.

        The grid planner can produce goals no controller reaches (a
        stand-in cell across thin clutter, a passage the map paints
        wider than it is); without this the run would orbit the target
        forever.
        """
        self._stall_poses.append(self.robot.true_pose)
        if len(self._stall_poses) < STALL_CYCLES:
            return
        moved = sum(math.hypot(b.x - a.x, b.y - a.y)
                    for a, b in zip(self._stall_poses, self._stall_poses[1:]))
        self._stall_poses.pop(0)
        if moved >= STALL_DISTANCE:
            return
        dropped = abandon_target(self.state, self.cfg.planner, purpose)
        self._stall_poses.clear()
        self._log("stalled", purpose=purpose, dropped=dropped)

    def _follow(self, path) -> None:
        points = [tuple(p) for p in path]
        dt = self.cfg.cycle_seconds / self.cfg.substeps
        for _ in range(self.cfg.substeps):
            pose = self._slam_pose()
            while len(points) > 1 and math.hypot(points[0][0] - pose.x,
                                                 points[0][1] - pose.y) < WAYPOINT_PASSED:
                points.pop(0)
            goal = points[-1]
            goal_dist = math.hypot(goal[0] - pose.x, goal[1] - pose.y)
            if goal_dist < 0.08:
                break
            carrot = goal
            for p in points:
                if math.hypot(p[0] - pose.x, p[1] - pose.y) >= LOOKAHEAD:
                    carrot = p
                    break
            alpha = normalize_angle(math.atan2(carrot[1] - pose.y,
                                               carrot[0] - pose.x) - pose.theta)
            omega = max(-self.cfg.w_max, min(self.cfg.w_max, 2.5 * alpha))
            if abs(alpha) > SPIN_THRESHOLD:
                v = 0.0
            else:
                v = self.cfg.v_max * max(0.0, math.cos(alpha))
                v = min(v, goal_dist)
            step_robot(self.robot, self.env, (v, omega), dt)
            self._var_t += (self.cfg.odom_trans_sigma * abs(v) * dt) ** 2
            self._var_r += (self.cfg.odom_rot_sigma * abs(omega) * dt) ** 2
            self._maybe_keyframe()

    # -- region lifecycle ------------------------------------------------------

    def _complete_region(self, region_id: int) -> None:
        # Bridge keyframe: keeps the newest vertex out of the removed set
        # and carries the odometry chain across the marginalized region.
        rel = between(self._odom_ref, self.robot.odom_pose)
        self._add_keyframe(rel, region_id=None, use_region=False)
        self._optimize("region_complete")
        self._rebuild_map()

        members = {kf.id for kf in self.graph.region_keyframes(region_id)}
        for submap in self.submaps:
            if submap.attached_keyframe in members:
                submap.frozen_pose = self.graph.pose(submap.attached_keyframe)

        # A region can finish without any keyframes of its own (the dock
        # region reseeded after a restore lands in already-mapped space);
        # there is nothing to marginalize then.
        if self.cfg.algorithm == "ralc" and members:
            report = marginalize_region(self.graph, region_id,
                                        self.cfg.anchors_per_region,
                                        self.cfg.recovery_topology)
            self.metrics.marginalization_reports.append({
                "region_id": report.region_id,
                "removed": report.removed_count,
                "recovered_factors": report.recovered_factor_count,
                "kld": report.kld,
            })
            self._log("marginalize", region=region_id,
                      removed=report.removed_count,
                      recovered_factors=report.recovered_factor_count,
                      kld=report.kld)

        finish_region(self.state, region_id)
        self._log("region_complete", region=region_id,
                  completed=[r.id for r in self.state.regions
                             if r.phase == "completed"])

        snapshot = MapSnapshot(
            version=1, regions=list(self.state.regions), graph=self.graph,
            submaps=self.submaps, occupancy=self.occ,
            odom_seed=self.robot.stream.seed,
            odom_counter=self.robot.stream.counter,
            closure_seed=self.closure_stream.seed,
            closure_counter=self.closure_stream.counter,
            config_hash=self.hash, created_after_region=region_id)
        self._files.append(os.path.basename(save_snapshot(snapshot, self.out_dir)))
        self._log("snapshot", region=region_id)
        self._write_pgm(f"map_region_{region_id}.pgm")

        begin_next_region(self.state, self._slam_pose(), self.occ,
                          self.graph, self.cfg.planner)

    # -- failure handling ------------------------------------------------------

    def _injection_fires(self, kind: str) -> bool:
        if self.injection is None or self.injection_done:
            return False
        region, wanted = self.injection
        if wanted != kind or self.state.active_region_id != region:
            return False
        self.injection_done = True
        return True

    def _recover(self, reason: str) -> bool:
        self._log("failure", reason=reason)
        if self.restores >= self.cfg.max_recovery_attempts:
            return False
        self.restores += 1
        self.robot.true_pose = self.env.dock
        self.robot.odom_pose = self.env.dock
        try:
            result = restore_latest(self.out_dir, self.hash, self.env.dock,
                                    self.cfg.planner)
        except ColdStartError:
            self._fresh_world()
            self._log("restore", cold=True, completed=[])
            return True
        self.state = result.state
        self.graph = result.graph
        self.submaps = list(result.submaps)
        self.occ = result.occupancy
        self._painted_at = {submap.id: self._render_pose(submap)
                            for submap in self.submaps}
        self._stitcher = MapStitcher()
        self._stall_poses = []
        self.robot.stream.counter = result.snapshot.odom_counter
        self.closure_stream.counter = result.snapshot.closure_counter

        surviving = set(self.graph.ids())
        self.true_poses = {k: v for k, v in self.true_poses.items()
                           if k in surviving}
        dock = self.env.dock
        target = min(surviving,
                     key=lambda k: math.hypot(self.true_poses[k].x - dock.x,
                                              self.true_poses[k].y - dock.y))
        measurement = between(self.true_poses[target], dock)
        kf = self.graph.add_relocalized_keyframe(
            compose(self.graph.pose(target), measurement), target,
            measurement, DEFAULT_CLOSURE_INFORMATION)
        self.keyframes_created += 1
        self.true_poses[kf] = dock
        self.last_kf = kf
        self._reset_odometry_reference()
        self.kf_since_closure = 0
        self._sense(kf)
        self._log("restore", cold=False,
                  snapshot_region=result.snapshot.created_after_region,
                  relocalized_to=target,
                  completed=[r.id for r in self.state.regions
                             if r.phase == "completed"])
        return True

    # -- main loop -------------------------------------------------------------

    def run(self) -> int:
        started = time.perf_counter()
        try:
            code = self._loop()
        except (OSError, SnapshotError) as err:
            self._log("storage_failure", reason=str(err))
            self.status = "failed"
            code = self._finalize(2)
        self.runtime_s = time.perf_counter() - started
        self._write_timing()
        self._write_manifest()
        return code

    def _loop(self) -> int:
        while self.cycles < self.cfg.max_cycles:
            self.cycles += 1
            action = planning_cycle(self.state, self._slam_pose(),
                                    self.last_kf, self.graph, self.occ,
                                    self.cfg.planner)
            if isinstance(action, Navigate) and self._injection_fires("no_path"):
                action = Fail("injected fault: no path to goal")

            if isinstance(action, Finish):
                self.status = "done"
                return self._finish_up()
            if isinstance(action, Fail):
                if self._recover(action.reason):
                    continue
                self.status = "failed"
                return self._finalize(2)

            try:
                if isinstance(action, Navigate):
                    if action.purpose != self._last_purpose:
                        if action.purpose == "alc":
                            self.alc_legs += 1
                            self._log("alc_leg", target=action.target_id,
                                      expected_gain=action.delta_u)
                        self._last_purpose = action.purpose
                    self._follow(action.path)
                    self._check_progress(action.purpose)
                elif isinstance(action, MarkRegionComplete):
                    self._stall_poses.clear()
                    self._complete_region(action.region_id)
                elif isinstance(action, StartGlobalStabilization):
                    self._stall_poses.clear()
                    self._log("global_stabilization")
            except PoseGraphError as err:
                if self._recover(f"optimization failed: {err}"):
                    continue
                self.status = "failed"
                return self._finalize(2)
        self.status = "failed"
        self._log("failure", reason="cycle budget exhausted")
        return self._finalize(2)

    def _finish_up(self) -> int:
        try:
            self._optimize("final")
            self._rebuild_map(force=True)
        except PoseGraphError as err:
            self._log("failure", reason=f"final optimization failed: {err}")
        self._log("finish", cycles=self.cycles)
        return self._finalize(0)

    # -- outputs ---------------------------------------------------------------

    def _log(self, event: str, **fields) -> None:
        entry = {"cycle": self.cycles, "event": event}
        entry.update(fields)
        self._log_events.append(entry)

    def _write_pgm(self, name: str) -> None:
        write_pgm(os.path.join(self.out_dir, name), self.occ)
        self._files.append(name)

    def _write_text(self, name: str, text: str) -> None:
        with open(os.path.join(self.out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(text)
        self._files.append(name)

    def _finalize(self, code: int) -> int:
        self.metrics.exploration_duration = self.cycles * self.cfg.cycle_seconds
        self.metrics.keyframe_count = len(self.graph)
        self.metrics.submap_count = len(self.submaps)

        self._write_text("config.txt", config_text(self.cfg))
        self._write_text("pose_graph.g2o", self.graph.dump())
        self._write_pgm("map_final.pgm")
        grid = self.occ.grid
        record = {
            "algorithm": self.cfg.algorithm,
            "environment": self.env.name,
            "seed": self.cfg.seed,
            "config_hash": f"{self.hash:016x}",
            "status": self.status,
            "exit_code": code,
            "cycles": self.cycles,
            "duration_s": self.metrics.exploration_duration,
            "keyframes_final": self.metrics.keyframe_count,
            "keyframes_created": self.keyframes_created,
            "submaps": self.metrics.submap_count,
            "pgo_count": self.metrics.pgo_count,
            "loop_closures": self.metrics.loop_closure_count,
            "alc_legs": self.alc_legs,
            "regions_completed": sum(1 for r in self.state.regions
                                     if r.phase == "completed"),
            "restores": self.restores,
            "marginalizations": self.metrics.marginalization_reports,
            "free_cells": int((grid == FREE).sum()),
            "occupied_cells": int((grid == OCCUPIED).sum()),
            "map_origin_x": self.occ.origin[0],
            "map_origin_y": self.occ.origin[1],
            "map_resolution": self.occ.resolution,
        }
        self._write_text("metrics.json",
                         json.dumps(record, sort_keys=True, indent=2) + "\n")
        lines = [json.dumps(e, sort_keys=True) for e in self._log_events]
        self._write_text("decision_log.jsonl", "\n".join(lines) + "\n")
        return code

    def _write_timing(self) -> None:
        timing = {
            "runtime_s": self.runtime_s,
            "pgo_count": self.metrics.pgo_count,
            "mean_pgo_ms": self.metrics.mean_pgo_ms,
            "pgo_wall_times_ms": [t * 1000.0 for t in self.metrics.pgo_wall_times],
        }
        self._write_text("timing.json", json.dumps(timing, indent=2) + "\n")

    def _write_manifest(self) -> None:
        files = sorted(set(self._files) | {"manifest.json"})
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"files": files}, indent=2) + "\n")


def run(env: Environment, cfg: RunConfig, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    return Runner(env, cfg, out_dir).run()
