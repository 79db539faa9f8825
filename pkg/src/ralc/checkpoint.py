"""Snapshot persistence: save the map after each completed region, restore on failure.

A snapshot freezes everything needed to resume exploration from the last
stable point: the region ledger, the full pose graph (anchor flags and
recovered factors included), every submap with its frozen pose, the
stitched occupancy map, and the noise stream positions. The encoding is
a little-endian, length-prefixed binary format so round-trips are
bit-exact; text floats would not be.
"""
from __future__ import annotations

import glob
import os
import struct
import zlib
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .exploration import (PHASE_ORDER, ExplorationState, PlannerConfig, Region,
                          _create_region)
from .pose_graph import Factor, FactorKind, Keyframe, PoseGraph
from .se2 import Pose2
from .sim import OccupancyMap, Submap

MAGIC = b"RALCSNAP"
FORMAT_VERSION = 1

SNAPSHOT_PATTERN = "snapshot_*.ralc"


class SnapshotError(Exception):
    pass


class ColdStartError(SnapshotError):
    """No snapshot exists; the caller must begin from scratch."""


@dataclass
class MapSnapshot:
    version: int
    regions: List[Region]
    graph: PoseGraph
    submaps: List[Submap]
    occupancy: OccupancyMap
    odom_seed: int
    odom_counter: int
    closure_seed: int
    closure_counter: int
    config_hash: int
    created_after_region: int


@dataclass
class RestoreResult:
    state: ExplorationState
    graph: PoseGraph
    occupancy: OccupancyMap
    submaps: List[Submap]
    snapshot: MapSnapshot


# -- primitive encoding ------------------------------------------------------

class _Writer:
    def __init__(self) -> None:
        self._parts: List[bytes] = []

    def u8(self, value: int) -> None:
        self._parts.append(struct.pack("<B", value))

    def u32(self, value: int) -> None:
        self._parts.append(struct.pack("<I", value))

    def i32(self, value: int) -> None:
        self._parts.append(struct.pack("<i", value))

    def u64(self, value: int) -> None:
        self._parts.append(struct.pack("<Q", value))

    def f64(self, value: float) -> None:
        self._parts.append(struct.pack("<d", value))

    def blob(self, data: bytes) -> None:
        self.u32(len(data))
        self._parts.append(data)

    def pose(self, pose: Pose2) -> None:
        self._parts.append(struct.pack("<3d", pose.x, pose.y, pose.theta))

    def optional_pose(self, pose: Optional[Pose2]) -> None:
        if pose is None:
            self.u8(0)
        else:
            self.u8(1)
            self.pose(pose)

    def matrix3(self, m: np.ndarray) -> None:
        self._parts.append(struct.pack("<9d", *np.asarray(m, dtype=float).ravel()))

    def grid(self, grid: np.ndarray) -> None:
        rows, cols = grid.shape
        self.u32(rows)
        self.u32(cols)
        self.blob(zlib.compress(np.ascontiguousarray(grid, dtype=np.uint8).tobytes(), 6))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self._buf = buf
        self._off = 0

    def _take(self, n: int) -> bytes:
        if self._off + n > len(self._buf):
            raise SnapshotError("snapshot truncated")
        chunk = self._buf[self._off:self._off + n]
        self._off += n
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def pose(self) -> Pose2:
        return Pose2(*struct.unpack("<3d", self._take(24)))

    def optional_pose(self) -> Optional[Pose2]:
        return self.pose() if self.u8() else None

    def matrix3(self) -> np.ndarray:
        return np.array(struct.unpack("<9d", self._take(72))).reshape(3, 3)

    def grid(self) -> np.ndarray:
        rows = self.u32()
        cols = self.u32()
        raw = zlib.decompress(self.blob())
        if len(raw) != rows * cols:
            raise SnapshotError("grid payload size mismatch")
        return np.frombuffer(raw, dtype=np.int8).reshape(rows, cols).copy()

    def done(self) -> bool:
        return self._off == len(self._buf)


# -- snapshot codec ----------------------------------------------------------

def serialize(snapshot: MapSnapshot) -> bytes:
    body = _Writer()
    body.u64(snapshot.config_hash)
    body.u32(snapshot.created_after_region)
    body.u64(snapshot.odom_seed)
    body.u64(snapshot.odom_counter)
    body.u64(snapshot.closure_seed)
    body.u64(snapshot.closure_counter)

    body.u32(len(snapshot.regions))
    for region in snapshot.regions:
        body.u32(region.id)
        for coord in region.rect:
            body.f64(coord)
        body.u8(PHASE_ORDER.index(region.phase))

    graph = snapshot.graph
    keyframes = [graph.keyframe(i) for i in graph.ids()]
    body.u32(len(keyframes))
    for kf in keyframes:
        body.u32(kf.id)
        body.pose(kf.pose)
        body.i32(-1 if kf.region_id is None else kf.region_id)
        body.f64(kf.feature_score)
        body.u8(1 if kf.is_anchor else 0)
    factors = graph.factors()
    body.u32(len(factors))
    for factor in factors:
        body.u32(factor.from_id)
        body.u32(factor.to_id)
        body.pose(factor.measurement)
        body.matrix3(factor.information)
        body.u8(int(factor.kind))
    body.u32(graph._next_id)
    body.i32(-1 if graph.latest is None else graph.latest)
    body.i32(-1 if graph._gauge_id is None else graph._gauge_id)
    body.optional_pose(graph._gauge_pose)

    body.u32(len(snapshot.submaps))
    for submap in snapshot.submaps:
        body.u32(submap.id)
        body.u32(submap.attached_keyframe)
        body.f64(submap.origin[0])
        body.f64(submap.origin[1])
        body.pose(submap.creation_pose)
        body.f64(submap.resolution)
        body.optional_pose(submap.frozen_pose)
        body.grid(submap.grid)

    occ = snapshot.occupancy
    body.f64(occ.origin[0])
    body.f64(occ.origin[1])
    body.f64(occ.resolution)
    body.grid(occ.grid)

    payload = body.getvalue()
    head = _Writer()
    head.u32(snapshot.version)
    head.u64(len(payload))
    return MAGIC + head.getvalue() + payload


def deserialize(data: bytes) -> MapSnapshot:
    if data[:len(MAGIC)] != MAGIC:
        raise SnapshotError("not a snapshot file (bad magic)")
    reader = _Reader(data[len(MAGIC):])
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    payload_len = reader.u64()
    if payload_len != len(data) - len(MAGIC) - 12:
        raise SnapshotError("snapshot payload length mismatch")

    config_hash = reader.u64()
    created_after = reader.u32()
    odom_seed = reader.u64()
    odom_counter = reader.u64()
    closure_seed = reader.u64()
    closure_counter = reader.u64()

    regions = []
    for _ in range(reader.u32()):
        region_id = reader.u32()
        rect = (reader.f64(), reader.f64(), reader.f64(), reader.f64())
        phase = PHASE_ORDER[reader.u8()]
        regions.append(Region(region_id, rect, phase))

    graph = PoseGraph()
    for _ in range(reader.u32()):
        kf_id = reader.u32()
        pose = reader.pose()
        region_raw = reader.i32()
        feature = reader.f64()
        is_anchor = bool(reader.u8())
        graph._keyframes[kf_id] = Keyframe(
            kf_id, pose, None if region_raw < 0 else region_raw,
            feature, is_anchor)
    for _ in range(reader.u32()):
        from_id = reader.u32()
        to_id = reader.u32()
        measurement = reader.pose()
        information = reader.matrix3()
        kind = FactorKind(reader.u8())
        graph._factors.append(Factor(from_id, to_id, measurement, information, kind))
    graph._next_id = reader.u32()
    latest = reader.i32()
    graph.latest = None if latest < 0 else latest
    gauge = reader.i32()
    graph._gauge_id = None if gauge < 0 else gauge
    graph._gauge_pose = reader.optional_pose()

    submaps = []
    for _ in range(reader.u32()):
        submap_id = reader.u32()
        attached = reader.u32()
        origin = (reader.f64(), reader.f64())
        creation = reader.pose()
        resolution = reader.f64()
        frozen = reader.optional_pose()
        grid = reader.grid()
        submaps.append(Submap(submap_id, attached, origin, creation, grid,
                              resolution, frozen))

    occ_origin = (reader.f64(), reader.f64())
    occ_res = reader.f64()
    occ_grid = reader.grid()
    occupancy = OccupancyMap(occ_grid, occ_origin, occ_res)

    if not reader.done():
        raise SnapshotError("trailing bytes after snapshot payload")

    return MapSnapshot(version, regions, graph, submaps, occupancy,
                       odom_seed, odom_counter, closure_seed, closure_counter,
                       config_hash, created_after)


# -- file layer --------------------------------------------------------------

def snapshot_path(directory: str, region_id: int) -> str:
    return os.path.join(directory, f"snapshot_{region_id}.ralc")


def save_snapshot(snapshot: MapSnapshot, directory: str) -> str:
    """Write atomically (temp file + rename); prior snapshots stay intact."""
    data = serialize(snapshot)
    final = snapshot_path(directory, snapshot.created_after_region)
    tmp = final + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, final)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return final


def load_snapshot(path: str) -> MapSnapshot:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def list_snapshots(directory: str) -> List[Tuple[int, str]]:
    """(created_after_region, path) pairs sorted oldest first."""
    found = []
    for path in glob.glob(os.path.join(directory, SNAPSHOT_PATTERN)):
        stem = os.path.basename(path)[len("snapshot_"):-len(".ralc")]
        try:
            found.append((int(stem), path))
        except ValueError:
            continue
    return sorted(found)


def restore_latest(directory: str, config_hash: int, dock: Pose2,
                   planner: PlannerConfig) -> RestoreResult:
    """Load the newest snapshot and stage exploration to resume from the dock.

    The restored ledger keeps every completed region. A fresh region is
    seeded around the dock (the robot is assumed returned there) and the
    planner restarts in discovery. Relocalizing the new dock keyframe
    against the surviving graph is the caller's job.
    """
    snapshots = list_snapshots(directory)
    if not snapshots:
        raise ColdStartError(f"no snapshots in {directory}")
    _, path = snapshots[-1]
    snapshot = load_snapshot(path)
    if snapshot.config_hash != config_hash:
        raise SnapshotError(
            f"snapshot {os.path.basename(path)} was written under a different "
            f"configuration (hash {snapshot.config_hash:#018x} != {config_hash:#018x})")

    state = ExplorationState(regions=list(snapshot.regions))
    state.next_region_id = max((r.id for r in snapshot.regions), default=-1) + 1
    state.phase = "region_discovery"
    if planner.regions_enabled:
        _create_region(state, (dock.x, dock.y), planner)
    return RestoreResult(state, snapshot.graph, snapshot.occupancy,
                         list(snapshot.submaps), snapshot)
