"""Pose-graph SLAM backend: Gauss-Newton optimization and covariance recovery.

The graph holds SE(2) keyframes connected by relative-pose factors
(odometry, loop closures, and factors recovered by marginalization). The
global frame gauge is fixed by a strong prior on a root keyframe. Normal
equations are solved by Cholesky decomposition: dense for small graphs,
banded after a reverse Cuthill-McKee reordering for larger ones.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .se2 import Pose2, between, check_information, compose, error_jacobians, rotation

GAUGE_PRIOR_INFO = 1e8
DENSE_VERTEX_LIMIT = 50

DEFAULT_CLOSURE_INFORMATION = np.diag([400.0, 400.0, 1600.0])


class PoseGraphError(Exception):
    pass


def uncertainty_ratio(cov_rel: np.ndarray, closure_information: np.ndarray) -> float:
    """det(prior) / det(posterior) for fusing one relative-pose observation.

    Computed as det(I + Sigma * Lambda), which avoids inverting either
    matrix and is exactly 1 when the closure carries no information.
    """
    ratio_matrix = np.eye(3) + cov_rel @ closure_information
    det = float(np.linalg.det(ratio_matrix))
    if not np.isfinite(det) or det <= 0.0:
        raise PoseGraphError("posterior relative covariance is singular")
    return det


class UnknownVertexError(PoseGraphError):
    pass


class CholeskyFailureError(PoseGraphError):
    """Normal-equations factorization failed; carries the iteration index."""

    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = iteration
        super().__init__(f"Cholesky factorization failed at iteration {iteration}"
                         + (f": {detail}" if detail else ""))


class FactorKind(IntEnum):
    ODOMETRY = 0
    LOOP_CLOSURE = 1
    RECOVERED = 2


@dataclass
class Keyframe:
    id: int
    pose: Pose2
    region_id: Optional[int] = None
    feature_score: float = 1.0
    is_anchor: bool = False


@dataclass
class Factor:
    from_id: int
    to_id: int
    measurement: Pose2
    information: np.ndarray
    kind: FactorKind = FactorKind.ODOMETRY

    def __post_init__(self) -> None:
        self.information = check_information(self.information)
        if self.from_id == self.to_id:
            raise PoseGraphError(f"factor endpoints must differ, got {self.from_id}")


@dataclass
class OptimizeReport:
    iterations: int
    initial_cost: float
    final_cost: float
    wall_time: float


class PoseGraph:
    """Keyframes plus relative-pose factors, with gauge-fixed optimization."""

    def __init__(self) -> None:
        self._keyframes: Dict[int, Keyframe] = {}
        self._factors: List[Factor] = []
        self._next_id = 0
        self.latest: Optional[int] = None
        self._gauge_id: Optional[int] = None
        self._gauge_pose: Optional[Pose2] = None
        self._version = 0
        self._solver_cache: Optional[tuple] = None

    # -- introspection ------------------------------------------------------

    def __len__(self) -> int:
        return len(self._keyframes)

    @property
    def version(self) -> int:
        return self._version

    def ids(self) -> List[int]:
        return sorted(self._keyframes)

    def has(self, vertex: int) -> bool:
        return vertex in self._keyframes

    def keyframe(self, vertex: int) -> Keyframe:
        try:
            return self._keyframes[vertex]
        except KeyError:
            raise UnknownVertexError(f"no keyframe {vertex}") from None

    def keyframes(self) -> List[Keyframe]:
        return [self._keyframes[v] for v in self.ids()]

    def factors(self) -> List[Factor]:
        return list(self._factors)

    def pose(self, vertex: int) -> Pose2:
        return self.keyframe(vertex).pose

    def region_keyframes(self, region_id: int) -> List[Keyframe]:
        return [kf for kf in self.keyframes() if kf.region_id == region_id]

    def has_factor_between(self, a: int, b: int) -> bool:
        for f in self._factors:
            if {f.from_id, f.to_id} == {a, b}:
                return True
        return False

    def factor_count(self, kind: Optional[FactorKind] = None) -> int:
        if kind is None:
            return len(self._factors)
        return sum(1 for f in self._factors if f.kind == kind)

    # -- construction -------------------------------------------------------

    def _touch(self) -> None:
        self._version += 1
        self._solver_cache = None

    def add_keyframe(self, pose: Pose2,
                     odometry: Optional[Tuple[int, Pose2, np.ndarray]] = None,
                     region_id: Optional[int] = None,
                     feature_score: float = 1.0) -> int:
        """Append a keyframe. Every keyframe after the first must arrive with
        an odometry factor (prev_id, measurement, information) so the graph
        stays connected."""
        if odometry is None and self._keyframes:
            raise PoseGraphError("odometry factor required for non-first keyframe")
        if odometry is not None:
            prev, meas, info = odometry
            if prev not in self._keyframes:
                raise UnknownVertexError(f"odometry references unknown keyframe {prev}")
        vid = self._next_id
        self._next_id += 1
        self._keyframes[vid] = Keyframe(vid, pose, region_id, float(feature_score))
        if odometry is not None:
            prev, meas, info = odometry
            self._factors.append(Factor(prev, vid, meas, info, FactorKind.ODOMETRY))
        else:
            self._gauge_id = vid
            self._gauge_pose = pose
        self.latest = vid
        self._touch()
        return vid

    def add_relocalized_keyframe(self, pose: Pose2, target: int,
                                 measurement: Pose2, information) -> int:
        """Append a keyframe whose only link is a loop closure to an existing
        keyframe. Used when the odometry chain was broken by a recovery."""
        if target not in self._keyframes:
            raise UnknownVertexError(f"no keyframe {target}")
        vid = self._next_id
        self._next_id += 1
        self._keyframes[vid] = Keyframe(vid, pose, None, 1.0)
        self._factors.append(Factor(target, vid, measurement, information,
                                    FactorKind.LOOP_CLOSURE))
        self.latest = vid
        self._touch()
        return vid

    def add_loop_closure(self, a: int, b: int, measurement: Pose2,
                         information) -> int:
        if a not in self._keyframes or b not in self._keyframes:
            raise UnknownVertexError(f"loop closure references unknown keyframe {a}/{b}")
        if a == b:
            raise PoseGraphError("loop closure endpoints must differ")
        self._factors.append(Factor(a, b, measurement, information,
                                    FactorKind.LOOP_CLOSURE))
        self._touch()
        return len(self._factors) - 1

    def insert_factor(self, factor: Factor) -> None:
        if factor.from_id not in self._keyframes or factor.to_id not in self._keyframes:
            raise UnknownVertexError("factor references unknown keyframe")
        self._factors.append(factor)
        self._touch()

    def remove_keyframe_set(self, removed: Iterable[int]) -> List[Factor]:
        """Delete keyframes and every factor touching them. Returns the
        dropped factors. The latest keyframe must not be removed."""
        removed = set(removed)
        for v in removed:
            if v not in self._keyframes:
                raise UnknownVertexError(f"no keyframe {v}")
        if self.latest in removed:
            raise PoseGraphError("refusing to remove the latest keyframe")
        dropped = [f for f in self._factors if f.from_id in removed or f.to_id in removed]
        self._factors = [f for f in self._factors
                         if f.from_id not in removed and f.to_id not in removed]
        for v in removed:
            del self._keyframes[v]
        if self._gauge_id in removed:
            # Re-anchor the gauge at the oldest surviving keyframe, freezing
            # the global frame at its current estimate.
            new_gauge = min(self._keyframes)
            self._gauge_id = new_gauge
            self._gauge_pose = self._keyframes[new_gauge].pose
        self._touch()
        return dropped

    def set_pose(self, vertex: int, pose: Pose2) -> None:
        self.keyframe(vertex).pose = pose
        self._touch()

    def clone(self) -> "PoseGraph":
        g = PoseGraph()
        g._keyframes = {v: Keyframe(kf.id, kf.pose, kf.region_id,
                                    kf.feature_score, kf.is_anchor)
                        for v, kf in self._keyframes.items()}
        g._factors = [Factor(f.from_id, f.to_id, f.measurement,
                             f.information.copy(), f.kind)
                      for f in self._factors]
        g._next_id = self._next_id
        g.latest = self.latest
        g._gauge_id = self._gauge_id
        g._gauge_pose = self._gauge_pose
        return g

    def is_connected(self) -> bool:
        if not self._keyframes:
            return True
        adj: Dict[int, List[int]] = {v: [] for v in self._keyframes}
        for f in self._factors:
            adj[f.from_id].append(f.to_id)
            adj[f.to_id].append(f.from_id)
        start = next(iter(self._keyframes))
        seen = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        return len(seen) == len(self._keyframes)

    # -- linearization ------------------------------------------------------

    def _slots(self) -> Dict[int, int]:
        return {v: i for i, v in enumerate(self.ids())}

    def _factor_arrays(self):
        m = len(self._factors)
        ia = np.empty(m, dtype=np.int64)
        ib = np.empty(m, dtype=np.int64)
        meas = np.empty((m, 3))
        info = np.empty((m, 3, 3))
        slot = self._slots()
        for k, f in enumerate(self._factors):
            ia[k] = slot[f.from_id]
            ib[k] = slot[f.to_id]
            meas[k] = f.measurement.as_array()
            info[k] = f.information
        return ia, ib, meas, info, slot

    @staticmethod
    def _batched_linearize(poses: np.ndarray, ia, ib, meas):
        """Residuals and Jacobians for all factors at once.

        poses: (n, 3) array. Returns r (m, 3), Ja (m, 3, 3), Jb (m, 3, 3).
        """
        pa = poses[ia]
        pb = poses[ib]
        ca, sa = np.cos(pa[:, 2]), np.sin(pa[:, 2])
        dx = pb[:, 0] - pa[:, 0]
        dy = pb[:, 1] - pa[:, 1]
        # Relative pose d = between(a, b)
        dxl = ca * dx + sa * dy
        dyl = -sa * dx + ca * dy
        dth = pb[:, 2] - pa[:, 2]
        # Residual r = between(meas, d)
        cm, sm = np.cos(meas[:, 2]), np.sin(meas[:, 2])
        rx = cm * (dxl - meas[:, 0]) + sm * (dyl - meas[:, 1])
        ry = -sm * (dxl - meas[:, 0]) + cm * (dyl - meas[:, 1])
        rth = np.arctan2(np.sin(dth - meas[:, 2]), np.cos(dth - meas[:, 2]))
        m = len(ia)
        r = np.stack([rx, ry, rth], axis=1)

        ja = np.zeros((m, 3, 3))
        ja[:, 0, 0] = -cm
        ja[:, 0, 1] = -sm
        ja[:, 1, 0] = sm
        ja[:, 1, 1] = -cm
        # Rm^T @ [d.y, -d.x]
        ja[:, 0, 2] = cm * dyl - sm * dxl
        ja[:, 1, 2] = -sm * dyl - cm * dxl
        ja[:, 2, 2] = -1.0

        jb = np.zeros((m, 3, 3))
        cr, sr = np.cos(rth), np.sin(rth)
        jb[:, 0, 0] = cr
        jb[:, 0, 1] = -sr
        jb[:, 1, 0] = sr
        jb[:, 1, 1] = cr
        jb[:, 2, 2] = 1.0
        return r, ja, jb

    def _gauge_terms(self, poses: np.ndarray, slot: Dict[int, int]):
        """Residual, Jacobian and slot for the gauge prior factor."""
        gid = self._gauge_id
        if gid is None or gid not in slot:
            gid = min(slot)
            self._gauge_id = gid
            self._gauge_pose = self._keyframes[gid].pose
        gp = self._gauge_pose
        s = slot[gid]
        p = Pose2(*poses[s])
        r_pose = between(gp, p)
        r = r_pose.as_array()
        j = np.zeros((3, 3))
        j[:2, :2] = rotation(r_pose.theta)
        j[2, 2] = 1.0
        return r, j, s

    def _build_normal_equations(self, poses: np.ndarray, ia, ib, meas, info, slot):
        n = len(poses)
        dim = 3 * n
        r, ja, jb = self._batched_linearize(poses, ia, ib, meas)
        cost = float(np.einsum("mi,mij,mj->", r, info, r))

        info_ja = np.einsum("mij,mjk->mik", info, ja)
        info_jb = np.einsum("mij,mjk->mik", info, jb)
        haa = np.einsum("mji,mjk->mik", ja, info_ja)
        hab = np.einsum("mji,mjk->mik", ja, info_jb)
        hbb = np.einsum("mji,mjk->mik", jb, info_jb)
        ga = np.einsum("mji,mj->mi", ja, np.einsum("mij,mj->mi", info, r))
        gb = np.einsum("mji,mj->mi", jb, np.einsum("mij,mj->mi", info, r))

        offs = np.arange(3)
        rows_a = (3 * ia)[:, None] + offs[None, :]
        rows_b = (3 * ib)[:, None] + offs[None, :]

        g = np.zeros(dim)
        np.add.at(g, rows_a, ga)
        np.add.at(g, rows_b, gb)

        # Gauge prior
        rg, jg, gs = self._gauge_terms(poses, slot)
        lam = GAUGE_PRIOR_INFO
        hg = jg.T @ (lam * jg)
        cost += float(lam * rg @ rg)
        g[3 * gs:3 * gs + 3] += jg.T @ (lam * rg)

        def block_indices(rows, cols):
            rr = np.repeat(rows[:, :, None], 3, axis=2)
            cc = np.repeat(cols[:, None, :], 3, axis=1)
            return rr, cc

        if n <= DENSE_VERTEX_LIMIT:
            h = np.zeros((dim, dim))
            for rows, cols, vals in ((rows_a, rows_a, haa),
                                     (rows_a, rows_b, hab),
                                     (rows_b, rows_a, np.transpose(hab, (0, 2, 1))),
                                     (rows_b, rows_b, hbb)):
                rr, cc = block_indices(rows, cols)
                np.add.at(h, (rr, cc), vals)
            h[3 * gs:3 * gs + 3, 3 * gs:3 * gs + 3] += hg
            return h, g, cost, True
        rr_list, cc_list, vv_list = [], [], []
        for rows, cols, vals in ((rows_a, rows_a, haa),
                                 (rows_a, rows_b, hab),
                                 (rows_b, rows_a, np.transpose(hab, (0, 2, 1))),
                                 (rows_b, rows_b, hbb)):
            rr, cc = block_indices(rows, cols)
            rr_list.append(rr.ravel())
            cc_list.append(cc.ravel())
            vv_list.append(vals.ravel())
        gi = 3 * gs + offs
        rr, cc = np.meshgrid(gi, gi, indexing="ij")
        rr_list.append(rr.ravel())
        cc_list.append(cc.ravel())
        vv_list.append(hg.ravel())
        h = scipy.sparse.coo_matrix(
            (np.concatenate(vv_list), (np.concatenate(rr_list), np.concatenate(cc_list))),
            shape=(dim, dim)).tocsc()
        return h, g, cost, False

    # -- solving ------------------------------------------------------------

    @staticmethod
    def _dense_factorization(h: np.ndarray, iteration: int):
        try:
            return ("dense", scipy.linalg.cho_factor(h, lower=False))
        except scipy.linalg.LinAlgError as e:
            raise CholeskyFailureError(iteration, str(e)) from None

    @staticmethod
    def _banded_factorization(h_csc, iteration: int):
        """Reverse Cuthill-McKee reordering followed by banded Cholesky."""
        n = h_csc.shape[0]
        perm = reverse_cuthill_mckee(h_csc.tocsr(), symmetric_mode=True)
        hp = h_csc[perm][:, perm].tocoo()
        bw = int(np.max(np.abs(hp.row - hp.col))) if hp.nnz else 0
        ab = np.zeros((bw + 1, n))
        mask = hp.row <= hp.col
        rows, cols, vals = hp.row[mask], hp.col[mask], hp.data[mask]
        ab[bw + rows - cols, cols] = vals
        try:
            cb = scipy.linalg.cholesky_banded(ab, lower=False)
        except scipy.linalg.LinAlgError as e:
            raise CholeskyFailureError(iteration, str(e)) from None
        return ("banded", (cb, perm))

    @staticmethod
    def _solve_with(factorization, b: np.ndarray) -> np.ndarray:
        kind, data = factorization
        if kind == "dense":
            return scipy.linalg.cho_solve(data, b)
        cb, perm = data
        bp = b[perm] if b.ndim == 1 else b[perm, :]
        xp = scipy.linalg.cho_solve_banded((cb, False), bp)
        x = np.empty_like(xp)
        if b.ndim == 1:
            x[perm] = xp
        else:
            x[perm, :] = xp
        return x

    @staticmethod
    def _apply_step(poses: np.ndarray, delta: np.ndarray) -> np.ndarray:
        d = delta.reshape(-1, 3)
        c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
        out = np.empty_like(poses)
        out[:, 0] = poses[:, 0] + c * d[:, 0] - s * d[:, 1]
        out[:, 1] = poses[:, 1] + s * d[:, 0] + c * d[:, 1]
        th = poses[:, 2] + d[:, 2]
        out[:, 2] = np.arctan2(np.sin(th), np.cos(th))
        return out

    def _cost_only(self, poses: np.ndarray, ia, ib, meas, info, slot) -> float:
        r, _, _ = self._batched_linearize(poses, ia, ib, meas)
        cost = float(np.einsum("mi,mij,mj->", r, info, r))
        rg, _, _ = self._gauge_terms(poses, slot)
        return cost + float(GAUGE_PRIOR_INFO * rg @ rg)

    def optimize(self, max_iterations: int = 20,
                 convergence_delta: float = 1e-6) -> OptimizeReport:
        """Gauss-Newton with Cholesky solves and step halving on cost increase.

        Terminates when the max update component drops below
        convergence_delta or after max_iterations. Never leaves the graph
        with a cost above the initial one.
        """
        t0 = time.perf_counter()
        if max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self._factors:
            return OptimizeReport(0, 0.0, 0.0, time.perf_counter() - t0)

        ia, ib, meas, info, slot = self._factor_arrays()
        ids = self.ids()
        poses = np.array([self._keyframes[v].pose.as_array() for v in ids])
        initial_cost = self._cost_only(poses, ia, ib, meas, info, slot)

        cost = initial_cost
        iterations = 0
        for it in range(1, max_iterations + 1):
            iterations = it
            h, g, cost, dense = self._build_normal_equations(poses, ia, ib, meas, info, slot)
            fact = (self._dense_factorization(h, it) if dense
                    else self._banded_factorization(h, it))
            delta = self._solve_with(fact, -g)

            step = 1.0
            new_poses = self._apply_step(poses, delta)
            new_cost = self._cost_only(new_poses, ia, ib, meas, info, slot)
            halvings = 0
            while new_cost > cost * (1 + 1e-12) and halvings < 8:
                step *= 0.5
                halvings += 1
                new_poses = self._apply_step(poses, step * delta)
                new_cost = self._cost_only(new_poses, ia, ib, meas, info, slot)
            if new_cost > cost * (1 + 1e-12):
                break
            poses = new_poses
            cost = new_cost
            if np.max(np.abs(step * delta)) < convergence_delta:
                break

        for i, v in enumerate(ids):
            self._keyframes[v].pose = Pose2(*poses[i])
        self._touch()
        final_cost = min(cost, initial_cost)
        return OptimizeReport(iterations, initial_cost, final_cost,
                              time.perf_counter() - t0)

    # -- covariance ---------------------------------------------------------

    def _information_factorization(self):
        """Factorize the gauge-fixed information matrix at current poses.

        Cached per graph version since covariance queries between mutations
        see the same system.
        """
        if self._solver_cache is not None and self._solver_cache[0] == self._version:
            return self._solver_cache[1], self._solver_cache[2]
        ia, ib, meas, info, slot = self._factor_arrays()
        ids = self.ids()
        poses = np.array([self._keyframes[v].pose.as_array() for v in ids])
        h, _, _, dense = self._build_normal_equations(poses, ia, ib, meas, info, slot)
        fact = (self._dense_factorization(h, 0) if dense
                else self._banded_factorization(h, 0))
        self._solver_cache = (self._version, fact, slot)
        return fact, slot

    def marginal_covariance(self, a: int, b: int) -> np.ndarray:
        """Joint 6x6 covariance of keyframes (a, b) from the gauge-fixed
        information matrix at the current linearization."""
        if a not in self._keyframes or b not in self._keyframes:
            raise UnknownVertexError(f"no keyframe {a if a not in self._keyframes else b}")
        if not self._factors and len(self._keyframes) > 1:
            raise PoseGraphError("graph has no factors")
        fact, slot = self._information_factorization()
        dim = 3 * len(slot)
        cols = np.zeros((dim, 6))
        idx = [3 * slot[a] + k for k in range(3)] + [3 * slot[b] + k for k in range(3)]
        for j, i in enumerate(idx):
            cols[i, j] = 1.0
        x = self._solve_with(fact, cols)
        cov = x[idx, :]
        return 0.5 * (cov + cov.T)

    def relative_covariance(self, robot: int, target: int) -> np.ndarray:
        """3x3 covariance of between(robot, target) at the current estimate."""
        cov_joint = self.marginal_covariance(robot, target)
        pa = self.pose(robot)
        pb = self.pose(target)
        _, ja, jb = error_jacobians(Pose2.identity(), pa, pb)
        j = np.hstack([ja, jb])
        cov_rel = j @ cov_joint @ j.T
        return 0.5 * (cov_rel + cov_rel.T)

    def uncertainty_reduction(self, robot: int, target: int,
                              closure_information=None) -> float:
        """Expected uncertainty ratio of a hypothetical loop closure.

        Ratio of the determinant of the current relative-pose covariance
        between robot and target to the determinant after fusing a closure
        with the given information. Always >= 1.
        """
        if closure_information is None:
            closure_information = DEFAULT_CLOSURE_INFORMATION
        lam = check_information(closure_information)
        return uncertainty_ratio(self.relative_covariance(robot, target), lam)

    def uncertainty_reductions(self, robot: int, targets: Sequence[int],
                               closure_information=None) -> List[float]:
        """uncertainty_reduction against many targets in one solve.

        The covariance columns of the robot and every target are pulled
        out of the factorized system in a single multi-RHS solve; direct
        solvers treat columns independently, so each returned value is
        bitwise equal to the per-pair call.
        """
        if closure_information is None:
            closure_information = DEFAULT_CLOSURE_INFORMATION
        lam = check_information(closure_information)
        if not targets:
            return []
        for v in (robot, *targets):
            if v not in self._keyframes:
                raise UnknownVertexError(f"no keyframe {v}")
        if not self._factors and len(self._keyframes) > 1:
            raise PoseGraphError("graph has no factors")
        fact, slot = self._information_factorization()
        order: List[int] = []
        offset: Dict[int, int] = {}
        for v in (robot, *targets):
            if v not in offset:
                offset[v] = 3 * len(order)
                order.append(v)
        dim = 3 * len(slot)
        rhs = np.zeros((dim, 3 * len(order)))
        for j, v in enumerate(order):
            for k in range(3):
                rhs[3 * slot[v] + k, 3 * j + k] = 1.0
        x = self._solve_with(fact, rhs)
        pa = self.pose(robot)
        rows_a = [3 * slot[robot] + k for k in range(3)]
        out = []
        for target in targets:
            rows = rows_a + [3 * slot[target] + k for k in range(3)]
            cols = ([offset[robot] + k for k in range(3)]
                    + [offset[target] + k for k in range(3)])
            cov = x[np.ix_(rows, cols)]
            cov = 0.5 * (cov + cov.T)
            _, ja, jb = error_jacobians(Pose2.identity(), pa,
                                        self.pose(target))
            j = np.hstack([ja, jb])
            cov_rel = j @ cov @ j.T
            cov_rel = 0.5 * (cov_rel + cov_rel.T)
            out.append(uncertainty_ratio(cov_rel, lam))
        return out

    # -- export -------------------------------------------------------------

    def dump(self) -> str:
        """Plain-text graph dump, 9 significant digits per float."""
        lines = []
        for v in self.ids():
            p = self._keyframes[v].pose
            lines.append(f"VERTEX_SE2 {v} {p.x:.9g} {p.y:.9g} {p.theta:.9g}")
        for f in self._factors:
            m = f.measurement
            i = f.information
            lines.append(
                "EDGE_SE2 {} {} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g} {:.9g}"
                .format(f.from_id, f.to_id, m.x, m.y, m.theta,
                        i[0, 0], i[0, 1], i[0, 2], i[1, 1], i[1, 2], i[2, 2]))
        return "\n".join(lines) + "\n"
