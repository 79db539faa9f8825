"""Region keyframe removal with sparse factor recovery.

When a region is finished we keep a few anchor keyframes and remove the
rest. The information the removed keyframes carried about their Markov
blanket is condensed with a Schur complement, then re-expressed as a
small set of binary relative-pose factors whose implied Gaussian stays
as close as possible (in KL divergence) to the condensed target.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .pose_graph import Factor, FactorKind, PoseGraph, PoseGraphError, UnknownVertexError
from .se2 import Pose2, between, error_jacobians

EIGENVALUE_FLOOR = 1e-9
DEFAULT_ANCHORS_PER_REGION = 3
DEFAULT_DISTANCE_WEIGHT = 0.5


@dataclass(frozen=True)
class EliminationClique:
    """Vertices touched by a removal and the condensed information over
    the kept ones. Block order in target_information follows sorted(kept)."""
    removed: frozenset
    kept: Tuple[int, ...]
    target_information: np.ndarray

    def __post_init__(self) -> None:
        if self.removed & set(self.kept):
            raise PoseGraphError("removed and kept sets overlap")
        n = 3 * len(self.kept)
        if self.target_information.shape != (n, n):
            raise PoseGraphError("target information has wrong dimension")


@dataclass(frozen=True)
class RecoveredTopology:
    edges: Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class MarginalizationReport:
    region_id: int
    removed_count: int
    recovered_factor_count: int
    kld: float


def schur_complement(joint: np.ndarray, removed_dim: int) -> np.ndarray:
    """Condense the leading removed_dim rows/cols of a joint information
    matrix onto the trailing block: K - B^T A^-1 B."""
    a = joint[:removed_dim, :removed_dim]
    b = joint[:removed_dim, removed_dim:]
    k = joint[removed_dim:, removed_dim:]
    try:
        solved = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise PoseGraphError(f"removed block is singular: {exc}") from exc
    target = k - b.T @ solved
    return 0.5 * (target + target.T)


def select_anchors(graph: PoseGraph, region_id: int,
                   count: int = DEFAULT_ANCHORS_PER_REGION,
                   distance_weight: float = DEFAULT_DISTANCE_WEIGHT) -> Set[int]:
    """Pick keyframes of a region to survive marginalization.

    Greedy: the first anchor is the highest-feature keyframe; each next
    one maximizes feature_score + distance_weight * (distance to the
    nearest anchor picked so far). Ties resolve to the lowest id. The
    chosen keyframes are flagged is_anchor.
    """
    keyframes = graph.region_keyframes(region_id)
    if not keyframes:
        raise PoseGraphError(f"region {region_id} has no keyframes")
    if count >= len(keyframes):
        chosen = list(keyframes)
    else:
        chosen = [max(keyframes, key=lambda kf: (kf.feature_score, -kf.id))]
        remaining = [kf for kf in keyframes if kf.id != chosen[0].id]
        while len(chosen) < count:
            def score(kf):
                nearest = min(_pose_distance(kf.pose, other.pose)
                              for other in chosen)
                return kf.feature_score + distance_weight * nearest
            best = max(remaining, key=lambda kf: (score(kf), -kf.id))
            chosen.append(best)
            remaining.remove(best)
    for kf in chosen:
        kf.is_anchor = True
    return {kf.id for kf in chosen}


def _pose_distance(a: Pose2, b: Pose2) -> float:
    return float(np.hypot(a.x - b.x, a.y - b.y))


def schur_marginalize(graph: PoseGraph, removed: Iterable[int],
                      extra_kept: Iterable[int] = ()) -> EliminationClique:
    """Condense every factor touching the removed set onto its Markov
    blanket (plus extra_kept), linearized at the current poses."""
    removed = set(removed)
    if not removed:
        raise PoseGraphError("removed set must be non-empty")
    for v in removed:
        if not graph.has(v):
            raise UnknownVertexError(f"no keyframe {v}")
    touching = [f for f in graph.factors()
                if f.from_id in removed or f.to_id in removed]
    kept = set(extra_kept) - removed
    for v in kept:
        if not graph.has(v):
            raise UnknownVertexError(f"no keyframe {v}")
    for f in touching:
        kept.update(v for v in (f.from_id, f.to_id) if v not in removed)
    removed_order = sorted(removed)
    kept_order = sorted(kept)
    slot = {v: i for i, v in enumerate(removed_order + kept_order)}
    dim = 3 * len(slot)
    joint = np.zeros((dim, dim))
    for f in touching:
        r, ja, jb = error_jacobians(f.measurement, graph.pose(f.from_id),
                                    graph.pose(f.to_id))
        sa, sb = 3 * slot[f.from_id], 3 * slot[f.to_id]
        stacked = np.zeros((3, 6))
        stacked[:, :3] = ja
        stacked[:, 3:] = jb
        weighted = stacked.T @ f.information @ stacked
        for (bi, si) in ((0, sa), (1, sb)):
            for (bj, sj) in ((0, sa), (1, sb)):
                joint[si:si + 3, sj:sj + 3] += weighted[3 * bi:3 * bi + 3,
                                                        3 * bj:3 * bj + 3]
    nr = 3 * len(removed_order)
    # The removed block must be nonsingular: conditioned on the blanket,
    # the removed poses are fully determined through their factors.
    eigvals = np.linalg.eigvalsh(0.5 * (joint[:nr, :nr] + joint[:nr, :nr].T))
    scale = max(eigvals[-1], 1.0)
    if eigvals[0] <= 1e-12 * scale:
        raise PoseGraphError("removed keyframes are not fully constrained "
                             "by their factors")
    target = schur_complement(joint, nr)
    return EliminationClique(frozenset(removed), tuple(kept_order), target)


def _active_vertices(clique: EliminationClique) -> List[int]:
    """Kept vertices that actually received information. A removed spur
    hanging off a single kept vertex condenses to exactly zero, and a
    zero row would make every recovered factor touching it degenerate."""
    t = clique.target_information
    scale = max(np.max(np.abs(t)), 1.0)
    active = []
    for i, v in enumerate(clique.kept):
        if np.max(np.abs(t[3 * i:3 * i + 3, :])) > 1e-10 * scale:
            active.append(v)
    return active


def _spd_inverse(matrix: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric matrix expected to be positive definite,
    with a deterministic ridge if rounding left it slightly indefinite."""
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(abs(eigvals[-1]), 1.0)
    if eigvals[0] <= 1e-12 * scale:
        eigvals = np.maximum(eigvals, 1e-12 * scale)
    return eigvecs @ np.diag(1.0 / eigvals) @ eigvecs.T


def _clamp_spd(matrix: np.ndarray, floor: float = EIGENVALUE_FLOOR) -> np.ndarray:
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    return eigvecs @ np.diag(np.maximum(eigvals, floor)) @ eigvecs.T


def _edge_jacobian(poses: Dict[int, Pose2], order: List[int],
                   a: int, b: int) -> np.ndarray:
    """Row block of the implied-information Jacobian for one recovered
    edge, evaluated at the linearization poses (zero residual)."""
    _, ja, jb = error_jacobians(between(poses[a], poses[b]), poses[a], poses[b])
    row = np.zeros((3, 3 * len(order)))
    ia, ib = order.index(a), order.index(b)
    row[:, 3 * ia:3 * ia + 3] = ja
    row[:, 3 * ib:3 * ib + 3] = jb
    return row


def _implied_information(edge_rows: Sequence[np.ndarray],
                         informations: Sequence[np.ndarray]) -> np.ndarray:
    dim = edge_rows[0].shape[1]
    implied = np.zeros((dim, dim))
    for row, info in zip(edge_rows, informations):
        implied += row.T @ info @ row
    return 0.5 * (implied + implied.T)


def _drop_block(matrix: np.ndarray, index: int) -> np.ndarray:
    keep = [i for i in range(matrix.shape[0]) if not (3 * index <= i < 3 * index + 3)]
    return matrix[np.ix_(keep, keep)]


def _gauss_kld(target_reduced: np.ndarray, implied_reduced: np.ndarray,
               target_cov: Optional[np.ndarray] = None) -> float:
    """KL divergence from the target Gaussian to the implied one, both
    gauge-reduced and zero-mean."""
    d = target_reduced.shape[0]
    if target_cov is None:
        target_cov = _spd_inverse(target_reduced)
    sign_t, logdet_t = np.linalg.slogdet(target_reduced)
    sign_i, logdet_i = np.linalg.slogdet(implied_reduced)
    if sign_i <= 0 or sign_t <= 0:
        return float("inf")
    return float(0.5 * (np.trace(implied_reduced @ target_cov) - d
                        + logdet_t - logdet_i))


def _connected(vertices: Sequence[int], edges: Sequence[Tuple[int, int]]) -> bool:
    parent = {v: v for v in vertices}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for a, b in edges:
        parent[find(a)] = find(b)
    roots = {find(v) for v in vertices}
    return len(roots) <= 1


def chow_liu_topology(clique: EliminationClique) -> RecoveredTopology:
    """Maximum-mutual-information spanning tree over the informative kept
    vertices, grown with Prim's rule from the lowest id.

    Edges are ranked by the mutual information of the vertex pair
    conditioned on the remaining kept vertices, which reads directly off
    the 6x6 pair block of the (gauge-singular) target and is exactly
    zero for pairs with no direct coupling."""
    active = _active_vertices(clique)
    if len(active) < 2:
        return RecoveredTopology(())
    index = {v: i for i, v in enumerate(clique.kept)}
    t = clique.target_information

    def block(a, b):
        ia, ib = 3 * index[a], 3 * index[b]
        return t[ia:ia + 3, ib:ib + 3]

    def mutual_information(a, b):
        pair = np.block([[block(a, a), block(a, b)],
                         [block(b, a), block(b, b)]])
        sign, _ = np.linalg.slogdet(pair)
        if sign <= 0:
            # Pair block singular: the pair shares an unconstrained joint
            # mode with the rest, treat the coupling as maximal.
            return float("inf")
        cov = np.linalg.inv(pair)
        _, ld_a = np.linalg.slogdet(cov[:3, :3])
        _, ld_b = np.linalg.slogdet(cov[3:, 3:])
        _, ld_ab = np.linalg.slogdet(cov)
        return 0.5 * (ld_a + ld_b - ld_ab)

    in_tree = [active[0]]
    outside = list(active[1:])
    edges: List[Tuple[int, int]] = []
    while outside:
        best = None
        for u in in_tree:
            for w in outside:
                key = (-mutual_information(u, w), min(u, w), max(u, w))
                if best is None or key < best[0]:
                    best = (key, u, w)
        _, u, w = best
        edges.append((min(u, w), max(u, w)))
        in_tree.append(w)
        outside.remove(w)
    return RecoveredTopology(tuple(sorted(edges)))


def complete_topology(kept: Iterable[int]) -> RecoveredTopology:
    order = sorted(kept)
    edges = tuple((a, b) for i, a in enumerate(order) for b in order[i + 1:])
    return RecoveredTopology(edges)


def _least_squares_informations(edge_rows: List[np.ndarray],
                                target: np.ndarray) -> List[np.ndarray]:
    """Unconstrained fit of symmetric edge informations so the implied
    joint information matches the target in the Frobenius sense."""
    basis = []
    for i in range(3):
        for j in range(i, 3):
            b = np.zeros((3, 3))
            b[i, j] = b[j, i] = 1.0
            basis.append(b)
    columns = []
    for row in edge_rows:
        for b in basis:
            columns.append((row.T @ b @ row).ravel())
    design = np.array(columns).T
    solution, *_ = np.linalg.lstsq(design, target.ravel(), rcond=None)
    infos = []
    for e in range(len(edge_rows)):
        coeffs = solution[6 * e:6 * e + 6]
        m = np.zeros((3, 3))
        for c, b in zip(coeffs, basis):
            m += c * b
        infos.append(m)
    return infos


def _ipf_refine(edge_rows: List[np.ndarray], informations: List[np.ndarray],
                target_reduced: np.ndarray, target_cov: np.ndarray,
                max_sweeps: int = 30) -> List[np.ndarray]:
    """Coordinate descent on the edge informations: each update shifts an
    edge's information so the implied marginal of its relative-pose
    coordinates matches the target marginal exactly, then clamps to the
    positive-definite cone, halving the step whenever the divergence
    would grow."""
    infos = [_clamp_spd(m) for m in informations]
    marginals = [row @ target_cov @ row.T for row in edge_rows]
    marginal_infos = [_spd_inverse(0.5 * (m + m.T)) for m in marginals]
    implied = _implied_information(edge_rows, infos)
    kld = _gauss_kld(target_reduced, implied, target_cov)
    for _ in range(max_sweeps):
        sweep_start = kld
        for e in range(len(edge_rows)):
            row = edge_rows[e]
            current = row @ _spd_inverse(implied) @ row.T
            delta = marginal_infos[e] - _spd_inverse(0.5 * (current + current.T))
            step = 1.0
            for _ in range(7):
                trial = _clamp_spd(infos[e] + step * delta)
                trial_implied = implied + row.T @ (trial - infos[e]) @ row
                trial_kld = _gauss_kld(target_reduced, trial_implied, target_cov)
                if trial_kld <= kld + 1e-15:
                    infos[e] = trial
                    implied = 0.5 * (trial_implied + trial_implied.T)
                    kld = trial_kld
                    break
                step *= 0.5
        if sweep_start - kld < 1e-13:
            break
    return infos


def recover_factors(clique: EliminationClique, topology: RecoveredTopology,
                    poses: Dict[int, Pose2]) -> List[Factor]:
    """Express the clique's condensed information as relative-pose
    factors on the topology edges.

    Measurements are the relative poses at the linearization point. Edge
    informations minimize the divergence from the target: a spanning
    tree admits a closed form (each edge matches the target's marginal of
    its relative-pose coordinates); redundant topologies start from a
    least-squares fit and are refined by coordinate descent.
    """
    active = _active_vertices(clique)
    if len(active) < 2:
        return []
    active_set = set(active)
    edges = sorted({(min(a, b), max(a, b)) for a, b in topology.edges
                    if a in active_set and b in active_set and a != b})
    if not _connected(active, edges):
        raise PoseGraphError("recovered topology does not span the "
                             "informative kept vertices")
    index = {v: i for i, v in enumerate(clique.kept)}
    rows_full = [i for v in active for i in range(3 * index[v], 3 * index[v] + 3)]
    target_active = clique.target_information[np.ix_(rows_full, rows_full)]
    target_reduced = _drop_block(target_active, 0)
    target_cov = _spd_inverse(target_reduced)

    edge_rows = []
    for a, b in edges:
        row = _edge_jacobian(poses, active, a, b)
        edge_rows.append(_drop_block_columns(row))
    if len(edges) == len(active) - 1:
        # Tree: the implied distribution factorizes over the edge
        # coordinates, so the divergence minimizer matches marginals.
        infos = []
        for row in edge_rows:
            marginal = row @ target_cov @ row.T
            infos.append(_clamp_spd(_spd_inverse(0.5 * (marginal + marginal.T))))
    else:
        infos = _least_squares_informations(edge_rows, target_reduced)
        infos = _ipf_refine(edge_rows, infos, target_reduced, target_cov)
    factors = []
    for (a, b), info in zip(edges, infos):
        info = _clamp_spd(info)
        factors.append(Factor(a, b, between(poses[a], poses[b]), info,
                              FactorKind.RECOVERED))
    return factors


def _drop_block_columns(row: np.ndarray) -> np.ndarray:
    return row[:, 3:]


def recovery_divergence(clique: EliminationClique, factors: Sequence[Factor],
                        poses: Dict[int, Pose2]) -> float:
    """Achieved KL divergence from the condensed target to the Gaussian
    implied by the recovered factors, gauge-reduced over the informative
    kept vertices."""
    active = _active_vertices(clique)
    if len(active) < 2:
        return 0.0
    index = {v: i for i, v in enumerate(clique.kept)}
    rows_full = [i for v in active for i in range(3 * index[v], 3 * index[v] + 3)]
    target_active = clique.target_information[np.ix_(rows_full, rows_full)]
    target_reduced = _drop_block(target_active, 0)
    edge_rows = [_drop_block_columns(_edge_jacobian(poses, active, f.from_id, f.to_id))
                 for f in factors]
    if not edge_rows:
        return float("inf")
    implied = _implied_information(edge_rows, [f.information for f in factors])
    return _gauss_kld(target_reduced, implied)


def marginalize_region(graph: PoseGraph, region_id: int,
                       anchors_per_region: int = DEFAULT_ANCHORS_PER_REGION,
                       topology: str = "tree",
                       distance_weight: float = DEFAULT_DISTANCE_WEIGHT) -> MarginalizationReport:
    """Remove a completed region's non-anchor keyframes and insert
    recovered factors over the survivors.

    The graph is only mutated after factor recovery succeeds, so a
    failure leaves it untouched. Calling again on the same region is a
    no-op because only anchors remain.
    """
    if topology not in ("tree", "complete"):
        raise ValueError(f"unknown topology {topology!r}")
    anchors = select_anchors(graph, region_id, anchors_per_region, distance_weight)
    removed = {kf.id for kf in graph.region_keyframes(region_id)
               if kf.id not in anchors}
    if not removed:
        return MarginalizationReport(region_id, 0, 0, 0.0)
    if graph.latest in removed:
        raise PoseGraphError("refusing to remove the latest keyframe; "
                             "close the region after leaving it")
    clique = schur_marginalize(graph, removed, extra_kept=anchors)
    poses = {v: graph.pose(v) for v in clique.kept}
    if topology == "tree":
        topo = chow_liu_topology(clique)
    else:
        topo = complete_topology(clique.kept)
    try:
        factors = recover_factors(clique, topo, poses)
    except PoseGraphError:
        if topology != "tree":
            raise
        # Fall back to the redundant topology before giving up.
        factors = recover_factors(clique, complete_topology(clique.kept), poses)
    kld = recovery_divergence(clique, factors, poses)
    graph.remove_keyframe_set(removed)
    for f in factors:
        graph.insert_factor(f)
    return MarginalizationReport(region_id, len(removed), len(factors), kld)
