"""Endpoint-guided discontinuity mining.

Pipeline: skeletonise ground truth and prediction, detect endpoints on
both skeletons, match each endpoint set against the other by shortest
Euclidean distance, keep the endpoints whose distance exceeds the
dynamic threshold mean + std, merge both selections, thin them out with
DBSCAN, and dilate one representative per cluster into a cube window.
The union of the windows is the discontinuity mask.

All distances here live in index space (voxel units): the windows are
specified in voxels and the inputs are patches, so physical spacing
plays no role in the mining itself.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyQuery, OutOfBounds
from .grid import BinaryMask, ProbVolume, VoxelGrid, require_same_shape
from .rng import named_stream
from .skeleton import EndpointSet, ThinningParams, binarize, detect_endpoints, soft_skeleton

__all__ = [
    "EdmConfig",
    "DistanceSet",
    "CandidateSet",
    "ClusterLabeling",
    "DiscontinuityMask",
    "default_window",
    "min_endpoint_distances",
    "select_discontinuity_points",
    "cluster_candidates",
    "reduce_clusters",
    "build_mask",
    "mine",
]


def default_window(shape) -> tuple:
    """Default cube window: one-eighth of the patch shape per axis, floor, min 1."""
    return tuple(max(1, int(s) // 8) for s in shape)


@dataclass(frozen=True)
class EdmConfig:
    """Mining parameters.

    window and dbscan_eps may be left as None and are then derived from
    the patch shape at mining time (window = shape // 8 per axis,
    eps = max(window) / 2).
    """

    window: tuple | None = None
    dbscan_eps: float | None = None
    dbscan_min_pts: int = 1
    representative: str = "random"
    rng_seed: int = 0
    std_multiplier: float = 1.0

    def __post_init__(self):
        if self.window is not None:
            if any(int(w) < 1 for w in self.window):
                raise ValueError("window components must be >= 1")
            object.__setattr__(self, "window", tuple(int(w) for w in self.window))
        if self.dbscan_eps is not None and not self.dbscan_eps > 0:
            raise ValueError("dbscan_eps must be > 0")
        if self.dbscan_min_pts < 1:
            raise ValueError("dbscan_min_pts must be >= 1")
        if self.representative not in ("random", "medoid"):
            raise ValueError(f"unknown representative mode {self.representative!r}")

    def resolved(self, shape) -> "EdmConfig":
        """Fill derived defaults for a concrete patch shape."""
        window = self.window if self.window is not None else default_window(shape)
        eps = self.dbscan_eps if self.dbscan_eps is not None else max(window) / 2.0
        return replace(self, window=window, dbscan_eps=float(eps))


@dataclass
class DistanceSet:
    """Per-endpoint shortest distances to the reference endpoint set.

    all_spurious marks the degenerate case of an empty reference set, in
    which the distances are undefined and every query point counts as
    unmatched.
    """

    points: np.ndarray
    distances: np.ndarray
    all_spurious: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        self.distances = np.asarray(self.distances, dtype=np.float64).reshape(-1)
        if not self.all_spurious:
            if len(self.distances) != len(self.points):
                raise ValueError("one distance per point required")
            if not np.isfinite(self.distances).all() or (self.distances < 0).any():
                raise ValueError("distances must be finite and >= 0")

    @property
    def mean(self) -> float:
        return float(self.distances.mean())

    @property
    def std(self) -> float:
        """Population standard deviation (no Bessel correction)."""
        return float(self.distances.std(ddof=0))


@dataclass
class CandidateSet:
    """Selected discontinuity points from both sides plus the merged/reduced sets."""

    pred_side: np.ndarray
    gt_side: np.ndarray
    merged: np.ndarray
    reduced: np.ndarray

    def summary(self) -> dict:
        return {
            "pred_side": int(len(self.pred_side)),
            "gt_side": int(len(self.gt_side)),
            "merged": int(len(self.merged)),
            "reduced": int(len(self.reduced)),
        }


@dataclass
class ClusterLabeling:
    """DBSCAN output: per-point cluster id (-1 for noise) over sorted input points."""

    points: np.ndarray
    labels: np.ndarray
    noise: np.ndarray
    n_clusters: int


@dataclass
class DiscontinuityMask:
    """Union of cube windows around the seed points."""

    mask: BinaryMask
    seeds: np.ndarray


def _as_points(pts) -> np.ndarray:
    if isinstance(pts, EndpointSet):
        return pts.points
    arr = np.asarray(pts, dtype=np.int64)
    return arr.reshape(-1, 3) if arr.size else np.zeros((0, 3), dtype=np.int64)


def min_endpoint_distances(query, reference) -> DistanceSet:
    """Shortest Euclidean distance from each query endpoint to the reference set.

    Raises:
        EmptyQuery: if the query set is empty (the caller treats that
            side as contributing no candidates).
    """
    q = _as_points(query)
    r = _as_points(reference)
    if len(q) == 0:
        raise EmptyQuery("no query endpoints")
    if len(r) == 0:
        return DistanceSet(q, np.full(len(q), np.nan), all_spurious=True)
    diff = q[:, None, :].astype(np.float64) - r[None, :, :].astype(np.float64)
    d = np.sqrt((diff * diff).sum(axis=2)).min(axis=1)
    return DistanceSet(q, d)


def select_discontinuity_points(dset: DistanceSet, std_multiplier: float = 1.0) -> np.ndarray:
    """Endpoints whose distance strictly exceeds mean + std of the distance set.

    An all-spurious set (empty reference) selects every query point:
    each is unmatched by construction and the threshold is undefined.
    Singleton sets therefore select nothing (d == mean + 0).

    Selection carries a 1e-12 relative tie guard: distance sets whose
    maximum coincides with the threshold in exact arithmetic (any
    two-element set, any all-equal set) must not flip in or out of the
    selection under floating-point rescaling of the distances.
    """
    if dset.all_spurious:
        return dset.points.copy()
    tau = dset.mean + std_multiplier * dset.std
    return dset.points[dset.distances > tau * (1.0 + 1e-12)]


def _dedup_sorted(points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return points.reshape(0, 3)
    return np.unique(points, axis=0)  # unique also sorts lexicographically


def cluster_candidates(points, cfg: EdmConfig) -> ClusterLabeling:
    """Deterministic DBSCAN over candidate points (Euclidean, index space).

    Points are sorted lexicographically first; cluster ids follow scan
    order, so the labeling is reproducible.  With min_pts = 1 every
    point is a core point and the result equals the connected components
    of the eps-adjacency graph.
    """
    pts = _dedup_sorted(_as_points(points))
    if len(pts) == 0:
        raise ValueError("cluster_candidates requires a non-empty point set")
    if cfg.dbscan_eps is None:
        raise ValueError("cfg must be resolved (dbscan_eps set)")
    eps2 = float(cfg.dbscan_eps) ** 2
    fpts = pts.astype(np.float64)
    diff = fpts[:, None, :] - fpts[None, :, :]
    adj = (diff * diff).sum(axis=2) <= eps2  # includes self
    core = adj.sum(axis=1) >= cfg.dbscan_min_pts
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    queued = np.zeros(n, dtype=bool)
    cid = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        queue = [i]
        queued[i] = True
        labels[i] = cid
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            for k in np.flatnonzero(adj[j]):
                if labels[k] == -1:
                    labels[k] = cid
                if core[k] and not queued[k]:
                    queued[k] = True
                    queue.append(int(k))
        cid += 1
    return ClusterLabeling(points=pts, labels=labels, noise=labels == -1, n_clusters=cid)


def reduce_clusters(labeling: ClusterLabeling, cfg: EdmConfig, rng: np.random.Generator) -> np.ndarray:
    """One representative per cluster, sorted lexicographically.

    random mode draws a seeded-uniform member; medoid mode takes the
    point minimising the summed distance to its cluster (lexicographic
    tie-break).  Noise points (possible when min_pts > 1) are kept as
    singleton clusters so no candidate is silently dropped.
    """
    pts = labeling.points
    groups = [np.flatnonzero(labeling.labels == c) for c in range(labeling.n_clusters)]
    groups.extend([np.array([i]) for i in np.flatnonzero(labeling.noise)])
    reps = []
    for idx in groups:
        members = pts[idx]
        if len(members) == 1:
            reps.append(members[0])
        elif cfg.representative == "medoid":
            fm = members.astype(np.float64)
            d = np.sqrt(((fm[:, None, :] - fm[None, :, :]) ** 2).sum(axis=2)).sum(axis=1)
            best = np.flatnonzero(d == d.min())
            reps.append(members[best[0]])  # members are lex-sorted already
        else:
            reps.append(members[rng.integers(len(members))])
    out = np.asarray(reps, dtype=np.int64).reshape(-1, 3)
    return _dedup_sorted(out)


def build_mask(points, cfg: EdmConfig, shape, spacing=None, rank: int = 3) -> DiscontinuityMask:
    """Union of cube windows centred on the seed points, clipped to the grid.

    The window inequality |coord - seed| <= w/2 is taken literally on
    integer coordinates, so each axis spans 2*floor(w/2) + 1 voxels.
    """
    pts = _as_points(points)
    cfg = cfg.resolved(shape)
    shape = tuple(int(s) for s in shape)
    data = np.zeros(shape, dtype=np.uint8)
    half = [w // 2 for w in cfg.window]
    for p in pts:
        if (p < 0).any() or (p >= np.asarray(shape)).any():
            raise OutOfBounds(f"seed {tuple(int(v) for v in p)} outside grid {shape}")
        lo = [max(0, int(p[a]) - half[a]) for a in range(3)]
        hi = [min(shape[a] - 1, int(p[a]) + half[a]) for a in range(3)]
        data[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] = 1
    mask = BinaryMask(VoxelGrid(data, spacing=spacing or (1.0, 1.0, 1.0), rank=rank))
    return DiscontinuityMask(mask=mask, seeds=pts)


def _side_candidates(query: EndpointSet, reference: EndpointSet, cfg: EdmConfig) -> np.ndarray:
    if query.count == 0:
        return np.zeros((0, 3), dtype=np.int64)
    dset = min_endpoint_distances(query, reference)
    return select_discontinuity_points(dset, cfg.std_multiplier)


def mine(gt: BinaryMask, pred, cfg: EdmConfig = EdmConfig(), thinning: ThinningParams = ThinningParams()):
    """Run the full mining pipeline on a ground-truth / prediction pair.

    pred may be a BinaryMask or a ProbVolume (binarised first).  Returns
    (DiscontinuityMask, CandidateSet); both endpoint sets empty yields
    an empty mask.
    """
    if isinstance(pred, ProbVolume):
        pred = binarize(pred, thinning.binarize_threshold)
    require_same_shape(gt, pred, "gt and pred")
    cfg = cfg.resolved(gt.shape)

    gt_skel = soft_skeleton(gt, thinning)
    pred_skel = soft_skeleton(pred, thinning)
    gt_pts = detect_endpoints(gt_skel)
    pred_pts = detect_endpoints(pred_skel)

    pred_selected = _side_candidates(pred_pts, gt_pts, cfg)
    gt_selected = _side_candidates(gt_pts, pred_pts, cfg)
    merged = _dedup_sorted(np.concatenate([pred_selected, gt_selected], axis=0))

    if len(merged) == 0:
        empty = build_mask(merged, cfg, gt.shape, spacing=gt.spacing, rank=gt.rank)
        return empty, CandidateSet(pred_selected, gt_selected, merged, merged)

    labeling = cluster_candidates(merged, cfg)
    rng = named_stream(cfg.rng_seed, "edm")
    reduced = reduce_clusters(labeling, cfg, rng)
    dmask = build_mask(reduced, cfg, gt.shape, spacing=gt.spacing, rank=gt.rank)
    return dmask, CandidateSet(pred_selected, gt_selected, merged, reduced)
