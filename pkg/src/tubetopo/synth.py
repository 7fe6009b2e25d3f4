"""Deterministic synthetic tubular networks with known topology.

Fixtures are branching tubes rasterised by sweeping a Euclidean ball
along integer digital centerlines, with recorded centerlines, tip
endpoints, and optional cuts that fragment the network at known
midpoints.  They serve as ground-truth oracles: the cut midpoints are
exactly the discontinuities the mining pipeline is expected to find.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidCut, SpecInfeasible
from .grid import BinaryMask, Connectivity, VoxelGrid, connected_components
from .metrics import BettiTriple, betti
from .rng import named_stream
from .skeleton import EndpointSet

__all__ = [
    "TubeNetworkSpec",
    "CutSpec",
    "Branch",
    "Fixture",
    "generate",
    "apply_cuts",
    "make_cut_fixture",
]

_MAX_ATTEMPTS = 800


@dataclass(frozen=True)
class TubeNetworkSpec:
    """Tube-network parameters.

    Branches grow along a dominant grid axis with a bounded
    perpendicular drift (slope <= max_slope) and integer radii: the
    morphological skeleton collapses such tubes to clean centerlines,
    whereas steep diagonals or half-integer radii leave thick
    staircase artifacts without usable endpoints.  curvature_jitter is
    the per-step random drift of the perpendicular slope.
    """

    rng_seed: int = 0
    shape: tuple = (96, 96, 96)
    n_branches: int = 4
    radius_range: tuple = (2, 3)
    min_branch_len: float = 24.0
    curvature_jitter: float = 0.02
    max_slope: float = 0.12
    rank: int = 3

    def __post_init__(self):
        if self.radius_range[0] < 1:
            raise ValueError("radius must be >= 1")
        if self.n_branches < 1:
            raise ValueError("need at least one branch")
        margin = self.radius_range[1] + 2
        usable = [s - 2 * margin for s in self.shape[-2:]]
        if min(usable) < self.min_branch_len / 2:
            raise SpecInfeasible("shape too small for the requested branches")


@dataclass(frozen=True)
class CutSpec:
    """Cut positions as (branch id, arc parameter t in (0,1)) plus gap length."""

    positions: tuple
    gap: float = 5.0

    def __post_init__(self):
        if self.gap < 1:
            raise ValueError("gap must be >= 1 voxel")
        for bid, t in self.positions:
            if not 0.0 < t < 1.0:
                raise ValueError(f"cut parameter t={t} outside (0, 1) on branch {bid}")


@dataclass
class Branch:
    points: np.ndarray  # (M, 3) integer-valued polyline, (z, y, x)
    radius: int
    parent: int  # -1 for the root branch
    attach_arc: float  # arc position on the parent
    axis: int = 2  # dominant growth axis
    child_arcs: list = field(default_factory=list)
    jog_arcs: np.ndarray = field(default_factory=lambda: np.zeros(0))  # perpendicular unit steps

    @property
    def arcs(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.arcs[-1])

    def point_at(self, arc: float) -> np.ndarray:
        arcs = self.arcs
        arc = min(max(arc, 0.0), arcs[-1])
        i = int(np.searchsorted(arcs, arc, side="right")) - 1
        i = min(i, len(arcs) - 2)
        span = arcs[i + 1] - arcs[i]
        frac = 0.0 if span == 0 else (arc - arcs[i]) / span
        return self.points[i] * (1 - frac) + self.points[i + 1] * frac


@dataclass
class Fixture:
    gt_mask: BinaryMask
    frag_mask: BinaryMask
    branches: list
    centerlines: list
    true_endpoints: EndpointSet
    cut_midpoints: np.ndarray
    betti_gt: BettiTriple
    components_gt: int
    components_frag: int
    separating_cuts: int
    spec: TubeNetworkSpec


def _ball_offsets(radius: float, rank: int) -> np.ndarray:
    r = int(np.floor(radius))
    axis = np.arange(-r, r + 1)
    zz, yy, xx = np.meshgrid(axis if rank == 3 else np.array([0]), axis, axis, indexing="ij")
    keep = zz * zz + yy * yy + xx * xx <= radius * radius
    return np.stack([zz[keep], yy[keep], xx[keep]], axis=1)


def _disk_offsets(radius: float, axis: int, rank: int) -> np.ndarray:
    """Offsets of a flat disk perpendicular to `axis` (thickness 1)."""
    ball = _ball_offsets(radius, rank)
    return ball[ball[:, axis] == 0]


def _stamp(mask: np.ndarray, centers: np.ndarray, offsets: np.ndarray, value: bool) -> None:
    shape = np.asarray(mask.shape)
    vox = (centers[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    ok = ((vox >= 0) & (vox < shape)).all(axis=1)
    vox = vox[ok]
    mask[vox[:, 0], vox[:, 1], vox[:, 2]] = value


def _pick_axis(rng: np.random.Generator, rank: int, exclude: int | None) -> int:
    choices = [a for a in range(3) if (rank == 3 or a != 0) and a != exclude]
    return choices[int(rng.integers(len(choices)))]


class _Corridors:
    """Collision bookkeeping: every branch centerline with its clearance radius."""

    def __init__(self):
        self.centers: list[np.ndarray] = []
        self.radii: list[int] = []

    def add(self, points: np.ndarray, radius: int) -> None:
        self.centers.append(np.asarray(points, dtype=np.float64))
        self.radii.append(radius)

    def collides(self, p: np.ndarray, r_new: int, skip: int | None) -> bool:
        for j, (centers, r_j) in enumerate(zip(self.centers, self.radii)):
            if j == skip:
                continue
            # +3: one voxel of rounding slack per tube plus a >=2-voxel gap,
            # so stamped surfaces can never become 26-adjacent
            limit = r_j + r_new + 3.0
            d2 = ((centers - p) ** 2).sum(axis=1)
            if d2.min() <= limit * limit:
                return True
        return False


def _grow_digital(
    rng: np.random.Generator,
    start: np.ndarray,
    axis: int,
    radius: int,
    target_len: float,
    low: np.ndarray,
    high: np.ndarray,
    corridors: _Corridors,
    parent: int | None,
    escape_steps: float,
    spec: TubeNetworkSpec,
):
    """Integer digital centerline: one dominant-axis unit step per iteration.

    Perpendicular drift accumulates fractionally and emits a unit jog
    only past a hysteresis threshold, so the centerline is a staircase
    of long axis-aligned runs - exactly the geometry the morphological
    skeleton thins to a clean 1-voxel line.  Jogs are suppressed near
    the start (clean junction crossing) and the tail is trimmed back to
    the last jog so both tube ends stay axis-aligned.  Growth stops at
    the volume margin or when the tube would touch any branch other
    than its parent; the parent is exempt only for the first
    escape_steps steps.

    Returns (points, jog_step_indices).
    """
    sign = 1 if rng.random() < 0.5 else -1
    perp = [a for a in range(3) if a != axis and not (spec.rank == 2 and a == 0)]
    slope = {a: float(rng.uniform(-0.5, 0.5) * spec.max_slope) for a in perp}
    acc = {a: 0.0 for a in perp}
    pts = [start.astype(np.float64).copy()]
    jogs: list[int] = []
    guard = radius + 3
    for i in range(1, int(np.ceil(target_len)) + 1):
        nxt = pts[-1].copy()
        nxt[axis] += sign
        for a in perp:
            slope[a] = float(
                np.clip(slope[a] + rng.normal(scale=spec.curvature_jitter), -spec.max_slope, spec.max_slope)
            )
            acc[a] += slope[a]
            if i > guard:
                if acc[a] >= 0.75:
                    nxt[a] += 1.0
                    acc[a] -= 1.0
                    jogs.append(i)
                elif acc[a] <= -0.75:
                    nxt[a] -= 1.0
                    acc[a] += 1.0
                    jogs.append(i)
        if (nxt < low).any() or (nxt > high).any():
            break
        if corridors.collides(nxt, radius, skip=parent):
            break
        if parent is not None and i > escape_steps and corridors.collides(nxt, radius, skip=None):
            break
        pts.append(nxt)
    end = len(pts)
    while jogs and jogs[-1] >= end:
        jogs.pop()
    while jogs and end - 1 - jogs[-1] < guard:
        end = jogs.pop()
    return np.asarray(pts[:end]), [j for j in jogs if j < end]


def generate(spec: TubeNetworkSpec) -> Fixture:
    """Grow and rasterise a tube network; deterministic per seed.

    Branch 0 starts at a random interior point; every further branch
    sprouts from a random arc position on an existing branch along a
    different dominant axis, and collision checks keep branches from
    touching anything but their parent (the network stays a tree).
    The recorded tip endpoints are the free ends (the root counts as
    one).

    Raises:
        SpecInfeasible: if branches cannot be placed within margins
            after a bounded number of attempts.
    """
    rng = named_stream(spec.rng_seed, "synth")
    shape = np.asarray(spec.shape, dtype=np.int64)
    rank = spec.rank
    r_lo, r_hi = spec.radius_range
    margin = r_hi + 2.0
    low = np.full(3, margin)
    high = shape - 1 - margin
    if rank == 2:
        low[0] = 0.0
        high[0] = 0.0

    data = np.zeros(tuple(int(s) for s in shape), dtype=bool)
    corridors = _Corridors()
    branches: list[Branch] = []
    attempts = 0
    while len(branches) < spec.n_branches:
        attempts += 1
        if attempts > _MAX_ATTEMPTS:
            raise SpecInfeasible(
                f"placed {len(branches)}/{spec.n_branches} branches after {_MAX_ATTEMPTS} attempts"
            )
        radius = int(rng.integers(r_lo, r_hi + 1))
        if not branches:
            span = high - low
            start = np.rint(low + (0.25 + 0.5 * rng.random(3)) * span)
            if rank == 2:
                start[0] = 0.0
            parent, attach_arc = -1, 0.0
            axis = _pick_axis(rng, rank, exclude=None)
            escape_steps = 0.0
        else:
            parent = int(rng.integers(len(branches)))
            pb = branches[parent]
            attach_idx = int(rng.uniform(0.15, 0.85) * (len(pb.points) - 1))
            attach_arc = float(pb.arcs[attach_idx])
            # keep junctions apart so each stays a clean T crossing
            taken = [0.0, pb.length, *pb.child_arcs]
            if any(abs(attach_arc - a) < 2.0 * (pb.radius + 2) + 2.0 for a in taken):
                continue
            start = pb.points[attach_idx].copy()
            radius = min(radius, pb.radius)
            axis = _pick_axis(rng, rank, exclude=pb.axis)
            escape_steps = pb.radius + radius + 3.0
        target = float(rng.uniform(1.1 * spec.min_branch_len, 1.8 * spec.min_branch_len))
        pts, jog_idx = _grow_digital(
            rng, start, axis, radius, target, low, high,
            corridors, parent if parent >= 0 else None, escape_steps, spec,
        )
        if len(pts) - 1 < spec.min_branch_len:
            continue
        branch = Branch(points=pts, radius=radius, parent=parent, attach_arc=attach_arc, axis=axis)
        branch.jog_arcs = branch.arcs[np.asarray(jog_idx, dtype=np.int64)] if jog_idx else np.zeros(0)
        if parent >= 0:
            branches[parent].child_arcs.append(attach_arc)
        branches.append(branch)
        corridors.add(pts, radius)
        centers = pts.astype(np.int64)
        _stamp(data, centers, _ball_offsets(radius, rank), True)

    gt = BinaryMask(VoxelGrid(data.astype(np.uint8), rank=rank))
    centerlines = []
    tips = []
    for i, br in enumerate(branches):
        cl = br.points.astype(np.int64)
        centerlines.append(cl)
        if i == 0:
            tips.append(cl[0])
        tips.append(cl[-1])
    tip_arr = np.unique(np.asarray(tips, dtype=np.int64), axis=0)

    triple = betti(gt)
    _, n_comp = connected_components(gt, Connectivity("full"))
    return Fixture(
        gt_mask=gt,
        frag_mask=gt,
        branches=branches,
        centerlines=centerlines,
        true_endpoints=EndpointSet(tip_arr),
        cut_midpoints=np.zeros((0, 3), dtype=np.int64),
        betti_gt=triple,
        components_gt=n_comp,
        components_frag=n_comp,
        separating_cuts=0,
        spec=spec,
    )


def _junction_arcs(fix: Fixture, bid: int) -> list:
    br = fix.branches[bid]
    arcs = list(br.child_arcs)
    if br.parent >= 0:
        arcs.append(0.0)  # the branch's own attachment point
    return arcs


def apply_cuts(fix: Fixture, cuts: CutSpec) -> Fixture:
    """Remove gap windows along branch centerlines, recording the midpoints.

    Each cut clears flat disks (perpendicular to the branch's dominant
    axis, radius + 1.5 wide) at every centerline point whose arc
    distance to the cut midpoint is at most gap/2.  Flat mouths matter:
    spherical removal leaves funnel-shaped stumps whose skeletons fray
    into a crown of spurious endpoints.  Separation is re-verified by
    component counting and recorded (a cut whose gap swallows a whole
    short branch may remove rather than split it).

    Raises:
        InvalidCut: if a cut window overlaps a junction.
    """
    frag = fix.frag_mask.bool.copy()
    midpoints = [m for m in fix.cut_midpoints]
    for bid, t in cuts.positions:
        if not 0 <= bid < len(fix.branches):
            raise InvalidCut(f"branch {bid} does not exist")
        br = fix.branches[bid]
        s0 = t * br.length
        half = cuts.gap / 2.0
        r_clear = br.radius + 1.5
        clearance = half + r_clear
        for j_arc in _junction_arcs(fix, bid):
            if abs(s0 - j_arc) <= clearance:
                raise InvalidCut(f"cut at t={t:.3f} on branch {bid} overlaps a junction")
        arcs = br.arcs
        window = np.abs(arcs - s0) <= half
        pts = br.points[window]
        if len(pts) == 0:
            pts = br.point_at(s0)[None, :]
        # a window reaching a branch end must also clear the end cap,
        # which the stamped balls extend ~radius past the last center
        overhang = int(np.ceil(r_clear)) + 1
        if window[0] and len(br.points) > 1:
            step = br.points[0] - br.points[1]
            pts = np.concatenate([br.points[0] + step * np.arange(1, overhang)[:, None], pts])
        if window[-1] and len(br.points) > 1:
            step = br.points[-1] - br.points[-2]
            pts = np.concatenate([pts, br.points[-1] + step * np.arange(1, overhang)[:, None]])
        centers = np.rint(pts).astype(np.int64)
        _stamp(frag, centers, _disk_offsets(r_clear, br.axis, fix.spec.rank), False)
        midpoints.append(np.rint(br.point_at(s0)).astype(np.int64))

    frag_mask = BinaryMask(VoxelGrid(frag.astype(np.uint8), rank=fix.spec.rank))
    _, n_frag = connected_components(frag_mask, Connectivity("full"))
    return replace(
        fix,
        frag_mask=frag_mask,
        cut_midpoints=np.asarray(midpoints, dtype=np.int64).reshape(-1, 3),
        components_frag=n_frag,
        separating_cuts=n_frag - fix.components_gt,
    )


def make_cut_fixture(
    seed: int,
    shape=(96, 96, 96),
    n_cuts: int = 1,
    n_branches: int = 20,
    gap: float = 3.0,
    radius_range=(2, 3),
    rank: int = 3,
) -> Fixture:
    """Generate a fixture and apply n_cuts cuts that each split off a component.

    Cut positions are drawn from a seeded stream and validated: clear of
    junctions and branch ends, non-overlapping, and verified to raise
    the component count by exactly one each.  Deterministic per seed.
    """
    spec = TubeNetworkSpec(
        rng_seed=seed,
        shape=shape,
        n_branches=n_branches,
        radius_range=radius_range,
        min_branch_len=26.0,
        max_slope=0.10,
        rank=rank,
    )
    for round_ in range(12):
        try:
            base = generate(replace(spec, rng_seed=seed + 100_003 * round_))
        except SpecInfeasible:
            continue
        rng = named_stream(seed + 100_003 * round_, "synth-cuts")
        fix = base
        chosen: list[tuple[int, float]] = []
        failures = 0
        while len(chosen) < n_cuts and failures < 400:
            bid = int(rng.integers(len(fix.branches)))
            if any(b == bid for b, _ in chosen):
                failures += 1  # one cut per branch keeps stumps well apart
                continue
            br = fix.branches[bid]
            r_clear = br.radius + 1.5
            # mid-branch cuts keep stump-to-tip distances large and
            # similar, so the mean+std selection finds every stump
            end_clear = max(gap / 2.0 + r_clear + 3.0, 0.3 * br.length)
            if br.length <= 2 * end_clear:
                failures += 1
                continue
            s0 = float(rng.uniform(end_clear, br.length - end_clear))
            t = s0 / br.length
            # stump mouths must sit in straight runs: a jog inside the
            # removal window leaves a staircase cap without an endpoint
            if any(abs(s0 - j) <= gap / 2.0 + r_clear + 2.0 for j in br.jog_arcs):
                failures += 1
                continue
            try:
                trial = apply_cuts(fix, CutSpec(positions=((bid, t),), gap=gap))
            except InvalidCut:
                failures += 1
                continue
            if trial.components_frag != fix.components_frag + 1:
                failures += 1
                continue
            fix = trial
            chosen.append((bid, t))
        if len(chosen) == n_cuts:
            return fix
    raise SpecInfeasible(f"could not realise {n_cuts} separating cuts for seed {seed}")
