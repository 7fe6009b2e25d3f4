"""Dense 2D/3D voxel grids and the raster primitives everything else builds on.

Conventions
-----------
* Axis order is (z, y, x) with x fastest; arrays are C-contiguous.
* 2D data is carried as a rank-2 grid whose z extent is 1, so a single 3D
  code path serves both ranks (a length-1 axis neutralises every
  neighbourhood operation along it).
* Spacing is physical voxel size in mm per axis, strictly positive.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyMask, InternalError, ShapeMismatch

__all__ = [
    "VoxelGrid",
    "BinaryMask",
    "LabelVolume",
    "ProbVolume",
    "Connectivity",
    "connected_components",
    "distance_transform",
    "softmax",
]


def _canonical_array(data, rank: int) -> np.ndarray:
    """Coerce user input (2D or 3D array) to canonical (z, y, x) form."""
    arr = np.asarray(data)
    if rank not in (2, 3):
        raise ValueError(f"rank must be 2 or 3, got {rank}")
    if arr.ndim == 2:
        if rank != 2:
            raise ValueError("2D data requires rank 2")
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ValueError(f"expected 2D or 3D data, got ndim={arr.ndim}")
    if rank == 2 and arr.shape[0] != 1:
        raise ValueError("rank-2 grids must have z extent 1")
    return np.ascontiguousarray(arr)


def _canonical_spacing(spacing, rank: int) -> tuple:
    if spacing is None:
        spacing = (1.0, 1.0, 1.0)
    sp = tuple(float(s) for s in spacing)
    if len(sp) == 2 and rank == 2:
        sp = (1.0,) + sp
    if len(sp) != 3:
        raise ValueError("spacing must have one entry per (z, y, x) axis")
    if not all(np.isfinite(s) and s > 0 for s in sp):
        raise ValueError(f"spacing must be positive and finite, got {sp}")
    return sp


@dataclass
class VoxelGrid:
    """Dense scalar grid with physical spacing.

    Attributes:
        data: (Z, Y, X) array, C-order (x fastest).
        spacing: per-axis physical size in mm, (z, y, x).
        rank: 2 or 3; rank-2 grids have Z == 1.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    rank: int = 3

    def __post_init__(self):
        self.data = _canonical_array(self.data, self.rank)
        self.spacing = _canonical_spacing(self.spacing, self.rank)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def to_array(self) -> np.ndarray:
        """Return the data with rank-2 grids squeezed back to 2D."""
        return self.data[0] if self.rank == 2 else self.data

    def like(self, data: np.ndarray) -> "VoxelGrid":
        """New grid with the same geometry and different data."""
        return VoxelGrid(data, self.spacing, self.rank)


@dataclass
class BinaryMask:
    """VoxelGrid whose voxels are exactly 0 or 1 (stored uint8)."""

    grid: VoxelGrid

    def __post_init__(self):
        data = self.grid.data
        if data.dtype == np.bool_:
            data = data.astype(np.uint8)
        if not np.isin(data, (0, 1)).all():
            raise ValueError("binary mask voxels must be exactly 0 or 1")
        self.grid = VoxelGrid(data.astype(np.uint8, copy=False), self.grid.spacing, self.grid.rank)

    @classmethod
    def from_array(cls, data, spacing=None, rank=None) -> "BinaryMask":
        arr = np.asarray(data)
        if rank is None:
            rank = 2 if arr.ndim == 2 else 3
        return cls(VoxelGrid(arr != 0, spacing=_canonical_spacing(spacing, rank), rank=rank))

    @property
    def data(self) -> np.ndarray:
        return self.grid.data

    @property
    def bool(self) -> np.ndarray:
        return self.grid.data.astype(np.bool_)

    @property
    def shape(self) -> tuple:
        return self.grid.shape

    @property
    def spacing(self) -> tuple:
        return self.grid.spacing

    @property
    def rank(self) -> int:
        return self.grid.rank

    def count(self) -> int:
        return int(self.grid.data.sum())


@dataclass
class LabelVolume:
    """VoxelGrid of non-negative integer labels; 0 is background."""

    grid: VoxelGrid

    def __post_init__(self):
        data = self.grid.data
        if not np.issubdtype(data.dtype, np.integer):
            if not np.array_equal(data, np.round(data)):
                raise ValueError("labels must be integers")
            data = data.astype(np.int32)
        if data.min(initial=0) < 0:
            raise ValueError("labels must be >= 0")
        self.grid = VoxelGrid(data.astype(np.int32, copy=False), self.grid.spacing, self.grid.rank)

    @classmethod
    def from_array(cls, data, spacing=None, rank=None) -> "LabelVolume":
        arr = np.asarray(data)
        if rank is None:
            rank = 2 if arr.ndim == 2 else 3
        return cls(VoxelGrid(arr, spacing=_canonical_spacing(spacing, rank), rank=rank))

    @property
    def data(self) -> np.ndarray:
        return self.grid.data

    @property
    def shape(self) -> tuple:
        return self.grid.shape

    def labels(self) -> np.ndarray:
        """Sorted distinct labels, background included when present."""
        return np.unique(self.grid.data)


@dataclass
class ProbVolume:
    """Per-channel grid of logits or probabilities, channels first.

    data has shape (C, Z, Y, X) with C >= 2.  When ``kind`` is
    "probabilities" each voxel's channel vector must be a distribution
    (entries in [0, 1], sum within 1e-5 of 1).
    """

    data: np.ndarray
    kind: str = "logits"
    spacing: tuple = (1.0, 1.0, 1.0)
    rank: int = 3

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 3 and self.rank == 2:
            arr = arr[:, None, :, :]
        if arr.ndim != 4:
            raise ValueError(f"expected (C, Z, Y, X) data, got ndim={arr.ndim}")
        if arr.shape[0] < 2:
            raise ValueError("ProbVolume needs at least 2 channels")
        if not np.isfinite(arr).all():
            raise ValueError("ProbVolume values must be finite")
        if self.kind not in ("logits", "probabilities"):
            raise ValueError(f"bad kind {self.kind!r}")
        if self.kind == "probabilities":
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
            sums = arr.sum(axis=0)
            if np.abs(sums - 1.0).max() > 1e-5:
                raise ValueError("per-voxel channel sums must be within 1e-5 of 1")
        self.data = np.ascontiguousarray(arr)
        self.spacing = _canonical_spacing(self.spacing, self.rank)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple:
        """Spatial shape (Z, Y, X)."""
        return self.data.shape[1:]

    @property
    def is_probabilities(self) -> bool:
        return self.kind == "probabilities"


_CONN_NEIGHBOURS = {"face": 1, "face-edge": 2, "full": 3}


@dataclass(frozen=True)
class Connectivity:
    """Voxel adjacency convention: face (6/4), face+edge (18), full (26/8)."""

    kind: str = "full"

    def __post_init__(self):
        if self.kind not in _CONN_NEIGHBOURS:
            raise ValueError(f"unknown connectivity {self.kind!r}")

    def validate_rank(self, rank: int) -> None:
        if self.kind == "face-edge" and rank != 3:
            raise ValueError("face-edge (18) connectivity only exists in 3D")

    def structure(self) -> np.ndarray:
        """3x3x3 footprint for scipy labeling; degenerates correctly on z=1 grids."""
        return ndimage.generate_binary_structure(3, _CONN_NEIGHBOURS[self.kind])


def connected_components(mask: BinaryMask, conn: Connectivity = Connectivity("full")):
    """Label connected foreground components.

    Labels are 1..count, assigned by first-touch raster (z, y, x) scan
    order so results are reproducible across runs; background stays 0.

    Returns:
        (LabelVolume, count)
    """
    conn.validate_rank(mask.rank)
    raw, n = ndimage.label(mask.data, structure=conn.structure())
    if n > 0:
        raw = _relabel_by_first_touch(raw, n)
    vol = LabelVolume(mask.grid.like(raw.astype(np.int32)))
    return vol, int(n)


def _relabel_by_first_touch(labels: np.ndarray, n: int) -> np.ndarray:
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    first = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[nz], nz)
    order = np.argsort(first[1:], kind="stable")  # old label-1 -> rank
    lut = np.zeros(n + 1, dtype=labels.dtype)
    lut[order + 1] = np.arange(1, n + 1)
    return lut[labels]


def distance_transform(mask: BinaryMask) -> VoxelGrid:
    """Exact Euclidean distance (mm) from every voxel to the nearest foreground voxel.

    Anisotropic spacing is respected; values at foreground voxels are 0.

    Raises:
        EmptyMask: if the mask has no foreground.
    """
    if mask.count() == 0:
        raise EmptyMask("distance_transform requires a non-empty mask")
    dist = ndimage.distance_transform_edt(~mask.bool, sampling=mask.spacing)
    return mask.grid.like(np.asarray(dist, dtype=np.float64))


def softmax(pv: ProbVolume) -> ProbVolume:
    """Per-voxel channel softmax, stabilised by max subtraction.

    Accepts logits (or probabilities, which are renormalised through the
    same path) and returns a volume flagged as probabilities.
    """
    z = pv.data - pv.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=0, keepdims=True)
    if np.abs(out.sum(axis=0) - 1.0).max() > 1e-6:
        raise InternalError("softmax failed to normalise")
    return ProbVolume(out, kind="probabilities", spacing=pv.spacing, rank=pv.rank)


def require_same_shape(a, b, what: str = "operands") -> None:
    """Raise ShapeMismatch unless the two grids share a spatial shape."""
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeMismatch(f"{what} have shapes {tuple(a.shape)} vs {tuple(b.shape)}")
