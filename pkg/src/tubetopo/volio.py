"""File formats: NIfTI-1 volumes, PGM P5 images, channel-map and report JSON.

The NIfTI support is a deliberate subset: single-file "n+1" magic,
uint8/int16/float32 payloads, pixdim spacing, and scl_slope/scl_inter
scaling.  Orientation matrices (qform/sform) are IGNORED beyond pixdim:
every consumer in this toolkit is orientation-invariant, and spatial
semantics beyond voxel spacing are out of scope.  Gzip is handled
transparently by extension and magic-byte sniffing.

JSON reports are written through a canonical serializer (17 significant
digits, fixed key order) so reruns are byte-identical and every number
round-trips exactly.
"""

import gzip
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptHeader,
    DimensionalityMismatch,
    SchemaViolation,
    UnsupportedDatatype,
)
from .grid import BinaryMask, LabelVolume, ProbVolume, VoxelGrid
from .heads import ChannelMap

__all__ = [
    "VolumeMeta",
    "read_volume",
    "write_volume",
    "read_channelmap",
    "write_channelmap",
    "write_report",
    "read_report",
    "dumps_canonical",
]

_HDR_FMT = "<i10s18sihcc8h3fhhhh8ffffhccffffii80s24shh3f3f4f4f4f16s4s"
_HDR_SIZE = 348
_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_DTYPE_CODES = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4, np.dtype(np.float32): 16}
_MAGIC = b"n+1\x00"


@dataclass
class VolumeMeta:
    datatype: str
    ndim: int
    warnings: list


def _open_read(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _open_write(path):
    if str(path).endswith(".gz"):
        # fixed mtime so identical payloads produce identical files
        raw = open(path, "wb")
        gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
        gz.myfileobj = raw  # have GzipFile.close() close the underlying file
        return gz
    return open(path, "wb")


def read_volume(path, channels: bool = False, prob_kind: str = "logits"):
    """Read a .nii/.nii.gz/.pgm file.

    Returns (volume, VolumeMeta) where volume is a VoxelGrid, or a
    ProbVolume for 4D NIfTI when channels=True (the 4th axis is then the
    channel axis; without the flag 4D input is rejected as ambiguous).
    """
    p = str(path)
    if p.endswith(".pgm"):
        return _read_pgm(p)
    if not (p.endswith(".nii") or p.endswith(".nii.gz")):
        raise UnsupportedDatatype(f"unsupported extension on {p}")
    with _open_read(p) as fh:
        raw = fh.read(_HDR_SIZE)
        if len(raw) < _HDR_SIZE:
            raise CorruptHeader(f"{p}: truncated header ({len(raw)} bytes)")
        fields = struct.unpack(_HDR_FMT, raw)
        if fields[0] != _HDR_SIZE:
            raise CorruptHeader(f"{p}: sizeof_hdr = {fields[0]}, expected {_HDR_SIZE}")
        magic = fields[-1]
        if magic != _MAGIC:
            raise CorruptHeader(f"{p}: magic {magic!r} is not 'n+1'")
        dim = fields[7:15]
        datatype = fields[19]
        pixdim = fields[22:30]
        vox_offset = int(fields[30])
        scl_slope = fields[31]
        scl_inter = fields[32]

        if datatype not in _DTYPES:
            raise UnsupportedDatatype(f"{p}: NIfTI datatype code {datatype}")
        dtype = _DTYPES[datatype]
        ndim = dim[0]
        if ndim < 2 or ndim > 4:
            raise DimensionalityMismatch(f"{p}: {ndim}D volumes are not supported")
        extents = [int(d) for d in dim[1 : 1 + ndim]]
        if any(d < 1 for d in extents):
            raise CorruptHeader(f"{p}: non-positive dim entries {extents}")
        if ndim == 4 and not channels:
            raise DimensionalityMismatch(
                f"{p}: 4D input needs channels=True to be read as a channel volume"
            )

        warnings = []
        spacing_xyz = []
        for i in range(1, 4):
            s = float(pixdim[i])
            if not (np.isfinite(s) and s > 0):
                warnings.append(f"pixdim[{i}] = {s} replaced by 1.0")
                s = 1.0
            spacing_xyz.append(s)

        count = int(np.prod(extents, dtype=np.int64))
        nbytes = count * np.dtype(dtype).itemsize
        if vox_offset < _HDR_SIZE:
            raise CorruptHeader(f"{p}: vox_offset {vox_offset} inside the header")
        fh.read(vox_offset - _HDR_SIZE)
        payload = fh.read(nbytes)  # never allocate beyond the declared size
        if len(payload) != nbytes:
            raise CorruptHeader(f"{p}: payload has {len(payload)} of {nbytes} bytes")

    arr = np.frombuffer(payload, dtype=dtype).reshape(tuple(reversed(extents)))
    arr = np.array(arr)  # own the memory
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        arr = (arr.astype(np.float32) * np.float32(slope)) + np.float32(scl_inter)

    meta = VolumeMeta(datatype=np.dtype(dtype).name, ndim=ndim, warnings=warnings)
    nx, ny = extents[0], extents[1]
    nz = extents[2] if ndim >= 3 else 1
    if ndim == 4:
        spacing = (spacing_xyz[2], spacing_xyz[1], spacing_xyz[0])
        vol = ProbVolume(arr.reshape(extents[3], nz, ny, nx), kind=prob_kind, spacing=spacing)
        return vol, meta
    rank = 2 if ndim == 2 else 3
    spacing = (spacing_xyz[2] if rank == 3 else 1.0, spacing_xyz[1], spacing_xyz[0])
    grid = VoxelGrid(arr.reshape(nz, ny, nx), spacing=spacing, rank=rank)
    return grid, meta


def _coerce_payload(obj):
    if isinstance(obj, BinaryMask):
        return obj.grid, obj.grid.data.astype(np.uint8)
    if isinstance(obj, LabelVolume):
        data = obj.grid.data
        if data.max(initial=0) > np.iinfo(np.int16).max:
            raise UnsupportedDatatype("labels exceed the int16 range")
        return obj.grid, data.astype(np.int16)
    if isinstance(obj, VoxelGrid):
        data = obj.data
        if data.dtype in (np.uint8, np.int16, np.float32):
            return obj, data
        if np.issubdtype(data.dtype, np.floating):
            return obj, data.astype(np.float32)
        if np.issubdtype(data.dtype, np.integer):
            if data.min(initial=0) >= 0 and data.max(initial=0) <= 255:
                return obj, data.astype(np.uint8)
            if np.iinfo(np.int16).min <= data.min(initial=0) and data.max(initial=0) <= np.iinfo(np.int16).max:
                return obj, data.astype(np.int16)
        raise UnsupportedDatatype(f"cannot map dtype {data.dtype} onto the NIfTI subset")
    raise TypeError(f"cannot write {type(obj).__name__} as a volume")


def write_volume(obj, path) -> None:
    """Write a grid/mask/label/probability volume as .nii, .nii.gz, or .pgm."""
    p = str(path)
    if p.endswith(".pgm"):
        _write_pgm(obj, p)
        return
    if not (p.endswith(".nii") or p.endswith(".nii.gz")):
        raise UnsupportedDatatype(f"unsupported extension on {p}")

    if isinstance(obj, ProbVolume):
        data = obj.data.astype(np.float32)
        c, nz, ny, nx = data.shape
        dim = (4, nx, ny, nz, c, 1, 1, 1)
        spacing = obj.spacing
        rank = obj.rank
    else:
        grid, data = _coerce_payload(obj)
        nz, ny, nx = data.shape
        rank = grid.rank
        spacing = grid.spacing
        dim = (2, nx, ny, 1, 1, 1, 1, 1) if rank == 2 else (3, nx, ny, nz, 1, 1, 1, 1)

    pixdim = (0.0, spacing[2], spacing[1], spacing[0], 1.0, 1.0, 1.0, 1.0)
    header = struct.pack(
        _HDR_FMT,
        _HDR_SIZE,
        b"",
        b"",
        0,
        0,
        b"\x00",
        b"\x00",
        *dim,
        0.0,
        0.0,
        0.0,
        0,
        _DTYPE_CODES[np.dtype(data.dtype)],
        np.dtype(data.dtype).itemsize * 8,
        0,
        *pixdim,
        352.0,
        1.0,
        0.0,
        0,
        b"\x00",
        b"\x00",
        0.0,
        0.0,
        0.0,
        0.0,
        0,
        0,
        b"tubetopo",
        b"",
        0,
        0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        b"",
        _MAGIC,
    )
    with _open_write(p) as fh:
        fh.write(header)
        fh.write(b"\x00\x00\x00\x00")  # no extensions
        fh.write(np.ascontiguousarray(data).tobytes())


def _read_pgm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(buf):
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(buf) and not buf[i : i + 1].isspace():
            i += 1
        tokens.append(buf[start:i])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise CorruptHeader(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise CorruptHeader(f"{path}: bad PGM header") from exc
    if maxval > 255:
        raise UnsupportedDatatype(f"{path}: PGM maxval {maxval} > 255")
    i += 1  # single whitespace after maxval
    payload = buf[i : i + width * height]
    if len(payload) != width * height:
        raise CorruptHeader(f"{path}: PGM payload has {len(payload)} of {width * height} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    meta = VolumeMeta(datatype="uint8", ndim=2, warnings=[])
    return VoxelGrid(np.array(arr), spacing=(1.0, 1.0, 1.0), rank=2), meta


def _write_pgm(obj, path) -> None:
    grid, data = _coerce_payload(obj)
    if grid.rank != 2:
        raise DimensionalityMismatch("PGM output requires a rank-2 grid")
    if data.dtype != np.uint8:
        raise UnsupportedDatatype("PGM output requires uint8 data")
    img = data[0]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def read_channelmap(path) -> ChannelMap:
    """Load a pointwise channel map from its JSON document."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc}", field="$") from exc
    return channelmap_from_dict(doc)


def channelmap_from_dict(doc) -> ChannelMap:
    if not isinstance(doc, dict):
        raise SchemaViolation("document must be an object", field="$")
    for key in ("in", "out", "weight", "bias"):
        if key not in doc:
            raise SchemaViolation("missing field", field=f"$.{key}")
    n_in, n_out = doc["in"], doc["out"]
    if not isinstance(n_in, int) or n_in < 1:
        raise SchemaViolation("must be a positive integer", field="$.in")
    if not isinstance(n_out, int) or n_out < 1:
        raise SchemaViolation("must be a positive integer", field="$.out")
    weight = doc["weight"]
    bias = doc["bias"]
    if not isinstance(weight, list) or len(weight) != n_in * n_out:
        raise SchemaViolation(f"expected {n_in * n_out} row-major entries", field="$.weight")
    if not isinstance(bias, list) or len(bias) != n_out:
        raise SchemaViolation(f"expected {n_out} entries", field="$.bias")
    try:
        w = np.asarray(weight, dtype=np.float64).reshape(n_out, n_in)
        b = np.asarray(bias, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"non-numeric entries: {exc}", field="$.weight") from exc
    return ChannelMap(w, b)


def channelmap_to_dict(cmap: ChannelMap) -> dict:
    return {
        "in": cmap.in_channels,
        "out": cmap.out_channels,
        "weight": [float(v) for v in cmap.weight.reshape(-1)],
        "bias": [float(v) for v in cmap.bias],
    }


def write_channelmap(cmap: ChannelMap, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(channelmap_to_dict(cmap)))
        fh.write("\n")


def _fmt_float(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError(f"reports must be finite, got {x}")
    s = format(float(x), ".17g")
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def dumps_canonical(obj, indent: int = 2) -> str:
    """Deterministic JSON: insertion-ordered keys, floats at 17 significant digits."""
    out = io.StringIO()
    _write_json(obj, out, indent, 0)
    return out.getvalue()


def _write_json(obj, out, indent, level) -> None:
    pad = " " * (indent * (level + 1))
    end_pad = " " * (indent * level)
    if obj is None:
        out.write("null")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        out.write("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.write(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.write(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.write(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.write("{}")
            return
        out.write("{\n")
        for i, (k, v) in enumerate(obj.items()):
            out.write(f"{pad}{json.dumps(str(k))}: ")
            _write_json(v, out, indent, level + 1)
            out.write(",\n" if i < len(obj) - 1 else "\n")
        out.write(end_pad + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj.tolist()) if isinstance(obj, np.ndarray) else list(obj)
        if not seq:
            out.write("[]")
            return
        out.write("[\n")
        for i, v in enumerate(seq):
            out.write(pad)
            _write_json(v, out, indent, level + 1)
            out.write(",\n" if i < len(seq) - 1 else "\n")
        out.write(end_pad + "]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_report(report: dict, path) -> None:
    """Write a report document with the canonical serializer."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(report))
        fh.write("\n")


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
