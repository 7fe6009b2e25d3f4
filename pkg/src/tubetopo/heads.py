"""Forward-value loss functions and the pointwise dual-attention refinement.

Everything here is a pure function over channel-first tensors: the
skeleton-alignment KL consistency term, cross-entropy and soft-Dice
segmentation losses, the refinement operator built from two 1x1
channel maps with skeleton/discontinuity attention, and the weighted
total.  No gradients: stop-gradient markers are carried through but by
definition leave forward values untouched.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySupport,
    LabelOutOfRange,
    NegativeLoss,
    ShapeMismatch,
)
from .grid import BinaryMask, LabelVolume, ProbVolume, softmax
from .rng import named_stream

__all__ = [
    "ChannelMap",
    "LossWeights",
    "LossBreakdown",
    "ConsistencyResult",
    "StopGradMarker",
    "stop_gradient",
    "kl_divergence",
    "consistency_loss",
    "ce_loss",
    "dice_loss",
    "seg_loss",
    "dar_apply",
    "total_loss",
]

_EPS = 1e-8
_DICE_SMOOTH = 1e-5
_KL_SLACK = 1e-9


@dataclass
class StopGradMarker:
    """Marks an operand whose gradient would be truncated during training.

    Forward values are unchanged; the marker only records intent.
    """

    value: object


def stop_gradient(x) -> StopGradMarker:
    return x if isinstance(x, StopGradMarker) else StopGradMarker(x)


def _unwrap(x):
    return x.value if isinstance(x, StopGradMarker) else x


@dataclass
class ChannelMap:
    """Pointwise linear map across channels (a 1x1 convolution)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionMismatch("weight must be an (out, in) matrix")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionMismatch(
                f"bias length {self.bias.shape} does not match out={self.weight.shape[0]}"
            )
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValueError("channel map entries must be finite")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def identity(cls, n: int) -> "ChannelMap":
        return cls(np.eye(n), np.zeros(n))

    @classmethod
    def random(cls, in_channels: int, out_channels: int, seed: int = 0) -> "ChannelMap":
        rng = named_stream(seed, "channelmap")
        w = rng.normal(0.0, 1.0, size=(out_channels, in_channels))
        b = rng.normal(0.0, 0.1, size=out_channels)
        return cls(w, b)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply to a (C, Z, Y, X) tensor, returning (out, Z, Y, X)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.in_channels:
            raise DimensionMismatch(
                f"map expects {self.in_channels} channels, tensor has {x.shape[0]}"
            )
        out = np.tensordot(self.weight, x, axes=([1], [0]))
        return out + self.bias[(...,) + (None,) * (x.ndim - 1)]


@dataclass(frozen=True)
class LossWeights:
    """Weights of the consistency and refinement terms in the total loss."""

    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("weights must be finite")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("weights must be non-negative")


@dataclass
class LossBreakdown:
    l_seg: float
    l_dis: float
    l_ske: float
    l_ims: float
    l_con: float
    l_dar: float
    l_total: float

    def as_dict(self) -> dict:
        return {
            "l_seg": self.l_seg,
            "l_dis": self.l_dis,
            "l_ske": self.l_ske,
            "l_ims": self.l_ims,
            "l_con": self.l_con,
            "l_dar": self.l_dar,
            "l_total": self.l_total,
        }


@dataclass
class ConsistencyResult:
    value: float
    degenerate_support: bool = False


def _clamp_renorm(p: np.ndarray) -> np.ndarray:
    q = np.maximum(p, _EPS)
    return q / q.sum(axis=0, keepdims=True)


def _prob_data(x) -> np.ndarray:
    x = _unwrap(x)
    if isinstance(x, ProbVolume):
        if not x.is_probabilities:
            raise ValueError("expected probabilities, got logits")
        return x.data
    return np.asarray(x, dtype=np.float64)


def kl_divergence(p, q, support: BinaryMask | None = None) -> float:
    """Mean per-voxel categorical KL(p || q) over the support voxels.

    Both operands are clamped below at 1e-8 and renormalised per voxel
    before the divergence, so zero channels never produce log(0).  With
    support None the average runs over all voxels.
    """
    pd = _prob_data(p)
    qd = _prob_data(q)
    if pd.shape != qd.shape:
        raise ShapeMismatch(f"operand shapes differ: {pd.shape} vs {qd.shape}")
    pd = _clamp_renorm(pd)
    qd = _clamp_renorm(qd)
    per_voxel = (pd * (np.log(pd) - np.log(qd))).sum(axis=0)
    if support is None:
        return float(per_voxel.mean())
    sel = support.bool if isinstance(support, BinaryMask) else np.asarray(support, dtype=bool)
    if sel.shape != per_voxel.shape:
        raise ShapeMismatch(f"support shape {sel.shape} != voxel shape {per_voxel.shape}")
    if not sel.any():
        raise EmptySupport("KL support has no voxels")
    return float(per_voxel[sel].mean())


def consistency_loss(
    seg_logits: ProbVolume, seg_skeleton: BinaryMask, ske_logits: ProbVolume
) -> ConsistencyResult:
    """Symmetric skeleton-alignment divergence between the two heads.

    Masks the softmaxed segmentation output by the prediction skeleton,
    renormalises, and sums KL in both directions against the softmaxed
    skeleton head, averaged over the union of the skeleton support and
    the skeleton head's predicted foreground.  The second operand of
    each KL carries a stop-gradient marker; forward values ignore it.
    """
    if seg_logits.shape != ske_logits.shape or seg_logits.channels != ske_logits.channels:
        raise ShapeMismatch("segmentation and skeleton heads must match in shape and channels")
    if tuple(seg_skeleton.shape) != tuple(seg_logits.shape):
        raise ShapeMismatch("skeleton mask shape does not match the heads")
    a = softmax(seg_logits).data * seg_skeleton.data[None, ...]
    a = _clamp_renorm(a)
    b = softmax(ske_logits).data
    support = seg_skeleton.bool | (np.argmax(b, axis=0) != 0)
    if not support.any():
        return ConsistencyResult(0.0, degenerate_support=True)
    value = kl_divergence(a, stop_gradient(b), support) + kl_divergence(
        b, stop_gradient(a), support
    )
    return ConsistencyResult(float(value))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=0, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=0, keepdims=True))


def _check_labels(gt: LabelVolume, channels: int) -> np.ndarray:
    lab = gt.data
    if lab.min(initial=0) < 0 or lab.max(initial=0) >= channels:
        raise LabelOutOfRange(
            f"labels must lie in [0, {channels - 1}], got range "
            f"[{int(lab.min())}, {int(lab.max())}]"
        )
    return lab


def ce_loss(pred_logits: ProbVolume, gt: LabelVolume) -> float:
    """Cross entropy: mean over voxels of -log softmax probability at the label."""
    if tuple(pred_logits.shape) != tuple(gt.shape):
        raise ShapeMismatch("prediction and labels must share shape")
    lab = _check_labels(gt, pred_logits.channels)
    logp = _log_softmax(pred_logits.data)
    picked = np.take_along_axis(logp, lab[None, ...], axis=0)[0]
    return float(-picked.mean())


def dice_loss(pred_logits: ProbVolume, gt: LabelVolume) -> float:
    """Soft Dice loss over the foreground channels with smoothing 1e-5.

    Absent classes contribute ~0 thanks to the smooth term (smooth/smooth
    in the ratio), mirroring the usual behaviour of CE+Dice defaults.
    """
    if tuple(pred_logits.shape) != tuple(gt.shape):
        raise ShapeMismatch("prediction and labels must share shape")
    lab = _check_labels(gt, pred_logits.channels)
    probs = softmax(pred_logits).data
    terms = []
    for c in range(1, pred_logits.channels):
        p = probs[c]
        g = lab == c
        inter = float((p * g).sum())
        term = (2.0 * inter + _DICE_SMOOTH) / (float(p.sum()) + float(g.sum()) + _DICE_SMOOTH)
        terms.append(term)
    return float(1.0 - np.mean(terms))


def seg_loss(pred_logits: ProbVolume, gt: LabelVolume) -> float:
    """Default segmentation objective: cross entropy plus soft Dice."""
    return ce_loss(pred_logits, gt) + dice_loss(pred_logits, gt)


def _tile_attention(att: np.ndarray, width: int) -> np.ndarray:
    c = att.shape[0]
    if width % c != 0:
        raise DimensionMismatch(
            f"attention channels {c} do not divide feature width {width}"
        )
    reps = width // c
    return np.tile(att, (reps,) + (1,) * (att.ndim - 1))


def dar_apply(
    seg_logits: ProbVolume,
    ske_logits: ProbVolume,
    dis_logits: ProbVolume,
    hr: ChannelMap,
    hc: ChannelMap,
) -> ProbVolume:
    """Dual-attention refinement of segmentation logits.

    Lifts the segmentation logits through hr, scales the features
    voxelwise by one plus the softmaxed skeleton and discontinuity
    attention maps (tiled channelwise to hr's output width), and
    projects back through hc.  Algebraically identical to summing the
    three attention branches before hc.
    """
    if seg_logits.shape != ske_logits.shape or seg_logits.shape != dis_logits.shape:
        raise ShapeMismatch("head outputs must share spatial shape")
    if hr.in_channels != seg_logits.channels:
        raise DimensionMismatch(
            f"hr expects {hr.in_channels} channels, segmentation has {seg_logits.channels}"
        )
    if hc.in_channels != hr.out_channels:
        raise DimensionMismatch(
            f"hc expects {hc.in_channels} channels, hr outputs {hr.out_channels}"
        )
    if hc.out_channels < 2:
        raise DimensionMismatch("hc must output at least 2 class channels")
    u = hr.apply(seg_logits.data)
    a_s = _tile_attention(softmax(ske_logits).data, hr.out_channels)
    a_d = _tile_attention(softmax(dis_logits).data, hr.out_channels)
    out = hc.apply((1.0 + a_s + a_d) * u)
    return ProbVolume(out, kind="logits", spacing=seg_logits.spacing, rank=seg_logits.rank)


def _check_loss(name: str, value: float) -> float:
    v = float(value)
    if not np.isfinite(v):
        raise NegativeLoss(f"{name} is not finite")
    if v < -_KL_SLACK:
        raise NegativeLoss(f"{name} = {v} is negative")
    return max(v, 0.0)  # forgive documented KL epsilon slack


def total_loss(
    l_seg: float,
    l_dis: float,
    l_ske: float,
    l_con: float,
    l_dar: float,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """Combine the per-head losses into the weighted training objective."""
    l_seg = _check_loss("l_seg", l_seg)
    l_dis = _check_loss("l_dis", l_dis)
    l_ske = _check_loss("l_ske", l_ske)
    l_con = _check_loss("l_con", l_con)
    l_dar = _check_loss("l_dar", l_dar)
    l_ims = l_seg + l_dis + l_ske
    l_total = l_ims + weights.alpha * l_con + weights.beta * l_dar
    return LossBreakdown(l_seg, l_dis, l_ske, l_ims, l_con, l_dar, l_total)
