"""tubetopo: topology toolkit for tubular structure segmentation.

Dense 2D/3D voxel grids, morphological skeletons, endpoint-guided
discontinuity mining, connectivity-aware metrics (Dice, clDice, Betti
error, Hausdorff), forward loss evaluation with dual-attention
refinement, and a deterministic synthetic tube-network generator.
"""

__version__ = "0.1.0"

from .grid import (
    BinaryMask,
    Connectivity,
    LabelVolume,
    ProbVolume,
    VoxelGrid,
    connected_components,
    distance_transform,
    softmax,
)
from .skeleton import (
    EndpointSet,
    SkeletonMask,
    ThinningParams,
    binarize,
    detect_endpoints,
    soft_skeleton,
)
from .edm import (
    CandidateSet,
    DiscontinuityMask,
    DistanceSet,
    EdmConfig,
    build_mask,
    cluster_candidates,
    mine,
    min_endpoint_distances,
    reduce_clusters,
    select_discontinuity_points,
)
from .metrics import (
    BettiTriple,
    MetricsReport,
    PatchSpec,
    betti,
    betti_error,
    cldice,
    dice,
    evaluate,
    hausdorff,
)
from .heads import (
    ChannelMap,
    LossBreakdown,
    LossWeights,
    StopGradMarker,
    ce_loss,
    consistency_loss,
    dar_apply,
    dice_loss,
    kl_divergence,
    seg_loss,
    stop_gradient,
    total_loss,
)
from .synth import CutSpec, Fixture, TubeNetworkSpec, apply_cuts, generate, make_cut_fixture
