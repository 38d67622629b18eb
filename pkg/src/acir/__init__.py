"""Content-based image retrieval with learned binary codes.

Building blocks: a structure-aware weighted contrastive objective over
hash embeddings (with analytic gradients and a desk-scale optimizer), image
fingerprints and pair classification, a forward-only toy encoder, an exact
Hamming-ball gallery index with content-guided ranking, reconstruction-
residual out-of-distribution gating, and retrieval metrics.
"""

from .codes import BinaryCode, hamming_distance, sign_quantize
from .config import PipelineConfig
from .errors import AcirError
from .evaluation import (
    EvalReport,
    average_precision_at_k,
    map_maap,
    ood_detection_rate,
    precision_recall_at_radius,
)
from .index import GalleryIndex, GalleryRecord, RetrievalResult, content_similarity
from .loss import (
    ClassWeights,
    LossConfig,
    class_weights,
    contrastive_loss,
    optimize_embeddings,
    pearson_similarity,
    quantization_loss,
    weighted_contrastive_gradient,
    weighted_contrastive_loss,
)
from .ood import (
    MSSSIMParams,
    OODCalibration,
    ResidualKind,
    calibrate_threshold,
    hamming_ball_radius,
    hash_space_ood,
    is_ood,
    ms_ssim,
    reconstruction_residual,
)
from .pairing import (
    PairClass,
    classify_pairs,
    consistency_matrix,
    make_fingerprint,
    semantic_similarity_matrix,
    structural_consistency,
)

__version__ = "0.1.0"

__all__ = [
    "AcirError",
    "BinaryCode",
    "ClassWeights",
    "EvalReport",
    "GalleryIndex",
    "GalleryRecord",
    "LossConfig",
    "MSSSIMParams",
    "OODCalibration",
    "PairClass",
    "PipelineConfig",
    "ResidualKind",
    "RetrievalResult",
    "average_precision_at_k",
    "calibrate_threshold",
    "class_weights",
    "classify_pairs",
    "consistency_matrix",
    "content_similarity",
    "contrastive_loss",
    "hamming_ball_radius",
    "hamming_distance",
    "hash_space_ood",
    "is_ood",
    "make_fingerprint",
    "map_maap",
    "ms_ssim",
    "ood_detection_rate",
    "optimize_embeddings",
    "pearson_similarity",
    "precision_recall_at_radius",
    "quantization_loss",
    "reconstruction_residual",
    "semantic_similarity_matrix",
    "sign_quantize",
    "structural_consistency",
    "weighted_contrastive_gradient",
    "weighted_contrastive_loss",
]
