"""Dual-spectrum (visible + thermal) hand image identification pipeline."""

from .imagecore import BinaryMask, GrayImage, apply_mask, load_image, save_image
from .segmentation import (
    RegistrationConfig,
    RegistrationResult,
    SimilarityTransform,
    apply_similarity,
    binarize,
    dice,
    majority_filter,
    otsu_threshold,
    register_masks,
    segment_thermal,
)
from .regions import NormalizedHand, RegionKind, extract_region, normalize_hand
from .features import dct2, idct2, zigzag_select
from .bdm import BdmModel, Gallery, estimate_dispersions, g_score, identify, train_bdm
from .fusion import (
    ScoreMatrix,
    alpha_sweep,
    combine_scores,
    majority_vote,
    normalize_scores,
    weighted_combine,
)
from .synth import SyntheticConfig, SyntheticDataset, generate_dataset
from .evaluate import EvaluationReport, PipelineConfig, run_evaluation

__version__ = "0.1.0"
