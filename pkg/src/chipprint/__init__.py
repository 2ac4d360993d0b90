"""Surface-texture authentication for IC chip packages.

Simulates rough chip surfaces, renders specular video clips and scanner
passes, registers captures, and scores fingerprints built from robust
specular points.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, config_snapshot, load_config
from .errors import (
    AlignmentFailedError,
    ChipprintError,
    DegenerateInputError,
    FormatError,
    GeometryError,
    IncompatibleFingerprintsError,
    MaskError,
    ParameterError,
)
from .evaluation import EvalReport, bootstrap_scores, build_report, eer_empirical, eer_parametric
from .formats import (
    load_clip,
    read_fingerprint,
    read_report,
    save_clip,
    write_fingerprint,
    write_report,
)
from .model import Frame, HeightMap, LightPose, NormMap, VideoClip
from .pipeline import Benchmark, CountView, FeatureClip, build_benchmark, featurize_frames, mask_arms
from .registration import SimilarityTransform, align_clip, warp, warp_frame
from .specular import (
    Fingerprint,
    RegionMask,
    ScoreBundle,
    build_mask,
    count_robust_points,
    fingerprint_from_clip,
    full_mask,
    observed_specular_points,
    score_bundle,
)
from .simulate import build_chip, simulate_clip, simulate_dataset

__all__ = [
    "AlignmentFailedError",
    "Benchmark",
    "ChipprintError",
    "CountView",
    "DegenerateInputError",
    "EvalReport",
    "FeatureClip",
    "Fingerprint",
    "FormatError",
    "Frame",
    "GeometryError",
    "HeightMap",
    "IncompatibleFingerprintsError",
    "LightPose",
    "MaskError",
    "NormMap",
    "ParameterError",
    "PipelineConfig",
    "RegionMask",
    "ScoreBundle",
    "SimilarityTransform",
    "VideoClip",
    "align_clip",
    "bootstrap_scores",
    "build_benchmark",
    "build_chip",
    "build_mask",
    "build_report",
    "config_snapshot",
    "count_robust_points",
    "eer_empirical",
    "eer_parametric",
    "featurize_frames",
    "fingerprint_from_clip",
    "full_mask",
    "load_clip",
    "load_config",
    "mask_arms",
    "observed_specular_points",
    "read_fingerprint",
    "read_report",
    "save_clip",
    "score_bundle",
    "simulate_clip",
    "simulate_dataset",
    "warp",
    "warp_frame",
    "write_fingerprint",
    "write_report",
    "__version__",
]
