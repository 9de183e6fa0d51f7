"""Self-paced learning for weakly supervised evidence localization in videos."""
from .core import (
    DataError,
    Dataset,
    LinearModel,
    ParseError,
    ShotInstance,
    SplConfig,
    SplState,
    ValidationError,
    VideoBag,
    load_annotations,
    load_dataset,
    save_dataset,
)
from .recount import (
    EvalReport,
    RegionSet,
    ScoredShots,
    evaluate,
    f1_score,
    late_fusion,
    pct_overlap,
    predict_bag,
    regions_from_annotation,
    regions_from_scores,
)
from .spl import SplRun, basic_mil_fit, init_pseudo_labels, spl_fit
from .svm import WeightedSample, qp_oracle, train_weighted_svm
from .synth import SynthData, SynthSpec, generate, generate_split

__version__ = "0.1.0"

__all__ = [
    "DataError", "Dataset", "EvalReport", "LinearModel", "ParseError", "RegionSet",
    "ScoredShots", "ShotInstance", "SplConfig", "SplRun", "SplState", "SynthData",
    "SynthSpec", "ValidationError", "VideoBag", "WeightedSample", "basic_mil_fit",
    "evaluate", "f1_score", "generate", "generate_split", "init_pseudo_labels",
    "late_fusion", "load_annotations", "load_dataset", "pct_overlap", "predict_bag",
    "qp_oracle", "regions_from_annotation", "regions_from_scores", "save_dataset",
    "spl_fit", "train_weighted_svm",
]
