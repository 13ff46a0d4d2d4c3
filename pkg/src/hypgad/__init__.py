"""Node anomaly detection with Euclidean and hyperbolic graph autoencoders."""

from .detector import GCNAE, MLPAE, HyperbolicGAD, NormScoreDetector, check_graph
from .graph import Graph, NormalizationMode, load_cora_content, load_tsv, normalize_features, write_tsv
from .injection import InjectionResult, InjectionSpec, default_spec, inject
from .manifold import Euclidean, Lorentz, PoincareBall, get_manifold
from .metrics import aggregate_trials, average_precision, norm_baseline_score, roc_auc

__version__ = "0.1.0"

__all__ = [
    "Graph", "NormalizationMode", "load_cora_content", "load_tsv", "normalize_features", "write_tsv",
    "InjectionSpec", "InjectionResult", "default_spec", "inject",
    "Euclidean", "Lorentz", "PoincareBall", "get_manifold",
    "roc_auc", "average_precision", "norm_baseline_score", "aggregate_trials",
    "HyperbolicGAD", "NormScoreDetector", "MLPAE", "GCNAE", "check_graph",
]
