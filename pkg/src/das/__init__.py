"""Label-free ranking of domain-adaptive detection checkpoints.

Scores serialized inference dumps with a flatness index (prediction
drift under fixed-radius weight perturbation) and a prototypical
distance ratio (inter-class spread over cross-domain class alignment),
fuses them into a single detection adaptation score, and validates the
ranking against a supervised mAP/PCC oracle.
"""

__version__ = "0.1.0"

from das.backend import active_backend, available_backends
from das.dumps import parse_manifest, parse_pass_dump, write_pass_dump
from das.matching import fis, hungarian_assign, image_flatness_cost, iou, kl_divergence, pair_cost
from das.prototypes import pdr, soft_prototypes
from das.scores import baseline_atc, baseline_es, baseline_fd, baseline_ps, das, min_max_normalize, select_best
from das.evaluation import map50, pearson, selection_report
from das.synth import SyntheticConfig, generate_run, generate_trajectory, perturb_parameters
from das.validation import validate_run

__all__ = [
    "__version__",
    "active_backend", "available_backends",
    "parse_manifest", "parse_pass_dump", "write_pass_dump",
    "fis", "hungarian_assign", "image_flatness_cost", "iou", "kl_divergence", "pair_cost",
    "pdr", "soft_prototypes",
    "baseline_atc", "baseline_es", "baseline_fd", "baseline_ps", "das",
    "min_max_normalize", "select_best",
    "map50", "pearson", "selection_report",
    "SyntheticConfig", "generate_run", "generate_trajectory", "perturb_parameters",
    "validate_run",
]
