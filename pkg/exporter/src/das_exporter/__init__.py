"""Reference torch adapter emitting das run directories from real checkpoints."""

__version__ = "0.1.0"

from das_exporter.config import ExportConfig, ExportError
from das_exporter.detector import GridProposalDetector, build_detector
from das_exporter.export import export_run, perturbation_direction

__all__ = ["ExportConfig", "ExportError", "GridProposalDetector",
           "build_detector", "export_run", "perturbation_direction"]
