"""Near-infrared textile spectra: preprocessing, neural models and evaluation."""

from .evaluation import (ConfusionMatrix, EvaluationReport, ObjectPrediction, accuracy_report,
                         confusion, detection_report, majority_vote, re_histogram)
from .exceptions import FiberSpecError
from .models import (TEXTILE_LABELS, AutoencoderDetector, AutoencoderSpec, ClassifierSpec,
                     SpectralCNNClassifier, build_autoencoder, build_classifier, fit_threshold)
from .preprocessing import SNV, SavitzkyGolay, SpectralPreprocessor
from .spectra import (DEFAULT_GRID, HyperCube, PipelineConfig, Spectrum, Stage, WavelengthGrid,
                      calibrate_reflectance, dark_sample_filter, mean_smooth, pipeline_apply,
                      savgol_apply, savgol_coefficients, savgol_filter, snv)
from .synth import SyntheticSpec, gen_dataset, make_benchmark, stratified_split

__version__ = "0.1.0"

__all__ = [
    "ConfusionMatrix", "EvaluationReport", "ObjectPrediction", "accuracy_report", "confusion",
    "detection_report", "majority_vote", "re_histogram", "FiberSpecError", "TEXTILE_LABELS",
    "AutoencoderDetector", "AutoencoderSpec", "ClassifierSpec", "SpectralCNNClassifier",
    "build_autoencoder", "build_classifier", "fit_threshold", "SNV", "SavitzkyGolay",
    "SpectralPreprocessor", "DEFAULT_GRID", "HyperCube", "PipelineConfig", "Spectrum", "Stage",
    "WavelengthGrid", "calibrate_reflectance", "dark_sample_filter", "mean_smooth",
    "pipeline_apply", "savgol_apply", "savgol_coefficients", "savgol_filter", "snv",
    "SyntheticSpec", "gen_dataset", "make_benchmark", "stratified_split",
]
