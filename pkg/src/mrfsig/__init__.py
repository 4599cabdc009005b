"""Sparse autologistic Markov random fields for two-group biomarker signatures."""
from .discriminate import (
    PerformanceRecord,
    Separator,
    estimate_separator,
    evaluate_loo,
    evaluate_training,
    exact_performance,
    ideal_separator,
    planar_recode,
    sample_size_bound,
    separator_error_diagnostics,
)
from .errors import (
    CapacityError,
    DomainError,
    InsufficientFeaturesError,
    MRFError,
    NumericalError,
    RankDeficiencyError,
)
from .fit_quality import FitQualityReport, quality_of_fit
from .gibbs_core import (
    AutologisticModel,
    ParamVector,
    energy,
    gibbs_sample,
    kl_distance,
    log_partition_exact,
    log_partition_mc,
    nor_kl,
)
from .kernels import BACKEND
from .mple import MpleConfig, MpleResult, PseudoLikelihoodContext, fit, fit_and_prune, fit_dataset
from .pipeline import DimQuad, PipelineConfig, Signature, classify, compute_scores, grid_search
from .spectra_io import BinaryDataset, PeakSpectrum, ReferenceGrid, binarize, build_grid

__version__ = "0.1.0"
