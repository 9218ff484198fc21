"""Scan-adaptive Cartesian undersampling for multi-coil MRI.

Per-scan phase-encode masks are optimized offline on training scans and
retrieved at test time by nearest-neighbor search on the low-frequency
calibration lines.
"""

from .dictionary import MaskDictionary, build_dictionary, extract_feature
from .errors import (
    DataError,
    DimensionError,
    NumericalError,
    ScanAdaptError,
    StageError,
    UsageError,
)
from .metrics import MetricReport, evaluate, nrmse, psnr, ssim
from .mrimodel import CartesianMask, ScanRecord, adjoint, apply_mask, forward
from .phantom import Dataset, PhantomSpec, generate_dataset
from .pipeline import BenchReport, RunManifest, alternating_train, bench, emit_reports, test_pipeline
from .recon import ReconConfig, make_reconstructor
from .sampling import SamplerConfig, greedy_optimize, icd_optimize

__version__ = "0.1.0"
