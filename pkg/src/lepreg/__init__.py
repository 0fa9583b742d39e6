"""Centroid-driven polyaffine registration with log-Euclidean fusion."""

from .errors import (
    DataError,
    DegenerateConfigurationError,
    IndeterminateWeightError,
    InsufficientCorrespondenceError,
    LogNotDefinedError,
    NumericalError,
    RegistrationError,
)
from .evaluation import DiceReport, Phantom, affine_report, dice, make_phantom, qc_flag
from .fusion import (
    DisplacementField,
    FusionParams,
    VelocityField,
    build_svf,
    integrate_svf,
    invert_svf,
)
from .grid import GridSpec
from .linalg import (
    AffineTransform,
    LogAffine,
    affine_compose,
    affine_distances,
    affine_invert,
    mat_exp,
    mat_log_principal,
    polar_decompose,
)
from .matching import LocalAffineSet, delaunay_neighborhoods, fit_affine_wlls, fit_local_affines
from .pipeline import RegistrationResult, register
from .pointset import LabeledPointSet, WeightMode, centroids_from_labels, pair_by_label
from .volume_io import LabelVolume, ScalarVolume, read_volume, resample_labels, write_volume

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DegenerateConfigurationError",
    "IndeterminateWeightError",
    "InsufficientCorrespondenceError",
    "LogNotDefinedError",
    "NumericalError",
    "RegistrationError",
    "DiceReport",
    "Phantom",
    "affine_report",
    "dice",
    "make_phantom",
    "qc_flag",
    "DisplacementField",
    "FusionParams",
    "VelocityField",
    "build_svf",
    "integrate_svf",
    "invert_svf",
    "GridSpec",
    "AffineTransform",
    "LogAffine",
    "affine_compose",
    "affine_distances",
    "affine_invert",
    "mat_exp",
    "mat_log_principal",
    "polar_decompose",
    "LocalAffineSet",
    "delaunay_neighborhoods",
    "fit_affine_wlls",
    "fit_local_affines",
    "RegistrationResult",
    "register",
    "LabeledPointSet",
    "WeightMode",
    "centroids_from_labels",
    "pair_by_label",
    "LabelVolume",
    "ScalarVolume",
    "read_volume",
    "resample_labels",
    "write_volume",
    "__version__",
]
