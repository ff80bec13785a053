"""
Atoms module for sparse_eta.

Atoms are the foundational building blocks: the error hierarchy, path and
input validation helpers, configuration, logging setup, geodesy and
lognormal moment matching. They import nothing else from the package.
"""

from sparse_eta.atoms.error_utils import (
    SparseEtaError,
    ValidationError,
    FileIOError,
    NetworkFormatError,
    NoNodeInRange,
    NoPathError,
    ConsumedTapeError,
    NonFiniteLossError,
    TrainingError
)

from sparse_eta.atoms.path_utils import (
    resolve_path,
    ensure_directory_exists,
    ratio_label,
    corpus_filename
)

from sparse_eta.atoms.input_validator import (
    validate_file_path,
    validate_keep_ratio,
    validate_threshold,
    validate_positive_int,
    validate_positive_weights
)

from sparse_eta.atoms.config import ExperimentConfig, load_config
from sparse_eta.atoms.log_utils import configure_logging, resolve_log_level
from sparse_eta.atoms.geo import haversine_m, offset_degrees
from sparse_eta.atoms.lognormal import to_lognormal, lognormal_moments, sample_truncated_lognormal

__all__ = [
    # Errors
    'SparseEtaError',
    'ValidationError',
    'FileIOError',
    'NetworkFormatError',
    'NoNodeInRange',
    'NoPathError',
    'ConsumedTapeError',
    'NonFiniteLossError',
    'TrainingError',

    # Paths
    'resolve_path',
    'ensure_directory_exists',
    'ratio_label',
    'corpus_filename',

    # Validation
    'validate_file_path',
    'validate_keep_ratio',
    'validate_threshold',
    'validate_positive_int',
    'validate_positive_weights',

    # Configuration and logging
    'ExperimentConfig',
    'load_config',
    'configure_logging',
    'resolve_log_level',

    # Math
    'haversine_m',
    'offset_degrees',
    'to_lognormal',
    'lognormal_moments',
    'sample_truncated_lognormal'
]
