"""
Input validation utilities for the sparse-eta package.

This module provides functions to validate file paths and the
numeric knobs (ratios, thresholds, counts) that flow in from configuration
files and command-line flags.
"""

import math
import os
from pathlib import Path
from typing import Union, Iterable

from sparse_eta.atoms.error_utils import ValidationError
from sparse_eta.atoms.path_utils import resolve_path


def validate_file_path(file_path: Union[str, Path], must_exist: bool = True) -> Path:
    """
    Validate a file path.

    Args:
        file_path: The file path to validate
        must_exist: If True, checks that the file exists and is readable

    Returns:
        A resolved Path object for the file

    Raises:
        ValidationError: If the file path is invalid
    """
    if not isinstance(file_path, (str, Path)):
        raise ValidationError(
            message="File path must be a string or Path object",
            input_value=str(file_path),
            validation_type="file_path_type"
        )

    resolved_path = resolve_path(file_path)

    if must_exist:
        if not resolved_path.exists():
            raise ValidationError(
                message="File does not exist",
                input_value=str(resolved_path),
                validation_type="file_existence"
            )

        if not resolved_path.is_file():
            raise ValidationError(
                message="Path exists but is not a file",
                input_value=str(resolved_path),
                validation_type="file_type"
            )

        if not os.access(resolved_path, os.R_OK):
            raise ValidationError(
                message="File exists but is not readable",
                input_value=str(resolved_path),
                validation_type="file_permissions"
            )

    return resolved_path


def validate_keep_ratio(keep_ratio: float) -> float:
    """
    Validate a sparsification keep ratio, which must lie in (0, 1].

    Raises:
        ValidationError: If the ratio is outside (0, 1] or not finite
    """
    value = float(keep_ratio)
    if not math.isfinite(value) or value <= 0.0 or value > 1.0:
        raise ValidationError(
            message="Keep ratio must lie in (0, 1]",
            input_value=str(keep_ratio),
            validation_type="keep_ratio"
        )
    return value


def validate_threshold(tau: float) -> float:
    """Validate a diversity threshold, which must lie in (0, 1]."""
    value = float(tau)
    if not math.isfinite(value) or value <= 0.0 or value > 1.0:
        raise ValidationError(
            message="Diversity threshold must lie in (0, 1]",
            input_value=str(tau),
            validation_type="threshold"
        )
    return value


def validate_positive_int(value: int, name: str, allow_zero: bool = False) -> int:
    """Validate a (strictly) positive integer count."""
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(
            message=f"{name} must be an integer",
            input_value=str(value),
            validation_type="integer"
        )
    if value < 0 or (value == 0 and not allow_zero):
        raise ValidationError(
            message=f"{name} must be {'non-negative' if allow_zero else 'positive'}",
            input_value=str(value),
            validation_type="integer_range"
        )
    return value


def validate_positive_weights(weights: Iterable[float]) -> None:
    """
    Validate that every routing weight is finite and strictly positive.

    Raises:
        ValidationError: Naming the first offending index
    """
    for idx, w in enumerate(weights):
        if not (math.isfinite(w) and w > 0.0):
            raise ValidationError(
                message="Routing weights must be finite and strictly positive",
                input_value=str(w),
                validation_type="weights",
                details={"segment_id": idx}
            )
