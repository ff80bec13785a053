"""
Error handling utilities for the sparse-eta package.

This module provides custom exception classes and utility functions
for consistent error reporting across the application.
"""

from typing import Optional, Any, Dict, List


class SparseEtaError(Exception):
    """Base exception class for all sparse-eta errors."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        """
        Initialize a SparseEtaError.

        Args:
            message: The error message
            details: Optional dictionary with additional error details
        """
        self.message = message
        self.details = details or {}
        super().__init__(message)


class ValidationError(SparseEtaError):
    """Exception raised when input validation fails."""

    def __init__(
        self,
        message: str,
        input_value: Optional[str] = None,
        validation_type: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        """
        Initialize a ValidationError.

        Args:
            message: The error message
            input_value: The value that failed validation
            validation_type: The type of validation that failed (e.g., "node_reference", "keep_ratio")
            details: Optional dictionary with additional error details
        """
        self.input_value = input_value
        self.validation_type = validation_type
        super().__init__(message, details)


class FileIOError(SparseEtaError):
    """Exception raised when file I/O operations fail."""

    def __init__(
        self,
        message: str,
        file_path: Optional[str] = None,
        operation: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        """
        Initialize a FileIOError.

        Args:
            message: The error message
            file_path: The path to the file that caused the error
            operation: The operation that failed (e.g., "read", "write", "create")
            details: Optional dictionary with additional error details
        """
        self.file_path = file_path
        self.operation = operation
        super().__init__(message, details)


class NetworkFormatError(SparseEtaError):
    """Exception raised when a network file cannot be parsed."""

    def __init__(
        self,
        message: str,
        file_path: Optional[str] = None,
        record: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        """
        Initialize a NetworkFormatError.

        Args:
            message: The error message
            file_path: The network file being parsed
            record: Line or record locator (e.g. "line 3" or "segments[4]")
            details: Optional dictionary with additional error details
        """
        self.file_path = file_path
        self.record = record
        super().__init__(message, details)


class NoNodeInRange(SparseEtaError):
    """Raised when no network node lies within the snapping radius of a GPS fix."""

    def __init__(self, lon: float, lat: float, distance_m: float, radius_m: float):
        self.lon = lon
        self.lat = lat
        self.distance_m = distance_m
        self.radius_m = radius_m
        super().__init__(
            f"Nearest node is {distance_m:.1f} m away (radius {radius_m:.1f} m)",
            {"lon": lon, "lat": lat, "distance_m": distance_m, "radius_m": radius_m},
        )


class NoPathError(SparseEtaError):
    """Raised when the destination node is unreachable from the source node."""

    def __init__(self, src: Any, dst: Any):
        self.src = src
        self.dst = dst
        super().__init__(f"No path from node {src} to node {dst}", {"src": src, "dst": dst})


class ConsumedTapeError(SparseEtaError):
    """Raised when a gradient tape is replayed a second time."""


class NonFiniteLossError(SparseEtaError):
    """Raised when training produces a NaN or infinite loss."""

    def __init__(
        self,
        message: str,
        pair_ids: Optional[List[int]] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        self.pair_ids = pair_ids or []
        super().__init__(message, details)


class TrainingError(SparseEtaError):
    """Raised when the EM procedure cannot proceed (e.g. corrupt state)."""
