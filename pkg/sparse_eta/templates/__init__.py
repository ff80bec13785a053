"""
Templates module for sparse_eta.

Templates are the display components of the command line: banners, spinners
and progress bars, training and evaluation summaries, and error panels, all
rendered with Rich and Halo.
"""

from .banner import display_banner, display_section_header
from .errors import display_error, display_exception, display_sparse_eta_error
from .progress import (
    display_completion,
    display_processing_update,
    display_progress_bar,
    display_spinner,
)
from .summary import (
    display_artifacts,
    display_dataframe_summary,
    display_em_summary,
    display_route_report,
    display_tte_report,
)

__all__ = [
    # banner.py
    "display_banner",
    "display_section_header",
    # progress.py
    "display_spinner",
    "display_processing_update",
    "display_completion",
    "display_progress_bar",
    # summary.py
    "display_em_summary",
    "display_tte_report",
    "display_route_report",
    "display_artifacts",
    "display_dataframe_summary",
    # errors.py
    "display_error",
    "display_sparse_eta_error",
    "display_exception",
]
