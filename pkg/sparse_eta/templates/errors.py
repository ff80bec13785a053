"""
Error panels for the sparse-eta command line.
"""

from typing import Optional

from rich.console import Console
from rich.panel import Panel
from rich.traceback import Traceback

from sparse_eta.atoms.error_utils import SparseEtaError


def display_error(
    message: str,
    title: str = "Error",
    console: Optional[Console] = None
) -> None:
    console = console or Console()
    console.print(Panel(message, title=f"[bold]{title}[/bold]", border_style="red", expand=False))


def display_sparse_eta_error(
    error: SparseEtaError,
    console: Optional[Console] = None
) -> None:
    """
    Show a library error with its diagnostic details.

    The panel title is the error class (``ValidationError``, ``NoPathError`` ...)
    and every entry of ``error.details`` is listed under the message.
    """
    body = f"{error.message}\n"
    if error.details:
        body += "\n[bold]Details:[/bold]\n"
        for key, value in error.details.items():
            body += f"- {key}: {value}\n"
    display_error(body.strip(), title=type(error).__name__, console=console)


def display_exception(
    exception: BaseException,
    show_traceback: bool = False,
    console: Optional[Console] = None
) -> None:
    """Show an unexpected exception, with a rich traceback when asked."""
    console = console or Console()
    if show_traceback:
        console.print(
            Traceback.from_exception(
                exc_type=type(exception),
                exc_value=exception,
                traceback=exception.__traceback__,
                width=100,
                show_locals=False
            )
        )
    else:
        console.print(f"[bold red]{type(exception).__name__}:[/bold red] {str(exception)}")
