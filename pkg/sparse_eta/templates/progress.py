"""
Spinners, progress bars and one-line status updates.

Spinners use Halo and are switched off when output is not a terminal, so
logs and captured output stay clean.
"""

from contextlib import contextmanager
from typing import Callable, Generator, Optional

from halo import Halo
from rich.console import Console
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TextColumn,
    TimeElapsedColumn,
)

_STATUS_ICONS = {
    "processing": "[yellow]⟳[/yellow]",
    "success": "[green]✓[/green]",
    "error": "[red]✗[/red]",
    "warning": "[yellow]⚠[/yellow]",
    "info": "[blue]ℹ[/blue]",
}


@contextmanager
def display_spinner(
    text: str,
    success_text: Optional[str] = None,
    console: Optional[Console] = None
) -> Generator[Halo, None, None]:
    """
    Show a spinner while a step runs.

    The spinner reports success when the block exits normally and failure
    (re-raising the error) otherwise.

    Example:
        ```python
        with display_spinner("Loading network") as spinner:
            net = load_network(path)
            spinner.text = f"Loaded {net.num_segments} segments"
        ```
    """
    console = console or Console()
    spinner = Halo(text=text, spinner="dots", enabled=console.is_terminal)
    spinner.start()
    try:
        yield spinner
        spinner.succeed(success_text or f"Done: {text}")
    except Exception as e:
        spinner.fail(f"Failed: {text} ({str(e)})")
        raise


def display_processing_update(
    message: str,
    status: str = "processing",
    console: Optional[Console] = None
) -> None:
    """Print one status line; ``status`` is processing, success, error, warning or info."""
    console = console or Console()
    icon = _STATUS_ICONS.get(status.lower(), _STATUS_ICONS["info"])
    console.print(f"{icon} {message}")


def display_completion(
    message: str,
    success: bool = True,
    console: Optional[Console] = None
) -> None:
    console = console or Console()
    if success:
        console.print(f"[bold green]✓ {message}[/bold green]")
    else:
        console.print(f"[bold red]✗ {message}[/bold red]")


@contextmanager
def display_progress_bar(
    description: str,
    total: int,
    console: Optional[Console] = None
) -> Generator[Callable[[int], None], None, None]:
    """
    Show a progress bar and yield a callback that advances it by ``n`` items.

    The callback matches the ``progress_callback`` of the corpus generator
    and may be called from worker threads.

    Example:
        ```python
        with display_progress_bar("Simulating trips", n) as advance:
            trips = gen_corpus(net, truth, sim, seed, progress_callback=advance)
        ```
    """
    console = console or Console()
    progress = Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        disable=not console.is_terminal,
    )
    with progress:
        task_id = progress.add_task(description, total=total)

        def advance(n: int = 1) -> None:
            progress.advance(task_id, n)

        yield advance
