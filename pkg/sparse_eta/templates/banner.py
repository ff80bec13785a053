"""
Banner and section headers for the sparse-eta command line.
"""

from typing import Optional

from rich.console import Console
from rich.panel import Panel
from rich.text import Text


def display_banner(
    command: str,
    seed: int,
    out_dir: str,
    console: Optional[Console] = None,
    version: str = "0.1.0",
) -> None:
    """
    Print the run header: command, seed and output directory.

    Args:
        command: The subcommand being run (``gen``, ``train`` ...).
        seed: The master seed of the run.
        out_dir: Where artifacts are written.
        console: The Rich console to print to. If None, a new console is created.
        version: The package version shown under the name.
    """
    console = console or Console()

    text = Text()
    text.append("sparse-eta", style="bold blue")
    text.append(f"  v{version}\n", style="dim blue")
    text.append("travel times and routes from sparse trajectories\n\n", style="italic")
    text.append("command ", style="dim")
    text.append(f"{command}\n", style="bold")
    text.append("seed    ", style="dim")
    text.append(f"{seed}\n")
    text.append("out     ", style="dim")
    text.append(out_dir)

    console.print(Panel(text, border_style="blue", expand=False, padding=(0, 2)))


def display_section_header(
    title: str,
    console: Optional[Console] = None
) -> None:
    console = console or Console()
    console.print()
    console.print(Text(title, style="bold cyan"))
    console.print("─" * min(len(title), 50), style="cyan")
