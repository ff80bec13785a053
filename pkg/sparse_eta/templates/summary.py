"""
Summary tables for training runs and evaluation reports.
"""

import math
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

import pandas as pd
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

if TYPE_CHECKING:
    from sparse_eta.organisms.em_trainer import IterationRecord
    from sparse_eta.organisms.metrics import RouteReport, TteReport


def _fmt(value: Optional[float], digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return f"{value:.{digits}f}"


def display_em_summary(
    label: str,
    history: Sequence["IterationRecord"],
    stop_reason: Optional[str],
    num_pairs: int,
    console: Optional[Console] = None
) -> None:
    """
    Show one row per EM iteration and how the run ended.

    Args:
        label: The sampling-interval label of the corpus.
        history: Per-iteration diagnostics in order.
        stop_reason: Why training stopped, or None if it has not.
        num_pairs: How many training pairs were used.
        console: The Rich console to print to. If None, a new console is created.
    """
    console = console or Console()

    table = Table(title=f"EM iterations ({label})", title_style="bold blue")
    table.add_column("iter", justify="right")
    table.add_column("NLL before", justify="right")
    table.add_column("NLL after", justify="right")
    table.add_column("max |Δμ| s", justify="right")
    table.add_column("reassigned", justify="right")
    table.add_column("epochs", justify="right", style="dim")
    table.add_column("val NLL", justify="right", style="dim")
    for r in history:
        table.add_row(
            str(r.iteration),
            _fmt(r.mean_nll_before, 4),
            _fmt(r.mean_nll, 4),
            _fmt(r.delta_mu_max),
            str(r.reassigned_count),
            str(r.epochs_run),
            _fmt(r.val_nll, 4),
        )
    console.print(table)

    status = Text()
    status.append(f"{num_pairs} training pairs, {len(history)} iterations\n")
    status.append("stopped: ", style="dim")
    status.append(stop_reason or "not finished", style="green" if stop_reason else "yellow")
    console.print(Panel(status, border_style="blue", expand=False))


def display_tte_report(
    reports: Mapping[str, "TteReport"],
    console: Optional[Console] = None
) -> None:
    """One row per sampling interval: sample count, RMSE, MAE and MAPE."""
    console = console or Console()
    table = Table(title="Travel-time estimation", title_style="bold blue")
    table.add_column("sampling", style="cyan")
    table.add_column("n", justify="right")
    table.add_column("RMSE min", justify="right")
    table.add_column("MAE min", justify="right")
    table.add_column("MAPE %", justify="right")
    for label, r in reports.items():
        table.add_row(label, str(r.n), _fmt(r.rmse_min), _fmt(r.mae_min), _fmt(r.mape_pct, 2))
    console.print(table)


def display_route_report(
    reports: Mapping[str, "RouteReport"],
    console: Optional[Console] = None
) -> None:
    """Mean route-recovery accuracy per sampling interval, with the best and worst half hour."""
    console = console or Console()
    table = Table(title="Route recovery", title_style="bold blue")
    table.add_column("sampling", style="cyan")
    table.add_column("n", justify="right")
    table.add_column("accuracy", justify="right")
    table.add_column("worst bin", style="red")
    table.add_column("best bin", style="green")
    for label, r in reports.items():
        filled = [b for b in r.bins if b.mean_accuracy is not None]
        worst = min(filled, key=lambda b: b.mean_accuracy, default=None)
        best = max(filled, key=lambda b: b.mean_accuracy, default=None)
        table.add_row(
            label,
            str(r.n),
            _fmt(r.mean_accuracy),
            f"{worst.label} {_fmt(worst.mean_accuracy)}" if worst else "-",
            f"{best.label} {_fmt(best.mean_accuracy)}" if best else "-",
        )
    console.print(table)


def display_artifacts(
    paths: Sequence[Path],
    out_dir: Path,
    console: Optional[Console] = None
) -> None:
    console = console or Console()
    table = Table(title="Artifacts", title_style="bold green")
    table.add_column("file", style="green")
    for p in paths:
        try:
            shown = str(Path(p).relative_to(out_dir))
        except ValueError:
            shown = str(p)
        table.add_row(shown)
    console.print(table)
    console.print(f"[dim]{len(paths)} files under {out_dir}[/dim]")


def display_dataframe_summary(
    df: pd.DataFrame,
    title: str = "Data Summary",
    row_limit: int = 10,
    console: Optional[Console] = None
) -> None:
    """
    Show the first rows of a DataFrame as a Rich table.

    Args:
        df: The pandas DataFrame to display.
        title: The title for the summary table.
        row_limit: How many rows to show at most.
        console: The Rich console to print to. If None, a new console is created.
    """
    console = console or Console()

    table = Table(title=title, title_style="bold blue")
    for column in df.columns:
        table.add_column(str(column), style="blue")
    for _, row in df.head(row_limit).iterrows():
        table.add_row(*[
            _fmt(v) if isinstance(v, float) else str(v)
            for v in row.values
        ])
    if len(df) > row_limit:
        console.print(f"[dim]Showing first {row_limit} of {len(df)} rows.[/dim]")
    console.print(table)
