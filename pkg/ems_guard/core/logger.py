"""Enhanced logging system for ems-guard."""

import logging
import sys
from functools import lru_cache
from typing import Dict, Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table


def is_pipe_mode() -> bool:
    """Detect if stdout carries machine output (CSV/JSON) rather than a terminal."""
    return not sys.stdout.isatty()


class EmsGuardLogger:
    """Stage-tagged rich logger for the ems-guard pipeline."""

    def __init__(self, name: str, level: str = "INFO"):
        # When results are piped, keep stdout clean and log to stderr
        self.is_pipe_mode = is_pipe_mode()
        console_file = sys.stderr if self.is_pipe_mode else sys.stdout
        self.console = Console(file=console_file)

        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, level.upper(), logging.INFO))
        self.logger.propagate = False

        # one handler per logger, even when rebuilt
        self.logger.handlers.clear()

        rich_handler = RichHandler(
            console=self.console,
            show_time=True,
            show_path=False,
            markup=True,
            rich_tracebacks=True,
        )
        rich_handler.setFormatter(logging.Formatter("%(message)s"))
        self.logger.addHandler(rich_handler)

    def set_level(self, level: str) -> None:
        """Change the log level at runtime (CLI --log-level)."""
        self.logger.setLevel(getattr(logging, level.upper(), logging.INFO))

    def startup_banner(self, config_dict: dict, case_name: Optional[str] = None):
        """Print the case name and the active settings."""
        if self.is_pipe_mode:
            self.logger.info("ems-guard starting...")
            return

        subtitle = "[dim]LR attack detection & corrective dispatch[/dim]"
        if case_name:
            subtitle = f"[dim]case: {case_name}[/dim]"
        banner = Panel.fit(
            f"[bold blue]⚡ ems-guard[/bold blue]\n{subtitle}",
            border_style="blue",
        )
        self.console.print(banner)

        table = Table(title="🔧 Configuration", show_header=True, header_style="bold magenta")
        table.add_column("Setting", style="cyan")
        table.add_column("Value", style="green")

        for key, value in config_dict.items():
            if isinstance(value, dict):
                for sub_key, sub_value in value.items():
                    table.add_row(f"{key}.{sub_key}", str(sub_value))
            else:
                table.add_row(key, str(value))

        self.console.print(table)

    def stage_status(self, stage: str, status: str, details: Optional[str] = None):
        """Log pipeline stage status with appropriate emoji."""
        emoji_map = {
            "ready": "✅",
            "done": "✅",
            "error": "❌",
            "warning": "⚠️",
            "running": "🔄",
            "skipped": "⏸️",
        }

        emoji = emoji_map.get(status, "📋")
        message = f"{emoji} {stage.upper()}: {status}"
        if details:
            message += f" - {details}"

        if status == "error":
            self.logger.error(message)
        elif status == "warning":
            self.logger.warning(message)
        else:
            self.logger.info(message)

    def solve_completed(self, what: str, status: str, duration: float, backend: str):
        """Log a finished LP solve."""
        emoji = "✅" if status == "optimal" else "❌"
        self.logger.debug(
            f"{emoji} [bold cyan]{what}[/bold cyan] {status} via [yellow]{backend}[/yellow] "
            f"in {duration * 1000:.1f} ms"
        )

    def calibration_summary(self, branch: int, alpha_start: Optional[float], tnsb: int,
                            weakest_d: Optional[int], threshold: Optional[int]):
        """Log the outcome of a threshold calibration."""
        if threshold is None:
            self.logger.info(f"🛡️ Line [bold]{branch}[/bold]: not vulnerable (TNSB {tnsb})")
            return
        self.logger.info(
            f"🎯 Line [bold]{branch}[/bold]: α_start={alpha_start:.4f}, TNSB={tnsb}, "
            f"weakest d={weakest_d}, threshold={threshold}"
        )

    def detection_summary(self, snapshot_id: str, npdsb: Dict[int, int], flagged: list):
        """Log a detection report."""
        if not flagged:
            self.logger.debug(f"🟢 Snapshot {snapshot_id}: clean")
            return
        shown = ", ".join(f"{k}:{npdsb[k]}" for k in flagged)
        self.logger.warning(f"🚨 Snapshot {snapshot_id}: flagged lines [{shown}]")

    def error(self, message: str, stage: Optional[str] = None):
        """Error line, optionally tagged with a stage."""
        prefix = f"[red]{stage.upper()}[/red] " if stage else ""
        self.logger.error(f"❌ {prefix}{message}")

    def warning(self, message: str, stage: Optional[str] = None):
        """Warning line, optionally tagged with a stage."""
        prefix = f"[yellow]{stage.upper()}[/yellow] " if stage else ""
        self.logger.warning(f"⚠️ {prefix}{message}")

    def info(self, message: str, stage: Optional[str] = None):
        """Info line, optionally tagged with a stage."""
        prefix = f"[blue]{stage.upper()}[/blue] " if stage else ""
        self.logger.info(f"ℹ️ {prefix}{message}")

    def debug(self, message: str, stage: Optional[str] = None):
        """Debug line, optionally tagged with a stage."""
        prefix = f"[dim]{stage.upper()}[/dim] " if stage else ""
        self.logger.debug(f"🔍 {prefix}{message}")


def setup_logger(name: str = "ems_guard", level: str = "INFO") -> EmsGuardLogger:
    """Create an ems-guard logger at ``level``."""
    return EmsGuardLogger(name, level)


@lru_cache(maxsize=1)
def get_logger() -> EmsGuardLogger:
    """Shared package logger, created on first use."""
    from .config import get_config

    return setup_logger("ems_guard", get_config().log_level)
