"""Shared Rich console and table helpers for the CLI."""

import os
import sys
import platform
from typing import Any, Iterable, Mapping, Sequence

from rich.console import Console as RichConsole
from rich.table import Table


def _setup_windows_console():
    """Switch the Windows console to UTF-8 so box drawing renders."""
    if platform.system() != "Windows":
        return
    os.environ["PYTHONIOENCODING"] = "utf-8"
    try:
        import ctypes
        ctypes.windll.kernel32.SetConsoleOutputCP(65001)
        if hasattr(sys.stdout, "reconfigure"):
            sys.stdout.reconfigure(encoding="utf-8")
        if hasattr(sys.stderr, "reconfigure"):
            sys.stderr.reconfigure(encoding="utf-8")
    except Exception:
        pass


class SafeConsole(RichConsole):
    """Rich console that degrades to ASCII instead of crashing on encode errors."""

    def __init__(self, *args, **kwargs):
        _setup_windows_console()
        kwargs.setdefault("width", None)
        if platform.system() == "Windows":
            kwargs.setdefault("legacy_windows", False)
        super().__init__(*args, **kwargs)

    def print(self, *objects: Any, **kwargs) -> None:
        try:
            super().print(*objects, **kwargs)
        except UnicodeEncodeError:
            safe = [
                obj.encode("ascii", "replace").decode("ascii") if isinstance(obj, str) else obj
                for obj in objects
            ]
            super().print(*safe, **kwargs)


def rows_table(title: str, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Table:
    """Build a Rich table from dict rows, in column order."""
    table = Table(title=title, show_header=True, header_style="bold magenta")
    for i, name in enumerate(columns):
        table.add_column(name, style="cyan" if i == 0 else "green",
                         justify="left" if i == 0 else "right")
    for row in rows:
        table.add_row(*(_cell(row.get(name, "")) for name in columns))
    return table


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


console = SafeConsole()
