import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console()
err_console = Console(stderr=True)

_installed = False


def setup_logging(level: str = "INFO") -> None:
    """Route library logging through rich on stderr. Safe to call twice."""
    global _installed
    root = logging.getLogger("src")
    root.setLevel(level.upper())
    if _installed:
        return
    handler = RichHandler(console=err_console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    root.addHandler(handler)
    _installed = True
