"""Bundled run configurations.

Each .cfg file here is a complete argument to --config.  Names without
a directory part or suffix resolve against this package, so
"--config decay" finds decay.cfg whether the package is installed flat
or zipped.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

__all__ = ["bundled", "resolve"]


def bundled() -> list[str]:
    """Names of the bundled configs, without the .cfg suffix."""
    names = []
    for entry in resources.files(__package__).iterdir():
        if entry.name.endswith(".cfg"):
            names.append(entry.name[:-4])
    return sorted(names)


def resolve(name) -> Path:
    """A config path: an existing file wins, else a bundled name."""
    p = Path(name)
    if p.is_file():
        return p
    if p.suffix == "" and p.name == str(name):
        entry = resources.files(__package__) / f"{name}.cfg"
        if entry.is_file():
            return Path(str(entry))
    raise FileNotFoundError(
        f"no config file {str(name)!r} and no bundled config of that name "
        f"(bundled: {', '.join(bundled())})")
