"""Access to the example data files shipped inside the package."""
from importlib import resources
from pathlib import Path

from .errors import InputError

__all__ = ["bundled_path", "list_bundled"]


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled data file, e.g. ``chain8.feeder``."""
    root = resources.files("dopfkit").joinpath("data")
    target = root.joinpath(name)
    if not target.is_file():
        have = ", ".join(sorted(p.name for p in root.iterdir()))
        raise InputError(f"no bundled file {name!r}; have: {have}")
    return Path(str(target))


def list_bundled():
    root = resources.files("dopfkit").joinpath("data")
    return sorted(p.name for p in root.iterdir() if p.name[0] != "_")
