"""Tiny reference instances shipped with the package."""

from importlib.resources import files


def path(name: str):
    """Filesystem path of a bundled file, e.g. ``path("tiny_model.json")``."""
    return files(__name__) / name
