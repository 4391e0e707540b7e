"""Bundled warehouse layout assets."""

from __future__ import annotations

from importlib import resources

from ..grid import GridMap, parse_map

MAP_NAMES = ("restricted", "open_top", "open")

_ALIASES = {"open-top": "open_top", "opentop": "open_top"}


def map_text(name: str) -> str:
    key = _ALIASES.get(name, name)
    if key not in MAP_NAMES:
        raise KeyError(f"unknown map {name!r}; bundled maps: {', '.join(MAP_NAMES)}")
    return resources.files(__package__).joinpath(f"{key}.map").read_text()


def load_map(name: str) -> GridMap:
    """Load a bundled layout by name (restricted, open_top, open)."""
    return parse_map(map_text(name), require_endpoints=True)
