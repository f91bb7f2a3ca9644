"""Channel layouts and named channel regions."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

REGION_FILE = "regions64.json"


@lru_cache(maxsize=None)
def _default_doc() -> dict:
    text = resources.files("attndec").joinpath("data").joinpath(REGION_FILE).read_text()
    return json.loads(text)


def biosemi64() -> tuple[str, ...]:
    return tuple(_default_doc()["channels"])


def channel_labels(n_channels: int) -> tuple[str, ...]:
    """BioSemi names for a 64-channel montage, generic ``E01..`` names otherwise."""
    if n_channels == 64:
        return biosemi64()
    return tuple(f"E{i + 1:02d}" for i in range(n_channels))


def load_region_map(path: str | Path | None = None) -> dict[str, tuple[str, ...]]:
    """Region name -> channel labels, from ``path`` or the shipped 64-channel file."""
    doc = _default_doc() if path is None else json.loads(Path(path).read_text())
    return {name: tuple(chans) for name, chans in doc["regions"].items()}


def region_map_for(labels) -> dict[str, tuple[str, ...]]:
    """Region map matching a montage.

    The shipped map is used when every one of its channels is present;
    otherwise channels are split, in order, into the same four named
    groups with sizes proportional to the 64-channel map.
    """
    labels = tuple(labels)
    default = load_region_map()
    if set(labels) >= {c for chans in default.values() for c in chans}:
        return default
    sizes = [len(chans) for chans in default.values()]
    total = sum(sizes)
    out, start = {}, 0
    for i, name in enumerate(default):
        stop = len(labels) if i == len(sizes) - 1 else start + round(sizes[i] * len(labels) / total)
        out[name] = labels[start:stop]
        start = stop
    return out
