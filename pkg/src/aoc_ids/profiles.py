"""Dataset-keyed defaults shipped with the package (``profiles.json``)."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .dataset import DatasetDescriptor


@lru_cache(maxsize=None)
def _profiles() -> dict:
    return json.loads(resources.files(__package__).joinpath("profiles.json").read_text())


def profile_names() -> list[str]:
    return sorted(_profiles())


def load_profile(name: str) -> dict:
    try:
        return _profiles()[name]
    except KeyError:
        raise KeyError(f"unknown dataset profile {name!r}; known: {profile_names()}") from None


def descriptor_for(name: str) -> DatasetDescriptor:
    return DatasetDescriptor.from_dict(load_profile(name)["descriptor"])
