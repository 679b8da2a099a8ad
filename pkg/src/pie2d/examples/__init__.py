"""Bundled PDE files and their expected verdicts."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from ..pde_model import PdeSpec, parse_pde


def names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files(__name__).iterdir() if p.name.endswith(".pde"))


def path(name: str) -> Path:
    fname = name if name.endswith(".pde") else name + ".pde"
    return Path(str(resources.files(__name__).joinpath(fname)))


def text(name: str) -> str:
    return path(name).read_text()


def default_params(name: str) -> dict:
    for entry in manifest():
        if entry["file"] == name:
            return dict(entry["params"])
    return {}


def load(name: str, **params) -> PdeSpec:
    """Parse a bundled example; template values default to the manifest's."""
    return parse_pde(text(name), {**default_params(name), **params}, name=name)


def manifest() -> list[dict]:
    return json.loads(resources.files(__name__).joinpath("manifest.json").read_text())
