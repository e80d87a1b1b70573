"""Bundled scenario presets.

Each preset is a plain `key = value` config shipped as package data. The
constants inside were frozen against the calibration campaign recorded in the
acceptance tests, so loading one reproduces those runs bit for bit.
"""

from importlib import resources

from ..harness import ScenarioConfig, build_scenario, parse_config_text

__all__ = ["preset_names", "preset_text", "load_preset"]


def preset_names() -> tuple:
    """Sorted names of every bundled preset, without the .cfg suffix."""
    names = []
    for entry in resources.files(__name__).iterdir():
        if entry.name.endswith(".cfg"):
            names.append(entry.name[: -len(".cfg")])
    return tuple(sorted(names))


def preset_text(name: str) -> str:
    """Raw config text of a bundled preset; KeyError when unknown."""
    ref = resources.files(__name__) / f"{name}.cfg"
    if not ref.is_file():
        raise KeyError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return ref.read_text(encoding="utf-8")


def load_preset(name: str) -> ScenarioConfig:
    """Parse a bundled preset into a fully validated scenario config."""
    return build_scenario(parse_config_text(preset_text(name)))
