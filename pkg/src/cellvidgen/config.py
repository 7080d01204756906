"""Declarative run configuration: INI files, defaults, and validation.

A config file carries ``[paths]``, ``[generation]``, and ``[scene]``
sections for the generation pipeline, plus optional per-subcommand training
sections. CLI flags override file values, which override defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

OVERLAP_POLICIES = ("forbid", "allow")


@dataclass(frozen=True)
class GenerationConfig:
    """Resolved settings for `generate` / `ablate`."""

    ddpm: Path
    fpm: Path
    shape_model: Path
    output: Path
    num_frames: int = 9
    num_cells: int = 3
    num_sequences: int = 2
    t_first: int = 200
    t_next: int = 10
    seed: int = 0
    crop_size: int = 96
    smoothness: float = 3.0
    anchor_spacing: int = 8
    scene_height: int = 256
    scene_width: int = 256
    motion_sigma: float = 2.0
    rotation_sigma_deg: float = 1.0
    overlap: str = "forbid"


_PATH_KEYS = ("ddpm", "fpm", "shape_model", "output")
_GENERATION_KEYS = {
    "num_frames": int, "num_cells": int, "num_sequences": int, "t_first": int,
    "t_next": int, "seed": int, "crop_size": int, "smoothness": float,
    "anchor_spacing": int,
}
_SCENE_KEYS = {
    "scene_height": int, "scene_width": int, "motion_sigma": float,
    "rotation_sigma_deg": float, "overlap": str,
}
# scene keys appear without the prefix in the [scene] section
_SCENE_FILE_NAMES = {"scene_height": "height", "scene_width": "width",
                     "motion_sigma": "motion_sigma",
                     "rotation_sigma_deg": "rotation_sigma_deg", "overlap": "overlap"}


def read_config_file(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError([f"config file does not parse: {exc}"]) from exc
    return parser


def _collect_raw(parser, overrides: dict) -> dict:
    """Merge file values and overrides into a flat {field: raw string/value} map."""
    raw = {}
    if parser is not None:
        for key in _PATH_KEYS:
            if parser.has_option("paths", key):
                raw[key] = parser.get("paths", key)
        for key in _GENERATION_KEYS:
            if parser.has_option("generation", key):
                raw[key] = parser.get("generation", key)
        for field_name, file_name in _SCENE_FILE_NAMES.items():
            if parser.has_option("scene", file_name):
                raw[field_name] = parser.get("scene", file_name)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return raw


def resolve_generation_config(parser=None, overrides: dict = None) -> GenerationConfig:
    """Apply defaults, coerce types, and enforce ranges; aggregate all problems."""
    raw = _collect_raw(parser, overrides or {})
    problems = []
    values = {}

    for key in _PATH_KEYS:
        if key not in raw:
            problems.append(f"paths.{key}: required path is missing")
        else:
            values[key] = Path(raw[key])
    casts = dict(_GENERATION_KEYS)
    casts.update(_SCENE_KEYS)
    for key, cast in casts.items():
        if key not in raw:
            continue
        try:
            values[key] = cast(raw[key])
        except (TypeError, ValueError):
            problems.append(f"{key}: cannot interpret {raw[key]!r} as {cast.__name__}")

    def rule(ok: bool, message: str):
        if not ok:
            problems.append(message)

    defaults = {f.name: f.default for f in fields(GenerationConfig)}
    merged = {**defaults, **values}
    rule(merged["num_frames"] >= 1, "num_frames: must be >= 1")
    rule(merged["num_cells"] >= 1, "num_cells: must be >= 1")
    rule(merged["num_sequences"] >= 1, "num_sequences: must be >= 1")
    rule(merged["t_first"] >= 1, "t_first: must be >= 1")
    rule(merged["t_next"] >= 0, "t_next: must be >= 0 (0 skips refinement)")
    if merged["t_next"] > merged["t_first"]:
        problems.append(
            f"t_next, t_first: require t_next <= t_first, got {merged['t_next']} > {merged['t_first']}")
    rule(merged["crop_size"] >= 8 and merged["crop_size"] % 2 == 0,
         "crop_size: must be even and >= 8")
    rule(merged["smoothness"] > 0, "smoothness: must be > 0")
    rule(merged["anchor_spacing"] >= 1, "anchor_spacing: must be >= 1")
    rule(merged["scene_height"] >= merged["crop_size"],
         "scene_height: must be >= crop_size")
    rule(merged["scene_width"] >= merged["crop_size"],
         "scene_width: must be >= crop_size")
    rule(merged["motion_sigma"] >= 0, "motion_sigma: must be >= 0")
    rule(merged["rotation_sigma_deg"] >= 0, "rotation_sigma_deg: must be >= 0")
    rule(merged["overlap"] in OVERLAP_POLICIES,
         f"overlap: must be one of {OVERLAP_POLICIES}, got {merged['overlap']!r}")
    for key in ("ddpm", "fpm", "shape_model"):
        if key in values and not values[key].is_file():
            problems.append(f"paths.{key}: no such file: {values[key]}")

    if problems:
        raise ConfigError(problems)
    return GenerationConfig(**{k: merged[k] for k in defaults})


def validate_config(path, overrides: dict = None) -> GenerationConfig:
    """Load + resolve a config file; raises ConfigError listing every violation."""
    return resolve_generation_config(read_config_file(path), overrides)


def section_values(parser, section: str, casts: dict) -> dict:
    """Typed values of one optional section (used by training subcommands)."""
    out = {}
    if parser is None or not parser.has_section(section):
        return out
    problems = []
    for key, cast in casts.items():
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                out[key] = cast(raw)
            except (TypeError, ValueError):
                problems.append(f"{section}.{key}: cannot interpret {raw!r} as {cast.__name__}")
    if problems:
        raise ConfigError(problems)
    return out
