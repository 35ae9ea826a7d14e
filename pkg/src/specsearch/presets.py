"""Bundled experiment fixtures: the 8x8 workspace, its demonstrations, the
target and reference automata, and ready-made search configurations."""

from __future__ import annotations

from functools import lru_cache
from importlib.resources import files

from .mdp import GridSpec, Mdp, Path, build_gridworld, parse_demos, parse_map
from .task import MONOLITHIC, Dfa, Incremental, dfa_from_text

MANDATORY_POSITIVES = frozenset({("y",), ("y", "y")})


def _data_text(name: str) -> str:
    return files("specsearch").joinpath("data", name).read_text(encoding="utf-8")


def _parse_dfa_resource(name: str) -> Dfa:
    text = " ".join(
        line
        for line in _data_text(name).splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    )
    return dfa_from_text(text)


def bundled_grid() -> GridSpec:
    return parse_map(_data_text("grid8.map"))


@lru_cache(maxsize=1)
def bundled_mdp() -> Mdp:
    return build_gridworld(bundled_grid())


def monolithic_demos() -> list[Path]:
    return parse_demos(_data_text("monolithic.demos"))


def incremental_demos() -> list[Path]:
    return parse_demos(_data_text("incremental.demos"))


def diagnostic_paths() -> dict[str, Path]:
    """Probe paths keyed by what they exercise: a valid blue-then-brown
    route (positive), a brown-skipping shortcut, and a red crossing."""
    paths = parse_demos(_data_text("diagnostics.demos"))
    return {"repays_debt": paths[0], "skips_brown": paths[1], "crosses_red": paths[2]}


@lru_cache(maxsize=1)
def ground_truth_dfa() -> Dfa:
    return _parse_dfa_resource("ground_truth.dfa")


@lru_cache(maxsize=1)
def reference_dfa() -> Dfa:
    return _parse_dfa_resource("reference_avoid_reach.dfa")


def monolithic_repr():
    return MONOLITHIC


def incremental_repr() -> Incremental:
    return Incremental(reference_dfa(), MANDATORY_POSITIVES)
