"""Named experiment presets shipped with the workbench."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

from nftorus.config import ExperimentConfig, config_from_dict


@dataclass(frozen=True)
class ExperimentPreset:
    """A ready-to-run configuration document."""

    key: str
    display_name: str
    description: str
    document: dict[str, Any] = field(default_factory=dict)

    def config(self, *, validate: bool = True) -> ExperimentConfig:
        return config_from_dict(copy.deepcopy(self.document), validate=validate)


DEFAULT_PRESET = "reference"

_IDENTITY_2D = {"basis": [[1.0, 0.0], [0.0, 1.0]]}
_REFERENCE_PARAMS = {"delta": 0.6, "epsilon": 0.04, "tau": 1.0, "m": 1.0}
_PERIODIC_GRID = {"t0": 0.0, "t1": 2.0 * math.pi, "samples": 64, "periodic": True}
_COS_X1 = [{"k": [1, 0], "re": 1.0}, {"k": [-1, 0], "re": 1.0}]

_PRESETS: dict[str, ExperimentPreset] = {
    "reference": ExperimentPreset(
        key="reference",
        display_name="Reference torus",
        description="V = cos(t) 2cos(x1) <xi> on the square torus, cutoff 24",
        document={
            "lattice": _IDENTITY_2D,
            "params": _REFERENCE_PARAMS,
            "truncation": {"cutoff": 24.0, "buffer": 0.25},
            "symbol": {
                "terms": [
                    {"profile": {"kind": "cosine", "omega": 1.0, "amp": 1.0}, "order": 1.0, "coeffs": _COS_X1}
                ]
            },
            "normal_form": {"steps": 3, "time_grid": _PERIODIC_GRID, "keep_history": False},
            "evolution": {
                "t_end": 200.0,
                "h": 0.01,
                "sigmas": [1, 2],
                "initial": {"kind": "random", "seed": 0, "decay": 1.0},
                "system": "blocks",
            },
            "fit": {"sigma": 2, "window": [1.0, 200.0]},
            "verification": {"sigmas": [1, 2]},
        },
    ),
    "free": ExperimentPreset(
        key="free",
        display_name="Free flow",
        description="V = 0; every Sobolev norm is conserved",
        document={
            "lattice": _IDENTITY_2D,
            "params": _REFERENCE_PARAMS,
            "truncation": {"cutoff": 8.0},
            "symbol": {"terms": []},
            "normal_form": {"steps": 1, "time_grid": {"t0": 0.0, "t1": 1.0, "samples": 8, "periodic": True}},
            "evolution": {"t_end": 5.0, "h": 0.05, "initial": {"kind": "plane_wave", "xi": [3, 4]}},
            "fit": {"sigma": 2, "window": [1.0, 5.0]},
        },
    ),
    "multiplier": ExperimentPreset(
        key="multiplier",
        display_name="Fourier multiplier",
        description="x-independent V = cos(t) <xi>; absorbed by averaging in one step",
        document={
            "lattice": _IDENTITY_2D,
            "params": _REFERENCE_PARAMS,
            "truncation": {"cutoff": 8.0},
            "symbol": {
                "terms": [
                    {
                        "profile": {"kind": "cosine", "omega": 1.0, "amp": 1.0},
                        "order": 1.0,
                        "coeffs": [{"k": [0, 0], "re": 1.0}],
                    }
                ]
            },
            "normal_form": {"steps": 1, "time_grid": {"t0": 0.0, "t1": 2.0 * math.pi, "samples": 16, "periodic": True}},
            "evolution": {"t_end": 5.0, "h": 0.05, "initial": {"kind": "random", "seed": 0}},
        },
    ),
    "line": ExperimentPreset(
        key="line",
        display_name="Static cosine",
        description="Time-independent V = 2cos(x1) on a small mode set",
        document={
            "lattice": _IDENTITY_2D,
            "params": _REFERENCE_PARAMS,
            "truncation": {"cutoff": 8.0},
            "symbol": {
                "terms": [{"profile": {"kind": "constant", "amp": 1.0}, "order": 0.0, "coeffs": _COS_X1}]
            },
            "normal_form": {"steps": 1, "time_grid": {"t0": 0.0, "t1": 1.0, "samples": 8, "periodic": True}},
            "evolution": {"t_end": 5.0, "h": 0.05, "initial": {"kind": "plane_wave", "xi": [0, 3]}},
        },
    ),
}


def get_preset(key: str | None) -> ExperimentPreset:
    """Return the preset matching *key*, falling back to the default."""
    normalized = (key or "").lower()
    return _PRESETS.get(normalized, _PRESETS[DEFAULT_PRESET])


def available_presets() -> Iterable[ExperimentPreset]:
    """Yield all presets in deterministic order."""
    return (_PRESETS[k] for k in sorted(_PRESETS))


def preset_options() -> list[dict[str, str]]:
    return [{"value": preset.key, "label": preset.display_name} for preset in available_presets()]
