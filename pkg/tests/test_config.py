from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

import pytest

from nftorus.config import (
    config_from_dict,
    parse_config,
    symbol_from_dict,
    symbol_to_dict,
    with_overrides,
)
from nftorus.errors import NFTorusConfigError, NFTorusValidationError
from nftorus.resonance import NFParams
from nftorus.symbols import SymbolSpec, SymbolTerm, TimeProfile

MINIMAL: dict[str, Any] = {
    "lattice": {"basis": [[1, 0], [0, 1]]},
    "params": {"delta": 0.6, "epsilon": 0.04, "tau": 1, "m": 1},
    "truncation": {"cutoff": 12},
}


def _doc(**changes: Any) -> dict[str, Any]:
    document = copy.deepcopy(MINIMAL)
    document.update(changes)
    return document


@pytest.mark.unit
def test_minimal_document_defaults(reference_params: NFParams) -> None:
    config = config_from_dict(_doc(evolution={"t_end": 10}))

    assert config.params == reference_params
    assert config.buffer == 0.25
    assert config.inner_cutoff == 9.0
    assert config.normal_form.steps == 1
    assert config.normal_form.grid is None
    assert config.normal_form.options.quadrature_nodes == 8
    assert config.evolution is not None
    assert config.evolution.h == 0.01
    assert config.evolution.system == "full"
    assert config.evolution.initial.kind == "random"
    assert config.fit.sigma == 2.0
    assert config.output.dir == Path("out")
    assert config.symbol.is_zero()


@pytest.mark.unit
def test_missing_key_is_named() -> None:
    document = _doc()
    del document["params"]["epsilon"]

    with pytest.raises(NFTorusConfigError, match="missing key: epsilon"):
        config_from_dict(document)


@pytest.mark.unit
def test_unknown_keys_are_rejected() -> None:
    with pytest.raises(NFTorusConfigError, match="unknown key in config: colour"):
        config_from_dict(_doc(colour="blue"))
    with pytest.raises(NFTorusConfigError, match="normal_form"):
        config_from_dict(_doc(normal_form={"stepz": 2}))


@pytest.mark.unit
def test_type_errors_are_config_errors() -> None:
    with pytest.raises(NFTorusConfigError, match="cutoff must be a number"):
        config_from_dict(_doc(truncation={"cutoff": "12"}))
    with pytest.raises(NFTorusConfigError, match="steps must be an integer"):
        config_from_dict(_doc(normal_form={"steps": 1.5}))
    with pytest.raises(NFTorusConfigError, match="system"):
        config_from_dict(_doc(evolution={"t_end": 1, "system": "magic"}))
    with pytest.raises(NFTorusConfigError):
        config_from_dict(_doc(normal_form={"time_grid": {"t0": 0, "t1": 1, "samples": 3}}))


@pytest.mark.unit
def test_violated_inequalities_are_validation_errors() -> None:
    document = _doc()
    document["params"]["delta"] = 1.5

    with pytest.raises(NFTorusValidationError) as info:
        config_from_dict(document)

    assert "δ ≥ 1" in info.value.violations
    assert config_from_dict(document, validate=False).violations()


@pytest.mark.unit
def test_structural_violations() -> None:
    small = config_from_dict(_doc(truncation={"cutoff": 4}), validate=False)
    wrong_d = _doc()
    wrong_d["params"]["d"] = 3
    no_xi = _doc(evolution={"t_end": 1, "initial": {"kind": "plane_wave", "xi": [1]}})

    assert any("Λ_inner" in v for v in small.violations())
    assert any("lattice dimension" in v for v in config_from_dict(wrong_d, validate=False).violations())
    assert any("plane_wave" in v for v in config_from_dict(no_xi, validate=False).violations())


@pytest.mark.unit
def test_fit_sigma_must_be_traced() -> None:
    document = _doc(evolution={"t_end": 10, "sigmas": [1]}, fit={"sigma": 2})

    with pytest.raises(NFTorusValidationError, match="fit sigma 2 is not among the evolution sigmas"):
        config_from_dict(document)


@pytest.mark.unit
def test_degenerate_basis_is_a_violation() -> None:
    document = _doc(lattice={"basis": [[1, 2], [2, 4]]})

    with pytest.raises(NFTorusValidationError, match="degenerate lattice"):
        config_from_dict(document)


@pytest.mark.unit
def test_symbol_document_round_trip() -> None:
    spec = SymbolSpec(
        (
            SymbolTerm(TimeProfile("cosine", 2.0, 0.5), {(1, 0): 1.0, (-1, 0): 1.0}, 1.0),
            SymbolTerm(TimeProfile("constant"), {(0, 1): 0.5 + 0.25j, (0, -1): 0.5 - 0.25j}, 0.0),
        )
    )

    assert symbol_from_dict(json.loads(json.dumps(symbol_to_dict(spec)))) == spec


@pytest.mark.unit
def test_repeated_coefficients_add_up() -> None:
    spec = symbol_from_dict(
        {
            "terms": [
                {
                    "profile": {"kind": "constant"},
                    "order": 0,
                    "coeffs": [{"k": [1, 0], "re": 1.0}, {"k": [1, 0], "re": 0.5, "im": 1.0}],
                }
            ]
        }
    )

    assert spec.terms[0].coeffs[(1, 0)] == 1.5 + 1.0j


@pytest.mark.unit
def test_declared_order_below_terms_is_a_config_error() -> None:
    with pytest.raises(NFTorusConfigError, match="Declared order"):
        symbol_from_dict(
            {
                "order": 0.0,
                "terms": [{"profile": {"kind": "constant"}, "order": 1.0, "coeffs": [{"k": [0, 0], "re": 1.0}]}],
            }
        )


@pytest.mark.unit
def test_parse_config_reads_files(tmp_path: Path) -> None:
    good = tmp_path / "good.json"
    good.write_text(json.dumps(_doc()), encoding="utf-8")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")

    assert parse_config(good).cutoff == 12.0
    with pytest.raises(NFTorusConfigError, match="malformed JSON"):
        parse_config(broken)
    with pytest.raises(NFTorusConfigError, match="cannot read config"):
        parse_config(tmp_path / "missing.json")


@pytest.mark.unit
def test_overrides_replace_output_and_seeds() -> None:
    config = config_from_dict(_doc(evolution={"t_end": 10, "initial": {"kind": "random", "seed": 1}}))

    changed = with_overrides(config, out="elsewhere", seed=42)

    assert changed.output.dir == Path("elsewhere")
    assert changed.seed == 42
    assert changed.evolution is not None
    assert changed.evolution.initial.seed == 42
    assert with_overrides(config) is config
