"""Strict JSON experiment configuration."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from nftorus.errors import NFTorusConfigError, NFTorusValidationError
from nftorus.geometry import LatticeBasis, MetricTensor, metric_from_basis
from nftorus.normal_form import NFOptions, TimeGrid
from nftorus.resonance import NFParams, validate_params
from nftorus.symbols import PROFILE_KINDS, SymbolSpec, SymbolTerm, TimeProfile
from nftorus.weyl import ModeSet

LOGGER = logging.getLogger(__name__)

INITIAL_KINDS = ("plane_wave", "random")
EVOLUTION_SYSTEMS = ("full", "normal_form", "normal_form_remainder", "blocks")

# Smallest inner-annulus cutoff that still leaves a few <eta>-deciles to fit.
MIN_INNER_CUTOFF = 4.0

_TOP_KEYS = {
    "lattice", "params", "truncation", "symbol", "normal_form",
    "evolution", "fit", "verification", "output", "seed",
}


def _reject_unknown(block: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise NFTorusConfigError(f"unknown key in {where}: {', '.join(unknown)}")


def _mapping(value: Any, where: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise NFTorusConfigError(f"{where} must be an object")
    return value


def _require(block: Mapping[str, Any], key: str) -> Any:
    if key not in block:
        raise NFTorusConfigError(f"missing key: {key}")
    return block[key]


def _finite(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NFTorusConfigError(f"{key} must be a number, got {value!r}")
    number = float(value)
    if not math.isfinite(number):
        raise NFTorusConfigError(f"{key} must be finite, got {value!r}")
    return number


def _integer(value: Any, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise NFTorusConfigError(f"{key} must be an integer, got {value!r}")
    return value


def _numbers(value: Any, key: str) -> list[float]:
    if not isinstance(value, list):
        raise NFTorusConfigError(f"{key} must be a list of numbers")
    return [_finite(item, key) for item in value]


def _choice(value: Any, key: str, choices: tuple[str, ...]) -> str:
    if value not in choices:
        raise NFTorusConfigError(f"{key} must be one of {choices}, got {value!r}")
    return str(value)


def _flag(value: Any, key: str) -> bool:
    if not isinstance(value, bool):
        raise NFTorusConfigError(f"{key} must be true or false")
    return value


def symbol_from_dict(data: Mapping[str, Any]) -> SymbolSpec:
    """{"terms": [{"profile", "order", "coeffs": [{"k", "re", "im"}]}], "order"?}."""
    data = _mapping(data, "symbol")
    _reject_unknown(data, {"terms", "order"}, "symbol")
    raw_terms = data.get("terms", [])
    if not isinstance(raw_terms, list):
        raise NFTorusConfigError("symbol.terms must be a list")
    terms = []
    for raw in raw_terms:
        raw = _mapping(raw, "symbol term")
        _reject_unknown(raw, {"profile", "order", "coeffs"}, "symbol term")
        profile_data = _mapping(_require(raw, "profile"), "profile")
        _reject_unknown(profile_data, {"kind", "omega", "amp"}, "profile")
        profile = TimeProfile(
            kind=_choice(_require(profile_data, "kind"), "kind", PROFILE_KINDS),
            omega=_finite(profile_data.get("omega", 0.0), "omega"),
            amp=_finite(profile_data.get("amp", 1.0), "amp"),
        )
        coeffs: dict[tuple[int, ...], complex] = {}
        for entry in _require(raw, "coeffs"):
            entry = _mapping(entry, "coefficient")
            _reject_unknown(entry, {"k", "re", "im"}, "coefficient")
            k = tuple(_integer(v, "k") for v in _require(entry, "k"))
            value = complex(_finite(_require(entry, "re"), "re"), _finite(entry.get("im", 0.0), "im"))
            coeffs[k] = coeffs.get(k, 0j) + value
        terms.append(SymbolTerm(profile, coeffs, _finite(_require(raw, "order"), "order")))
    declared = data.get("order")
    try:
        return SymbolSpec(tuple(terms), None if declared is None else _finite(declared, "order"))
    except NFTorusValidationError as exc:
        raise NFTorusConfigError(str(exc)) from exc


def symbol_to_dict(spec: SymbolSpec) -> dict[str, Any]:
    return {
        "order": spec.order,
        "terms": [
            {
                "profile": {"kind": term.profile.kind, "omega": term.profile.omega, "amp": term.profile.amp},
                "order": term.order,
                "coeffs": [
                    {"k": list(k), "re": c.real, "im": c.imag} for k, c in sorted(term.coeffs.items())
                ],
            }
            for term in spec.terms
        ],
    }


@dataclass(frozen=True)
class NormalFormConfig:
    steps: int = 1
    grid: TimeGrid | None = None
    options: NFOptions = field(default_factory=NFOptions)


@dataclass(frozen=True)
class InitialState:
    kind: str = "random"
    xi: tuple[int, ...] | None = None
    seed: int | None = None
    decay: float = 1.0


@dataclass(frozen=True)
class EvolutionConfig:
    t_end: float
    s: float = 0.0
    h: float = 0.01
    sigmas: tuple[float, ...] = (1.0, 2.0)
    initial: InitialState = field(default_factory=InitialState)
    sigma_remainder: float = 1.0
    system: str = "full"


@dataclass(frozen=True)
class FitConfig:
    sigma: float = 2.0
    window: tuple[float, float] | None = None


@dataclass(frozen=True)
class OutputConfig:
    dir: Path = Path("out")
    cache_dir: Path | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    basis: LatticeBasis
    params: NFParams
    cutoff: float
    symbol: SymbolSpec
    buffer: float = 0.25
    normal_form: NormalFormConfig = field(default_factory=NormalFormConfig)
    evolution: EvolutionConfig | None = None
    fit: FitConfig = field(default_factory=FitConfig)
    verification_sigmas: tuple[float, ...] = (1.0, 2.0)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    @property
    def metric(self) -> MetricTensor:
        return metric_from_basis(self.basis)

    @property
    def inner_cutoff(self) -> float:
        return self.cutoff * (1.0 - self.buffer)

    def modes(self) -> ModeSet:
        return ModeSet.build(self.cutoff, self.metric)

    def violations(self) -> list[str]:
        found = validate_params(self.params)
        try:
            metric_from_basis(self.basis)
        except NFTorusValidationError as exc:
            found.append(str(exc))
        if self.params.d != self.basis.dimension:
            found.append(f"d = {self.params.d} differs from the lattice dimension {self.basis.dimension}")
        if not 0 <= self.buffer < 1:
            found.append("buffer outside [0, 1)")
        if self.inner_cutoff < MIN_INNER_CUTOFF:
            found.append(f"Λ_inner = {self.inner_cutoff:g} < {MIN_INNER_CUTOFF:g}")
        evolution = self.evolution
        if evolution is not None:
            if not evolution.h > 0:
                found.append("h ≤ 0")
            if not evolution.t_end > evolution.s:
                found.append("t_end ≤ s")
            initial = evolution.initial
            if initial.kind == "plane_wave" and (initial.xi is None or len(initial.xi) != self.basis.dimension):
                found.append("plane_wave initial state needs xi of the lattice dimension")
            if self.fit.sigma not in (0.0, *evolution.sigmas):
                found.append(f"fit sigma {self.fit.sigma:g} is not among the evolution sigmas")
        return found

    def validate(self) -> ExperimentConfig:
        found = self.violations()
        if found:
            raise NFTorusValidationError("; ".join(found), found)
        return self


def _params(data: Mapping[str, Any], dimension: int) -> NFParams:
    data = _mapping(data, "params")
    _reject_unknown(data, {"delta", "epsilon", "tau", "m", "d"}, "params")
    return NFParams(
        delta=_finite(_require(data, "delta"), "delta"),
        epsilon=_finite(_require(data, "epsilon"), "epsilon"),
        tau=_finite(_require(data, "tau"), "tau"),
        m=_finite(_require(data, "m"), "m"),
        d=_integer(data.get("d", dimension), "d"),
    )


def _normal_form(data: Mapping[str, Any]) -> NormalFormConfig:
    data = _mapping(data, "normal_form")
    _reject_unknown(
        data,
        {"steps", "time_grid", "quadrature_nodes", "derivative", "conjugation", "lie_order",
         "keep_history", "spectral_check"},
        "normal_form",
    )
    grid = None
    if "time_grid" in data:
        raw = _mapping(data["time_grid"], "time_grid")
        _reject_unknown(raw, {"t0", "t1", "samples", "periodic"}, "time_grid")
        try:
            grid = TimeGrid(
                t0=_finite(_require(raw, "t0"), "t0"),
                t1=_finite(_require(raw, "t1"), "t1"),
                samples=_integer(_require(raw, "samples"), "samples"),
                periodic=_flag(raw.get("periodic", False), "periodic"),
            )
        except NFTorusValidationError as exc:
            raise NFTorusConfigError(str(exc)) from exc
    options = NFOptions(
        quadrature_nodes=_integer(data.get("quadrature_nodes", 8), "quadrature_nodes"),
        derivative=_choice(data.get("derivative", "fd4"), "derivative", ("fd4", "spectral")),
        conjugation=_choice(data.get("conjugation", "exact"), "conjugation", ("exact", "lie")),
        lie_order=_integer(data.get("lie_order", 8), "lie_order"),
        keep_history=_flag(data.get("keep_history", True), "keep_history"),
        spectral_check=_flag(data.get("spectral_check", False), "spectral_check"),
    )
    return NormalFormConfig(steps=_integer(data.get("steps", 1), "steps"), grid=grid, options=options)


def _initial(data: Mapping[str, Any]) -> InitialState:
    data = _mapping(data, "initial")
    _reject_unknown(data, {"kind", "xi", "seed", "decay"}, "initial")
    kind = _choice(_require(data, "kind"), "kind", INITIAL_KINDS)
    if kind == "plane_wave":
        return InitialState(kind=kind, xi=tuple(_integer(v, "xi") for v in _require(data, "xi")))
    seed = data.get("seed")
    return InitialState(
        kind=kind,
        seed=None if seed is None else _integer(seed, "seed"),
        decay=_finite(data.get("decay", 1.0), "decay"),
    )


def _evolution(data: Mapping[str, Any]) -> EvolutionConfig:
    data = _mapping(data, "evolution")
    _reject_unknown(data, {"s", "t_end", "h", "sigmas", "initial", "sigma_remainder", "system"}, "evolution")
    return EvolutionConfig(
        t_end=_finite(_require(data, "t_end"), "t_end"),
        s=_finite(data.get("s", 0.0), "s"),
        h=_finite(data.get("h", 0.01), "h"),
        sigmas=tuple(_numbers(data.get("sigmas", [1, 2]), "sigmas")),
        initial=_initial(data["initial"]) if "initial" in data else InitialState(),
        sigma_remainder=_finite(data.get("sigma_remainder", 1.0), "sigma_remainder"),
        system=_choice(data.get("system", "full"), "system", EVOLUTION_SYSTEMS),
    )


def _fit(data: Mapping[str, Any]) -> FitConfig:
    data = _mapping(data, "fit")
    _reject_unknown(data, {"sigma", "window"}, "fit")
    window = None
    if "window" in data:
        bounds = _numbers(data["window"], "window")
        if len(bounds) != 2:
            raise NFTorusConfigError("window must be [t_a, t_b]")
        window = (bounds[0], bounds[1])
    return FitConfig(sigma=_finite(data.get("sigma", 2.0), "sigma"), window=window)


def config_from_dict(data: Mapping[str, Any], *, validate: bool = True) -> ExperimentConfig:
    """Build an ExperimentConfig; parse problems raise NFTorusConfigError,
    violated inequalities raise NFTorusValidationError."""
    data = _mapping(data, "config")
    _reject_unknown(data, _TOP_KEYS, "config")

    lattice = _mapping(_require(data, "lattice"), "lattice")
    _reject_unknown(lattice, {"basis"}, "lattice")
    rows = _require(lattice, "basis")
    if not isinstance(rows, list) or not rows:
        raise NFTorusConfigError("basis must be a nonempty list of vectors")
    try:
        basis = LatticeBasis([_numbers(row, "basis") for row in rows])
    except ValueError as exc:
        raise NFTorusConfigError(f"basis rows must have equal length: {exc}") from exc

    truncation = _mapping(_require(data, "truncation"), "truncation")
    _reject_unknown(truncation, {"cutoff", "buffer"}, "truncation")

    verification = _mapping(data.get("verification", {}), "verification")
    _reject_unknown(verification, {"sigmas"}, "verification")
    output = _mapping(data.get("output", {}), "output")
    _reject_unknown(output, {"dir", "cache_dir"}, "output")
    cache_dir = output.get("cache_dir")

    config = ExperimentConfig(
        basis=basis,
        params=_params(_require(data, "params"), basis.dimension),
        cutoff=_finite(_require(truncation, "cutoff"), "cutoff"),
        buffer=_finite(truncation.get("buffer", 0.25), "buffer"),
        symbol=symbol_from_dict(data.get("symbol", {"terms": []})),
        normal_form=_normal_form(data.get("normal_form", {})),
        evolution=_evolution(data["evolution"]) if "evolution" in data else None,
        fit=_fit(data.get("fit", {})),
        verification_sigmas=tuple(_numbers(verification.get("sigmas", [1, 2]), "sigmas")),
        output=OutputConfig(
            dir=Path(str(output.get("dir", "out"))),
            cache_dir=None if cache_dir is None else Path(str(cache_dir)),
        ),
        seed=_integer(data.get("seed", 0), "seed"),
    )
    return config.validate() if validate else config


def parse_config(path: str | Path, *, validate: bool = True) -> ExperimentConfig:
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise NFTorusConfigError(f"cannot read config {source}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NFTorusConfigError(f"malformed JSON in {source}: {exc}") from exc
    LOGGER.debug("Parsed config %s", source)
    return config_from_dict(data, validate=validate)


def with_overrides(
    config: ExperimentConfig,
    *,
    out: str | Path | None = None,
    seed: int | None = None,
) -> ExperimentConfig:
    """Apply command-line overrides; a seed also replaces the initial-state seed."""
    if out is not None:
        config = replace(config, output=replace(config.output, dir=Path(out)))
    if seed is not None:
        config = replace(config, seed=seed)
        if config.evolution is not None and config.evolution.initial.kind == "random":
            initial = replace(config.evolution.initial, seed=seed)
            config = replace(config, evolution=replace(config.evolution, initial=initial))
    return config
