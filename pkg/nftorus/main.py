#!/usr/bin/env python3
"""Command-line entry point: validate, partition, normal-form, evolve, fit, all."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from nftorus.cache import PartitionCache, save_operator
from nftorus.clusters import (
    Partition,
    block_invariance_defect,
    norm_sandwich_check,
    partition,
    partition_to_dict,
    verify_partition,
)
from nftorus.config import EvolutionConfig, ExperimentConfig, parse_config, with_overrides
from nftorus.dynamics import (
    Evolution,
    FullHamiltonian,
    StateVector,
    duhamel_bound_check,
    evolve,
    evolve_blocks,
    fit_growth,
)
from nftorus.errors import (
    NFTorusConfigError,
    NFTorusError,
    NFTorusNumericalError,
    NFTorusValidationError,
)
from nftorus.normal_form import NFResult, run_normal_form
from nftorus.policies import NumericalPolicy
from nftorus.presets import DEFAULT_PRESET, get_preset, preset_options
from nftorus.reporting import RunReport, write_json, write_trace_csv
from nftorus.resonance import normal_form_defect
from nftorus.weyl import ModeSet

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARSE_ERROR = 1
EXIT_VALIDATION_ERROR = 2
EXIT_NUMERICAL_ABORT = 3

SUBCOMMANDS = ("validate", "partition", "normal-form", "evolve", "fit", "all")


class Pipeline:
    """Runs the stages of one experiment, computing shared inputs once."""

    def __init__(self, config: ExperimentConfig, report: RunReport, policy: NumericalPolicy) -> None:
        self.config = config
        self.report = report
        self.policy = replace(policy, buffer=config.buffer)
        self.out = config.output.dir
        self._modes: ModeSet | None = None
        self._partition: Partition | None = None
        self._nf: NFResult | None = None
        self._evolution: Evolution | None = None
        self._k_sigma: dict[float, float] = {}

    @property
    def modes(self) -> ModeSet:
        if self._modes is None:
            self._modes = self.config.modes()
            LOGGER.info("Mode set at cutoff %g has %d modes", self.config.cutoff, self._modes.size)
        return self._modes

    def partition(self) -> Partition:
        if self._partition is not None:
            return self._partition
        config = self.config
        with self.report.timed("partition"):
            cache = PartitionCache(config.output.cache_dir) if config.output.cache_dir else None
            part = cache.load(self.modes, config.params) if cache else None
            if part is None:
                part = partition(self.modes, config.params, self.modes.metric, self.policy)
                if cache:
                    cache.store(part, config.params)
            verification = verify_partition(
                part, config.params, self.modes.metric, config.verification_sigmas, self.policy
            )
            self._k_sigma = dict(verification.k_sigma)
            rng = np.random.Generator(np.random.Philox(config.seed))
            sandwich = {
                str(sigma): asdict(norm_sandwich_check(part, self.modes.metric, sigma, rng, k_sigma))
                for sigma, k_sigma in verification.k_sigma.items()
            }
        write_json(self.out / "partition.json", partition_to_dict(part))
        write_json(self.out / "verification.json", {**verification.to_dict(), "norm_sandwich": sandwich})
        self.report.add("partition", {**part.stats.to_dict(), "verification": verification.to_dict()})
        self._partition = part
        return part

    def normal_form(self) -> NFResult:
        if self._nf is not None:
            return self._nf
        config = self.config
        grid = config.normal_form.grid
        if grid is None:
            raise NFTorusValidationError("normal_form.time_grid is required", ["missing time grid"])
        with self.report.timed("normal_form"):
            nf = run_normal_form(
                config.symbol,
                config.params,
                self.modes,
                grid,
                config.normal_form.steps,
                options=config.normal_form.options,
                policy=self.policy,
            )
        summary = {
            "steps": nf.report(),
            "depth": nf.depth,
            "unitarity_defect": nf.unitarity_defect(),
            "normal_form_defect": max(
                normal_form_defect(Z, config.params, self.modes.metric) for Z in nf.normal_forms
            ),
        }
        if self._partition is not None:
            summary["block_invariance_defect"] = max(
                block_invariance_defect(Z, self._partition) for Z in nf.normal_forms
            )
        write_json(self.out / "nf_report.json", summary)
        if config.output.cache_dir:
            save_operator(nf.normal_forms[0], config.output.cache_dir / "normal_form-sample0.npz")
            save_operator(nf.remainders[0], config.output.cache_dir / "remainder-sample0.npz")
        self.report.add("normal_form", summary)
        self._nf = nf
        return nf

    def _evolution_config(self) -> EvolutionConfig:
        if self.config.evolution is None:
            raise NFTorusValidationError("evolution block is required", ["missing evolution"])
        return self.config.evolution

    def initial_state(self) -> StateVector:
        evolution = self._evolution_config()
        initial = evolution.initial
        if initial.kind == "plane_wave":
            return StateVector.plane_wave(self.modes, initial.xi)
        seed = self.config.seed if initial.seed is None else initial.seed
        return StateVector.random(self.modes, seed, initial.decay)

    def evolve(self) -> Evolution:
        if self._evolution is not None:
            return self._evolution
        evolution = self._evolution_config()
        psi0 = self.initial_state()
        sigmas = tuple(sorted({0.0, *evolution.sigmas}))
        args = (evolution.s, evolution.t_end, evolution.h, sigmas)
        system = evolution.system
        if system == "blocks":
            part = self.partition()
            nf = self.normal_form()
        elif system != "full":
            nf = self.normal_form()
        with self.report.timed("evolve"):
            if system == "full":
                run = evolve(FullHamiltonian(self.config.symbol, self.modes), psi0, *args, policy=self.policy)
            elif system == "normal_form":
                run = evolve(nf.normal_form_family(), psi0, *args, policy=self.policy)
            elif system == "normal_form_remainder":
                run = evolve(nf.full_family(), psi0, *args, policy=self.policy)
            else:
                run = evolve_blocks(nf, part, psi0, *args, policy=self.policy)
        write_trace_csv(self.out / "trace.csv", run.trace)
        section: dict[str, object] = {
            "system": system,
            "steps": len(run.trace.times) - 1,
            "l2_drift": run.l2_drift,
            "sup_ratio": {str(sigma): run.trace.sup_ratio(sigma) for sigma in evolution.sigmas},
        }
        if self._k_sigma and system in ("blocks", "normal_form"):
            section["bounded_flow"] = {
                str(sigma): run.trace.sup_ratio(sigma) <= bound * (1.0 + 1e-9)
                for sigma, bound in self._k_sigma.items()
                if float(sigma) in run.trace.norms
            }
        self.report.add("evolve", section)
        self._evolution = run
        return run

    def duhamel(self) -> None:
        evolution = self._evolution_config()
        nf = self.normal_form()
        with self.report.timed("duhamel"):
            check = duhamel_bound_check(
                nf,
                self.initial_state(),
                evolution.s,
                evolution.t_end,
                evolution.h,
                evolution.sigma_remainder,
                policy=self.policy,
            )
        self.report.add("duhamel", check.to_dict())

    def fit(self) -> None:
        run = self.evolve()
        fit_config = self.config.fit
        growth = fit_growth(run.trace, fit_config.sigma, fit_config.window)
        write_json(self.out / "fit.json", growth.to_dict())
        self.report.add("fit", growth.to_dict())


def run(
    config: ExperimentConfig,
    subcommand: str,
    *,
    source: str = DEFAULT_PRESET,
    policy: NumericalPolicy | None = None,
) -> RunReport:
    """Run one subcommand and write its artifacts under ``config.output.dir``."""
    if subcommand not in SUBCOMMANDS:
        raise NFTorusValidationError(f"Unknown subcommand {subcommand!r}", [subcommand])
    report = RunReport(subcommand=subcommand, config_source=source, seed=config.seed)
    if subcommand == "validate":
        violations = config.violations()
        report.add("validate", {"delta_star": config.params.delta_star, "violations": violations})
        write_json(config.output.dir / "report.json", report.to_dict())
        if violations:
            raise NFTorusValidationError("; ".join(violations), violations)
        print(f"δ* = {config.params.delta_star:.6g}")
        return report
    pipeline = Pipeline(config.validate(), report, policy or NumericalPolicy())
    if subcommand in ("partition", "all"):
        pipeline.partition()
    if subcommand in ("normal-form", "all"):
        pipeline.normal_form()
    if subcommand in ("evolve", "all"):
        pipeline.evolve()
    if subcommand in ("fit", "all"):
        pipeline.fit()
    if subcommand == "all" and config.evolution is not None and config.normal_form.steps > 0:
        pipeline.duhamel()
    write_json(config.output.dir / "report.json", report.to_dict())
    return report


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument("--config", type=Path, help="experiment JSON document")
    names = ", ".join(option["value"] for option in preset_options())
    source.add_argument("--preset", help=f"named preset ({names}); default {DEFAULT_PRESET}")
    common.add_argument("--out", type=Path, help="artifact directory (overrides output.dir)")
    common.add_argument("--threads", type=int, help="worker pool size")
    common.add_argument("--seed", type=int, help="seed for random initial data")
    common.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")

    parser = argparse.ArgumentParser(prog="nftorus", description=__doc__)
    commands = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        commands.add_parser(name, parents=[common])
    return parser


def _write_diagnostics(out: Path, exc: NFTorusNumericalError) -> None:
    write_json(out / "diagnostics.json", {"error": str(exc), "diagnostics": exc.diagnostics})


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    out = args.out or Path("out")
    try:
        if args.config is not None:
            config = parse_config(args.config, validate=args.subcommand != "validate")
            source = str(args.config)
        else:
            preset = get_preset(args.preset)
            config = preset.config()
            source = f"preset:{preset.key}"
        config = with_overrides(config, out=args.out, seed=args.seed)
        out = config.output.dir
        policy = NumericalPolicy(max_workers=args.threads)
        run(config, args.subcommand, source=source, policy=policy)
    except NFTorusConfigError as exc:
        LOGGER.error("Configuration error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except NFTorusValidationError as exc:
        LOGGER.error("Validation failed: %s", exc)
        for violation in exc.violations or [str(exc)]:
            print(f"violation: {violation}", file=sys.stderr)
        return EXIT_VALIDATION_ERROR
    except NFTorusNumericalError as exc:
        LOGGER.error("Numerical abort: %s", exc)
        _write_diagnostics(out, exc)
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_ABORT
    except NFTorusError as exc:
        LOGGER.error("Run failed: %s", exc)
        return EXIT_NUMERICAL_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
