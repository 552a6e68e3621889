"""Run report, JSON artifacts and CSV norm traces."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from nftorus.dynamics import NormTrace

LOGGER = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


def json_safe(value: Any) -> Any:
    """Recursively convert numpy scalars and non-finite floats for strict JSON."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [json_safe(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def write_json(path: str | Path, data: Any) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(
        json.dumps(json_safe(data), indent=2, sort_keys=True, allow_nan=False) + "\n",
        encoding="utf-8",
    )
    LOGGER.debug("Wrote %s", target)
    return target


def _sigma_label(sigma: float) -> str:
    return format(sigma, "g")


def write_trace_csv(path: str | Path, trace: NormTrace) -> Path:
    """Header t,norm_sigma_<s>,...; floats with 17 significant digits."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["t"] + [f"norm_sigma_{_sigma_label(sigma)}" for sigma in trace.sigmas])
        for row in trace.rows():
            writer.writerow([format(value, ".17g") for value in row])
    LOGGER.debug("Wrote trace %s with %d rows", target, len(trace.times))
    return target


def read_trace_csv(path: str | Path) -> NormTrace:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    header, body = rows[0], rows[1:]
    values = np.asarray([[float(v) for v in row] for row in body]).reshape(len(body), len(header))
    sigmas = [float(name.removeprefix("norm_sigma_")) for name in header[1:]]
    return NormTrace(
        times=values[:, 0],
        norms={sigma: values[:, i + 1] for i, sigma in enumerate(sigmas)},
    )


@dataclass
class RunReport:
    """Everything a cli run produced; ``timings`` are wall-clock seconds per stage."""

    subcommand: str
    config_source: str
    seed: int
    stages: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    @contextmanager
    def timed(self, stage: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            self.timings[stage] = time.perf_counter() - started
            LOGGER.info("Stage %s finished in %.2f s", stage, self.timings[stage])

    def add(self, stage: str, section: Any) -> None:
        self.stages[stage] = section

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "subcommand": self.subcommand,
            "config": self.config_source,
            "seed": self.seed,
            "stages": self.stages,
            "timings": self.timings,
        }
