"""Homological equation on nonresonant fibers: -i[-Delta_g, G] + nr = 0."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from nftorus.errors import NFTorusNumericalError
from nftorus.geometry import MetricTensor, inner
from nftorus.policies import NumericalPolicy, resolve_policy
from nftorus.resonance import NFParams
from nftorus.weyl import OperatorMatrix

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class HomologicalSolution:
    G: OperatorMatrix  # noqa: N815
    residual_norm: float


def _divisors(nr: OperatorMatrix, m: MetricTensor) -> np.ndarray:
    """2 inner(eta, k) on every entry, i.e. ||xi'||^2 - ||xi||^2."""
    squared = np.asarray(inner(nr.modes.modes, nr.modes.modes, m), dtype=float)
    return squared[:, None] - squared[None, :]


def solve_homological(
    nr: OperatorMatrix,
    m: MetricTensor,
    policy: NumericalPolicy | None = None,
) -> HomologicalSolution:
    """G(xi + k, xi) = nr(xi + k, xi) / (2i inner(eta, k)), eta = xi + k/2."""
    policy = resolve_policy(policy)
    divisors = _divisors(nr, m)
    nonzero = nr.entries != 0
    leaked = nonzero & (np.abs(divisors) < 2.0 * policy.zero_divisor)
    if np.any(leaked):
        rows, cols = np.nonzero(leaked)
        modes = nr.modes.modes
        raise NFTorusNumericalError(
            "resonant entry leaked into nr",
            {
                "entries": int(rows.size),
                "row_mode": modes[rows[0]].tolist(),
                "col_mode": modes[cols[0]].tolist(),
                "value": abs(complex(nr.entries[rows[0], cols[0]])),
            },
        )
    G = np.zeros_like(nr.entries)  # noqa: N806
    G[nonzero] = nr.entries[nonzero] / (1j * divisors[nonzero])
    solution = OperatorMatrix(nr.modes, G)
    value = residual(solution, nr, m)
    LOGGER.debug("Homological residual %.3e on %d entries", value, int(np.count_nonzero(nonzero)))
    return HomologicalSolution(G=solution, residual_norm=value)


def residual(G: OperatorMatrix, nr: OperatorMatrix, m: MetricTensor) -> float:  # noqa: N803
    """Frobenius norm of -i(Lap G - G Lap) + nr with Lap = -Delta_g."""
    divisors = _divisors(nr, m)
    return float(np.linalg.norm(-1j * divisors * G.entries + nr.entries))


def small_divisor_floor(nr: OperatorMatrix, p: NFParams, m: MetricTensor) -> float:
    """min over nonzero entries of |inner(eta, k)| ||k||^tau / <eta>^delta (inf if none)."""
    nonzero = nr.entries != 0
    np.fill_diagonal(nonzero, False)
    if not np.any(nonzero):
        return float("inf")
    geometry = nr.modes.geometry()
    ratio = (
        np.abs(0.5 * _divisors(nr, m)[nonzero])
        * geometry.k_norm[nonzero] ** p.tau
        / geometry.eta_bracket[nonzero] ** p.delta
    )
    return float(np.min(ratio))
