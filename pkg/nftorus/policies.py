"""Numerical tolerances and runtime knobs shared by every stage."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, TypeVar

_T = TypeVar("_T")
_R = TypeVar("_R")


@dataclass(frozen=True)
class NumericalPolicy:
    hermitian_tol: float = 1e-10
    hermiticity_abort: float = 1e-8
    zero_divisor: float = 1e-12
    power_tol: float = 1e-6
    power_max_iter: int = 5000
    buffer: float = 0.25
    remainder_floor: float = 1e-13
    smooth_share_warning: float = 0.5
    xi_step: float = 0.5
    x_samples: int = 32
    max_workers: int | None = None


DEFAULT_POLICY = NumericalPolicy()


def resolve_policy(policy: NumericalPolicy | None) -> NumericalPolicy:
    return policy or DEFAULT_POLICY


def parallel_map(
    fn: Callable[[_T], _R],
    items: Iterable[_T],
    policy: NumericalPolicy | None = None,
) -> list[_R]:
    """Map on a worker pool capped by the policy; results keep input order."""
    policy = resolve_policy(policy)
    work = list(items)
    if policy.max_workers == 1 or len(work) <= 1:
        return [fn(item) for item in work]
    with ThreadPoolExecutor(max_workers=policy.max_workers) as executor:
        return list(executor.map(fn, work))
