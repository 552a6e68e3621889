from __future__ import annotations

import pytest

from nftorus.geometry import MetricTensor, identity_metric
from nftorus.resonance import NFParams
from nftorus.weyl import ModeSet


def pytest_collection_modifyitems(items: list[pytest.Item]) -> None:
    marker_names = {"unit", "integration", "acceptance"}
    for item in items:
        assigned = {marker.name for marker in item.iter_markers()}
        if assigned.isdisjoint(marker_names):
            item.add_marker(pytest.mark.unit)


@pytest.fixture
def square_metric() -> MetricTensor:
    return identity_metric(2)


@pytest.fixture
def reference_params() -> NFParams:
    return NFParams(delta=0.6, epsilon=0.04, tau=1.0, m=1.0, d=2)


@pytest.fixture
def small_modes(square_metric: MetricTensor) -> ModeSet:
    return ModeSet.build(6.0, square_metric)
