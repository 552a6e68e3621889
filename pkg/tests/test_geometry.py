from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nftorus.errors import NFTorusValidationError
from nftorus.geometry import (
    LatticeBasis,
    MetricTensor,
    identity_metric,
    inner,
    jap_bracket,
    metric_from_basis,
    norm,
)

SKEW_METRIC = metric_from_basis(LatticeBasis([[1.0, 0.0], [1.0, 1.0]]))

covectors = st.lists(st.integers(-20, 20), min_size=2, max_size=2)


@pytest.mark.unit
def test_orthonormal_basis_gives_identity_metric() -> None:
    metric = metric_from_basis(LatticeBasis([[1.0, 0.0], [0.0, 1.0]]))

    np.testing.assert_array_equal(metric.g, np.eye(2))
    np.testing.assert_allclose(metric.g_inv, np.eye(2))


@pytest.mark.unit
def test_skew_basis_metric_and_inverse() -> None:
    np.testing.assert_allclose(SKEW_METRIC.g, [[1.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(SKEW_METRIC.g_inv, [[2.0, -1.0], [-1.0, 1.0]], atol=1e-12)
    np.testing.assert_allclose(SKEW_METRIC.g @ SKEW_METRIC.g_inv, np.eye(2), atol=1e-12)


@pytest.mark.unit
def test_dependent_basis_is_rejected() -> None:
    with pytest.raises(NFTorusValidationError, match="degenerate lattice"):
        metric_from_basis(LatticeBasis([[1.0, 0.0], [2.0, 0.0]]))


@pytest.mark.unit
def test_non_square_basis_is_rejected() -> None:
    with pytest.raises(NFTorusValidationError):
        LatticeBasis([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@pytest.mark.unit
def test_inner_products() -> None:
    assert inner([1, 0], [0, 1], identity_metric(2)) == 0.0
    assert inner([1, 0], [0, 1], SKEW_METRIC) == pytest.approx(-1.0)
    assert inner([0, 0], [0, 0], SKEW_METRIC) == 0.0


@pytest.mark.unit
def test_inner_rejects_dimension_mismatch() -> None:
    with pytest.raises(NFTorusValidationError):
        inner([1, 0, 0], [1, 0], identity_metric(2))


@pytest.mark.unit
def test_japanese_brackets() -> None:
    assert jap_bracket([0, 0], SKEW_METRIC) == 1.0
    assert jap_bracket([3, 4], identity_metric(2)) == pytest.approx(math.sqrt(26))
    assert jap_bracket([1, 0], SKEW_METRIC) == pytest.approx(math.sqrt(3))


@pytest.mark.unit
def test_inner_broadcasts_over_rows() -> None:
    rows = np.array([[1, 0], [0, 1], [1, 1]])
    values = inner(rows, rows, SKEW_METRIC)

    np.testing.assert_allclose(values, [2.0, 1.0, 1.0])


@pytest.mark.unit
def test_fingerprint_distinguishes_metrics() -> None:
    assert identity_metric(2).fingerprint() == identity_metric(2).fingerprint()
    assert identity_metric(2).fingerprint() != SKEW_METRIC.fingerprint()


@given(covectors, covectors, covectors, st.integers(-5, 5))
def test_inner_is_symmetric_and_bilinear(xi: list[int], eta: list[int], zeta: list[int], a: int) -> None:
    m = SKEW_METRIC
    combined = [a * x + z for x, z in zip(xi, zeta)]

    assert inner(xi, eta, m) == pytest.approx(inner(eta, xi, m), rel=1e-12, abs=1e-12)
    assert inner(combined, eta, m) == pytest.approx(
        a * inner(xi, eta, m) + inner(zeta, eta, m), rel=1e-12, abs=1e-9
    )


@given(covectors)
def test_bracket_dominates_norm_and_grows_under_scaling(xi: list[int]) -> None:
    m = SKEW_METRIC
    bracket = jap_bracket(xi, m)

    assert bracket >= max(1.0, norm(xi, m))
    assert jap_bracket([2 * v for v in xi], m) >= bracket
    if any(xi):
        assert inner(xi, xi, m) > 0


@pytest.mark.unit
def test_metric_tensor_dimension() -> None:
    metric = MetricTensor(g=np.eye(3), g_inv=np.eye(3))

    assert metric.dimension == 3
