from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, seed, settings
from hypothesis import strategies as st

from nftorus.errors import NFTorusValidationError
from nftorus.geometry import LatticeBasis, identity_metric, metric_from_basis
from nftorus.symbols import SymbolSpec, SymbolTerm, TimeProfile
from nftorus.weyl import (
    HermitianEigensystem,
    ModeSet,
    OperatorMatrix,
    commutator,
    conjugate_exact,
    dequantize,
    from_fibers,
    hermitian_expm,
    laplacian_matrix,
    lie_series,
    quantize,
    sobolev_opnorm,
)

CONSTANT = TimeProfile("constant", amp=1.0)
TWO_COS = SymbolSpec((SymbolTerm(CONSTANT, {(1, 0): 1.0, (-1, 0): 1.0}, 0.0),))


def _random_hermitian(modes: ModeSet, rng: np.random.Generator, scale: float = 1.0) -> OperatorMatrix:
    raw = rng.standard_normal((modes.size, modes.size)) + 1j * rng.standard_normal((modes.size, modes.size))
    return OperatorMatrix(modes, scale * 0.5 * (raw + raw.conj().T))


@pytest.fixture
def modes() -> ModeSet:
    return ModeSet.build(4.0, identity_metric(2))


@pytest.mark.unit
def test_mode_set_is_lexicographic_and_closed_under_negation(modes: ModeSet) -> None:
    rows = [tuple(row) for row in modes.modes.tolist()]

    assert rows == sorted(rows)
    assert all(tuple(-v for v in row) in modes.index for row in rows)
    assert np.all(modes.brackets <= 4.0 + 1e-12)
    assert modes.position((0, 0)) == modes.index[(0, 0)]


@pytest.mark.unit
def test_mode_set_rejects_unknown_mode(modes: ModeSet) -> None:
    with pytest.raises(NFTorusValidationError):
        modes.position((9, 9))


@pytest.mark.unit
def test_operators_on_mismatched_mode_sets_are_rejected(modes: ModeSet) -> None:
    twin = ModeSet.build(4.0, identity_metric(2))
    reordered = dataclasses.replace(modes, modes=modes.modes[::-1].copy())
    stretched = dataclasses.replace(modes, metric=metric_from_basis(LatticeBasis([[2.0, 0.0], [0.0, 1.0]])))
    A = OperatorMatrix.identity(modes)  # noqa: N806

    assert (A + OperatorMatrix.identity(twin)).max_abs() == pytest.approx(2.0)
    for other in (reordered, stretched):
        assert other.size == modes.size
        with pytest.raises(NFTorusValidationError, match="different mode sets"):
            A + OperatorMatrix.identity(other)
        with pytest.raises(NFTorusValidationError):
            A @ OperatorMatrix.identity(other)


@pytest.mark.unit
def test_quantize_two_cos_shifts_by_one(modes: ModeSet) -> None:
    A = quantize(TWO_COS, 0.0, modes)

    for xi in modes.modes:
        shifted = (int(xi[0]) + 1, int(xi[1]))
        if shifted in modes.index:
            assert A.entry(shifted, xi) == 1.0
            assert A.entry(xi, shifted) == 1.0
    assert np.count_nonzero(A.entries) == 2 * modes.shift_pairs((1, 0))[0].size


@pytest.mark.unit
def test_quantize_multiplier_is_diagonal_bracket(modes: ModeSet) -> None:
    spec = SymbolSpec((SymbolTerm(CONSTANT, {(0, 0): 1.0}, 1.0),))
    A = quantize(spec, 0.0, modes)

    np.testing.assert_allclose(A.entries, np.diag(modes.brackets))


@pytest.mark.unit
def test_quantize_uses_the_weyl_midpoint(modes: ModeSet) -> None:
    spec = SymbolSpec((SymbolTerm(CONSTANT, {(1, 0): 0.5, (-1, 0): 0.5}, 1.0),))
    A = quantize(spec, 0.0, modes)

    assert A.entry((1, 0), (0, 0)) == pytest.approx(math.sqrt(1.25) / 2.0)


@pytest.mark.unit
def test_quantize_is_linear(modes: ModeSet) -> None:
    other = SymbolSpec((SymbolTerm(TimeProfile("cosine", 1.0, 1.0), {(1, 1): 0.5, (-1, -1): 0.5}, 1.0),))
    combined = TWO_COS.scaled(2.0) + other

    np.testing.assert_allclose(
        quantize(combined, 0.7, modes).entries,
        2.0 * quantize(TWO_COS, 0.7, modes).entries + quantize(other, 0.7, modes).entries,
        rtol=0,
        atol=1e-15,
    )


@pytest.mark.unit
def test_real_symbol_quantizes_to_hermitian(modes: ModeSet) -> None:
    spec = SymbolSpec((SymbolTerm(CONSTANT, {(1, 2): 1 + 2j, (-1, -2): 1 - 2j}, 1.0),))

    assert quantize(spec, 0.0, modes).is_hermitian(1e-12)


@pytest.mark.unit
def test_laplacian_entries() -> None:
    identity = ModeSet.build(3.0, identity_metric(2))
    skew = metric_from_basis(LatticeBasis([[1.0, 0.0], [1.0, 1.0]]))
    skewed = ModeSet.build(3.0, skew)

    lap = laplacian_matrix(identity, identity.metric)
    assert lap.entry((1, 1), (1, 1)) == 2.0
    assert lap.entry((0, 0), (0, 0)) == 0.0
    assert laplacian_matrix(skewed, skew).entry((1, 0), (1, 0)) == pytest.approx(2.0)


@pytest.mark.unit
def test_dequantize_diagonal_and_two_cos(modes: ModeSet) -> None:
    diagonal = OperatorMatrix.diagonal(modes, modes.brackets)
    fiber = dequantize(diagonal, (0, 0))
    assert fiber[(3.0, 0.0)] == pytest.approx(math.sqrt(10))

    values = dequantize(quantize(TWO_COS, 0.0, modes), (1, 0))
    assert set(values.values()) == {1.0}
    assert (0.5, 0.0) in values


@pytest.mark.unit
def test_fiber_round_trip_reproduces_random_hermitian(modes: ModeSet) -> None:
    A = _random_hermitian(modes, np.random.default_rng(7))
    ks = {tuple(int(v) for v in a - b) for a in modes.modes for b in modes.modes}
    fibers = {k: dequantize(A, k) for k in ks}

    np.testing.assert_array_equal(from_fibers(fibers, modes).entries, A.entries)


@pytest.mark.unit
def test_commutator_with_laplacian_is_exact_on_fibers(modes: ModeSet) -> None:
    rng = np.random.default_rng(3)
    G = _random_hermitian(modes, rng)
    lap = laplacian_matrix(modes, modes.metric)
    bracket = commutator(lap, G)
    geometry = modes.geometry()

    np.testing.assert_allclose(bracket.entries, 2.0 * geometry.eta_dot_k * G.entries, atol=1e-12)


@pytest.mark.unit
def test_conjugation_by_zero_and_commuting_generators(modes: ModeSet) -> None:
    A = _random_hermitian(modes, np.random.default_rng(1))
    diagonal = OperatorMatrix.diagonal(modes, modes.brackets)
    generator = OperatorMatrix.diagonal(modes, modes.squared_norms)

    np.testing.assert_array_equal(conjugate_exact(A, OperatorMatrix.zeros(modes), 1.0).entries, A.entries)
    np.testing.assert_allclose(conjugate_exact(diagonal, generator, 0.8).entries, diagonal.entries, atol=1e-12)


@pytest.mark.unit
def test_conjugation_two_by_two_by_hand() -> None:
    pair = ModeSet.build(math.sqrt(2.0), identity_metric(1))
    assert pair.size == 3
    # Use the (-1, 1) corner of the one-dimensional mode set {-1, 0, 1}.
    A = np.zeros((3, 3), dtype=complex)
    A[0, 2] = A[2, 0] = 1.0
    G = np.diag([1.0, 0.0, -1.0]).astype(complex)
    result = conjugate_exact(OperatorMatrix(pair, A), OperatorMatrix(pair, G), math.pi / 2.0)

    expected = np.zeros((3, 3), dtype=complex)
    expected[0, 2] = expected[2, 0] = -1.0
    np.testing.assert_allclose(result.entries, expected, atol=1e-12)


@pytest.mark.unit
def test_conjugation_rejects_non_hermitian_generator(modes: ModeSet) -> None:
    G = OperatorMatrix(modes, np.triu(np.ones((modes.size, modes.size))))

    with pytest.raises(NFTorusValidationError):
        conjugate_exact(OperatorMatrix.identity(modes), G, 1.0)


@settings(max_examples=10, deadline=None)
@seed(20240601)
@given(st.integers(0, 2**32 - 1), st.floats(-2.0, 2.0))
def test_conjugation_preserves_spectrum_and_hermiticity(state: int, tau: float) -> None:
    modes = ModeSet.build(3.0, identity_metric(2))
    rng = np.random.default_rng(state)
    A = _random_hermitian(modes, rng)
    G = _random_hermitian(modes, rng, 0.3)
    conjugated = conjugate_exact(A, G, tau)

    assert conjugated.is_hermitian(1e-10)
    before = np.linalg.eigvalsh(A.entries)
    after = np.linalg.eigvalsh(conjugated.hermitian_part().entries)
    np.testing.assert_allclose(after, before, rtol=1e-9, atol=1e-9 * np.max(np.abs(before)))


@pytest.mark.unit
def test_lie_series_trivial_cases(modes: ModeSet) -> None:
    rng = np.random.default_rng(5)
    A = _random_hermitian(modes, rng)
    G = _random_hermitian(modes, rng)
    diagonal = OperatorMatrix.diagonal(modes, modes.brackets)

    np.testing.assert_array_equal(lie_series(A, G, 1.0, 0).entries, A.entries)
    np.testing.assert_allclose(
        lie_series(diagonal, OperatorMatrix.diagonal(modes, modes.squared_norms), 1.0, 6).entries,
        diagonal.entries,
    )


@pytest.mark.unit
def test_lie_series_converges_to_exact_conjugation(modes: ModeSet) -> None:
    rng = np.random.default_rng(11)
    A = _random_hermitian(modes, rng)
    G = _random_hermitian(modes, rng)
    G = G * (0.5 / np.linalg.norm(G.entries, 2))
    exact = conjugate_exact(A, G, 1.0)

    errors = [(lie_series(A, G, 1.0, n) - exact).frobenius() for n in range(9)]

    assert all(later < earlier for earlier, later in zip(errors, errors[1:]))
    assert errors[-1] <= 1e-6 * A.frobenius()


@pytest.mark.unit
def test_hermitian_expm_is_unitary(modes: ModeSet) -> None:
    H = _random_hermitian(modes, np.random.default_rng(2))
    U = hermitian_expm(H, 0.37)

    np.testing.assert_allclose(U.entries @ U.entries.conj().T, np.eye(modes.size), atol=1e-12)


@pytest.mark.unit
def test_averaged_conjugate_matches_node_sum(modes: ModeSet) -> None:
    rng = np.random.default_rng(4)
    A = _random_hermitian(modes, rng)
    G = _random_hermitian(modes, rng, 0.2)
    system = HermitianEigensystem.of(G)
    taus, weights = [0.2, 0.7], [0.4, 0.6]

    expected = sum(w * system.conjugate(A.entries, tau) for tau, w in zip(taus, weights))
    np.testing.assert_allclose(system.averaged_conjugate(A.entries, taus, weights), expected, atol=1e-12)


@pytest.mark.unit
def test_sobolev_opnorm_examples() -> None:
    modes = ModeSet.build(8.0, identity_metric(2))
    weighted = OperatorMatrix.diagonal(modes, modes.brackets**0.7)

    assert sobolev_opnorm(weighted, 1.5, 0.8) == pytest.approx(1.0, rel=1e-6)
    assert sobolev_opnorm(OperatorMatrix.identity(modes), 2.0, 2.0) == pytest.approx(1.0, rel=1e-6)
    shift = sobolev_opnorm(quantize(TWO_COS, 0.0, modes), 0.0, 0.0)
    assert 1.9 <= shift <= 2.0 + 1e-9
    assert sobolev_opnorm(quantize(TWO_COS, 0.0, modes), 0.0, 0.0, method="svd") == pytest.approx(shift, rel=1e-3)


@pytest.mark.unit
def test_sobolev_opnorm_rejects_unknown_method(modes: ModeSet) -> None:
    with pytest.raises(NFTorusValidationError):
        sobolev_opnorm(OperatorMatrix.identity(modes), 0.0, 0.0, method="lanczos")


@pytest.mark.unit
def test_operator_shape_must_match_modes(modes: ModeSet) -> None:
    with pytest.raises(NFTorusValidationError):
        OperatorMatrix(modes, np.zeros((2, 2)))
