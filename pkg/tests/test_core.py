import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedocvqa.core import (
    ClientUpdate,
    DomainError,
    NumericError,
    StructuralError,
    as_vector,
    population_weights,
    vector_axpy,
)


@pytest.mark.parametrize(
    "a, x, y, expected",
    [
        (0.0, [5, 5], [1, 2], [1, 2]),
        (1.0, [0, 0], [3, 4], [3, 4]),
        (2.0, [1, -1], [1, 1], [3, -1]),
    ],
)
def test_axpy_examples(a, x, y, expected):
    x0, y0 = np.array(x, float), np.array(y, float)
    out = vector_axpy(a, x0, y0)
    np.testing.assert_array_equal(out, expected)
    np.testing.assert_array_equal(x0, x)
    np.testing.assert_array_equal(y0, y)


def test_axpy_dimension_mismatch():
    with pytest.raises(StructuralError):
        vector_axpy(1.0, np.zeros(2), np.zeros(3))


def test_axpy_rejects_non_finite():
    with pytest.raises(NumericError):
        vector_axpy(float("nan"), np.zeros(2), np.zeros(2))
    with pytest.raises(NumericError):
        vector_axpy(1e308, np.full(2, 1e308), np.zeros(2))


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=20), finite)
def test_axpy_inverse(pairs, a):
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    back = vector_axpy(a, x, vector_axpy(-a, x, y))
    np.testing.assert_allclose(back, y, rtol=0, atol=1e-12 * max(1.0, np.abs(a * x).max(), np.abs(y).max()))


def test_as_vector_checks():
    with pytest.raises(StructuralError):
        as_vector([[1.0]])
    with pytest.raises(NumericError):
        as_vector([np.inf])


def test_population_weights_examples():
    assert population_weights([5]).weights.tolist() == [1.0]
    assert population_weights([1, 3]).weights.tolist() == [0.25, 0.75]
    counts = [14152, 39463, 91835]
    w = population_weights(counts)
    assert sum(counts) == 145450
    assert w.weights.tolist() == [c / 145450 for c in counts]


@pytest.mark.parametrize("counts", [[], [0], [3, 0], [-1, 2]])
def test_population_weights_domain(counts):
    with pytest.raises(DomainError):
        population_weights(counts)


counts_st = st.lists(st.integers(1, 10**6), min_size=1, max_size=30)


@given(counts_st, st.randoms(use_true_random=False))
def test_population_weights_permutation_equivariant(counts, rnd):
    perm = list(range(len(counts)))
    rnd.shuffle(perm)
    w = population_weights(counts).weights
    wp = population_weights([counts[i] for i in perm]).weights
    np.testing.assert_array_equal(wp, w[perm])


@given(counts_st, st.integers(1, 1000))
def test_population_weights_scale_invariant(counts, c):
    w = population_weights(counts).weights
    ws = population_weights([c * n for n in counts]).weights
    np.testing.assert_allclose(ws, w, rtol=0, atol=1e-12)
    assert abs(w.sum() - 1.0) <= 1e-12


def test_client_update_requires_positive_count():
    with pytest.raises(DomainError):
        ClientUpdate(0, np.zeros(1), 0)
