import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmorse.metrics import adjusted_rand_index, contingency


def brute_ari(a, b):
    n11 = n10 = n01 = n00 = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        sa, sb = a[i] == a[j], b[i] == b[j]
        n11 += sa and sb
        n10 += sa and not sb
        n01 += sb and not sa
        n00 += not sa and not sb
    den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11)
    return None if den == 0 else 2.0 * (n00 * n11 - n01 * n10) / den


def test_contingency_table():
    c = contingency(["x", "x", "y", "y"], [1, 2, 1, 1])
    assert c.table.tolist() == [[1, 1], [2, 0]]
    assert c.rows.tolist() == [2, 2] and c.cols.tolist() == [3, 1] and c.total == 4


def test_worked_negative_value_is_exact():
    assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5


def test_relabeling_gives_one():
    assert adjusted_rand_index([0, 0, 1, 1, 2], [7, 7, 3, 3, 9]) == 1.0
    assert adjusted_rand_index(list("aabbc"), list("aabbc")) == 1.0


def test_degenerate_cases_are_flagged():
    assert adjusted_rand_index([0, 0, 0], [0, 0, 0], return_flag=True) == (0.0, True)
    assert adjusted_rand_index([0, 1, 2], [0, 1, 2], return_flag=True) == (0.0, True)
    assert adjusted_rand_index([0, 1], [0, 0], return_flag=True) == (0.0, False)
    assert adjusted_rand_index([0, 0, 1], [0, 0, 1], return_flag=True) == (1.0, False)


def test_input_errors():
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0])
    with pytest.raises(ValueError):
        adjusted_rand_index([0], [0])


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 30).flatmap(lambda n: st.tuples(st.lists(st.integers(0, 4), min_size=n, max_size=n),
                                                      st.lists(st.integers(0, 4), min_size=n, max_size=n))))
def test_matches_pair_counts(pair):
    a, b = pair
    ref = brute_ari(a, b)
    got, flag = adjusted_rand_index(a, b, return_flag=True)
    if ref is None:
        assert flag and got == 0.0
    else:
        assert not flag and got == pytest.approx(ref, abs=1e-12)
        assert got == adjusted_rand_index(b, a)


def test_large_inputs_stay_exact():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 3, size=200_000)
    assert adjusted_rand_index(a, a) == 1.0
