"""
File used in the testing of the Wilcoxon signed-rank test
"""

import itertools
import sys
from pathlib import Path
from typing import List
import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parent.parent))

# pylint: disable=wrong-import-position
from core.errors import ParameterError
from evaluation.statistics import (
    WilcoxonMethod,
    exact_null_counts,
    significance_stars,
    wilcoxon_signed_rank,
)


def _mid_ranks(values: List[float]) -> List[float]:
    ranks = []
    for value in values:
        below = sum(v < value for v in values)
        equal = sum(v == value for v in values)
        ranks.append(below + (equal + 1) / 2.0)
    return ranks


def _brute_force_p(diffs: List[float]) -> float:
    diffs = [d for d in diffs if d != 0]
    ranks = _mid_ranks([abs(d) for d in diffs])
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, diffs) if d < 0)
    w = min(w_plus, w_minus)
    at_most = 0
    for signs in itertools.product((0, 1), repeat=len(ranks)):
        if sum(r for r, s in zip(ranks, signs) if s) <= w + 1e-9:
            at_most += 1
    return min(1.0, 2.0 * at_most / 2 ** len(ranks))

# Testing function wilcoxon_signed_rank

def test_identical_samples() -> None:
    """
    Tests that equal samples give p = 1 with no effective pairs

    Args:
        None

    Returns:
        None
    """
    result = wilcoxon_signed_rank([0.3, 0.5, 0.7], [0.3, 0.5, 0.7])

    assert result.p == 1.0
    assert result.n_effective == 0

def test_three_positive_differences() -> None:
    """
    Tests the smallest non-trivial exact case

    Args:
        None

    Returns:
        None
    """
    result = wilcoxon_signed_rank([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])

    assert result.w == 0.0
    assert result.w_plus == 6.0
    assert result.p == pytest.approx(0.25)
    assert result.method == WilcoxonMethod.EXACT

def test_exact_matches_enumeration() -> None:
    """
    Tests the exact p-value against full sign enumeration for
    1000 samples of up to 12 pairs, ties included

    Args:
        None

    Returns:
        None
    """
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        x = np.round(rng.normal(size=n), 1)
        y = np.round(rng.normal(size=n), 1)
        result = wilcoxon_signed_rank(x, y, method="exact")
        if result.n_effective == 0:
            assert result.p == 1.0
            continue
        assert result.p == pytest.approx(_brute_force_p(list(x - y)), abs=1e-12)

def test_normal_approximation_close_to_exact() -> None:
    """
    Tests that both methods agree within 0.02 at n = 15

    Args:
        None

    Returns:
        None
    """
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = rng.normal(size=15)
        y = rng.normal(0.3, 1.0, size=15)
        exact = wilcoxon_signed_rank(x, y, method="exact")
        approx = wilcoxon_signed_rank(x, y, method="approx")
        assert approx.method == WilcoxonMethod.NORMAL_APPROX
        assert abs(exact.p - approx.p) <= 0.02

def test_auto_switches_to_approximation() -> None:
    """
    Tests that more than 20 non-zero differences use the normal
    approximation

    Args:
        None

    Returns:
        None
    """
    x = np.arange(1.0, 26.0)

    assert wilcoxon_signed_rank(x, np.zeros(25)).method == WilcoxonMethod.NORMAL_APPROX
    assert wilcoxon_signed_rank(x[:20], np.zeros(20)).method == WilcoxonMethod.EXACT

def test_antisymmetry_and_scale() -> None:
    """
    Tests that swapping the samples or scaling both leaves W
    and p unchanged

    Args:
        None

    Returns:
        None
    """
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=10), rng.normal(size=10)
    base = wilcoxon_signed_rank(x, y)
    swapped = wilcoxon_signed_rank(y, x)
    scaled = wilcoxon_signed_rank(3.0 * x, 3.0 * y)

    assert (swapped.w, swapped.p) == (base.w, base.p)
    assert (swapped.w_plus, swapped.w_minus) == (base.w_minus, base.w_plus)
    assert (scaled.w, scaled.p) == (base.w, base.p)

def test_bad_inputs() -> None:
    """
    Tests the length and method checks

    Args:
        None

    Returns:
        None
    """
    with pytest.raises(ParameterError, match="equal length"):
        wilcoxon_signed_rank([1.0, 2.0], [1.0])
    with pytest.raises(ParameterError, match="Unknown method"):
        wilcoxon_signed_rank([1.0], [2.0], method="bootstrap")

def test_exact_null_counts_total() -> None:
    """
    Tests that the counts sum to 2^n

    Args:
        None

    Returns:
        None
    """
    counts = exact_null_counts([2, 4, 6, 8])

    assert counts.sum() == 16
    assert counts[0] == 1 and counts[-1] == 1

def test_significance_stars() -> None:
    """
    Tests the 0.05 marker

    Args:
        None

    Returns:
        None
    """
    assert significance_stars(0.01) == "*"
    assert significance_stars(0.05) == ""
