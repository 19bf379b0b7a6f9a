"""
Paired two-sided Wilcoxon signed-rank test with an exact null
distribution for small samples and a tie-corrected normal
approximation for larger ones
"""

from dataclasses import dataclass
from enum import Enum
from typing import Sequence
import numpy as np
from scipy.stats import norm, rankdata
from core.errors import ParameterError

EXACT_LIMIT = 20
SIGNIFICANCE_LEVEL = 0.05


class WilcoxonMethod(str, Enum):
    """
    How the p-value was obtained
    """
    EXACT = "exact"
    NORMAL_APPROX = "normal_approx"


@dataclass(frozen=True)
class WilcoxonResult:
    """
    w is the smaller of the positive and negative rank sums;
    n_effective counts the non-zero differences
    """
    w: float
    n_effective: int
    p: float
    method: WilcoxonMethod
    w_plus: float = 0.0
    w_minus: float = 0.0


def exact_null_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """
    Number of sign assignments giving each value of twice the positive
    rank sum, by dynamic programming over the ranks. Summing the
    counts over a range equals enumerating all 2^n assignments

    Args:
        doubled_ranks (Sequence[int]): ranks times two, so mid-ranks
            stay integral

    Returns:
        (np.ndarray): counts indexed by 2 * W+
    """
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for rank in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[rank:] = counts[:total + 1 - rank]
        counts = counts + shifted
    return counts


def _exact_p(doubled_ranks: np.ndarray, doubled_w: int) -> float:
    counts = exact_null_counts(doubled_ranks.tolist())
    return min(1.0, 2.0 * counts[:doubled_w + 1].sum() / counts.sum())


def _approx_p(abs_diffs: np.ndarray, w: float) -> float:
    n = abs_diffs.size
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(abs_diffs, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes ** 3 - tie_sizes) / 48.0
    if variance <= 0:
        return 1.0
    z = (w - mean + 0.5) / np.sqrt(variance)
    return min(1.0, 2.0 * float(norm.cdf(z)))


def wilcoxon_signed_rank(x: Sequence[float],
                         y: Sequence[float],
                         method: str = "auto") -> WilcoxonResult:
    """
    Two-sided signed-rank test of the paired differences x - y. Zero
    differences are dropped and tied magnitudes share mid-ranks

    Args:
        x (Sequence[float]): first sample
        y (Sequence[float]): paired second sample
        method (str): "auto" (exact up to 20 non-zero differences),
            "exact" or "approx"

    Returns:
        (WilcoxonResult): statistic, effective size and p-value
    """
    if method not in ("auto", "exact", "approx"):
        raise ParameterError(f"Unknown method '{method}'")
    x_arr = np.asarray(x, dtype=np.float64)
    y_arr = np.asarray(y, dtype=np.float64)
    if x_arr.shape != y_arr.shape or x_arr.ndim != 1 or x_arr.size == 0:
        raise ParameterError("x and y must be non-empty sequences of equal length")

    diffs = x_arr - y_arr
    if not np.all(np.isfinite(diffs)):
        raise ParameterError("Paired samples must be finite")
    diffs = diffs[diffs != 0]
    n = diffs.size
    if n == 0:
        return WilcoxonResult(w=0.0, n_effective=0, p=1.0, method=WilcoxonMethod.EXACT)

    abs_diffs = np.abs(diffs)
    doubled_ranks = np.rint(2.0 * rankdata(abs_diffs)).astype(np.int64)
    doubled_plus = int(doubled_ranks[diffs > 0].sum())
    doubled_minus = int(doubled_ranks[diffs < 0].sum())
    doubled_w = min(doubled_plus, doubled_minus)

    use_exact = method == "exact" or (method == "auto" and n <= EXACT_LIMIT)
    if use_exact:
        p = _exact_p(doubled_ranks, doubled_w)
        used = WilcoxonMethod.EXACT
    else:
        p = _approx_p(abs_diffs, doubled_w / 2.0)
        used = WilcoxonMethod.NORMAL_APPROX
    return WilcoxonResult(w=doubled_w / 2.0, n_effective=n,
                          p=max(p, float(np.finfo(np.float64).tiny)), method=used,
                          w_plus=doubled_plus / 2.0, w_minus=doubled_minus / 2.0)


def significance_stars(p: float) -> str:
    """
    "*" below the 0.05 level, empty otherwise
    """
    return "*" if p < SIGNIFICANCE_LEVEL else ""
