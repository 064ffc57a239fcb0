"""Reward matrices and their structural statistics.

Arms are ``(row, col)`` pairs, 0-based everywhere inside the package.  Human
facing output (CSV traces, CLI reports) is 1-based.

The functions here are pure: they never mutate their inputs, and every
Monte-Carlo routine takes an explicit seed.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError, EnumerationTooLarge, RankDeficient

# singular values below RANK_RTOL * sigma_1 count as zero
RANK_RTOL = 1e-10
ENUMERATION_BUDGET = 10**6


class Arm(NamedTuple):
    row: int
    col: int


class SvdFactors(NamedTuple):
    U: np.ndarray
    D: np.ndarray
    V: np.ndarray


class PsiEstimate(NamedTuple):
    value: float
    stderr: float
    n_samples: int


@dataclass(frozen=True)
class SubmatrixIndex:
    """Row and column index sets of a submatrix."""

    row_ids: tuple
    col_ids: tuple

    def __post_init__(self):
        rows = tuple(int(i) for i in self.row_ids)
        cols = tuple(int(i) for i in self.col_ids)
        if not rows or not cols:
            raise ValueError("submatrix index sets must be nonempty")
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError("duplicate indices in submatrix index")
        object.__setattr__(self, "row_ids", rows)
        object.__setattr__(self, "col_ids", cols)

    @property
    def m_r(self):
        return len(self.row_ids)

    @property
    def m_c(self):
        return len(self.col_ids)

    @classmethod
    def full(cls, d_r, d_c):
        return cls(tuple(range(d_r)), tuple(range(d_c)))

    def check(self, d_r, d_c):
        if max(self.row_ids) >= d_r or min(self.row_ids) < 0:
            raise IndexError("row index out of range")
        if max(self.col_ids) >= d_c or min(self.col_ids) < 0:
            raise IndexError("column index out of range")


def as_reward_matrix(B, b_star=None):
    """Validate ``B`` and return it as a read-only 2-D float array.

    If ``b_star`` is given, the boundedness condition (largest row l2 norm at
    most ``b_star``) is enforced as well.
    """
    arr = np.array(B, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"reward matrix must be a nonempty 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("reward matrix contains NaN or infinite entries")
    if b_star is not None and max_row_l2_norm(arr) > b_star:
        raise ValueError(f"largest row norm {max_row_l2_norm(arr):.6g} exceeds b_star={b_star}")
    arr.setflags(write=False)
    return arr


def load_matrix_csv(path):
    """Read a header-less CSV of decimal numbers; ragged rows are rejected."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if len(rows[-1]) != len(rows[0]):
                raise ValueError(
                    f"{path}:{lineno}: ragged row ({len(rows[-1])} columns, expected {len(rows[0])})"
                )
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    return as_reward_matrix(rows)


def save_matrix_csv(B, path):
    B = np.asarray(B, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in B:
            w.writerow([repr(float(x)) for x in row])


def max_row_l2_norm(B):
    """Largest Euclidean norm among the rows of ``B`` (the ``||B||_{inf,2}`` norm)."""
    B = np.asarray(B, dtype=float)
    scale = float(np.abs(B).max()) if B.size else 0.0
    if scale == 0.0:
        return 0.0
    # rescale first so squares of tiny or huge entries do not under/overflow
    return scale * float(np.sqrt(((B / scale) ** 2).sum(axis=1)).max())


def svd_factors(B):
    """Thin SVD with ``q = min(d_r, d_c)`` singular triplets, sorted nonincreasing."""
    U, D, Vt = np.linalg.svd(np.asarray(B, dtype=float), full_matrices=False)
    return SvdFactors(U, D, Vt.T)


def numerical_rank(B, rtol=RANK_RTOL):
    D = np.linalg.svd(np.asarray(B, dtype=float), compute_uv=False)
    if D.size == 0 or D[0] <= 0:
        return 0
    return int(np.count_nonzero(D > rtol * D[0]))


def row_incoherence(B, rank):
    """Row-incoherence ``sqrt(d_r / r) * ||B||_{inf,2} / D_rr``.

    Raises RankDeficient when the ``rank``-th singular value is numerically
    zero.
    """
    B = np.asarray(B, dtype=float)
    d_r, d_c = B.shape
    if not 1 <= rank <= min(d_r, d_c):
        raise ValueError(f"rank must be in [1, {min(d_r, d_c)}], got {rank}")
    scale = float(np.abs(B).max())
    if scale > 0:
        B = B / scale  # mu is scale free
    D = svd_factors(B).D
    d_rr = D[rank - 1]
    if D[0] <= 0 or d_rr <= RANK_RTOL * D[0]:
        raise RankDeficient(f"singular value {rank} is numerically zero")
    return math.sqrt(d_r / rank) * max_row_l2_norm(B) / float(d_rr)


def _restrict(B, idx):
    B = np.asarray(B, dtype=float)
    if idx is None:
        return B, np.arange(B.shape[0]), np.arange(B.shape[1])
    idx.check(*B.shape)
    rows = np.asarray(idx.row_ids)
    cols = np.asarray(idx.col_ids)
    return B[np.ix_(rows, cols)], rows, cols


def near_optimal_mask(B, h, idx=None):
    """Boolean mask over the (sub)matrix of entries within ``h`` of its maximum.

    The mask is shaped like the restricted submatrix; boundary ties at exactly
    ``max - h`` are included.
    """
    if h < 0:
        raise ValueError("h must be nonnegative")
    sub, _, _ = _restrict(B, idx)
    return sub >= sub.max() - h


def near_optimal_set(B, h, idx=None):
    """Arms of ``idx`` (default: the whole matrix) whose mean is at least ``max - h``."""
    mask = near_optimal_mask(B, h, idx)
    _, rows, cols = _restrict(B, idx)
    jj, kk = np.nonzero(mask)
    return {Arm(int(rows[j]), int(cols[k])) for j, k in zip(jj, kk)}


def sub_optimal_set(B, h, idx=None):
    mask = ~near_optimal_mask(B, h, idx)
    _, rows, cols = _restrict(B, idx)
    jj, kk = np.nonzero(mask)
    return {Arm(int(rows[j]), int(cols[k])) for j, k in zip(jj, kk)}


def near_optimal_count(B, h, idx=None):
    """The near-optimal function ``g(h)``: size of the near-optimal set."""
    return int(np.count_nonzero(near_optimal_mask(B, h, idx)))


def near_optimal_curve(B, hs):
    """Vectorised ``g`` over an array of ``h`` values for the full matrix."""
    flat = np.sort(np.asarray(B, dtype=float).ravel())
    thresholds = flat[-1] - np.asarray(hs, dtype=float)
    return flat.size - np.searchsorted(flat, thresholds, side="left")


def expected_g_uniform(h, d_r, d_c):
    """Expected near-optimal count for i.i.d. Uniform[0, 1] entries."""
    if not 0 <= h <= 1:
        raise DomainError("h must lie in [0, 1]")
    n = d_r * d_c
    return 1.0 + h * n - h**n


def _expected_max_of_subset(values, m):
    """E[max of a uniformly random m-subset of ``values``] via order statistics.

    P(max = v_(i)) = C(i-1, m-1) / C(n, m) for the ascending order statistics.
    """
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    i = np.arange(1, n + 1)
    # log-space binomials keep this stable for n in the hundreds
    logw = np.full(n, -np.inf)
    ok = i >= m
    logw[ok] = (
        _lgamma(i[ok]) - _lgamma(m) - _lgamma(i[ok] - m + 1)
        - (_lgamma(n + 1) - _lgamma(m + 1) - _lgamma(n - m + 1))
    )
    return float(np.dot(np.exp(logw), v))


def _lgamma(x):
    from scipy.special import gammaln

    return gammaln(np.asarray(x, dtype=float))


def subsampling_cost(B, m_r, m_c, mode="exact", n_samples=10_000, seed=0):
    """Expected shortfall of the best entry of a random ``m_r x m_c`` submatrix.

    Rows and columns are drawn uniformly without replacement, independently.
    ``mode="exact"`` enumerates every row subset and integrates the column
    subset analytically; ``mode="monte_carlo"`` averages ``n_samples`` draws.
    Returns a :class:`PsiEstimate` (``stderr`` is 0 in exact mode).
    """
    B = np.asarray(B, dtype=float)
    d_r, d_c = B.shape
    if not (1 <= m_r <= d_r and 1 <= m_c <= d_c):
        raise ValueError("submatrix size out of range")
    top = B.max()
    if m_r == d_r and m_c == d_c:
        return PsiEstimate(0.0, 0.0, 0)
    if mode == "exact":
        pairs = math.comb(d_r, m_r) * math.comb(d_c, m_c)
        if pairs > ENUMERATION_BUDGET:
            raise EnumerationTooLarge(f"{pairs} index-set pairs exceed budget {ENUMERATION_BUDGET}")
        total = 0.0
        n_row_sets = 0
        for rows in itertools.combinations(range(d_r), m_r):
            total += _expected_max_of_subset(B[list(rows)].max(axis=0), m_c)
            n_row_sets += 1
        return PsiEstimate(max(0.0, float(top - total / n_row_sets)), 0.0, pairs)
    if mode == "monte_carlo":
        rng = np.random.default_rng(seed)
        maxes = np.empty(n_samples)
        for s in range(n_samples):
            rows = rng.choice(d_r, m_r, replace=False)
            cols = rng.choice(d_c, m_c, replace=False)
            maxes[s] = B[np.ix_(rows, cols)].max()
        short = top - maxes
        se = float(short.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else float("nan")
        return PsiEstimate(float(short.mean()), se, n_samples)
    raise ValueError(f"unknown mode {mode!r}")


def subsampling_cost_family(sampler: Callable, m_r, m_c, n_samples, seed=0):
    """Monte-Carlo subsampling cost averaged over a random matrix family.

    ``sampler(rng)`` returns a fresh matrix.  Each draw pairs a fresh matrix
    with a fresh random submatrix, so the estimate integrates over both
    sources of randomness.
    """
    rng = np.random.default_rng(seed)
    short = np.empty(n_samples)
    for s in range(n_samples):
        B = np.asarray(sampler(rng), dtype=float)
        d_r, d_c = B.shape
        rows = rng.choice(d_r, m_r, replace=False)
        cols = rng.choice(d_c, m_c, replace=False)
        short[s] = B.max() - B[np.ix_(rows, cols)].max()
    return PsiEstimate(float(short.mean()), float(short.std(ddof=1) / math.sqrt(n_samples)), n_samples)


def psi_closed_form(dist, d_r, d_c, eta):
    """Subsampling cost of an ``eta``-fraction of rows and columns for i.i.d. entries."""
    if not 0 < eta <= 1:
        raise DomainError("eta must lie in (0, 1]")
    n = d_r * d_c
    if dist == "uniform":
        return n / (1 + n) - eta**2 * n / (1 + eta**2 * n)
    if dist == "gaussian":
        if eta**2 * n <= 1:
            raise DomainError("gaussian closed form needs eta^2 * d_r * d_c > 1")
        return math.sqrt(math.log(n)) - math.sqrt(math.log(eta**2 * n))
    if dist == "exponential":
        return -2.0 * math.log(eta)
    raise ValueError(f"unknown distribution {dist!r}")


def generate_low_rank(d_r, d_c, rank, factor_dist="uniform01", seed=0):
    """Rank-``rank`` matrix ``U V^T`` with i.i.d. factor entries."""
    if not 1 <= rank <= min(d_r, d_c):
        raise ValueError("rank must be between 1 and min(d_r, d_c)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if factor_dist == "uniform01":
        U = rng.uniform(0.0, 1.0, size=(d_r, rank))
        V = rng.uniform(0.0, 1.0, size=(d_c, rank))
    elif factor_dist == "std_normal":
        U = rng.standard_normal((d_r, rank))
        V = rng.standard_normal((d_c, rank))
    else:
        raise ValueError(f"unknown factor distribution {factor_dist!r}")
    return as_reward_matrix(U @ V.T)
