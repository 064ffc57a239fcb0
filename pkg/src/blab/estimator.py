"""Low-rank estimation from sparse, noisy entry observations.

The forced-sample estimator is built in two stages:

1. a nuclear-norm penalised least-squares fit on the first half of the
   observations, solved by proximal gradient with singular value
   soft-thresholding;
2. row enhancement: every row is refit by least squares inside the span of
   the leading right singular vectors of the first-stage fit, using the
   second half of the observations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyObservations, RankDeficient, TooFewSamples
from .matrix_core import RANK_RTOL

ILL_CONDITIONED = 1e-8


class ObservationSet:
    """Chronological log of ``(t, row, col, y)`` observations.

    Stored column-wise in growable numpy buffers so the bandit loop can append
    cheaply.  Times must be strictly increasing.
    """

    def __init__(self, d_r, d_c, rows=(), cols=(), values=(), times=None):
        self.d_r = int(d_r)
        self.d_c = int(d_c)
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=float).ravel()
        if times is None:
            times = np.arange(1, rows.size + 1)
        times = np.asarray(times, dtype=np.int64).ravel()
        if not (rows.size == cols.size == values.size == times.size):
            raise ValueError("observation columns have different lengths")
        self._rows = rows.copy()
        self._cols = cols.copy()
        self._vals = values.copy()
        self._times = times.copy()
        self._n = rows.size
        self._validate(0)

    def _validate(self, start):
        r, c = self._rows[start:self._n], self._cols[start:self._n]
        if r.size and (r.min() < 0 or r.max() >= self.d_r or c.min() < 0 or c.max() >= self.d_c):
            raise IndexError("observation arm out of range")
        if not np.all(np.isfinite(self._vals[start:self._n])):
            raise ValueError("observation values must be finite")
        t = self._times[max(start - 1, 0):self._n]
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("observation times must be strictly increasing")

    def __len__(self):
        return self._n

    def append(self, t, row, col, y):
        if self._n == self._rows.size:
            cap = max(16, 2 * self._n)
            for name in ("_rows", "_cols", "_vals", "_times"):
                old = getattr(self, name)
                new = np.empty(cap, dtype=old.dtype)
                new[: self._n] = old[: self._n]
                setattr(self, name, new)
        self._rows[self._n] = row
        self._cols[self._n] = col
        self._vals[self._n] = y
        self._times[self._n] = t
        self._n += 1
        self._validate(self._n - 1)

    @property
    def rows(self):
        return self._rows[: self._n]

    @property
    def cols(self):
        return self._cols[: self._n]

    @property
    def values(self):
        return self._vals[: self._n]

    @property
    def times(self):
        return self._times[: self._n]

    def slice(self, start, stop):
        return ObservationSet(
            self.d_r, self.d_c, self.rows[start:stop], self.cols[start:stop],
            self.values[start:stop], self.times[start:stop],
        )

    def split_halves(self):
        """Chronological split; the first half gets the extra item when odd."""
        cut = (self._n + 1) // 2
        return self.slice(0, cut), self.slice(cut, self._n)

    def cell_stats(self):
        """Per-cell observation counts and value sums as dense grids."""
        flat = self.rows * self.d_c + self.cols
        size = self.d_r * self.d_c
        counts = np.bincount(flat, minlength=size).reshape(self.d_r, self.d_c)
        sums = np.bincount(flat, weights=self.values, minlength=size).reshape(self.d_r, self.d_c)
        return counts, sums

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "row", "col", "y"])
            for t, j, k, y in zip(self.times, self.rows, self.cols, self.values):
                w.writerow([int(t), int(j) + 1, int(k) + 1, repr(float(y))])

    @classmethod
    def from_csv(cls, path, d_r, d_c):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["t", "row", "col", "y"]:
                raise ValueError(f"{path}: expected header t,row,col,y")
            recs = [(int(r["t"]), int(r["row"]) - 1, int(r["col"]) - 1, float(r["y"])) for r in reader]
        if not recs:
            return cls(d_r, d_c)
        t, j, k, y = map(np.array, zip(*recs))
        return cls(d_r, d_c, j, k, y, t)


@dataclass(frozen=True)
class SolverConfig:
    """Settings for the nuclear-norm penalised least-squares solver.

    ``lam`` is the fixed penalty when ``lambda_rule == "fixed"``.  With the
    ``"inverse_sqrt_n"`` rule the penalty is
    ``lambda_scale / sqrt(n * d_r * d_c)`` with ``n`` the number of
    observations fed to the solver.  The ``1/sqrt(d_r d_c)`` factor puts the
    penalty on the scale of the sampling operator; without it the default
    exceeds ``lambda_max`` for typical bandit sample sizes and the fit is zero.
    """

    lambda_rule: str = "inverse_sqrt_n"
    lam: float = 0.0
    lambda_scale: float = 1.0
    rel_tol: float = 1e-6
    max_iters: int = 500
    acceleration: bool = True

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.lambda_rule not in ("fixed", "inverse_sqrt_n"):
            raise ValueError(f"unknown lambda rule {self.lambda_rule!r}")

    def penalty(self, n, d_r=1, d_c=1):
        if self.lambda_rule == "fixed":
            return float(self.lam)
        return self.lambda_scale * math.sqrt(1.0 / (n * d_r * d_c))


@dataclass
class LowRankEstimate:
    matrix: np.ndarray
    rank_used: int
    objective_trace: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    first_stage: np.ndarray | None = None  # pre-enhancement fit, if any


def svt_shrink(M, tau):
    """Proximal map of ``tau * ||.||_*``: soft-threshold the singular values."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    M = np.asarray(M, dtype=float)
    if tau == 0:
        return M.copy()
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    if not keep.any():
        return np.zeros_like(M)
    return (U[:, keep] * s[keep]) @ Vt[keep]


def nuclear_norm(M):
    return float(np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False).sum())


def lambda_max(obs):
    """Smallest penalty at which the zero matrix solves the penalised problem.

    Zero is optimal iff the smooth gradient at zero, ``-(2/n) S`` with ``S`` the
    per-cell sum of observed values, has spectral norm at most lambda.
    """
    _, sums = obs.cell_stats()
    return 2.0 / len(obs) * float(np.linalg.norm(sums, 2))


def objective(B, counts, sums, sum_sq, n, lam):
    """``(1/n) ||Y - X(B)||^2 + lam ||B||_*`` evaluated from cell statistics."""
    resid = float((counts * B * B).sum() - 2.0 * (sums * B).sum() + sum_sq) / n
    return max(resid, 0.0) + lam * nuclear_norm(B)


def solve_nuclear_norm(obs, d_r=None, d_c=None, cfg=SolverConfig(), warm_start=None):
    """Nuclear-norm penalised least squares by (accelerated) proximal gradient.

    Repeated observations of a cell each contribute their own residual, so the
    gradient Lipschitz constant is ``2 * max_multiplicity / n``.  With
    acceleration on, a momentum step that fails to decrease the objective is
    discarded and replaced by a plain proximal step from the last accepted
    iterate (monotone restart), which keeps ``objective_trace`` nonincreasing.
    """
    n = len(obs)
    if n < 1:
        raise EmptyObservations("no observations to fit")
    d_r = obs.d_r if d_r is None else d_r
    d_c = obs.d_c if d_c is None else d_c
    counts, sums = obs.cell_stats()
    sum_sq = float(np.dot(obs.values, obs.values))
    lam = cfg.penalty(n, d_r, d_c)
    step = n / (2.0 * counts.max())
    tau = step * lam

    def prox_step(Y):
        grad = (2.0 / n) * (counts * Y - sums)
        return svt_shrink(Y - step * grad, tau)

    def F(B):
        return objective(B, counts, sums, sum_sq, n, lam)

    X = np.zeros((d_r, d_c)) if warm_start is None else np.array(warm_start, dtype=float)
    fx = F(X)
    trace = [fx]
    Y, X_prev, mom = X, X, 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        Z = prox_step(Y)
        fz = F(Z)
        if fz > fx and cfg.acceleration and Y is not X:
            # momentum overshoot: restart from the accepted iterate
            Z = prox_step(X)
            fz = F(Z)
            mom = 1.0
        if fz > fx:
            # proximal steps from X cannot increase F beyond rounding
            Z, fz = X, fx
        X_prev, X = X, Z
        decrease = fx - fz
        fx = fz
        trace.append(fx)
        if cfg.acceleration:
            mom_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * mom * mom))
            Y = X + ((mom - 1.0) / mom_next) * (X - X_prev)
            mom = mom_next
        else:
            Y = X
        if decrease <= cfg.rel_tol * max(abs(fx), 1e-300):
            converged = True
            break
    sv = np.linalg.svd(X, compute_uv=False)
    rank = int(np.count_nonzero(sv > RANK_RTOL * sv[0])) if sv.size and sv[0] > 0 else 0
    return LowRankEstimate(X, rank, trace, converged, it)


def _svals_rank(D, rank):
    if D.size < rank or D[0] <= 0 or D[rank - 1] <= RANK_RTOL * D[0]:
        raise RankDeficient(f"estimate has fewer than {rank} nonzero singular values")


def row_enhance(estimate, second_half, rank, min_direction_sv=None):
    """Refit every observed row inside the top-``rank`` right singular subspace.

    Rows without observations in ``second_half`` keep the input row.  For an
    observed row the fit starts from the input row's coordinates in the
    subspace and corrects them by least squares along the directions of the
    row design whose singular value is at least ``min_direction_sv`` (default
    ``sqrt(rank / d_c)``, the typical norm of one design row).  Weakly
    determined directions keep their first-stage value instead of amplifying
    noise; with a well-conditioned design this is ordinary least squares.
    """
    Bbar = estimate.matrix if isinstance(estimate, LowRankEstimate) else np.asarray(estimate, dtype=float)
    d_r, d_c = Bbar.shape
    if not 1 <= rank <= min(d_r, d_c):
        raise ValueError("rank out of range")
    _, D, Vt = np.linalg.svd(Bbar, full_matrices=False)
    _svals_rank(D, rank)
    Vr = Vt[:rank].T
    if min_direction_sv is None:
        min_direction_sv = math.sqrt(rank / d_c)
    cutoff = max(min_direction_sv, ILL_CONDITIONED)
    out = np.array(Bbar, dtype=float, copy=True)
    rows, cols, ys = second_half.rows, second_half.cols, second_half.values
    order = np.argsort(rows, kind="stable")
    rows, cols, ys = rows[order], cols[order], ys[order]
    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]]) if rows.size else np.array([], int)
    ends = np.r_[starts[1:], rows.size]
    for a, b in zip(starts, ends):
        design = Vr[cols[a:b]]
        u, s, vt = np.linalg.svd(design, full_matrices=False)
        keep = s >= cutoff
        if not keep.any():
            continue
        # start from the first-stage coordinates and refit only the
        # well-determined directions against the residual
        theta = Vr.T @ Bbar[rows[a]]
        resid = ys[a:b] - design @ theta
        theta = theta + vt[keep].T @ ((u[:, keep].T @ resid) / s[keep])
        out[rows[a]] = Vr @ theta
    trace = estimate.objective_trace if isinstance(estimate, LowRankEstimate) else []
    converged = estimate.converged if isinstance(estimate, LowRankEstimate) else True
    return LowRankEstimate(out, rank, list(trace), converged, first_stage=Bbar)


def estimate_rank(B, ratio=0.05):
    """Largest r with ``sigma_r / sigma_1 >= ratio`` (for use without ground truth)."""
    D = np.linalg.svd(np.asarray(B, dtype=float), compute_uv=False)
    if D.size == 0 or D[0] <= 0:
        return 0
    return int(np.count_nonzero(D >= ratio * D[0]))


def forced_sample_estimate(forced, d_r=None, d_c=None, rank=None, cfg=SolverConfig(), warm_start=None,
                           min_direction_sv=None):
    """Low-rank fit on the first half of ``forced``, row-enhanced with the second.

    ``rank=None`` estimates the rank from the first-stage fit.
    """
    if len(forced) < 2:
        raise TooFewSamples("need at least two forced samples")
    first, second = forced.split_halves()
    fit = solve_nuclear_norm(first, d_r, d_c, cfg, warm_start=warm_start)
    if rank is None:
        rank = max(1, estimate_rank(fit.matrix))
    return row_enhance(fit, second, rank, min_direction_sv)
