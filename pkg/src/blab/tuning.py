"""Parameter selection from the regret-bound decomposition.

The bound on LRB regret splits into a forced-sampling part ``phi1`` that
shrinks as the filtering resolution ``h`` grows, and a UCB part ``phi2`` that
grows with the number of near-optimal arms ``g(h)``.  The theory constants are
unidentified, so they are folded into the scale factors ``omega1``, ``omega2``
(and ``c1``, ``c2`` for the lower limit on ``h``), all defaulting to one.  The
bounds are meant for relative comparisons, not absolute regret predictions.

g models are callables ``g(h, m_r, m_c)``; psi models are callables
``psi(m_r, m_c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy import stats

from .matrix_core import psi_closed_form


@dataclass(frozen=True)
class CostModel:
    """Constants and dimensions entering ``phi1``, ``phi2`` and the ``h`` range.

    ``d_r, d_c`` are the full matrix dimensions; ``m_r, m_c`` the (sub)matrix
    the bound is evaluated on, defaulting to the full matrix.
    """

    d_r: int = 100
    d_c: int = 100
    rank: int = 3
    omega1: float = 1.0
    omega2: float = 1.0
    b_star: float = 1.0
    mu_star: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    m_r: int | None = None
    m_c: int | None = None

    def __post_init__(self):
        if self.m_r is None:
            object.__setattr__(self, "m_r", self.d_r)
        if self.m_c is None:
            object.__setattr__(self, "m_c", self.d_c)
        for name in ("omega1", "omega2", "b_star", "mu_star", "c1", "c2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (1 <= self.m_r <= self.d_r and 1 <= self.m_c <= self.d_c):
            raise ValueError("submatrix dimensions out of range")
        if self.rank < 1:
            raise ValueError("rank must be positive")

    def with_dims(self, m_r, m_c):
        return replace(self, m_r=int(m_r), m_c=int(m_c))

    @property
    def is_full(self):
        return self.m_r == self.d_r and self.m_c == self.d_c


class HChoice(NamedTuple):
    """Selected resolution; ``case`` is 1, 2, 3, or 0 when the range is empty."""

    h: float
    case: int

    @property
    def forced_sampling(self):
        # the large-h case turns forced sampling off entirely
        return self.case != 3


class SubmatrixChoice(NamedTuple):
    m_r: int
    m_c: int
    h: float
    case: int
    bound: float


class FitCoefficients(NamedTuple):
    a1: float
    b1: float
    a2: float
    b2: float
    r2_g: float
    r2_psi: float


# --------------------------------------------------------------------------
# g and psi models

@dataclass(frozen=True)
class ExpFitG:
    """``g(h) = exp(a1 h + b1)``, the same for every submatrix size.

    Capped at ``m_r m_c`` since a set cannot hold more arms than the matrix.
    """

    a1: float = 1.719
    b1: float = 0.057

    def __call__(self, h, m_r, m_c):
        return np.minimum(np.exp(self.a1 * np.asarray(h, dtype=float) + self.b1), float(m_r * m_c))


class EmpiricalG:
    """g measured on a given matrix, averaged over random submatrices.

    For a proper submatrix the value returned is ``E[sqrt g]^2`` over
    ``n_draws`` index sets, so that ``phi2`` carries the expectation of
    ``sqrt g`` that appears in the subsampled bound.  Each size's draws are
    fixed at first use, which keeps the model deterministic and monotone in h.
    """

    def __init__(self, B, n_draws=200, seed=0):
        self.B = np.asarray(B, dtype=float)
        self.n_draws = int(n_draws)
        self.seed = seed
        self._cache = {}

    def _gaps(self, m_r, m_c):
        key = (m_r, m_c)
        if key not in self._cache:
            d_r, d_c = self.B.shape
            if m_r == d_r and m_c == d_c:
                subs = [self.B]
            else:
                rng = np.random.default_rng([self.seed, m_r, m_c])
                subs = []
                for _ in range(self.n_draws):
                    rows = rng.choice(d_r, m_r, replace=False)
                    cols = rng.choice(d_c, m_c, replace=False)
                    subs.append(self.B[np.ix_(rows, cols)])
            # gap of every entry to its submatrix maximum, sorted per draw
            self._cache[key] = [np.sort((S.max() - S).ravel()) for S in subs]
        return self._cache[key]

    def __call__(self, h, m_r, m_c):
        h = np.asarray(h, dtype=float)
        roots = [np.sqrt(np.searchsorted(g, h, side="right")) for g in self._gaps(m_r, m_c)]
        return np.mean(roots, axis=0) ** 2


@dataclass(frozen=True)
class FitPsi:
    """``psi = a2 log(eta) + b2`` with ``eta = sqrt(m_r m_c / (d_r d_c))``.

    Clipped at zero and exactly zero for the full matrix.
    """

    d_r: int
    d_c: int
    a2: float = -2.074
    b2: float = -0.002

    def __call__(self, m_r, m_c):
        if m_r == self.d_r and m_c == self.d_c:
            return 0.0
        eta = math.sqrt(m_r * m_c / (self.d_r * self.d_c))
        return max(0.0, self.a2 * math.log(eta) + self.b2)


@dataclass(frozen=True)
class ClosedFormPsi:
    """psi for i.i.d. uniform, gaussian or exponential entries."""

    dist: str
    d_r: int
    d_c: int

    def __call__(self, m_r, m_c):
        eta = math.sqrt(m_r * m_c / (self.d_r * self.d_c))
        return psi_closed_form(self.dist, self.d_r, self.d_c, eta)


# --------------------------------------------------------------------------
# bound terms

def gamma(h, model):
    return math.sqrt(model.m_r / model.rank) * h / (64.0 * model.mu_star)


def phi1(h, t, model):
    """Forced-sampling part of the bound on the model's (sub)matrix."""
    h = np.asarray(h, dtype=float)
    inv_gamma_sq = (64.0 * model.mu_star) ** 2 * model.rank / (model.m_r * h * h)
    return model.omega1 * (1.0 + inv_gamma_sq) * model.rank * (model.m_r + model.m_c) * math.log(t)


def phi2(h, t, model, g_eval):
    """UCB part of the bound: ``omega2 sqrt(2 t g(h) log t)``."""
    g = g_eval(h, model.m_r, model.m_c)
    return model.omega2 * np.sqrt(2.0 * t * np.asarray(g, dtype=float) * math.log(t))


def bound(h, t, model, g_eval):
    return phi1(h, t, model) + phi2(h, t, model, g_eval)


def h_lower_bound(T, model):
    """Smallest usable resolution at horizon ``T`` on the model's (sub)matrix."""
    first = 64.0 * model.mu_star * math.sqrt(2.0 * model.c1 * model.rank / (T * model.m_r))
    return max(first, 2.0 * model.c2 / T)


def select_h(model, T, g_eval, rel_width=1e-6):
    """Pick ``h`` from the crossing of ``phi1`` and ``phi2`` on ``[lowh, 2 b*]``.

    ``phi1`` strictly decreases and ``phi2`` weakly increases in ``h``, so the
    sign of their difference at the two ends decides the case, and in the
    mixed case the crossing is unique and found by bisection.
    """
    lo, hi = h_lower_bound(T, model), 2.0 * model.b_star
    if lo > hi:
        return HChoice(hi, 0)

    def diff(h):
        return float(phi1(h, T, model) - phi2(h, T, model, g_eval))

    if diff(lo) < 0:
        return HChoice(lo, 1)
    if diff(hi) > 0:
        return HChoice(hi, 3)
    while hi - lo > rel_width * hi:
        mid = 0.5 * (lo + hi)
        if diff(mid) > 0:
            lo = mid
        else:
            hi = mid
    return HChoice(0.5 * (lo + hi), 2)


# --------------------------------------------------------------------------
# submatrix size and switching horizon

def square_grid(d_r, d_c, etas=None):
    etas = np.round(np.arange(1, 11) / 10, 10) if etas is None else etas
    out = []
    for eta in etas:
        pair = (max(1, int(round(eta * d_r))), max(1, int(round(eta * d_c))))
        if pair not in out:
            out.append(pair)
    return out


def subsampled_bound(model, psi_eval, T, g_eval, m_r, m_c):
    sub = model.with_dims(m_r, m_c)
    choice = select_h(sub, T, g_eval)
    value = psi_eval(m_r, m_c) * T + float(bound(choice.h, T, sub, g_eval))
    return choice, value


def select_submatrix(model, psi_eval, T, g_eval, grid=None):
    """Minimise ``psi T + phi1 + phi2`` over candidate submatrix sizes.

    Each candidate uses its own selected ``h``.  Exact ties go to the larger
    ``m_r + m_c``.
    """
    grid = square_grid(model.d_r, model.d_c) if grid is None else list(grid)
    if not grid:
        raise ValueError("empty submatrix grid")
    best = None
    for m_r, m_c in grid:
        choice, value = subsampled_bound(model, psi_eval, T, g_eval, m_r, m_c)
        cand = SubmatrixChoice(int(m_r), int(m_c), choice.h, choice.case, value)
        if best is None or (value, -(m_r + m_c)) < (best.bound, -(best.m_r + best.m_c)):
            best = cand
    return best


def geometric_grid(start=10, stop=10**7, ratio=1.2):
    out, T = [], float(start)
    while T <= stop:
        v = int(round(T))
        if not out or v > out[-1]:
            out.append(v)
        T *= ratio
    return out


def estimate_T_ss(model, psi_eval, g_eval, T_grid=None, grid=None):
    """First horizon from which the full matrix wins at every larger grid point.

    Returns ``math.inf`` if subsampling still wins at the last grid point.
    """
    T_grid = geometric_grid() if T_grid is None else list(T_grid)
    full = (model.d_r, model.d_c)
    T_ss = math.inf
    for T in reversed(T_grid):
        pick = select_submatrix(model, psi_eval, T, g_eval, grid)
        if (pick.m_r, pick.m_c) != full:
            break
        T_ss = T
    return T_ss


# --------------------------------------------------------------------------
# empirical fits and calibration

def fit_g_and_psi(hs, gs, etas, psis):
    """OLS fits ``log g = a1 h + b1`` and ``psi = a2 log(eta) + b2``."""
    hs, gs = np.asarray(hs, dtype=float), np.asarray(gs, dtype=float)
    etas, psis = np.asarray(etas, dtype=float), np.asarray(psis, dtype=float)
    if hs.size < 3 or etas.size < 3:
        raise ValueError("need at least three points per fit")
    if np.any(gs <= 0):
        raise ValueError("g values must be positive")
    fg = stats.linregress(hs, np.log(gs))
    fp = stats.linregress(np.log(etas), psis)
    return FitCoefficients(
        float(fg.slope), float(fg.intercept), float(fp.slope), float(fp.intercept),
        float(min(1.0, fg.rvalue ** 2)), float(min(1.0, fp.rvalue ** 2)),
    )


def family_g_curve(sampler: Callable, hs, n_matrices=100, seed=0):
    """Mean g(h) over fresh matrices ``sampler(rng)`` from one family."""
    rng = np.random.default_rng(seed)
    hs = np.asarray(hs, dtype=float)
    total = np.zeros(hs.size)
    for _ in range(n_matrices):
        B = np.asarray(sampler(rng), dtype=float)
        total += np.searchsorted(np.sort((B.max() - B).ravel()), hs, side="right")
    return total / n_matrices


def calibrate_omegas(model, pilots, g_eval):
    """Scale factors matching the bound parts to observed regret parts.

    ``pilots`` holds ``(h, T, part1, part2)`` tuples from pilot runs.  Each
    omega is the least-squares ratio of observed part to the unit-scale term.
    """
    unit = replace(model, omega1=1.0, omega2=1.0)
    p1 = np.array([float(phi1(h, T, unit)) for h, T, _, _ in pilots])
    p2 = np.array([float(phi2(h, T, unit, g_eval)) for h, T, _, _ in pilots])
    o1 = np.array([a for _, _, a, _ in pilots], dtype=float)
    o2 = np.array([b for _, _, _, b in pilots], dtype=float)
    w1 = float(p1 @ o1 / (p1 @ p1))
    w2 = float(p2 @ o2 / (p2 @ p2))
    # a zero observed part would give a zero scale, which the model rejects
    tiny = 1e-12
    return replace(model, omega1=max(w1, tiny), omega2=max(w2, tiny))
