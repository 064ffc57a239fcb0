"""Simulation environments and regret accounting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRange
from .matrix_core import Arm, as_reward_matrix, numerical_rank

_NOISE_BLOCK = 4096


class Environment:
    """Noisy reward oracle over a fixed mean-reward matrix.

    The noise for round ``t`` is the ``t``-th draw of a dedicated stream, so a
    reward depends only on (seed, t, arm).  Two policies facing environments
    built from the same seed therefore see identical rewards whenever they
    pull the same arm in the same round.
    """

    def __init__(self, truth, noise_sd=0.1, seed=0):
        if noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        self.truth = as_reward_matrix(truth)
        self.noise_sd = float(noise_sd)
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._noise = np.empty(0)
        flat = self.truth.ravel()
        self.best_value = float(flat.max())
        self.worst_value = float(flat.min())

    @property
    def shape(self):
        return self.truth.shape

    def _noise_at(self, t):
        while self._noise.size < t:
            self._noise = np.concatenate([self._noise, self._rng.standard_normal(_NOISE_BLOCK)])
        return self._noise[t - 1]

    def pull(self, arm, t):
        j, k = arm
        d_r, d_c = self.truth.shape
        if not (0 <= j < d_r and 0 <= k < d_c):
            raise OutOfRange(f"arm {(j, k)} outside {d_r}x{d_c}")
        if t < 1:
            raise ValueError("rounds are numbered from 1")
        mean = float(self.truth[j, k])
        if self.noise_sd == 0:
            return mean
        return mean + self.noise_sd * float(self._noise_at(t))

    def regret_of(self, arm):
        return self.best_value - float(self.truth[arm[0], arm[1]])


def oracle_gap_and_best(B):
    """All maximising arms and the gap to the best strictly suboptimal entry.

    The gap is ``None`` when every entry is equal.
    """
    B = np.asarray(B, dtype=float)
    top = B.max()
    jj, kk = np.nonzero(B == top)
    best = {Arm(int(j), int(k)) for j, k in zip(jj, kk)}
    below = B[B < top]
    gap = float(top - below.max()) if below.size else None
    return best, gap


@dataclass
class ContextualInstance:
    """Low-rank matrix built from latent arm features and a shared context.

    ``B[j, k] = <A_jk, X>`` with ``A_jk`` the ``j``-th row of ``U V_k^T``.
    """

    U: np.ndarray
    V: np.ndarray  # shape (d_c, p, rank): V[k] is the p x rank block V_k
    X: np.ndarray
    noise_sd: float = 0.1

    @property
    def d_r(self):
        return self.U.shape[0]

    @property
    def d_c(self):
        return self.V.shape[0]

    @property
    def p(self):
        return self.X.shape[0]

    @property
    def rank(self):
        return self.U.shape[1]

    def arm_features(self):
        """``A[j, k]`` = latent feature vector of arm (j, k), shape (d_r, d_c, p)."""
        return np.einsum("jr,kpr->jkp", self.U, self.V)

    @property
    def truth(self):
        # column k = U V_k^T X
        return as_reward_matrix(self.U @ np.einsum("kpr,p->rk", self.V, self.X))

    @property
    def theta(self):
        """Stacked parameter vector of length d_r * d_c * p, arm-major."""
        return self.arm_features().reshape(-1)

    def lifted_feature(self, j, k):
        """Sparse lifted arm vector: (nonzero block offset, block values)."""
        return (j * self.d_c + k) * self.p, self.X

    def lifted_dense(self, j, k):
        v = np.zeros(self.d_r * self.d_c * self.p)
        off, block = self.lifted_feature(j, k)
        v[off:off + self.p] = block
        return v

    def environment(self, seed):
        return Environment(self.truth, self.noise_sd, seed)


def generate_contextual(d_r, d_c, rank, p, noise_sd=0.1, seed=0):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    U = rng.standard_normal((d_r, rank))
    V = rng.standard_normal((d_c, p, rank))
    X = rng.standard_normal(p)
    inst = ContextualInstance(U, V, X, noise_sd)
    assert numerical_rank(inst.truth) <= rank
    return inst


@dataclass
class RegretTrace:
    """Per-round record of one policy on one replicate.

    ``shortfall`` is, for each unforced round, how far the best arm of the
    policy's candidate set falls below the overall best (zero when the policy
    considers every arm).
    """

    policy: str
    replicate: int
    rows: np.ndarray
    cols: np.ndarray
    rewards: np.ndarray
    inst_regret: np.ndarray
    forced: np.ndarray = field(default=None)
    shortfall: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.forced is None:
            self.forced = np.zeros(self.rows.size, dtype=bool)
        if self.shortfall is None:
            self.shortfall = np.zeros(self.rows.size)

    @property
    def horizon(self):
        return self.rows.size

    @property
    def cum_regret(self):
        return np.cumsum(self.inst_regret)

    @property
    def final_regret(self):
        return float(self.inst_regret.sum())


TRACE_HEADER = ["replicate", "t", "policy", "row", "col", "reward", "inst_regret", "cum_regret"]


def write_traces(traces, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for tr in traces:
            cum = tr.cum_regret
            for i in range(tr.horizon):
                w.writerow([
                    tr.replicate, i + 1, tr.policy, int(tr.rows[i]) + 1, int(tr.cols[i]) + 1,
                    repr(float(tr.rewards[i])), repr(float(tr.inst_regret[i])), repr(float(cum[i])),
                ])


def read_traces(path):
    """Load a traces CSV back into a list of :class:`RegretTrace` (forced flags unknown)."""
    groups = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            key = (int(rec["replicate"]), rec["policy"])
            groups.setdefault(key, []).append(rec)
    out = []
    for (rep, pol), recs in groups.items():
        recs.sort(key=lambda r: int(r["t"]))
        out.append(RegretTrace(
            pol, rep,
            np.array([int(r["row"]) - 1 for r in recs]),
            np.array([int(r["col"]) - 1 for r in recs]),
            np.array([float(r["reward"]) for r in recs]),
            np.array([float(r["inst_regret"]) for r in recs]),
        ))
    return out
