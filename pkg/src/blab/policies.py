"""Sequential decision rules over a matrix of arms.

Every policy exposes the same two-call protocol used by the experiment loop::

    arm, forced = policy.select(t)
    policy.update(t, arm, reward, forced)

Arms are 0-based ``(row, col)`` pairs.  All randomness, including
tie-breaking, comes from the policy's own seeded generator.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BlabError, ConfigError, DimensionMismatch
from .estimator import LowRankEstimate, ObservationSet, SolverConfig, forced_sample_estimate
from .matrix_core import Arm


# --------------------------------------------------------------------------
# forced sampling

@dataclass(frozen=True)
class ForcedSamplingConfig:
    """Either a randomized schedule with parameter ``rho`` or a fixed budget ``f``.

    In budget mode the first ``f`` rounds are all forced, each drawing an arm
    uniformly at random (with replacement).
    """

    mode: str = "budget"
    f: int = 0
    rho: float = 1.0

    def __post_init__(self):
        if self.mode == "schedule":
            if self.rho < 1:
                raise ValueError("schedule mode needs rho >= 1")
        elif self.mode == "budget":
            if self.f < 0:
                raise ValueError("forced budget must be nonnegative")
        else:
            raise ValueError(f"unknown forced-sampling mode {self.mode!r}")

    @classmethod
    def schedule(cls, rho):
        return cls(mode="schedule", rho=float(rho))

    @classmethod
    def budget(cls, f):
        return cls(mode="budget", f=int(f))


def forcing_probability(cfg, t):
    """Probability that round ``t`` is forced under ``cfg``."""
    if cfg.mode == "budget":
        return 1.0 if t <= cfg.f else 0.0
    rho = cfg.rho
    rho_log = rho * math.log(rho)
    if t <= 2 * rho_log:
        return 1.0
    return min(1.0, rho / (t - rho_log + 1))


def forced_sampling_draw(cfg, t, d_r, d_c, rng):
    """Forced arm for round ``t``, or ``None`` if the round is not forced.

    The schedule draws "force or not" first and then a uniform arm, which gives
    every arm probability ``p_force / (d_r d_c)``.  Budget mode consumes no
    randomness once the budget is spent.
    """
    if t < 1:
        raise ValueError("rounds are numbered from 1")
    if cfg.mode == "budget":
        if t > cfg.f:
            return None
    elif rng.random() >= forcing_probability(cfg, t):
        return None
    flat = int(rng.integers(d_r * d_c))
    return Arm(flat // d_c, flat % d_c)


# --------------------------------------------------------------------------
# UCB machinery

def exploration_log(t, w_rule="empirical"):
    if w_rule == "empirical":
        w = 1.0 + t * math.log(t) ** 2
    elif w_rule == "analysis":
        w = float(t)
    else:
        raise ValueError(f"unknown w rule {w_rule!r}")
    return math.log(w)


def ucb_index(n, s, t, w_rule="empirical"):
    """Optimistic index ``s/n + sqrt(2 log w(t) / n)``; unpulled arms get +inf."""
    if n == 0:
        return math.inf
    return s / n + math.sqrt(2.0 * exploration_log(t, w_rule) / n)


def ucb_indices(counts, sums, t, w_rule="empirical"):
    """Vectorised :func:`ucb_index`."""
    logw = exploration_log(t, w_rule)
    out = np.full(counts.shape, np.inf)
    seen = counts > 0
    c = counts[seen]
    out[seen] = sums[seen] / c + np.sqrt(2.0 * logw / c)
    return out


def _argmax_random(values, rng):
    best = np.flatnonzero(values == values.max())
    if best.size == 1:
        return int(best[0])
    return int(best[rng.integers(best.size)])


def ucb_choose(candidates, counts, sums, t, w_rule, rng):
    """Flat arm index in ``candidates`` maximising the UCB index (random ties)."""
    idx = ucb_indices(counts[candidates], sums[candidates], t, w_rule)
    return int(candidates[_argmax_random(idx, rng)])


def targeted_mask(estimate, h):
    """Arms whose estimated mean is within ``h/2`` of the estimated maximum."""
    E = np.asarray(estimate, dtype=float)
    return E >= E.max() - h / 2.0


# --------------------------------------------------------------------------
# Low-Rank Bandit

@dataclass(frozen=True)
class LrbConfig:
    h: float = 1.0
    forced: ForcedSamplingConfig = field(default_factory=ForcedSamplingConfig)
    rank: int | None = 3
    solver: SolverConfig = field(default_factory=SolverConfig)
    w_rule: str = "empirical"
    recompute: str = "on_new_forced_sample"
    every_k: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("filtering resolution h must be positive")
        if self.recompute not in ("on_new_forced_sample", "every_k"):
            raise ValueError(f"unknown recompute rule {self.recompute!r}")
        if self.every_k < 1:
            raise ValueError("every_k must be at least 1")


class LrbState:
    """Runtime state of a Low-Rank Bandit instance."""

    def __init__(self, d_r, d_c):
        self.d_r, self.d_c = d_r, d_c
        self.forced_log = ObservationSet(d_r, d_c)
        self.counts = np.zeros(d_r * d_c, dtype=np.int64)
        self.sums = np.zeros(d_r * d_c)
        self.cached_estimate = None
        self.targeted = None  # flat indices of the targeted set
        self.estimated_with = -1  # forced-log size behind cached_estimate
        self.last_recompute = 0
        self.round = 0

    @property
    def targeted_set(self):
        if self.targeted is None:
            return None
        return {Arm(int(i) // self.d_c, int(i) % self.d_c) for i in self.targeted}

    def means(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return (self.sums / self.counts).reshape(self.d_r, self.d_c)


def _default_estimator(forced, d_r, d_c, cfg, state):
    prev = state.cached_estimate
    warm = prev.first_stage if isinstance(prev, LowRankEstimate) else None
    return forced_sample_estimate(forced, d_r, d_c, cfg.rank, cfg.solver, warm_start=warm)


def _refresh_estimate(state, cfg, t, estimator):
    n_forced = len(state.forced_log)
    stale = n_forced != state.estimated_with
    if cfg.recompute == "every_k" and t - state.last_recompute < cfg.every_k and state.cached_estimate is not None:
        stale = False
    if not stale:
        return
    state.estimated_with = n_forced
    state.last_recompute = t
    try:
        est = estimator(state.forced_log, state.d_r, state.d_c, cfg, state)
    except (BlabError, np.linalg.LinAlgError):
        est = None
    if est is None:
        state.cached_estimate = None
        state.targeted = None
        return
    state.cached_estimate = est
    E = est.matrix if isinstance(est, LowRankEstimate) else np.asarray(est, dtype=float)
    if not np.all(np.isfinite(E)):
        state.cached_estimate = None
        state.targeted = None
        return
    state.targeted = np.flatnonzero(targeted_mask(E, cfg.h).ravel())


def lrb_step(state, cfg, t, rng, estimator=_default_estimator):
    """Choose the arm for round ``t``; returns ``(arm, was_forced)``.

    Falls back to UCB over every arm whenever no estimate is available.
    """
    forced = forced_sampling_draw(cfg.forced, t, state.d_r, state.d_c, rng)
    if forced is not None:
        return forced, True
    _refresh_estimate(state, cfg, t, estimator)
    if state.targeted is None:
        candidates = np.arange(state.d_r * state.d_c)
    else:
        candidates = state.targeted
    flat = ucb_choose(candidates, state.counts, state.sums, t, cfg.w_rule, rng)
    return Arm(flat // state.d_c, flat % state.d_c), False


def lrb_update(state, arm, reward, was_forced, t=None):
    """Record one observation; forced and unforced rounds both feed the UCB means."""
    j, k = arm
    t = state.round + 1 if t is None else t
    flat = j * state.d_c + k
    state.counts[flat] += 1
    state.sums[flat] += reward
    if was_forced:
        state.forced_log.append(t, j, k, reward)
    state.round = t
    return state


class Policy:
    """Base class; subclasses implement ``select`` and ``update``."""

    name = "policy"

    def select(self, t):
        raise NotImplementedError

    def update(self, t, arm, reward, forced):
        raise NotImplementedError

    def candidate_arms(self):
        """Flat indices the policy currently restricts itself to (None: all arms)."""
        return None


class LrbPolicy(Policy):
    name = "lrb"

    def __init__(self, d_r, d_c, cfg=LrbConfig(), seed=0, estimator=_default_estimator):
        self.d_r, self.d_c = d_r, d_c
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.state = LrbState(d_r, d_c)
        self.estimator = estimator

    def select(self, t):
        return lrb_step(self.state, self.cfg, t, self.rng, self.estimator)

    def update(self, t, arm, reward, forced):
        lrb_update(self.state, arm, reward, forced, t)

    def candidate_arms(self):
        return self.state.targeted


class SubmatrixPolicy(Policy):
    """Run an inner policy on a fixed submatrix and translate its arms back."""

    def __init__(self, rows, cols, inner, d_c):
        self.rows = np.asarray(rows)
        self.cols = np.asarray(cols)
        self.inner = inner
        self.full_cols = int(d_c)
        self._cand, self._cand_src = None, None

    def select(self, t):
        (j, k), forced = self.inner.select(t)
        return Arm(int(self.rows[j]), int(self.cols[k])), forced

    def update(self, t, arm, reward, forced):
        j = int(np.searchsorted(self.rows, arm[0]))
        k = int(np.searchsorted(self.cols, arm[1]))
        self.inner.update(t, Arm(j, k), reward, forced)

    def candidate_arms(self):
        inner = self.inner.candidate_arms()
        if self._cand is not None and inner is self._cand_src:
            return self._cand
        m_c = self.cols.size
        flat = np.arange(self.rows.size * m_c) if inner is None else inner
        self._cand_src = inner
        self._cand = self.rows[flat // m_c] * self.full_cols + self.cols[flat % m_c]
        return self._cand


def _sub_rng(seed):
    return np.random.default_rng([int(seed), 1])


def ss_lrb_policy(d_r, d_c, m_r, m_c, lrb_cfg=LrbConfig(), seed=0):
    """Low-Rank Bandit on a random ``m_r x m_c`` submatrix.

    Index sets are drawn without replacement from a stream separate from the
    inner policy's, and kept sorted, so the full-size case reduces to plain
    LRB with the same seed.
    """
    if not (1 <= m_r <= d_r and 1 <= m_c <= d_c):
        raise ValueError("submatrix size out of range")
    rng = _sub_rng(seed)
    rows = np.sort(rng.choice(d_r, m_r, replace=False))
    cols = np.sort(rng.choice(d_c, m_c, replace=False))
    if lrb_cfg.rank is not None and lrb_cfg.rank > min(m_r, m_c):
        # a submatrix cannot carry more rank than its smaller side
        lrb_cfg = replace(lrb_cfg, rank=min(m_r, m_c))
    pol = SubmatrixPolicy(rows, cols, LrbPolicy(m_r, m_c, lrb_cfg, seed), d_c)
    pol.name = "sslrb"
    return pol


class UcbPolicy(Policy):
    """UCB over a list of flat arm indices (default: every arm)."""

    name = "ucb"

    def __init__(self, d_r, d_c, w_rule="empirical", seed=0, arms=None):
        self.d_r, self.d_c = d_r, d_c
        self.w_rule = w_rule
        self.rng = np.random.default_rng(seed)
        self.arms = np.arange(d_r * d_c) if arms is None else np.asarray(arms, dtype=np.int64)
        self.counts = np.zeros(d_r * d_c, dtype=np.int64)
        self.sums = np.zeros(d_r * d_c)

    def select(self, t):
        flat = ucb_choose(self.arms, self.counts, self.sums, t, self.w_rule, self.rng)
        return Arm(flat // self.d_c, flat % self.d_c), False

    def update(self, t, arm, reward, forced):
        flat = arm[0] * self.d_c + arm[1]
        self.counts[flat] += 1
        self.sums[flat] += reward

    def candidate_arms(self):
        return None if self.arms.size == self.d_r * self.d_c else self.arms


def ucb_policy(d_r, d_c, w_rule="empirical", seed=0):
    return UcbPolicy(d_r, d_c, w_rule, seed)


def default_ss_ucb_arms(horizon):
    return int(math.floor(4 * math.sqrt(horizon)))


def ss_ucb_policy(d_r, d_c, n_arms=None, w_rule="empirical", seed=0, horizon=None):
    """UCB on ``n_arms`` distinct arms sampled uniformly (default ``floor(4 sqrt(T))``)."""
    if n_arms is None:
        if horizon is None:
            raise ValueError("need n_arms or horizon")
        n_arms = default_ss_ucb_arms(horizon)
    n_arms = min(int(n_arms), d_r * d_c)
    if n_arms < 1:
        raise ValueError("n_arms must be positive")
    arms = np.sort(_sub_rng(seed).choice(d_r * d_c, n_arms, replace=False))
    pol = UcbPolicy(d_r, d_c, w_rule, seed, arms)
    pol.name = "ssucb"
    return pol


class OraclePolicy(Policy):
    """Always plays a best arm of the true matrix (zero regret reference)."""

    name = "oracle"

    def __init__(self, truth):
        j, k = np.unravel_index(int(np.argmax(truth)), np.shape(truth))
        self.arm = Arm(int(j), int(k))

    def select(self, t):
        return self.arm, False

    def update(self, t, arm, reward, forced):
        pass


# --------------------------------------------------------------------------
# OFUL over lifted, block-sparse arm features

@dataclass(frozen=True)
class OfulConfig:
    ridge: float = 1.0
    delta: float = 0.01
    reward_bound: float = 1.0  # S, bound on ||theta||
    feature_bound: float = 1.0  # L, bound on ||a||
    noise_sd: float = 0.1
    beta: float | None = None  # fixed radius; None uses the self-normalised formula

    def __post_init__(self):
        for name in ("ridge", "delta", "reward_bound", "feature_bound"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def radius(self, t, dim):
        if self.beta is not None:
            return self.beta
        inner = 2.0 * math.log(1.0 / self.delta) + dim * math.log(
            1.0 + t * self.feature_bound**2 / (self.ridge * dim))
        return math.sqrt(self.ridge) * self.reward_bound + self.noise_sd * math.sqrt(inner)


def _as_sparse(vec, dim):
    if isinstance(vec, tuple) and len(vec) == 2:
        idx, val = vec
        idx = np.asarray(idx, dtype=np.int64)
        if np.ndim(idx) == 0:  # (offset, block) form
            idx = int(idx) + np.arange(np.size(val))
        val = np.asarray(val, dtype=float)
    else:
        dense = np.asarray(vec, dtype=float)
        if dim is not None and dense.size != dim:
            raise DimensionMismatch(f"feature of length {dense.size}, expected {dim}")
        idx = np.flatnonzero(dense)
        val = dense[idx]
    if idx.shape != val.shape:
        raise DimensionMismatch("sparse feature indices and values differ in length")
    return idx, val


class OfulPolicy(Policy):
    """Optimism in the face of uncertainty for a finite set of linear arms.

    ``arms`` is a list (arm-major over ``(j, k)``) of sparse feature vectors,
    each either dense, ``(indices, values)`` or ``(offset, block)``.  The
    inverse Gram matrix is maintained with Sherman-Morrison updates touching
    only the pulled arm's nonzero coordinates.
    """

    name = "oful"

    def __init__(self, arms, dim, d_c, cfg=OfulConfig(), seed=0):
        self.cfg = cfg
        self.dim = int(dim)
        self.d_c = d_c
        self.arms = [_as_sparse(a, self.dim) for a in arms]
        for idx, _ in self.arms:
            if idx.size and (idx.min() < 0 or idx.max() >= self.dim):
                raise DimensionMismatch("feature index outside ambient dimension")
        self.rng = np.random.default_rng(seed)
        self.Vinv = np.eye(self.dim) / cfg.ridge
        self.b = np.zeros(self.dim)
        self.n_updates = 0

    def scores(self, t):
        theta = self.Vinv @ self.b
        beta = self.cfg.radius(max(self.n_updates, 1), self.dim)
        out = np.empty(len(self.arms))
        for i, (idx, val) in enumerate(self.arms):
            sub = self.Vinv[np.ix_(idx, idx)]
            out[i] = val @ theta[idx] + beta * math.sqrt(max(val @ sub @ val, 0.0))
        return out

    def select(self, t):
        i = _argmax_random(self.scores(t), self.rng)
        return Arm(i // self.d_c, i % self.d_c), False

    def update(self, t, arm, reward, forced):
        idx, val = self.arms[arm[0] * self.d_c + arm[1]]
        Va = self.Vinv[:, idx] @ val
        denom = 1.0 + val @ Va[idx]
        self.Vinv -= np.outer(Va, Va) / denom
        self.b[idx] += reward * val
        self.n_updates += 1


def oful_policy(arms, cfg=OfulConfig(), dim=None, d_c=None, seed=0):
    if dim is None:
        raise DimensionMismatch("ambient dimension required")
    return OfulPolicy(arms, dim, d_c if d_c is not None else len(arms), cfg, seed)


def oful_for_instance(inst, cfg=None, seed=0, **overrides):
    """OFUL on the lifted arm set of a contextual instance.

    The radius uses ``S = sqrt(d_r d_c p r)`` (the expected norm of the stacked
    parameter under the generator) and ``L = ||X||``.
    """
    dim = inst.d_r * inst.d_c * inst.p
    if cfg is None:
        cfg = OfulConfig(
            reward_bound=math.sqrt(dim * inst.rank),
            feature_bound=float(np.linalg.norm(inst.X)),
            noise_sd=inst.noise_sd,
        )
    if overrides:
        cfg = replace(cfg, **overrides)
    arms = [inst.lifted_feature(j, k) for j in range(inst.d_r) for k in range(inst.d_c)]
    return OfulPolicy(arms, dim, inst.d_c, cfg, seed)


# --------------------------------------------------------------------------
# policy specification strings

_SPEC = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def parse_policy_spec(text):
    """``"lrb(h=1,f=225)"`` -> ``("lrb", {"h": "1", "f": "225"})``."""
    m = _SPEC.match(text)
    if not m:
        raise ConfigError(f"malformed policy spec {text!r}")
    name, body = m.group(1).lower(), m.group(2)
    params = {}
    if body and body.strip():
        for part in body.split(","):
            if "=" not in part:
                raise ConfigError(f"policy parameter {part.strip()!r} needs key=value", field=text)
            key, val = (s.strip() for s in part.split("=", 1))
            if not key or not val:
                raise ConfigError(f"empty key or value in {part.strip()!r}", field=text)
            params[key] = val
    if name not in POLICY_PARAMS:
        raise ConfigError(f"unknown policy {name!r}", field=text)
    unknown = set(params) - POLICY_PARAMS[name]
    if unknown:
        raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for {name}", field=text)
    return name, params


_LRB_KEYS = {"h", "f", "rank", "lam", "lam_scale", "w", "recompute", "iters"}
POLICY_PARAMS = {
    "lrb": _LRB_KEYS,
    "sslrb": _LRB_KEYS | {"m", "mr", "mc"},
    "ucb": {"w"},
    "ssucb": {"n", "w"},
    "oful": {"delta", "ridge", "beta"},
    "oracle": set(),
}


def canonical_spec(name, params):
    """Spec string with parameters sorted by key, so equal policies compare equal."""
    if not params:
        return name
    return f"{name}({','.join(f'{k}={params[k]}' for k in sorted(params))})"


def _forced_from(value):
    if value.startswith("rho:"):
        return ForcedSamplingConfig.schedule(float(value[4:]))
    return ForcedSamplingConfig.budget(int(value))


def lrb_config_from(params, default_rank=3):
    solver_kw = {}
    if "lam" in params:
        solver_kw.update(lambda_rule="fixed", lam=float(params["lam"]))
    if "lam_scale" in params:
        solver_kw["lambda_scale"] = float(params["lam_scale"])
    if "iters" in params:
        solver_kw["max_iters"] = int(params["iters"])
    rank = params.get("rank", default_rank)
    recompute = params.get("recompute", "on_new_forced_sample")
    every_k = 1
    if recompute.startswith("every:"):
        recompute, every_k = "every_k", int(recompute[6:])
    return LrbConfig(
        h=float(params.get("h", 1.0)),
        forced=_forced_from(params.get("f", "0")),
        rank=None if rank == "auto" else int(rank),
        solver=SolverConfig(**solver_kw),
        w_rule=params.get("w", "empirical"),
        recompute=recompute,
        every_k=every_k,
    )


def build_policy(spec, d_r, d_c, horizon, seed, truth=None, contextual=None, default_rank=3):
    """Instantiate a policy from its specification string."""
    name, params = parse_policy_spec(spec) if isinstance(spec, str) else spec
    try:
        if name == "lrb":
            return LrbPolicy(d_r, d_c, lrb_config_from(params, default_rank), seed)
        if name == "sslrb":
            m = params.get("m")
            m_r = int(params.get("mr", m if m is not None else d_r))
            m_c = int(params.get("mc", m if m is not None else d_c))
            return ss_lrb_policy(d_r, d_c, m_r, m_c, lrb_config_from(params, default_rank), seed)
        if name == "ucb":
            return ucb_policy(d_r, d_c, params.get("w", "empirical"), seed)
        if name == "ssucb":
            n = params.get("n", "auto")
            n_arms = None if n == "auto" else int(n)
            return ss_ucb_policy(d_r, d_c, n_arms, params.get("w", "empirical"), seed, horizon)
        if name == "oful":
            if contextual is None:
                raise ConfigError("oful needs a contextual environment", field=spec)
            kw = {k: float(params[k]) for k in ("delta", "ridge", "beta") if k in params}
            return oful_for_instance(contextual, seed=seed, **kw)
        if name == "oracle":
            if truth is None:
                raise ConfigError("oracle policy needs the true matrix", field=spec)
            return OraclePolicy(truth)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), field=spec if isinstance(spec, str) else name) from None
    raise ConfigError(f"unknown policy {name!r}")
