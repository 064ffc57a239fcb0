import math
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare
from hypothesis import given, settings, strategies as st

from blab.env import Environment, generate_contextual
from blab.errors import ConfigError, DimensionMismatch
from blab.estimator import LowRankEstimate
from blab.matrix_core import Arm, generate_low_rank, max_row_l2_norm, near_optimal_set, sub_optimal_set
from blab.policies import (
    ForcedSamplingConfig,
    LrbConfig,
    LrbPolicy,
    LrbState,
    OfulConfig,
    OfulPolicy,
    build_policy,
    canonical_spec,
    default_ss_ucb_arms,
    forced_sampling_draw,
    forcing_probability,
    lrb_step,
    lrb_update,
    oful_for_instance,
    parse_policy_spec,
    ss_lrb_policy,
    ss_ucb_policy,
    targeted_mask,
    ucb_index,
    ucb_policy,
)


def arms_played(policy, env, T):
    seq = []
    for t in range(1, T + 1):
        arm, forced = policy.select(t)
        policy.update(t, arm, env.pull(arm, t), forced)
        seq.append(tuple(arm))
    return seq


def fixed_estimator(E):
    def estimator(forced, d_r, d_c, cfg, state):
        return LowRankEstimate(np.asarray(E, dtype=float), 1)

    return estimator


# --------------------------------------------------------------------------
# forced sampling

def test_forcing_probability_branches():
    cfg = ForcedSamplingConfig.schedule(4)
    assert 2 * 4 * math.log(4) == pytest.approx(11.0904, abs=1e-4)
    assert forcing_probability(cfg, 5) == 1.0
    assert forcing_probability(cfg, 11) == 1.0
    # 4 / (20 - 4 log 4 + 1) = 4 / 15.4548
    assert forcing_probability(cfg, 20) == pytest.approx(0.2588189, rel=1e-6)
    assert forcing_probability(cfg, 20) / 100 == pytest.approx(2.588189e-3, rel=1e-6)


def test_forcing_frequency_matches_schedule():
    cfg = ForcedSamplingConfig.schedule(4)
    rng = np.random.default_rng(0)
    n = 1_000_000
    hits = Counter()
    for _ in range(n):
        arm = forced_sampling_draw(cfg, 20, 10, 10, rng)
        if arm is not None:
            hits[arm] += 1
    p = forcing_probability(cfg, 20) / 100
    counts = [hits[Arm(j, k)] for j in range(10) for k in range(10)]
    assert chisquare(counts).pvalue > 1e-3
    assert abs(sum(hits.values()) - 100 * n * p) <= 3 * math.sqrt(n * 100 * p * (1 - 100 * p))


def test_budget_mode():
    rng = np.random.default_rng(1)
    assert all(forced_sampling_draw(ForcedSamplingConfig.budget(0), t, 3, 3, rng) is None for t in range(1, 50))
    cfg = ForcedSamplingConfig.budget(5)
    assert all(forced_sampling_draw(cfg, t, 3, 3, rng) is not None for t in range(1, 6))
    state = rng.bit_generator.state
    assert forced_sampling_draw(cfg, 6, 3, 3, rng) is None
    assert rng.bit_generator.state == state
    with pytest.raises(ValueError):
        ForcedSamplingConfig.schedule(0.5)


def test_forced_counts_concentrate():
    rho, T = 64, 10_000
    cfg = ForcedSamplingConfig.schedule(rho)
    lo, hi = rho * math.log(T) / 2, 6 * rho * math.log(T)
    inside = 0
    for run in range(40):
        rng = np.random.default_rng(run)
        n = sum(forced_sampling_draw(cfg, t, 10, 10, rng) is not None for t in range(1, T + 1))
        inside += lo <= n <= hi
    assert inside >= 38


# --------------------------------------------------------------------------
# UCB

def test_ucb_index_examples():
    assert ucb_index(0, 0.0, 10) == math.inf
    assert ucb_index(4, 2.0, 100, "analysis") == pytest.approx(2.01743, abs=1e-5)
    assert ucb_index(10**9, 0.3 * 10**9, 100) == pytest.approx(0.3, abs=1e-3)
    with pytest.raises(ValueError):
        ucb_index(1, 1.0, 10, "other")


def test_ucb_pulls_every_arm_first():
    B = generate_low_rank(4, 5, 2, seed=0)
    seq = arms_played(ucb_policy(4, 5, seed=3), Environment(B, 0.1, 1), 20)
    assert len(set(seq)) == 20


def test_ucb_consistency_two_arms():
    seq = arms_played(ucb_policy(1, 2, seed=0), Environment([[1.0, 0.0]], 0.0, 0), 5000)
    assert sum(a == (0, 0) for a in seq[-1000:]) / 1000 > 0.9


def test_ss_ucb_sizes():
    assert default_ss_ucb_arms(1000) == 126
    pol = ss_ucb_policy(10, 10, n_arms=1, seed=0)
    assert len(set(arms_played(pol, Environment(np.ones((10, 10)), 0.1, 0), 30))) == 1
    B = generate_low_rank(5, 5, 2, seed=1)
    full = arms_played(ss_ucb_policy(5, 5, n_arms=25, seed=4), Environment(B, 0.1, 2), 200)
    plain = arms_played(ucb_policy(5, 5, seed=4), Environment(B, 0.1, 2), 200)
    assert full == plain


# --------------------------------------------------------------------------
# LRB

def test_first_round_is_forced():
    pol = LrbPolicy(5, 5, LrbConfig(h=1, forced=ForcedSamplingConfig.budget(3)), seed=0)
    arm, forced = pol.select(1)
    assert forced and 0 <= arm.row < 5 and 0 <= arm.col < 5


def test_exact_estimate_isolates_best_arm():
    B = generate_low_rank(6, 6, 2, seed=2)
    srt = np.sort(B.ravel())
    gap = srt[-1] - srt[-2]
    cfg = LrbConfig(h=1.5 * gap, forced=ForcedSamplingConfig.budget(0))
    pol = LrbPolicy(6, 6, cfg, seed=0, estimator=fixed_estimator(B))
    best = Arm(*np.unravel_index(np.argmax(B), B.shape))
    for t in range(1, 6):
        arm, _ = pol.select(t)
        pol.update(t, arm, B[arm], False)
        assert arm == best
    assert pol.state.targeted_set == {best}


def perturbed_instance(seed):
    rng = np.random.default_rng(seed)
    d_r, d_c = rng.integers(3, 12, size=2)
    B = rng.standard_normal((d_r, d_c))
    h = float(rng.uniform(0.1, 2.0))
    noise = rng.standard_normal((d_r, d_c))
    radius = rng.uniform(0, h / 4, size=(d_r, 1))
    E = B + noise / np.linalg.norm(noise, axis=1, keepdims=True) * radius
    return B, E, h


def targeted_set_violations(n):
    bad = 0
    for seed in range(n):
        B, E, h = perturbed_instance(seed)
        assert np.linalg.norm(E - B, axis=1).max() <= h / 4 + 1e-12
        mask = targeted_mask(E, h)
        C = {Arm(int(j), int(k)) for j, k in zip(*np.nonzero(mask))}
        best = Arm(*np.unravel_index(np.argmax(B), B.shape))
        bad += (best not in C) or bool(C & sub_optimal_set(B, h))
    return bad


def test_targeted_set_soundness():
    assert targeted_set_violations(100) == 0


@given(st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_targeted_set_soundness_property(seed):
    B, E, h = perturbed_instance(seed)
    mask = targeted_mask(E, h)
    best = np.unravel_index(np.argmax(B), B.shape)
    assert mask[best]
    assert not np.any(mask & (B < B.max() - h))
    assert np.all(mask[E == E.max()])


def test_lrb_update_tallies():
    state = LrbState(3, 4)
    lrb_update(state, Arm(1, 2), 0.5, False, 1)
    assert state.counts[1 * 4 + 2] == 1 and state.means()[1, 2] == 0.5
    lrb_update(state, Arm(0, 0), 1.0, True, 2)
    assert len(state.forced_log) == 1
    rng = np.random.default_rng(0)
    tally = Counter()
    for t in range(3, 200):
        arm = Arm(int(rng.integers(3)), int(rng.integers(4)))
        lrb_update(state, arm, 1.0, bool(rng.integers(2)), t)
        tally[arm] += 1
    tally[Arm(1, 2)] += 1
    tally[Arm(0, 0)] += 1
    assert all(state.counts[a.row * 4 + a.col] == c for a, c in tally.items())
    assert state.counts.sum() == state.round == 199


def test_wide_resolution_without_forcing_matches_ucb():
    B = generate_low_rank(8, 8, 3, seed=3)
    cfg = LrbConfig(h=2 * max_row_l2_norm(B), forced=ForcedSamplingConfig.budget(0))
    for seed in range(3):
        a = arms_played(LrbPolicy(8, 8, cfg, seed=seed), Environment(B, 0.1, seed), 300)
        b = arms_played(ucb_policy(8, 8, seed=seed), Environment(B, 0.1, seed), 300)
        assert a == b


def test_greedy_on_exact_estimate_outside_forced_rounds():
    B = generate_low_rank(6, 6, 2, seed=4)
    srt = np.unique(B.ravel())
    h = 0.5 * np.diff(srt).min()
    cfg = LrbConfig(h=h, forced=ForcedSamplingConfig.budget(10))
    pol = LrbPolicy(6, 6, cfg, seed=0, estimator=fixed_estimator(B))
    env = Environment(B, 0.1, 0)
    best = Arm(*np.unravel_index(np.argmax(B), B.shape))
    for t in range(1, 60):
        arm, forced = pol.select(t)
        pol.update(t, arm, env.pull(arm, t), forced)
        assert forced == (t <= 10)
        if not forced:
            assert arm == best


def test_failed_estimate_degrades_to_all_arms():
    def broken(*_):
        raise np.linalg.LinAlgError("no")

    pol = LrbPolicy(3, 3, LrbConfig(h=1, forced=ForcedSamplingConfig.budget(2)), seed=0, estimator=broken)
    seq = arms_played(pol, Environment(np.eye(3), 0.1, 0), 20)
    assert pol.state.targeted is None and len(seq) == 20


def test_ss_lrb_full_size_matches_lrb():
    B = generate_low_rank(12, 12, 3, seed=5)
    cfg = LrbConfig(h=0.5, forced=ForcedSamplingConfig.budget(30))
    a = arms_played(ss_lrb_policy(12, 12, 12, 12, cfg, seed=7), Environment(B, 0.1, 1), 150)
    b = arms_played(LrbPolicy(12, 12, cfg, seed=7), Environment(B, 0.1, 1), 150)
    assert a == b


def test_ss_lrb_single_cell():
    cfg = LrbConfig(h=0.5, forced=ForcedSamplingConfig.budget(5))
    seq = arms_played(ss_lrb_policy(10, 10, 1, 1, cfg, seed=3), Environment(np.ones((10, 10)), 0.1, 0), 40)
    assert len(set(seq)) == 1


def test_ss_lrb_candidates_map_to_full_matrix():
    cfg = LrbConfig(h=0.5, forced=ForcedSamplingConfig.budget(0))
    pol = ss_lrb_policy(10, 8, 3, 2, cfg, seed=1)
    cand = pol.candidate_arms()
    assert sorted(cand) == sorted(r * 8 + c for r in pol.rows for c in pol.cols)


def test_policies_replay_identically():
    B = generate_low_rank(10, 10, 3, seed=6)
    for spec in ("lrb(h=1,f=30)", "sslrb(m=5,h=1,f=10)", "ucb", "ssucb(n=20)"):
        a = arms_played(build_policy(spec, 10, 10, 200, seed=11), Environment(B, 0.1, 3), 200)
        b = arms_played(build_policy(spec, 10, 10, 200, seed=11), Environment(B, 0.1, 3), 200)
        assert a == b


def test_schedule_mode_recomputes_with_warm_start():
    B = generate_low_rank(10, 10, 2, seed=7)
    pol = build_policy("lrb(h=1,f=rho:3)", 10, 10, 300, seed=0)
    arms_played(pol, Environment(B, 0.1, 0), 300)
    st_ = pol.state
    assert st_.estimated_with == len(st_.forced_log) or st_.estimated_with == len(st_.forced_log) - 1
    assert st_.cached_estimate is not None and st_.cached_estimate.first_stage is not None


# --------------------------------------------------------------------------
# OFUL

def test_oful_sparse_features_and_dimension():
    inst = generate_contextual(8, 10, 3, 7, seed=0)
    pol = oful_for_instance(inst)
    assert pol.dim == 560
    assert all(idx.size == 7 for idx, _ in pol.arms)
    with pytest.raises(DimensionMismatch):
        OfulPolicy([np.ones(3)], dim=4, d_c=1)
    with pytest.raises(DimensionMismatch):
        OfulPolicy([(np.array([0, 9]), np.ones(2))], dim=4, d_c=1)


def test_oful_greedy_finds_best_arm_noiseless():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(4)
    feats = [rng.standard_normal(4) for _ in range(6)]
    best = int(np.argmax([f @ theta for f in feats]))
    pol = OfulPolicy(feats, 4, 6, OfulConfig(beta=0.0, ridge=1e-3), seed=0)
    # seed the design with one pull of every arm, then play greedily
    for t, f in enumerate(feats, 1):
        pol.update(t, Arm(0, t - 1), float(f @ theta), False)
    for t in range(7, 40):
        arm, _ = pol.select(t)
        pol.update(t, arm, float(feats[arm.col] @ theta), False)
    assert arm.col == best


def test_oful_sherman_morrison_matches_inverse():
    inst = generate_contextual(3, 4, 2, 3, seed=1)
    pol = oful_for_instance(inst)
    env = inst.environment(0)
    V = np.eye(pol.dim)
    for t in range(1, 30):
        arm, _ = pol.select(t)
        pol.update(t, arm, env.pull(arm, t), False)
        a = inst.lifted_dense(*arm)
        V += np.outer(a, a)
    assert np.allclose(pol.Vinv, np.linalg.inv(V), atol=1e-9)


# --------------------------------------------------------------------------
# specification strings

def test_spec_parsing():
    assert parse_policy_spec("lrb(h=1,f=225)") == ("lrb", {"h": "1", "f": "225"})
    assert parse_policy_spec("ucb") == ("ucb", {})
    assert canonical_spec("lrb", {"h": "1", "f": "225"}) == "lrb(f=225,h=1)"
    for bad in ("lrb(h)", "nope", "lrb(q=1)", "lrb(h=)"):
        with pytest.raises(ConfigError):
            parse_policy_spec(bad)
    with pytest.raises(ConfigError):
        build_policy("oful", 8, 10, 100, seed=0)
    with pytest.raises(ConfigError):
        build_policy("lrb(h=-1)", 8, 10, 100, seed=0)


def test_spec_builds_schedule_and_submatrix():
    pol = build_policy("lrb(h=1,f=rho:8,recompute=every:5)", 5, 5, 100, seed=0)
    assert pol.cfg.forced.mode == "schedule" and pol.cfg.forced.rho == 8
    assert pol.cfg.recompute == "every_k" and pol.cfg.every_k == 5
    pol = build_policy("sslrb(m=40,h=0.9,f=100)", 100, 100, 1000, seed=0)
    assert pol.rows.size == 40 and pol.inner.cfg.forced.f == 100 and pol.inner.cfg.h == 0.9
