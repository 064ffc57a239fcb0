import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blab.matrix_core import generate_low_rank, subsampling_cost_family
from blab.tuning import (
    ClosedFormPsi,
    CostModel,
    EmpiricalG,
    ExpFitG,
    FitPsi,
    bound,
    calibrate_omegas,
    estimate_T_ss,
    family_g_curve,
    fit_g_and_psi,
    geometric_grid,
    h_lower_bound,
    phi1,
    phi2,
    select_h,
    select_submatrix,
    square_grid,
    subsampled_bound,
)

FITTED_G = ExpFitG(1.719, 0.057)


def random_model(rng):
    d_r, d_c = (int(x) for x in rng.integers(5, 300, size=2))
    return CostModel(
        d_r=d_r, d_c=d_c, rank=int(rng.integers(1, min(d_r, d_c, 10) + 1)),
        omega1=float(np.exp(rng.uniform(-4, 2))), omega2=float(np.exp(rng.uniform(-4, 2))),
        b_star=float(rng.uniform(0.2, 5)), mu_star=float(rng.uniform(1, 3)),
    )


def test_phi_hand_calculation():
    model = CostModel(100, 100, 3)
    log_t = math.log(2000)
    # gamma = sqrt(100/3)/64 = 0.0902110; 1 + gamma^-2 = 1 + 4096*3/100 = 123.88
    assert float(phi1(1.0, 2000, model)) == pytest.approx(123.88 * 600 * log_t, rel=1e-12)
    assert float(phi1(1.0, 2000, model)) == pytest.approx(564959.878, rel=1e-8)
    g = math.exp(1.719 + 0.057)
    assert float(phi2(1.0, 2000, model, FITTED_G)) == pytest.approx(math.sqrt(4000 * g * log_t), rel=1e-12)
    assert float(phi2(1.0, 2000, model, FITTED_G)) == pytest.approx(423.756210, rel=1e-8)


def test_phi_limits():
    model = CostModel(100, 100, 3)
    assert float(phi1(1e9, 2000, model)) == pytest.approx(3 * 200 * math.log(2000))
    flat = ExpFitG(0.0, 1.0)
    assert float(phi2(0.1, 50, model, flat)) == float(phi2(3.0, 50, model, flat))


def test_phi_monotone_on_random_models():
    rng = np.random.default_rng(0)
    for _ in range(100):
        model = random_model(rng)
        hs = np.linspace(0.01, 2 * model.b_star, 50)
        t = int(rng.integers(2, 10**6))
        g = ExpFitG(float(rng.uniform(0, 3)), float(rng.uniform(-1, 1)))
        assert np.all(np.diff(phi1(hs, t, model)) < 0)
        assert np.all(np.diff(phi2(hs, t, model, g)) >= 0)


def test_h_lower_bound():
    model = CostModel(100, 100, 3)
    # 64 sqrt(2 * 3 / (1000 * 100)) = 64 * 0.00774597
    assert h_lower_bound(1000, model) == pytest.approx(0.4957419, rel=1e-6)
    ratio = h_lower_bound(1000, model) / h_lower_bound(2000, model)
    assert ratio == pytest.approx(math.sqrt(2))
    assert h_lower_bound(10**15, model) < 1e-4
    assert h_lower_bound(1, CostModel(1, 1, 1, mu_star=1e-6)) == 2.0


def test_select_h_extreme_cases():
    model = CostModel(100, 100, 3)
    tiny1 = CostModel(100, 100, 3, omega1=1e-12)
    choice = select_h(tiny1, 2000, FITTED_G)
    assert choice.case == 1 and choice.h == h_lower_bound(2000, tiny1) and choice.forced_sampling
    choice = select_h(CostModel(100, 100, 3, omega2=1e-12), 2000, FITTED_G)
    assert choice.case == 3 and choice.h == 2.0 and not choice.forced_sampling
    choice = select_h(CostModel(100, 100, 3, b_star=0.1), 100, FITTED_G)
    assert choice.case == 0 and choice.h == pytest.approx(0.2)
    assert select_h(model, 2000, FITTED_G).case in (1, 2, 3)


def test_select_h_matches_grid_scan():
    # at unit scales phi1 dominates on the whole range, so the large-h case applies
    model = CostModel(100, 100, 3)
    hs = np.linspace(h_lower_bound(2000, model), 2.0, 100_000)
    assert np.all(phi1(hs, 2000, model) > phi2(hs, 2000, model, FITTED_G))
    assert select_h(model, 2000, FITTED_G).case == 3
    model = CostModel(100, 100, 3, omega1=1e-3)
    choice = select_h(model, 2000, FITTED_G)
    assert choice.case == 2
    diff = phi1(hs, 2000, model) - phi2(hs, 2000, model, FITTED_G)
    root = hs[np.argmin(np.abs(diff))]
    assert abs(choice.h - root) <= 1e-4


def factor_two_holds(model, T, g):
    choice = select_h(model, T, g)
    if choice.case != 2:
        return None
    lo = h_lower_bound(T, model)
    hs = np.linspace(lo, 2 * model.b_star, 1000)
    best = float(bound(choice.h, T, model, g))
    return bool(np.all(best <= 2 * bound(hs, T, model, g) * (1 + 1e-9)))


def test_factor_two_on_random_models():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 100:
        model = random_model(rng)
        T = int(np.exp(rng.uniform(np.log(100), np.log(10**7))))
        g = ExpFitG(float(rng.uniform(0.2, 3)), float(rng.uniform(-1, 1)))
        ok = factor_two_holds(model, T, g)
        if ok is None:
            continue
        assert ok
        checked += 1


@given(st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_factor_two_property(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng)
    ok = factor_two_holds(model, 10**5, ExpFitG(float(rng.uniform(0.2, 3)), 0.0))
    assert ok in (None, True)


def test_select_h_with_empirical_g():
    B = generate_low_rank(30, 30, 3, "std_normal", seed=0)
    g = EmpiricalG(B)
    model = CostModel(30, 30, 3, b_star=float(np.abs(B).max()))
    choice = select_h(model, 5000, g)
    assert choice.case in (1, 2, 3)
    hs = np.linspace(0, 3, 40)
    assert np.all(np.diff(g(hs, 10, 10)) >= 0)
    assert g(0.0, 30, 30) == 1


def test_square_grid():
    assert square_grid(100, 100)[0] == (10, 10) and square_grid(100, 100)[-1] == (100, 100)
    assert len(square_grid(100, 100)) == 10
    assert square_grid(3, 3) == [(1, 1), (2, 2), (3, 3)]


def test_select_submatrix_matches_finer_scan():
    model = CostModel(100, 100, 3)
    psi = ClosedFormPsi("exponential", 100, 100)
    pick = select_submatrix(model, psi, 1000, FITTED_G)
    fine = [(m, m) for m in range(1, 101)]
    scan = min(fine, key=lambda mm: (subsampled_bound(model, psi, 1000, FITTED_G, *mm)[1], -sum(mm)))
    finer = select_submatrix(model, psi, 1000, FITTED_G, grid=fine)
    assert (finer.m_r, finer.m_c) == scan
    assert finer.bound <= pick.bound
    # the default grid's pick is the best of its own candidates
    values = [subsampled_bound(model, psi, 1000, FITTED_G, *mm)[1] for mm in square_grid(100, 100)]
    assert pick.bound == min(values)


def test_select_submatrix_large_horizon_uses_full_matrix():
    model = CostModel(100, 100, 3)
    for psi in (ClosedFormPsi("exponential", 100, 100), FitPsi(100, 100)):
        pick = select_submatrix(model, psi, 10**9, FITTED_G)
        assert (pick.m_r, pick.m_c) == (100, 100)


def test_select_submatrix_never_worse_than_full():
    rng = np.random.default_rng(2)
    for _ in range(30):
        model = random_model(rng)
        psi = FitPsi(model.d_r, model.d_c, -float(rng.uniform(0, 3)), 0.0)
        T = int(rng.integers(100, 10**6))
        pick = select_submatrix(model, psi, T, FITTED_G)
        full = subsampled_bound(model, psi, T, FITTED_G, model.d_r, model.d_c)[1]
        assert pick.bound <= full


def test_zero_psi_never_loses_to_full_matrix():
    model = CostModel(100, 100, 3)
    pick = select_submatrix(model, lambda m_r, m_c: 0.0, 2000, FITTED_G)
    full = subsampled_bound(model, lambda m_r, m_c: 0.0, 2000, FITTED_G, 100, 100)[1]
    assert pick.bound <= full


def test_select_submatrix_empty_grid():
    with pytest.raises(ValueError):
        select_submatrix(CostModel(10, 10, 1), lambda m_r, m_c: 0.0, 100, FITTED_G, grid=[])


def test_geometric_grid():
    grid = geometric_grid()
    assert grid[0] == 10 and grid[-1] <= 10**7
    assert all(b > a for a, b in zip(grid, grid[1:]))
    assert grid[1] == 12


def test_T_ss_enormous_psi_is_smallest_grid_point():
    model = CostModel(100, 100, 3)

    def psi(m_r, m_c):
        return 0.0 if (m_r, m_c) == (100, 100) else 1e12

    assert estimate_T_ss(model, psi, FITTED_G) == geometric_grid()[0]


def test_T_ss_monotone_in_psi_scale():
    model = CostModel(100, 100, 3)
    base = FitPsi(100, 100)
    prev = None
    for scale in (4.0, 2.0, 1.0, 0.5, 0.25):
        T_ss = estimate_T_ss(model, lambda m_r, m_c, s=scale: s * base(m_r, m_c), FITTED_G)
        if prev is not None:
            assert T_ss >= prev
        prev = T_ss


def test_T_ss_infinite_when_subsampling_always_wins():
    model = CostModel(100, 100, 3)
    assert estimate_T_ss(model, lambda m_r, m_c: 0.0, FITTED_G, T_grid=[100, 1000]) == math.inf


def test_T_ss_scales_with_dimension():
    T = []
    for d in (50, 100, 200):
        model = CostModel(d, d, 3)
        T.append(estimate_T_ss(model, FitPsi(d, d, -2.074, -0.002), FITTED_G))
    assert all(math.isfinite(x) for x in T)
    assert T[0] <= T[1] <= T[2]
    scale = np.array([3 * 2 * d for d in (50, 100, 200)], dtype=float)
    c = math.exp(np.mean(np.log(np.array(T) / scale)))
    assert np.all(np.abs(np.log(np.array(T) / (c * scale))) <= math.log(4))


def test_fit_exact_data():
    hs = np.linspace(0, 2, 9)
    etas = np.linspace(0.1, 0.9, 9)
    fit = fit_g_and_psi(hs, np.exp(2 * hs + 1), etas, -2 * np.log(etas))
    assert fit.a1 == pytest.approx(2) and fit.b1 == pytest.approx(1) and fit.r2_g == pytest.approx(1)
    assert fit.a2 == pytest.approx(-2) and fit.b2 == pytest.approx(0, abs=1e-12)
    assert 0 <= fit.r2_psi <= 1
    with pytest.raises(ValueError):
        fit_g_and_psi(hs[:2], np.ones(2), etas, etas)
    with pytest.raises(ValueError):
        fit_g_and_psi(hs, np.zeros(9), etas, etas)


def test_fit_on_gaussian_factor_family():
    def sampler(rng):
        return generate_low_rank(100, 100, 3, "std_normal", rng)

    hs = np.linspace(0, 2, 21)
    gs = family_g_curve(sampler, hs, 40, seed=0)
    etas = np.arange(1, 10) / 10
    psis = [subsampling_cost_family(sampler, round(e * 100), round(e * 100), 400, seed=1).value for e in etas]
    fit = fit_g_and_psi(hs, gs, etas, psis)
    assert fit.r2_g >= 0.95 and fit.r2_psi >= 0.95
    assert fit.a1 > 0 and fit.a2 < 0


def test_fit_psi_model():
    psi = FitPsi(100, 100)
    assert psi(100, 100) == 0.0
    assert psi(50, 50) == pytest.approx(-2.074 * math.log(0.5) - 0.002)
    assert FitPsi(100, 100, -2.074, -5)(90, 90) == 0.0
    assert ClosedFormPsi("exponential", 100, 100)(50, 50) == pytest.approx(2 * math.log(2))


def test_exp_fit_g_is_capped():
    assert ExpFitG()(100.0, 3, 4) == 12
    assert ExpFitG()(0.0, 10, 10) == pytest.approx(math.exp(0.057))


def test_calibrate_recovers_scales():
    model = CostModel(50, 50, 2)
    truth = CostModel(50, 50, 2, omega1=0.01, omega2=3.0)
    pilots = [(h, T, float(phi1(h, T, truth)), float(phi2(h, T, truth, FITTED_G)))
              for h in (0.5, 1.0, 1.5) for T in (1000, 5000)]
    got = calibrate_omegas(model, pilots, FITTED_G)
    assert got.omega1 == pytest.approx(0.01) and got.omega2 == pytest.approx(3.0)


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(omega1=0)
    with pytest.raises(ValueError):
        CostModel(10, 10, m_r=11)
    assert CostModel(10, 10).is_full and not CostModel(10, 10).with_dims(5, 10).is_full
