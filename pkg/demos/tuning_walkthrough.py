"""How the bound-based rules pick h, the submatrix size and the switching horizon.

Uses the fitted near-optimal function g(h) = exp(1.719 h + 0.057) and the
fitted subsampling cost psi = -2.074 log(eta) - 0.002.  At unit scales the
forced-sampling term dominates on a 100 x 100 matrix, so the full-matrix rule
picks the largest h (case 3); the submatrix rule trades that against psi T
and moves to the full matrix once T passes T_ss.
"""

from blab.tuning import CostModel, ExpFitG, FitPsi, estimate_T_ss, select_h, select_submatrix

g = ExpFitG(1.719, 0.057)
model = CostModel(d_r=100, d_c=100, rank=3)
psi = FitPsi(100, 100, -2.074, -0.002)

print(f"{'T':>8} {'h':>8} {'case':>5} {'submatrix':>10} {'h_sub':>8}")
for T in (200, 500, 1000, 2000, 5000, 20000):
    full = select_h(model, T, g)
    sub = select_submatrix(model, psi, T, g)
    print(f"{T:>8} {full.h:8.3f} {full.case:>5} {f'{sub.m_r}x{sub.m_c}':>10} {sub.h:8.3f}")

print("\nshrinking the forced-sampling scale omega1 at T = 2000:")
for omega1 in (1.0, 1e-2, 1e-3, 1e-4):
    choice = select_h(CostModel(100, 100, 3, omega1=omega1), 2000, g)
    print(f"  omega1={omega1:<7g} h={choice.h:.3f} case={choice.case}")

print("\nswitching horizon (full matrix wins from here on):")
for d in (50, 100, 200):
    T_ss = estimate_T_ss(CostModel(d, d, 3), FitPsi(d, d, -2.074, -0.002), g)
    print(f"  d={d:<4} T_ss={T_ss}")
