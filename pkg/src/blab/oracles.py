"""Brute-force reference computations checked against the library's fast paths.

Each oracle returns an :class:`OracleReport` whose ``lines`` are meant to be
printed as-is; ``ok`` is the overall verdict.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import ObservationSet, SolverConfig, lambda_max, nuclear_norm, solve_nuclear_norm, svt_shrink
from .matrix_core import expected_g_uniform, near_optimal_count, psi_closed_form, subsampling_cost
from .policies import ForcedSamplingConfig, forcing_probability, ucb_index
from .tuning import CostModel, h_lower_bound


@dataclass
class OracleReport:
    name: str
    ok: bool = True
    lines: list = field(default_factory=list)

    def check(self, label, passed, detail=""):
        self.ok &= bool(passed)
        self.lines.append(f"{'PASS' if passed else 'FAIL'}  {label}" + (f"  ({detail})" if detail else ""))
        return passed

    def text(self):
        return "\n".join([f"== oracle {self.name}: {'PASS' if self.ok else 'FAIL'}"] + self.lines)


def count_by_loops(B, h):
    """Near-optimal count by explicit double loop."""
    top = -math.inf
    for row in B:
        for v in row:
            top = max(top, v)
    n = 0
    for row in B:
        for v in row:
            if v >= top - h:
                n += 1
    return n


def psi_by_enumeration(B, m_r, m_c):
    """Subsampling cost by listing every (row set, column set) pair."""
    B = np.asarray(B, dtype=float)
    d_r, d_c = B.shape
    total, n = 0.0, 0
    for rows in itertools.combinations(range(d_r), m_r):
        for cols in itertools.combinations(range(d_c), m_c):
            total += B[np.ix_(rows, cols)].max()
            n += 1
    return float(B.max() - total / n)


def prox_objective(X, M, tau):
    return 0.5 * float(np.sum((X - M) ** 2)) + tau * nuclear_norm(X)


def oracle_g(n_matrices=20, seed=0):
    rep = OracleReport("g")
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_matrices):
        B = rng.standard_normal((6, 5))
        h = float(rng.uniform(0, 2))
        if near_optimal_count(B, h) != count_by_loops(B.tolist(), h):
            bad += 1
    rep.check(f"near_optimal_count vs double loop on {n_matrices} random 6x5 matrices", bad == 0,
              f"{bad} mismatches")
    return rep


def oracle_psi(seed=0, mc_samples=100_000):
    rep = OracleReport("psi")
    B = np.random.default_rng(seed).uniform(size=(5, 5))
    brute = psi_by_enumeration(B, 2, 2)
    exact = subsampling_cost(B, 2, 2, mode="exact").value
    rep.check("exact psi on 5x5, m=2 equals enumeration", abs(exact - brute) <= 1e-12,
              f"enumeration {brute:.12f}, exact {exact:.12f}")
    mc = subsampling_cost(B, 2, 2, mode="monte_carlo", n_samples=mc_samples, seed=seed)
    z = abs(mc.value - brute) / mc.stderr
    rep.check("Monte-Carlo psi within 4 standard errors", z <= 4,
              f"MC {mc.value:.6f} +- {mc.stderr:.6f}, gap {z:.2f} se")
    return rep


def oracle_prox(n_cases=10, n_candidates=200, seed=0):
    rep = OracleReport("prox")
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(n_cases):
        M = rng.standard_normal((6, 6))
        tau = float(rng.uniform(0.1, 2.0))
        X = svt_shrink(M, tau)
        base = prox_objective(X, M, tau)
        for _ in range(n_candidates):
            cand = X + rng.standard_normal((6, 6)) * 10 ** rng.uniform(-4, 0)
            worst = min(worst, prox_objective(cand, M, tau) - base)
    rep.check(f"svt optimality margin over {n_cases * n_candidates} perturbations", worst >= -1e-12,
              f"smallest margin {worst:.3e}")
    D = svt_shrink(np.diag([3.0, 1.0]), 1.0)
    rep.check("svt_shrink(diag(3,1), 1) = diag(2,0)", np.allclose(D, np.diag([2.0, 0.0]), atol=1e-12, rtol=0))
    return rep


def oracle_lambda_max(seed=0):
    rep = OracleReport("lambda_max")
    rng = np.random.default_rng(seed)
    j = rng.integers(0, 5, 30)
    k = rng.integers(0, 5, 30)
    obs = ObservationSet(5, 5, j, k, rng.uniform(0, 1, 30))
    lam = lambda_max(obs)
    counts, sums = obs.cell_stats()
    grad_norm = float(np.linalg.norm((2.0 / len(obs)) * sums, 2))
    rep.check("zero is optimal at lambda_max (subgradient condition)", grad_norm <= lam * (1 + 1e-12),
              f"||grad(0)|| = {grad_norm:.6g}, lambda_max = {lam:.6g}")
    above = solve_nuclear_norm(obs, cfg=SolverConfig(lambda_rule="fixed", lam=lam * 1.001))
    rep.check("solver returns zero just above lambda_max", np.abs(above.matrix).max() <= 1e-8,
              f"max |B| = {np.abs(above.matrix).max():.2e}")
    below = solve_nuclear_norm(obs, cfg=SolverConfig(lambda_rule="fixed", lam=lam * 0.9))
    rep.check("solver leaves zero below lambda_max", np.abs(below.matrix).max() > 1e-8)
    return rep


def oracle_formulas():
    rep = OracleReport("formulas")
    cases = [
        ("ucb index n=4, s=2, t=100, w(t)=t", ucb_index(4, 2.0, 100, "analysis"),
         0.5 + math.sqrt(2 * math.log(100) / 4), 1e-12),
        ("forcing probability rho=4, t=20 per arm (10x10)",
         forcing_probability(ForcedSamplingConfig.schedule(4), 20) / 100,
         4 / (100 * (20 - 4 * math.log(4) + 1)), 1e-15),
        ("h lower bound mu=1, c=1, r=3, d_r=100, T=1000", h_lower_bound(1000, CostModel(rank=3)),
         64 * math.sqrt(6 / 1e5), 1e-12),
        ("E[g(0.1)] uniform 10x10", expected_g_uniform(0.1, 10, 10), 11.0, 1e-12),
        ("psi exponential eta=0.5", psi_closed_form("exponential", 100, 100, 0.5), 2 * math.log(2), 1e-12),
        ("psi uniform d=100 eta=0.5", psi_closed_form("uniform", 100, 100, 0.5), 10000 / 10001 - 2500 / 2501, 1e-15),
    ]
    for label, got, want, tol in cases:
        rep.check(label, abs(got - want) <= tol, f"{got:.10g} vs {want:.10g}")
    return rep


ORACLES = {
    "g": oracle_g,
    "psi": oracle_psi,
    "prox": oracle_prox,
    "lambda_max": oracle_lambda_max,
    "formulas": oracle_formulas,
}


def run_oracle(name):
    if name == "all":
        return [fn() for fn in ORACLES.values()]
    if name not in ORACLES:
        raise KeyError(f"unknown oracle {name!r}; choose from {', '.join(ORACLES)} or all")
    return [ORACLES[name]()]
