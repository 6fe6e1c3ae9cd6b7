"""Outer sweep: step arithmetic, schedules, termination, safeguards."""

import numpy as np
import pytest

from iadmm.blockspace import BlockTriangular, BlockVector, DenseMap
from iadmm.errors import ConfigError
from iadmm.oracle import solve_qp_kkt, subproblem_minimizer
from iadmm.outer import (
    SolverParams,
    exact_block_step,
    gamma_compatible,
    rho_strong,
    solve,
    step2_epsilon,
    step3_update,
)
from iadmm.problem import Block, ProblemSpec
from iadmm.problems import from_id, gen_qp
from iadmm.proxlib import quadratic, zero_prox


def _hand_qp():
    # min 0.5||x1||^2 + 0.5||x2||^2 s.t. x1 + x2 = 2 (scalars);
    # solution x = (1, 1), multiplier lambda = -1
    blocks = [
        Block(quadratic(np.eye(1), np.zeros(1)), zero_prox(),
              DenseMap(np.eye(1))),
        Block(quadratic(np.eye(1), np.zeros(1)), zero_prox(),
              DenseMap(np.eye(1))),
    ]
    return ProblemSpec(blocks, np.array([2.0]))


def test_step2_epsilon_arithmetic():
    # theta-weighted sum with the square root on the accumulated r-term
    assert step2_epsilon(1.0, 2.0, 9.0) == pytest.approx(1.0 + 2.0 + 3.0)
    assert step2_epsilon(1.0, 2.0, 9.0, theta1=2.0, theta2=0.5,
                         theta3=1.0 / 3.0) == pytest.approx(2.0 + 1.0 + 1.0)
    # negative accumulated term is clipped (guards rounding at zero)
    assert step2_epsilon(0.0, 0.0, -1e-30) == 0.0
    with pytest.raises(ConfigError):
        step2_epsilon(1.0, 1.0, 1.0, theta1=0.0)


def test_step3_update_worked_example():
    # single scalar block: M = gamma, the correction reduces to
    # y+ = y + (alpha/gamma)*gamma*(z-y) = y + alpha (z - y)
    tri = BlockTriangular([2.0], [DenseMap(np.array([[1.0]]))])
    y = BlockVector.from_flat(np.array([1.0]), (1,))
    z = BlockVector.from_flat(np.array([3.0]), (1,))
    lam = np.array([0.5])
    resid = np.array([4.0])
    y_new, lam_new = step3_update(tri, y, z, lam, rho=2.0, alpha=0.5,
                                  residual=resid)
    assert y_new.to_flat() == pytest.approx([2.0])
    assert lam_new == pytest.approx([0.5 + 0.5 * 2.0 * 4.0])


def test_step3_update_solves_triangular_system():
    rng = np.random.default_rng(0x53)
    mats = [rng.standard_normal((4, d)) for d in (3, 2)]
    gammas = [1.3, 2.1]
    tri = BlockTriangular(gammas, [DenseMap(m) for m in mats])
    y = BlockVector.from_flat(rng.standard_normal(5), (3, 2))
    z = BlockVector.from_flat(rng.standard_normal(5), (3, 2))
    lam = rng.standard_normal(4)
    alpha = 0.7
    y_new, _ = step3_update(tri, y, z, lam, 1.0, alpha, np.zeros(4))
    d = y_new - y
    rhs = (z - y) * alpha
    for i, g in enumerate(gammas):
        rhs.blocks[i] = g * rhs.blocks[i]
    assert (tri.apply_mt(d) - rhs).norm() <= 1e-10 * (1.0 + rhs.norm())


def test_rho_strong_schedule():
    # theta = alpha*mu/(8||P||); with alpha=.5, mu=2, ||P||=1: theta=1/8
    assert rho_strong(1, k0=0.0, theta=0.125) == pytest.approx(0.125)
    assert rho_strong(4, k0=2.0, theta=0.125) == pytest.approx(0.75)
    # the schedule grows linearly in k
    assert (rho_strong(10, 3.0, 0.2) - rho_strong(9, 3.0, 0.2)
            == pytest.approx(0.2))


def test_gamma_compatible_matches_definition():
    rng = np.random.default_rng(0x6A)
    A = DenseMap(rng.standard_normal((5, 3)))
    z = rng.standard_normal(3)
    y = rng.standard_normal(3)
    d = z - y
    need = float(np.linalg.norm(A.apply(d)) ** 2)
    have = float(d @ d)
    assert gamma_compatible(A, need / have + 1e-9, z, y)
    assert not gamma_compatible(A, need / have - 1e-9, z, y)
    # the zero step never triggers a bump
    assert gamma_compatible(A, 1e-12, y, y)


def test_exact_block_step_matches_dense_solve():
    blk_problem = _hand_qp()
    blk = blk_problem.blocks[0]
    y_i = np.array([0.3])
    lam = np.array([0.2])
    b_i = np.array([1.1])
    rho, gamma_i = 1.5, 2.0
    res = exact_block_step(blk, y_i, lam, b_i, rho, gamma_i, Gamma_prev=7.0)
    truth = subproblem_minimizer(blk, y_i, lam, b_i, rho, gamma_i)
    assert np.allclose(res.x_next, truth, atol=1e-12)
    assert np.array_equal(res.x_next, res.z)
    assert res.Gamma == 7.0 and res.r == 0.0


def test_solver_params_validation():
    with pytest.raises(ConfigError):
        SolverParams(alpha=1.0)
    with pytest.raises(ConfigError):
        SolverParams(alpha=0.0)
    with pytest.raises(ConfigError):
        SolverParams(sigma=1.5)
    with pytest.raises(ConfigError):
        SolverParams(mode="fast")
    with pytest.raises(ConfigError):
        SolverParams(rule="newton")
    with pytest.raises(ConfigError):
        SolverParams(rho=0.0)
    with pytest.raises(ConfigError):
        SolverParams(tol=-1.0)


def test_exact_zero_termination_on_integer_fixture():
    # starting at the solution, every quantity in the combined residual
    # is exactly zero in floating point, which trips the bitwise test
    problem = _hand_qp()
    ref = solve_qp_kkt(problem)
    params = SolverParams(mode="convex", rule="adaptive", rho=1.0, alpha=0.5,
                          tol=1e-8,
                          x0=ref.x_star.copy(), lam0=ref.lam_star.copy())
    report = solve(problem, params)
    assert report.cause == "exact-zero-eps"
    assert report.iterations == 1
    assert report.eps == 0.0
    assert report.certificate["kkt"] == 0.0
    assert report.certificate["state_gap"] == 0.0


def test_oracle_start_random_corpus_terminates_immediately():
    entry = gen_qp(41, m=2)
    ref = entry.reference
    params = SolverParams(mode="convex", rule="adaptive", rho=1.0, alpha=0.5,
                          tol=1e-8, x0=ref.x_star.copy(),
                          lam0=ref.lam_star.copy())
    report = solve(entry.problem, params)
    assert report.iterations == 1
    assert report.cause in ("tolerance", "exact-zero-eps")
    scale = 1.0 + float(np.linalg.norm(ref.x_star.to_flat()))
    assert report.eps <= 1e-12 * scale


def test_max_iterations_cause_and_exit_state():
    entry = gen_qp(42, m=2)
    params = SolverParams(tol=1e-16, max_outer=5)
    report = solve(entry.problem, params)
    assert report.cause == "max-iterations"
    assert report.iterations == 5
    assert report.history.k.size == 5


def test_tolerance_termination_and_residual_consistency():
    entry = gen_qp(43, m=2)
    params = SolverParams(tol=1e-6, max_outer=50000)
    report = solve(entry.problem, params)
    assert report.cause == "tolerance"
    assert report.eps <= 1e-6
    h = report.history
    # the recorded residual parts recombine into the stopping quantity
    recomb = (np.asarray(h.yz_gap) + np.asarray(h.feas)
              + np.sqrt(np.maximum(np.asarray(h.R), 0.0)))
    assert np.allclose(recomb, np.asarray(h.eps), rtol=1e-12, atol=1e-15)
    # the final feasibility gap is dominated by the tolerance
    assert h.feas[-1] <= 1e-6


def test_strong_mode_gamma_floor_keeps_ratio_monotone():
    entry = gen_qp(3, m=2, mu=0.5)
    params = SolverParams(mode="strong", alpha=0.5, tol=0.0, max_outer=60)
    report = solve(entry.problem, params, ref=entry.reference)
    G = np.array(report.history.Gammas)  # (iters, m)
    ks = np.arange(1, G.shape[0] + 1, dtype=float)
    ratio = ks[:, None] / G
    assert np.all(np.diff(ratio, axis=0) <= 1e-12 * (1 + np.abs(ratio[:-1])))


def test_strong_mode_requires_strong_convexity():
    entry = gen_qp(44, m=2)  # mu = 0
    with pytest.raises(ConfigError):
        solve(entry.problem, SolverParams(mode="strong"))


def test_exact_mode_matches_inexact_closely():
    entry = gen_qp(45, m=2, mu=0.5)
    base = dict(rho=1.0, alpha=0.5, tol=1e-10, max_outer=20000)
    rep_in = solve(entry.problem, SolverParams(mode="convex", **base))
    rep_ex = solve(entry.problem, SolverParams(mode="exact", **base))
    gap = (rep_in.z - rep_ex.z).norm()
    assert gap <= 1e-6
    assert np.all(np.asarray(rep_ex.history.R) == 0.0)


def test_safeguard_mode_recovers_from_tiny_gamma():
    # start the penalty weights far below ||A_i||^2; the compatibility
    # test must bump them and the solve still reaches tolerance
    entry = gen_qp(46, m=2)
    params = SolverParams(gamma_mode="safeguard", gamma_init=1e-3,
                          gamma_factor=3.0, tol=1e-7, max_outer=30000)
    report = solve(entry.problem, params)
    assert report.cause == "tolerance"
    bumps = [e for e in report.events if e["event"] == "gamma-safeguard"]
    assert bumps, "expected at least one safeguard activation"
    assert all(report.gammas[i] >= 1e-3 for i in range(2))


def test_history_csv_schema(tmp_path):
    entry = gen_qp(47, m=2)
    report = solve(entry.problem, SolverParams(tol=1e-6),
                   ref=entry.reference)
    out = tmp_path / "h.csv"
    report.history.save_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "k,eps,feas,yz_gap,R,obj,E,kkt,rho,gamma1"
    first = lines[1].split(",")
    assert int(first[0]) == 1
    assert all(field != "" for field in first)  # reference run fills E and kkt


def test_history_csv_blank_columns_without_reference(tmp_path):
    entry = gen_qp(47, m=2)
    report = solve(entry.problem, SolverParams(tol=1e-6))
    out = tmp_path / "h.csv"
    report.history.save_csv(out)
    first = out.read_text().strip().splitlines()[1].split(",")
    assert first[6] == "" and first[7] == ""  # E and kkt stay empty


def test_solve_rejects_mismatched_start():
    entry = gen_qp(48, m=2)
    bad = BlockVector.zeros((3, 3))
    with pytest.raises(ConfigError):
        solve(entry.problem, SolverParams(x0=bad))
