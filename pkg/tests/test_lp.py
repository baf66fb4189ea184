import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metasrl.cmdp import (SoftmaxPolicy, TabularCmdp, all_objectives,
                          expected_objective, policy_from_logits,
                          visitation_exact)
from metasrl.lp import simplex_solve, solve_optimal_lp

from oracles import random_cmdp, value_iteration


class TestSimplexSolve:
    def test_tiny_lp(self):
        # min -x - y s.t. x + y <= 1, x,y >= 0 (phrased with a slack row)
        x, duals, gap = simplex_solve(
            np.array([-1.0, -1.0, 0.0]),
            np.array([[1.0, 1.0, 1.0]]),
            np.array([1.0]))
        assert abs(x[0] + x[1] - 1.0) < 1e-12
        assert gap <= 1e-8

    def test_equality_and_inequality(self):
        # min x1 + 2 x2 s.t. x1 + x2 = 1, x1 <= 0.3
        x, duals, gap = simplex_solve(
            np.array([1.0, 2.0]),
            np.array([[1.0, 1.0]]), np.array([1.0]),
            np.array([[1.0, 0.0]]), np.array([0.3]))
        assert np.allclose(x, [0.3, 0.7], atol=1e-10)
        assert gap <= 1e-8


class TestSolveOptimalLp:
    def test_single_action_is_policy_evaluation(self):
        rng = np.random.default_rng(0)
        transition = rng.dirichlet(np.ones(4), size=(4, 1))
        cmdp = TabularCmdp(transition=transition,
                           reward=rng.random((4, 1)),
                           costs=rng.random((1, 4, 1)),
                           limits=np.array([1e9]),
                           discount=0.9,
                           initial_dist=rng.dirichlet(np.ones(4)),
                           c_max=1.0)
        sol = solve_optimal_lp(cmdp)
        pol = SoftmaxPolicy.uniform(4, 1)
        assert sol.feasible
        assert abs(sol.objective_values[0]
                   - expected_objective(cmdp, pol, 0)) < 1e-8

    def test_unconstrained_matches_value_iteration(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            cmdp = random_cmdp(rng)
            relaxed = TabularCmdp(
                transition=cmdp.transition, reward=cmdp.reward,
                costs=cmdp.costs, limits=np.array([cmdp.infinite_limit()]),
                discount=cmdp.discount, initial_dist=cmdp.initial_dist,
                c_max=1.0)
            sol = solve_optimal_lp(relaxed)
            assert abs(sol.objective_values[0] - value_iteration(relaxed)) < 1e-6
            assert sol.duality_gap <= 1e-8

    def test_infeasible_detected(self):
        rng = np.random.default_rng(3)
        base = random_cmdp(rng)
        cmdp = TabularCmdp(transition=base.transition, reward=base.reward,
                           costs=np.ones((1, 4, 3)), limits=np.array([0.0]),
                           discount=base.discount,
                           initial_dist=base.initial_dist, c_max=1.0)
        sol = solve_optimal_lp(cmdp)
        assert not sol.feasible
        assert sol.policy is None and sol.visitation is None

    def test_solution_is_feasible_and_consistent(self):
        rng = np.random.default_rng(4)
        cmdp = random_cmdp(rng, n_costs=2, feasible_margin=0.05)
        sol = solve_optimal_lp(cmdp)
        assert sol.feasible
        vals = all_objectives(cmdp, sol.policy)
        assert np.max(np.abs(vals - sol.objective_values)) < 1e-7
        assert np.all(sol.objective_values[1:] <= cmdp.limits + 1e-8)
        vis = visitation_exact(cmdp, sol.policy)
        assert np.max(np.abs(vis.nu - sol.visitation.nu)) < 1e-8

    def test_dominates_random_policies(self):
        rng = np.random.default_rng(5)
        cmdp = random_cmdp(rng, feasible_margin=0.1)
        sol = solve_optimal_lp(cmdp)
        best = sol.objective_values[0]
        for _ in range(1000):
            pol = policy_from_logits(2.0 * rng.standard_normal((4, 3)))
            vals = all_objectives(cmdp, pol)
            if np.all(vals[1:] <= cmdp.limits + 1e-10):
                assert vals[0] <= best + 1e-7

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_optimality_property(self, seed):
        rng = np.random.default_rng(seed)
        cmdp = random_cmdp(rng, n_states=int(rng.integers(2, 5)),
                           feasible_margin=float(rng.random() * 0.2))
        sol = solve_optimal_lp(cmdp)
        assert sol.feasible and sol.duality_gap <= 1e-8
        assert np.all(sol.objective_values[1:] <= cmdp.limits + 1e-8)
        # uniform policy is feasible by construction, so it is a lower bound
        uni = SoftmaxPolicy.uniform(cmdp.n_states, cmdp.n_actions)
        assert expected_objective(cmdp, uni, 0) <= sol.objective_values[0] + 1e-7
