"""Agent decision rules: baselines, posterior sampling, probability matching."""

import math

import numpy as np
import pytest

from genban.core import ConfigError, History, PriorInfo, RngStream
from genban.env import DiscreteMixtureEnv, sample_task, symmetric_mixture_env
from genban.agents import (
    AgentConfig,
    epsilon_greedy_step,
    gaussian_posterior,
    greedy_step,
    linear_ts_step,
    linucb_score,
    linucb_step,
    make_agent,
    softmax_probabilities,
    softmax_step,
    ts_gen_step,
)
from genban.evaluation import enumerate_optimal_action_probs
from genban.seqmodel import BetaBernoulliModel, ExactMixtureModel


def history_with_counts(counts, n_actions=2, d_x=1):
    """History whose per-arm observation counts of (ones, zeros) are given."""
    prior = PriorInfo(np.zeros((n_actions, 1)))
    h = History(prior)
    x = np.zeros(d_x)
    for a, (ones, zeros) in enumerate(counts):
        for y in [1.0] * ones + [0.0] * zeros:
            h = h.with_context(x).append(x, a, y)
    return h.with_context(x)


class TestGreedy:
    def test_largest_predictive_wins(self):
        # Arm 0 predictive (1+7)/(2+10) ~ 0.667; arm 1 (1+2)/(2+10) = 0.25.
        h = history_with_counts([(7, 3), (2, 8)])
        assert greedy_step(BetaBernoulliModel(), h) == 0

    def test_tie_goes_to_lowest(self):
        h = history_with_counts([(3, 3), (3, 3)])
        assert greedy_step(BetaBernoulliModel(), h) == 0

    def test_matches_ts_gen_without_uncertainty(self):
        """With a single-component environment and well-separated success rates
        both rules reduce to the argmax of the known table."""
        env = DiscreteMixtureEnv(theta=[[[0.15, 0.85]]], weights=[1.0], horizon=60)
        model = ExactMixtureModel(env)
        rng = RngStream(1)
        agree = 0
        for i in range(100):
            task = sample_task(env, rng.for_task(i))
            h = History(task.prior_info).with_context(task.contexts[0])
            g = greedy_step(model, h)
            t = ts_gen_step(model, h, rng.for_task(i).substream("gen"), 60,
                            policy_class="tabular", contexts=task.contexts)
            agree += int(g == t)
        assert agree >= 98


class TestEpsilonGreedy:
    def test_composition(self):
        """Action frequencies on a frozen history equal
        0.9 * point-mass(greedy) + 0.1 * uniform, within 0.01."""
        h = history_with_counts([(7, 3), (2, 8)])
        model = BetaBernoulliModel()
        gen = RngStream(2, 0, "eps").generator
        n = 100_000
        draws = np.zeros(2)
        for _ in range(n):
            draws[epsilon_greedy_step(model, h, 0.1, gen)] += 1
        freq = draws / n
        np.testing.assert_allclose(freq, [0.95, 0.05], atol=0.01)


class TestSoftmax:
    def test_closed_form_two_arms(self):
        probs = softmax_probabilities(np.array([1.0, 0.0]), 0.05)
        assert probs[0] == pytest.approx(1.0 / (1.0 + math.exp(-20.0)), abs=1e-12)

    def test_equal_scores_uniform(self):
        probs = softmax_probabilities(np.array([0.4, 0.4, 0.4]), 0.05)
        np.testing.assert_allclose(probs, 1.0 / 3.0)

    def test_huge_temperature_near_uniform(self):
        h = history_with_counts([(9, 1), (1, 9)])
        gen = RngStream(3, 0, "soft").generator
        n = 20_000
        draws = np.zeros(2)
        for _ in range(n):
            draws[softmax_step(BetaBernoulliModel(), h, 1e6, gen)] += 1
        np.testing.assert_allclose(draws / n, 0.5, atol=0.01)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ConfigError):
            softmax_probabilities(np.array([1.0, 0.0]), 0.0)


class TestLinearTs:
    def test_no_data_prior(self):
        mean, cov = gaussian_posterior(np.zeros((3, 3)), np.zeros(3), 0.25)
        np.testing.assert_array_equal(mean, np.zeros(3))
        np.testing.assert_allclose(cov, np.eye(3))

    def test_posterior_mean_matches_dense_solve(self):
        """Dense-solve oracle: the posterior mean solves
        (XtX / v + I) m = XtY / v, checked to 1e-10 on a 3x3 system."""
        gen = np.random.default_rng(4)
        xs = gen.standard_normal((12, 3))
        ys = gen.standard_normal(12)
        v = 0.25
        s_xx, s_xy = xs.T @ xs, xs.T @ ys
        mean, _ = gaussian_posterior(s_xx, s_xy, v)
        direct = np.linalg.solve(s_xx / v + np.eye(3), s_xy / v)
        assert np.abs(mean - direct).max() < 1e-10

    def test_covariance_trace_shrinks(self):
        gen = np.random.default_rng(5)
        s_xx = np.zeros((3, 3))
        traces = []
        for _ in range(5):
            _, cov = gaussian_posterior(s_xx, np.zeros(3), 0.25)
            traces.append(np.trace(cov))
            x = gen.standard_normal(3)
            s_xx = s_xx + np.outer(x, x)
        assert np.all(np.diff(traces) < 0)

    def test_no_data_scores_centred(self):
        h = History(PriorInfo(np.zeros((2, 1)))).with_context(np.array([1.0, 0.0, 0.0]))
        gen = RngStream(6, 0, "lts").generator
        picks = np.zeros(2)
        for _ in range(4000):
            picks[linear_ts_step(h, 0.25, gen)] += 1
        np.testing.assert_allclose(picks / picks.sum(), 0.5, atol=0.03)


class TestLinUcb:
    def test_no_data_ties_to_first_arm(self):
        h = History(PriorInfo(np.zeros((3, 1)))).with_context(np.array([0.7, -0.2]))
        assert linucb_step(h, 0.1) == 0

    def test_hand_computed_example(self):
        # Arm 0: three (e1, 1) observations. Score at e1: 3/4 + 0.1*sqrt(1/4) = 0.8.
        # Arm 1: no data. Score: 0.1. Positive gap picks arm 0.
        prior = PriorInfo(np.zeros((2, 1)))
        x = np.array([1.0, 0.0])
        h = History(prior)
        for _ in range(3):
            h = h.with_context(x).append(x, 0, 1.0)
        h = h.with_context(x)
        s0 = linucb_score(x, 3 * np.outer(x, x), 3 * x, 0.1)
        s1 = linucb_score(x, np.zeros((2, 2)), np.zeros(2), 0.1)
        assert s0 == pytest.approx(0.8)
        assert s1 == pytest.approx(0.1)
        assert linucb_step(h, 0.1) == 0

    def test_alpha_zero_is_greedy_on_ridge(self):
        gen = np.random.default_rng(7)
        prior = PriorInfo(np.zeros((2, 1)))
        h = History(prior)
        for _ in range(15):
            x = gen.standard_normal(2)
            a = int(gen.integers(2))
            h = h.with_context(x).append(x, a, float(gen.random() < 0.6))
        x_now = gen.standard_normal(2)
        h = h.with_context(x_now)
        choice = linucb_step(h, 0.0)
        means = []
        for a in range(2):
            _, xs, ys = h.arm_observations(a)
            ridge = np.linalg.solve(np.eye(2) + xs.T @ xs, xs.T @ ys)
            means.append(float(x_now @ ridge))
        assert choice == int(np.argmax(means))


class TestTsGen:
    def test_probability_matching(self):
        """Posterior enumeration oracle: the action distribution equals the
        posterior probability that the fitted policy picks each action."""
        env = DiscreteMixtureEnv(
            theta=[[[0.2, 0.6], [0.7, 0.3]], [[0.8, 0.35], [0.25, 0.75]]],
            weights=[0.5, 0.5],
            horizon=3,
        )
        model = ExactMixtureModel(env)
        task = sample_task(env, RngStream(8))
        h = History(task.prior_info)
        x0 = task.contexts[0]
        h = h.with_context(x0).append(x0, 0, task.outcomes[0, 0])
        h = h.with_context(task.contexts[1])
        want = enumerate_optimal_action_probs(env, h, task.contexts)
        rng = RngStream(9, 0, "match")
        n = 20_000
        got = np.zeros(2)
        for _ in range(n):
            got[ts_gen_step(model, h, rng, 3, policy_class="tabular",
                            contexts=task.contexts)] += 1
        tv = 0.5 * np.abs(got / n - want).sum()
        assert tv < 0.02

    def test_matching_holds_at_horizon_one(self):
        """At T=1 with no data the distribution follows the fitted-policy
        posterior under the lowest-index tie-break (not uniform: ties on the
        single imputed row always resolve to the first arm)."""
        env = symmetric_mixture_env([[0.5]], n_actions=2, horizon=1)
        model = ExactMixtureModel(env)
        task = sample_task(env, RngStream(10))
        h = History(task.prior_info).with_context(task.contexts[0])
        want = enumerate_optimal_action_probs(env, h, task.contexts)
        np.testing.assert_allclose(want, [0.75, 0.25], atol=1e-12)
        rng = RngStream(11, 0, "t1")
        n = 20_000
        got = np.zeros(2)
        for _ in range(n):
            got[ts_gen_step(model, h, rng, 1, policy_class="tabular",
                            contexts=task.contexts)] += 1
        np.testing.assert_allclose(got / n, want, atol=0.02)

    def test_dominant_arm_locked_in(self):
        """Near-deterministic table: after a few observations the dominant arm
        is selected essentially always."""
        env = DiscreteMixtureEnv(theta=[[[0.01, 0.99]]], weights=[1.0], horizon=20)
        model = ExactMixtureModel(env)
        task = sample_task(env, RngStream(12))
        h = History(task.prior_info)
        for t in range(5):
            x = task.contexts[t]
            a = t % 2
            h = h.with_context(x).append(x, a, task.outcomes[t, a])
        h = h.with_context(task.contexts[5])
        rng = RngStream(13, 0, "dom")
        picks = [
            ts_gen_step(model, h, rng, 20, policy_class="tabular", contexts=task.contexts)
            for _ in range(300)
        ]
        assert np.mean(np.asarray(picks) == 1) >= 0.99


class TestAgentClasses:
    def test_incremental_agents_match_functional_steps(self):
        """Replay equality: class-based agents reproduce the pure step functions."""
        env = symmetric_mixture_env([[0.25, 0.7], [0.8, 0.35]], n_actions=3, horizon=15)
        model = ExactMixtureModel(env)
        task = sample_task(env, RngStream(14))
        greedy = make_agent(AgentConfig(variant="greedy"), model)
        greedy.begin_task(task.prior_info, RngStream(15, 0, "g"), 15,
                          known_contexts=task.contexts)
        h = History(task.prior_info)
        for t in range(15):
            x = task.contexts[t]
            h = h.with_context(x)
            a_cls = greedy.select_action(x, t)
            a_fun = greedy_step(model, h)
            assert a_cls == a_fun
            y = task.outcomes[t, a_cls]
            greedy.observe(x, a_cls, y)
            h = h.append(x, a_cls, y)

    def test_ts_gen_agent_matches_functional_distribution(self):
        env = symmetric_mixture_env([[0.2], [0.8]], n_actions=2, horizon=4)
        model = ExactMixtureModel(env)
        task = sample_task(env, RngStream(16))
        cfg = AgentConfig(variant="ts_gen", policy_class="tabular")
        agent = make_agent(cfg, model)
        agent.begin_task(task.prior_info, RngStream(17, 0, "a"), 4,
                         known_contexts=task.contexts)
        # Same stream, same decision: identical action.
        a1 = agent.select_action(task.contexts[0], 0)
        h = History(task.prior_info).with_context(task.contexts[0])
        a2 = ts_gen_step(model, h, RngStream(17, 0, "a"), 4, policy_class="tabular",
                         contexts=task.contexts)
        assert a1 == a2

    def test_uniform_agent_counts(self):
        agent = make_agent(AgentConfig(variant="uniform"))
        agent.begin_task(PriorInfo(np.zeros((4, 1))), RngStream(18, 0, "u"), 10)
        picks = np.zeros(4)
        for _ in range(20_000):
            picks[agent.select_action(np.zeros(1), 0)] += 1
        np.testing.assert_allclose(picks / picks.sum(), 0.25, atol=0.02)

    def test_oracle_agent_requires_policy(self):
        agent = make_agent(AgentConfig(variant="oracle"))
        with pytest.raises(ConfigError):
            agent.begin_task(PriorInfo(np.zeros((2, 1))), RngStream(19), 5)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            AgentConfig(variant="softmax", temperature=-1.0)
        with pytest.raises(ConfigError):
            AgentConfig(variant="epsilon_greedy", epsilon=1.5)
        with pytest.raises(ConfigError):
            make_agent(AgentConfig(variant="greedy"))
