"""Domain-type contracts: rewards, history discipline, hashing, RNG determinism."""

import numpy as np
import pytest

from genban.core import (
    ContractError,
    History,
    IDENTITY_REWARD,
    PriorInfo,
    RngStream,
    TaskInstance,
    append_step,
    history_hash,
    reward,
)


def make_prior(n_actions=3, d_z=2):
    return PriorInfo(np.zeros((n_actions, d_z)))


class TestReward:
    def test_identity_one(self):
        assert reward(IDENTITY_REWARD, 1.0) == 1.0

    def test_identity_zero(self):
        assert reward(IDENTITY_REWARD, 0.0) == 0.0

    def test_identity_mean_over_fair_coin(self):
        """Sample-mean oracle: mean identity reward of Bernoulli(1/2) draws is 1/2."""
        rng = RngStream(11, 0, "reward-oracle")
        draws = rng.bernoulli(0.5, size=100_000)
        mean = np.mean([reward(IDENTITY_REWARD, y) for y in draws[:1000]])
        assert abs(draws.mean() - 0.5) < 0.01
        assert abs(mean - draws[:1000].mean()) == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ContractError):
            reward(IDENTITY_REWARD, 1.5)


class TestHistory:
    def test_append_from_empty(self):
        h = History(make_prior()).with_context([1.0, 0.0])
        h2 = append_step(h, [1.0, 0.0], 2, 1.0)
        assert len(h2) == 1
        assert h2.current_context is None
        assert h2.steps[0].action == 2

    def test_append_preserves_prefix(self):
        h = History(make_prior())
        xs = [np.array([float(t), 1.0]) for t in range(4)]
        for t, x in enumerate(xs):
            h = h.with_context(x).append(x, t % 3, float(t % 2))
        prefix = h.steps[:3]
        h2 = h.with_context([9.0, 9.0]).append([9.0, 9.0], 0, 1.0)
        assert len(h2) == 5
        assert h2.steps[:3] == prefix

    def test_context_mismatch_rejected(self):
        h = History(make_prior()).with_context([1.0, 0.0])
        with pytest.raises(ContractError):
            h.append([0.0, 1.0], 0, 1.0)

    def test_no_counterfactual_outcomes(self):
        """Only the played action's outcome is recorded at each step."""
        h = History(make_prior())
        x = np.array([1.0, 0.0])
        h = h.with_context(x).append(x, 1, 1.0)
        for a in (0, 2):
            idx, _, _ = h.arm_observations(a)
            assert len(idx) == 0
        idx, _, ys = h.arm_observations(1)
        assert idx.tolist() == [0] and ys.tolist() == [1.0]

    def test_replay_reconstructs_hash(self):
        """Serialize-replay oracle: rebuilding a 500-step episode gives the same hash."""
        rng = RngStream(3, 0, "episode")
        prior = PriorInfo(rng.standard_normal((4, 2)))
        h = History(prior)
        record = []
        for t in range(500):
            x = rng.standard_normal(5)
            a = int(rng.integers(0, 4))
            y = float(rng.bernoulli(0.4))
            record.append((x, a, y))
            h = h.with_context(x).append(x, a, y)
        replayed = History(prior)
        for x, a, y in record:
            replayed = replayed.with_context(x).append(x, a, y)
        assert history_hash(h) == history_hash(replayed)
        assert len(history_hash(h)) == 64

    def test_hash_sensitive_to_outcome(self):
        prior = make_prior()
        x = np.array([1.0, 0.0])
        h1 = History(prior).with_context(x).append(x, 0, 1.0)
        h2 = History(prior).with_context(x).append(x, 0, 0.0)
        assert history_hash(h1) != history_hash(h2)


class TestTaskInstance:
    def test_shape_validation(self):
        prior = make_prior(2)
        with pytest.raises(ContractError):
            TaskInstance(prior, np.zeros((5, 3)), np.zeros((4, 2)))

    def test_incomplete_table_rejected(self):
        prior = make_prior(2)
        outcomes = np.zeros((5, 2))
        outcomes[3, 1] = np.nan
        with pytest.raises(ContractError):
            TaskInstance(prior, np.zeros((5, 3)), outcomes)


class TestRngStream:
    def test_same_key_bit_identical(self):
        a = RngStream(42, 7, "x").standard_normal(100)
        b = RngStream(42, 7, "x").standard_normal(100)
        assert np.array_equal(a, b)

    def test_labels_independent(self):
        a = RngStream(42, 7, "x").standard_normal(100)
        b = RngStream(42, 7, "y").standard_normal(100)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.3

    def test_tasks_independent(self):
        a = RngStream(42, 0).standard_normal(100)
        b = RngStream(42, 1).standard_normal(100)
        assert not np.array_equal(a, b)

    def test_substream_label_composition(self):
        s = RngStream(1, 2, "root").substream("env")
        assert s.stream_label == "root/env"
        assert np.array_equal(
            s.standard_normal(8), RngStream(1, 2, "root/env").standard_normal(8)
        )

    def test_pickle_preserves_counter(self):
        import pickle

        s = RngStream(5, 0, "p")
        s.standard_normal(10)
        clone = pickle.loads(pickle.dumps(s))
        assert np.array_equal(clone.standard_normal(5), s.standard_normal(5))
