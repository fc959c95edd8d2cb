"""Training contracts: resampling, sequence loss, SGD, and the loss-gap oracle."""

import math

import numpy as np
import pytest

from genban.core import ConfigError, RngStream
from genban.env import SyntheticDgpConfig, symmetric_mixture_env
from genban.seqmodel import (
    BetaBernoulliModel,
    ConstantModel,
    ExactMixtureModel,
    MlpSeqModel,
)
from genban.training import (
    ArmRecord,
    HistoricalPool,
    TrainConfig,
    TrainingDiverged,
    build_historical_pool,
    enumerate_loss_gap,
    fold_state,
    population_loss,
    resample_sequence,
    sequence_nll,
    sequence_nll_and_grad,
    train,
)

SMALL_ENV = SyntheticDgpConfig(horizon=1, n_actions=1, d_z=2, d_x=3)


def small_pool(n_arms, pairs, seed, all_ones=False):
    rng = RngStream(seed, 0, "pool")
    records = []
    for i in range(n_arms):
        gen = rng.substream(f"a{i}").generator
        xs = gen.standard_normal((pairs, 3))
        ys = np.ones(pairs) if all_ones else (gen.random(pairs) < 0.5).astype(float)
        records.append(ArmRecord(gen.standard_normal(2), xs, ys))
    return HistoricalPool(records)


def tiny_model(seed=0):
    return MlpSeqModel.initialize(2, 3, RngStream(seed, 0, "init"), hidden=(16, 16, 16),
                                  count_scale=50.0)


class TestResampling:
    def test_full_length_is_permutation(self):
        pool = small_pool(1, 30, 1)
        xs, ys = resample_sequence(pool, 0, 30, RngStream(2))
        orig = pool.arms[0]
        key = lambda mat: sorted(map(tuple, mat))
        assert key(xs) == key(orig.xs)

    def test_single_draw_uniform(self):
        """Frequency oracle: a length-1 draw is uniform over the pool entries."""
        pool = small_pool(1, 10, 3)
        gen = RngStream(4).generator
        counts = np.zeros(10)
        n = 100_000
        ids = {tuple(pool.arms[0].xs[k]): k for k in range(10)}
        for _ in range(n):
            xs, _ = resample_sequence(pool, 0, 1, gen)
            counts[ids[tuple(xs[0])]] += 1
        p = 0.1
        se = math.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(counts / n - p) < 3.5 * se)

    def test_different_streams_different_orderings(self):
        pool = small_pool(1, 20, 5)
        a, _ = resample_sequence(pool, 0, 20, RngStream(6, 0, "e1"))
        b, _ = resample_sequence(pool, 0, 20, RngStream(6, 0, "e2"))
        assert not np.array_equal(a, b)

    def test_keep_order_preserves_pool_order(self):
        pool = small_pool(1, 20, 7)
        xs, _ = resample_sequence(pool, 0, 5, RngStream(8), keep_order=True)
        rows = [pool.arms[0].xs.tolist().index(list(x)) for x in xs]
        assert rows == sorted(rows)

    def test_length_cap(self):
        pool = small_pool(1, 5, 9)
        with pytest.raises(ConfigError):
            resample_sequence(pool, 0, 6, RngStream(10))

    def test_pool_canonicalization_absorbs_shuffles(self):
        gen = np.random.default_rng(11)
        xs = gen.standard_normal((25, 3))
        ys = (gen.random(25) < 0.5).astype(float)
        perm = gen.permutation(25)
        p1 = HistoricalPool([ArmRecord(np.zeros(2), xs, ys)])
        p2 = HistoricalPool([ArmRecord(np.zeros(2), xs[perm], ys[perm])])
        assert np.array_equal(p1.arms[0].xs, p2.arms[0].xs)
        assert np.array_equal(p1.arms[0].ys, p2.arms[0].ys)


class TestSequenceNll:
    def test_constant_half_three_steps(self):
        pairs = [(np.zeros(3), 1.0), (np.zeros(3), 0.0), (np.zeros(3), 1.0)]
        assert sequence_nll(ConstantModel(0.5), None, pairs) == pytest.approx(3 * math.log(2))

    def test_empty_sequence(self):
        assert sequence_nll(ConstantModel(0.5), None, []) == 0.0

    def test_chain_rule_additivity(self):
        """Prefix + conditional-suffix losses reproduce the full-sequence loss.

        The identity is exact in real arithmetic; regrouping the float64
        summation moves the result by at most a few ulps, so the comparison
        allows only rounding noise.
        """
        model = BetaBernoulliModel()
        gen = np.random.default_rng(12)
        pairs = [(None, float(gen.integers(2))) for _ in range(20)]
        full = sequence_nll(model, None, pairs)
        prefix, suffix = pairs[:8], pairs[8:]
        state = fold_state(model, 0, None, prefix)
        split = sequence_nll(model, None, prefix) + sequence_nll(
            model, None, suffix, state=state
        )
        assert full == pytest.approx(split, abs=1e-12)

    def test_true_model_minimizes_expected_nll(self):
        """Monte Carlo comparison: the exact mixture model's expected sequence
        loss undercuts a misspecified model by more than two standard errors."""
        env = symmetric_mixture_env([[0.15], [0.85]], n_actions=1, horizon=8)
        exact = ExactMixtureModel(env)
        wrong = ConstantModel(0.5)
        rng = RngStream(13)
        diffs = []
        for i in range(4000):
            from genban.env import sample_task

            task = sample_task(env, rng.for_task(i))
            pairs = list(zip(task.contexts, task.outcomes[:, 0]))
            diffs.append(
                sequence_nll(wrong, None, pairs) - sequence_nll(exact, None, pairs)
            )
        diffs = np.asarray(diffs)
        se = diffs.std(ddof=1) / np.sqrt(len(diffs))
        assert diffs.mean() > 2 * se


class TestGradients:
    def test_sequence_gradient_matches_finite_differences(self):
        """Central-difference oracle over 10 random (model, sequence) pairs."""
        worst = 0.0
        for trial in range(10):
            model = tiny_model(seed=trial)
            gen = np.random.default_rng(100 + trial)
            L = 12
            xs = gen.standard_normal((L, 3))
            ys = (gen.random(L) < 0.5).astype(float)
            z = gen.standard_normal(2)
            _, grad = sequence_nll_and_grad(model, z, xs, ys)
            vec = model.parameter_vector()
            h = 1e-6
            for j in gen.choice(vec.size, size=8, replace=False):
                for sign, store in ((1, "up"), (-1, "down")):
                    pert = vec.copy()
                    pert[j] += sign * h
                    model.set_parameter_vector(pert)
                    val = sequence_nll(model, z, zip(xs, ys))
                    if sign == 1:
                        up = val
                    else:
                        down = val
                model.set_parameter_vector(vec)
                fd = (up - down) / (2 * h)
                denom = max(abs(grad[j]), abs(fd), 1e-8)
                worst = max(worst, abs(grad[j] - fd) / denom)
        assert worst < 1e-4


class TestTrain:
    def config(self, **overrides):
        base = dict(epochs=12, batch_size=8, learning_rates=(0.1,), weight_decay=0.01,
                    sequence_length=20, permute_tuples=True)
        base.update(overrides)
        return TrainConfig(**base)

    def test_constant_outcome_saturates(self):
        """Saturation oracle: training on an all-ones pool drives the predictive
        above 0.95 everywhere."""
        train_pool = small_pool(16, 40, 20, all_ones=True)
        val_pool = small_pool(6, 40, 21, all_ones=True)
        result = train(tiny_model(1), train_pool, val_pool,
                       self.config(epochs=40, learning_rates=(0.5,)), RngStream(22))
        model = result.model
        gen = np.random.default_rng(23)
        state = model.init_state(0)
        preds = []
        for _ in range(20):
            x = gen.standard_normal(3)
            preds.append(model.predict(gen.standard_normal(2), state, x))
            state = model.update_state(state, x, 1.0)
        assert min(preds) >= 0.95

    def test_zero_epochs_returns_initial_model(self):
        model = tiny_model(2)
        before = model.parameter_vector().copy()
        result = train(model, small_pool(4, 30, 24), small_pool(2, 30, 25),
                       self.config(epochs=0), RngStream(26))
        assert np.array_equal(result.model.parameter_vector(), before)
        assert result.selected_epoch == 0

    def test_deterministic_given_seed(self):
        cfg = self.config(epochs=3)
        runs = []
        for _ in range(2):
            result = train(tiny_model(3), small_pool(6, 30, 27), small_pool(3, 30, 28),
                           cfg, RngStream(29))
            runs.append(result.model.parameter_vector())
        assert np.array_equal(runs[0], runs[1])

    def test_shuffled_pool_bit_identical_training(self):
        """Pool canonicalization makes training invariant to storage order."""
        gen = np.random.default_rng(30)
        records, shuffled = [], []
        for _ in range(6):
            xs = gen.standard_normal((30, 3))
            ys = (gen.random(30) < 0.5).astype(float)
            z = gen.standard_normal(2)
            perm = gen.permutation(30)
            records.append(ArmRecord(z, xs, ys))
            shuffled.append(ArmRecord(z, xs[perm], ys[perm]))
        val = small_pool(3, 30, 31)
        cfg = self.config(epochs=3)
        r1 = train(tiny_model(4), HistoricalPool(records), val, cfg, RngStream(32))
        r2 = train(tiny_model(4), HistoricalPool(shuffled), val, cfg, RngStream(32))
        assert np.array_equal(r1.model.parameter_vector(), r2.model.parameter_vector())
        assert [(c.nll, c.split) for c in r1.curves] == [(c.nll, c.split) for c in r2.curves]

    def test_divergence_aborts_with_diagnostic(self):
        pool = small_pool(6, 30, 33)
        cfg = self.config(epochs=5, learning_rates=(1e9,))
        with pytest.raises(TrainingDiverged):
            train(tiny_model(5), pool, small_pool(2, 30, 34), cfg, RngStream(35))

    def test_grid_selects_validation_argmin(self):
        cfg = self.config(epochs=4, learning_rates=(0.3, 0.03))
        result = train(tiny_model(6), small_pool(8, 30, 36), small_pool(4, 30, 37),
                       cfg, RngStream(38))
        val_rows = [c for c in result.curves if c.split == "validation"]
        best = min(val_rows, key=lambda c: c.nll)
        assert (result.selected_lr, result.selected_epoch) == (best.lr, best.epoch)
        assert result.best_val_nll == best.nll

    def test_more_data_lowers_validation_loss(self):
        """Models trained on a larger pool reach lower validation loss (2 se)."""
        env = SyntheticDgpConfig(horizon=1, n_actions=1, d_z=2, d_x=3)
        rng = RngStream(39)
        big = build_historical_pool(env, 120, 60, rng.substream("big"))
        small = HistoricalPool(big.arms[:6])
        val = build_historical_pool(env, 60, 60, rng.substream("val"))
        cfg = TrainConfig(epochs=25, batch_size=60, learning_rates=(0.2,),
                          weight_decay=0.01, sequence_length=40)
        model = MlpSeqModel.initialize(2, 3, RngStream(40, 0, "init"), hidden=(16, 16, 16),
                                       count_scale=40.0)
        r_small = train(model.copy(), small, val, cfg, RngStream(41))
        r_big = train(model.copy(), big, val, cfg, RngStream(41))
        val_rows = [c for c in r_big.curves if c.split == "validation"]
        se = max(c.se for c in val_rows)
        assert r_big.best_val_nll < r_small.best_val_nll - 2 * se


class TestPopulationLoss:
    def test_constant_half_exact(self):
        env = symmetric_mixture_env([[0.3, 0.8]], n_actions=2, horizon=7)
        mean, se = population_loss(ConstantModel(0.5), env, 20, RngStream(42))
        assert mean == pytest.approx(2 * 7 * math.log(2), abs=1e-12)
        assert se == 0.0

    def test_exact_model_never_worse(self):
        """Implied by the loss decomposition: the true model's population loss
        is no larger than any other model's (3 se check)."""
        env = symmetric_mixture_env([[0.2], [0.8]], n_actions=1, horizon=6)
        rng = RngStream(43)
        exact_mean, exact_se = population_loss(ExactMixtureModel(env), env, 400, rng)
        for other in (ConstantModel(0.5), BetaBernoulliModel()):
            other_mean, other_se = population_loss(other, env, 400, rng)
            spread = 3 * math.sqrt(exact_se**2 + other_se**2)
            assert exact_mean <= other_mean + spread


class TestLossGapEnumeration:
    def test_gap_equals_actions_times_mean_kl(self):
        """Enumeration oracle: excess loss equals action count times the mean
        per-arm joint KL divergence, to 1e-6."""
        env = symmetric_mixture_env([[0.2, 0.7], [0.8, 0.4]], n_actions=2, horizon=3)
        for model in (ConstantModel(0.5), ConstantModel(0.3), BetaBernoulliModel()):
            report = enumerate_loss_gap(env, model)
            assert abs(report.gap - env.n_actions * report.kl_mean) < 1e-6
            assert report.gap >= 0.0

    def test_gap_zero_for_exact_model(self):
        env = symmetric_mixture_env([[0.25, 0.6]], n_actions=2, horizon=3)
        report = enumerate_loss_gap(env, ExactMixtureModel(env))
        assert abs(report.gap) < 1e-10
        assert abs(report.kl_total) < 1e-10

    def test_asymmetric_arms_sum_form(self):
        """With arm-dependent tables the per-arm KL divergences still sum to the gap."""
        from genban.env import DiscreteMixtureEnv

        env = DiscreteMixtureEnv(
            theta=[[[0.2, 0.6], [0.7, 0.3]], [[0.8, 0.35], [0.25, 0.75]]],
            weights=[0.4, 0.6],
            horizon=3,
        )
        report = enumerate_loss_gap(env, ConstantModel(0.4))
        assert abs(report.gap - report.kl_total) < 1e-9

    def test_cap_refusal(self):
        env = symmetric_mixture_env([[0.2, 0.7]], n_actions=2, horizon=30)
        with pytest.raises(ConfigError):
            enumerate_loss_gap(env, ConstantModel(0.5))
