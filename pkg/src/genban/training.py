"""Offline learning: masked-outcome log loss, bootstrap resampling, SGD training.

The trainable model sees per-arm sequences resampled without replacement
from a pool of historical arm records.  Each epoch draws a fresh random
sub-sequence per arm, assembles prefix summary statistics, and takes one
SGD step per mini-batch with decoupled weight decay.  Model selection keeps
the (learning rate, epoch) checkpoint with the lowest validation loss.

Also provides the population sequence loss (Monte Carlo with standard error)
and an exact enumeration of the loss gap against the true model on small
discrete environments.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, RngStream
from .env import DiscreteMixtureEnv, EnvConfig, sample_arm_data, sample_task
from .seqmodel import (
    PROB_FLOOR,
    ExactMixtureModel,
    MlpSeqModel,
    SequenceModel,
)

logger = logging.getLogger("genban.training")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and resampling hyperparameters for offline training."""

    epochs: int = 100
    batch_size: int = 500
    learning_rates: tuple[float, ...] = (0.1, 0.01, 0.001)
    weight_decay: float = 0.01
    sequence_length: int = 500
    permute_tuples: bool = True
    validation_size: int | None = None

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if not self.learning_rates or any(lr <= 0 for lr in self.learning_rates):
            raise ConfigError("learning rates must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if self.sequence_length < 1:
            raise ConfigError("sequence length must be positive")


@dataclass(frozen=True)
class ArmRecord:
    """One action's historical record: prior features plus logged (x, y) pairs."""

    z: np.ndarray
    xs: np.ndarray
    ys: np.ndarray


@dataclass
class HistoricalPool:
    """Per-action stores of exchangeable (context, outcome) pairs.

    Pairs within an arm carry no order information, so each record is
    canonicalized at construction (sorted lexicographically by context then
    outcome).  Training is therefore bit-identical under any pre-shuffle of
    the stored pairs.
    """

    arms: list[ArmRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        canonical = []
        for rec in self.arms:
            xs = np.asarray(rec.xs, dtype=np.float64)
            ys = np.asarray(rec.ys, dtype=np.float64)
            if xs.ndim != 2 or ys.shape != (xs.shape[0],) or xs.shape[0] < 1:
                raise ConfigError("arm record must hold matching (n, d) contexts and n outcomes")
            keys = (ys,) + tuple(xs[:, i] for i in range(xs.shape[1] - 1, -1, -1))
            order = np.lexsort(keys)
            canonical.append(
                ArmRecord(np.asarray(rec.z, dtype=np.float64), xs[order], ys[order])
            )
        self.arms = canonical
        sizes = {rec.xs.shape[0] for rec in self.arms}
        if len(sizes) > 1:
            raise ConfigError("all arms must store the same number of pairs")

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    @property
    def pairs_per_arm(self) -> int:
        return self.arms[0].xs.shape[0] if self.arms else 0


def build_historical_pool(env_config, n_arms: int, pairs_per_arm: int, rng: RngStream) -> HistoricalPool:
    """Draw ``n_arms`` independent arm records from a logistic-link generator."""
    if n_arms < 1:
        raise ConfigError("pool needs at least one arm")
    records = []
    for i in range(n_arms):
        z, xs, ys = sample_arm_data(env_config, pairs_per_arm, rng.substream(f"arm{i}"))
        records.append(ArmRecord(z, xs, ys))
    return HistoricalPool(records)


def resample_sequence(
    pool: HistoricalPool, arm: int, length: int, rng, keep_order: bool = False
):
    """Sample ``length`` distinct pairs from one arm, in fresh random order.

    With ``keep_order`` the chosen pairs keep their canonical pool order
    instead (used when tuple permutation is disabled).
    """
    rec = pool.arms[arm]
    n = rec.xs.shape[0]
    if length > n:
        raise ConfigError(f"sequence length {length} exceeds pool size {n}")
    gen = rng.generator if hasattr(rng, "generator") else rng
    idx = gen.permutation(n)[:length]
    if keep_order:
        idx = np.sort(idx)
    return rec.xs[idx], rec.ys[idx]


def fold_state(model: SequenceModel, arm: int, z, pairs):
    state = model.init_state(arm, z)
    for x, y in pairs:
        state = model.update_state(state, x, y)
    return state


def sequence_nll(model: SequenceModel, z, pairs, arm: int = 0, state=None) -> float:
    """Negative log-likelihood of an ordered (x, y) sequence under the model.

    Additive over prefix terms: the value for ``prefix + suffix`` equals the
    prefix value plus the suffix value continued from the prefix state.
    Predictions at an observed outcome are clamped away from 0 before the
    log; clamping is flagged through the module logger.
    """
    if state is None:
        state = model.init_state(arm, z)
    total = 0.0
    clamped = 0
    for x, y in pairs:
        p = model.predict(z, state, x)
        p_obs = p if y > 0.5 else 1.0 - p
        if p_obs < PROB_FLOOR:
            p_obs = PROB_FLOOR
            clamped += 1
        total -= np.log(p_obs)
        state = model.update_state(state, x, y)
    if clamped:
        logger.warning("clamped %d zero-probability predictions in sequence_nll", clamped)
    return float(total)


# ---------------------------------------------------------------------------
# SGD training with validation-based model selection
# ---------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class CurveRow:
    lr: float
    epoch: int
    split: str
    nll: float
    se: float


@dataclass
class TrainResult:
    model: MlpSeqModel
    curves: list[CurveRow]
    selected_lr: float
    selected_epoch: int
    best_val_nll: float
    diverged_lrs: tuple[float, ...] = ()


def _sequence_rows(model: MlpSeqModel, pool: HistoricalPool, arm: int, length: int,
                   rng, permute: bool):
    xs, ys = resample_sequence(pool, arm, length, rng, keep_order=not permute)
    return model.assemble_sequence_inputs(pool.arms[arm].z, xs, ys), ys


def _batched_nll(model: MlpSeqModel, inputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    probs = model.predict_proba(inputs)
    return -(targets * np.log(probs) + (1.0 - targets) * np.log1p(-probs))


def sequence_nll_and_grad(model: MlpSeqModel, z, xs, ys):
    """Sequence NLL plus its gradient as one flat vector over all parameters."""
    inputs = model.assemble_sequence_inputs(z, xs, ys)
    loss, gw, gb = model.loss_and_grads(inputs, np.asarray(ys, dtype=np.float64),
                                        reduction="sum")
    grad = np.concatenate([g.ravel() for g in gw] + [g.ravel() for g in gb])
    return loss, grad

def _sgd_epoch(model: MlpSeqModel, pool: HistoricalPool, cfg: TrainConfig, lr: float,
               gen: np.random.Generator) -> float:
    order = gen.permutation(pool.n_arms)
    total_loss = 0.0
    total_rows = 0
    decay = 1.0 - lr * cfg.weight_decay
    for start in range(0, pool.n_arms, cfg.batch_size):
        batch = order[start : start + cfg.batch_size]
        rows = []
        targets = []
        for arm in batch:
            inp, ys = _sequence_rows(model, pool, int(arm), cfg.sequence_length, gen,
                                     cfg.permute_tuples)
            rows.append(inp)
            targets.append(ys)
        inputs = np.concatenate(rows)
        ys = np.concatenate(targets)
        loss, gw, gb = model.loss_and_grads(inputs, ys, reduction="mean")
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at lr={lr}")
        for w, g in zip(model.weights, gw):
            w *= decay
            w -= lr * g
        for b, g in zip(model.biases, gb):
            b -= lr * g
        total_loss += loss * inputs.shape[0]
        total_rows += inputs.shape[0]
    return total_loss / total_rows


def _validation_matrix(model: MlpSeqModel, pool: HistoricalPool, cfg: TrainConfig,
                       rng: RngStream):
    n = pool.n_arms if cfg.validation_size is None else min(cfg.validation_size, pool.n_arms)
    gen = rng.substream("validation").generator
    rows, targets = [], []
    for arm in range(n):
        inp, ys = _sequence_rows(model, pool, arm, cfg.sequence_length, gen,
                                 cfg.permute_tuples)
        rows.append(inp)
        targets.append(ys)
    return np.concatenate(rows), np.concatenate(targets), n


def _validation_nll(model: MlpSeqModel, inputs, targets, n_seqs: int):
    nll = _batched_nll(model, inputs, targets)
    per_seq = nll.reshape(n_seqs, -1).mean(axis=1)
    se = float(per_seq.std(ddof=1) / np.sqrt(n_seqs)) if n_seqs > 1 else 0.0
    return float(nll.mean()), se


def train(model: MlpSeqModel, train_pool: HistoricalPool, val_pool: HistoricalPool,
          cfg: TrainConfig, rng: RngStream) -> TrainResult:
    """Fit by SGD over resampled sequences; keep the best validation checkpoint.

    Each learning rate in the grid trains from the same initialization on its
    own substream.  A learning rate whose loss turns non-finite is abandoned
    with a warning; training fails only if every rate diverges.  With zero
    epochs the initialized model is returned unchanged.
    """
    if cfg.sequence_length > train_pool.pairs_per_arm:
        raise ConfigError("sequence length exceeds the training pool size")
    if val_pool.n_arms and cfg.sequence_length > val_pool.pairs_per_arm:
        raise ConfigError("sequence length exceeds the validation pool size")

    val_inputs, val_targets, n_val = _validation_matrix(model, val_pool, cfg, rng)
    curves: list[CurveRow] = []
    best = (np.inf, 0.0, 0, model.copy())
    diverged: list[float] = []

    for lr_idx, lr in enumerate(cfg.learning_rates):
        candidate = model.copy()
        gen = rng.substream(f"lr{lr_idx}").generator
        try:
            for epoch in range(1, cfg.epochs + 1):
                train_nll = _sgd_epoch(candidate, train_pool, cfg, lr, gen)
                val_nll, val_se = _validation_nll(candidate, val_inputs, val_targets, n_val)
                curves.append(CurveRow(lr, epoch, "train", train_nll, 0.0))
                curves.append(CurveRow(lr, epoch, "validation", val_nll, val_se))
                if val_nll < best[0]:
                    best = (val_nll, lr, epoch, candidate.copy())
        except TrainingDiverged as exc:
            logger.warning("abandoning lr=%s: %s", lr, exc)
            diverged.append(lr)

    if diverged and len(diverged) == len(cfg.learning_rates):
        raise TrainingDiverged(
            f"every learning rate in {cfg.learning_rates} diverged; see curves for diagnostics"
        )
    best_nll, sel_lr, sel_epoch, best_model = best
    if cfg.epochs == 0 or not np.isfinite(best_nll):
        init_val, _ = _validation_nll(model, val_inputs, val_targets, n_val)
        return TrainResult(model.copy(), curves, 0.0, 0, init_val, tuple(diverged))
    return TrainResult(best_model, curves, sel_lr, sel_epoch, best_nll, tuple(diverged))


# ---------------------------------------------------------------------------
# Population loss and the exact enumeration oracle
# ---------------------------------------------------------------------------


def population_loss(model: SequenceModel, env_config: EnvConfig, n_tasks: int,
                    rng: RngStream) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of the expected task NLL.

    Each task contributes the summed sequence NLL over all actions, with
    per-arm sequences read in time order.
    """
    if n_tasks < 2:
        raise ConfigError("population loss needs at least 2 tasks for a standard error")
    values = np.empty(n_tasks)
    for i in range(n_tasks):
        task = sample_task(env_config, rng.for_task(i).substream("poploss"))
        total = 0.0
        for a in range(task.n_actions):
            pairs = zip(task.contexts, task.outcomes[:, a])
            total += sequence_nll(model, task.prior_info.features_for(a), pairs, arm=a)
        values[i] = total
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n_tasks))


@dataclass(frozen=True)
class LossGapReport:
    model_loss: float
    true_loss: float
    gap: float
    per_arm_kl: tuple[float, ...]

    @property
    def kl_total(self) -> float:
        return float(sum(self.per_arm_kl))

    @property
    def kl_mean(self) -> float:
        return self.kl_total / len(self.per_arm_kl)


def _enumeration_cost(env: DiscreteMixtureEnv, horizon: int) -> float:
    return float(env.n_contexts**horizon) * float(2**horizon) * env.n_actions


def enumerate_loss_gap(env: DiscreteMixtureEnv, model: SequenceModel,
                       horizon: int | None = None, cap: float = 5e6) -> LossGapReport:
    """Exact expected losses and per-arm joint KL divergences by enumeration.

    Walks every context sequence and outcome sequence of a small discrete
    environment.  Model losses go through the model's own predictive chain;
    the true joint goes through the closed-form mixture product, so the two
    routes are genuinely independent.
    """
    horizon = env.horizon if horizon is None else horizon
    if env.z_reveals_component:
        raise ConfigError("loss enumeration expects uninformative prior features")
    if _enumeration_cost(env, horizon) > cap:
        raise ConfigError("enumeration size cap exceeded")
    exact = ExactMixtureModel(env)
    z = np.zeros(1)
    n_x = env.n_contexts
    px = (1.0 / n_x) ** horizon
    model_loss = 0.0
    true_loss = 0.0
    per_arm_kl = [0.0] * env.n_actions
    eye = np.eye(n_x)
    for ctx_idx in itertools.product(range(n_x), repeat=horizon):
        ctx_vecs = eye[list(ctx_idx)]
        for a in range(env.n_actions):
            th = env.theta[:, list(ctx_idx), a]  # (M, T)
            for ys in itertools.product((0.0, 1.0), repeat=horizon):
                y_arr = np.asarray(ys)
                like = np.prod(np.where(y_arr > 0.5, th, 1.0 - th), axis=1)
                p_star = float(env.weights @ like)
                pairs = list(zip(ctx_vecs, ys))
                nll_model = sequence_nll(model, z, pairs, arm=a)
                nll_true = sequence_nll(exact, z, pairs, arm=a)
                w = px * p_star
                model_loss += w * nll_model
                true_loss += w * nll_true
                per_arm_kl[a] += w * (np.log(p_star) + nll_model)
    return LossGapReport(
        model_loss, true_loss, model_loss - true_loss, tuple(per_arm_kl)
    )


def enumerate_population_loss(env: DiscreteMixtureEnv, model: SequenceModel,
                              horizon: int | None = None) -> float:
    """Exact population loss of a model on a small discrete environment."""
    return enumerate_loss_gap(env, model, horizon).model_loss
