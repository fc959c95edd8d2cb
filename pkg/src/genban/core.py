"""Shared domain types: tasks, histories, rewards, and the deterministic RNG contract.

A bandit task bundles per-action prior features, a context sequence, and the
complete table of potential outcomes (one outcome per timestep and action).
An agent only ever observes one entry of that table per timestep; the
``History`` type enforces this missing-data discipline by recording exactly
the `(context, action, outcome)` triples that occurred.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class ContractError(ValueError):
    """An operation was called in violation of its documented precondition."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


@dataclass(frozen=True)
class PriorInfo:
    """Per-action prior feature vectors, one row per action.

    The feature dimension is constant within a task.  For environments with
    no informative prior the rows are all-zero vectors.
    """

    per_action_features: np.ndarray

    def __post_init__(self) -> None:
        feats = np.asarray(self.per_action_features, dtype=np.float64)
        if feats.ndim != 2:
            raise ContractError(
                f"per_action_features must be 2-d (n_actions, d_z); got shape {feats.shape}"
            )
        object.__setattr__(self, "per_action_features", feats)

    @property
    def n_actions(self) -> int:
        return self.per_action_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.per_action_features.shape[1]

    def features_for(self, action: int) -> np.ndarray:
        return self.per_action_features[action]


@dataclass(frozen=True)
class TaskInstance:
    """One bandit task: prior info, contexts, and the full potential-outcome table.

    ``outcomes[t, a]`` is the outcome the agent would observe by playing
    action ``a`` at timestep ``t``.  The table is complete by construction:
    an entry exists for every `(t, a)` pair and NaN entries are rejected.
    """

    prior_info: PriorInfo
    contexts: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self) -> None:
        contexts = np.asarray(self.contexts, dtype=np.float64)
        outcomes = np.asarray(self.outcomes, dtype=np.float64)
        if contexts.ndim != 2:
            raise ContractError(f"contexts must be 2-d (T, d_x); got shape {contexts.shape}")
        if outcomes.ndim != 2:
            raise ContractError(f"outcomes must be 2-d (T, n_actions); got shape {outcomes.shape}")
        if contexts.shape[0] != outcomes.shape[0]:
            raise ContractError(
                f"contexts length {contexts.shape[0]} != outcomes length {outcomes.shape[0]}"
            )
        if contexts.shape[0] < 1:
            raise ContractError("horizon must be positive")
        if outcomes.shape[1] != self.prior_info.n_actions:
            raise ContractError(
                f"outcomes have {outcomes.shape[1]} actions but prior info has "
                f"{self.prior_info.n_actions}"
            )
        if np.isnan(outcomes).any():
            raise ContractError("outcome table is incomplete (NaN entries present)")
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "outcomes", outcomes)

    @property
    def horizon(self) -> int:
        return self.contexts.shape[0]

    @property
    def n_actions(self) -> int:
        return self.outcomes.shape[1]

    @property
    def context_dim(self) -> int:
        return self.contexts.shape[1]


class HistoryStep(NamedTuple):
    context: np.ndarray
    action: int
    outcome: float


class History:
    """The agent's observation record: prior info, past triples, current context.

    Past steps are immutable; the only way to grow a history is to observe a
    context (``with_context``) and then append the step taken under it
    (``append``), which returns a new ``History`` sharing the frozen prefix.
    Counterfactual outcomes (actions not taken) are never representable.
    """

    __slots__ = ("_prior_info", "_steps", "_current_context")

    def __init__(
        self,
        prior_info: PriorInfo,
        steps: Sequence[HistoryStep] = (),
        current_context: np.ndarray | None = None,
    ) -> None:
        self._prior_info = prior_info
        self._steps = tuple(steps)
        self._current_context = None if current_context is None else np.asarray(
            current_context, dtype=np.float64
        )

    @property
    def prior_info(self) -> PriorInfo:
        return self._prior_info

    @property
    def steps(self) -> tuple[HistoryStep, ...]:
        return self._steps

    @property
    def current_context(self) -> np.ndarray | None:
        return self._current_context

    def __len__(self) -> int:
        return len(self._steps)

    def __iter__(self) -> Iterator[HistoryStep]:
        return iter(self._steps)

    def with_context(self, x: np.ndarray) -> "History":
        """Record the newly observed context for the upcoming decision."""
        if self._current_context is not None:
            raise ContractError("a current context is already pending")
        return History(self._prior_info, self._steps, x)

    def append(self, x: np.ndarray, action: int, outcome: float) -> "History":
        """Append one `(context, action, outcome)` step and clear the pending context."""
        x = np.asarray(x, dtype=np.float64)
        if self._current_context is None or not np.array_equal(self._current_context, x):
            raise ContractError("appended context does not match the pending current context")
        if not 0 <= action < self._prior_info.n_actions:
            raise ContractError(f"action {action} out of range")
        step = HistoryStep(x, int(action), float(outcome))
        return History(self._prior_info, self._steps + (step,), None)

    def arm_observations(self, action: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Timestep indices, contexts, and outcomes recorded for one action."""
        idx = [t for t, s in enumerate(self._steps) if s.action == action]
        if not idx:
            return (
                np.empty(0, dtype=np.int64),
                np.empty((0, 0), dtype=np.float64),
                np.empty(0, dtype=np.float64),
            )
        xs = np.stack([self._steps[t].context for t in idx])
        ys = np.array([self._steps[t].outcome for t in idx], dtype=np.float64)
        return np.asarray(idx, dtype=np.int64), xs, ys


def append_step(h: History, x: np.ndarray, action: int, outcome: float) -> History:
    """Functional alias for :meth:`History.append`."""
    return h.append(x, action, outcome)


def history_hash(h: History) -> str:
    """SHA-256 over a binary-stable serialization of the history.

    Byte layout (all fields little-endian float64, in field order):
    ``n_actions, d_z``, then the prior feature rows (row-major); ``n_steps``;
    then per step ``d_x`` followed by the context entries, the action id, and
    the outcome; finally a presence flag (0/1) for the current context
    followed, if present, by its ``d_x`` and entries.
    """
    buf = bytearray()

    def put(*vals: float) -> None:
        for v in vals:
            buf.extend(struct.pack("<d", float(v)))

    feats = h.prior_info.per_action_features
    put(feats.shape[0], feats.shape[1])
    buf.extend(np.ascontiguousarray(feats, dtype="<f8").tobytes())
    put(len(h.steps))
    for step in h.steps:
        x = np.ascontiguousarray(step.context, dtype="<f8")
        put(x.shape[0])
        buf.extend(x.tobytes())
        put(step.action, step.outcome)
    if h.current_context is None:
        put(0.0)
    else:
        x = np.ascontiguousarray(h.current_context, dtype="<f8")
        put(1.0, x.shape[0])
        buf.extend(x.tobytes())
    return hashlib.sha256(bytes(buf)).hexdigest()


class RewardFn:
    """A fixed, known map from outcome values to rewards in [0, 1]."""

    name = "base"

    def apply(self, y: float) -> float:
        raise NotImplementedError

    def __call__(self, y: float) -> float:
        r = float(self.apply(y))
        if not 0.0 <= r <= 1.0:
            raise ContractError(f"reward {r} outside [0, 1]")
        return r


class IdentityReward(RewardFn):
    """R(y) = y, the reward map used by all shipped environments."""

    name = "identity"

    def apply(self, y: float) -> float:
        return float(y)


IDENTITY_REWARD = IdentityReward()


def reward(r: RewardFn, y: float) -> float:
    """Apply a reward map to an observed outcome."""
    return r(y)


def _label_words(label: str) -> tuple[int, int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return (
        int.from_bytes(digest[:8], "little"),
        int.from_bytes(digest[8:16], "little"),
    )


class RngStream:
    """Counter-based random stream keyed by (experiment_seed, task_index, label).

    Identical key components yield bit-identical draw sequences on every run
    and under any thread schedule; distinct labels or task indices give
    statistically independent streams.  Built on Philox so task-level
    parallelism cannot perturb results.
    """

    __slots__ = ("experiment_seed", "task_index", "stream_label", "_gen")

    def __init__(self, experiment_seed: int, task_index: int = 0, stream_label: str = "root"):
        self.experiment_seed = int(experiment_seed)
        self.task_index = int(task_index)
        self.stream_label = stream_label
        self._gen: np.random.Generator | None = None

    def for_task(self, task_index: int) -> "RngStream":
        return RngStream(self.experiment_seed, task_index, self.stream_label)

    def substream(self, label: str) -> "RngStream":
        return RngStream(self.experiment_seed, self.task_index, f"{self.stream_label}/{label}")

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            w1, w2 = _label_words(self.stream_label)
            seq = np.random.SeedSequence(
                entropy=self.experiment_seed, spawn_key=(self.task_index, w1, w2)
            )
            self._gen = np.random.Generator(np.random.Philox(seq))
        return self._gen

    # Convenience passthroughs -------------------------------------------------

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, x):
        return self.generator.permutation(x)

    def choice(self, a, size=None, p=None):
        return self.generator.choice(a, size=size, p=p)

    def bernoulli(self, p, size=None):
        draw = self.generator.random(size) < p
        if size is None:
            return float(draw)
        return draw.astype(np.float64)

    def __getstate__(self):
        # The lazily-built generator carries its counter; keep it so a pickled
        # stream resumes rather than restarts.
        return (self.experiment_seed, self.task_index, self.stream_label, self._gen)

    def __setstate__(self, state):
        self.experiment_seed, self.task_index, self.stream_label, self._gen = state

    def __repr__(self) -> str:
        return (
            f"RngStream(seed={self.experiment_seed}, task={self.task_index}, "
            f"label={self.stream_label!r})"
        )
