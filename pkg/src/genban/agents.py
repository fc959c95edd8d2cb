"""Online decision-makers: generative Thompson sampling and the baselines.

Every agent is a deterministic function of (history, configuration, RNG
stream): replaying a recorded episode with the same stream reproduces the
same actions.  Agents are instantiated once per task and never shared; the
sequence model they hold is read-only.

Two surfaces are provided.  The ``*_step`` functions are pure: they take a
``History`` whose current context is set and return an action, rebuilding
any per-arm state from scratch.  The ``Agent`` classes keep per-arm state
incrementally for simulation speed; their decisions match the functional
surface exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigError, ContractError, History, PriorInfo, RngStream
from .env import task_to_json
from .generation import impute_task
from .policy import BoostedTreeParams, fit_policy
from .seqmodel import SequenceModel, SummaryState


@dataclass(frozen=True)
class AgentConfig:
    """Variant tag plus every hyperparameter an agent can take."""

    variant: str
    epsilon: float = 0.1
    temperature: float = 0.05
    linucb_alpha: float = 0.1
    linear_ts_noise_var: float = 0.25
    policy_class: str = "logistic"
    criterion: str = "per_arm_reward_regression"
    name: str | None = None
    dump_imputations: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.temperature <= 0.0:
            raise ConfigError("softmax temperature must be positive")
        if self.linucb_alpha < 0.0:
            raise ConfigError("linucb alpha must be non-negative")
        if self.linear_ts_noise_var <= 0.0:
            raise ConfigError("noise variance must be positive")

    @property
    def label(self) -> str:
        return self.name or self.variant


AGENT_VARIANTS = (
    "ts_gen",
    "greedy",
    "epsilon_greedy",
    "softmax",
    "linear_ts",
    "linucb",
    "uniform",
    "oracle",
)


# ---------------------------------------------------------------------------
# Functional decision rules (rebuild state from the history)
# ---------------------------------------------------------------------------


def _require_context(h: History) -> np.ndarray:
    if h.current_context is None:
        raise ContractError("no current context recorded in the history")
    return h.current_context


def _arm_predictives(model: SequenceModel, h: History) -> np.ndarray:
    x = _require_context(h)
    feats = h.prior_info.per_action_features
    states = []
    for a in range(h.prior_info.n_actions):
        _, xs, ys = h.arm_observations(a)
        states.append(model.fold_state(a, feats[a], xs, ys))
    return model.predict_batch(feats, states, [x] * h.prior_info.n_actions)


def greedy_step(model: SequenceModel, h: History) -> int:
    """Arm with the largest one-step predictive; ties to the lowest index."""
    return int(np.argmax(_arm_predictives(model, h)))


def epsilon_greedy_step(model: SequenceModel, h: History, epsilon: float, rng) -> int:
    gen = rng.generator if hasattr(rng, "generator") else rng
    if gen.random() < epsilon:
        return int(gen.integers(0, h.prior_info.n_actions))
    return greedy_step(model, h)


def softmax_probabilities(scores: np.ndarray, temperature: float) -> np.ndarray:
    if temperature <= 0:
        raise ConfigError("softmax temperature must be positive")
    z = np.asarray(scores, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_step(model: SequenceModel, h: History, temperature: float, rng) -> int:
    """Sample an arm proportionally to exp(predicted reward / temperature)."""
    gen = rng.generator if hasattr(rng, "generator") else rng
    probs = softmax_probabilities(_arm_predictives(model, h), temperature)
    return int(gen.choice(len(probs), p=probs))


def gaussian_posterior(s_xx: np.ndarray, s_xy: np.ndarray, noise_var: float):
    """Posterior (mean, covariance) for a unit-Gaussian-prior linear model.

    Prior N(0, I) over the coefficient vector, observation noise variance
    ``noise_var``; the mean coincides with the ridge solution
    ``(XᵀX/v + I)^{-1} XᵀY/v``.
    """
    d = s_xx.shape[0]
    precision = np.eye(d) + s_xx / noise_var
    cov = np.linalg.inv(precision)
    mean = cov @ (s_xy / noise_var)
    return mean, cov


def linear_ts_step(h: History, noise_var: float, rng) -> int:
    """Per-arm Gaussian posterior sample of the coefficients; argmax of x·beta."""
    gen = rng.generator if hasattr(rng, "generator") else rng
    x = _require_context(h)
    d = x.shape[0]
    scores = np.empty(h.prior_info.n_actions)
    for a in range(h.prior_info.n_actions):
        _, xs, ys = h.arm_observations(a)
        if len(ys):
            s_xx, s_xy = xs.T @ xs, xs.T @ ys
        else:
            s_xx, s_xy = np.zeros((d, d)), np.zeros(d)
        mean, cov = gaussian_posterior(s_xx, s_xy, noise_var)
        beta = mean + np.linalg.cholesky(cov) @ gen.standard_normal(d)
        scores[a] = float(x @ beta)
    return int(np.argmax(scores))


def linucb_score(x: np.ndarray, s_xx: np.ndarray, s_xy: np.ndarray, alpha: float) -> float:
    a_inv = np.linalg.inv(np.eye(s_xx.shape[0]) + s_xx)
    return float(x @ (a_inv @ s_xy) + alpha * np.sqrt(x @ a_inv @ x))


def linucb_step(h: History, alpha: float) -> int:
    """Disjoint ridge estimate plus an uncertainty bonus per arm; argmax."""
    x = _require_context(h)
    d = x.shape[0]
    scores = np.empty(h.prior_info.n_actions)
    for a in range(h.prior_info.n_actions):
        _, xs, ys = h.arm_observations(a)
        if len(ys):
            scores[a] = linucb_score(x, xs.T @ xs, xs.T @ ys, alpha)
        else:
            scores[a] = linucb_score(x, np.zeros((d, d)), np.zeros(d), alpha)
    return int(np.argmax(scores))


def ts_gen_step(
    model: SequenceModel,
    h: History,
    rng,
    horizon: int,
    policy_class: str = "tabular",
    criterion: str = "per_arm_reward_regression",
    contexts: np.ndarray | None = None,
    context_sampler=None,
    tree_params: BoostedTreeParams | None = None,
) -> int:
    """One generative Thompson sampling decision.

    Imputes a completed table from the history, fits the designated policy
    on it, and plays that policy at the current context.  A fresh imputation
    is drawn for every decision and discarded afterwards.
    """
    x = _require_context(h)
    tau_hat = impute_task(model, h, horizon, rng, contexts=contexts,
                          context_sampler=context_sampler)
    pi = fit_policy(tau_hat, policy_class, criterion, tree_params=tree_params)
    return int(pi.action(x))


# ---------------------------------------------------------------------------
# Agent classes (incremental state, one instance per task)
# ---------------------------------------------------------------------------


class Agent:
    """Per-task decision-maker with incremental observation state."""

    def __init__(self, label: str):
        self.label = label

    def begin_task(self, prior_info: PriorInfo, rng: RngStream, horizon: int,
                   known_contexts: np.ndarray | None = None, oracle_policy=None) -> None:
        self.prior_info = prior_info
        self.rng = rng
        self.horizon = horizon
        self.known_contexts = known_contexts

    def select_action(self, x: np.ndarray, t: int) -> int:
        raise NotImplementedError

    def observe(self, x: np.ndarray, action: int, outcome: float) -> None:
        pass


class _ModelAgent(Agent):
    """Shared plumbing for agents that query a sequence model per arm."""

    def __init__(self, label: str, model: SequenceModel):
        super().__init__(label)
        self.model = model

    def begin_task(self, prior_info, rng, horizon, known_contexts=None, oracle_policy=None):
        super().begin_task(prior_info, rng, horizon, known_contexts, oracle_policy)
        feats = prior_info.per_action_features
        self.states = [self.model.init_state(a, feats[a]) for a in range(prior_info.n_actions)]

    def observe(self, x, action, outcome):
        self.states[action] = self.model.update_state(self.states[action], x, outcome)

    def _predictives(self, x: np.ndarray) -> np.ndarray:
        feats = self.prior_info.per_action_features
        return self.model.predict_batch(feats, self.states, [x] * len(self.states))


class GreedyAgent(_ModelAgent):
    def select_action(self, x, t):
        return int(np.argmax(self._predictives(x)))


class EpsilonGreedyAgent(_ModelAgent):
    def __init__(self, label, model, epsilon: float):
        super().__init__(label, model)
        self.epsilon = epsilon

    def select_action(self, x, t):
        if self.rng.generator.random() < self.epsilon:
            return int(self.rng.generator.integers(0, self.prior_info.n_actions))
        return int(np.argmax(self._predictives(x)))


class SoftmaxAgent(_ModelAgent):
    def __init__(self, label, model, temperature: float):
        super().__init__(label, model)
        self.temperature = temperature

    def select_action(self, x, t):
        probs = softmax_probabilities(self._predictives(x), self.temperature)
        return int(self.rng.generator.choice(len(probs), p=probs))


class TsGenAgent(_ModelAgent):
    """Thompson sampling via generation: impute, fit, act."""

    def __init__(self, label, model, policy_class: str, criterion: str,
                 tree_params: BoostedTreeParams | None = None,
                 context_sampler=None, dump_dir: str | None = None):
        super().__init__(label, model)
        self.policy_class = policy_class
        self.criterion = criterion
        self.tree_params = tree_params
        self.context_sampler = context_sampler
        self.dump_dir = dump_dir

    def begin_task(self, prior_info, rng, horizon, known_contexts=None, oracle_policy=None):
        super().begin_task(prior_info, rng, horizon, known_contexts, oracle_policy)
        if known_contexts is None and self.context_sampler is None:
            raise ConfigError("ts_gen needs fixed contexts or a context sampler")
        self.history = History(prior_info)
        self._decision = 0

    def select_action(self, x, t):
        h = self.history.with_context(x)
        tau_hat = impute_task(
            self.model,
            h,
            self.horizon,
            self.rng,
            contexts=self.known_contexts,
            context_sampler=self.context_sampler,
            arm_states=[s for s in self.states],
        )
        if self.dump_dir is not None:
            path = Path(self.dump_dir)
            path.mkdir(parents=True, exist_ok=True)
            payload = task_to_json(tau_hat)
            payload["decision_index"] = self._decision
            (path / f"imputed_{self.rng.task_index:05d}_{self._decision:04d}.json").write_text(
                json.dumps(payload), encoding="utf-8"
            )
        self._decision += 1
        pi = fit_policy(tau_hat, self.policy_class, self.criterion,
                        tree_params=self.tree_params)
        return int(pi.action(x))

    def observe(self, x, action, outcome):
        super().observe(x, action, outcome)
        self.history = self.history.with_context(x).append(x, action, outcome)


class LinearTsAgent(Agent):
    def __init__(self, label, noise_var: float = 0.25):
        super().__init__(label)
        self.noise_var = noise_var

    def begin_task(self, prior_info, rng, horizon, known_contexts=None, oracle_policy=None):
        super().begin_task(prior_info, rng, horizon, known_contexts, oracle_policy)
        self._stats: list[SummaryState | None] = [None] * prior_info.n_actions

    def _ensure(self, d: int):
        for a, s in enumerate(self._stats):
            if s is None:
                self._stats[a] = SummaryState(np.zeros((d, d)), np.zeros(d), 0)

    def select_action(self, x, t):
        self._ensure(x.shape[0])
        gen = self.rng.generator
        scores = np.empty(len(self._stats))
        for a, s in enumerate(self._stats):
            mean, cov = gaussian_posterior(s.s_xx, s.s_xy, self.noise_var)
            beta = mean + np.linalg.cholesky(cov) @ gen.standard_normal(x.shape[0])
            scores[a] = float(x @ beta)
        return int(np.argmax(scores))

    def observe(self, x, action, outcome):
        self._ensure(x.shape[0])
        s = self._stats[action]
        self._stats[action] = SummaryState(s.s_xx + np.outer(x, x), s.s_xy + x * outcome,
                                           s.count + 1)


class LinUcbAgent(Agent):
    def __init__(self, label, alpha: float = 0.1):
        super().__init__(label)
        self.alpha = alpha

    def begin_task(self, prior_info, rng, horizon, known_contexts=None, oracle_policy=None):
        super().begin_task(prior_info, rng, horizon, known_contexts, oracle_policy)
        self._stats: list[SummaryState | None] = [None] * prior_info.n_actions

    def _ensure(self, d: int):
        for a, s in enumerate(self._stats):
            if s is None:
                self._stats[a] = SummaryState(np.zeros((d, d)), np.zeros(d), 0)

    def select_action(self, x, t):
        self._ensure(x.shape[0])
        scores = np.array(
            [linucb_score(x, s.s_xx, s.s_xy, self.alpha) for s in self._stats]
        )
        return int(np.argmax(scores))

    def observe(self, x, action, outcome):
        self._ensure(x.shape[0])
        s = self._stats[action]
        self._stats[action] = SummaryState(s.s_xx + np.outer(x, x), s.s_xy + x * outcome,
                                           s.count + 1)


class UniformAgent(Agent):
    def select_action(self, x, t):
        return int(self.rng.generator.integers(0, self.prior_info.n_actions))


class OraclePolicyAgent(Agent):
    """Plays the policy fitted on the true complete table (zero-regret reference)."""

    def begin_task(self, prior_info, rng, horizon, known_contexts=None, oracle_policy=None):
        super().begin_task(prior_info, rng, horizon, known_contexts, oracle_policy)
        if oracle_policy is None:
            raise ConfigError("oracle agent requires the fitted oracle policy")
        self.policy = oracle_policy

    def select_action(self, x, t):
        return int(self.policy.action(x))


def make_agent(cfg: AgentConfig, model: SequenceModel | None = None,
               context_sampler=None, tree_params: BoostedTreeParams | None = None) -> Agent:
    """Instantiate the agent an :class:`AgentConfig` describes."""
    label = cfg.label
    needs_model = cfg.variant in ("ts_gen", "greedy", "epsilon_greedy", "softmax")
    if needs_model and model is None:
        raise ConfigError(f"agent variant {cfg.variant!r} requires a sequence model")
    if cfg.variant == "ts_gen":
        return TsGenAgent(label, model, cfg.policy_class, cfg.criterion,
                          tree_params=tree_params, context_sampler=context_sampler,
                          dump_dir=cfg.dump_imputations)
    if cfg.variant == "greedy":
        return GreedyAgent(label, model)
    if cfg.variant == "epsilon_greedy":
        return EpsilonGreedyAgent(label, model, cfg.epsilon)
    if cfg.variant == "softmax":
        return SoftmaxAgent(label, model, cfg.temperature)
    if cfg.variant == "linear_ts":
        return LinearTsAgent(label, cfg.linear_ts_noise_var)
    if cfg.variant == "linucb":
        return LinUcbAgent(label, cfg.linucb_alpha)
    if cfg.variant == "uniform":
        return UniformAgent(label)
    if cfg.variant == "oracle":
        return OraclePolicyAgent(label)
    raise ConfigError(f"unknown agent variant {cfg.variant!r}")
