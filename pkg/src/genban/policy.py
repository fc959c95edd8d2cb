"""Policy classes and the fitting procedures applied to complete task tables.

A policy is a deterministic, time-invariant map from contexts to actions.
Fitting always uses the whole table with no train/test split, and every
tie anywhere in the pipeline resolves to the lowest action index so that
two fits on equal inputs produce byte-identical serialized policies.

Three classes are shipped:

* ``tabular`` — per-context argmax of mean rewards; only valid for one-hot
  encoded finite context sets.  Also supports the squared-shortfall fitting
  criterion by exhaustive enumeration.
* ``logistic`` — one ridge-penalized logistic reward model per arm, fit by
  Newton iterations; the policy takes the arm with the largest prediction.
* ``tree`` — one gradient-boosted ensemble of depth-2 regression trees per
  arm (squared error, exact greedy split search over feature midpoints).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, ContractError, IDENTITY_REWARD, RewardFn, TaskInstance
from .env import logistic

POLICY_CLASSES = ("tabular", "logistic", "tree")
FIT_CRITERIA = ("per_arm_reward_regression", "least_squares_vs_max")


class Policy:
    """Deterministic map from a context vector to an action index."""

    kind = "base"

    def action(self, x: np.ndarray) -> int:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> int:
        return self.action(x)

    def actions_for(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.action(x) for x in np.asarray(xs)], dtype=np.int64)

    def to_json(self) -> dict:
        raise NotImplementedError

    def serialized(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


class TabularPolicy(Policy):
    kind = "tabular"

    def __init__(self, actions_by_context):
        self.actions_by_context = np.asarray(actions_by_context, dtype=np.int64)

    def action(self, x: np.ndarray) -> int:
        return int(self.actions_by_context[int(np.argmax(x))])

    def actions_for(self, xs: np.ndarray) -> np.ndarray:
        return self.actions_by_context[np.argmax(np.asarray(xs), axis=1)]

    def to_json(self) -> dict:
        return {"class": self.kind, "actions": self.actions_by_context.tolist()}


class PerArmPolicy(Policy):
    """Argmax over per-arm fitted reward predictions, ties to the lowest index."""

    def __init__(self, arm_models, kind: str):
        self.arm_models = list(arm_models)
        self.kind = kind

    def scores(self, x: np.ndarray) -> np.ndarray:
        return np.array([m.predict(x) for m in self.arm_models], dtype=np.float64)

    def action(self, x: np.ndarray) -> int:
        return int(np.argmax(self.scores(x)))

    def to_json(self) -> dict:
        return {"class": self.kind, "arms": [m.to_json() for m in self.arm_models]}


# ---------------------------------------------------------------------------
# Per-arm reward models
# ---------------------------------------------------------------------------


@dataclass
class LogisticArmModel:
    w: np.ndarray
    b: float

    def predict(self, x: np.ndarray) -> float:
        return float(logistic(float(np.asarray(x) @ self.w) + self.b))

    def predict_many(self, xs: np.ndarray) -> np.ndarray:
        return logistic(xs @ self.w + self.b)

    def to_json(self) -> dict:
        return {"w": self.w.tolist(), "b": self.b}

    @classmethod
    def fit(cls, xs: np.ndarray, ys: np.ndarray, l2: float = 1.0, max_iter: int = 50,
            tol: float = 1e-10) -> "LogisticArmModel":
        """Ridge-penalized logistic regression by damped Newton iterations.

        Minimizes the summed cross-entropy plus ``l2/2 * |w|^2`` (intercept
        unpenalized).  The penalty keeps the Hessian positive definite, so
        the solve never degenerates even on separable data.
        """
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        n, d = xs.shape
        design = np.hstack([xs, np.ones((n, 1))])
        beta = np.zeros(d + 1)
        ridge = np.diag([l2] * d + [0.0])
        for _ in range(max_iter):
            p = logistic(design @ beta)
            grad = design.T @ (p - ys) + ridge @ beta
            if float(np.abs(grad).max()) < tol:
                break
            w_diag = np.maximum(p * (1.0 - p), 1e-12)
            hess = design.T @ (design * w_diag[:, None]) + ridge
            beta = beta - np.linalg.solve(hess, grad)
        return cls(beta[:d].copy(), float(beta[d]))


def _best_split(xs: np.ndarray, resid: np.ndarray):
    """Exact greedy squared-error split over all (feature, midpoint) pairs.

    Returns ``(feature, threshold, sse)`` or None when no split separates the
    rows.  Scanning features in index order and midpoints in ascending order
    with strict improvement makes the choice deterministic.
    """
    n, d = xs.shape
    best = None
    total = resid.sum()
    for f in range(d):
        order = np.argsort(xs[:, f], kind="stable")
        xv = xs[order, f]
        rv = resid[order]
        distinct = np.nonzero(np.diff(xv) > 0)[0]
        if distinct.size == 0:
            continue
        csum = np.cumsum(rv)
        csq = np.cumsum(rv * rv)
        k = distinct + 1  # rows in the left child
        left_sum = csum[distinct]
        left_sq = csq[distinct]
        right_sum = total - left_sum
        right_n = n - k
        sse = (left_sq - left_sum**2 / k) + ((csq[-1] - left_sq) - right_sum**2 / right_n)
        i = int(np.argmin(sse))
        cand = float(sse[i])
        if best is None or cand < best[2] - 1e-15:
            thr = 0.5 * (xv[distinct[i]] + xv[distinct[i] + 1])
            best = (f, float(thr), cand)
    return best


def _fit_tree(xs: np.ndarray, resid: np.ndarray, max_depth: int) -> dict:
    if max_depth == 0 or xs.shape[0] < 2:
        return {"value": float(resid.mean())}
    split = _best_split(xs, resid)
    if split is None:
        return {"value": float(resid.mean())}
    f, thr, _ = split
    mask = xs[:, f] <= thr
    return {
        "feature": int(f),
        "threshold": thr,
        "left": _fit_tree(xs[mask], resid[mask], max_depth - 1),
        "right": _fit_tree(xs[~mask], resid[~mask], max_depth - 1),
    }


def _tree_depth(node: dict) -> int:
    if "value" in node:
        return 0
    return 1 + max(_tree_depth(node["left"]), _tree_depth(node["right"]))


def _tree_predict(node: dict, x: np.ndarray) -> float:
    while "value" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


def _tree_predict_many(node: dict, xs: np.ndarray) -> np.ndarray:
    if "value" in node:
        return np.full(xs.shape[0], node["value"])
    mask = xs[:, node["feature"]] <= node["threshold"]
    out = np.empty(xs.shape[0])
    out[mask] = _tree_predict_many(node["left"], xs[mask])
    out[~mask] = _tree_predict_many(node["right"], xs[~mask])
    return out


@dataclass(frozen=True)
class BoostedTreeParams:
    """Gradient-boosting hyperparameters; depth beyond 2 is rejected."""

    n_rounds: int = 50
    learning_rate: float = 0.1
    max_depth: int = 2

    def __post_init__(self) -> None:
        if self.max_depth > 2 or self.max_depth < 1:
            raise ConfigError("tree depth must be 1 or 2")
        if self.n_rounds < 1 or self.learning_rate <= 0:
            raise ConfigError("invalid boosting parameters")


@dataclass
class GbtArmModel:
    init_value: float
    trees: list
    learning_rate: float

    def predict(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        s = self.init_value
        for tree in self.trees:
            s += self.learning_rate * _tree_predict(tree, x)
        return float(s)

    def predict_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        s = np.full(xs.shape[0], self.init_value)
        for tree in self.trees:
            s += self.learning_rate * _tree_predict_many(tree, xs)
        return s

    def to_json(self) -> dict:
        return {
            "init": self.init_value,
            "learning_rate": self.learning_rate,
            "trees": self.trees,
        }

    @classmethod
    def fit(cls, xs: np.ndarray, ys: np.ndarray, params: BoostedTreeParams) -> "GbtArmModel":
        """Squared-error gradient boosting: repeatedly fit trees to residuals."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        init = float(ys.mean())
        pred = np.full(xs.shape[0], init)
        trees = []
        for _ in range(params.n_rounds):
            tree = _fit_tree(xs, ys - pred, params.max_depth)
            assert _tree_depth(tree) <= params.max_depth
            trees.append(tree)
            pred += params.learning_rate * _tree_predict_many(tree, xs)
        return cls(init, trees, params.learning_rate)


# ---------------------------------------------------------------------------
# Fitting and evaluation
# ---------------------------------------------------------------------------


def _reward_table(task: TaskInstance, reward_fn: RewardFn) -> np.ndarray:
    if isinstance(reward_fn, type(IDENTITY_REWARD)):
        out = task.outcomes
        if out.min() < 0.0 or out.max() > 1.0:
            raise ContractError("identity reward requires outcomes in [0, 1]")
        return out
    T, A = task.outcomes.shape
    table = np.empty((T, A))
    for t in range(T):
        for a in range(A):
            table[t, a] = reward_fn(task.outcomes[t, a])
    return table


def _context_indices_onehot(xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    idx = np.argmax(xs, axis=1)
    onehot = np.zeros_like(xs)
    onehot[np.arange(xs.shape[0]), idx] = 1.0
    if not np.array_equal(xs, onehot):
        raise ContractError("tabular policies require one-hot encoded contexts")
    return idx


def _fit_tabular(rewards: np.ndarray, ctx_idx: np.ndarray, n_contexts: int) -> TabularPolicy:
    A = rewards.shape[1]
    sums = np.zeros((n_contexts, A))
    counts = np.zeros(n_contexts)
    np.add.at(sums, ctx_idx, rewards)
    np.add.at(counts, ctx_idx, 1.0)
    means = np.zeros((n_contexts, A))
    present = counts > 0
    means[present] = sums[present] / counts[present, None]
    return TabularPolicy(np.argmax(means, axis=1))


def _fit_tabular_least_squares(rewards: np.ndarray, ctx_idx: np.ndarray,
                               n_contexts: int) -> TabularPolicy:
    """Exhaustive minimization of the mean squared shortfall to the per-step best arm.

    Candidate policies enumerate in lexicographic order with strict
    improvement, so ties resolve to the lowest action indices.
    """
    A = rewards.shape[1]
    if A**n_contexts > 65536 or n_contexts * A > 16:
        raise ConfigError("tabular enumeration limited to small context/action grids")
    best_step = rewards.max(axis=1)
    best_policy = None
    best_obj = np.inf
    assignment = np.zeros(n_contexts, dtype=np.int64)
    total = A**n_contexts
    for code in range(total):
        c = code
        for i in range(n_contexts - 1, -1, -1):
            assignment[i] = c % A
            c //= A
        chosen = rewards[np.arange(rewards.shape[0]), assignment[ctx_idx]]
        obj = float(np.mean((chosen - best_step) ** 2))
        if obj < best_obj - 1e-15:
            best_obj = obj
            best_policy = assignment.copy()
    return TabularPolicy(best_policy)


def fit_policy(
    task: TaskInstance,
    policy_class: str,
    criterion: str = "per_arm_reward_regression",
    reward_fn: RewardFn = IDENTITY_REWARD,
    tree_params: BoostedTreeParams | None = None,
) -> Policy:
    """Fit the designated policy class on a complete task table.

    Deterministic given its inputs, including every tie-break; uses the whole
    table with no held-out split.  Degenerate tables (all rewards equal)
    yield the lowest-index action everywhere.
    """
    if policy_class not in POLICY_CLASSES:
        raise ConfigError(f"unknown policy class {policy_class!r}")
    if criterion not in FIT_CRITERIA:
        raise ConfigError(f"unknown fit criterion {criterion!r}")
    rewards = _reward_table(task, reward_fn)
    if policy_class == "tabular":
        ctx_idx = _context_indices_onehot(task.contexts)
        n_contexts = task.contexts.shape[1]
        if criterion == "least_squares_vs_max":
            return _fit_tabular_least_squares(rewards, ctx_idx, n_contexts)
        return _fit_tabular(rewards, ctx_idx, n_contexts)
    if criterion != "per_arm_reward_regression":
        raise ConfigError(f"{policy_class!r} policies support only per-arm regression fitting")
    if policy_class == "logistic":
        arms = [LogisticArmModel.fit(task.contexts, rewards[:, a]) for a in range(task.n_actions)]
        return PerArmPolicy(arms, "logistic")
    params = tree_params or BoostedTreeParams()
    arms = [GbtArmModel.fit(task.contexts, rewards[:, a], params) for a in range(task.n_actions)]
    return PerArmPolicy(arms, "tree")


def evaluate_policy(policy: Policy, task: TaskInstance,
                    reward_fn: RewardFn = IDENTITY_REWARD) -> float:
    """Average per-step reward the policy would earn on the complete table."""
    rewards = _reward_table(task, reward_fn)
    chosen = policy.actions_for(task.contexts)
    return float(rewards[np.arange(task.horizon), chosen].mean())
