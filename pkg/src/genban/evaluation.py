"""Experiment measurement and theory diagnostics.

Covers the regret trace machinery (per-task oracle vs realized rewards),
conditional entropy of the fitted policy's labels (exact enumeration for
small discrete environments, a closed-form binomial route for two-action
tabular fitting at any horizon, plus a plug-in Monte Carlo fallback), the
combinatorial entropy cap from shattering counts, exhaustive labeling
search for planar affine classifiers, the regret-bound report, and the
enumeration oracle for the posterior over completed outcome tables.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import binom

from .core import (
    ConfigError,
    History,
    IDENTITY_REWARD,
    RewardFn,
    RngStream,
    TaskInstance,
)
from .env import (
    DiscreteMixtureEnv,
    EnvConfig,
    make_context_sampler,
    resample_outcome_table,
    sample_task,
    with_horizon,
)
from .agents import AgentConfig, make_agent
from .policy import BoostedTreeParams, fit_policy
from .seqmodel import SequenceModel

logger = logging.getLogger("genban.evaluation")

ENUMERATION_CAP = 1_000_000


# ---------------------------------------------------------------------------
# Regret traces
# ---------------------------------------------------------------------------


@dataclass
class RegretTrace:
    """Per-task, per-timestep oracle and realized rewards for one agent.

    Cumulative regret need not be monotone: the oracle policy is the best
    fit in its class, not a pointwise maximizer, so per-step regret can go
    negative.
    """

    agent: str
    oracle_rewards: np.ndarray  # (n_tasks, T)
    realized_rewards: np.ndarray  # (n_tasks, T)

    @property
    def n_tasks(self) -> int:
        return self.oracle_rewards.shape[0]

    @property
    def horizon(self) -> int:
        return self.oracle_rewards.shape[1]

    @property
    def per_task_cumulative(self) -> np.ndarray:
        return np.cumsum(self.oracle_rewards - self.realized_rewards, axis=1)

    @property
    def mean_cumulative(self) -> np.ndarray:
        return self.per_task_cumulative.mean(axis=0)

    @property
    def se_cumulative(self) -> np.ndarray:
        if self.n_tasks < 2:
            return np.zeros(self.horizon)
        return self.per_task_cumulative.std(axis=0, ddof=1) / np.sqrt(self.n_tasks)

    def per_period_regret(self) -> tuple[float, float]:
        """Mean per-period regret across tasks, with its standard error."""
        per_task = (self.oracle_rewards - self.realized_rewards).mean(axis=1)
        se = float(per_task.std(ddof=1) / np.sqrt(self.n_tasks)) if self.n_tasks > 1 else 0.0
        return float(per_task.mean()), se

    def final_cumulative(self) -> tuple[float, float]:
        final = self.per_task_cumulative[:, -1]
        se = float(final.std(ddof=1) / np.sqrt(self.n_tasks)) if self.n_tasks > 1 else 0.0
        return float(final.mean()), se

    def csv_rows(self):
        """Rows in the trace schema: task, timestep, agent, rewards, cumulative regret."""
        cum = self.per_task_cumulative
        for i in range(self.n_tasks):
            for t in range(self.horizon):
                yield (
                    i,
                    t,
                    self.agent,
                    self.oracle_rewards[i, t],
                    self.realized_rewards[i, t],
                    cum[i, t],
                )


@dataclass(frozen=True)
class ExperimentSettings:
    """Everything a worker needs to reproduce one task simulation."""

    env_config: EnvConfig
    agent_config: AgentConfig
    seed: int
    horizon: int
    context_mode: str = "fixed"
    oracle_policy_class: str = "tabular"
    oracle_criterion: str = "per_arm_reward_regression"
    reward_fn: RewardFn = IDENTITY_REWARD
    model_payload: SequenceModel | None = None

    def __post_init__(self) -> None:
        if self.context_mode not in ("fixed", "resampled"):
            raise ConfigError("context mode must be 'fixed' or 'resampled'")


def _simulate_one_task(settings: ExperimentSettings, task_index: int):
    env = with_horizon(settings.env_config, settings.horizon)
    root = RngStream(settings.seed, task_index)
    task = sample_task(env, root.substream("env"))
    oracle = fit_policy(
        task,
        settings.oracle_policy_class,
        settings.oracle_criterion,
        settings.reward_fn,
    )
    sampler = None if settings.context_mode == "fixed" else make_context_sampler(env)
    agent = make_agent(settings.agent_config, settings.model_payload, context_sampler=sampler)
    agent.begin_task(
        task.prior_info,
        root.substream(f"agent/{settings.agent_config.label}"),
        task.horizon,
        known_contexts=task.contexts if settings.context_mode == "fixed" else None,
        oracle_policy=oracle,
    )
    rfn = settings.reward_fn
    oracle_actions = oracle.actions_for(task.contexts)
    oracle_rewards = np.empty(task.horizon)
    realized = np.empty(task.horizon)
    for t in range(task.horizon):
        x = task.contexts[t]
        a = agent.select_action(x, t)
        y = task.outcomes[t, a]
        agent.observe(x, a, y)
        realized[t] = rfn(y)
        oracle_rewards[t] = rfn(task.outcomes[t, oracle_actions[t]])
    return oracle_rewards, realized


def _simulate_chunk(args):
    settings, indices = args
    return [_simulate_one_task(settings, i) for i in indices]


def run_experiment(settings: ExperimentSettings, n_tasks: int, n_workers: int = 1) -> RegretTrace:
    """Simulate ``n_tasks`` independent tasks and collect the regret trace.

    The oracle policy is fit on each task's true complete table with the same
    fitter the agent uses at imputation time.  Task ``i`` draws every random
    quantity from streams keyed by ``(seed, i)``, and results are reduced in
    task order, so the trace is bit-identical for any worker count.
    """
    if n_tasks < 1:
        raise ConfigError("n_tasks must be positive")
    T = settings.horizon
    oracle_rewards = np.empty((n_tasks, T))
    realized = np.empty((n_tasks, T))
    if n_workers <= 1 or n_tasks == 1:
        for i in range(n_tasks):
            oracle_rewards[i], realized[i] = _simulate_one_task(settings, i)
    else:
        chunks = np.array_split(np.arange(n_tasks), min(4 * n_workers, n_tasks))
        payloads = [(settings, chunk.tolist()) for chunk in chunks if len(chunk)]
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_simulate_chunk, payloads))
        flat = [pair for chunk in results for pair in chunk]
        for i, (orc, rea) in enumerate(flat):
            oracle_rewards[i], realized[i] = orc, rea
    return RegretTrace(settings.agent_config.label, oracle_rewards, realized)


# ---------------------------------------------------------------------------
# Posterior enumeration oracle (discrete environments)
# ---------------------------------------------------------------------------


def _arm_completions(env: DiscreteMixtureEnv, arm: int, obs_pairs, missing_idx,
                     prior_log_weights=None):
    """All completions of one arm's missing outcomes with posterior probabilities."""
    from .env import posterior_log_weights

    logw = posterior_log_weights(env, arm, obs_pairs, prior_log_weights)
    w = np.exp(logw - logsumexp(logw))
    k = len(missing_idx)
    combos = np.array(list(itertools.product((0.0, 1.0), repeat=k))).reshape(-1, k)
    if k == 0:
        return combos, np.ones(1)
    th = env.theta[:, missing_idx, arm]  # (M, k)
    like = np.prod(
        np.where(combos[None, :, :] > 0.5, th[:, None, :], 1.0 - th[:, None, :]), axis=2
    )  # (M, 2^k)
    return combos, w @ like


def enumerate_table_posterior(env: DiscreteMixtureEnv, h: History, contexts: np.ndarray):
    """Exact posterior over completed outcome tables given a history.

    Contexts are taken as fixed and known.  Returns a dict keyed by the
    table's bytes (row-major float64) with posterior probabilities.
    """
    T = contexts.shape[0]
    A = h.prior_info.n_actions
    ctx_idx = env.context_indices(contexts)
    per_arm = []
    total = 1.0
    for a in range(A):
        ids, xs, ys = h.arm_observations(a)
        obs_pairs = [(env.context_index(x), y) for x, y in zip(xs, ys)]
        missing = [t for t in range(T) if t not in set(ids.tolist())]
        prior = None
        if env.z_reveals_component:
            z = h.prior_info.features_for(a)
            prior = np.where(z > 0.5, 0.0, -np.inf)
        combos, probs = _arm_completions(env, a, obs_pairs, [ctx_idx[t] for t in missing],
                                         prior)
        per_arm.append((ids, ys, missing, combos, probs))
        total *= len(probs)
    if total > ENUMERATION_CAP:
        raise ConfigError("enumeration size cap exceeded")
    out: dict[bytes, tuple[float, np.ndarray]] = {}
    for choice in itertools.product(*(range(len(p[4])) for p in per_arm)):
        table = np.empty((T, A))
        prob = 1.0
        for a, (ids, ys, missing, combos, probs) in enumerate(per_arm):
            table[ids, a] = ys
            table[missing, a] = combos[choice[a]]
            prob *= probs[choice[a]]
        out[table.tobytes()] = (prob, table)
    return out


def table_distribution_tv(samples: list[np.ndarray], exact: dict) -> float:
    """Total variation between empirical table frequencies and the exact posterior."""
    counts: dict[bytes, int] = {}
    for tab in samples:
        key = np.ascontiguousarray(tab, dtype=np.float64).tobytes()
        counts[key] = counts.get(key, 0) + 1
    return _tv_from_counts(counts, len(samples), exact)


def _tv_from_counts(counts: dict, n: int, exact: dict) -> float:
    keys = set(counts) | set(exact)
    tv = 0.0
    for k in keys:
        emp = counts.get(k, 0) / n
        ref = exact[k][0] if k in exact else 0.0
        tv += abs(emp - ref)
    return 0.5 * tv


def _count_imputed_tables(args):
    model, h, horizon, contexts, seed, chunk_id, n = args
    rng = RngStream(seed, chunk_id, "imputation-tv")
    counts: dict[bytes, int] = {}
    for _ in range(n):
        tab = impute_task_for_tv(model, h, horizon, rng, contexts)
        key = tab.tobytes()
        counts[key] = counts.get(key, 0) + 1
    return counts


def impute_task_for_tv(model, h, horizon, rng, contexts) -> np.ndarray:
    from .generation import impute_task

    return np.ascontiguousarray(
        impute_task(model, h, horizon, rng, contexts=contexts).outcomes
    )


def imputation_tv_vs_posterior(
    env: DiscreteMixtureEnv,
    model: SequenceModel,
    h: History,
    contexts: np.ndarray,
    n_samples: int,
    seed: int,
    n_workers: int = 1,
) -> float:
    """TV between the imputed-table sampling law and the enumerated posterior.

    Draws are split into worker chunks keyed by ``(seed, chunk_id)``, so the
    result is identical for any worker count.
    """
    horizon = contexts.shape[0]
    exact = enumerate_table_posterior(env, h, contexts)
    n_chunks = max(1, n_workers)
    per = [n_samples // n_chunks] * n_chunks
    per[0] += n_samples - sum(per)
    payloads = [
        (model, h, horizon, contexts, seed, i, per[i]) for i in range(n_chunks)
    ]
    if n_workers <= 1:
        results = [_count_imputed_tables(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_count_imputed_tables, payloads))
    merged: dict[bytes, int] = {}
    for counts in results:
        for k, v in counts.items():
            merged[k] = merged.get(k, 0) + v
    return _tv_from_counts(merged, n_samples, exact)


def enumerate_optimal_action_probs(
    env: DiscreteMixtureEnv,
    h: History,
    contexts: np.ndarray,
    policy_class: str = "tabular",
    criterion: str = "per_arm_reward_regression",
    reward_fn: RewardFn = IDENTITY_REWARD,
) -> np.ndarray:
    """P(fitted policy picks each action at the current context | history)."""
    x_now = h.current_context
    if x_now is None:
        raise ConfigError("history must carry the current context")
    posterior = enumerate_table_posterior(env, h, contexts)
    probs = np.zeros(h.prior_info.n_actions)
    for prob, table in posterior.values():
        tau = TaskInstance(h.prior_info, contexts, table)
        pi = fit_policy(tau, policy_class, criterion, reward_fn)
        probs[pi.action(x_now)] += prob
    return probs


# ---------------------------------------------------------------------------
# Conditional entropy of the fitted policy's labels
# ---------------------------------------------------------------------------


def _entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


def enumerate_policy_entropy(
    env: DiscreteMixtureEnv,
    horizon: int,
    given_z: bool = False,
    criterion: str = "per_arm_reward_regression",
    cap: int = ENUMERATION_CAP,
) -> float:
    """Exact conditional entropy of the fitted tabular policy's label vector.

    Enumerates every context sequence and outcome table, fits the tabular
    policy, and aggregates label-vector probabilities.  ``given_z`` further
    conditions on prior features that reveal each arm's latent component.
    Refuses above the enumeration cap.
    """
    T = horizon
    n_x, A, M = env.n_contexts, env.n_actions, env.n_components
    cost = (n_x**T) * (2 ** (T * A)) * (M**A if given_z else 1)
    if cost > cap:
        raise ConfigError("enumeration size cap exceeded")
    if given_z and not env.z_reveals_component:
        raise ConfigError("given_z requires component-revealing prior features")
    eye = np.eye(n_x)
    px = (1.0 / n_x) ** T
    total = 0.0
    if given_z:
        comps = list(itertools.product(range(M), repeat=A))
        comp_probs = [np.prod([env.weights[m] for m in ms]) for ms in comps]
    else:
        comps = [None]
        comp_probs = [1.0]
    for ms, pm in zip(comps, comp_probs):
        for ctx_idx in itertools.product(range(n_x), repeat=T):
            ctx_vecs = eye[list(ctx_idx)]
            label_probs: dict[tuple, float] = {}
            for flat in itertools.product((0.0, 1.0), repeat=T * A):
                table = np.asarray(flat).reshape(T, A)
                if ms is None:
                    p_tab = 1.0
                    for a in range(A):
                        th = env.theta[:, list(ctx_idx), a]
                        like = np.prod(np.where(table[:, a] > 0.5, th, 1.0 - th), axis=1)
                        p_tab *= float(env.weights @ like)
                else:
                    p_tab = 1.0
                    for a in range(A):
                        th = env.theta[ms[a], list(ctx_idx), a]
                        p_tab *= float(
                            np.prod(np.where(table[:, a] > 0.5, th, 1.0 - th))
                        )
                if p_tab == 0.0:
                    continue
                pi = fit_policy(
                    TaskInstance(env.prior_info_for(np.zeros(A, dtype=int)), ctx_vecs, table),
                    "tabular",
                    criterion,
                )
                labels = tuple(pi.actions_for(ctx_vecs).tolist())
                label_probs[labels] = label_probs.get(labels, 0.0) + p_tab
            total += pm * px * _entropy(np.asarray(list(label_probs.values())))
    return total


def _argmax_zero_prob(n: int, p0: float, p1: float) -> float:
    """P(Binomial(n, p0) >= Binomial(n, p1)) for independent counts (tie -> first arm)."""
    if n == 0:
        return 1.0
    k = np.arange(n + 1)
    pmf0 = binom.pmf(k, n, p0)
    cdf1 = np.cumsum(binom.pmf(k, n, p1))
    return float(pmf0 @ cdf1)


def tabular_policy_entropy(env: DiscreteMixtureEnv, horizon: int,
                           given_z: bool = False) -> float:
    """Closed-form label entropy for two-action tabular fitting, any horizon.

    Decomposes by per-context visit counts (binomial over the uniform context
    draw) and by the arms' latent components.  Conditional on both, the
    fitted choice at a context depends only on two independent binomial
    counts, whose argmax probability is summed exactly.  Contexts that never
    occur contribute no label entropy.  Agrees with``enumerate_policy_entropy``
    to machine precision on small horizons.
    """
    if env.n_actions != 2:
        raise ConfigError("closed-form entropy implemented for two actions")
    if env.n_contexts != 2:
        raise ConfigError("closed-form entropy implemented for two contexts")
    T = horizon
    M = env.n_components
    counts = np.arange(T + 1)
    count_probs = np.exp(
        gammaln(T + 1) - gammaln(counts + 1) - gammaln(T - counts + 1) - T * np.log(2.0)
    )
    comp_pairs = list(itertools.product(range(M), repeat=2))
    pair_w = np.array([env.weights[m0] * env.weights[m1] for m0, m1 in comp_pairs])
    # q[x][j, n] = P(choice at context x is action 0 | components j, n visits)
    q = np.zeros((2, len(comp_pairs), T + 1))
    for x in range(2):
        for j, (m0, m1) in enumerate(comp_pairs):
            p0 = env.theta[m0, x, 0]
            p1 = env.theta[m1, x, 1]
            for n in counts:
                q[x, j, n] = _argmax_zero_prob(n, p0, p1)
    total = 0.0
    for n1 in counts:
        n2 = T - n1
        weight = count_probs[n1]
        if given_z:
            h = 0.0
            for j, pw in enumerate(pair_w):
                h += pw * _joint_choice_entropy(q[0, j, n1], q[1, j, n2], n1, n2)
            total += weight * h
        else:
            probs = _mix_choice_distribution(q[:, :, [n1, n2]], pair_w, n1, n2)
            total += weight * _entropy(probs)
    return total


def _joint_choice_entropy(q1: float, q2: float, n1: int, n2: int) -> float:
    if n1 == 0 and n2 == 0:
        return 0.0
    if n1 == 0:
        return _entropy(np.array([q2, 1 - q2]))
    if n2 == 0:
        return _entropy(np.array([q1, 1 - q1]))
    p = np.array([q1 * q2, q1 * (1 - q2), (1 - q1) * q2, (1 - q1) * (1 - q2)])
    return _entropy(p)


def _mix_choice_distribution(q_pair: np.ndarray, pair_w: np.ndarray, n1: int, n2: int):
    """Label-vector distribution mixing over component pairs; absent contexts drop out."""
    q1 = q_pair[0, :, 0]
    q2 = q_pair[1, :, 1]
    if n1 == 0 and n2 == 0:
        return np.array([1.0])
    if n1 == 0:
        return np.array([float(pair_w @ q2), float(pair_w @ (1 - q2))])
    if n2 == 0:
        return np.array([float(pair_w @ q1), float(pair_w @ (1 - q1))])
    return np.array(
        [
            float(pair_w @ (q1 * q2)),
            float(pair_w @ (q1 * (1 - q2))),
            float(pair_w @ ((1 - q1) * q2)),
            float(pair_w @ ((1 - q1) * (1 - q2))),
        ]
    )


def conditional_entropy_mc(
    env_config: EnvConfig,
    horizon: int,
    n_outer: int,
    n_inner: int,
    rng: RngStream,
    policy_class: str = "tabular",
    criterion: str = "per_arm_reward_regression",
) -> float:
    """Plug-in Monte Carlo entropy estimate for environments without enumeration.

    For each sampled (prior features, contexts), redraws ``n_inner`` outcome
    tables, fits the policy on each, and takes the empirical label entropy.
    Plug-in estimates are biased low for small ``n_inner``; a warning is
    emitted to make the caveat explicit.
    """
    logger.warning(
        "plug-in entropy estimate: biased low when n_inner (%d) is small "
        "relative to the label support", n_inner,
    )
    env = with_horizon(env_config, horizon)
    total = 0.0
    for i in range(n_outer):
        stream = rng.for_task(i).substream("entropy")
        task = sample_task(env, stream)
        label_counts: dict[tuple, int] = {}
        for _ in range(n_inner):
            table = resample_outcome_table(env, task, stream)
            pi = fit_policy(
                TaskInstance(task.prior_info, task.contexts, table), policy_class, criterion
            )
            labels = tuple(pi.actions_for(task.contexts).tolist())
            label_counts[labels] = label_counts.get(labels, 0) + 1
        freqs = np.asarray(list(label_counts.values()), dtype=np.float64) / n_inner
        total += _entropy(freqs)
    return total / n_outer


def conditional_entropy(
    env_config: EnvConfig,
    horizon: int,
    given_z: bool = False,
    rng: RngStream | None = None,
    n_outer: int = 100,
    n_inner: int = 200,
) -> float:
    """Label entropy via the best available route for the environment.

    Discrete environments get the exact table enumeration when it fits under
    the cap, then the closed-form binomial route (two actions, two contexts);
    anything else falls back to the plug-in Monte Carlo estimate, which
    requires an RNG stream.
    """
    if isinstance(env_config, DiscreteMixtureEnv):
        cost = (env_config.n_contexts**horizon) * (
            2 ** (horizon * env_config.n_actions)
        )
        if cost <= ENUMERATION_CAP:
            return enumerate_policy_entropy(env_config, horizon, given_z)
        if env_config.n_actions == 2 and env_config.n_contexts == 2:
            return tabular_policy_entropy(env_config, horizon, given_z)
        raise ConfigError("enumeration size cap exceeded and no closed form applies")
    if rng is None:
        raise ConfigError("sampled environments need an RNG for plug-in estimation")
    return conditional_entropy_mc(env_config, horizon, n_outer, n_inner, rng)


# ---------------------------------------------------------------------------
# Shattering-count entropy cap and planar affine labelings
# ---------------------------------------------------------------------------


def sauer_shelah_bound(vc_dim: int, horizon: int) -> float:
    """log of the maximum number of labelings a VC-dimension-k class can produce.

    Computed as a log-sum-exp of log binomial coefficients, so large
    horizons cannot overflow.
    """
    if vc_dim < 0 or horizon < 1:
        raise ConfigError("need vc_dim >= 0 and horizon >= 1")
    k = min(vc_dim, horizon)
    i = np.arange(k + 1)
    log_binoms = gammaln(horizon + 1) - gammaln(i + 1) - gammaln(horizon - i + 1)
    return float(logsumexp(log_binoms))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull; degenerate inputs yield a point or segment."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) <= 2:
        return np.asarray(pts)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _orient(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _orient(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.asarray(lower[:-1] + upper[:-1])


def _on_segment(a, b, p) -> bool:
    if _orient(a, b, p) != 0.0:
        return False
    return (
        min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
        and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
    )


def _segments_touch(a, b, c, d) -> bool:
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and o1 != 0 and o2 != 0 \
            and o3 != 0 and o4 != 0:
        return True
    return (
        _on_segment(a, b, c) or _on_segment(a, b, d)
        or _on_segment(c, d, a) or _on_segment(c, d, b)
    )


def _point_in_hull(hull: np.ndarray, p) -> bool:
    if len(hull) == 1:
        return bool(np.all(hull[0] == p))
    if len(hull) == 2:
        return _on_segment(hull[0], hull[1], p)
    for i in range(len(hull)):
        if _orient(hull[i], hull[(i + 1) % len(hull)], p) < 0:
            return False
    return True


def _hulls_disjoint(pa: np.ndarray, pb: np.ndarray) -> bool:
    ha, hb = _convex_hull(pa), _convex_hull(pb)
    ea = [(ha[i], ha[(i + 1) % len(ha)]) for i in range(len(ha))] if len(ha) > 1 else []
    eb = [(hb[i], hb[(i + 1) % len(hb)]) for i in range(len(hb))] if len(hb) > 1 else []
    for a, b in ea:
        for c, d in eb:
            if _segments_touch(a, b, c, d):
                return False
    return not any(_point_in_hull(hb, p) for p in ha) and not any(
        _point_in_hull(ha, p) for p in hb
    )


def _labeling_achievable(points: np.ndarray, labels: np.ndarray) -> bool:
    pos = points[labels == 1]
    neg = points[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return True
    return _hulls_disjoint(pos, neg)


def affine_threshold_labelings(points: np.ndarray) -> set[tuple[int, ...]]:
    """Every labeling of the points achievable by a planar affine threshold.

    Candidates come from lines through point pairs (any achievable split has
    a witness line touching two points, with the touched points assignable to
    either side); each candidate is then verified by convex-hull
    disjointness, which keeps the search exact on degenerate inputs too.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    candidates: set[tuple[int, ...]] = set()
    candidates.add(tuple([0] * n))
    candidates.add(tuple([1] * n))
    for i in range(n):
        for j in range(i + 1, n):
            d = points[j] - points[i]
            if d[0] == 0.0 and d[1] == 0.0:
                continue
            # Elementwise cross products; a fused BLAS dot can leave the pair's
            # own side at the product's rounding error instead of exact zero.
            side = d[0] * (points[:, 1] - points[i, 1]) - d[1] * (
                points[:, 0] - points[i, 0]
            )
            scale = np.abs(side).max()
            on_line = np.nonzero(np.abs(side) <= 1e-12 * scale)[0]
            base = side > 0.0
            if len(on_line) > 12:
                raise ConfigError("point set too degenerate for labeling search")
            for flip in (False, True):
                off = ~base if flip else base
                for assign in itertools.product((0, 1), repeat=len(on_line)):
                    lab = off.astype(int)
                    lab[on_line] = assign
                    candidates.add(tuple(lab.tolist()))
    return {
        lab
        for lab in candidates
        if _labeling_achievable(points, np.asarray(lab))
    }


@dataclass(frozen=True)
class VcCheckReport:
    n_points: int
    labeling_count: int
    max_labelings: int
    ok: bool


def verify_entropy_vc(points: np.ndarray, vc_dim: int = 3) -> VcCheckReport:
    """Exhaustive labeling count vs the shattering cap for planar affine thresholds."""
    labelings = affine_threshold_labelings(points)
    cap = int(round(np.exp(sauer_shelah_bound(vc_dim, len(points)))))
    return VcCheckReport(len(points), len(labelings), cap, len(labelings) <= cap)


# ---------------------------------------------------------------------------
# Regret-bound report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    """Both terms of the regret bound next to the measured regret."""

    entropy: float
    n_actions: int
    horizon: int
    loss_gap: float
    empirical_regret: float
    regret_se: float
    gap_clamped: bool

    @property
    def entropy_term(self) -> float:
        return float(np.sqrt(self.n_actions * self.entropy / (2.0 * self.horizon)))

    @property
    def gap_term(self) -> float:
        return float(np.sqrt(2.0 * max(self.loss_gap, 0.0)))

    @property
    def bound(self) -> float:
        return self.entropy_term + self.gap_term

    def satisfied(self, se_slack: float = 3.0) -> bool:
        return self.empirical_regret <= self.bound + se_slack * self.regret_se

    def to_json(self) -> dict:
        return {
            "entropy": self.entropy,
            "n_actions": self.n_actions,
            "horizon": self.horizon,
            "loss_gap": self.loss_gap,
            "gap_clamped": self.gap_clamped,
            "entropy_term": self.entropy_term,
            "gap_term": self.gap_term,
            "bound": self.bound,
            "empirical_regret": self.empirical_regret,
            "regret_se": self.regret_se,
        }


def theorem_bound_report(entropy: float, n_actions: int, horizon: int, loss_gap: float,
                         trace: RegretTrace) -> BoundReport:
    """Assemble the bound report; negative estimated gaps clamp to zero."""
    clamped = loss_gap < 0
    if clamped:
        logger.warning("negative estimated loss gap %.3g clamped to 0", loss_gap)
    regret, se = trace.per_period_regret()
    return BoundReport(entropy, n_actions, horizon, max(loss_gap, 0.0), regret, se, clamped)
