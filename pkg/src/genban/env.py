"""Task generators: the logistic-outcome DGPs and an exactly solvable mixture environment.

Three generators are shipped:

* ``SyntheticDgpConfig`` — Bernoulli outcomes through a logistic link whose
  logit is a random affine + cross interaction of per-action features and
  contexts, with coefficients drawn i.i.d. per action.
* ``SurrogateDgpConfig`` — the same structure, but the raw per-action feature
  vector is passed through two fixed nonlinear scalar functionals and the
  context through a sign-flip map before entering the logit, so a learner
  must discover the features.
* ``DiscreteMixtureEnv`` — a finite-context Bernoulli mixture with a known
  prior over per-action latent components.  Its one-step predictive is
  computable in closed form, so it serves as the ground-truth oracle for
  posterior, entropy, and loss-gap checks.

All generators are pure functions of (config, RngStream) and therefore
trivially parallel across tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import special, stats

from .core import ConfigError, ContractError, PriorInfo, TaskInstance


def logistic(w):
    """Numerically stable logistic map ``1 / (1 + exp(-w))``.

    Strictly increasing with ``logistic(w) + logistic(-w) == 1``; saturates
    gracefully (to exactly 0.0 or 1.0 in float64) at extreme arguments.
    """
    out = special.expit(np.asarray(w, dtype=np.float64))
    if np.ndim(out) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Logistic-link generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticDgpConfig:
    """Bayesian logistic-regression task generator.

    Per task, each action draws its own coefficient bundle
    ``(u_const, u_feat, u_ctx, u_cross)``; outcomes are Bernoulli with
    success probability ``logistic(W)`` where::

        W[t, a] = u_const[a] + u_feat[a]·z[a] + u_ctx[a]·x[t]
                  + sum_i x[t, i] * u_cross[a, i] * z[a, i]

    The cross coefficients form a rectangular diagonal, so the interaction
    runs over the first ``min(d_x, d_z)`` coordinates.  Prior features and
    contexts are standard Gaussian.
    """

    horizon: int = 500
    n_actions: int = 10
    d_z: int = 2
    d_x: int = 5
    u_const_mean: float = 0.0
    u_const_std: float = 1.0
    u_coef_mean: float = 1.0
    u_coef_std: float = 0.25

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.n_actions < 1:
            raise ConfigError("horizon and n_actions must be positive")
        if self.d_z < 1 or self.d_x < 1:
            raise ConfigError("feature dimensions must be positive")
        if self.u_const_std < 0 or self.u_coef_std < 0:
            raise ConfigError("coefficient standard deviations must be non-negative")

    @property
    def cross_dim(self) -> int:
        return min(self.d_x, self.d_z)


@dataclass(frozen=True)
class SurrogateDgpConfig(SyntheticDgpConfig):
    """Variant whose logit sees nonlinear transforms of the raw inputs.

    The raw per-action feature vector (dimension ``d_z_raw``) is reduced to
    two standardized scalars by ``surrogate_feature_map``; the context map
    multiplies the first four coordinates by the sign of the fifth (with
    ``sign(0) = +1``).  Agents are given the *raw* features and contexts.
    """

    d_z_raw: int = 8
    # d_z is the post-map feature dimension seen by the logit; fixed at 2.
    d_z: int = 2

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.d_z_raw < 2:
            raise ConfigError("d_z_raw must be at least 2")
        if self.d_z != 2:
            raise ConfigError("the surrogate feature map produces exactly 2 features")
        if self.d_x < 5:
            raise ConfigError("the surrogate context map needs at least 5 context dims")


def surrogate_context_map(x: np.ndarray) -> np.ndarray:
    """Multiply the first four context coordinates by the sign of the fifth.

    ``sign(0)`` is taken as +1.  Accepts a single vector or a (T, d_x) batch.
    """
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    if x.ndim == 1:
        s = 1.0 if x[4] >= 0 else -1.0
        out[:4] = x[:4] * s
    else:
        s = np.where(x[:, 4] >= 0, 1.0, -1.0)
        out[:, :4] = x[:, :4] * s[:, None]
    return out


def surrogate_feature_map(z_raw: np.ndarray) -> np.ndarray:
    """Two fixed nonlinear scalar functionals of a raw Gaussian feature vector.

    For ``v ~ N(0, I_d)`` both outputs have mean 0 and variance exactly 1:

    * a bounded quadratic score, ``sqrt(12) * (F_chi2_d(|v|^2) - 1/2)``, which
      is uniform on ``[-sqrt(3), sqrt(3)]`` by the probability integral
      transform, and
    * a normalized odd polynomial, ``u^3 / sqrt(15)`` with
      ``u = sum(v) / sqrt(d)`` (sixth standard-normal moment is 15).
    """
    v = np.asarray(z_raw, dtype=np.float64)
    single = v.ndim == 1
    if single:
        v = v[None, :]
    d = v.shape[1]
    quad = np.sqrt(12.0) * (stats.chi2.cdf(np.sum(v * v, axis=1), df=d) - 0.5)
    u = np.sum(v, axis=1) / np.sqrt(d)
    odd = u**3 / np.sqrt(15.0)
    out = np.stack([quad, odd], axis=1)
    return out[0] if single else out


@dataclass(frozen=True)
class ArmCoefficients:
    """One action's latent coefficient bundle."""

    const: float
    feat: np.ndarray
    ctx: np.ndarray
    cross: np.ndarray


def draw_arm_coefficients(cfg: SyntheticDgpConfig, rng, n_arms: int) -> list[ArmCoefficients]:
    """Draw i.i.d. coefficient bundles for ``n_arms`` actions."""
    gen = rng.generator if hasattr(rng, "generator") else rng
    out = []
    for _ in range(n_arms):
        const = cfg.u_const_mean + cfg.u_const_std * gen.standard_normal()
        feat = cfg.u_coef_mean + cfg.u_coef_std * gen.standard_normal(cfg.d_z)
        ctx = cfg.u_coef_mean + cfg.u_coef_std * gen.standard_normal(cfg.d_x)
        cross = cfg.u_coef_mean + cfg.u_coef_std * gen.standard_normal(cfg.cross_dim)
        out.append(ArmCoefficients(float(const), feat, ctx, cross))
    return out


def outcome_logit(cfg: SyntheticDgpConfig, coefs: ArmCoefficients, z_feat: np.ndarray, x_feat):
    """Logit of P(Y=1) for one arm at one or many (already mapped) contexts."""
    x_feat = np.asarray(x_feat, dtype=np.float64)
    k = cfg.cross_dim
    lin = x_feat @ coefs.ctx
    cross = x_feat[..., :k] @ (coefs.cross * z_feat[:k])
    return coefs.const + float(coefs.feat @ z_feat) + lin + cross


def _map_inputs(cfg: SyntheticDgpConfig, z_raw: np.ndarray, xs: np.ndarray):
    if isinstance(cfg, SurrogateDgpConfig):
        return surrogate_feature_map(z_raw), surrogate_context_map(xs)
    return z_raw, xs


def _sample_synthetic_task(cfg: SyntheticDgpConfig, rng) -> TaskInstance:
    gen = rng.generator if hasattr(rng, "generator") else rng
    d_raw = cfg.d_z_raw if isinstance(cfg, SurrogateDgpConfig) else cfg.d_z
    z_raw = gen.standard_normal((cfg.n_actions, d_raw))
    coefs = draw_arm_coefficients(cfg, gen, cfg.n_actions)
    xs = gen.standard_normal((cfg.horizon, cfg.d_x))
    probs = np.empty((cfg.horizon, cfg.n_actions))
    for a in range(cfg.n_actions):
        z_feat, x_feat = _map_inputs(cfg, z_raw[a], xs)
        probs[:, a] = logistic(outcome_logit(cfg, coefs[a], z_feat, x_feat))
    outcomes = (gen.random((cfg.horizon, cfg.n_actions)) < probs).astype(np.float64)
    return TaskInstance(PriorInfo(z_raw), xs, outcomes)


def sample_arm_data(cfg: SyntheticDgpConfig, n_pairs: int, rng):
    """One action's historical record: raw features plus ``n_pairs`` i.i.d. (x, y) draws.

    Mirrors data collected under uniformly random historical actions: because
    actions are generated independently, the pairs logged for a given action
    are i.i.d. draws from that arm's (context, outcome) law.
    """
    if n_pairs < 1:
        raise ConfigError("n_pairs must be positive")
    gen = rng.generator if hasattr(rng, "generator") else rng
    d_raw = cfg.d_z_raw if isinstance(cfg, SurrogateDgpConfig) else cfg.d_z
    z_raw = gen.standard_normal(d_raw)
    (coef,) = draw_arm_coefficients(cfg, gen, 1)
    xs = gen.standard_normal((n_pairs, cfg.d_x))
    z_feat, x_feat = _map_inputs(cfg, z_raw, xs)
    probs = logistic(outcome_logit(cfg, coef, z_feat, x_feat))
    ys = (gen.random(n_pairs) < probs).astype(np.float64)
    return z_raw, xs, ys


# ---------------------------------------------------------------------------
# Discrete mixture environment (exactly solvable oracle)
# ---------------------------------------------------------------------------

_THETA_CLIP = (0.01, 0.99)


@dataclass(frozen=True)
class DiscreteMixtureEnv:
    """Finite-context Bernoulli mixture with independent per-action latents.

    Each action independently draws a latent component ``m_a`` from
    ``weights``; conditional on ``m_a`` the (context, outcome) tuples are
    i.i.d. with ``P(Y=1 | x, a) = theta[m_a, x, a]``.  Contexts are uniform
    over a finite set and encoded one-hot.  Success probabilities are clamped
    to [0.01, 0.99] so log-losses and KL divergences stay finite.

    With ``z_reveals_component`` the per-action prior feature is the one-hot
    encoding of ``m_a``, making the prior information maximally informative;
    otherwise prior features are zeros.
    """

    theta: np.ndarray  # (M, n_contexts, n_actions)
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    horizon: int = 100
    z_reveals_component: bool = False

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 3:
            raise ConfigError(f"theta must be 3-d (M, n_contexts, n_actions); got {theta.shape}")
        theta = np.clip(theta, *_THETA_CLIP)
        object.__setattr__(self, "theta", theta)
        w = self.weights
        if w is None:
            w = np.full(theta.shape[0], 1.0 / theta.shape[0])
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (theta.shape[0],) or np.any(w <= 0):
            raise ConfigError("weights must be positive with one entry per component")
        object.__setattr__(self, "weights", w / w.sum())
        if self.horizon < 1:
            raise ConfigError("horizon must be positive")

    @property
    def n_components(self) -> int:
        return self.theta.shape[0]

    @property
    def n_contexts(self) -> int:
        return self.theta.shape[1]

    @property
    def n_actions(self) -> int:
        return self.theta.shape[2]

    @property
    def d_x(self) -> int:
        return self.n_contexts

    def context_vector(self, idx: int) -> np.ndarray:
        v = np.zeros(self.n_contexts)
        v[idx] = 1.0
        return v

    def context_index(self, x: np.ndarray) -> int:
        """Map a one-hot context vector back to its index."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_contexts,):
            raise ContractError(f"context shape {x.shape} outside support")
        idx = int(np.argmax(x))
        onehot = np.zeros(self.n_contexts)
        onehot[idx] = 1.0
        if not np.array_equal(x, onehot):
            raise ContractError("context outside the finite support")
        return idx

    def context_indices(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        return np.array([self.context_index(x) for x in xs], dtype=np.int64)

    def prior_info_for(self, components: np.ndarray) -> PriorInfo:
        if self.z_reveals_component:
            feats = np.zeros((self.n_actions, self.n_components))
            feats[np.arange(self.n_actions), components] = 1.0
        else:
            feats = np.zeros((self.n_actions, 1))
        return PriorInfo(feats)


def symmetric_mixture_env(
    theta_by_context: np.ndarray,
    n_actions: int,
    weights=None,
    horizon: int = 100,
    z_reveals_component: bool = False,
) -> DiscreteMixtureEnv:
    """Mixture env whose components treat every action identically.

    ``theta_by_context`` has shape (M, n_contexts); the table is tiled across
    actions so arms differ only through their independent latent components.
    """
    base = np.asarray(theta_by_context, dtype=np.float64)
    theta = np.repeat(base[:, :, None], n_actions, axis=2)
    return DiscreteMixtureEnv(theta, weights, horizon, z_reveals_component)


def _sample_discrete_task(env: DiscreteMixtureEnv, rng) -> TaskInstance:
    gen = rng.generator if hasattr(rng, "generator") else rng
    components = gen.choice(env.n_components, size=env.n_actions, p=env.weights)
    ctx_idx = gen.integers(0, env.n_contexts, size=env.horizon)
    contexts = np.zeros((env.horizon, env.n_contexts))
    contexts[np.arange(env.horizon), ctx_idx] = 1.0
    probs = env.theta[components[None, :], ctx_idx[:, None], np.arange(env.n_actions)[None, :]]
    outcomes = (gen.random((env.horizon, env.n_actions)) < probs).astype(np.float64)
    return TaskInstance(env.prior_info_for(components), contexts, outcomes)


def exact_predictive(
    env: DiscreteMixtureEnv,
    action: int,
    arm_history,
    x_now,
    prior_log_weights: np.ndarray | None = None,
) -> float:
    """Exact one-step predictive P(Y=1 | arm history, current context).

    Computes the posterior over mixture components given the arm's observed
    (context, outcome) pairs and returns the posterior-weighted success
    probability at ``x_now``.  Exact to machine precision.
    """
    logw = posterior_log_weights(env, action, arm_history, prior_log_weights)
    x_idx = x_now if isinstance(x_now, (int, np.integer)) else env.context_index(x_now)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    return float(w @ env.theta[:, x_idx, action])


def posterior_log_weights(
    env: DiscreteMixtureEnv,
    action: int,
    arm_history,
    prior_log_weights: np.ndarray | None = None,
) -> np.ndarray:
    """Unnormalized log posterior weights over components for one arm."""
    if prior_log_weights is None:
        logw = np.log(env.weights)
    else:
        logw = np.asarray(prior_log_weights, dtype=np.float64).copy()
    for x, y in arm_history:
        x_idx = x if isinstance(x, (int, np.integer)) else env.context_index(x)
        th = env.theta[:, x_idx, action]
        logw = logw + np.where(y > 0.5, np.log(th), np.log1p(-th))
    return logw


# ---------------------------------------------------------------------------
# Dispatch helpers shared by the rest of the package
# ---------------------------------------------------------------------------

EnvConfig = SyntheticDgpConfig | DiscreteMixtureEnv


def sample_task(gen_config: EnvConfig, rng) -> TaskInstance:
    """Draw one complete task from the configured generator."""
    if isinstance(gen_config, DiscreteMixtureEnv):
        return _sample_discrete_task(gen_config, rng)
    if isinstance(gen_config, SyntheticDgpConfig):
        return _sample_synthetic_task(gen_config, rng)
    raise ConfigError(f"unknown generator config {type(gen_config).__name__}")


def with_horizon(gen_config: EnvConfig, horizon: int) -> EnvConfig:
    return replace(gen_config, horizon=int(horizon))


def make_context_sampler(gen_config: EnvConfig) -> Callable[[int, object], np.ndarray]:
    """The known context law of the environment, as a ``(n, rng) -> (n, d_x)`` sampler."""
    if isinstance(gen_config, DiscreteMixtureEnv):
        n_ctx = gen_config.n_contexts

        def sample_discrete(n: int, rng) -> np.ndarray:
            g = rng.generator if hasattr(rng, "generator") else rng
            idx = g.integers(0, n_ctx, size=n)
            out = np.zeros((n, n_ctx))
            out[np.arange(n), idx] = 1.0
            return out

        return sample_discrete
    if isinstance(gen_config, SyntheticDgpConfig):
        d_x = gen_config.d_x

        def sample_gaussian(n: int, rng) -> np.ndarray:
            g = rng.generator if hasattr(rng, "generator") else rng
            return g.standard_normal((n, d_x))

        return sample_gaussian
    raise ConfigError(f"unknown generator config {type(gen_config).__name__}")


def resample_outcome_table(gen_config: EnvConfig, task: TaskInstance, rng) -> np.ndarray:
    """Fresh outcome table for fixed (prior features, contexts).

    Redraws the latent structure (coefficients or mixture components) and the
    outcomes, conditioning on the task's prior information and contexts.
    Used by plug-in entropy estimation.
    """
    gen = rng.generator if hasattr(rng, "generator") else rng
    T, A = task.horizon, task.n_actions
    if isinstance(gen_config, DiscreteMixtureEnv):
        env = gen_config
        ctx_idx = env.context_indices(task.contexts)
        if env.z_reveals_component:
            components = np.argmax(task.prior_info.per_action_features, axis=1)
        else:
            components = gen.choice(env.n_components, size=A, p=env.weights)
        probs = env.theta[components[None, :], ctx_idx[:, None], np.arange(A)[None, :]]
        return (gen.random((T, A)) < probs).astype(np.float64)
    if isinstance(gen_config, SyntheticDgpConfig):
        coefs = draw_arm_coefficients(gen_config, gen, A)
        probs = np.empty((T, A))
        for a in range(A):
            z_feat, x_feat = _map_inputs(gen_config, task.prior_info.features_for(a), task.contexts)
            probs[:, a] = logistic(outcome_logit(gen_config, coefs[a], z_feat, x_feat))
        return (gen.random((T, A)) < probs).astype(np.float64)
    raise ConfigError(f"unknown generator config {type(gen_config).__name__}")


# ---------------------------------------------------------------------------
# Task serialization (regression-test fixture format)
# ---------------------------------------------------------------------------


def task_to_json(task: TaskInstance) -> dict:
    """JSON-ready layout: prior feature rows, context rows, outcome rows."""
    return {
        "prior_info": task.prior_info.per_action_features.tolist(),
        "contexts": task.contexts.tolist(),
        "outcomes": task.outcomes.tolist(),
        "horizon": task.horizon,
    }


def task_from_json(payload: dict) -> TaskInstance:
    task = TaskInstance(
        PriorInfo(np.asarray(payload["prior_info"], dtype=np.float64)),
        np.asarray(payload["contexts"], dtype=np.float64),
        np.asarray(payload["outcomes"], dtype=np.float64),
    )
    if task.horizon != payload.get("horizon", task.horizon):
        raise ContractError("serialized horizon does not match context length")
    return task
