"""One-step predictive sequence models with explicit in-context state.

A sequence model assigns a Bernoulli parameter to the next outcome of one
action given that arm's prior features, the accumulated per-arm state, and
the current context.  State is passed in and out of every call, so models
are immutable after construction and safe to share across concurrent task
simulations.

Implementations:

* ``ExactMixtureModel`` — wraps a :class:`~genban.env.DiscreteMixtureEnv`
  and computes the environment's exact predictive (the ground-truth model).
* ``BetaBernoulliModel`` — context-blind conjugate model; exchangeable by
  construction and useful as a correctness fixture for generation.
* ``MlpSeqModel`` — an MLP head over ``concat(z, x, ridge-inverse summary
  stats, scaled count)``; the trainable model.
* ``ConstantModel`` — fixed predictive, handy as a deliberately misspecified
  reference.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .core import ConfigError, ContractError
from .env import DiscreteMixtureEnv, posterior_log_weights

PROB_FLOOR = 1e-12


def ridge_inverse(mat: np.ndarray, eps: float) -> np.ndarray:
    """Inverse of ``mat + eps * I`` for PSD ``mat`` and ``eps > 0``."""
    if eps <= 0:
        raise ConfigError("ridge epsilon must be positive")
    mat = np.asarray(mat, dtype=np.float64)
    return np.linalg.inv(mat + eps * np.eye(mat.shape[0]))


def clamp_probability(p: float) -> float:
    return min(max(float(p), PROB_FLOOR), 1.0 - PROB_FLOOR)


class SequenceModel:
    """Interface: per-arm state init, one-step prediction, state update."""

    # Subclasses with an exact joint sampler set this and override
    # sample_arm_outcomes; everything else goes through the sequential chain.
    supports_bulk_sampling = False

    def init_state(self, arm: int, z: np.ndarray | None = None):
        raise NotImplementedError

    def predict(self, z: np.ndarray, state, x: np.ndarray) -> float:
        raise NotImplementedError

    def update_state(self, state, x: np.ndarray, y: float):
        raise NotImplementedError

    def predict_batch(self, zs, states, xs) -> np.ndarray:
        """Predictives for several independent arms at once."""
        return np.array(
            [self.predict(z, s, x) for z, s, x in zip(zs, states, xs)], dtype=np.float64
        )

    def fold_state(self, arm: int, z: np.ndarray, xs, ys):
        """State after observing ``(xs[k], ys[k])`` in order, from a fresh state."""
        state = self.init_state(arm, z)
        for x, y in zip(xs, ys):
            state = self.update_state(state, x, y)
        return state

    def sample_arm_outcomes(self, z: np.ndarray, state, xs, rng) -> np.ndarray:
        """Sample a joint outcome sequence at contexts ``xs`` from the predictive chain."""
        gen = rng.generator if hasattr(rng, "generator") else rng
        ys = np.empty(len(xs), dtype=np.float64)
        for i, x in enumerate(xs):
            p = self.predict(z, state, x)
            ys[i] = 1.0 if gen.random() < p else 0.0
            state = self.update_state(state, x, ys[i])
        return ys


class ConstantModel(SequenceModel):
    """Predicts a fixed Bernoulli parameter regardless of history."""

    def __init__(self, p: float = 0.5):
        if not 0.0 < p < 1.0:
            raise ConfigError("constant predictive must lie strictly in (0, 1)")
        self.p = float(p)

    def init_state(self, arm: int, z=None):
        return None

    def predict(self, z, state, x) -> float:
        return self.p

    def update_state(self, state, x, y):
        return None


class BetaBernoulliModel(SequenceModel):
    """Conjugate exchangeable model with per-arm pseudo-counts.

    State is the ``(alpha, beta)`` pair; the predictive is the posterior mean
    ``alpha / (alpha + beta)``.  Outcomes must be binary.
    """

    def __init__(self, alpha0: float = 1.0, beta0: float = 1.0):
        if alpha0 <= 0 or beta0 <= 0:
            raise ConfigError("pseudo-counts must be positive")
        self.alpha0 = float(alpha0)
        self.beta0 = float(beta0)

    def init_state(self, arm: int, z=None):
        return (self.alpha0, self.beta0)

    def predict(self, z, state, x) -> float:
        alpha, beta = state
        return alpha / (alpha + beta)

    def update_state(self, state, x, y):
        y = float(y)
        if y not in (0.0, 1.0):
            raise ContractError("BetaBernoulliModel requires binary outcomes")
        alpha, beta = state
        return (alpha + y, beta + (1.0 - y))


class ExactMixtureModel(SequenceModel):
    """The true one-step predictive of a discrete mixture environment.

    State is ``(arm, log posterior weights over components)``.  When the
    environment's prior features reveal the latent component, the prior
    weights concentrate on it.
    """

    supports_bulk_sampling = True

    def __init__(self, env: DiscreteMixtureEnv):
        self.env = env
        self._log_prior = np.log(env.weights)
        self._log_theta = np.log(env.theta)
        self._log_comp = np.log1p(-env.theta)

    def init_state(self, arm: int, z: np.ndarray | None = None):
        if self.env.z_reveals_component and z is not None:
            logw = np.full(self.env.n_components, -np.inf)
            logw[int(np.argmax(z))] = 0.0
        else:
            logw = self._log_prior.copy()
        return (int(arm), logw)

    def _posterior(self, logw: np.ndarray) -> np.ndarray:
        w = np.exp(logw - logw.max())
        return w / w.sum()

    @staticmethod
    def _ctx_index(x) -> int:
        # Contexts reaching the model come from the environment's one-hot
        # support; boundary APIs (exact_predictive, context_index) validate.
        return int(np.argmax(x))

    def predict(self, z, state, x) -> float:
        arm, logw = state
        x_idx = self._ctx_index(x)
        return float(self._posterior(logw) @ self.env.theta[:, x_idx, arm])

    def update_state(self, state, x, y):
        arm, logw = state
        x_idx = self._ctx_index(x)
        table = self._log_theta if y > 0.5 else self._log_comp
        return (arm, logw + table[:, x_idx, arm])

    def state_from_history(self, arm: int, arm_history, z=None):
        prior = self.init_state(arm, z)[1]
        return (arm, posterior_log_weights(self.env, arm, arm_history, prior))

    def sample_arm_outcomes(self, z, state, xs, rng) -> np.ndarray:
        """Ancestral sampler: draw a component, then outcomes i.i.d. given it.

        Law-identical to the sequential predictive chain by the chain rule
        for mixtures; verified against the sequential path by enumeration in
        the tests.
        """
        gen = rng.generator if hasattr(rng, "generator") else rng
        arm, logw = state
        if len(xs) == 0:
            return np.empty(0, dtype=np.float64)
        w = self._posterior(logw)
        m = int(gen.choice(self.env.n_components, p=w))
        idx = np.argmax(np.asarray(xs), axis=1)  # one-hot support validated upstream
        probs = self.env.theta[m, idx, arm]
        return (gen.random(len(idx)) < probs).astype(np.float64)


# ---------------------------------------------------------------------------
# MLP sequence model with ridge summary statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryState:
    """Per-arm running statistics: sum of x xᵀ, sum of x·y, observation count.

    Folding observations one at a time produces bit-identical sums to any
    batch construction that accumulates in the same order.
    """

    s_xx: np.ndarray
    s_xy: np.ndarray
    count: int


class MlpSeqModel(SequenceModel):
    """MLP head over the arm features, context, and ridge summary statistics.

    The input row is ``concat(z, x, (count+1) * (XᵀX + eps I)^{-1} flattened,
    XᵀY / (count+1), count/scale)``.  Three hidden layers of rectifier units
    (subgradient 0 at 0) feed a scalar logit passed through the logistic map,
    so the output is a valid Bernoulli parameter.  The count feature
    disambiguates history lengths that the two ridge statistics alone
    confound early in a sequence; the count-dependent rescaling keeps every
    feature O(1) along the whole sequence (raw XᵀY grows linearly and the
    raw inverse decays like 1/count, which stalls plain SGD), and is an
    invertible reparametrization of the same statistics given the count.
    """

    def __init__(
        self,
        d_z: int,
        d_x: int,
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        ridge_eps: float = 1.0,
        count_scale: float = 500.0,
    ):
        if ridge_eps <= 0:
            raise ConfigError("ridge epsilon must be positive")
        if count_scale <= 0:
            raise ConfigError("count scale must be positive")
        self.d_z = int(d_z)
        self.d_x = int(d_x)
        self.ridge_eps = float(ridge_eps)
        self.count_scale = float(count_scale)
        self._eps_eye = self.ridge_eps * np.eye(self.d_x)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        expect = self.input_dim
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != expect or b.shape != (w.shape[1],):
                raise ConfigError(f"layer {i} has inconsistent shape {w.shape}")
            expect = w.shape[1]
        if expect != 1:
            raise ConfigError("final layer must produce a scalar logit")

    @property
    def input_dim(self) -> int:
        return self.d_z + self.d_x + self.d_x * self.d_x + self.d_x + 1

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @classmethod
    def initialize(
        cls,
        d_z: int,
        d_x: int,
        rng,
        hidden: tuple[int, ...] = (100, 100, 100),
        ridge_eps: float = 1.0,
        count_scale: float = 500.0,
    ) -> "MlpSeqModel":
        """Uniform Glorot weights in ±sqrt(6 / (fan_in + fan_out)), zero biases."""
        gen = rng.generator if hasattr(rng, "generator") else rng
        dims = [d_z + d_x + d_x * d_x + d_x + 1, *hidden, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(gen.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(d_z, d_x, weights, biases, ridge_eps, count_scale)

    def copy(self) -> "MlpSeqModel":
        return MlpSeqModel(
            self.d_z,
            self.d_x,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.ridge_eps,
            self.count_scale,
        )

    # -- state ----------------------------------------------------------------

    def init_state(self, arm: int, z=None) -> SummaryState:
        return SummaryState(np.zeros((self.d_x, self.d_x)), np.zeros(self.d_x), 0)

    def update_state(self, state: SummaryState, x, y) -> SummaryState:
        x = np.asarray(x, dtype=np.float64)
        return SummaryState(
            state.s_xx + x[:, None] * x[None, :], state.s_xy + x * float(y), state.count + 1
        )

    def feature_row(self, z, state: SummaryState, x) -> np.ndarray:
        inv = np.linalg.inv(state.s_xx + self._eps_eye)
        scale = state.count + 1.0
        return np.concatenate(
            [
                np.asarray(z, dtype=np.float64),
                np.asarray(x, dtype=np.float64),
                (inv * scale).ravel(),
                state.s_xy / scale,
                [state.count / self.count_scale],
            ]
        )

    def assemble_sequence_inputs(self, z, xs, ys) -> np.ndarray:
        """Feature rows for every step of a sequence, using strict-prefix statistics.

        Prefix sums are built with a cumulative sum, which accumulates in the
        same element order as repeated ``update_state`` calls, so the
        statistics match the incremental fold exactly.
        """
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        L, d = xs.shape
        outer = xs[:, :, None] * xs[:, None, :]
        s_xx = np.zeros((L, d, d))
        np.cumsum(outer[:-1], axis=0, out=s_xx[1:])
        s_xy = np.zeros((L, d))
        np.cumsum(xs[:-1] * ys[:-1, None], axis=0, out=s_xy[1:])
        inv = np.linalg.inv(s_xx + self.ridge_eps * np.eye(d))
        scale = np.arange(L, dtype=np.float64) + 1.0
        rows = np.empty((L, self.input_dim))
        rows[:, : self.d_z] = np.asarray(z, dtype=np.float64)
        rows[:, self.d_z : self.d_z + d] = xs
        rows[:, self.d_z + d : self.d_z + d + d * d] = (
            inv * scale[:, None, None]
        ).reshape(L, d * d)
        rows[:, self.d_z + d + d * d : self.d_z + d + d * d + d] = s_xy / scale[:, None]
        rows[:, -1] = np.arange(L) / self.count_scale
        return rows

    # -- forward / backward -----------------------------------------------------

    def forward_logits(self, inputs: np.ndarray, want_cache: bool = False):
        h = inputs if inputs.ndim == 2 else np.atleast_2d(inputs)
        cache = [h]
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
            if want_cache:
                cache.append(h)
        logits = h[:, 0]
        if want_cache:
            return logits, cache
        return logits

    def predict_proba(self, inputs: np.ndarray) -> np.ndarray:
        p = expit(self.forward_logits(inputs))
        return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)

    def predict(self, z, state, x) -> float:
        row = self.feature_row(z, state, x)
        return float(self.predict_proba(row[None, :])[0])

    def predict_batch(self, zs, states, xs) -> np.ndarray:
        k = len(states)
        d = self.d_x
        stacked = np.stack([s.s_xx for s in states])
        inv = np.linalg.inv(stacked + self._eps_eye)
        scales = np.array([s.count + 1.0 for s in states])
        rows = np.empty((k, self.input_dim))
        rows[:, : self.d_z] = np.asarray(zs, dtype=np.float64)
        rows[:, self.d_z : self.d_z + d] = np.asarray(xs, dtype=np.float64)
        rows[:, self.d_z + d : self.d_z + d + d * d] = (
            inv * scales[:, None, None]
        ).reshape(k, d * d)
        rows[:, self.d_z + d + d * d : self.d_z + d + d * d + d] = (
            np.stack([s.s_xy for s in states]) / scales[:, None]
        )
        rows[:, -1] = (scales - 1.0) / self.count_scale
        return self.predict_proba(rows)

    def loss_and_grads(self, inputs: np.ndarray, targets: np.ndarray, reduction: str = "mean"):
        """Binary cross-entropy and its gradients with respect to all parameters.

        ``reduction`` is ``"mean"`` (per-row average, used by SGD) or
        ``"sum"`` (matches a sequence negative log-likelihood).
        """
        targets = np.asarray(targets, dtype=np.float64)
        with np.errstate(over="ignore", invalid="ignore"):
            logits, cache = self.forward_logits(inputs, want_cache=True)
            probs = np.clip(expit(logits), PROB_FLOOR, 1.0 - PROB_FLOOR)
            n = inputs.shape[0]
            loss = float(
                -np.sum(targets * np.log(probs) + (1.0 - targets) * np.log1p(-probs))
            )
            dlogits = probs - targets
            if reduction == "mean":
                loss /= n
                dlogits = dlogits / n
            elif reduction != "sum":
                raise ConfigError(f"unknown reduction {reduction!r}")
            grads_w = [np.empty_like(w) for w in self.weights]
            grads_b = [np.empty_like(b) for b in self.biases]
            delta = dlogits[:, None]
            for i in range(len(self.weights) - 1, -1, -1):
                grads_w[i] = cache[i].T @ delta
                grads_b[i] = delta.sum(axis=0)
                if i > 0:
                    delta = (delta @ self.weights[i].T) * (cache[i] > 0.0)
        return loss, grads_w, grads_b

    def input_gradient(self, row: np.ndarray) -> np.ndarray:
        """Gradient of the scalar logit with respect to one input row."""
        _, cache = self.forward_logits(row[None, :], want_cache=True)
        delta = np.ones((1, 1))
        for i in range(len(self.weights) - 1, 0, -1):
            delta = (delta @ self.weights[i].T) * (cache[i] > 0.0)
        return (delta @ self.weights[0].T)[0]

    # -- flat parameter access ---------------------------------------------------

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate(
            [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        )

    def set_parameter_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for w in self.weights:
            w[...] = vec[pos : pos + w.size].reshape(w.shape)
            pos += w.size
        for b in self.biases:
            b[...] = vec[pos : pos + b.size].reshape(b.shape)
            pos += b.size
        if pos != vec.size:
            raise ConfigError("parameter vector has wrong length")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

MODEL_FORMAT_VERSION = 1


def model_to_json(model: MlpSeqModel, meta: dict | None = None) -> dict:
    """Versioned header plus a base64 little-endian float64 weight blob."""
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for arr in (*model.weights, *model.biases)
    )
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "mlp",
        "d_z": model.d_z,
        "d_x": model.d_x,
        "hidden": list(model.hidden_sizes),
        "ridge_eps": model.ridge_eps,
        "count_scale": model.count_scale,
        "weights_b64": base64.b64encode(blob).decode("ascii"),
        "meta": meta or {},
    }


def model_from_json(payload: dict) -> MlpSeqModel:
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ConfigError(f"unsupported model format {payload.get('format_version')!r}")
    if payload.get("kind") != "mlp":
        raise ConfigError(f"unsupported model kind {payload.get('kind')!r}")
    d_z, d_x = int(payload["d_z"]), int(payload["d_x"])
    hidden = [int(h) for h in payload["hidden"]]
    dims = [d_z + d_x + d_x * d_x + d_x + 1, *hidden, 1]
    flat = np.frombuffer(base64.b64decode(payload["weights_b64"]), dtype="<f8").astype(
        np.float64
    )
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
    for fan_out in dims[1:]:
        biases.append(flat[pos : pos + fan_out].copy())
        pos += fan_out
    if pos != flat.size:
        raise ConfigError("weight blob has wrong length")
    return MlpSeqModel(
        d_z, d_x, weights, biases, float(payload["ridge_eps"]), float(payload["count_scale"])
    )


def save_model(model: MlpSeqModel, path, meta: dict | None = None) -> None:
    Path(path).write_text(
        json.dumps(model_to_json(model, meta), sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )


def load_model(path) -> MlpSeqModel:
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
