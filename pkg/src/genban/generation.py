"""Posterior sampling by imputing the missing entries of the outcome table.

Given a history, every `(timestep, action)` cell whose outcome was not
observed is filled in by sampling autoregressively from a sequence model,
with each arm processed under an ordering that places its observed outcomes
(ascending in time) before its missing ones (also ascending in time).
Observed entries are copied verbatim.  Arms are conditionally independent,
so their chains never interact; the implementation interleaves them per
generation step only to batch model evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, ContractError, History, TaskInstance


@dataclass(frozen=True)
class MissingnessMask:
    """Per action, the timesteps whose outcome is absent from the history."""

    missing: tuple[tuple[int, ...], ...]
    observed: tuple[tuple[int, ...], ...]
    horizon: int

    @classmethod
    def from_history(cls, h: History, horizon: int) -> "MissingnessMask":
        n_actions = h.prior_info.n_actions
        if len(h.steps) > horizon:
            raise ContractError("history longer than the horizon")
        observed: list[list[int]] = [[] for _ in range(n_actions)]
        for t, step in enumerate(h.steps):
            observed[step.action].append(t)
        missing = []
        for obs in observed:
            seen = set(obs)
            missing.append(tuple(t for t in range(horizon) if t not in seen))
        return cls(tuple(missing), tuple(tuple(obs) for obs in observed), horizon)

    def is_missing(self, timestep: int, action: int) -> bool:
        return timestep in self.missing[action]


@dataclass(frozen=True)
class ArmOrdering:
    """Total order over timesteps for one arm: observed first, then missing.

    Within each block, timesteps ascend; so ``i`` precedes ``j`` whenever
    ``i`` is observed and ``j`` is missing, and otherwise when ``i < j``
    within the same block.
    """

    order: tuple[int, ...]
    n_observed: int

    @classmethod
    def for_arm(cls, mask: MissingnessMask, action: int) -> "ArmOrdering":
        obs = mask.observed[action]
        mis = mask.missing[action]
        return cls(tuple(obs) + tuple(mis), len(obs))

    def precedes(self, i: int, j: int) -> bool:
        return self.order.index(i) < self.order.index(j)


def impute_task(
    model,
    h: History,
    horizon: int,
    rng,
    contexts: np.ndarray | None = None,
    context_sampler=None,
    arm_states: list | None = None,
) -> TaskInstance:
    """Draw one completed task table conditioned on the history.

    Contexts: entries recorded in the history (including the pending current
    context) are always kept; the remaining future contexts are taken from
    ``contexts`` when the evaluation protocol fixes the whole sequence
    up front, and otherwise sampled from ``context_sampler(n, rng)``, the
    known context law.

    ``arm_states`` optionally supplies each arm's model state after folding
    its observed pairs in time order (callers that track state incrementally
    avoid an O(t) refold per decision); when omitted the fold is performed
    here.  Within each arm, missing outcomes are sampled along the arm
    ordering, feeding each draw back into the state before the next.  Random
    draws are consumed one generation round at a time in ascending arm
    order, so the procedure is deterministic for a given stream.
    """
    n_actions = h.prior_info.n_actions
    t_obs = len(h.steps)
    if h.current_context is None and t_obs < horizon:
        raise ContractError("history has no recorded current context")

    # Assemble the full context sequence.
    known: list[np.ndarray] = [step.context for step in h.steps]
    if h.current_context is not None:
        known.append(h.current_context)
    n_known = len(known)
    if n_known > horizon:
        raise ContractError("history extends beyond the horizon")
    if contexts is not None:
        contexts = np.asarray(contexts, dtype=np.float64)
        if contexts.shape[0] != horizon:
            raise ContractError(f"fixed contexts must have length {horizon}")
        for t, x in enumerate(known):
            if not np.array_equal(contexts[t], x):
                raise ContractError("fixed contexts disagree with the history")
        full_contexts = contexts
    else:
        if n_known < horizon and context_sampler is None:
            raise ConfigError("future contexts required: pass contexts= or context_sampler=")
        future = (
            context_sampler(horizon - n_known, rng)
            if n_known < horizon
            else np.empty((0, known[0].shape[0] if known else 0))
        )
        if known:
            full_contexts = np.vstack([np.stack(known), np.asarray(future)])
        else:
            full_contexts = np.asarray(future)

    mask = MissingnessMask.from_history(h, horizon)
    table = np.empty((horizon, n_actions), dtype=np.float64)
    for t, step in enumerate(h.steps):
        table[t, step.action] = step.outcome

    feats = h.prior_info.per_action_features
    if arm_states is None:
        states = []
        for a in range(n_actions):
            obs_idx = mask.observed[a]
            states.append(
                model.fold_state(
                    a,
                    feats[a],
                    [h.steps[t].context for t in obs_idx],
                    [h.steps[t].outcome for t in obs_idx],
                )
            )
    else:
        if len(arm_states) != n_actions:
            raise ContractError("arm_states must supply one state per action")
        states = list(arm_states)

    if model.supports_bulk_sampling:
        for a in range(n_actions):
            mis = list(mask.missing[a])
            if not mis:
                continue
            ys = model.sample_arm_outcomes(feats[a], states[a], full_contexts[mis], rng)
            table[mis, a] = ys
    else:
        pending = [list(mask.missing[a]) for a in range(n_actions)]
        cursor = [0] * n_actions
        gen = rng.generator if hasattr(rng, "generator") else rng
        while True:
            active = [a for a in range(n_actions) if cursor[a] < len(pending[a])]
            if not active:
                break
            xs = [full_contexts[pending[a][cursor[a]]] for a in active]
            zs = [feats[a] for a in active]
            probs = model.predict_batch(zs, [states[a] for a in active], xs)
            draws = gen.random(len(active))
            for k, a in enumerate(active):
                t = pending[a][cursor[a]]
                y = 1.0 if draws[k] < probs[k] else 0.0
                table[t, a] = y
                states[a] = model.update_state(states[a], xs[k], y)
                cursor[a] += 1

    return TaskInstance(h.prior_info, full_contexts, table)
