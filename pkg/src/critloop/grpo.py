"""Group-relative policy optimization on a tabular softmax policy.

Rewards are compared within sampled groups rather than against a learned
value baseline: each group's rewards are standardized (population std) to
advantages, the policy improves a clipped importance-ratio surrogate, and a
low-variance estimator of KL against a frozen reference policy regularizes
the update.  The policy here is a contexts x actions logit table, so the
gradient is available in closed form and every step is checkable against
finite differences.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import IO, Optional, Sequence, Union

import numpy as np

_TINY = 1e-300  # denominator floor; softmax probs can underflow to 0.0


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Standardize rewards within one group: (r - mean) / population std.

    A zero-variance group (all rewards equal) has no preference signal and
    yields exactly zero advantages rather than 0/0.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a group needs at least two rewards")
    if r.max() == r.min():
        # constant groups produce exact zeros; the mean of identical floats
        # can round, so testing std == 0 would miss them
        return np.zeros_like(r)
    return (r - r.mean()) / r.std()  # population std, ddof=0


def kl_penalty(p_ref, p_cur):
    """Per-sample KL estimate k3 = ratio - ln(ratio) - 1, ratio = p_ref/p_cur.

    Nonnegative, zero iff the probabilities agree; needs only the taken
    action's probability under both policies.  Accepts scalars or arrays.
    """
    p_ref = np.asarray(p_ref, dtype=float)
    p_cur = np.asarray(p_cur, dtype=float)
    if np.any(p_ref <= 0.0) or np.any(p_cur <= 0.0) or np.any(p_ref > 1.0) or np.any(p_cur > 1.0):
        raise ValueError("probabilities must lie in (0, 1]")
    ratio = p_ref / p_cur
    result = ratio - np.log(ratio) - 1.0
    return float(result) if result.ndim == 0 else result


def clipped_surrogate(ratio, advantage, eps: float):
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A), elementwise."""
    if eps <= 0.0 or eps >= 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    result = np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)
    return float(result) if result.ndim == 0 else result


@dataclass(frozen=True)
class GrpoHyper:
    """Training hyperparameters; defaults follow the reference recipe."""

    group_size: int = 8
    clip_eps: float = 0.2
    kl_coeff: float = 0.001
    learning_rate: float = 1e-5
    train_batch_size: int = 1024
    mini_batch_size: int = 256
    temperature: float = 1.0
    epochs: int = 2

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must be in (0, 1)")
        if self.kl_coeff < 0.0:
            raise ValueError("kl_coeff must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.train_batch_size < self.group_size:
            raise ValueError("train_batch_size must hold at least one group")
        if self.mini_batch_size < self.group_size:
            raise ValueError("mini_batch_size must hold at least one group")
        if self.train_batch_size % self.mini_batch_size != 0:
            raise ValueError("train_batch_size must be a multiple of mini_batch_size")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class SampledGroup:
    """One group of same-context samples drawn from the behavior policy."""

    context: int
    actions: tuple[int, ...]
    rewards: tuple[float, ...]
    old_probs: tuple[float, ...]

    def __post_init__(self) -> None:
        n = len(self.actions)
        if n < 2:
            raise ValueError("a group needs at least two samples")
        if len(self.rewards) != n or len(self.old_probs) != n:
            raise ValueError("actions, rewards, old_probs must have equal length")
        if any(p <= 0.0 or p > 1.0 for p in self.old_probs):
            raise ValueError("old_probs must lie in (0, 1]")
        if self.context < 0:
            raise ValueError("context must be >= 0")


def softmax_policy(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of logits / temperature."""
    if temperature <= 0.0:
        raise ValueError("temperature must be > 0")
    z = np.asarray(logits, dtype=float) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _flatten_groups(groups: Sequence[SampledGroup]):
    if not groups:
        raise ValueError("no groups given")
    sizes = {len(g.actions) for g in groups}
    if len(sizes) != 1:
        raise ValueError(f"groups must share one size, got sizes {sorted(sizes)}")
    contexts = np.concatenate([np.full(len(g.actions), g.context) for g in groups])
    actions = np.concatenate([np.asarray(g.actions) for g in groups])
    old_probs = np.concatenate([np.asarray(g.old_probs) for g in groups])
    advantages = np.concatenate([group_advantages(g.rewards) for g in groups])
    return contexts, actions, old_probs, advantages


def _evaluate(
    logits: np.ndarray,
    groups: Sequence[SampledGroup],
    ref_logits: np.ndarray,
    hyper: GrpoHyper,
):
    """Shared forward pass: per-sample terms plus the scatter indices."""
    logits = np.asarray(logits, dtype=float)
    ref_logits = np.asarray(ref_logits, dtype=float)
    if logits.shape != ref_logits.shape:
        raise ValueError("logits and ref_logits must have the same shape")
    contexts, actions, old_probs, advantages = _flatten_groups(groups)
    if contexts.max() >= logits.shape[0] or actions.max() >= logits.shape[1]:
        raise ValueError("group indices outside the policy table")

    probs = softmax_policy(logits, hyper.temperature)
    ref_probs = softmax_policy(ref_logits, hyper.temperature)
    p_cur = np.maximum(probs[contexts, actions], _TINY)
    p_ref = np.maximum(ref_probs[contexts, actions], _TINY)

    ratio = p_cur / old_probs
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * advantages
    surrogate = np.minimum(unclipped, clipped)
    ratio_ref = p_ref / p_cur
    kl = ratio_ref - np.log(ratio_ref) - 1.0

    objective = float(np.mean(surrogate - hyper.kl_coeff * kl))
    return {
        "contexts": contexts,
        "actions": actions,
        "old_probs": old_probs,
        "advantages": advantages,
        "probs": probs,
        "p_cur": p_cur,
        "ratio_ref": ratio_ref,
        "unclipped_active": unclipped <= clipped,
        "strictly_clipped": clipped < unclipped,
        "kl": kl,
        "objective": objective,
    }


def grpo_objective(
    logits: np.ndarray,
    groups: Sequence[SampledGroup],
    ref_logits: np.ndarray,
    hyper: GrpoHyper,
) -> float:
    """Mean over samples of clipped surrogate minus kl_coeff times KL."""
    return _evaluate(logits, groups, ref_logits, hyper)["objective"]


@dataclass(frozen=True)
class StepResult:
    logits: np.ndarray
    objective: float
    mean_kl: float
    clip_fraction: float


def grpo_step(
    logits: np.ndarray,
    groups: Sequence[SampledGroup],
    ref_logits: np.ndarray,
    hyper: GrpoHyper,
) -> StepResult:
    """One exact gradient-ascent step on the GRPO objective.

    The clipped branch contributes zero gradient; through the surrogate the
    taken action's probability moves by advantage / behavior prob when the
    unclipped branch is active, and the KL term pulls toward the reference
    with d/dp [k3] = (1 - p_ref/p) / p.  Diagnostics (objective, mean KL,
    fraction of strictly clipped samples) describe the input logits.
    """
    state = _evaluate(logits, groups, ref_logits, hyper)
    n = state["p_cur"].size
    d_surr = np.where(
        state["unclipped_active"], state["advantages"] / state["old_probs"], 0.0
    )
    d_kl = (1.0 - state["ratio_ref"]) / state["p_cur"]
    d_obj_dp = (d_surr - hyper.kl_coeff * d_kl) / n

    # chain through softmax: dp_a/dz_t = p_a (delta_at - p_t) / temperature
    coeff = d_obj_dp * state["p_cur"] / hyper.temperature
    grad = np.zeros_like(np.asarray(logits, dtype=float))
    np.add.at(grad, (state["contexts"], state["actions"]), coeff)
    row_totals = np.zeros(grad.shape[0])
    np.add.at(row_totals, state["contexts"], coeff)
    grad -= row_totals[:, None] * state["probs"]

    return StepResult(
        logits=np.asarray(logits, dtype=float) + hyper.learning_rate * grad,
        objective=state["objective"],
        mean_kl=float(np.mean(state["kl"])),
        clip_fraction=float(np.mean(state["strictly_clipped"])),
    )


# -- toy environment and training loop ----------------------------------------

@dataclass(frozen=True)
class ToyEnv:
    """Bernoulli bandit per context: reward_probs[context, action]."""

    reward_probs: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        matrix = np.asarray(self.reward_probs, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 2:
            raise ValueError("reward_probs must be a contexts x actions matrix")
        if np.any(matrix < 0.0) or np.any(matrix > 1.0):
            raise ValueError("reward probabilities must lie in [0, 1]")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.reward_probs, dtype=float)

    @property
    def n_contexts(self) -> int:
        return len(self.reward_probs)

    @property
    def n_actions(self) -> int:
        return len(self.reward_probs[0])


def expected_reward(logits: np.ndarray, env: ToyEnv, temperature: float = 1.0) -> float:
    """Exact mean-over-contexts expected reward of the softmax policy."""
    probs = softmax_policy(logits, temperature)
    if probs.shape != env.matrix.shape:
        raise ValueError("policy table and environment shapes differ")
    return float(np.mean(np.sum(probs * env.matrix, axis=1)))


def sample_groups(
    logits: np.ndarray,
    env: ToyEnv,
    n_groups: int,
    hyper: GrpoHyper,
    rng: np.random.Generator,
) -> list[SampledGroup]:
    """Draw ``n_groups`` groups, contexts round-robin, actions from the policy."""
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    probs = softmax_policy(logits, hyper.temperature)
    contexts = np.arange(n_groups) % env.n_contexts
    # inverse-CDF sampling, vectorized over (group, sample)
    cdf = np.cumsum(probs[contexts], axis=1)
    uniforms = rng.random((n_groups, hyper.group_size))
    actions = (uniforms[:, :, None] > cdf[:, None, :]).sum(axis=2)
    reward_draw = rng.random((n_groups, hyper.group_size))
    rewards = (reward_draw < env.matrix[contexts[:, None], actions]).astype(float)
    old_probs = probs[contexts[:, None], actions]
    return [
        SampledGroup(
            context=int(contexts[g]),
            actions=tuple(int(a) for a in actions[g]),
            rewards=tuple(float(r) for r in rewards[g]),
            old_probs=tuple(float(p) for p in old_probs[g]),
        )
        for g in range(n_groups)
    ]


@dataclass(frozen=True)
class TrainPoint:
    step: int
    expected_reward: float
    objective: float
    mean_kl: float
    clip_fraction: float


@dataclass(frozen=True)
class TrainResult:
    logits: np.ndarray
    curve: tuple[TrainPoint, ...]


def train_toy(
    env: ToyEnv,
    hyper: GrpoHyper,
    steps: int,
    seed: int,
    initial_logits: Optional[np.ndarray] = None,
) -> TrainResult:
    """GRPO on a toy bandit table; bit-reproducible for a given seed.

    Each step samples a fresh batch from the current policy, then makes
    ``epochs`` passes over its mini-batches, updating against the sampled
    behavior probabilities with KL measured to the frozen starting policy.
    The recorded expected reward is computed exactly, not estimated.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if initial_logits is None:
        logits = np.zeros((env.n_contexts, env.n_actions))
    else:
        logits = np.array(initial_logits, dtype=float)
        if logits.shape != (env.n_contexts, env.n_actions):
            raise ValueError("initial_logits shape must match the environment")
    ref_logits = logits.copy()
    rng = np.random.default_rng(seed)

    groups_per_batch = hyper.train_batch_size // hyper.group_size
    groups_per_mini = hyper.mini_batch_size // hyper.group_size
    curve = [
        TrainPoint(
            step=0,
            expected_reward=expected_reward(logits, env, hyper.temperature),
            objective=0.0,
            mean_kl=0.0,
            clip_fraction=0.0,
        )
    ]
    for step in range(1, steps + 1):
        batch = sample_groups(logits, env, groups_per_batch, hyper, rng)
        objectives: list[float] = []
        kls: list[float] = []
        clip_fractions: list[float] = []
        for _ in range(hyper.epochs):
            for start in range(0, groups_per_batch, groups_per_mini):
                mini = batch[start : start + groups_per_mini]
                result = grpo_step(logits, mini, ref_logits, hyper)
                logits = result.logits
                objectives.append(result.objective)
                kls.append(result.mean_kl)
                clip_fractions.append(result.clip_fraction)
        curve.append(
            TrainPoint(
                step=step,
                expected_reward=expected_reward(logits, env, hyper.temperature),
                objective=float(np.mean(objectives)),
                mean_kl=float(np.mean(kls)),
                clip_fraction=float(np.mean(clip_fractions)),
            )
        )
    return TrainResult(logits=logits, curve=tuple(curve))


def export_training_csv(
    curve: Sequence[TrainPoint], destination: Union[str, os.PathLike, IO[str]]
) -> None:
    """Write a training curve as CSV, one row per recorded step."""
    if not curve:
        raise ValueError("refusing to export an empty training curve")
    header = ["step", "expected_reward", "objective", "mean_kl", "clip_fraction"]
    rows = [
        (p.step, p.expected_reward, p.objective, p.mean_kl, p.clip_fraction) for p in curve
    ]
    if hasattr(destination, "write"):
        writer = csv.writer(destination)
        writer.writerow(header)
        writer.writerows(rows)
        return
    path = os.fspath(destination)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write training curve to {path}: {exc}") from exc
