"""Critic training, the Bernoulli mask policy, and PPO alignment.

Pipeline: train the predictor on squared error (the critic), copy it into an
actor whose mask policy gates the global information vector, then optimize
the policy with clipped-ratio PPO on a per-day reward penalized by the KL
log-ratio to the frozen initial policy. Everything is plain numpy with
hand-written gradients; a single seed makes a run bit-reproducible.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .backtest import rank_ic
from .embeddings import EmbeddingSeries, vector_for_prediction
from .model import (LgModelParams, clone_params, get_param,
                    load_checkpoint_with_extras, loss_and_grads, predict,
                    save_checkpoint, set_param, trainable_keys, zero_grads)
from .panel import FeaturePanel, ReturnPanel


class TrainingError(RuntimeError):
    pass


@dataclass
class SupervisedConfig:
    epochs: int = 100
    batch_days: int = 32
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ValueError("learning_rate must be > 0 and epochs >= 1")


@dataclass
class ScrlConfig:
    theta: float = 0.1
    steps_per_rollout: int = 2048
    batch_size: int = 128
    learning_rate: float = 0.00025
    reward_scale: float = 1e-4
    clip_epsilon: float = 0.2
    ppo_epochs: int = 4
    reward_kind: str = "neg_mse"  # or "rank_ic"
    seed: int = 0
    rollouts: int = 1
    participants: int = 1  # parallel data collectors; 1 = deterministic mode
    # co-training rate for the actor's prediction heads; None = learning_rate.
    # Keep well below the critic's rate when starting from a converged critic.
    head_learning_rate: float | None = None

    def __post_init__(self):
        if self.theta < 0 or self.learning_rate <= 0 or self.reward_scale <= 0:
            raise ValueError("bad ScrlConfig: theta >= 0, learning_rate/reward_scale > 0")
        if self.reward_kind not in ("neg_mse", "rank_ic"):
            raise ValueError(f"unknown reward_kind {self.reward_kind!r}")


@dataclass
class MaskPolicy:
    """Element-wise Bernoulli feature selector driven by the day's embedding."""

    w_map: np.ndarray  # (d_llm, m)
    b_map: np.ndarray  # (m,)
    mode: str = "sample"  # or "expectation"


@dataclass
class TrajectoryStep:
    date: str
    state: np.ndarray
    action: np.ndarray
    log_prob_actor: float
    log_prob_ref: float
    raw_reward: float
    total_reward: float
    kl: float


@dataclass
class Trajectory:
    steps: list[TrajectoryStep] = field(default_factory=list)


@dataclass
class Actor:
    params: LgModelParams
    policy: MaskPolicy


class Adam:
    """Minimal Adam over a dict of arrays; state keyed by parameter name."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, values: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m[:] = self.beta1 * m + (1 - self.beta1) * g
            v[:] = self.beta2 * v + (1 - self.beta2) * g**2
            mh = m / (1 - self.beta1**self.t)
            vh = v / (1 - self.beta2**self.t)
            out[k] = values[k] - self.lr * mh / (np.sqrt(vh) + self.eps)
        return out


def _mean_mse(params, panel, returns, embeddings, days):
    total = 0.0
    for t in days:
        v = embeddings.vectors[t] if (embeddings is not None and params.variant == "lg_llm") else None
        pred = predict(params, panel.features[t], v_llm=v)
        total += float(np.mean((pred - returns.returns[t]) ** 2))
    return total / len(days)


def train_critic(panel: FeaturePanel, returns: ReturnPanel, params: LgModelParams,
                 cfg: SupervisedConfig, embeddings: EmbeddingSeries | None = None):
    """Minibatch Adam on squared error; returns (trained params, per-epoch MSE)."""
    if params.variant not in ("local", "lg_stock", "lg_llm"):
        raise TrainingError(f"train_critic supports supervised variants, not {params.variant!r}")
    if params.variant == "lg_llm" and embeddings is None:
        raise TrainingError("variant lg_llm needs an embedding series")
    params = clone_params(params)
    keys = trainable_keys(params.variant)
    opt = Adam(cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    T = len(panel.calendar)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(T)
        epoch_loss = 0.0
        for start in range(0, T, cfg.batch_days):
            batch = order[start:start + cfg.batch_days]
            acc = {k: 0.0 for k in keys}
            for t in batch:
                v = embeddings.vectors[t] if params.variant == "lg_llm" else None
                loss, grads, _ = loss_and_grads(params, panel.features[t], returns.returns[t], v_llm=v)
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite loss on date index {t}; training diverged")
                epoch_loss += loss
                for k in keys:
                    acc[k] = acc[k] + grads[k]
            values = {k: get_param(params, k) for k in keys}
            mean_grads = {k: acc[k] / len(batch) for k in keys}
            for k, arr in opt.step(values, mean_grads).items():
                set_param(params, k, arr)
        losses.append(epoch_loss / T)
    return params, losses


def init_actor(critic: LgModelParams, d_llm: int, seed: int) -> tuple[Actor, MaskPolicy]:
    """Copy the trained critic into an actor and attach a near-neutral mask policy.

    w_map starts tiny so every mask probability is ~0.5; the returned reference
    is a frozen deep copy of that initial policy, so the KL log-ratio is exactly
    zero until the first actor update.
    """
    if critic.variant != "lg_stock":
        raise TrainingError("actor must be initialized from a critic trained as lg_stock")
    params = clone_params(critic)
    params.variant = "scrl_lg"
    rng = np.random.default_rng(seed)
    m = params.m
    w_map = rng.uniform(-1e-3, 1e-3, size=(d_llm, m)) / np.sqrt(d_llm)
    policy = MaskPolicy(w_map, np.zeros(m))
    reference = copy.deepcopy(policy)
    return Actor(params, policy), reference


def save_actor(actor: Actor, path) -> None:
    save_checkpoint(actor.params, path,
                    extras={"policy.w_map": actor.policy.w_map,
                            "policy.b_map": actor.policy.b_map})


def load_actor(path) -> Actor:
    params, extras = load_checkpoint_with_extras(path)
    if "policy.w_map" not in extras:
        raise TrainingError(f"{path}: checkpoint carries no mask policy")
    return Actor(params, MaskPolicy(extras["policy.w_map"], extras["policy.b_map"]))


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


def _log_sigmoid(z):
    return np.where(z >= 0, -np.log1p(np.exp(-z)), z - np.log1p(np.exp(z)))


def policy_logits(policy: MaskPolicy, v_llm: np.ndarray) -> np.ndarray:
    v_llm = np.asarray(v_llm, dtype=np.float64)
    if v_llm.shape != (policy.w_map.shape[0],):
        raise TrainingError(f"v_llm length {v_llm.shape} != d_llm {policy.w_map.shape[0]}")
    return v_llm @ policy.w_map + policy.b_map


def policy_distribution(policy: MaskPolicy, v_llm: np.ndarray) -> np.ndarray:
    """Per-feature keep probabilities sigma(w_map . v_llm + b_map)."""
    return _sigmoid(policy_logits(policy, v_llm))


def sample_mask(policy: MaskPolicy, v_llm: np.ndarray, rng) -> np.ndarray:
    p = policy_distribution(policy, v_llm)
    if policy.mode == "expectation":
        return p
    return (rng.random(p.shape[0]) < p).astype(np.float64)


def deterministic_mask(policy: MaskPolicy, v_llm: np.ndarray) -> np.ndarray:
    """Expectation-mode probabilities thresholded at 0.5; used for evaluation."""
    return (policy_distribution(policy, v_llm) >= 0.5).astype(np.float64)


def mask_log_prob(policy: MaskPolicy, v_llm: np.ndarray, mask: np.ndarray) -> float:
    z = policy_logits(policy, v_llm)
    return float(np.sum(mask * _log_sigmoid(z) + (1.0 - mask) * _log_sigmoid(-z)))


def kl_term(actor_log_prob: float, ref_log_prob: float) -> float:
    """Per-sample log-ratio log pi_actor(y|x) - log pi_ref(y|x) for the same y."""
    if not (np.isfinite(actor_log_prob) and np.isfinite(ref_log_prob)):
        raise TrainingError("non-finite log-probability in kl_term")
    return actor_log_prob - ref_log_prob


def step_reward(predictions: np.ndarray, realized: np.ndarray, cfg: ScrlConfig,
                kl: float) -> tuple[float, float]:
    """One day's (raw, total) reward; total = raw - theta * kl."""
    predictions = np.asarray(predictions, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    if cfg.reward_kind == "neg_mse":
        raw = cfg.reward_scale * float(-np.mean((predictions - realized) ** 2))
    else:
        if predictions.shape[0] < 2:
            raise TrainingError("rank_ic reward needs n >= 2")
        rho = rank_ic(predictions, realized)
        if rho is None:
            raise TrainingError("rank_ic reward undefined: constant predictions")
        raw = cfg.reward_scale * rho
    return raw, raw - cfg.theta * kl


def surrogate_and_grads(policy: MaskPolicy, states: np.ndarray, masks: np.ndarray,
                        old_log_probs: np.ndarray, advantages: np.ndarray,
                        clip_epsilon: float):
    """Clipped PPO surrogate mean(min(rho*A, clip(rho)*A)) and its policy gradients."""
    Z = states @ policy.w_map + policy.b_map
    logp = np.sum(masks * _log_sigmoid(Z) + (1.0 - masks) * _log_sigmoid(-Z), axis=1)
    rho = np.exp(logp - old_log_probs)
    unclipped = rho * advantages
    clipped = np.clip(rho, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    surrogate = float(np.mean(np.minimum(unclipped, clipped)))
    if not np.isfinite(surrogate):
        raise TrainingError("non-finite PPO surrogate; training diverged")
    B = states.shape[0]
    # gradient flows only where the unclipped branch attains the min
    g = np.where(unclipped <= clipped, unclipped, 0.0) / B
    dZ = g[:, None] * (masks - _sigmoid(Z))
    grads = {"w_map": states.T @ dZ, "b_map": dZ.sum(axis=0)}
    return surrogate, grads


def _embedding_for(embeddings: EmbeddingSeries, date: str) -> np.ndarray:
    return vector_for_prediction(embeddings, date)


def _eval_rank_ic(actor: Actor, panel, returns, embeddings, days) -> float:
    vals = []
    for t in days:
        v = _embedding_for(embeddings, panel.calendar.dates[t])
        mask = deterministic_mask(actor.policy, v)
        pred = predict(actor.params, panel.features[t], mask=mask)
        rho = rank_ic(pred, returns.returns[t])
        if rho is not None:
            vals.append(rho)
    return float(np.mean(vals)) if vals else float("nan")


def ppo_align(actor: Actor, reference: MaskPolicy, critic: LgModelParams,
              panel: FeaturePanel, returns: ReturnPanel, embeddings: EmbeddingSeries,
              cfg: ScrlConfig):
    """Optimize the mask policy with PPO over fixed-length day rollouts.

    Each rollout walks consecutive trading days (wrapping at the calendar end),
    samples a mask per day, scores the masked prediction, and penalizes the KL
    log-ratio to the frozen reference. Updates maximize the clipped surrogate;
    the actor's prediction heads take squared-error steps on the same
    mini-batches with their sampled masks held fixed. Returns (actor,
    diagnostics, trajectories) with one diagnostics row per rollout step.
    """
    if len(panel.calendar) == 0:
        raise TrainingError("empty calendar")
    rng = np.random.default_rng(cfg.seed)
    policy_opt = Adam(cfg.learning_rate)
    pred_opt = Adam(cfg.head_learning_rate if cfg.head_learning_rate is not None
                    else cfg.learning_rate)
    pred_keys = trainable_keys("scrl_lg")
    T = len(panel.calendar)
    day_ptr = 0
    baseline_mean, baseline_count = 0.0, 0
    diagnostics: list[dict] = []
    trajectories: list[Trajectory] = []
    global_step = 0

    for _ in range(cfg.rollouts):
        traj = Trajectory()
        n_steps = min(cfg.steps_per_rollout, T)
        for _ in range(n_steps):
            t = day_ptr % T
            day_ptr += 1
            date = panel.calendar.dates[t]
            v = _embedding_for(embeddings, date)
            mask = sample_mask(actor.policy, v, rng)
            lpa = mask_log_prob(actor.policy, v, mask)
            lpr = mask_log_prob(reference, v, mask)
            kl = kl_term(lpa, lpr)
            pred = predict(actor.params, panel.features[t], mask=mask)
            raw, total = step_reward(pred, returns.returns[t], cfg, kl)
            traj.steps.append(TrajectoryStep(date, v, mask, lpa, lpr, raw, total, kl))
        trajectories.append(traj)

        totals = np.array([s.total_reward for s in traj.steps])
        adv = np.empty_like(totals)
        for i, x in enumerate(totals):
            adv[i] = x - baseline_mean if baseline_count else 0.0
            baseline_count += 1
            baseline_mean += (x - baseline_mean) / baseline_count
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        states = np.array([s.state for s in traj.steps])
        masks = np.array([s.action for s in traj.steps])
        old_logp = np.array([s.log_prob_actor for s in traj.steps])
        day_idx = [panel.calendar.index(s.date) for s in traj.steps]

        first_surrogate = None
        for _ in range(cfg.ppo_epochs):
            order = rng.permutation(n_steps)
            for start in range(0, n_steps, cfg.batch_size):
                mb = order[start:start + cfg.batch_size]
                surr, pgrads = surrogate_and_grads(
                    actor.policy, states[mb], masks[mb], old_logp[mb], adv[mb], cfg.clip_epsilon)
                if first_surrogate is None:
                    first_surrogate = surr
                values = {"w_map": actor.policy.w_map, "b_map": actor.policy.b_map}
                ascent = {k: -g for k, g in pgrads.items()}  # Adam minimizes
                new = policy_opt.step(values, ascent)
                actor.policy.w_map, actor.policy.b_map = new["w_map"], new["b_map"]

                acc = {k: 0.0 for k in pred_keys}
                for j in mb:
                    t = day_idx[j]
                    loss, grads, _ = loss_and_grads(
                        actor.params, panel.features[t], returns.returns[t], mask=masks[j])
                    if not np.isfinite(loss):
                        raise TrainingError("non-finite supervised loss during alignment")
                    for k in pred_keys:
                        acc[k] = acc[k] + grads[k]
                pvals = {k: get_param(actor.params, k) for k in pred_keys}
                mean_grads = {k: acc[k] / len(mb) for k in pred_keys}
                for k, arr in pred_opt.step(pvals, mean_grads).items():
                    set_param(actor.params, k, arr)

        val_ic = _eval_rank_ic(actor, panel, returns, embeddings, sorted(set(day_idx)))
        for s in traj.steps:
            diagnostics.append({
                "step": global_step, "date": s.date, "raw_reward": s.raw_reward,
                "kl": s.kl, "total_reward": s.total_reward,
                "surrogate": first_surrogate, "validation_rank_ic": val_ic,
            })
            global_step += 1
    return actor, diagnostics, trajectories


def scrl_loop(actor: Actor, reference: MaskPolicy, critic: LgModelParams,
              train_panel: FeaturePanel, train_returns: ReturnPanel,
              val_panel: FeaturePanel, val_returns: ReturnPanel,
              embeddings_loader, cfg: ScrlConfig, rounds: int):
    """Alternate alignment with embedding re-ingestion, with early stopping.

    embeddings_loader is a zero-argument callable returning a fresh
    EmbeddingSeries; an external process may refresh the underlying file
    between rounds. Stops early when validation mean rank IC fails to improve
    for 2 consecutive rounds. Returns (actor, per-round reports).
    """
    if rounds < 1:
        raise TrainingError("rounds must be >= 1")
    reports = []
    best = -np.inf
    stale = 0
    for rnd in range(rounds):
        embeddings = embeddings_loader()
        actor, diagnostics, _ = ppo_align(actor, reference, critic,
                                          train_panel, train_returns, embeddings, cfg)
        val_ic = _eval_rank_ic(actor, val_panel, val_returns, embeddings,
                               range(len(val_panel.calendar)))
        reports.append({"round": rnd, "validation_rank_ic": val_ic,
                        "diagnostics": diagnostics})
        if val_ic > best:
            best, stale = val_ic, 0
        else:
            stale += 1
            if stale >= 2:
                break
    return actor, reports
