"""Soft actor-critic training on the masked actor, one task at a time.

The actor is the shared masked network and survives across tasks; twin
critics and their targets are plain dense networks, re-initialized at
every task boundary (the replay buffer is cleared too). Actor gradients
flow through the masked backward pass, so frozen coordinates never move.
All gradients here are written out by hand against the masked network's
reverse mode; the squashed-Gaussian policy uses the standard tanh
log-density correction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .dormant import (
    DormantConfig,
    StateWindow,
    compute_delta,
    find_dormant,
    redo_scores,
    reset_dormant,
    sensitivity_scores,
)
from .masked_net import AdamOptimizer, MaskedNetwork, TaskContext, dense_context

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG2PI = float(np.log(2.0 * np.pi))


class RlError(RuntimeError):
    pass


@dataclass(frozen=True)
class SacConfig:
    discount: float = 0.99
    target_entropy: float | None = None  # None -> -action_dim
    target_interp: float = 5e-3
    batch_size: int = 256
    buffer_capacity: int = 60_000
    exploratory_steps: int = 2_000
    updates_per_step: int = 1
    # floor on the learned temperature: stops the entropy term from
    # collapsing to ~0 before the (sparse-ish) success signal has been
    # found, which otherwise freezes the policy in a no-op local optimum
    alpha_min: float = 0.02
    # 1e-3 (not the more customary 3e-4) is what lets SAC crack the task
    # within desk budgets: at 3e-4 the critic propagates the sparse success
    # bonus too slowly and some seeds settle into a do-not-touch optimum
    # before ever rating pushes highly. Measured 3/3 seeds >= 0.9 by 36k
    # steps at 1e-3 vs 1/3 at 3e-4 on the unobstructed task.
    lr: float = 1e-3
    actor_hidden: tuple[int, ...] = (128, 128)
    critic_hidden: tuple[int, ...] = (128, 128)
    eval_interval: int = 2_000
    eval_episodes: int = 10

    def __post_init__(self):
        if not (0.0 <= self.discount < 1.0):
            raise RlError("discount must be in [0, 1)")
        if self.batch_size > self.buffer_capacity:
            raise RlError("batch size cannot exceed buffer capacity")


def _derive_seed(*key) -> int:
    digest = hashlib.blake2b(
        ":".join(str(k) for k in key).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int, seed: int):
        self.capacity = capacity
        self.size = 0
        self._next = 0
        self.rng = np.random.default_rng(seed)
        self.s = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.a = np.zeros((capacity, act_dim), dtype=np.float32)
        self.r = np.zeros(capacity, dtype=np.float32)
        self.s2 = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)

    def add(self, s, a, r, s2, done: bool):
        i = self._next
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int):
        # uniform without replacement within a batch
        idx = self.rng.choice(self.size, size=batch, replace=False)
        return (self.s[idx], self.a[idx], self.r[idx],
                self.s2[idx], self.done[idx])

    def sample_states(self, batch: int) -> np.ndarray:
        idx = self.rng.choice(self.size, size=min(batch, self.size),
                              replace=False)
        return self.s[idx]


class SacAgent:
    """Masked actor plus per-task critics, temperature and replay state."""

    def __init__(self, obs_dim: int, act_dim: int, cfg: SacConfig, seed: int):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.cfg = cfg
        self.seed = seed
        self.actor = MaskedNetwork(
            [obs_dim, *cfg.actor_hidden, 2 * act_dim],
            seed=_derive_seed("actor-init", seed))
        self.actor.snapshot_init()
        self.target_entropy = (cfg.target_entropy if cfg.target_entropy is not None
                               else -float(act_dim))
        self.skipped_updates = 0
        # per-task state, populated by begin_task
        self.ctx: TaskContext | None = None
        self.critics = None
        self.targets = None
        self.buffer: ReplayBuffer | None = None

    @property
    def actor_widths(self) -> list[int]:
        return self.actor.widths

    def begin_task(self, ctx: TaskContext, task_seed: int):
        """Fresh critics, buffer, optimizers and RNG streams for one task."""
        cfg = self.cfg
        self.ctx = ctx
        critic_widths = [self.obs_dim + self.act_dim, *cfg.critic_hidden, 1]
        self.critics = [
            MaskedNetwork(critic_widths, seed=_derive_seed("critic", task_seed, i))
            for i in (1, 2)]
        self.targets = [self._clone(c) for c in self.critics]
        self.critic_ctx = dense_context(critic_widths)
        self.critic_opts = [AdamOptimizer(c, lr=cfg.lr) for c in self.critics]
        self.actor_opt = AdamOptimizer(self.actor, lr=cfg.lr)
        self.log_alpha = 0.0
        self._alpha_m = 0.0
        self._alpha_v = 0.0
        self._alpha_t = 0
        self.buffer = ReplayBuffer(cfg.buffer_capacity, self.obs_dim,
                                   self.act_dim, _derive_seed("buffer", task_seed))
        self.action_rng = np.random.default_rng(_derive_seed("explore", task_seed))

    @staticmethod
    def _clone(net: MaskedNetwork) -> MaskedNetwork:
        out = MaskedNetwork(net.widths, seed=0, dtype=net.dtype)
        out.W = [w.copy() for w in net.W]
        out.b = [b.copy() for b in net.b]
        return out

    # -- policy ------------------------------------------------------------

    def _policy_params(self, states: np.ndarray, ctx: TaskContext):
        out, cache = self.actor.forward(states, ctx)
        if not np.all(np.isfinite(out)):
            raise RlError(
                f"non-finite actor output (min={np.nanmin(out)}, "
                f"max={np.nanmax(out)})")
        mean = out[..., :self.act_dim]
        log_std_raw = out[..., self.act_dim:]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, log_std_raw, cache

    def select_action(self, state: np.ndarray, mode: str = "stochastic",
                      ctx: TaskContext | None = None) -> np.ndarray:
        ctx = ctx if ctx is not None else self.ctx
        mean, log_std, _, _ = self._policy_params(np.asarray(state), ctx)
        if mode == "deterministic":
            return np.tanh(mean)
        eps = self.action_rng.standard_normal(mean.shape)
        return np.tanh(mean + np.exp(log_std) * eps)

    def _sample_with_logp(self, states: np.ndarray, ctx: TaskContext, rng):
        mean, log_std, log_std_raw, cache = self._policy_params(states, ctx)
        std = np.exp(log_std)
        eps = rng.standard_normal(mean.shape)
        u = mean + std * eps
        a = np.tanh(u)
        logp = (-0.5 * eps ** 2 - log_std - 0.5 * LOG2PI
                - np.log(1.0 - a ** 2 + 1e-6)).sum(axis=1)
        return a, logp, (mean, log_std, log_std_raw, std, eps, cache)

    # -- critics -----------------------------------------------------------

    def _q(self, net: MaskedNetwork, states, actions):
        x = np.concatenate([states, actions], axis=1)
        out, cache = net.forward(x, self.critic_ctx)
        return out[:, 0], cache

    # -- updates -----------------------------------------------------------

    def sac_update(self, batch) -> dict:
        cfg = self.cfg
        ctx = self.ctx
        s, a, r, s2, done = batch
        B = s.shape[0]
        alpha = float(np.exp(self.log_alpha))

        # critic targets
        a2, logp2, _ = self._sample_with_logp(s2, ctx, self.action_rng)
        q1t, _ = self._q(self.targets[0], s2, a2)
        q2t, _ = self._q(self.targets[1], s2, a2)
        y = r + cfg.discount * (1.0 - done) * (np.minimum(q1t, q2t) - alpha * logp2)

        critic_losses = []
        for net, opt in zip(self.critics, self.critic_opts):
            q, cache = self._q(net, s, a)
            err = q - y
            critic_losses.append(float(np.mean(err ** 2)))
            gout = (2.0 * err / B)[:, None].astype(np.float32)
            grads = net.backward(self.critic_ctx, cache, gout)
            if not opt.apply_update(net, grads):
                self.skipped_updates += 1

        # actor: loss = mean(alpha * logp - min_i Q_i(s, a_new))
        a_new, logp, aux = self._sample_with_logp(s, ctx, self.action_rng)
        mean, log_std, log_std_raw, std, eps, actor_cache = aux
        q1, c1 = self._q(self.critics[0], s, a_new)
        q2, c2 = self._q(self.critics[1], s, a_new)
        qmin = np.minimum(q1, q2)
        actor_loss = float(np.mean(alpha * logp - qmin))

        # dQmin/da via the input gradient of whichever critic is the min
        pick1 = (q1 <= q2).astype(np.float32)
        dq_da = np.zeros_like(a_new)
        for net, cache, pick in ((self.critics[0], c1, pick1),
                                 (self.critics[1], c2, 1.0 - pick1)):
            gout = (-pick / B)[:, None].astype(np.float32)
            g = net.backward(self.critic_ctx, cache, gout, need_input_grad=True)
            dq_da += g.dx[:, self.obs_dim:]

        # dloss/da: entropy term alpha * 2a/(1-a^2+eps) plus the Q term
        dl_da = (alpha / B) * (2.0 * a_new / (1.0 - a_new ** 2 + 1e-6)) + dq_da
        da_du = 1.0 - a_new ** 2
        g_mean = dl_da * da_du
        # -log_std term of logp contributes -alpha/B directly
        g_logstd = dl_da * da_du * std * eps - alpha / B
        # gradient is blocked where the clamp is active
        g_logstd = g_logstd * ((log_std_raw > LOG_STD_MIN) &
                               (log_std_raw < LOG_STD_MAX))
        gout = np.concatenate([g_mean, g_logstd], axis=1).astype(np.float32)
        actor_grads = self.actor.backward(ctx, actor_cache, gout)
        if not self.actor_opt.apply_update(self.actor, actor_grads):
            self.skipped_updates += 1

        # temperature: descend L = -log_alpha * mean(logp + target_entropy)
        alpha_grad = -float(np.mean(logp + self.target_entropy))
        self._alpha_step(alpha_grad)

        # soft target update
        rho = cfg.target_interp
        for net, tgt in zip(self.critics, self.targets):
            for l in range(len(net.W)):
                tgt.W[l] += rho * (net.W[l] - tgt.W[l])
                tgt.b[l] += rho * (net.b[l] - tgt.b[l])

        return {
            "critic_loss": float(np.mean(critic_losses)),
            "actor_loss": actor_loss,
            "entropy": float(-np.mean(logp)),
            "alpha": alpha,
        }

    def _alpha_step(self, grad: float):
        if not np.isfinite(grad):
            self.skipped_updates += 1
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        self._alpha_t += 1
        self._alpha_m = b1 * self._alpha_m + (1 - b1) * grad
        self._alpha_v = b2 * self._alpha_v + (1 - b2) * grad * grad
        mh = self._alpha_m / (1 - b1 ** self._alpha_t)
        vh = self._alpha_v / (1 - b2 ** self._alpha_t)
        self.log_alpha -= self.cfg.lr * mh / (np.sqrt(vh) + eps)
        self.log_alpha = max(self.log_alpha, float(np.log(self.cfg.alpha_min)))


def evaluate(agent: SacAgent, ctx: TaskContext, env, episodes: int,
             eval_seed: int = 0) -> float:
    """Deterministic-policy success rate over seeded episodes; a pure
    function of (params, ctx, env seed), so re-evaluations are bit-exact.
    The environment's state is restored afterwards, so evaluating on the
    training env mid-episode leaves training unperturbed."""
    saved = env.get_state()
    try:
        successes = 0
        for ep in range(episodes):
            obs = env.reset(episode_seed=_derive_seed("eval", eval_seed, ep))
            for _ in range(env.spec.horizon):
                action = agent.select_action(obs, mode="deterministic", ctx=ctx)
                obs, _, done, success = env.step(action)
                if done:
                    successes += int(success)
                    break
    finally:
        env.set_state(saved)
    return successes / episodes


@dataclass
class TaskResult:
    steps: int
    eval_curve: list[tuple[int, float]]   # (task-local step, success rate)
    reset_events: list[tuple[int, int]]   # (step, coords reset)
    losses: list[dict]


def train_task(agent: SacAgent, env, ctx: TaskContext,
               dormant_cfg: DormantConfig, steps: int, task_seed: int,
               eval_hook=None, log_every: int = 500) -> TaskResult:
    """Algorithm inner loop for one task: warm-up with uniform random
    actions, then one SAC update per environment step, with periodic
    dormant scoring/resets and evaluation checkpoints."""
    cfg = agent.cfg
    agent.begin_task(ctx, task_seed)
    window = StateWindow(dormant_cfg.state_window)
    obs = env.reset()
    window.push(obs)
    eval_curve = []
    reset_events = []
    losses = []
    for t in range(1, steps + 1):
        if t <= cfg.exploratory_steps:
            action = agent.action_rng.uniform(-1.0, 1.0, agent.act_dim)
        else:
            action = agent.select_action(obs, mode="stochastic")
        nobs, reward, done, success = env.step(action)
        # horizon timeouts are not true terminals: bootstrap through them
        agent.buffer.add(obs, action, reward, nobs, success)
        obs = env.reset() if done else nobs
        window.push(obs)

        if t > cfg.exploratory_steps and agent.buffer.size >= cfg.batch_size:
            for _ in range(cfg.updates_per_step):
                summary = agent.sac_update(agent.buffer.sample(cfg.batch_size))
            if t % log_every == 0:
                losses.append({"step": t, **summary})

        if (dormant_cfg.variant != "off" and t % dormant_cfg.reset_interval == 0
                and agent.buffer.size > 0):
            states = agent.buffer.sample_states(dormant_cfg.sample_batch)
            if dormant_cfg.variant == "redo":
                report = redo_scores(agent.actor, ctx, states)
            else:
                delta = compute_delta(window, dormant_cfg.delta_scale)
                report = sensitivity_scores(agent.actor, ctx, states, delta)
            dormant = find_dormant(report, dormant_cfg.tau, ctx)
            n = reset_dormant(agent.actor, ctx, dormant, agent.actor_opt)
            reset_events.append((t, n))

        if t % cfg.eval_interval == 0 or t == steps:
            if eval_hook is not None:
                rate = eval_hook(t)
            else:
                rate = evaluate(agent, ctx, env, cfg.eval_episodes,
                                eval_seed=task_seed)
            if eval_curve and eval_curve[-1][0] == t:
                eval_curve[-1] = (t, rate)
            else:
                eval_curve.append((t, rate))
    return TaskResult(steps=steps, eval_curve=eval_curve,
                      reset_events=reset_events, losses=losses)
