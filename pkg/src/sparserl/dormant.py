"""Sensitivity-guided dormant-neuron scoring and resets.

A neuron's score is its mean output change under a small input
perturbation, normalized by the mean change over all active neurons of
the same layer; active neurons scoring at or below the threshold tau are
dormant and have their *trainable* incident parameters reset to their
stored initial values. Frozen parameters are never touched.

Also provides the activation-magnitude variant used as an ablation, and
an input-group sensitivity report for diagnosing which observation groups
a policy ignores.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .masked_net import AdamOptimizer, MaskedNetwork, TaskContext


class DormantError(ValueError):
    pass


@dataclass(frozen=True)
class DormantConfig:
    tau: float = 0.6
    reset_interval: int = 8_000
    sample_batch: int = 256
    delta_scale: float = 0.01
    state_window: int = 1000
    variant: str = "sensitivity"  # "sensitivity" | "redo" | "off"

    def __post_init__(self):
        if self.tau < 0:
            raise DormantError("tau must be >= 0")
        if self.reset_interval <= 0:
            raise DormantError("reset_interval must be > 0")
        if self.variant not in ("sensitivity", "redo", "off"):
            raise DormantError(f"unknown dormant variant: {self.variant!r}")


class StateWindow:
    """Ring buffer of the most recent observations."""

    def __init__(self, capacity: int):
        self._buf: deque = deque(maxlen=capacity)

    def push(self, state: np.ndarray):
        self._buf.append(np.asarray(state, dtype=float))

    def __len__(self):
        return len(self._buf)

    def mean(self) -> np.ndarray:
        if not self._buf:
            raise DormantError("state window is empty")
        return np.mean(np.stack(self._buf), axis=0)


def compute_delta(history: StateWindow, delta_scale: float = 0.01) -> np.ndarray:
    """Perturbation vector: delta_scale times the mean recent state."""
    return delta_scale * history.mean()


@dataclass
class SensitivityReport:
    scores: list[np.ndarray]       # per hidden layer; NaN at inactive neurons
    degenerate: list[bool]         # layer had zero total sensitivity
    batch_size: int
    variant: str = "sensitivity"


def _normalized_scores(raw: list[np.ndarray], ctx: TaskContext,
                       batch_size: int, variant: str) -> SensitivityReport:
    scores = []
    degenerate = []
    for l, numer in enumerate(raw):
        phi = ctx.bias_active[l]  # phi for hidden layer l+1
        layer_scores = np.full(numer.shape, np.nan)
        denom = numer[phi].mean() if phi.any() else 0.0
        if denom <= 0.0:
            layer_scores[phi] = 0.0
            degenerate.append(True)
        else:
            layer_scores[phi] = numer[phi] / denom
            degenerate.append(False)
        scores.append(layer_scores)
    return SensitivityReport(scores=scores, degenerate=degenerate,
                             batch_size=batch_size, variant=variant)


def sensitivity_scores(net: MaskedNetwork, ctx: TaskContext,
                       states: np.ndarray, delta: np.ndarray) -> SensitivityReport:
    """Scores from mean |y_i(s) - y_i(s + delta)| over the batch,
    normalized so active-neuron scores average to 1 per layer."""
    states = np.atleast_2d(np.asarray(states))
    if states.shape[0] < 1:
        raise DormantError("need at least one state")
    _, cache_a = net.forward(states, ctx)
    _, cache_b = net.forward(states + np.asarray(delta), ctx)
    raw = [
        np.abs(cache_a.post[l] - cache_b.post[l]).mean(axis=0)
        for l in range(1, net.num_layers)  # hidden layers only
    ]
    return _normalized_scores(raw, ctx, states.shape[0], "sensitivity")


def redo_scores(net: MaskedNetwork, ctx: TaskContext,
                states: np.ndarray) -> SensitivityReport:
    """Ablation variant: activation magnitude instead of perturbation
    response, same normalization."""
    states = np.atleast_2d(np.asarray(states))
    if states.shape[0] < 1:
        raise DormantError("need at least one state")
    _, cache = net.forward(states, ctx)
    raw = [np.abs(cache.post[l]).mean(axis=0)
           for l in range(1, net.num_layers)]
    return _normalized_scores(raw, ctx, states.shape[0], "redo")


def _has_trainable_incident(ctx: TaskContext, layer: int, neuron: int) -> bool:
    # layer is the hidden-layer index (1-based); weight list index layer-1
    # holds incoming weights, index layer the outgoing ones.
    if ctx.train_mask[layer - 1][neuron, :].any():
        return True
    if ctx.train_mask[layer][:, neuron].any():
        return True
    return bool(ctx.bias_train[layer - 1][neuron])


def find_dormant(report: SensitivityReport, tau: float,
                 ctx: TaskContext) -> list[tuple[int, int]]:
    """Active neurons with score <= tau that still have trainable incident
    parameters. Degenerate layers (no sensitivity signal at all, e.g.
    during warm-up) are skipped entirely so nothing is reset there."""
    dormant = []
    for idx, layer_scores in enumerate(report.scores):
        if report.degenerate[idx]:
            continue
        layer = idx + 1
        phi = ctx.bias_active[idx]
        for i in np.where(phi & (np.nan_to_num(layer_scores, nan=np.inf) <= tau))[0]:
            if _has_trainable_incident(ctx, layer, int(i)):
                dormant.append((layer, int(i)))
    return dormant


def reset_dormant(net: MaskedNetwork, ctx: TaskContext,
                  dormant: list[tuple[int, int]],
                  optimizer: AdamOptimizer | None = None) -> int:
    """Reset every trainable parameter incident to a dormant neuron to its
    stored initial value, leaving frozen coordinates bit-identical.
    Returns the number of parameter coordinates reset."""
    init_W, init_b = net.init_store
    count = 0
    for layer, i in dormant:
        lin = layer - 1   # incoming weight matrix index
        lout = layer      # outgoing weight matrix index
        in_cols = np.where(ctx.train_mask[lin][i, :])[0]
        net.W[lin][i, in_cols] = init_W[lin][i, in_cols]
        out_rows = np.where(ctx.train_mask[lout][:, i])[0]
        net.W[lout][out_rows, i] = init_W[lout][out_rows, i]
        count += len(in_cols) + len(out_rows)
        bias_reset = None
        if ctx.bias_train[lin][i]:
            net.b[lin][i] = init_b[lin][i]
            bias_reset = [i]
            count += 1
        if optimizer is not None:
            optimizer.zero_moments_at(lin, rows=np.full(len(in_cols), i),
                                      cols=in_cols, bias_rows=bias_reset)
            optimizer.zero_moments_at(lout, rows=out_rows,
                                      cols=np.full(len(out_rows), i))
    return count


def input_group_sensitivity(act_fn, states: np.ndarray,
                            groups: dict[str, np.ndarray],
                            delta_scale: float = 0.01) -> dict[str, float]:
    """Mean absolute action change when perturbing one observation group.

    act_fn maps a batch of states to a batch of actions. Each group's
    coordinates are shifted by delta_scale * |mean state| (that group
    only); groups may overlap but must be non-empty.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    base = np.asarray(act_fn(states))
    delta = delta_scale * np.abs(states.mean(axis=0))
    out = {}
    for name, idx in groups.items():
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            raise DormantError(f"group {name!r} is empty")
        perturbed = states.copy()
        perturbed[:, idx] += delta[idx]
        out[name] = float(np.abs(np.asarray(act_fn(perturbed)) - base).mean())
    return out
