"""Multilayer affine network with fine-grained frozen/trainable masking.

The forward pass splits each layer's weight contribution into a trainable
part (coordinates not yet frozen) and a frozen forward-transfer part
scaled by the trade-off coefficient beta:

    y_hat = ((1-Psi) * Pt * W) y  +  beta * (Psi * Pt * W) y  +  b * phi

where Pt is the task's fine-grained parameter mask, Psi the cumulative
frozen matrix from earlier tasks, and phi the layer's neuron mask. Hidden
layers apply LeakyReLU (slope 0.01), the output layer is identity.

Gradients are exact reverse-mode gradients of this computation; parameter
gradients are then zeroed at frozen coordinates (gradient signal still
propagates *through* frozen terms to earlier layers). Adam moments at
frozen coordinates stay zero, so frozen parameters are bit-identical
across any number of updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import MaskSet
from .sparse_coding import NeuronMask

LEAKY_SLOPE = 0.01


class MaskedNetError(ValueError):
    pass


@dataclass
class GradientBuffer:
    dW: list[np.ndarray]
    db: list[np.ndarray]
    dx: np.ndarray | None = None  # gradient w.r.t. the network input

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.dW) and \
            all(np.all(np.isfinite(g)) for g in self.db)


class TaskContext:
    """Per-task view of the masks a forward/backward pass needs.

    Built once per task (or per evaluation of an earlier task) from the
    task's mask set, the frozen snapshot taken *before* that task trained,
    and the neuron-level frozen vector for biases.
    """

    def __init__(self, mask_set: MaskSet, frozen: list[np.ndarray],
                 neuron_frozen: list[np.ndarray], beta: float,
                 dtype=np.float32):
        if not (0.0 <= beta <= 1.0):
            raise MaskedNetError(f"beta must be in [0, 1], got {beta}")
        self.mask_set = mask_set
        self.beta = float(beta)
        param_masks = mask_set.param_masks()
        L = len(param_masks)
        if len(frozen) != L or len(neuron_frozen) != L:
            raise MaskedNetError("frozen snapshot layer count mismatch")
        self.weight_scale = []   # Pt * ((1-Psi) + beta*Psi), float
        self.train_mask = []     # (1-Psi) * Pt, bool — trainable weight coords
        self.bias_active = []    # phi per layer, bool
        self.bias_train = []     # phi & ~neuron_frozen, bool
        self.frozen = [f.copy() for f in frozen]
        for l in range(L):
            pt = param_masks[l].bits
            psi = frozen[l]
            if psi.shape != pt.shape:
                raise MaskedNetError(f"frozen shape mismatch at layer {l + 1}")
            scale = pt * (1.0 - psi + self.beta * psi)
            self.weight_scale.append(scale.astype(dtype))
            self.train_mask.append(pt & ~psi)
            phi = mask_set.phi[l + 1].bits
            self.bias_active.append(phi)
            self.bias_train.append(phi & ~neuron_frozen[l])


def dense_context(widths: list[int], dtype=np.float32) -> TaskContext:
    """All-ones masks, nothing frozen: collapses to a plain dense MLP."""
    phi = [NeuronMask(bits=np.ones(w, dtype=bool), layer_index=i)
           for i, w in enumerate(widths)]
    mask_set = MaskSet(task_id=-1, phi=phi, phi_global={}, phi_local={})
    shapes = [(widths[l], widths[l - 1]) for l in range(1, len(widths))]
    frozen = [np.zeros(s, dtype=bool) for s in shapes]
    neuron_frozen = [np.zeros(s[0], dtype=bool) for s in shapes]
    return TaskContext(mask_set, frozen, neuron_frozen, beta=1.0, dtype=dtype)


@dataclass
class ForwardCache:
    x: np.ndarray
    post: list[np.ndarray]   # y^(0)..y^(L), post-activation
    pre: list[np.ndarray]    # y_hat^(1)..y_hat^(L)


class MaskedNetwork:
    def __init__(self, widths: list[int], seed: int, dtype=np.float32):
        if len(widths) < 3 or any(w < 1 for w in widths):
            raise MaskedNetError("need positive widths and at least one hidden layer")
        self.widths = list(widths)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        gain = np.sqrt(2.0 / (1.0 + LEAKY_SLOPE ** 2))
        for l in range(1, len(widths)):
            fan_in = widths[l - 1]
            bound = gain * np.sqrt(3.0 / fan_in)
            self.W.append(rng.uniform(-bound, bound,
                                      (widths[l], fan_in)).astype(dtype))
            bb = 1.0 / np.sqrt(fan_in)
            self.b.append(rng.uniform(-bb, bb, widths[l]).astype(dtype))
        self._init_store: tuple[list[np.ndarray], list[np.ndarray]] | None = None

    @property
    def num_layers(self) -> int:
        return len(self.W)

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.W]

    def snapshot_init(self):
        """Capture initial parameter values for dormant resets. Once only."""
        if self._init_store is not None:
            raise MaskedNetError("initial values already captured")
        self._init_store = ([w.copy() for w in self.W],
                            [b.copy() for b in self.b])

    @property
    def init_store(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        if self._init_store is None:
            raise MaskedNetError("snapshot_init was never called")
        return self._init_store

    def forward(self, x: np.ndarray, ctx: TaskContext):
        """Returns (output, cache). x is (n0,) or (batch, n0)."""
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        y = x[None, :] if single else x
        if y.shape[1] != self.widths[0]:
            raise MaskedNetError(
                f"input width {y.shape[1]} != {self.widths[0]}")
        post = [y]
        pre = []
        L = self.num_layers
        for l in range(L):
            w_eff = self.W[l] * ctx.weight_scale[l]
            b_eff = self.b[l] * ctx.bias_active[l]
            z = y @ w_eff.T + b_eff
            pre.append(z)
            if l < L - 1:
                y = np.where(z > 0, z, LEAKY_SLOPE * z)
            else:
                y = z
            post.append(y)
        out = post[-1][0] if single else post[-1]
        return out, ForwardCache(x=x, post=post, pre=pre)

    def backward(self, ctx: TaskContext, cache: ForwardCache,
                 grad_out: np.ndarray,
                 need_input_grad: bool = False) -> GradientBuffer:
        """Masked parameter gradients for the forward pass in `cache`.

        grad_out has the output's shape; per-sample contributions are
        summed, so scale it by 1/batch upstream for mean losses.
        """
        if cache is None or not cache.pre:
            raise MaskedNetError("backward needs the matching forward cache")
        g = np.asarray(grad_out, dtype=self.dtype)
        if g.ndim == 1:
            g = g[None, :]
        L = self.num_layers
        dW: list[np.ndarray | None] = [None] * L
        db: list[np.ndarray | None] = [None] * L
        delta = g
        for l in range(L - 1, -1, -1):
            if l < L - 1:
                dact = np.where(cache.pre[l] > 0, 1.0, LEAKY_SLOPE).astype(self.dtype)
                delta = delta * dact
            dW[l] = (delta.T @ cache.post[l]) * ctx.train_mask[l]
            db[l] = delta.sum(axis=0) * ctx.bias_train[l]
            if l > 0 or need_input_grad:
                w_eff = self.W[l] * ctx.weight_scale[l]
                delta = delta @ w_eff
        return GradientBuffer(dW=dW, db=db,
                              dx=delta if need_input_grad else None)


class AdamOptimizer:
    """Adam over a MaskedNetwork's parameters.

    Expects already-masked gradients; frozen coordinates receive exact
    zeros so their moments (and hence the parameters) never move.
    Non-finite gradients skip the step and bump `skipped`.
    """

    def __init__(self, net: MaskedNetwork, lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.skipped = 0
        self.mW = [np.zeros_like(w) for w in net.W]
        self.vW = [np.zeros_like(w) for w in net.W]
        self.mb = [np.zeros_like(b) for b in net.b]
        self.vb = [np.zeros_like(b) for b in net.b]

    def apply_update(self, net: MaskedNetwork, grads: GradientBuffer,
                     lr: float | None = None):
        if not grads.is_finite():
            self.skipped += 1
            return False
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for l in range(len(net.W)):
            for p, g, m, v in ((net.W[l], grads.dW[l], self.mW[l], self.vW[l]),
                               (net.b[l], grads.db[l], self.mb[l], self.vb[l])):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def zero_moments_at(self, layer: int, rows=None, cols=None, bias_rows=None):
        """Clear moment accumulators for reset coordinates."""
        if rows is not None and cols is not None:
            self.mW[layer][rows, cols] = 0.0
            self.vW[layer][rows, cols] = 0.0
        if bias_rows is not None:
            self.mb[layer][bias_rows] = 0.0
            self.vb[layer][bias_rows] = 0.0
