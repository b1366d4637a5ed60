"""Co-allocation of per-task sub-network masks and the frozen ledger.

For each hidden layer, a task gets two neuron masks: one from a Lasso
against the shared global dictionary (captures cross-task structure) and
one from a Lasso against its private task-local dictionary (guarantees
fresh trainable capacity). Their element-wise OR is the task's neuron
mask; outer products of consecutive neuron masks give the parameter-level
mask, and the union of all past parameter masks is the frozen ledger that
blocks gradient updates.

Allocation depends only on task embeddings and seeds, never on RL data.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .embedding import TaskEmbedding
from .sparse_coding import (
    NeuronMask,
    binarize,
    make_dictionary,
    solve_lasso_lars,
)


class AllocationError(ValueError):
    pass


@dataclass(frozen=True)
class AllocationConfig:
    lambda_global: float = 1e-3
    lambda_local: float = 1e-3
    binarize_eps: float = 1e-12
    dict_seed: int = 0
    global_only: bool = False  # ablation: disable task-local prompting

    def __post_init__(self):
        if self.lambda_global <= 0 or self.lambda_local <= 0:
            raise AllocationError("sparsity penalties must be > 0")


def local_dict_seed(global_seed: int, task_id: int) -> int:
    """Per-task dictionary seed; recorded in checkpoints so masks are
    reproducible without storing the dictionaries themselves."""
    digest = hashlib.blake2b(
        f"local-dict:{global_seed}:{task_id}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class ParamMask:
    bits: np.ndarray  # bool, (n_l, n_lm1)
    layer_index: int

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class MaskSet:
    """All masks for one task: neuron masks phi for layers 0..L (input and
    output all-ones) plus the component masks for hidden layers 1..L-1."""
    task_id: int
    phi: list[NeuronMask]
    phi_global: dict[int, NeuronMask]
    phi_local: dict[int, NeuronMask]

    @property
    def num_layers(self) -> int:
        return len(self.phi) - 1

    def param_masks(self) -> list[ParamMask]:
        """Fine-grained parameter masks for layers 1..L."""
        return [
            param_mask(self.phi[l], self.phi[l - 1])
            for l in range(1, len(self.phi))
        ]


def allocate_task(e_k: TaskEmbedding, cfg: AllocationConfig,
                  layer_widths: list[int]) -> MaskSet:
    """Allocate the task's sub-network masks from its embedding.

    layer_widths is the full width list n^(0)..n^(L); masks are solved for
    the hidden layers only, with phi^(0) and phi^(L) fixed to all-ones.
    """
    if len(layer_widths) < 3:
        raise AllocationError("need at least one hidden layer")
    m = e_k.dim
    L = len(layer_widths) - 1
    phi: list[NeuronMask] = [
        NeuronMask(bits=np.ones(layer_widths[0], dtype=bool), layer_index=0)
    ]
    phi_global: dict[int, NeuronMask] = {}
    phi_local: dict[int, NeuronMask] = {}
    for l in range(1, L):
        n = layer_widths[l]
        D_g = make_dictionary(cfg.dict_seed, m, n, kind="global", layer_index=l)
        code_g = solve_lasso_lars(D_g, e_k.values, cfg.lambda_global)
        mask_g = binarize(code_g, cfg.binarize_eps, layer_index=l)
        phi_global[l] = mask_g
        if cfg.global_only:
            combined = mask_g.bits
            phi_local[l] = NeuronMask(bits=np.zeros(n, dtype=bool), layer_index=l)
        else:
            D_l = make_dictionary(
                local_dict_seed(cfg.dict_seed, e_k.task_id), m, n,
                kind="task-local", layer_index=l, task_id=e_k.task_id)
            code_l = solve_lasso_lars(D_l, e_k.values, cfg.lambda_local)
            mask_l = binarize(code_l, cfg.binarize_eps, layer_index=l)
            phi_local[l] = mask_l
            combined = mask_g.bits | mask_l.bits
        if not combined.any():
            # an empty hidden layer makes the sub-network non-functional;
            # the penalties are too aggressive and the user must lower them
            raise AllocationError(
                f"task {e_k.task_id}: all-zero mask at layer {l}; "
                f"lower lambda_global/lambda_local")
        phi.append(NeuronMask(bits=combined, layer_index=l))
    phi.append(NeuronMask(bits=np.ones(layer_widths[L], dtype=bool), layer_index=L))
    return MaskSet(task_id=e_k.task_id, phi=phi,
                   phi_global=phi_global, phi_local=phi_local)


def param_mask(phi_l: NeuronMask, phi_lm1: NeuronMask) -> ParamMask:
    """Outer product of consecutive neuron masks: weight (p, q) is in the
    sub-network iff neuron p of this layer and neuron q of the previous
    layer are both active."""
    return ParamMask(bits=np.outer(phi_l.bits, phi_lm1.bits),
                     layer_index=phi_l.layer_index)


def frozen_union(archive: list[list[ParamMask]],
                 layer_shapes: list[tuple[int, int]]) -> list[np.ndarray]:
    """Element-wise OR over all archived per-task parameter masks.

    Returns all-zero matrices when the archive is empty (first task).
    """
    out = [np.zeros(shape, dtype=bool) for shape in layer_shapes]
    for task_masks in archive:
        if len(task_masks) != len(layer_shapes):
            raise AllocationError("archive entry has wrong layer count")
        for l, pm in enumerate(task_masks):
            if pm.bits.shape != layer_shapes[l]:
                raise AllocationError(
                    f"archive shape mismatch at layer {l + 1}: "
                    f"{pm.bits.shape} vs {layer_shapes[l]}")
            out[l] |= pm.bits
    return out


class FrozenLedger:
    """Tracks which parameters were trained by completed tasks.

    Per layer it keeps the cumulative frozen bit-matrix (OR of every
    archived task mask), the full archive of per-task masks, the pre-task
    snapshots, and a neuron-level frozen bit-vector used for biases.
    """

    def __init__(self, layer_shapes: list[tuple[int, int]]):
        self.layer_shapes = list(layer_shapes)
        self.archive: list[list[ParamMask]] = []
        self.snapshots: list[list[np.ndarray]] = []  # frozen state before each task
        self.cumulative = [np.zeros(s, dtype=bool) for s in layer_shapes]
        self.neuron_frozen = [np.zeros(s[0], dtype=bool) for s in layer_shapes]

    @property
    def num_tasks(self) -> int:
        return len(self.archive)

    def snapshot(self) -> list[np.ndarray]:
        """Frozen matrices as of now (copy); pass to training as Psi_{k-1}."""
        return [c.copy() for c in self.cumulative]

    def commit_task(self, mask_set: MaskSet):
        """Archive a finished task's fine-grained masks and freeze them."""
        pms = mask_set.param_masks()
        if [pm.bits.shape for pm in pms] != self.layer_shapes:
            raise AllocationError("mask set does not match ledger shapes")
        self.snapshots.append(self.snapshot())
        self.archive.append(pms)
        for l, pm in enumerate(pms):
            self.cumulative[l] |= pm.bits
            # bias freezing is neuron-level: frozen once the neuron appears
            # in any completed task's phi
            self.neuron_frozen[l] |= mask_set.phi[l + 1].bits


def utilization(ledger: FrozenLedger, current_masks: MaskSet | None = None) -> float:
    """Fraction of weight coordinates trained so far: cumulative frozen
    matrices, optionally unioned with the current task's masks."""
    used = 0
    total = 0
    current = current_masks.param_masks() if current_masks is not None else None
    for l, cum in enumerate(ledger.cumulative):
        bits = cum if current is None else (cum | current[l].bits)
        used += int(bits.sum())
        total += bits.size
    return used / total if total else 0.0


def mask_similarity(a: MaskSet, b: MaskSet, layer: int | str = "mean") -> float:
    """Cosine similarity between two tasks' neuron masks.

    layer is a hidden-layer index or "mean" to average over hidden layers.
    Zero-vector inputs give 0.
    """
    if len(a.phi) != len(b.phi):
        raise AllocationError("mask sets have different depths")
    hidden = range(1, len(a.phi) - 1)
    if layer == "mean":
        sims = [_cosine(a.phi[l].bits, b.phi[l].bits) for l in hidden]
        return float(np.mean(sims))
    if layer not in hidden:
        raise AllocationError(f"layer {layer} is not a hidden layer")
    return _cosine(a.phi[layer].bits, b.phi[layer].bits)


def _cosine(x: np.ndarray, y: np.ndarray) -> float:
    xf = x.astype(float)
    yf = y.astype(float)
    nx = np.linalg.norm(xf)
    ny = np.linalg.norm(yf)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(xf @ yf / (nx * ny))
