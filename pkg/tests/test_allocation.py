import numpy as np
import pytest
from scipy.stats import spearmanr

from sparserl.allocation import (
    AllocationConfig,
    AllocationError,
    FrozenLedger,
    MaskSet,
    allocate_task,
    frozen_union,
    local_dict_seed,
    mask_similarity,
    param_mask,
    utilization,
)
from sparserl.embedding import TaskDescription, embed_description
from sparserl.envs import task_suite
from sparserl.sparse_coding import NeuronMask

WIDTHS = [8, 128, 128, 4]


def embeddings(n=10, m=64):
    return [embed_description(TaskDescription(s.task_id, s.description), m=m)
            for s in task_suite(n, 0)]


def test_allocation_is_deterministic():
    e = embeddings(2)[0]
    cfg = AllocationConfig(lambda_global=0.2, lambda_local=0.2)
    a = allocate_task(e, cfg, WIDTHS)
    b = allocate_task(e, cfg, WIDTHS)
    for l in range(len(WIDTHS)):
        assert np.array_equal(a.phi[l].bits, b.phi[l].bits)


def test_input_and_output_masks_are_all_ones():
    ms = allocate_task(embeddings(2, m=64)[0],
                       AllocationConfig(lambda_global=0.2, lambda_local=0.2),
                       WIDTHS)
    assert ms.phi[0].bits.all() and ms.phi[-1].bits.all()
    assert ms.num_layers == 3


def test_combined_mask_is_or_of_components():
    ms = allocate_task(embeddings(2)[0],
                       AllocationConfig(lambda_global=0.2, lambda_local=0.2),
                       WIDTHS)
    for l in (1, 2):
        assert np.array_equal(ms.phi[l].bits,
                              ms.phi_global[l].bits | ms.phi_local[l].bits)
        assert ms.phi_local[l].bits.any()   # local prompt adds capacity


def test_global_only_is_subset_of_coallocation():
    e = embeddings(2)[0]
    co = allocate_task(e, AllocationConfig(lambda_global=0.2, lambda_local=0.2),
                       WIDTHS)
    go = allocate_task(e, AllocationConfig(lambda_global=0.2, lambda_local=0.2,
                                           global_only=True), WIDTHS)
    for l in (1, 2):
        assert not (go.phi[l].bits & ~co.phi[l].bits).any()
        assert not go.phi_local[l].bits.any()


def test_excessive_penalty_raises():
    with pytest.raises(AllocationError):
        allocate_task(embeddings(2)[0],
                      AllocationConfig(lambda_global=100.0, lambda_local=100.0),
                      WIDTHS)
    with pytest.raises(AllocationError):
        AllocationConfig(lambda_global=-1.0)
    with pytest.raises(AllocationError):
        allocate_task(embeddings(2)[0], AllocationConfig(), [8, 4])


def test_local_dict_seed_is_stable_and_distinct():
    assert local_dict_seed(0, 1) == local_dict_seed(0, 1)
    assert local_dict_seed(0, 1) != local_dict_seed(0, 2)
    assert local_dict_seed(0, 1) != local_dict_seed(1, 1)


def test_param_mask_is_outer_product():
    a = NeuronMask(bits=np.array([True, False, True]), layer_index=1)
    b = NeuronMask(bits=np.array([True, True]), layer_index=0)
    pm = param_mask(a, b)
    assert pm.bits.tolist() == [[True, True], [False, False], [True, True]]
    assert pm.popcount == 4
    assert pm.layer_index == 1


def test_frozen_union_and_ledger():
    cfg = AllocationConfig(lambda_global=0.2, lambda_local=0.2)
    embs = embeddings(3)
    shapes = [(128, 8), (128, 128), (4, 128)]
    ledger = FrozenLedger(shapes)
    committed = []
    for e in embs:
        ms = allocate_task(e, cfg, WIDTHS)
        snap = ledger.snapshot()
        # snapshot equals the OR over previously committed archives
        union = frozen_union(ledger.archive, shapes)
        assert all(np.array_equal(a, b) for a, b in zip(snap, union))
        ledger.commit_task(ms)
        committed.append(ms)
        # cumulative covers this task's masks
        for l, pm in enumerate(ms.param_masks()):
            assert not (pm.bits & ~ledger.cumulative[l]).any()
        # bias freezing is neuron-level
        for l in range(len(shapes)):
            assert not (ms.phi[l + 1].bits & ~ledger.neuron_frozen[l]).any()
    assert ledger.num_tasks == 3
    # snapshots never shrink
    for l in range(len(shapes)):
        assert not (ledger.snapshots[1][l] & ~ledger.snapshots[2][l]).any()


def test_utilization_monotone_and_bounded():
    cfg = AllocationConfig(lambda_global=0.2, lambda_local=0.2)
    ledger = FrozenLedger([(128, 8), (128, 128), (4, 128)])
    prev = 0.0
    for e in embeddings(5):
        ms = allocate_task(e, cfg, WIDTHS)
        with_current = utilization(ledger, current_masks=ms)
        ledger.commit_task(ms)
        u = utilization(ledger)
        assert prev <= u <= 1.0
        assert with_current == pytest.approx(u)
        prev = u


def test_mask_similarity_identities():
    cfg = AllocationConfig(lambda_global=0.2, lambda_local=0.2)
    embs = embeddings(3)
    a = allocate_task(embs[0], cfg, WIDTHS)
    b = allocate_task(embs[2], cfg, WIDTHS)
    assert mask_similarity(a, a) == pytest.approx(1.0)
    assert 0.0 <= mask_similarity(a, b) <= 1.0
    assert mask_similarity(a, b, layer=1) == pytest.approx(
        mask_similarity(b, a, layer=1))
    with pytest.raises(AllocationError):
        mask_similarity(a, b, layer=0)


def test_similar_descriptions_get_similar_masks():
    """Embedding similarity and mask similarity should be positively rank-
    correlated across all task pairs (the co-allocation premise)."""
    cfg = AllocationConfig(lambda_global=0.2, lambda_local=0.2)
    embs = embeddings(10)
    masks = [allocate_task(e, cfg, WIDTHS) for e in embs]
    emb_sims, mask_sims = [], []
    for i in range(len(embs)):
        for j in range(i + 1, len(embs)):
            emb_sims.append(float(embs[i].values @ embs[j].values))
            mask_sims.append(mask_similarity(masks[i], masks[j]))
    rho, _ = spearmanr(emb_sims, mask_sims)
    assert rho > 0.3
    # the near-duplicate pair (tasks 0/1) beats the most dissimilar pair
    near = mask_similarity(masks[0], masks[1])
    assert near > min(mask_sims)


def test_commit_shape_mismatch_rejected():
    ledger = FrozenLedger([(4, 8)])
    phi = [NeuronMask(np.ones(8, dtype=bool), 0),
           NeuronMask(np.ones(5, dtype=bool), 1)]
    ms = MaskSet(task_id=0, phi=phi, phi_global={}, phi_local={})
    with pytest.raises(AllocationError):
        ledger.commit_task(ms)
