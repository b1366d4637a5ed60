"""Continual reinforcement learning with sparse-prompted sub-networks.

Per-task binary masks are allocated from task-description embeddings by
Lasso sparse coding against Gaussian dictionaries; masked training
freezes everything earlier tasks used, a beta-weighted split forward
pass reuses frozen parameters at inference, and sensitivity-guided
resets recover dormant capacity. Includes a small 2-D point-push task
family, SAC training, continual-learning metrics and a CLI harness.
"""

from .allocation import (
    AllocationConfig,
    FrozenLedger,
    MaskSet,
    allocate_task,
    mask_similarity,
    utilization,
)
from .dormant import DormantConfig, find_dormant, reset_dormant, sensitivity_scores
from .embedding import TaskDescription, TaskEmbedding, embed_description, load_embeddings
from .envs import PointPushEnv, TaskSpec, scripted_policy, task_suite
from .harness import (
    RunConfig,
    allocate_only,
    export_masks,
    load_config,
    run_baselines,
    run_sequence,
    sweep,
)
from .masked_net import AdamOptimizer, MaskedNetwork, TaskContext, dense_context
from .metrics import EvalCurve, compute_metrics, read_eval_csv
from .rl_core import SacAgent, SacConfig, evaluate, train_task
from .sparse_coding import make_dictionary, solve_lasso_lars

__version__ = "0.1.0"
