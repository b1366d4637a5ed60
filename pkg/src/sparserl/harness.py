"""Experiment orchestration: configs, the full task-sequence driver,
single-task baselines, sweeps, ablation arms and mask export.

A run directory contains: config.json (resolved copy), eval.csv (one row
per evaluation of any task), dormant.csv (reset diagnostics),
checkpoint.bin (written at every task boundary) and metrics.csv. Resume
picks up from the last completed task; allocation is recomputed (it is a
pure function of embeddings and seeds) and cross-checked against the
archived masks in the checkpoint.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from .allocation import (
    AllocationConfig,
    AllocationError,
    FrozenLedger,
    MaskSet,
    allocate_task,
    mask_similarity,
    utilization,
)
from .dormant import DormantConfig
from .embedding import TaskDescription, embed_description, load_embeddings
from .envs import ACT_DIM, OBS_DIM, PointPushEnv, TaskSpec, task_suite
from .masked_net import TaskContext, dense_context
from .metrics import (
    EvalCurve,
    MetricsResult,
    compute_metrics,
    read_eval_csv,
    write_metrics_csv,
)
from .rl_core import SacAgent, SacConfig, _derive_seed, evaluate, train_task
from .sparse_coding import NeuronMask

log = logging.getLogger("sparserl")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Flat run configuration; defaults are the reference hyperparameters
    (beta=0.3, tau=0.6) with budgets and penalties scaled down to a
    desk-size suite."""
    # suite / schedule
    n_tasks: int = 5
    suite_seed: int = 0
    repeat_suite: int = 1          # CW-style: >1 repeats the suite, new ids
    seed: int = 0
    steps_per_task: int = 60_000
    # embedding
    embed_dim: int = 64
    embed_seed: int = 0
    embeddings_file: str | None = None
    # allocation
    lambda_global: float = 0.2
    lambda_local: float = 0.2
    binarize_eps: float = 1e-12
    dict_seed: int = 0
    global_only: bool = False      # ablation: no task-local prompting
    # inference
    beta: float = 0.3
    # dormant resets
    # tau is deliberately small for the desk-scale budgets: sensitivity
    # scores are heavy-tailed (a few neurons dominate), so a threshold near
    # the active mean would reset ~half the live subnetwork every interval
    # and erase learning. 0.1 clips only the truly insensitive tail, and
    # the interval leaves recovery room before a task's final checkpoint.
    tau: float = 0.1
    reset_interval: int = 25_000
    dormant_variant: str = "sensitivity"   # sensitivity | redo | off
    dormant_sample_batch: int = 256
    delta_scale: float = 0.01
    state_window: int = 1_000
    # SAC
    discount: float = 0.99
    target_interp: float = 5e-3
    batch_size: int = 256
    buffer_capacity: int = 60_000
    exploratory_steps: int = 2_000
    lr: float = 1e-3
    actor_hidden: tuple[int, ...] = (128, 128)
    critic_hidden: tuple[int, ...] = (64, 64)
    eval_interval: int = 2_000
    eval_episodes: int = 10
    # metrics / sweeps
    baseline_dir: str | None = None
    sweep_parameter: str = "beta"
    sweep_values: tuple[float, ...] = (0.1, 0.3, 0.5, 0.8)

    def __post_init__(self):
        if self.n_tasks < 1 or self.repeat_suite < 1:
            raise ConfigError("n_tasks and repeat_suite must be >= 1")
        if self.steps_per_task < 1:
            raise ConfigError("steps_per_task must be >= 1")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if not (0.0 < self.tau):
            raise ConfigError("tau must be > 0")
        if self.dormant_variant not in ("sensitivity", "redo", "off"):
            raise ConfigError(f"unknown dormant variant {self.dormant_variant!r}")
        if self.lambda_global <= 0 or self.lambda_local <= 0:
            raise ConfigError("sparsity penalties must be > 0")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigError("eval interval/episodes must be >= 1")
        if self.sweep_parameter not in ("beta", "tau"):
            raise ConfigError("sweep_parameter must be 'beta' or 'tau'")
        if min(self.actor_hidden, default=0) < 1 or \
           min(self.critic_hidden, default=0) < 1:
            raise ConfigError("hidden widths must be positive and non-empty")

    # effective values after ablation flags
    @property
    def beta_effective(self) -> float:
        return self.beta

    def sac_config(self) -> SacConfig:
        return SacConfig(
            discount=self.discount, target_interp=self.target_interp,
            batch_size=self.batch_size, buffer_capacity=self.buffer_capacity,
            exploratory_steps=self.exploratory_steps, lr=self.lr,
            actor_hidden=tuple(self.actor_hidden),
            critic_hidden=tuple(self.critic_hidden),
            eval_interval=self.eval_interval, eval_episodes=self.eval_episodes)

    def dormant_config(self) -> DormantConfig:
        return DormantConfig(
            tau=self.tau, reset_interval=self.reset_interval,
            sample_batch=self.dormant_sample_batch,
            delta_scale=self.delta_scale, state_window=self.state_window,
            variant=self.dormant_variant)

    def allocation_config(self) -> AllocationConfig:
        return AllocationConfig(
            lambda_global=self.lambda_global, lambda_local=self.lambda_local,
            binarize_eps=self.binarize_eps, dict_seed=self.dict_seed,
            global_only=self.global_only)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        d["sweep_values"] = list(self.sweep_values)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_TUPLE_FIELDS = {"actor_hidden", "critic_hidden", "sweep_values"}


def config_from_dict(data: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    for key in _TUPLE_FIELDS & set(kwargs):
        if not isinstance(kwargs[key], (list, tuple)):
            raise ConfigError(f"{key} must be a list")
        kwargs[key] = tuple(kwargs[key])
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc))


def load_config(path, seed: int | None = None) -> RunConfig:
    """Read a flat JSON config file; `seed` (from the CLI) overrides."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if seed is not None:
        data["seed"] = seed
    return config_from_dict(data)


# -- suite + allocation ------------------------------------------------------


def build_suite(cfg: RunConfig) -> list[TaskSpec]:
    base = task_suite(cfg.n_tasks, cfg.suite_seed)
    if cfg.repeat_suite == 1:
        return base
    # repeated-suite mode: every occurrence is treated as a brand-new task
    specs = []
    for r in range(cfg.repeat_suite):
        for spec in base:
            specs.append(replace(spec, task_id=len(specs)))
    return specs


def embed_suite(cfg: RunConfig, specs: list[TaskSpec]):
    if cfg.embeddings_file is not None:
        embs = load_embeddings(cfg.embeddings_file, cfg.embed_dim)
        if len(embs) < len(specs):
            raise ConfigError(
                f"embeddings file has {len(embs)} rows, need {len(specs)}")
        return embs[:len(specs)]
    return [embed_description(TaskDescription(s.task_id, s.description),
                              m=cfg.embed_dim, seed=cfg.embed_seed)
            for s in specs]


def actor_widths(cfg: RunConfig) -> list[int]:
    return [OBS_DIM, *cfg.actor_hidden, 2 * ACT_DIM]


def allocate_suite(cfg: RunConfig, specs=None):
    """Masks for every task in order. Pure in (config, seeds); used by both
    allocate_only and run_sequence so the two are byte-identical."""
    specs = build_suite(cfg) if specs is None else specs
    embs = embed_suite(cfg, specs)
    acfg = cfg.allocation_config()
    widths = actor_widths(cfg)
    out = []
    for e in embs:
        out.append(allocate_task(e, acfg, widths))
    return out


def allocate_only(cfg: RunConfig) -> dict:
    """Run the allocation pipeline alone (no environments, no RL) and
    report per-task timing, mask sizes and cumulative utilization."""
    specs = build_suite(cfg)
    embs = embed_suite(cfg, specs)
    acfg = cfg.allocation_config()
    widths = actor_widths(cfg)
    shapes = [(widths[l], widths[l - 1]) for l in range(1, len(widths))]
    ledger = FrozenLedger(shapes)
    rows = []
    masks = []
    for spec, e in zip(specs, embs):
        t0 = time.perf_counter()
        ms = allocate_task(e, acfg, widths)
        elapsed = time.perf_counter() - t0
        ledger.commit_task(ms)
        masks.append(ms)
        rows.append({
            "task_id": spec.task_id,
            "seconds": elapsed,
            "neurons_per_layer": [int(ms.phi[l].bits.sum())
                                  for l in range(1, len(widths) - 1)],
            "param_coords": sum(pm.popcount for pm in ms.param_masks()),
            "cumulative_utilization": utilization(ledger),
        })
    return {"widths": widths, "rows": rows, "masks": masks,
            "total_seconds": sum(r["seconds"] for r in rows)}


# -- run directory plumbing --------------------------------------------------

EVAL_HEADER = "global_step,task_id,success_rate\n"
DORMANT_HEADER = "task_id,step,coords_reset\n"


def _write_resolved_config(cfg: RunConfig, out_dir):
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _truncate_csv(path, header: str, data_rows: int):
    lines = [header]
    if os.path.exists(path):
        with open(path) as fh:
            got = fh.readlines()
        lines = got[:1 + data_rows]
        if not lines or lines[0] != header:
            lines = [header]
    with open(path, "w") as fh:
        fh.writelines(lines)


def _task_context(cfg: RunConfig, mask_set: MaskSet,
                  ledger: FrozenLedger) -> TaskContext:
    return TaskContext(mask_set, ledger.snapshot(),
                       [v.copy() for v in ledger.neuron_frozen],
                       beta=cfg.beta)


@dataclass
class RunArtifacts:
    config: RunConfig
    out_dir: str
    curves: list[EvalCurve]
    metrics: MetricsResult
    checkpoint_path: str
    utilization_per_task: list[float]
    reset_events: list[tuple[int, int, int]]   # (task, step, coords reset)


def _save_checkpoint(path, cfg: RunConfig, agent: SacAgent,
                     masks: list[MaskSet], cursor: int, eval_rows: int):
    init_W, init_b = agent.actor.init_store
    ck = ckpt.Checkpoint(
        config_hash=cfg.config_hash(), task_cursor=cursor, beta=cfg.beta,
        run_seed=cfg.seed, dict_seed=cfg.dict_seed, embed_dim=cfg.embed_dim,
        actor_widths=list(agent.actor.widths),
        actor_W=[w.copy() for w in agent.actor.W],
        actor_b=[b.copy() for b in agent.actor.b],
        init_W=[w.copy() for w in init_W],
        init_b=[b.copy() for b in init_b],
        task_phi=[[p.bits for p in ms.phi] for ms in masks[:cursor]],
        task_param_masks=[[pm.bits for pm in ms.param_masks()]
                          for ms in masks[:cursor]],
        eval_rows=eval_rows)
    tmp = str(path) + ".tmp"
    ckpt.save(tmp, ck)
    os.replace(tmp, path)


def _restore_actor(agent: SacAgent, ck: ckpt.Checkpoint):
    if list(agent.actor.widths) != list(ck.actor_widths):
        raise ckpt.CheckpointError("checkpoint widths do not match config")
    agent.actor.W = [w.astype(np.float32) for w in ck.actor_W]
    agent.actor.b = [b.astype(np.float32) for b in ck.actor_b]
    agent.actor._init_store = ([w.astype(np.float32) for w in ck.init_W],
                               [b.astype(np.float32) for b in ck.init_b])


def mask_sets_from_checkpoint(ck: ckpt.Checkpoint) -> list[MaskSet]:
    """Rebuild per-task mask sets from the stored neuron masks (the
    component global/local masks are not kept; fine-grained masks follow
    from the neuron masks)."""
    out = []
    for tid, phis in enumerate(ck.task_phi):
        phi = [NeuronMask(bits=bits.astype(bool), layer_index=l)
               for l, bits in enumerate(phis)]
        out.append(MaskSet(task_id=tid, phi=phi, phi_global={}, phi_local={}))
    return out


# -- the Algorithm-1 driver --------------------------------------------------


def run_sequence(cfg: RunConfig, out_dir, resume: bool = False) -> RunArtifacts:
    """Train the full task sequence: allocate masks, train each task on its
    sub-network with the frozen ledger snapshot, re-evaluate every earlier
    task at each evaluation checkpoint, checkpoint at task boundaries, and
    compute metrics at the end."""
    os.makedirs(out_dir, exist_ok=True)
    _write_resolved_config(cfg, out_dir)
    eval_path = os.path.join(out_dir, "eval.csv")
    dorm_path = os.path.join(out_dir, "dormant.csv")
    ck_path = os.path.join(out_dir, "checkpoint.bin")

    specs = build_suite(cfg)
    masks = allocate_suite(cfg, specs)
    delta = cfg.steps_per_task
    agent = SacAgent(OBS_DIM, ACT_DIM, cfg.sac_config(),
                     seed=_derive_seed("run", cfg.seed))
    ledger = FrozenLedger(agent.actor.layer_shapes())

    start_task = 0
    eval_rows = 0
    if resume and os.path.exists(ck_path):
        ck = ckpt.load(ck_path)
        if ck.config_hash != cfg.config_hash():
            raise ckpt.CheckpointError(
                "refusing to resume: config does not match checkpoint")
        _restore_actor(agent, ck)
        for k in range(ck.task_cursor):
            stored = ck.task_param_masks[k]
            fresh = [pm.bits for pm in masks[k].param_masks()]
            if any(not np.array_equal(a, b) for a, b in zip(stored, fresh)):
                raise ckpt.CheckpointError(
                    f"checkpoint mask archive for task {k} does not match "
                    f"re-allocated masks")
            ledger.commit_task(masks[k])
        start_task = ck.task_cursor
        eval_rows = ck.eval_rows
        log.info("resuming after task %d", start_task)
    _truncate_csv(eval_path, EVAL_HEADER, eval_rows)
    if start_task == 0:
        _truncate_csv(dorm_path, DORMANT_HEADER, 0)

    # contexts for completed/current tasks; earlier tasks keep the frozen
    # snapshot they trained under, so re-evaluation is bit-exact forever
    contexts: list[TaskContext] = []
    eval_envs: list[PointPushEnv] = []
    rebuild_ledger = FrozenLedger(agent.actor.layer_shapes())
    for k in range(start_task):
        contexts.append(_task_context(cfg, masks[k], rebuild_ledger))
        rebuild_ledger.commit_task(masks[k])
        eval_envs.append(PointPushEnv(specs[k],
                                      seed=_derive_seed("eval-env", cfg.seed, k)))

    eval_fh = open(eval_path, "a")
    dorm_fh = open(dorm_path, "a")
    reset_events = []
    util_per_task = [utilization(ledger)] if start_task else []
    try:
        for k in range(start_task, len(specs)):
            ctx = _task_context(cfg, masks[k], ledger)
            contexts.append(ctx)
            eval_envs.append(PointPushEnv(
                specs[k], seed=_derive_seed("eval-env", cfg.seed, k)))
            env = PointPushEnv(specs[k], seed=_derive_seed("env", cfg.seed, k))
            rows_written = [eval_rows]

            def eval_all(t, first=k, upto=None):
                """Evaluate tasks first..k at global step k*delta + t."""
                gstep = k * delta + t
                rate_k = None
                for j in range(first, k + 1):
                    r = evaluate(agent, contexts[j], eval_envs[j],
                                 cfg.eval_episodes,
                                 eval_seed=_derive_seed("eval", cfg.seed, j))
                    eval_fh.write(f"{gstep},{specs[j].task_id},{r:.6f}\n")
                    rows_written[0] += 1
                    if j == k:
                        rate_k = r
                eval_fh.flush()
                return rate_k

            # window-start sample for the new task only (earlier tasks
            # already have a row at this global step from the last window)
            eval_all(0, first=k)
            log.info("task %d (%s): training %d steps",
                     specs[k].task_id, specs[k].description, delta)
            result = train_task(agent, env, ctx, cfg.dormant_config(),
                                steps=delta,
                                task_seed=_derive_seed("task", cfg.seed, k),
                                eval_hook=lambda t: eval_all(t, first=0))
            for step, n in result.reset_events:
                dorm_fh.write(f"{specs[k].task_id},{step},{n}\n")
                reset_events.append((specs[k].task_id, step, n))
            dorm_fh.flush()
            ledger.commit_task(masks[k])
            eval_rows = rows_written[0]
            util_per_task.append(utilization(ledger))
            _save_checkpoint(ck_path, cfg, agent, masks, k + 1, eval_rows)
            log.info("task %d done: final rate %.2f, utilization %.3f",
                     specs[k].task_id, result.eval_curve[-1][1],
                     util_per_task[-1])
    finally:
        eval_fh.close()
        dorm_fh.close()

    curves = read_eval_csv(eval_path)
    baselines = None
    if cfg.baseline_dir is not None:
        baselines = load_baselines(cfg, specs)
    metrics = compute_metrics(curves, float(delta), baselines)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metrics)
    return RunArtifacts(config=cfg, out_dir=out_dir, curves=curves,
                        metrics=metrics, checkpoint_path=ck_path,
                        utilization_per_task=util_per_task,
                        reset_events=reset_events)


def reevaluate(cfg: RunConfig, out_dir) -> list[tuple[int, float]]:
    """Re-evaluate every completed task from a run's checkpoint. Pure read:
    rebuilds contexts from re-allocated masks and the stored actor."""
    ck_path = os.path.join(out_dir, "checkpoint.bin")
    ck = ckpt.load(ck_path)
    if ck.config_hash != cfg.config_hash():
        raise ckpt.CheckpointError("config does not match checkpoint")
    specs = build_suite(cfg)
    masks = allocate_suite(cfg, specs)
    agent = SacAgent(OBS_DIM, ACT_DIM, cfg.sac_config(),
                     seed=_derive_seed("run", cfg.seed))
    _restore_actor(agent, ck)
    ledger = FrozenLedger(agent.actor.layer_shapes())
    out = []
    for k in range(ck.task_cursor):
        ctx = _task_context(cfg, masks[k], ledger)
        ledger.commit_task(masks[k])
        env = PointPushEnv(specs[k], seed=_derive_seed("eval-env", cfg.seed, k))
        rate = evaluate(agent, ctx, env, cfg.eval_episodes,
                        eval_seed=_derive_seed("eval", cfg.seed, k))
        out.append((specs[k].task_id, rate))
    return out


# -- single-task baselines ---------------------------------------------------


def baseline_key(cfg: RunConfig, spec: TaskSpec) -> str:
    """Cache key over the task spec and everything that shapes a baseline
    run (SAC config, budget, seed)."""
    payload = json.dumps({
        "spec": dataclasses.asdict(spec),
        "sac": dataclasses.asdict(cfg.sac_config()),
        "steps": cfg.steps_per_task,
        "seed": cfg.seed,
    }, sort_keys=True)
    return hashlib.blake2b(payload.encode(), digest_size=16).hexdigest()


def _baseline_path(cache_dir, cfg, spec):
    return os.path.join(cache_dir, f"baseline_{baseline_key(cfg, spec)}.csv")


def run_baselines(cfg: RunConfig, cache_dir) -> list[EvalCurve]:
    """Train a fresh dense single-task SAC agent per task over [0, delta]
    and cache the eval curve. Cached curves are reused by key."""
    os.makedirs(cache_dir, exist_ok=True)
    specs = build_suite(cfg)
    curves = []
    for k, spec in enumerate(specs):
        path = _baseline_path(cache_dir, cfg, spec)
        if os.path.exists(path):
            curves.append(_read_baseline(path, spec.task_id))
            continue
        log.info("baseline for task %d (%s)", spec.task_id, spec.description)
        agent = SacAgent(OBS_DIM, ACT_DIM, cfg.sac_config(),
                         seed=_derive_seed("baseline", cfg.seed, k))
        ctx = dense_context(agent.actor.widths)
        env = PointPushEnv(spec, seed=_derive_seed("env", cfg.seed, k))
        eval_env = PointPushEnv(spec,
                                seed=_derive_seed("eval-env", cfg.seed, k))
        samples = [(0, evaluate(agent, ctx, eval_env, cfg.eval_episodes,
                                eval_seed=_derive_seed("eval", cfg.seed, k)))]
        result = train_task(
            agent, env, ctx, DormantConfig(variant="off"),
            steps=cfg.steps_per_task,
            task_seed=_derive_seed("baseline-task", cfg.seed, k),
            eval_hook=lambda t: evaluate(
                agent, ctx, eval_env, cfg.eval_episodes,
                eval_seed=_derive_seed("eval", cfg.seed, k)))
        samples += result.eval_curve
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write("step,success_rate\n")
            for step, rate in samples:
                fh.write(f"{step},{rate:.6f}\n")
        os.replace(tmp, path)
        curves.append(EvalCurve(task_id=spec.task_id,
                                samples=[(float(s), r) for s, r in samples]))
    return curves


def _read_baseline(path, task_id: int) -> EvalCurve:
    samples = []
    with open(path) as fh:
        header = fh.readline()
        for line in fh:
            if line.strip():
                s, r = line.strip().split(",")
                samples.append((float(s), float(r)))
    return EvalCurve(task_id=task_id, samples=samples)


def load_baselines(cfg: RunConfig, specs) -> list[EvalCurve] | None:
    """Cached baseline curves for all tasks, or None if any is missing."""
    if cfg.baseline_dir is None:
        return None
    out = []
    for spec in specs:
        path = _baseline_path(cfg.baseline_dir, cfg, spec)
        if not os.path.exists(path):
            log.warning("no cached baseline for task %d; FT omitted",
                        spec.task_id)
            return None
        out.append(_read_baseline(path, spec.task_id))
    return out


# -- ablations + sweeps ------------------------------------------------------


def ablation_arms(cfg: RunConfig) -> dict[str, RunConfig]:
    """The ablation grid as pure config toggles on the same code path."""
    return {
        "full": cfg,
        "no_beta": replace(cfg, beta=1.0),
        "no_dormant": replace(cfg, dormant_variant="off"),
        "global_only": replace(cfg, global_only=True),
        "redo": replace(cfg, dormant_variant="redo"),
    }


def sweep(cfg: RunConfig, out_dir) -> list[dict]:
    """Grid over cfg.sweep_values of cfg.sweep_parameter; arms share seeds
    and failures stay isolated per arm."""
    if not cfg.sweep_values:
        raise ConfigError("sweep_values must be non-empty")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for value in cfg.sweep_values:
        arm_cfg = replace(cfg, **{cfg.sweep_parameter: value})
        arm_dir = os.path.join(out_dir,
                               f"{cfg.sweep_parameter}_{value:g}")
        row = {"parameter": cfg.sweep_parameter, "value": value}
        try:
            art = run_sequence(arm_cfg, arm_dir)
            row.update(P=art.metrics.P, F=art.metrics.F,
                       FT=art.metrics.FT_mean, error="")
        except Exception as exc:   # isolate arm failures
            log.exception("sweep arm %s=%s failed", cfg.sweep_parameter, value)
            row.update(P=float("nan"), F=float("nan"), FT=float("nan"),
                       error=str(exc))
        rows.append(row)
    with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
        fh.write("parameter,value,P,F,FT,error\n")
        for r in rows:
            fh.write(f"{r['parameter']},{r['value']:g},{r['P']:.6f},"
                     f"{r['F']:.6f},{r['FT']:.6f},{r['error']}\n")
    return rows


# -- mask export -------------------------------------------------------------


def export_masks(checkpoint_path, out_dir):
    """Write per-task per-layer neuron masks as 0/1 text files plus
    all-pairs cosine-similarity CSVs (one per hidden layer and the mean)."""
    ck = ckpt.load(checkpoint_path)
    os.makedirs(out_dir, exist_ok=True)
    mask_sets = mask_sets_from_checkpoint(ck)
    n = len(mask_sets)
    if n == 0:
        raise ckpt.CheckpointError("checkpoint contains no completed tasks")
    n_layers = len(mask_sets[0].phi)
    for ms in mask_sets:
        for l, phi in enumerate(ms.phi):
            path = os.path.join(out_dir, f"task{ms.task_id}_layer{l}.txt")
            with open(path, "w") as fh:
                fh.write("".join("1" if b else "0" for b in phi.bits) + "\n")
    layers = list(range(1, n_layers - 1)) + ["mean"]
    for layer in layers:
        sim = np.ones((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                sim[i, j] = sim[j, i] = mask_similarity(
                    mask_sets[i], mask_sets[j], layer=layer)
        path = os.path.join(out_dir, f"similarity_{layer}.csv")
        with open(path, "w") as fh:
            fh.write(",".join(str(ms.task_id) for ms in mask_sets) + "\n")
            for i in range(n):
                fh.write(",".join(f"{sim[i, j]:.6f}" for j in range(n)) + "\n")
    manifest = {
        "n_tasks": n,
        "actor_widths": list(ck.actor_widths),
        "run_seed": ck.run_seed,
        "dict_seed": ck.dict_seed,
        "embed_dim": ck.embed_dim,
        "beta": ck.beta,
        "neurons_per_layer": [[int(p.bits.sum()) for p in ms.phi]
                              for ms in mask_sets],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def load_mask_file(path) -> np.ndarray:
    with open(path) as fh:
        line = fh.readline().strip()
    if not line or set(line) - {"0", "1"}:
        raise ckpt.CheckpointError(f"{path}: not a 0/1 mask row")
    return np.array([c == "1" for c in line], dtype=bool)
