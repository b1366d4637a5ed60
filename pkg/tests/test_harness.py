import json
import os

import numpy as np
import pytest

import sparserl.checkpoint as ckpt
from sparserl import harness
from sparserl.cli import EXIT_CONFIG, EXIT_FORMAT, EXIT_OK, main
from sparserl.harness import ConfigError, RunConfig, load_config

MICRO = dict(
    n_tasks=2, steps_per_task=400, eval_interval=200, eval_episodes=2,
    exploratory_steps=64, buffer_capacity=400, batch_size=32,
    reset_interval=150, state_window=64, dormant_sample_batch=32,
    actor_hidden=[32, 32], critic_hidden=[16, 16],
)


def micro_cfg(**over):
    return harness.config_from_dict({**MICRO, **over})


def write_cfg(tmp_path, **over):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**MICRO, **over}))
    return str(path)


# -- config ------------------------------------------------------------------


def test_defaults_are_reference_values():
    cfg = RunConfig()
    assert cfg.beta == 0.3
    assert cfg.tau == 0.1
    assert cfg.lr == 1e-3
    assert cfg.batch_size == 256
    assert cfg.discount == 0.99
    assert cfg.target_interp == 5e-3


def test_load_config_with_seed_override(tmp_path):
    path = write_cfg(tmp_path, seed=1)
    assert load_config(path).seed == 1
    assert load_config(path, seed=9).seed == 9


@pytest.mark.parametrize("bad", [
    {"beta": 1.5}, {"tau": -1}, {"dormant_variant": "x"},
    {"lambda_global": 0}, {"n_tasks": 0}, {"nonsense_key": 1},
    {"sweep_parameter": "lr"}, {"actor_hidden": []},
])
def test_config_validation_rejects(bad, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**MICRO, **bad}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_rejects_non_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("beta = 0.3")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_hash_tracks_content():
    a = micro_cfg()
    b = micro_cfg()
    c = micro_cfg(beta=0.5)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_repeat_suite_reassigns_task_ids():
    cfg = micro_cfg(n_tasks=2, repeat_suite=2)
    specs = harness.build_suite(cfg)
    assert [s.task_id for s in specs] == [0, 1, 2, 3]
    assert specs[0].description == specs[2].description
    masks = harness.allocate_suite(cfg, specs)
    # second occurrence is a new task: its local prompt differs
    assert not np.array_equal(masks[0].phi_local[1].bits,
                              masks[2].phi_local[1].bits)


def test_embeddings_file_round_trip(tmp_path):
    cfg = micro_cfg(embed_dim=8)
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((2, 8))
    path = tmp_path / "emb.txt"
    path.write_text("\n".join(" ".join(f"{v:.8f}" for v in r) for r in rows))
    cfg2 = micro_cfg(embed_dim=8, embeddings_file=str(path))
    embs = harness.embed_suite(cfg2, harness.build_suite(cfg2))
    assert len(embs) == 2
    assert np.allclose(embs[0].values, rows[0] / np.linalg.norm(rows[0]))


# -- checkpoint format -------------------------------------------------------


def test_bit_packing_round_trip():
    rng = np.random.default_rng(0)
    for shape in [(1, 1), (3, 64), (5, 65), (7, 200)]:
        mat = rng.random(shape) < 0.5
        words = ckpt.pack_bits(mat)
        assert words.dtype == np.uint64
        assert words.shape == (shape[0], (shape[1] + 63) // 64)
        assert np.array_equal(ckpt.unpack_bits(words, shape), mat)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ck = ckpt.Checkpoint(
        config_hash="ab" * 32, task_cursor=2, beta=0.3, run_seed=5,
        dict_seed=7, embed_dim=64, actor_widths=[3, 4, 2],
        actor_W=[rng.standard_normal((4, 3)).astype(np.float32),
                 rng.standard_normal((2, 4)).astype(np.float32)],
        actor_b=[rng.standard_normal(4).astype(np.float32),
                 rng.standard_normal(2).astype(np.float32)],
        init_W=[np.zeros((4, 3), dtype=np.float32),
                np.zeros((2, 4), dtype=np.float32)],
        init_b=[np.zeros(4, dtype=np.float32), np.zeros(2, dtype=np.float32)],
        task_phi=[[np.ones(3, bool), rng.random(4) < 0.5, np.ones(2, bool)]
                  for _ in range(2)],
        task_param_masks=[[rng.random((4, 3)) < 0.5, rng.random((2, 4)) < 0.5]
                          for _ in range(2)],
        eval_rows=17)
    path = tmp_path / "ck.bin"
    ckpt.save(path, ck)
    got = ckpt.load(path)
    assert got.config_hash == ck.config_hash
    assert got.task_cursor == 2 and got.eval_rows == 17
    assert got.actor_widths == [3, 4, 2]
    for a, b in zip(got.actor_W, ck.actor_W):
        assert np.array_equal(a, b)
    for a, b in zip(got.task_phi[1], ck.task_phi[1]):
        assert np.array_equal(a, b)
    for a, b in zip(got.task_param_masks[0], ck.task_param_masks[0]):
        assert np.array_equal(a, b)


def test_checkpoint_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(path)
    path.write_bytes(b"SSDE\x63\x00\x00\x00")   # version 99
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(path)
    path.write_bytes(b"SSDE\x01\x00\x00\x00\x20")  # truncated after hash len
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(path)


# -- orchestration ------------------------------------------------------------


def test_allocate_only_matches_run_sequence_masks(tmp_path):
    cfg = micro_cfg(steps_per_task=150, eval_interval=150,
                    exploratory_steps=150)  # pure warm-up, fast
    report = harness.allocate_only(cfg)
    assert len(report["rows"]) == 2
    art = harness.run_sequence(cfg, tmp_path / "run")
    ck = ckpt.load(art.checkpoint_path)
    for ms, phis, pms in zip(report["masks"], ck.task_phi,
                             ck.task_param_masks):
        for phi, bits in zip(ms.phi, phis):
            assert np.array_equal(phi.bits, bits)
        for pm, bits in zip(ms.param_masks(), pms):
            assert np.array_equal(pm.bits, bits)


def test_run_sequence_outputs_and_stability(tmp_path):
    cfg = micro_cfg()
    art = harness.run_sequence(cfg, tmp_path / "run")
    out = str(tmp_path / "run")
    for name in ("config.json", "eval.csv", "dormant.csv", "metrics.csv",
                 "checkpoint.bin"):
        assert os.path.exists(os.path.join(out, name))
    assert json.load(open(os.path.join(out, "config.json")))["beta"] == 0.3
    assert len(art.curves) == 2
    assert art.metrics.F == 0.0           # structural zero forgetting
    # bit-exact re-evaluation of both tasks after the full sequence
    rates = dict(harness.reevaluate(cfg, out))
    for curve in art.curves:
        assert rates[curve.task_id] == curve.samples[-1][1]
    assert art.utilization_per_task == sorted(art.utilization_per_task)


def test_dormant_off_leaves_empty_diagnostics(tmp_path):
    cfg = micro_cfg(dormant_variant="off", steps_per_task=200)
    harness.run_sequence(cfg, tmp_path / "run")
    lines = open(tmp_path / "run" / "dormant.csv").read().strip().split("\n")
    assert lines == ["task_id,step,coords_reset"]


def test_resume_equivalence(tmp_path):
    cfg = micro_cfg(n_tasks=3)
    full = harness.run_sequence(cfg, tmp_path / "full")

    calls = []
    orig = harness.train_task

    def crash_on_third(*args, **kwargs):
        if len(calls) == 2:
            raise RuntimeError("simulated crash")
        calls.append(1)
        return orig(*args, **kwargs)

    harness.train_task = crash_on_third
    try:
        with pytest.raises(RuntimeError):
            harness.run_sequence(cfg, tmp_path / "crash")
    finally:
        harness.train_task = orig
    resumed = harness.run_sequence(cfg, tmp_path / "crash", resume=True)
    assert open(tmp_path / "full" / "eval.csv").read() == \
        open(tmp_path / "crash" / "eval.csv").read()
    assert open(tmp_path / "full" / "checkpoint.bin", "rb").read() == \
        open(tmp_path / "crash" / "checkpoint.bin", "rb").read()
    assert resumed.metrics.P == full.metrics.P
    assert resumed.metrics.F == full.metrics.F


def test_resume_refuses_config_mismatch(tmp_path):
    cfg = micro_cfg(steps_per_task=200)
    harness.run_sequence(cfg, tmp_path / "run")
    other = micro_cfg(steps_per_task=200, beta=0.7)
    with pytest.raises(ckpt.CheckpointError):
        harness.run_sequence(other, tmp_path / "run", resume=True)


def test_baselines_are_cached(tmp_path):
    cfg = micro_cfg(steps_per_task=200)
    cache = tmp_path / "bases"
    curves = harness.run_baselines(cfg, cache)
    assert len(curves) == 2
    assert curves[0].samples[0][0] == 0.0     # includes a step-0 sample
    files = sorted(os.listdir(cache))
    stamps = [os.path.getmtime(cache / f) for f in files]
    again = harness.run_baselines(cfg, cache)
    assert [os.path.getmtime(cache / f) for f in sorted(os.listdir(cache))] == stamps
    assert [c.samples for c in again] == [c.samples for c in curves]
    loaded = harness.load_baselines(
        harness.config_from_dict({**MICRO, "steps_per_task": 200,
                                  "baseline_dir": str(cache)}),
        harness.build_suite(cfg))
    assert [c.samples for c in loaded] == [c.samples for c in curves]


def test_metrics_with_baselines_produces_ft(tmp_path):
    cache = tmp_path / "bases"
    cfg = micro_cfg(steps_per_task=200, baseline_dir=str(cache))
    harness.run_baselines(cfg, cache)
    art = harness.run_sequence(cfg, tmp_path / "run")
    assert len(art.metrics.FT_per_task) == 2
    assert all(np.isfinite(v) or np.isnan(v) for v in art.metrics.FT_per_task)


def test_ablation_arms_are_config_toggles():
    arms = harness.ablation_arms(micro_cfg())
    assert set(arms) == {"full", "no_beta", "no_dormant", "global_only", "redo"}
    assert arms["no_beta"].beta == 1.0
    assert arms["no_dormant"].dormant_variant == "off"
    assert arms["global_only"].global_only
    assert arms["redo"].dormant_variant == "redo"
    assert arms["full"] == micro_cfg()


def test_sweep_runs_each_value_and_isolates_failures(tmp_path):
    cfg = micro_cfg(steps_per_task=150, eval_interval=150,
                    exploratory_steps=150,
                    sweep_parameter="beta", sweep_values=[0.3, 0.7])
    rows = harness.sweep(cfg, tmp_path / "sweep")
    assert [r["value"] for r in rows] == [0.3, 0.7]
    assert all(r["error"] == "" for r in rows)
    assert os.path.exists(tmp_path / "sweep" / "sweep.csv")
    # a sweep arm equals a plain run with that value
    direct = harness.run_sequence(micro_cfg(
        steps_per_task=150, eval_interval=150, exploratory_steps=150,
        sweep_parameter="beta", sweep_values=[0.3, 0.7], beta=0.3),
        tmp_path / "direct")
    assert rows[0]["P"] == direct.metrics.P


def test_export_masks_round_trip(tmp_path):
    cfg = micro_cfg(steps_per_task=150, eval_interval=150,
                    exploratory_steps=150, n_tasks=3)
    art = harness.run_sequence(cfg, tmp_path / "run")
    out = tmp_path / "masks"
    manifest = harness.export_masks(art.checkpoint_path, out)
    assert manifest["n_tasks"] == 3
    masks = harness.allocate_suite(cfg)
    for ms in masks:
        for l, phi in enumerate(ms.phi):
            loaded = harness.load_mask_file(
                out / f"task{ms.task_id}_layer{l}.txt")
            assert np.array_equal(loaded, phi.bits)
    # similarity CSV: 3x3, unit diagonal, matches recomputation
    from sparserl.allocation import mask_similarity
    lines = open(out / "similarity_mean.csv").read().strip().split("\n")
    grid = [list(map(float, row.split(","))) for row in lines[1:]]
    assert len(grid) == 3 and all(grid[i][i] == 1.0 for i in range(3))
    assert grid[0][1] == pytest.approx(
        mask_similarity(masks[0], masks[1]), abs=1e-6)


def test_export_masks_rejects_corrupt_checkpoint(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"garbage!")
    with pytest.raises(ckpt.CheckpointError):
        harness.export_masks(path, tmp_path / "out")


# -- CLI ----------------------------------------------------------------------


def test_cli_allocate_and_metrics(tmp_path, capsys):
    cfg_path = write_cfg(tmp_path, steps_per_task=150, eval_interval=150,
                         exploratory_steps=150)
    out = str(tmp_path / "out")
    assert main(["allocate", "--config", cfg_path, "--out", out]) == EXIT_OK
    assert os.path.exists(os.path.join(out, "allocation.csv"))
    run_dir = str(tmp_path / "run")
    assert main(["train", "--config", cfg_path, "--out", run_dir]) == EXIT_OK
    assert main(["metrics", "--config", cfg_path, "--out", run_dir]) == EXIT_OK
    assert main(["eval", "--config", cfg_path, "--out", run_dir]) == EXIT_OK
    captured = capsys.readouterr().out
    assert "P=" in captured


def test_cli_error_codes(tmp_path):
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text('{"beta": 9}')
    assert main(["train", "--config", str(bad_cfg),
                 "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"garbage!")
    assert main(["export-masks", str(junk),
                 "--out", str(tmp_path / "y")]) == EXIT_FORMAT
