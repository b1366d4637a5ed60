import numpy as np
import pytest

from sparserl.metrics import (
    EvalCurve,
    MetricsError,
    average_performance,
    compute_metrics,
    forgetting,
    forward_transfer,
    read_eval_csv,
    write_metrics_csv,
)


def flat(task_id, value, steps=(0, 100)):
    return EvalCurve(task_id, [(float(s), value) for s in steps])


def test_curve_validation():
    with pytest.raises(MetricsError):
        EvalCurve(0, [(0.0, 0.5), (0.0, 0.6)])  # non-increasing
    with pytest.raises(MetricsError):
        EvalCurve(0, [(0.0, 1.5)])              # out of range


def test_value_at_is_step_function():
    c = EvalCurve(0, [(0.0, 0.2), (10.0, 0.8), (20.0, 0.4)])
    assert c.value_at(0) == 0.2
    assert c.value_at(9.99) == 0.2
    assert c.value_at(10) == 0.8
    assert c.value_at(999) == 0.4
    with pytest.raises(MetricsError):
        c.value_at(-1)


def test_auc_matches_rectangle_sums():
    c = EvalCurve(0, [(0.0, 0.2), (10.0, 0.8), (20.0, 0.4)])
    # rectangles: [0,10)*0.2 + [10,20)*0.8 + [20,30)*0.4 over width 30
    assert c.auc(0, 30) == pytest.approx((10 * 0.2 + 10 * 0.8 + 10 * 0.4) / 30,
                                         abs=1e-12)
    assert c.auc(5, 15) == pytest.approx((5 * 0.2 + 5 * 0.8) / 10, abs=1e-12)
    with pytest.raises(MetricsError):
        c.auc(10, 10)


def test_auc_random_curves_match_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        steps = np.sort(rng.choice(np.arange(1, 200), size=8, replace=False))
        rates = rng.uniform(0, 1, 8)
        c = EvalCurve(0, [(0.0, float(rng.uniform()))] +
                      [(float(s), float(r)) for s, r in zip(steps, rates)])
        # brute force on a fine grid (left-edge sampling of the step curve)
        grid = np.arange(0, 200, dtype=float)
        dense = np.array([c.value_at(t) for t in grid])
        assert c.auc(0, 200) == pytest.approx(dense.mean(), abs=1e-12)


def test_average_performance():
    assert average_performance([flat(0, 1.0), flat(1, 1.0)], 50) == 1.0
    assert average_performance([flat(0, 1.0), flat(1, 0.0)], 50) == 0.5
    with pytest.raises(MetricsError):
        average_performance([], 0)


def test_forgetting_hand_cases():
    n, d = 3, 10.0
    stable = [EvalCurve(k, [(0.0, 0.7), (n * d, 0.7)]) for k in range(n)]
    assert forgetting(stable, d, n) == 0.0
    drop = [EvalCurve(k, [(0.0, 1.0), ((k + 1) * d, 1.0),
                          (n * d, 0.5) if (k + 1) < n else (n * d + 1, 1.0)])
            for k in range(n)]
    # tasks 1..n-1 drop 0.5, last task keeps 1.0
    assert forgetting(drop, d, n) == pytest.approx(0.5 * (n - 1) / n)
    with pytest.raises(MetricsError):
        forgetting(stable, d, n + 1)


def test_forward_transfer_closed_form():
    delta = 10.0
    curve = flat(0, 0.8, steps=(0, 10))
    base = flat(0, 0.5, steps=(0, 10))
    ft, auc, auc_b = forward_transfer(curve, base, delta, task_index=1)
    assert auc == pytest.approx(0.8, abs=1e-12)
    assert auc_b == pytest.approx(0.5, abs=1e-12)
    assert ft == pytest.approx(0.6, abs=1e-12)


def test_forward_transfer_identical_curves_is_zero():
    c = EvalCurve(0, [(0.0, 0.1), (4.0, 0.9), (10.0, 0.3)])
    ft, _, _ = forward_transfer(c, c, 10.0, task_index=1)
    assert ft == pytest.approx(0.0, abs=1e-12)


def test_forward_transfer_saturated_baseline_is_nan():
    ft, _, auc_b = forward_transfer(flat(0, 0.5), flat(0, 1.0), 100.0, 1)
    assert auc_b == 1.0
    assert np.isnan(ft)


def test_forward_transfer_sign_property():
    base = EvalCurve(0, [(0.0, 0.2), (30.0, 0.5), (60.0, 0.7)])
    above = EvalCurve(0, [(0.0, 0.3), (30.0, 0.6), (60.0, 0.8)])
    below = EvalCurve(0, [(0.0, 0.1), (30.0, 0.4), (60.0, 0.6)])
    assert forward_transfer(above, base, 100.0, 1)[0] > 0
    assert forward_transfer(below, base, 100.0, 1)[0] < 0


def test_compute_metrics_bundles_everything():
    d = 10.0
    curves = [flat(0, 1.0, steps=(0, 20)), flat(1, 0.5, steps=(10, 20))]
    bases = [flat(0, 0.5), flat(1, 0.25)]
    res = compute_metrics(curves, d, bases)
    assert res.P == pytest.approx(0.75)
    assert res.F == pytest.approx(0.0)
    assert res.FT_per_task[0] == pytest.approx(1.0)   # (1-0.5)/(1-0.5)
    assert res.FT_per_task[1] == pytest.approx(1.0 / 3.0)
    assert 0 <= min(res.AUC) and max(res.AUC) <= 1
    with pytest.raises(MetricsError):
        compute_metrics(curves, d, bases[:1])


def test_eval_csv_round_trip(tmp_path):
    path = tmp_path / "eval.csv"
    path.write_text("global_step,task_id,success_rate\n"
                    "0,0,0.100000\n100,0,0.900000\n100,1,0.200000\n")
    curves = read_eval_csv(path)
    assert [c.task_id for c in curves] == [0, 1]
    assert curves[0].samples == [(0.0, 0.1), (100.0, 0.9)]


def test_eval_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "eval.csv"
    path.write_text("step,task,rate\n")
    with pytest.raises(MetricsError):
        read_eval_csv(path)


def test_metrics_csv_output(tmp_path):
    res = compute_metrics([flat(0, 0.8, steps=(0, 10))], 10.0,
                          [flat(0, 0.5, steps=(0, 10))])
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, res)
    text = path.read_text()
    assert text.startswith("task_id,AUC,AUC_b,FT\n")
    assert "0,0.800000,0.500000,0.600000" in text
    assert "P=0.800000" in text
