import numpy as np
import pytest

from evidential_alignment.data import Dataset, SpuriousSpec, generate_synthetic
from evidential_alignment.evaluation import GroupMetrics, evaluate
from evidential_alignment.experiments import preset, run_pipeline, synthetic_splits
from evidential_alignment.model import EvidentialHead, forward_batch
from evidential_alignment.training import (
    SGD,
    ClassBalancedSampler,
    TrainConfig,
    calibrate,
    run_stage1,
    run_stage2,
    score_calibration,
    select_index,
    select_model,
)
from oracles import logistic_regression_accuracy


def _blobs(n=400, seed=0, sep=6.0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, 2)) + sep * y[:, None] * np.array([1.0, 0.5])
    return Dataset(X, y, n_classes=2)


def _metrics(avg, worst_class):
    return GroupMetrics(per_class_acc={0: worst_class, 1: 1.0}, average_acc=avg, worst_class_acc=worst_class)


def _spurious(seed=0, counts=None):
    counts = counts or {(0, 0): 900, (0, 1): 50, (1, 0): 50, (1, 1): 900}
    return generate_synthetic(SpuriousSpec(counts, seed=seed))


# -- config ---------------------------------------------------------------------


def test_config_validation():
    for bad in ({"lr1": 0}, {"t1_epochs": 0}, {"beta": -1}, {"calib_fraction": 0.0}, {"selection": "best"},
                {"loss_variant": "x"}, {"batch_size": 0}, {"eta": -1}, {"beta_grid": []}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    assert TrainConfig.from_dict(TrainConfig(beta=3.0).to_dict()) == TrainConfig(beta=3.0)


# -- stage 1 ------------------------------------------------------------------


def test_stage1_separable_blobs():
    data = _blobs()
    assert logistic_regression_accuracy(data.features, data.labels) >= 0.99
    head, trace = run_stage1(data, TrainConfig(t1_epochs=30, lr1=0.1, batch_size=32))
    assert len(trace) == 30
    assert np.mean(head.predict(data.features) == data.labels) >= 0.99


def test_stage1_regularization_raises_uncertainty():
    data, held = _blobs(seed=1, sep=3.0), _blobs(seed=2, sep=3.0)
    cfg = dict(t1_epochs=20, lr1=0.1, batch_size=32)
    h0, _ = run_stage1(data, TrainConfig(eta=0, **cfg))
    h1, _ = run_stage1(data, TrainConfig(eta=1, **cfg))
    u0 = forward_batch(h0, held.features).uncertainty.mean()
    u1 = forward_batch(h1, held.features).uncertainty.mean()
    assert u1 > u0


def test_stage1_single_sample_decreases():
    data = Dataset(np.array([[0.3, -1.2]]), np.array([1]), n_classes=2)
    _, trace = run_stage1(data, TrainConfig(t1_epochs=5, lr1=0.05, eta=0))
    assert all(b < a for a, b in zip(trace, trace[1:]))


def test_stage1_errors():
    data = _blobs()
    with pytest.raises(ValueError):
        run_stage1(data, TrainConfig(), head=EvidentialHead.init(3, 2))


def test_stage1_deterministic():
    data = _blobs(seed=3)
    a, ta = run_stage1(data, TrainConfig(t1_epochs=3, seed=9))
    b, tb = run_stage1(data, TrainConfig(t1_epochs=3, seed=9))
    assert a.flat().tobytes() == b.flat().tobytes() and ta == tb


# -- scoring ------------------------------------------------------------------


def test_scores_correct_and_zero_evidence():
    head = EvidentialHead(np.zeros((2, 1)), np.array([5.0, -800.0]))
    data = Dataset(np.zeros((2, 1)), np.array([0, 1]), n_classes=2)
    s = score_calibration(head, data)
    assert s.weights[0] == 1.0  # correct
    head0 = EvidentialHead(np.zeros((2, 1)), np.array([-800.0, -800.0]))
    s0 = score_calibration(head0, data)
    assert s0.uncertainty[1] == 1.0 and s0.weights[1] == 1.0  # misclassified, zero evidence


def test_scores_frozen():
    data = _spurious()
    head, _ = run_stage1(data, TrainConfig(t1_epochs=2))
    s = score_calibration(head, data)
    before = s.weights.copy()
    with pytest.raises(ValueError):
        s.weights[0] = 0.0
    run_stage2(head, data, s, TrainConfig(t2_epochs=2))
    assert np.array_equal(s.weights, before)


def test_minority_uncertainty_higher():
    data = _spurious(seed=4)
    head, _ = run_stage1(data, TrainConfig(t1_epochs=10))
    s = score_calibration(head, data)
    minority = data.labels != data.attributes
    assert s.uncertainty[minority].mean() > s.uncertainty[~minority].mean()


# -- sampler / optimizer ------------------------------------------------------


def test_class_balanced_frequency():
    labels = np.array([0] * 900 + [1] * 100)
    sampler = ClassBalancedSampler(labels, 2, np.random.default_rng(0))
    idx = sampler.sample(10_000)
    freq = np.mean(labels[idx] == 1)
    assert 0.48 <= freq <= 0.52


def test_class_balanced_missing_class():
    with pytest.raises(ValueError):
        ClassBalancedSampler(np.zeros(10, dtype=int), 2, np.random.default_rng(0))
    data = Dataset(np.zeros((3, 2)), np.zeros(3, dtype=int), n_classes=2)
    head = EvidentialHead.init(2, 2)
    with pytest.raises(ValueError):
        run_stage2(head, data, score_calibration(head, data), TrainConfig())


def test_sgd_single_step():
    head = EvidentialHead(np.array([[0.5], [0.0]]), np.zeros(2))
    SGD(0.1).step(head, np.array([[0.2], [0.0]]), np.zeros(2))
    assert head.weights[0, 0] == pytest.approx(0.48, abs=1e-16)


def test_proximal_step_closed_form():
    # one step on beta * (theta - a)^2 alone lands at a + (theta - a) / (1 + 2 lr beta)
    head = EvidentialHead(np.array([[2.0], [0.0]]), np.zeros(2))
    anchor = EvidentialHead(np.array([[1.0], [0.0]]), np.zeros(2))
    SGD(0.1).proximal_step(head, np.zeros((2, 1)), np.zeros(2), anchor, 5.0)
    assert head.weights[0, 0] == pytest.approx(1.0 + 1.0 / 2.0)


# -- stage 2 ------------------------------------------------------------------


def test_stage2_huge_beta_pins_to_theta1():
    data = _spurious(seed=5)
    head, _ = run_stage1(data, TrainConfig(t1_epochs=3))
    res = run_stage2(head, data, score_calibration(head, data), TrainConfig(t2_epochs=5, beta=1e6, lr2=0.1))
    assert np.linalg.norm(res.head.flat() - head.flat()) <= 1e-3


def test_stage2_beta_monotone_distance():
    data = _spurious(seed=6)
    head, _ = run_stage1(data, TrainConfig(t1_epochs=3))
    s = score_calibration(head, data)
    dists = [
        np.linalg.norm(run_stage2(head, data, s, TrainConfig(t2_epochs=10, beta=b, lr2=0.1)).head.flat() - head.flat())
        for b in (0.0, 10.0, 1e3)
    ]
    assert dists[0] >= dists[1] >= dists[2]


def test_stage2_all_correct_gives_unit_weights():
    data = _blobs(seed=7, sep=12.0)
    head, _ = run_stage1(data, TrainConfig(t1_epochs=30, batch_size=32))
    s = score_calibration(head, data)
    assert np.all(s.predicted == data.labels) and np.all(s.weights == 1.0)


def test_stage2_checkpoint_cadence_and_selection():
    data = _spurious(seed=8)
    head, _ = run_stage1(data, TrainConfig(t1_epochs=2))
    res = run_stage2(head, data, score_calibration(head, data), TrainConfig(t2_epochs=4), selection=data)
    assert len(res.checkpoints) == 4 and len(res.selection_metrics) == 4 and len(res.trace) == 4
    best = select_index(res.selection_metrics, "worst_class_acc")
    assert res.selected_epoch == best + 1


def test_stage2_improves_worst_group():
    splits = synthetic_splits(preset("synthetic")["data"], seed=0)
    cfg = TrainConfig.from_dict(preset("synthetic")["train"])
    result = run_pipeline(splits, cfg)
    assert result.final_metrics.worst_group_acc > result.erm_metrics.worst_group_acc


def test_calibrate_grid_needs_selection():
    data = _spurious()
    head = EvidentialHead.init(data.d, 2)
    with pytest.raises(ValueError):
        calibrate(head, data, score_calibration(head, data), TrainConfig(beta_grid=(0.0, 1.0)))


def test_pipeline_deterministic():
    splits = synthetic_splits(preset("synthetic")["data"], seed=1)
    cfg = TrainConfig.from_dict({**preset("synthetic")["train"], "t2_epochs": 5})
    a, b = run_pipeline(splits, cfg), run_pipeline(splits, cfg)
    assert a.theta1.flat().tobytes() == b.theta1.flat().tobytes()
    assert a.theta2.flat().tobytes() == b.theta2.flat().tobytes()
    assert a.final_metrics == b.final_metrics


# -- selection ----------------------------------------------------------------


def test_select_model_examples():
    assert select_model([("only", _metrics(0.5, 0.5))], "average_acc") == "only"
    assert select_model([("a", _metrics(0.9, 0.3)), ("b", _metrics(0.8, 0.6))], "worst_class_acc") == "b"
    # strategies disagree on this pair
    cands = [("a", _metrics(0.9, 0.3)), ("b", _metrics(0.8, 0.6))]
    assert select_model(cands, "average_acc") == "a"
    assert select_model([("a", _metrics(0.7, 0.5)), ("b", _metrics(0.7, 0.5))], "average_acc") == "a"


def test_select_worst_group_needs_attributes():
    with pytest.raises(ValueError):
        select_model([("a", _metrics(0.9, 0.3))], "worst_group_acc")
    with pytest.raises(ValueError):
        select_model([], "average_acc")
