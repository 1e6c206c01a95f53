import random

import pytest
from hypothesis import given, settings, strategies as st

from llmforensics.dataset import Label
from llmforensics.errors import OneClassOnlyError
from llmforensics.metrics import (
    RocPoint,
    ScoredSample,
    aggregate_localization,
    compute_acc,
    compute_auc,
    compute_method_acc,
    compute_rej,
    roc_points_csv,
    summarize_detection,
    trapezoid_auc,
)


def _scored(pairs):
    return [
        ScoredSample(f"s{i}", score, label)
        for i, (score, label) in enumerate(pairs)
    ]


def pairwise_auc(scored):
    """O(n^2) reference: P(fake > real) + 0.5 * P(tie), in percent."""
    fakes = [s.score for s in scored if s.label is Label.FAKE]
    reals = [s.score for s in scored if s.label is Label.REAL]
    wins = sum(1.0 if f > r else 0.5 if f == r else 0.0 for f in fakes for r in reals)
    return wins / (len(fakes) * len(reals)) * 100.0


def test_acc_basic():
    scored = _scored(
        [
            (0.8, Label.FAKE),
            (0.6, Label.FAKE),
            (0.4, Label.FAKE),  # miss
            (0.2, Label.REAL),
            (0.5, Label.REAL),  # miss: 0.5 >= threshold predicts fake
        ]
    )
    assert compute_acc(scored) == pytest.approx(60.0)
    assert compute_acc([]) is None


def test_acc_threshold_boundary():
    s = _scored([(0.5, Label.FAKE)])
    assert compute_acc(s, threshold=0.5) == 100.0


def test_auc_hand_case():
    # fakes 0.9/0.7, reals 0.3/0.1 -> perfect separation
    scored = _scored([(0.9, Label.FAKE), (0.7, Label.FAKE), (0.3, Label.REAL), (0.1, Label.REAL)])
    auc, points = compute_auc(scored)
    assert auc == pytest.approx(100.0, abs=1e-12)
    assert points[0] == RocPoint(float("inf"), 0.0, 0.0)
    assert points[-1] == RocPoint(0.1, 1.0, 1.0)


def test_auc_with_ties():
    # one fake ties one real at 0.5: pairwise = (1 + 0.5 + 1 + 1)/4 = 0.875
    scored = _scored(
        [(0.8, Label.FAKE), (0.5, Label.FAKE), (0.5, Label.REAL), (0.2, Label.REAL)]
    )
    auc, _ = compute_auc(scored)
    assert auc == pytest.approx(87.5, abs=1e-12)


def test_auc_one_class_raises():
    with pytest.raises(OneClassOnlyError):
        compute_auc(_scored([(0.9, Label.FAKE)]))


def test_auc_against_pairwise_oracle_random():
    rng = random.Random(1234)
    for trial in range(50):
        n = rng.randint(2, 60)
        pairs = []
        has = {Label.FAKE: False, Label.REAL: False}
        for _ in range(n):
            label = rng.choice([Label.FAKE, Label.REAL])
            has[label] = True
            # five-round score lattice plus some continuous values
            score = rng.choice([0.0, 0.2, 0.4, 0.6, 0.8, 1.0, rng.random()])
            pairs.append((score, label))
        if not (has[Label.FAKE] and has[Label.REAL]):
            continue
        scored = _scored(pairs)
        auc, points = compute_auc(scored)
        assert auc == pytest.approx(pairwise_auc(scored), abs=1e-12)
        assert trapezoid_auc(points) == pytest.approx(auc, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.sampled_from([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]), min_size=1, max_size=20),
    st.lists(st.sampled_from([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]), min_size=1, max_size=20),
)
def test_auc_properties(fake_scores, real_scores):
    scored = _scored([(s, Label.FAKE) for s in fake_scores] + [(s, Label.REAL) for s in real_scores])
    auc, points = compute_auc(scored)
    assert 0.0 <= auc <= 100.0
    assert auc == pytest.approx(pairwise_auc(scored), abs=1e-12)
    assert trapezoid_auc(points) == pytest.approx(auc, abs=1e-12)
    # ROC is monotone from (0,0) to (1,1)
    assert (points[0].fpr, points[0].tpr) == (0.0, 0.0)
    assert (points[-1].fpr, points[-1].tpr) == (1.0, 1.0)
    for a, b in zip(points, points[1:]):
        assert b.fpr >= a.fpr and b.tpr >= a.tpr


def test_auc_label_flip_symmetry():
    scored = _scored(
        [(0.9, Label.FAKE), (0.4, Label.FAKE), (0.6, Label.REAL), (0.1, Label.REAL)]
    )
    flipped = [
        ScoredSample(s.sample_id, s.score, Label.REAL if s.label is Label.FAKE else Label.FAKE)
        for s in scored
    ]
    a, _ = compute_auc(scored)
    b, _ = compute_auc(flipped)
    assert a + b == pytest.approx(100.0, abs=1e-12)


def test_rej():
    assert compute_rej(10, 1) == pytest.approx(10.0)
    assert compute_rej(0, 0) == 0.0


def test_roc_csv_round_trips():
    _, points = compute_auc(
        _scored([(0.8, Label.FAKE), (0.2, Label.REAL), (0.6, Label.FAKE), (0.4, Label.REAL)])
    )
    text = roc_points_csv(points)
    lines = text.splitlines()
    assert lines[0] == "threshold,fpr,tpr"
    parsed = [RocPoint(*(float(x) for x in l.split(","))) for l in lines[1:]]
    assert parsed == points  # repr() floats parse back exactly


def test_summarize_per_dataset_pooling():
    scored = [
        ScoredSample("f1", 0.9, Label.FAKE, "setA"),
        ScoredSample("f2", 0.7, Label.FAKE, "setA"),
        ScoredSample("f3", 0.3, Label.FAKE, "setB"),
        ScoredSample("r1", 0.1, Label.REAL, "reals"),
        ScoredSample("r2", 0.5, Label.REAL, "reals"),
    ]
    summary = summarize_detection(scored, n_rejected=1, rejected_datasets={"reals": 1})
    assert summary.n_total == 6
    assert summary.rej == pytest.approx(100.0 / 6)
    # fake-only dataset AUC pools against the run's reals
    set_a = summary.per_dataset["setA"]
    assert set_a.auc == pytest.approx(
        pairwise_auc(
            [s for s in scored if s.dataset_name == "setA" or s.label is Label.REAL]
        ),
        abs=1e-12,
    )
    # real-only dataset has no AUC
    assert summary.per_dataset["reals"].auc is None
    assert summary.per_dataset["reals"].n_rejected == 1
    d = summary.to_dict()
    assert set(d["per_dataset"]) == {"setA", "setB", "reals"}


def test_method_acc():
    preds = [("a", "gan"), ("b", "diffusion"), ("c", "unknown"), ("d", "gan")]
    truth = {"a": "gan", "b": "gan", "c": "diffusion", "d": "gan"}
    dataset_of = {"a": "x", "b": "x", "c": "y", "d": "y"}
    out = compute_method_acc(preds, truth, dataset_of)
    assert out == {"x": pytest.approx(50.0), "y": pytest.approx(50.0)}


def test_aggregate_localization():
    out = aggregate_localization(
        [("a", 80.0), ("b", 60.0), ("c", 100.0)], {"a": "x", "b": "x", "c": "y"}
    )
    assert out == {"x": pytest.approx(70.0), "y": pytest.approx(100.0)}
