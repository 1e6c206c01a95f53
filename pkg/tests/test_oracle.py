import math

import pytest

from llmforensics.errors import ConfigError, ToleranceExceededError
from llmforensics.oracle import (
    OracleScenario,
    ValidationResult,
    build_synthetic_manifest,
    expected_auc,
    expected_full_rejection_rate,
    validate_pipeline,
)
from llmforensics.provider import SyntheticBehavior


def test_expected_auc_degenerate_cases():
    # identical rates -> chance
    b = SyntheticBehavior(yes_rate_fake=0.5, yes_rate_real=0.5)
    assert expected_auc(b, 5) == pytest.approx(0.5, abs=1e-12)
    # perfectly separable
    b = SyntheticBehavior(yes_rate_fake=1.0, yes_rate_real=0.0)
    assert expected_auc(b, 5) == pytest.approx(1.0, abs=1e-12)


def test_expected_auc_symmetry():
    a = expected_auc(SyntheticBehavior(yes_rate_fake=0.8, yes_rate_real=0.3), 5)
    b = expected_auc(SyntheticBehavior(yes_rate_fake=0.3, yes_rate_real=0.8), 5)
    assert a + b == pytest.approx(1.0, abs=1e-12)


def test_expected_auc_single_round_closed_form():
    # rounds=1: AUC = pf*(1-pr) + 0.5*(pf*pr + (1-pf)*(1-pr))
    pf, pr = 0.9, 0.1
    closed = pf * (1 - pr) + 0.5 * (pf * pr + (1 - pf) * (1 - pr))
    got = expected_auc(SyntheticBehavior(yes_rate_fake=pf, yes_rate_real=pr), 1)
    assert got == pytest.approx(closed, abs=1e-12)


def test_expected_auc_reference_value():
    # The default scenario, checked against an independent enumeration.
    b = SyntheticBehavior(yes_rate_fake=0.9, yes_rate_real=0.1)
    pf = [math.comb(5, i) * 0.9**i * 0.1 ** (5 - i) for i in range(6)]
    pr = [math.comb(5, i) * 0.1**i * 0.9 ** (5 - i) for i in range(6)]
    ref = sum(
        wf * wr * (1.0 if i > j else 0.5 if i == j else 0.0)
        for i, wf in enumerate(pf)
        for j, wr in enumerate(pr)
    )
    assert expected_auc(b, 5) == pytest.approx(ref, abs=1e-15)
    assert expected_auc(b, 5) > 0.99


def test_expected_auc_rejects_certain_refusal():
    with pytest.raises(ConfigError):
        expected_auc(SyntheticBehavior(reject_rate=1.0), 5)


def test_expected_full_rejection_rate():
    b = SyntheticBehavior(reject_rate=0.3)
    assert expected_full_rejection_rate(b, 5) == pytest.approx(0.3**5)
    assert expected_full_rejection_rate(SyntheticBehavior(reject_rate=0.0), 5) == 0.0


def test_build_synthetic_manifest(tmp_path):
    m = build_synthetic_manifest(3, 4, tmp_path)
    assert len(m) == 7
    ids = [s.id for s in m.entries]
    assert ids[0] == "real_00000" and ids[-1] == "fake_00003"
    assert all(s.image_path.is_file() for s in m.entries)


def test_validate_pipeline_passes(tmp_path):
    scenario = OracleScenario(
        n_real=150,
        n_fake=150,
        behavior=SyntheticBehavior(yes_rate_fake=0.9, yes_rate_real=0.1, seed=0),
    )
    result = validate_pipeline(scenario, workdir=tmp_path)
    assert isinstance(result, ValidationResult)
    assert result.passed
    assert abs(result.measured_auc - result.expected_auc) <= 0.02
    assert result.measured_rej == 0.0


def test_validate_pipeline_detects_regression(tmp_path):
    # An impossibly tight tolerance turns ordinary sampling noise into a
    # failure, exercising the error path end to end.
    scenario = OracleScenario(
        n_real=80,
        n_fake=80,
        behavior=SyntheticBehavior(yes_rate_fake=0.9, yes_rate_real=0.1, seed=1),
        auc_tolerance=1e-9,
    )
    with pytest.raises(ToleranceExceededError) as excinfo:
        validate_pipeline(scenario, workdir=tmp_path)
    assert excinfo.value.measured is not None
    assert excinfo.value.expected is not None
