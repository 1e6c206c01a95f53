"""Statistical end-to-end validation against analytically known behavior.

The synthetic provider answers yes/no with configured probabilities, so
the decision-score distributions are binomial and the AUC the pipeline
should measure can be computed exactly by enumeration before the run.
A regression anywhere on the prompt -> provider -> parser -> score -> AUC
path shows up as a tolerance failure here, not just in unit fixtures.
"""

from __future__ import annotations

import math
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from .dataset import (
    Content,
    Generator,
    ImageSample,
    Label,
    Manifest,
    Scope,
)
from .errors import ConfigError, ToleranceExceededError
from .metrics import ScoredSample, compute_auc, compute_rej
from .pipeline import BatchConfig, QueryConfig, Stage, run_batch
from .prompts import ShotConfig, load_builtin_prompt
from .provider import ProviderConfig, ProviderKind, SyntheticBehavior, SyntheticProvider


@dataclass(frozen=True)
class OracleScenario:
    n_real: int
    n_fake: int
    behavior: SyntheticBehavior
    rounds: int = 5
    auc_tolerance: float = 0.02
    rej_tolerance: float = 0.03


def _binom_pmf(n: int, p: float) -> list[float]:
    return [math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(n + 1)]


def expected_auc(behavior: SyntheticBehavior, rounds: int) -> float:
    """Exact AUC (fraction) of Binom(rounds, p_fake)/rounds vs the real
    counterpart, half credit on ties, by direct enumeration over the
    (rounds+1)^2 outcome pairs."""
    if behavior.reject_rate >= 1.0:
        raise ConfigError("reject_rate must be < 1 for an AUC to exist")
    pf = _binom_pmf(rounds, behavior.yes_rate_fake)
    pr = _binom_pmf(rounds, behavior.yes_rate_real)
    auc = 0.0
    for i, wf in enumerate(pf):
        for j, wr in enumerate(pr):
            if i > j:
                auc += wf * wr
            elif i == j:
                auc += 0.5 * wf * wr
    return auc


def expected_full_rejection_rate(behavior: SyntheticBehavior, rounds: int) -> float:
    """Probability every round of a sample is refused: reject_rate**rounds."""
    return behavior.reject_rate**rounds


@dataclass
class ValidationResult:
    passed: bool
    measured_auc: float
    expected_auc: float
    measured_rej: float
    expected_rej: float


def build_synthetic_manifest(n_real: int, n_fake: int, workdir: Path) -> Manifest:
    """Manifest of n_real + n_fake samples all sharing one tiny image.

    The synthetic provider keys its draws on sample ids, so one image file
    suffices while the real prompt/encode path still runs.
    """
    workdir.mkdir(parents=True, exist_ok=True)
    img_path = workdir / "probe.png"
    Image.new("RGB", (8, 8), (120, 60, 200)).save(img_path)
    entries = []
    for i in range(n_real):
        entries.append(
            ImageSample(
                id=f"real_{i:05d}",
                image_path=img_path,
                label=Label.REAL,
                dataset_name="synthetic_real",
            )
        )
    for i in range(n_fake):
        entries.append(
            ImageSample(
                id=f"fake_{i:05d}",
                image_path=img_path,
                label=Label.FAKE,
                generator=Generator.DIFFUSION,
                scope=Scope.GLOBAL,
                content=Content.GENERAL,
                dataset_name="synthetic_fake",
            )
        )
    return Manifest(entries=tuple(entries), source_path=workdir / "synthetic")


def validate_pipeline(scenario: OracleScenario, workdir: Path | None = None) -> ValidationResult:
    """Run the full detect pipeline on a synthetic population and compare
    the measured AUC and rejection rate to their analytic values.

    Raises ToleranceExceededError when a bound is missed.
    """
    tmp = None
    if workdir is None:
        tmp = tempfile.mkdtemp(prefix="llmforensics_oracle_")
        workdir = Path(tmp)
    try:
        manifest = build_synthetic_manifest(scenario.n_real, scenario.n_fake, workdir)
        provider = SyntheticProvider(
            ProviderConfig(kind=ProviderKind.SYNTHETIC, model_id="synthetic"),
            scenario.behavior,
        )
        config = BatchConfig(
            detect=QueryConfig(
                provider=provider,
                prompt_spec=load_builtin_prompt(Stage.DETECT),
                shots=ShotConfig(k=0),
                rounds=scenario.rounds,
            ),
            workers=8,
        )
        record = run_batch(manifest, config, stages={Stage.DETECT})
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)

    labels = {s.id: s.label for s in manifest.entries}
    scored = [
        ScoredSample(sid, d.score, labels[sid])
        for sid, d in record.detection.items()
        if not d.rejected
    ]
    n_rejected = sum(1 for d in record.detection.values() if d.rejected)
    measured_auc, _ = compute_auc(scored)
    measured_auc /= 100.0
    measured_rej = compute_rej(len(record.detection), n_rejected) / 100.0

    exp_auc = expected_auc(scenario.behavior, scenario.rounds)
    exp_rej = expected_full_rejection_rate(scenario.behavior, scenario.rounds)
    if abs(measured_auc - exp_auc) > scenario.auc_tolerance:
        raise ToleranceExceededError(
            f"AUC {measured_auc:.4f} vs expected {exp_auc:.4f} "
            f"(tol {scenario.auc_tolerance})",
            measured=measured_auc,
            expected=exp_auc,
        )
    if abs(measured_rej - exp_rej) > scenario.rej_tolerance:
        raise ToleranceExceededError(
            f"REJ {measured_rej:.4f} vs expected {exp_rej:.4f} "
            f"(tol {scenario.rej_tolerance})",
            measured=measured_rej,
            expected=exp_rej,
        )
    return ValidationResult(True, measured_auc, exp_auc, measured_rej, exp_rej)
