"""The two ablation studies: prompt ladder and k-shot sensitivity.

Each plan cell is one full detection run through the batch pipeline;
cells execute sequentially and reuse the pipeline's cache, so an
interrupted sweep resumes without re-querying completed cells.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .dataset import Label, Manifest
from .errors import ConfigError, KTooLargeError
from .metrics import ScoredSample, compute_acc, compute_rej
from .pipeline import BatchConfig, QueryConfig, ResponseCache, RunRecord, Stage, run_batch
from .prompts import Exemplar, ShotConfig, load_builtin_prompt
from .provider import Provider


class AblationKind(str, Enum):
    PROMPT_LADDER = "prompt_ladder"
    KSHOT = "kshot"


@dataclass
class AblationPlan:
    kind: AblationKind
    manifest: Manifest
    provider: Provider
    rounds: int = 5
    ladder_ranks: tuple[int, ...] = (1, 2, 3, 4, 5)
    k_values: tuple[int, ...] = (0, 1, 2, 4)
    repeats: int = 3
    base_seed: int = 0
    pool: tuple[Exemplar, ...] = ()
    fixed_shots: Optional[ShotConfig] = None  # ladder runs hold shots fixed
    ladder_rank_for_kshot: int = 4
    workers: int = 4
    cache: Optional[ResponseCache] = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.kind is AblationKind.KSHOT and self.k_values:
            if max(self.k_values) > len(self.pool):
                raise KTooLargeError(
                    f"k={max(self.k_values)} exceeds pool of {len(self.pool)}"
                )


def _detection_metrics(record: RunRecord, manifest: Manifest) -> tuple[Optional[float], float]:
    labels = {s.id: s.label for s in manifest.entries}
    scored = [
        ScoredSample(sid, d.score, labels[sid])
        for sid, d in record.detection.items()
        if not d.rejected
    ]
    n_rejected = sum(1 for d in record.detection.values() if d.rejected)
    acc = compute_acc(scored)
    rej = compute_rej(len(record.detection), n_rejected)
    return acc, rej


def _run_cell(plan: AblationPlan, spec, shots: ShotConfig) -> RunRecord:
    config = BatchConfig(
        detect=QueryConfig(
            provider=plan.provider,
            prompt_spec=spec,
            shots=shots,
            rounds=plan.rounds,
            cache=plan.cache,
        ),
        workers=plan.workers,
    )
    return run_batch(plan.manifest, config, stages={Stage.DETECT})


def run_prompt_ladder(plan: AblationPlan) -> list[dict]:
    """One detection run per ladder rank with fixed shots.

    Rows: rank, token_count, acc, rej, prompt_tokens, completion_tokens,
    sample_ids (recorded for auditability).
    """
    if plan.kind is not AblationKind.PROMPT_LADDER:
        raise ConfigError("plan kind must be prompt_ladder")
    shots = plan.fixed_shots or ShotConfig(k=0)
    rows = []
    sample_ids = [s.id for s in plan.manifest.entries]
    for rank in plan.ladder_ranks:
        spec = load_builtin_prompt(Stage.DETECT, ladder_rank=rank)
        record = _run_cell(plan, spec, shots)
        acc, rej = _detection_metrics(record, plan.manifest)
        rows.append(
            {
                "rank": rank,
                "token_count": spec.token_count(),
                "acc": acc,
                "rej": rej,
                "prompt_tokens": record.usage["prompt_tokens"],
                "completion_tokens": record.usage["completion_tokens"],
                "sample_ids": sample_ids,
            }
        )
    return rows


def run_kshot_sweep(plan: AblationPlan) -> list[dict]:
    """For each k, `repeats` runs seeded base_seed + repeat index.

    Emits exactly `repeats` per-repeat rows followed by one mean row per
    k. k=0 has no sampling randomness, so its repeat rows are identical.
    """
    if plan.kind is not AblationKind.KSHOT:
        raise ConfigError("plan kind must be kshot")
    spec = load_builtin_prompt(Stage.DETECT, ladder_rank=plan.ladder_rank_for_kshot)
    sample_ids = [s.id for s in plan.manifest.entries]
    rows = []
    for k in plan.k_values:
        accs, rejs = [], []
        for r in range(plan.repeats):
            seed = plan.base_seed + r
            shots = ShotConfig(k=k, pool=plan.pool, seed=seed)
            record = _run_cell(plan, spec, shots)
            acc, rej = _detection_metrics(record, plan.manifest)
            accs.append(acc)
            rejs.append(rej)
            rows.append(
                {
                    "k": k,
                    "repeat": r,
                    "seed": seed,
                    "acc": acc,
                    "rej": rej,
                    "prompt_tokens": record.usage["prompt_tokens"],
                    "completion_tokens": record.usage["completion_tokens"],
                    "sample_ids": sample_ids,
                }
            )
        mean = lambda xs: (sum(xs) / len(xs)) if all(x is not None for x in xs) else None
        rows.append(
            {
                "k": k,
                "repeat": "mean",
                "seed": None,
                "acc": mean(accs),
                "rej": mean(rejs),
                "prompt_tokens": None,
                "completion_tokens": None,
                "sample_ids": sample_ids,
            }
        )
    return rows


def kshot_deltas(rows: list[dict]) -> dict[str, float]:
    """Mean-ACC gains between successive k values (e.g. '0->1')."""
    means = {row["k"]: row["acc"] for row in rows if row["repeat"] == "mean"}
    ks = sorted(means)
    return {
        f"{a}->{b}": means[b] - means[a]
        for a, b in zip(ks, ks[1:])
        if means[a] is not None and means[b] is not None
    }


def table_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row.get(c, "") for c in columns])
    return buf.getvalue()
