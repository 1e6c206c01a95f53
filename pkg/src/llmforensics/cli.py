"""Operator-facing command line.

Subcommands mirror the pipeline stages (detect / analyze / judge / eval /
ablate) so a Stage-2 rerun can reuse a Stage-1 cache instead of burning
API budget. All artifacts land under --out with stable filenames and
embed the config hash and schema version.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Optional

import click

from . import metrics as metrics_mod
from .dataset import Label, Manifest, Scope, load_manifest
from .errors import AuthMissingError, ConfigError, ForensicsError, ManifestError
from .experiments import (
    AblationKind,
    AblationPlan,
    run_kshot_sweep,
    run_prompt_ladder,
    table_to_csv,
)
from .pipeline import (
    SCHEMA_VERSION,
    BatchConfig,
    CacheMode,
    QueryConfig,
    ResponseCache,
    RunRecord,
    run_batch,
)
from .prompts import (
    DEFAULT_K,
    DEFAULT_LADDER_RANK,
    ShotConfig,
    Stage,
    load_builtin_prompt,
    load_exemplar_pool,
)
from .provider import (
    HttpProvider,
    MockProvider,
    Provider,
    ProviderConfig,
    ProviderKind,
    SyntheticBehavior,
    SyntheticProvider,
)

LADDER_COLUMNS = ["rank", "token_count", "acc", "rej", "prompt_tokens", "completion_tokens"]
KSHOT_COLUMNS = ["k", "repeat", "seed", "acc", "rej", "prompt_tokens", "completion_tokens"]


def _fail(kind: str, message: str, code: int = 2) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def _config_hash(semantic: dict) -> str:
    blob = json.dumps(semantic, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _build_provider(opts: dict) -> Provider:
    kind = ProviderKind(opts["provider"])
    config = ProviderConfig(
        kind=kind,
        model_id=opts["model"],
        endpoint=opts.get("endpoint") or "",
        max_concurrency=opts["max_concurrency"],
        requests_per_minute=opts["rpm"],
    )
    if kind is ProviderKind.HTTP:
        provider = HttpProvider(config)
        provider._api_key()  # validate credentials before any work
        return provider
    if kind is ProviderKind.MOCK:
        if not opts.get("mock_script"):
            raise ConfigError("mock provider requires --mock-script")
        return MockProvider.from_jsonl(config, opts["mock_script"])
    behavior = SyntheticBehavior(
        yes_rate_fake=opts["yes_rate_fake"],
        yes_rate_real=opts["yes_rate_real"],
        reject_rate=opts["reject_rate"],
        seed=opts["synthetic_seed"],
    )
    return SyntheticProvider(config, behavior)


def _build_cache(opts: dict) -> Optional[ResponseCache]:
    mode = CacheMode(opts["cache"])
    if mode is CacheMode.OFF:
        return None
    cache_file = opts.get("cache_file") or str(Path(opts["out"]) / "cache.jsonl")
    return ResponseCache(cache_file, mode)


def _semantic_config(opts: dict, stages: list[str]) -> dict:
    """The provenance config embedded (and hashed) into every artifact.

    Output/cache locations are deliberately excluded: they do not affect
    results, and including them would break byte-identity between runs
    that only differ in where they write.
    """
    return {
        "manifest": str(opts["manifest_path"]),
        "provider": opts["provider"],
        "model": opts["model"],
        "rounds": opts["rounds"],
        "ladder_rank": opts["ladder_rank"],
        "k": opts["k"],
        "seed": opts["seed"],
        "stages": stages,
        "force": opts.get("force", False),
        "synthetic": {
            "yes_rate_fake": opts["yes_rate_fake"],
            "yes_rate_real": opts["yes_rate_real"],
            "reject_rate": opts["reject_rate"],
            "seed": opts["synthetic_seed"],
        }
        if opts["provider"] == "synthetic"
        else None,
    }


def _scored_samples(record: RunRecord, manifest: Manifest):
    labels = {s.id: s.label for s in manifest.entries}
    datasets = manifest.dataset_of()
    scored = [
        metrics_mod.ScoredSample(sid, d.score, labels[sid], datasets[sid])
        for sid, d in record.detection.items()
        if not d.rejected
    ]
    rejected_ds: dict[str, int] = {}
    for sid, d in record.detection.items():
        if d.rejected:
            rejected_ds[datasets[sid]] = rejected_ds.get(datasets[sid], 0) + 1
    return scored, rejected_ds


def _metrics_payload(record: RunRecord, manifest: Manifest) -> dict:
    scored, rejected_ds = _scored_samples(record, manifest)
    n_rejected = sum(rejected_ds.values())
    summary = metrics_mod.summarize_detection(scored, n_rejected, rejected_ds)

    truth = {
        s.id: s.generator.value
        for s in manifest.entries
        if s.label is Label.FAKE
    }
    predictions = [
        (sid, rec.report.method.value)
        for sid, rec in record.analysis.items()
        if sid in truth
    ]
    method_acc = metrics_mod.compute_method_acc(predictions, truth, manifest.dataset_of())

    localization = metrics_mod.aggregate_localization(
        [(sid, js.final_percent) for sid, js in record.judge.items()],
        manifest.dataset_of(),
    )
    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": record.config_hash,
        "detection": summary.to_dict(),
        "method_tracing_acc": dict(sorted(method_acc.items())),
        "localization_mean": dict(sorted(localization.items())),
    }, summary


def _render_markdown(record: RunRecord, manifest: Manifest, summary) -> str:
    lines = ["# Forensics run report", ""]
    if summary.acc is not None:
        lines.append(f"- ACC: {summary.acc:.2f}%")
    if summary.auc is not None:
        lines.append(f"- AUC: {summary.auc:.2f}%")
    lines.append(f"- REJ: {summary.rej:.2f}%")
    lines.append(f"- Samples: {summary.n_total} ({summary.n_rejected} fully rejected)")
    lines.append("")
    for sample in manifest.entries:
        det = record.detection.get(sample.id)
        lines.append(f"## {sample.id}")
        lines.append(f"- dataset: {sample.dataset_name or '(none)'}; label: {sample.label.value}")
        if det is not None:
            shown = "rejected" if det.rejected else f"{det.score:.2f}"
            rounds = ", ".join(v.value for v in det.per_round)
            lines.append(f"- decision score: {shown} (rounds: {rounds})")
        analysis = record.analysis.get(sample.id)
        if analysis is not None:
            rep = analysis.report
            lines.append(f"- location (absolute): {rep.location_absolute or '(missing)'}")
            lines.append(f"- location (relative): {rep.location_relative or '(missing)'}")
            lines.append(f"- contents: {rep.contents or '(missing)'}")
            if rep.visible_details:
                lines.append("- visible details:")
                lines.extend(f"  - {d}" for d in rep.visible_details)
            else:
                lines.append("- visible details: (missing)")
            lines.append(f"- method: {rep.method.value}; forgery type: {rep.forgery_type.value}")
            if rep.missing_sections:
                lines.append(f"- missing sections: {', '.join(rep.missing_sections)}")
        judge = record.judge.get(sample.id)
        if judge is not None:
            subs = ", ".join(f"{k}={v:g}" for k, v in judge.sub_scores.items())
            lines.append(f"- judge: {judge.final_percent:.2f}% ({subs})")
        lines.append("")
    return "\n".join(lines)


def _write_artifacts(out_dir: Path, record: RunRecord, manifest: Manifest) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload, summary = _metrics_payload(record, manifest)
    (out_dir / "run_record.json").write_text(record.to_json(), encoding="utf-8")
    (out_dir / "metrics.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / "roc_points.csv").write_text(
        metrics_mod.roc_points_csv(summary.roc_points), encoding="utf-8"
    )
    (out_dir / "report.md").write_text(
        _render_markdown(record, manifest, summary), encoding="utf-8"
    )


def _run_stages(opts: dict, stages: set[Stage]) -> None:
    try:
        manifest = load_manifest(opts["manifest_path"])
        provider = _build_provider(opts)
        cache = _build_cache(opts)
        pool = load_exemplar_pool(opts["exemplars"]) if opts.get("exemplars") else ()
        shots = ShotConfig(k=opts["k"], pool=pool, seed=opts["seed"])
        if Stage.JUDGE in stages and not any(
            s.scope is Scope.LOCAL for s in manifest.entries
        ):
            raise ConfigError(
                "judge requires local-scope samples with gt and mask in the manifest"
            )
        config = BatchConfig(
            detect=QueryConfig(
                provider=provider,
                prompt_spec=load_builtin_prompt(Stage.DETECT, opts["ladder_rank"]),
                shots=shots,
                rounds=opts["rounds"],
                cache=cache,
            ),
            analyze=QueryConfig(
                provider=provider,
                prompt_spec=load_builtin_prompt(Stage.ANALYZE),
                shots=ShotConfig(k=0),
                rounds=1,
                cache=cache,
            ),
            judge=QueryConfig(
                provider=provider,
                prompt_spec=load_builtin_prompt(Stage.JUDGE),
                shots=ShotConfig(k=0),
                rounds=1,
                cache=cache,
            ),
            force_analyze=opts.get("force", False),
            workers=opts["workers"],
        )
    except (ConfigError, AuthMissingError, ManifestError) as exc:
        _fail(type(exc).__name__, str(exc))

    semantic = _semantic_config(opts, sorted(s.value for s in stages))
    try:
        record = run_batch(manifest, config, stages=stages)
    except KeyboardInterrupt:
        # partial cache already flushed by run_batch workers
        sys.exit(130)
    record.config = semantic
    record.config_hash = _config_hash(semantic)
    _write_artifacts(Path(opts["out"]), record, manifest)
    if record.interrupted:
        click.echo("interrupted; partial results preserved", err=True)
        sys.exit(130)


def common_options(f):
    opts = [
        click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True)),
        click.option("--provider", type=click.Choice([k.value for k in ProviderKind]), default="http", show_default=True),
        click.option("--model", default="gpt-4o-2024-08-06", show_default=True),
        click.option("--endpoint", default="https://api.openai.com/v1"),
        click.option("--mock-script", type=click.Path(exists=True)),
        click.option("--rounds", type=int, default=5, show_default=True),
        click.option("--k", type=int, default=DEFAULT_K, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--ladder-rank", type=click.IntRange(1, 5), default=DEFAULT_LADDER_RANK, show_default=True),
        click.option("--cache", type=click.Choice([m.value for m in CacheMode]), default="off", show_default=True),
        click.option("--cache-file", type=click.Path()),
        click.option("--out", required=True, type=click.Path()),
        click.option("--exemplars", type=click.Path(exists=True)),
        click.option("--workers", type=int, default=4, show_default=True),
        click.option("--max-concurrency", type=int, default=4, show_default=True),
        click.option("--rpm", type=float, default=60.0, show_default=True),
        click.option("--yes-rate-fake", type=float, default=0.9, show_default=True),
        click.option("--yes-rate-real", type=float, default=0.1, show_default=True),
        click.option("--reject-rate", type=float, default=0.0, show_default=True),
        click.option("--synthetic-seed", type=int, default=0, show_default=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


@click.group()
def main():
    """Two-stage multimodal-LLM image forensics evaluation harness."""


@main.command("detect")
@common_options
def cmd_detect(**opts):
    """Stage-1 real/fake detection with multi-round scoring."""
    _run_stages(opts, {Stage.DETECT})


@main.command("analyze")
@common_options
@click.option("--force", is_flag=True, help="Bypass the Stage-1 gate and analyze every sample.")
def cmd_analyze(**opts):
    """Stage-2 structured forgery analysis (gated on Stage-1 fakes)."""
    stages = {Stage.ANALYZE} if opts["force"] else {Stage.DETECT, Stage.ANALYZE}
    _run_stages(opts, stages)


@main.command("judge")
@common_options
@click.option("--force", is_flag=True, help="Bypass the Stage-1 gate before judging.")
def cmd_judge(**opts):
    """LLM-as-judge grading of localization against GT and mask."""
    stages = {Stage.ANALYZE, Stage.JUDGE}
    if not opts["force"]:
        stages.add(Stage.DETECT)
    _run_stages(opts, stages)


@main.command("eval")
@common_options
@click.option("--stages", "stages_opt", default="detect", show_default=True,
              help="Comma-separated subset of detect,analyze,judge.")
@click.option("--force", is_flag=True)
def cmd_eval(stages_opt, **opts):
    """Full evaluation: requested stages plus metrics and reports."""
    try:
        stages = {Stage(s.strip()) for s in stages_opt.split(",") if s.strip()}
    except ValueError as exc:
        _fail("ConfigError", f"bad --stages: {exc}")
    if not stages:
        _fail("ConfigError", "--stages must name at least one stage")
    _run_stages(opts, stages)


@main.command("ablate")
@common_options
@click.option("--ablation", type=click.Choice([k.value for k in AblationKind]), required=True)
@click.option("--ranks", default="1,2,3,4,5", show_default=True)
@click.option("--k-values", default="0,1,2,4", show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True)
@click.option("--base-seed", type=int, default=0, show_default=True)
def cmd_ablate(ablation, ranks, k_values, repeats, base_seed, **opts):
    """Prompt-ladder or k-shot ablation over a manifest."""
    try:
        manifest = load_manifest(opts["manifest_path"])
        provider = _build_provider(opts)
        cache = _build_cache(opts)
        pool = load_exemplar_pool(opts["exemplars"]) if opts.get("exemplars") else ()
        kind = AblationKind(ablation)
        plan = AblationPlan(
            kind=kind,
            manifest=manifest,
            provider=provider,
            rounds=opts["rounds"],
            ladder_ranks=tuple(int(x) for x in ranks.split(",")),
            k_values=tuple(int(x) for x in k_values.split(",")),
            repeats=repeats,
            base_seed=base_seed,
            pool=pool,
            fixed_shots=ShotConfig(k=opts["k"], pool=pool, seed=opts["seed"]),
            ladder_rank_for_kshot=opts["ladder_rank"],
            workers=opts["workers"],
            cache=cache,
        )
    except ForensicsError as exc:
        _fail(type(exc).__name__, str(exc))

    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    semantic = _semantic_config(opts, ["detect"])
    semantic["ablation"] = {
        "kind": ablation,
        "ranks": ranks,
        "k_values": k_values,
        "repeats": repeats,
        "base_seed": base_seed,
    }
    if kind is AblationKind.PROMPT_LADDER:
        rows = run_prompt_ladder(plan)
        name, columns = "ladder", LADDER_COLUMNS
    else:
        rows = run_kshot_sweep(plan)
        name, columns = "kshot", KSHOT_COLUMNS
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": _config_hash(semantic),
        "config": semantic,
        "rows": rows,
    }
    (out_dir / f"{name}.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / f"{name}.csv").write_text(table_to_csv(rows, columns), encoding="utf-8")


if __name__ == "__main__":
    main()
