import pytest

from llmforensics.dataset import load_manifest
from llmforensics.errors import ConfigError, KTooLargeError
from llmforensics.experiments import (
    AblationKind,
    AblationPlan,
    kshot_deltas,
    run_kshot_sweep,
    run_prompt_ladder,
    table_to_csv,
)
from llmforensics.pipeline import CacheMode, ResponseCache
from llmforensics.prompts import load_exemplar_pool
from llmforensics.provider import MockProvider, ProviderConfig, ProviderKind

from conftest import MOCK_SCRIPT

MOCK_CFG = ProviderConfig(kind=ProviderKind.MOCK, model_id="mock")


def _provider():
    return MockProvider.from_jsonl(MOCK_CFG, MOCK_SCRIPT)


def test_prompt_ladder(bundle):
    manifest = load_manifest(bundle)
    provider = _provider()
    plan = AblationPlan(
        kind=AblationKind.PROMPT_LADDER, manifest=manifest, provider=provider
    )
    rows = run_prompt_ladder(plan)
    assert [r["rank"] for r in rows] == [1, 2, 3, 4, 5]
    tokens = [r["token_count"] for r in rows]
    assert tokens == sorted(tokens) and len(set(tokens)) == 5
    # The mock ignores the prompt, so every rank scores the golden 8/9.
    for r in rows:
        assert r["acc"] == pytest.approx(800 / 9)
        assert r["rej"] == pytest.approx(10.0)
        assert r["sample_ids"] == [s.id for s in manifest.entries]
    assert provider.call_count == 5 * 50


def test_prompt_ladder_kind_mismatch(bundle):
    manifest = load_manifest(bundle)
    plan = AblationPlan(
        kind=AblationKind.KSHOT, manifest=manifest, provider=_provider(), k_values=(0,)
    )
    with pytest.raises(ConfigError):
        run_prompt_ladder(plan)


def test_kshot_sweep_shape_and_means(bundle, pool_file):
    manifest = load_manifest(bundle)
    pool = load_exemplar_pool(pool_file)
    plan = AblationPlan(
        kind=AblationKind.KSHOT,
        manifest=manifest,
        provider=_provider(),
        k_values=(0, 1, 2),
        repeats=2,
        pool=pool,
    )
    rows = run_kshot_sweep(plan)
    assert len(rows) == 3 * (2 + 1)
    per_repeat = [r for r in rows if r["repeat"] != "mean"]
    means = [r for r in rows if r["repeat"] == "mean"]
    assert [r["seed"] for r in per_repeat] == [0, 1] * 3
    assert all(r["seed"] is None for r in means)
    for r in rows:
        assert r["acc"] == pytest.approx(800 / 9)
    deltas = kshot_deltas(rows)
    assert deltas == {"0->1": pytest.approx(0.0), "1->2": pytest.approx(0.0)}


def test_kshot_pool_too_small(bundle, pool_file):
    manifest = load_manifest(bundle)
    pool = load_exemplar_pool(pool_file)[:2]
    with pytest.raises(KTooLargeError):
        AblationPlan(
            kind=AblationKind.KSHOT,
            manifest=manifest,
            provider=_provider(),
            k_values=(0, 4),
            pool=pool,
        )


def test_kshot_repeats_share_cache_for_k0(bundle, tmp_path):
    manifest = load_manifest(bundle)
    provider = _provider()
    cache = ResponseCache(tmp_path / "cache.jsonl", CacheMode.RECORD)
    plan = AblationPlan(
        kind=AblationKind.KSHOT,
        manifest=manifest,
        provider=provider,
        k_values=(0,),
        repeats=3,
        cache=cache,
    )
    rows = run_kshot_sweep(plan)
    # k=0 has no sampling randomness: repeats 2 and 3 replay the cache.
    assert provider.call_count == 50
    per_repeat = [r for r in rows if r["repeat"] != "mean"]
    assert len({r["acc"] for r in per_repeat}) == 1
    assert len({r["prompt_tokens"] for r in per_repeat}) == 1


def test_table_to_csv():
    rows = [{"a": 1, "b": None}, {"a": 2, "b": 3.5}]
    text = table_to_csv(rows, ["a", "b", "missing"])
    lines = text.splitlines()
    assert lines[0] == "a,b,missing"
    assert lines[1] == "1,,"
    assert lines[2] == "2,3.5,"
