import json
import logging

import pytest

from hierclass.data import (
    DatasetError,
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    encode_samples,
    generate_synthetic,
    load_vocab,
    majority_level1_micro_f1,
    read_jsonl,
    save_vocab,
    tokenize,
    validate_dataset,
    write_jsonl,
    RESERVED_TOKENS,
    UNK_ID,
)
from hierclass.hierarchy import load_taxonomy, local_hierarchy_of


def test_vocab_reserved_ids_fixed():
    v = build_vocab(["hello world", "world again"])
    assert v.id_to_token[:5] == RESERVED_TOKENS
    assert v.id("[PAD]") == 0 and v.id("[MASK]") == 3
    assert v.id("world") >= 5


def test_tokenize_basic():
    v = build_vocab(["world news"])
    assert tokenize("World News", v) == [v.id("world"), v.id("news")]
    assert tokenize("", v) == []
    assert tokenize("zzzunknown", v) == [UNK_ID]


def test_vocab_round_trip(tmp_path):
    v = build_vocab(["a b c a"])
    save_vocab(v, tmp_path / "vocab.json")
    assert load_vocab(tmp_path / "vocab.json") == v


def test_vocab_rejects_bad_reserved():
    with pytest.raises(DatasetError):
        Vocabulary(id_to_token=("x",))


def test_jsonl_round_trip(tmp_path):
    rows = [{"id": "a", "text": "x y", "labels": ["l1"]}, {"id": "b", "text": "", "labels": []}]
    write_jsonl(tmp_path / "d.jsonl", rows)
    assert read_jsonl(tmp_path / "d.jsonl") == rows


def test_generator_deterministic():
    spec = SyntheticSpec(depth=2, branching=3, num_labels=10, n_samples=60, seed=7, noise_tokens=20)
    a = generate_synthetic(spec)
    b = generate_synthetic(spec)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    c = generate_synthetic(SyntheticSpec(depth=2, branching=3, num_labels=10, n_samples=60, seed=8, noise_tokens=20))
    assert json.dumps(a, sort_keys=True) != json.dumps(c, sort_keys=True)


def test_generator_split_sizes_and_partition():
    spec = SyntheticSpec(depth=2, branching=3, num_labels=10, n_samples=100, seed=3, noise_tokens=20)
    _, splits = generate_synthetic(spec)
    assert len(splits["train"]) == 70 and len(splits["dev"]) == 15 and len(splits["test"]) == 15
    ids = [r["id"] for part in splits.values() for r in part]
    assert len(ids) == len(set(ids)) == 100


def test_single_path_mode_one_label_per_level():
    spec = SyntheticSpec(
        depth=3, branching=2, num_labels=14, multi_path_prob=0.0, n_samples=80, seed=5, noise_tokens=20
    )
    taxonomy, splits = generate_synthetic(spec)
    h = load_taxonomy(json.dumps(taxonomy))
    for row in splits["train"]:
        labels = {h.id_of(n) for n in row["labels"]}
        lh = local_hierarchy_of(h, labels)
        leaf_depth = max(h.level[v] for v in labels)
        for lvl in range(1, leaf_depth + 1):
            assert len(lh.levels[lvl - 1]) == 1
        for lvl in range(leaf_depth + 1, h.max_level + 1):
            assert not lh.levels[lvl - 1]


def test_generated_labels_upward_closed_and_valid():
    spec = SyntheticSpec(depth=4, branching=3, num_labels=40, n_samples=200, seed=9, noise_tokens=30)
    taxonomy, splits = generate_synthetic(spec)
    h = load_taxonomy(json.dumps(taxonomy))
    rows = [r for part in splits.values() for r in part]
    report = validate_dataset(rows, h)
    assert report.n_samples == 200
    assert not report.closure_violations
    assert not report.rejected
    # recount one level histogram by hand
    recount = {}
    for row in rows:
        for name in row["labels"]:
            v = h.id_of(name)
            if h.level[v] == 1:
                recount[v] = recount.get(v, 0) + 1
    assert report.per_level_counts[1] == recount


def test_default_spec_is_non_degenerate():
    spec = SyntheticSpec(n_samples=1500, seed=11)
    taxonomy, splits = generate_synthetic(spec)
    h = load_taxonomy(json.dumps(taxonomy))
    assert majority_level1_micro_f1(splits["test"], h) < 0.6


def test_validate_flags_problem_samples(world_travel, caplog):
    rows = [
        {"id": "ok", "text": "x", "labels": ["World", "Europe"]},
        {"id": "open", "text": "x", "labels": ["Europe"]},
        {"id": "empty", "text": "x", "labels": []},
        {"id": "bad", "text": "x", "labels": ["Nope"]},
    ]
    with caplog.at_level(logging.WARNING):
        report = validate_dataset(rows, world_travel)
    assert report.closure_violations == ["open"]
    assert report.rejected == ["empty", "bad"]
    assert any("open" in r.message for r in caplog.records)


def test_encode_samples_rejects_empty_labels(world_travel):
    v = build_vocab(["x"])
    with pytest.raises(DatasetError, match="no labels"):
        encode_samples([{"id": "e", "text": "x", "labels": []}], v, world_travel)
    samples = encode_samples([{"id": "s", "text": "x x", "labels": ["World"]}], v, world_travel)
    assert samples[0].tokens == (v.id("x"), v.id("x"))
    assert samples[0].labels == frozenset({world_travel.id_of("World")})


def test_inconsistent_spec_rejected():
    with pytest.raises(DatasetError):
        SyntheticSpec(depth=5, num_labels=3).validate()
    with pytest.raises(DatasetError):
        SyntheticSpec(depth=0).validate()
    with pytest.raises(DatasetError):
        SyntheticSpec(noise_prob=1.5).validate()


def test_label_names_are_multiword():
    spec = SyntheticSpec(depth=2, branching=3, num_labels=8, n_samples=10, seed=2, noise_tokens=10)
    taxonomy, _ = generate_synthetic(spec)
    assert all(len(e["name"].split()) == 2 for e in taxonomy["labels"])
