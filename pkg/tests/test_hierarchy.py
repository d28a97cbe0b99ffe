import json
import random

import pytest

from hierclass.hierarchy import (
    LabelHierarchy,
    TaxonomyError,
    is_upward_closed,
    load_taxonomy,
    local_hierarchy_of,
    serialize_taxonomy,
    sibling_leaves,
)

from conftest import random_dag_entries, taxonomy_from_entries


def test_load_levels_world_travel(world_travel):
    h = world_travel
    levels = {h.names[v]: h.level[v] for v in h.labels}
    assert levels == {"World": 1, "Travel": 1, "Europe": 2, "France": 2}
    assert h.max_level == 2
    assert h.parents[h.id_of("Europe")] == {h.id_of("World")}
    assert h.children[h.id_of("Travel")] == {h.id_of("France")}


def test_label_ids_follow_file_order(world_travel):
    assert world_travel.names == ("World", "Travel", "Europe", "France")


def test_empty_taxonomy_rejected():
    with pytest.raises(TaxonomyError, match="empty taxonomy"):
        load_taxonomy(json.dumps({"labels": []}))


def test_self_loop_names_witness():
    entries = [{"name": "France", "parents": ["France"]}]
    with pytest.raises(TaxonomyError, match="cycle.*France"):
        taxonomy_from_entries(entries)


def test_longer_cycle_detected():
    entries = [
        {"name": "a", "parents": ["c"]},
        {"name": "b", "parents": ["a"]},
        {"name": "c", "parents": ["b"]},
        {"name": "root", "parents": []},
    ]
    with pytest.raises(TaxonomyError, match="cycle"):
        taxonomy_from_entries(entries)


def test_malformed_json_reports_offset():
    with pytest.raises(TaxonomyError, match="byte offset"):
        load_taxonomy('{"labels": [}')


def test_duplicate_name_rejected():
    entries = [{"name": "x", "parents": []}, {"name": "x", "parents": []}]
    with pytest.raises(TaxonomyError, match="duplicate"):
        taxonomy_from_entries(entries)


def test_unknown_parent_rejected():
    entries = [{"name": "x", "parents": ["nope"]}]
    with pytest.raises(TaxonomyError, match="unknown parent"):
        taxonomy_from_entries(entries)


def test_empty_name_rejected():
    entries = [{"name": "", "parents": []}]
    with pytest.raises(TaxonomyError, match="name"):
        taxonomy_from_entries(entries)


def test_multi_parent_level_is_max_over_parents():
    entries = [
        {"name": "r", "parents": []},
        {"name": "mid", "parents": ["r"]},
        {"name": "deep", "parents": ["mid", "r"]},
    ]
    h = taxonomy_from_entries(entries)
    assert h.level[h.id_of("deep")] == 3  # max(1, 2) + 1


def test_local_hierarchy_partitions(world_travel):
    h = world_travel
    ids = {h.id_of(n) for n in ("World", "Travel", "Europe", "France")}
    lh = local_hierarchy_of(h, ids)
    assert lh.levels == (
        frozenset({h.id_of("World"), h.id_of("Travel")}),
        frozenset({h.id_of("Europe"), h.id_of("France")}),
    )


def test_local_hierarchy_single_and_empty(world_travel):
    h = world_travel
    lh = local_hierarchy_of(h, {h.id_of("France")})
    assert lh.levels == (frozenset(), frozenset({h.id_of("France")}))
    empty = local_hierarchy_of(h, set())
    assert empty.levels == (frozenset(), frozenset())


def test_local_hierarchy_unknown_id(world_travel):
    with pytest.raises(TaxonomyError, match="99"):
        local_hierarchy_of(world_travel, {99})


def test_sibling_leaves_examples(sport, chain3):
    b, f = sport.id_of("Baseball"), sport.id_of("Football")
    assert sibling_leaves(sport, b, f) is True
    assert sibling_leaves(sport, b, b) is False
    a, c = chain3.id_of("a"), chain3.id_of("c")
    assert sibling_leaves(chain3, a, c) is False


def test_sibling_leaves_symmetric_irreflexive():
    rng = random.Random(7)
    h = taxonomy_from_entries(random_dag_entries(rng, 25))
    for _ in range(200):
        a, b = rng.randrange(25), rng.randrange(25)
        assert sibling_leaves(h, a, b) == sibling_leaves(h, b, a)
        assert sibling_leaves(h, a, a) is False


def test_level_invariants_on_random_dags():
    rng = random.Random(11)
    for _ in range(30):
        h = taxonomy_from_entries(random_dag_entries(rng, rng.randrange(2, 40)))
        for v in h.labels:
            assert 1 <= h.level[v] <= h.max_level
            assert (h.level[v] == 1) == (not h.parents[v])
            for c in h.children[v]:
                assert h.level[c] >= h.level[v] + 1
            for c in h.children[v]:
                assert v in h.parents[c]
            for p in h.parents[v]:
                assert v in h.children[p]


def test_local_hierarchy_partition_property():
    rng = random.Random(13)
    for _ in range(30):
        n = rng.randrange(3, 30)
        h = taxonomy_from_entries(random_dag_entries(rng, n))
        targets = {v for v in h.labels if rng.random() < 0.4}
        lh = local_hierarchy_of(h, targets)
        assert lh.all_labels == frozenset(targets)
        seen = set()
        for i, bucket in enumerate(lh.levels):
            assert not (bucket & seen)
            seen |= bucket
            for v in bucket:
                assert h.level[v] == i + 1


def test_serialize_round_trip():
    rng = random.Random(17)
    for _ in range(20):
        h = taxonomy_from_entries(random_dag_entries(rng, rng.randrange(2, 30)))
        h2 = load_taxonomy(json.dumps(serialize_taxonomy(h)))
        assert h == h2


def test_is_upward_closed(world_travel):
    h = world_travel
    assert is_upward_closed(h, {h.id_of("World"), h.id_of("Europe")})
    assert not is_upward_closed(h, {h.id_of("Europe")})
    assert is_upward_closed(h, set())


def test_ancestors(world_travel):
    h = world_travel
    assert h.ancestors(h.id_of("Europe")) == {h.id_of("World")}
    assert h.ancestors(h.id_of("World")) == set()
