import json
import random

import pytest

from hierclass.hierarchy import load_taxonomy


def taxonomy_from_entries(entries):
    """Build a hierarchy through the JSON loader so tests exercise it too."""
    return load_taxonomy(json.dumps({"labels": entries}))


def random_dag_entries(rng: random.Random, n: int, extra_parent_prob: float = 0.2):
    """Random DAG as loader entries: node i may only have parents among 0..i-1."""
    entries = [{"name": f"n{i}", "parents": []} for i in range(n)]
    for i in range(1, n):
        if rng.random() < 0.85:  # a few extra roots keep level 1 populated
            parents = {rng.randrange(i)}
            while rng.random() < extra_parent_prob and len(parents) < i:
                parents.add(rng.randrange(i))
            entries[i]["parents"] = sorted(f"n{p}" for p in parents)
    return entries


@pytest.fixture
def world_travel():
    # World, Travel roots; Europe under World; France under Travel.
    return taxonomy_from_entries(
        [
            {"name": "World", "parents": []},
            {"name": "Travel", "parents": []},
            {"name": "Europe", "parents": ["World"]},
            {"name": "France", "parents": ["Travel"]},
        ]
    )


@pytest.fixture
def sport():
    return taxonomy_from_entries(
        [
            {"name": "Sport", "parents": []},
            {"name": "Baseball", "parents": ["Sport"]},
            {"name": "Football", "parents": ["Sport"]},
        ]
    )


@pytest.fixture
def chain3():
    return taxonomy_from_entries(
        [
            {"name": "a", "parents": []},
            {"name": "b", "parents": ["a"]},
            {"name": "c", "parents": ["b"]},
        ]
    )
