"""Label taxonomy DAG: loading, validation, level computation, per-sample views.

Labels live in a DAG where every edge points from a coarser label to a finer
one.  A label's level is 1 for roots and 1 + max(parent levels) otherwise, so
multi-parent nodes sit strictly below all of their parents.  Instances are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable


class TaxonomyError(ValueError):
    """Raised for malformed or inconsistent taxonomy input."""


@dataclass(frozen=True)
class LabelHierarchy:
    """The full label DAG. Label ids are assigned by file order, 0..L-1."""

    names: tuple[str, ...]
    parents: tuple[frozenset[int], ...]
    children: tuple[frozenset[int], ...]
    level: tuple[int, ...]
    max_level: int

    @property
    def num_labels(self) -> int:
        return len(self.names)

    @property
    def labels(self) -> range:
        return range(len(self.names))

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise TaxonomyError(f"unknown label name: {name!r}") from None

    def labels_at_level(self, level: int) -> list[int]:
        return [v for v in self.labels if self.level[v] == level]

    def is_leaf(self, v: int) -> bool:
        return not self.children[v]

    def ancestors(self, v: int) -> set[int]:
        """All labels reachable upward from v, excluding v itself."""
        seen: set[int] = set()
        stack = list(self.parents[v])
        while stack:
            p = stack.pop()
            if p not in seen:
                seen.add(p)
                stack.extend(self.parents[p])
        return seen


@dataclass(frozen=True)
class LocalHierarchy:
    """One sample's target labels, bucketed by level: entry h-1 holds level h."""

    levels: tuple[frozenset[int], ...]

    @property
    def all_labels(self) -> frozenset[int]:
        out: frozenset[int] = frozenset()
        for bucket in self.levels:
            out |= bucket
        return out


def _check_label_entry(idx: int, entry: object) -> tuple[str, list[str]]:
    if not isinstance(entry, dict):
        raise TaxonomyError(f"labels[{idx}] is not an object")
    name = entry.get("name")
    if not isinstance(name, str) or not name:
        raise TaxonomyError(f"labels[{idx}] has a missing or empty name")
    parents = entry.get("parents", [])
    if not isinstance(parents, list) or not all(isinstance(p, str) for p in parents):
        raise TaxonomyError(f"labels[{idx}] ({name!r}) has a malformed parents list")
    return name, parents


def _find_cycle_witness(unresolved: set[int], parents: list[set[int]]) -> int:
    # Every unresolved node has an unresolved parent, so walking parent
    # pointers inside the unresolved set must revisit a node: that node
    # lies on a directed cycle.
    start = min(unresolved)
    seen: dict[int, int] = {}
    v = start
    while v not in seen:
        seen[v] = len(seen)
        v = min(p for p in parents[v] if p in unresolved)
    return v


def load_taxonomy(source: bytes | str | IO[bytes] | IO[str]) -> LabelHierarchy:
    """Parse taxonomy JSON and return a validated hierarchy with levels.

    The expected schema is ``{"labels": [{"name": str, "parents": [str, ...]},
    ...]}`` where parent references are by name and roots carry an empty list.
    """
    if hasattr(source, "read"):
        raw = source.read()  # type: ignore[union-attr]
    else:
        raw = source
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise TaxonomyError(f"malformed taxonomy JSON at byte offset {e.pos}: {e.msg}") from e

    if not isinstance(doc, dict) or "labels" not in doc:
        raise TaxonomyError('taxonomy JSON must be an object with a "labels" array')
    entries = doc["labels"]
    if not isinstance(entries, list):
        raise TaxonomyError('"labels" must be an array')
    if not entries:
        raise TaxonomyError("empty taxonomy")

    names: list[str] = []
    parent_names: list[list[str]] = []
    for idx, entry in enumerate(entries):
        name, parents = _check_label_entry(idx, entry)
        if name in names:
            raise TaxonomyError(f"duplicate label name: {name!r}")
        names.append(name)
        parent_names.append(parents)

    name_to_id = {n: i for i, n in enumerate(names)}
    parents: list[set[int]] = [set() for _ in names]
    children: list[set[int]] = [set() for _ in names]
    for v, plist in enumerate(parent_names):
        for pname in plist:
            if pname not in name_to_id:
                raise TaxonomyError(f"label {names[v]!r} references unknown parent {pname!r}")
            p = name_to_id[pname]
            parents[v].add(p)
            children[p].add(v)

    level = _compute_levels(names, parents, children)
    return LabelHierarchy(
        names=tuple(names),
        parents=tuple(frozenset(s) for s in parents),
        children=tuple(frozenset(s) for s in children),
        level=tuple(level),
        max_level=max(level),
    )


def _compute_levels(names: list[str], parents: list[set[int]], children: list[set[int]]) -> list[int]:
    # Kahn over the parent->child direction; level(v) = 1 + max(level(parents)).
    level = [0] * len(names)
    pending = [len(parents[v]) for v in range(len(names))]
    frontier = [v for v in range(len(names)) if pending[v] == 0]
    resolved = 0
    while frontier:
        v = frontier.pop()
        level[v] = 1 if not parents[v] else 1 + max(level[p] for p in parents[v])
        resolved += 1
        for c in children[v]:
            pending[c] -= 1
            if pending[c] == 0:
                frontier.append(c)
    if resolved != len(names):
        unresolved = {v for v in range(len(names)) if level[v] == 0}
        witness = _find_cycle_witness(unresolved, parents)
        raise TaxonomyError(f"taxonomy contains a cycle through label {names[witness]!r}")
    return level


def serialize_taxonomy(h: LabelHierarchy) -> dict:
    """Inverse of load_taxonomy: a JSON-ready dict that parses to an equal hierarchy."""
    return {
        "labels": [
            {"name": h.names[v], "parents": sorted(h.names[p] for p in h.parents[v])}
            for v in h.labels
        ]
    }


def local_hierarchy_of(h: LabelHierarchy, target_labels: Iterable[int]) -> LocalHierarchy:
    """Partition a sample's target label ids into per-level buckets."""
    buckets: list[set[int]] = [set() for _ in range(h.max_level)]
    for v in target_labels:
        if not (0 <= v < h.num_labels):
            raise TaxonomyError(f"unknown label id: {v}")
        buckets[h.level[v] - 1].add(v)
    return LocalHierarchy(levels=tuple(frozenset(b) for b in buckets))


def sibling_leaves(h: LabelHierarchy, a: int, b: int) -> bool:
    """True iff a and b are distinct childless labels sharing at least one parent."""
    for v in (a, b):
        if not (0 <= v < h.num_labels):
            raise TaxonomyError(f"unknown label id: {v}")
    if a == b or h.children[a] or h.children[b]:
        return False
    return bool(h.parents[a] & h.parents[b])


def is_upward_closed(h: LabelHierarchy, target_labels: set[int]) -> bool:
    """True iff every parent of every target label is also a target."""
    return all(h.parents[v] <= target_labels for v in target_labels)
