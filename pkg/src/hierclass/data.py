"""Tokenization, vocabulary, dataset I/O, and the synthetic corpus generator.

The tokenizer is lowercased whitespace splitting; good enough here because the
synthetic corpus is built from single-word tokens, and multi-word label names
still exercise multi-token name averaging.

The generator builds a random taxonomy tree (optionally with cross edges) in
which every label owns a disjoint pool of signature tokens.  A sample picks a
leaf (Zipf-weighted, so some labels stay rare), takes the upward-closed label
set of one or two root-to-leaf paths, and emits text that mixes signature
tokens of its labels with noise tokens.  Evidence is deliberately thinner for
deeper labels (``level_emission_decay``), which is what makes conditioning on
already-decoded coarse labels worth anything: fine labels are only partially
identified by text alone but strongly constrained by their path.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .hierarchy import LabelHierarchy, TaxonomyError, is_upward_closed, load_taxonomy

logger = logging.getLogger(__name__)

RESERVED_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]")
PAD_ID, CLS_ID, SEP_ID, MASK_ID, UNK_ID = range(5)


class DatasetError(ValueError):
    """Raised for invalid samples or inconsistent generator specs."""


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]

    def __post_init__(self):
        if self.id_to_token[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise DatasetError("vocabulary must start with the reserved tokens")
        object.__setattr__(
            self, "_token_to_id", {t: i for i, t in enumerate(self.id_to_token)}
        )
        if len(self._token_to_id) != len(self.id_to_token):
            raise DatasetError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Lowercased whitespace split; out-of-vocabulary words map to [UNK]."""
    return [vocab.id(w) for w in text.lower().split()]


def build_vocab(texts: Iterable[str], min_count: int = 1) -> Vocabulary:
    counts: dict[str, int] = {}
    for text in texts:
        for w in text.lower().split():
            counts[w] = counts.get(w, 0) + 1
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocabulary(id_to_token=RESERVED_TOKENS + tuple(kept))


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    from .checkpoint import atomic_write_text

    atomic_write_text(path, json.dumps({"tokens": list(vocab.id_to_token)}, indent=0))


def load_vocab(path: str | Path) -> Vocabulary:
    doc = json.loads(Path(path).read_text())
    return Vocabulary(id_to_token=tuple(doc["tokens"]))


@dataclass(frozen=True)
class Sample:
    id: str
    tokens: tuple[int, ...]
    labels: frozenset[int]


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    from .checkpoint import atomic_write_text

    atomic_write_text(
        path, "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in rows)
    )


def encode_samples(rows: Iterable[dict], vocab: Vocabulary, h: LabelHierarchy) -> list[Sample]:
    """Turn JSONL rows into id-encoded samples; empty label sets are rejected."""
    out = []
    for row in rows:
        labels = frozenset(h.id_of(name) for name in row["labels"])
        if not labels:
            raise DatasetError(f"sample {row.get('id')!r} has no labels")
        out.append(Sample(id=str(row.get("id", len(out))), tokens=tuple(tokenize(row["text"], vocab)), labels=labels))
    return out


@dataclass
class SyntheticSpec:
    depth: int = 4
    branching: int = 3
    num_labels: int = 60
    multi_path_prob: float = 0.3
    signature_tokens_per_label: int = 3
    noise_tokens: int = 150
    text_len: int = 24
    n_samples: int = 5000
    seed: int = 1234
    # Secondary knobs; defaults are part of the calibrated task difficulty.
    cross_edge_prob: float = 0.0
    noise_prob: float = 0.45
    level_emission_decay: float = 0.55
    leaf_zipf_exponent: float = 0.7

    def validate(self) -> None:
        if self.depth < 1 or self.branching < 1 or self.num_labels < self.depth:
            raise DatasetError("inconsistent generator spec: need num_labels >= depth >= 1")
        if not (0.0 <= self.multi_path_prob <= 1.0 and 0.0 <= self.noise_prob < 1.0):
            raise DatasetError("probabilities must lie in [0, 1]")
        if self.text_len < 1 or self.n_samples < 1 or self.signature_tokens_per_label < 1:
            raise DatasetError("text_len, n_samples, signature_tokens_per_label must be >= 1")
        _level_counts(self)


def _level_counts(spec: SyntheticSpec) -> list[int]:
    """Distribute num_labels over depth levels, roughly geometric in branching.

    Greedy proportional fill under the reachability cap
    count[h] <= count[h-1] * branching; every level keeps at least one label.
    """
    weights = [spec.branching ** h for h in range(spec.depth)]
    shares = [w / sum(weights) for w in weights]
    counts = [1] * spec.depth
    for _ in range(spec.num_labels - spec.depth):
        best, best_deficit = None, None
        for h in range(spec.depth):
            if h > 0 and counts[h] >= counts[h - 1] * spec.branching:
                continue
            deficit = shares[h] - counts[h] / spec.num_labels
            if best is None or deficit > best_deficit:
                best, best_deficit = h, deficit
        if best is None:
            raise DatasetError("inconsistent generator spec: cannot allocate labels per level")
        counts[best] += 1
    return counts


_SYLLABLES = (
    "ba be bi bo bu da de di do du ka ke ki ko ku la le li lo lu "
    "ma me mi mo mu na ne ni no nu ra re ri ro ru sa se si so su "
    "ta te ti to tu va ve vi vo vu za ze zi zo zu"
).split()


def _make_word(rng: random.Random, used: set[str]) -> str:
    while True:
        word = "".join(rng.choice(_SYLLABLES) for _ in range(3))
        if word not in used:
            used.add(word)
            return word


def generate_synthetic(spec: SyntheticSpec) -> tuple[dict, dict[str, list[dict]]]:
    """Build (taxonomy JSON dict, {"train"/"dev"/"test": JSONL rows}).

    Pure function of the spec: equal specs produce byte-identical output once
    serialized with sorted keys.
    """
    spec.validate()
    rng = random.Random(spec.seed)
    counts = _level_counts(spec)

    used_words: set[str] = set()
    signatures: list[list[str]] = []
    level_of: list[int] = []
    parents_of: list[list[int]] = []
    per_level_ids: list[list[int]] = [[] for _ in range(spec.depth)]

    for hlev, count in enumerate(counts):
        for _ in range(count):
            v = len(level_of)
            level_of.append(hlev + 1)
            signatures.append([_make_word(rng, used_words) for _ in range(spec.signature_tokens_per_label)])
            if hlev == 0:
                parents_of.append([])
            else:
                # Prefer parents with spare capacity so the tree stays branching-bounded.
                candidates = [p for p in per_level_ids[hlev - 1]]
                open_slots = [p for p in candidates if sum(1 for q in parents_of if p in q) < spec.branching]
                parent = rng.choice(open_slots or candidates)
                plist = [parent]
                if spec.cross_edge_prob > 0 and rng.random() < spec.cross_edge_prob:
                    extra = rng.choice(candidates)
                    if extra != parent:
                        plist.append(extra)
                parents_of.append(plist)
            per_level_ids[hlev].append(v)

    names = [" ".join(signatures[v][:2]) for v in range(spec.num_labels)]
    taxonomy = {
        "labels": [
            {"name": names[v], "parents": sorted(names[p] for p in parents_of[v])}
            for v in range(spec.num_labels)
        ]
    }

    children_of: list[list[int]] = [[] for _ in range(spec.num_labels)]
    for v, plist in enumerate(parents_of):
        for p in plist:
            children_of[p].append(v)
    leaves = [v for v in range(spec.num_labels) if not children_of[v]]

    # Zipf-ish leaf frequencies over a seeded shuffle, so rank order is random
    # but imbalance is controlled by the exponent.
    shuffled = leaves[:]
    rng.shuffle(shuffled)
    weights = [1.0 / (rank + 1) ** spec.leaf_zipf_exponent for rank in range(len(shuffled))]
    partner = {leaf: shuffled[(i + 1) % len(shuffled)] for i, leaf in enumerate(shuffled)}

    noise_pool = [_make_word(rng, used_words) for _ in range(spec.noise_tokens)]

    def closure(leaf: int) -> set[int]:
        out = {leaf}
        stack = [leaf]
        while stack:
            for p in parents_of[stack.pop()]:
                if p not in out:
                    out.add(p)
                    stack.append(p)
        return out

    rows: list[dict] = []
    for i in range(spec.n_samples):
        leaf = rng.choices(shuffled, weights=weights, k=1)[0]
        labels = closure(leaf)
        if rng.random() < spec.multi_path_prob:
            labels |= closure(partner[leaf])
        by_label = sorted(labels)
        emission_w = [spec.level_emission_decay ** (level_of[v] - 1) for v in by_label]
        words = []
        for _ in range(spec.text_len):
            if rng.random() < spec.noise_prob:
                words.append(rng.choice(noise_pool))
            else:
                v = rng.choices(by_label, weights=emission_w, k=1)[0]
                words.append(rng.choice(signatures[v]))
        rows.append(
            {
                "id": f"s{i:06d}",
                "text": " ".join(words),
                "labels": sorted(names[v] for v in labels),
            }
        )

    order = list(range(spec.n_samples))
    rng.shuffle(order)
    n_train = int(spec.n_samples * 0.7)
    n_dev = int(spec.n_samples * 0.15)
    splits = {
        "train": [rows[i] for i in order[:n_train]],
        "dev": [rows[i] for i in order[n_train : n_train + n_dev]],
        "test": [rows[i] for i in order[n_train + n_dev :]],
    }
    return taxonomy, splits


@dataclass
class DatasetReport:
    n_samples: int
    per_level_counts: dict[int, dict[int, int]]  # level -> label id -> frequency
    closure_violations: list[str] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "per_level_counts": {
                str(lvl): {str(v): c for v, c in sorted(counts.items())}
                for lvl, counts in sorted(self.per_level_counts.items())
            },
            "closure_violations": self.closure_violations,
            "rejected": self.rejected,
        }


def validate_dataset(rows: Iterable[dict], h: LabelHierarchy) -> DatasetReport:
    """Count per-level label frequencies; flag closure violations, reject empty labels."""
    per_level: dict[int, dict[int, int]] = {lvl: {} for lvl in range(1, h.max_level + 1)}
    violations: list[str] = []
    rejected: list[str] = []
    n = 0
    for row in rows:
        n += 1
        sid = str(row.get("id", n - 1))
        try:
            labels = {h.id_of(name) for name in row["labels"]}
        except TaxonomyError as e:
            rejected.append(sid)
            logger.warning("sample %s rejected: %s", sid, e)
            continue
        if not labels:
            rejected.append(sid)
            logger.warning("sample %s rejected: empty label set", sid)
            continue
        for v in labels:
            lvl = h.level[v]
            per_level[lvl][v] = per_level[lvl].get(v, 0) + 1
        if not is_upward_closed(h, labels):
            violations.append(sid)
            logger.warning("sample %s is not upward-closed", sid)
    return DatasetReport(n_samples=n, per_level_counts=per_level, closure_violations=violations, rejected=rejected)


def majority_level1_micro_f1(rows: list[dict], h: LabelHierarchy) -> float:
    """Micro-F1 of always predicting the most frequent level-1 label (degeneracy check)."""
    counts: dict[int, int] = {}
    gold_sets = []
    for row in rows:
        labels = {h.id_of(name) for name in row["labels"]}
        gold_sets.append(labels)
        for v in labels:
            if h.level[v] == 1:
                counts[v] = counts.get(v, 0) + 1
    majority = max(counts, key=lambda v: (counts[v], -v))
    tp = sum(1 for g in gold_sets if majority in g)
    fp = len(gold_sets) - tp
    fn = sum(len(g) for g in gold_sets) - tp
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0
