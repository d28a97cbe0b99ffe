"""Miniature bidirectional transformer encoder with per-layer attention masks.

The attention mask is a boolean ALLOW matrix everywhere in this package;
(i, j) = True means position i may attend to position j.  It is converted to
a -1e9 additive bias immediately before the softmax in every layer, so a
single sense crosses module boundaries.

The encoder also exposes an incremental path (``begin_cache``/``step_cache``)
that reuses per-layer key/value projections of an already-encoded prefix;
level-by-level label decoding leans on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .checkpoint import CheckpointError, load_tensors, save_tensors, tensors_sha256

NEG_BIAS = -1e9
LN_EPS = 1e-12
INIT_STD = 0.02


class ShapeError(ValueError):
    """Raised when tensor shapes disagree with the declared sequence length."""


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite."""


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_size: int | None = None
    max_positions: int = 512
    num_segments: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.ffn_size is None:
            self.ffn_size = 4 * self.hidden_size
        if self.hidden_size % self.num_heads:
            raise ValueError(
                f"num_heads ({self.num_heads}) must divide hidden_size ({self.hidden_size})"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "ffn_size": self.ffn_size,
            "max_positions": self.max_positions,
            "num_segments": self.num_segments,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EncoderConfig":
        return cls(**doc)


def bias_from_allow(allow: Tensor, dtype: torch.dtype) -> Tensor:
    """Boolean allow matrix -> additive attention bias (0 allowed, -1e9 blocked)."""
    if allow.dtype != torch.bool:
        raise ShapeError(f"allow matrix must be boolean, got {allow.dtype}")
    return torch.where(allow, 0.0, NEG_BIAS).to(dtype)


class AttentionCache:
    """Per-layer key/value projections of an encoded prefix.

    ``key_mask`` (B, S_cached) marks which cached positions later queries may
    attend to; padding slots stay False.
    """

    def __init__(self, keys: list[Tensor], values: list[Tensor], key_mask: Tensor):
        self.keys = keys
        self.values = values
        self.key_mask = key_mask

    @property
    def size(self) -> int:
        return self.key_mask.shape[1]

    def extended(self, new_keys: list[Tensor], new_values: list[Tensor], n_new: int) -> "AttentionCache":
        mask = torch.cat(
            [self.key_mask, torch.ones(self.key_mask.shape[0], n_new, dtype=torch.bool)], dim=1
        )
        return AttentionCache(
            keys=[torch.cat([k, nk], dim=2) for k, nk in zip(self.keys, new_keys)],
            values=[torch.cat([v, nv], dim=2) for v, nv in zip(self.values, new_values)],
            key_mask=mask,
        )


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.hidden_size
        self.num_heads = cfg.num_heads
        self.head_size = cfg.head_size
        self.wq = nn.Linear(d, d)
        self.wk = nn.Linear(d, d)
        self.wv = nn.Linear(d, d)
        self.wo = nn.Linear(d, d)
        self.attn_norm = nn.LayerNorm(d, eps=LN_EPS)
        self.ffn_in = nn.Linear(d, cfg.ffn_size)
        self.ffn_out = nn.Linear(cfg.ffn_size, d)
        self.ffn_norm = nn.LayerNorm(d, eps=LN_EPS)
        self.dropout = nn.Dropout(cfg.dropout)

    def _heads(self, x: Tensor) -> Tensor:
        # (B, S, d) -> (B, H, S, d_z)
        B, S, _ = x.shape
        return x.view(B, S, self.num_heads, self.head_size).transpose(1, 2)

    def _attend(self, q: Tensor, k: Tensor, v: Tensor, bias: Tensor) -> Tensor:
        att = q @ k.transpose(-1, -2) / math.sqrt(self.head_size) + bias
        probs = self.dropout(att.softmax(dim=-1))
        y = probs @ v  # (B, H, Sq, d_z)
        B, H, Sq, _ = y.shape
        return y.transpose(1, 2).reshape(B, Sq, H * self.head_size)

    def _finish(self, x: Tensor, attn_out: Tensor) -> Tensor:
        x = self.attn_norm(x + self.dropout(self.wo(attn_out)))
        h = self.ffn_out(torch.nn.functional.gelu(self.ffn_in(x)))
        return self.ffn_norm(x + self.dropout(h))

    def forward(self, x: Tensor, bias: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        q, k, v = self._heads(self.wq(x)), self._heads(self.wk(x)), self._heads(self.wv(x))
        return self._finish(x, self._attend(q, k, v, bias)), k, v

    def step(
        self, x_new: Tensor, k_cache: Tensor, v_cache: Tensor, bias: Tensor
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Attend n new positions over cached prefix + themselves.

        bias has key-length S_cached + n; new keys are appended after cached.
        """
        q = self._heads(self.wq(x_new))
        k_new = self._heads(self.wk(x_new))
        v_new = self._heads(self.wv(x_new))
        k = torch.cat([k_cache, k_new], dim=2)
        v = torch.cat([v_cache, v_new], dim=2)
        return self._finish(x_new, self._attend(q, k, v, bias)), k_new, v_new


class TransformerEncoder(nn.Module):
    """Token/position/segment embeddings + masked self-attention stack."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_size
        self.token_embedding = nn.Embedding(cfg.vocab_size, d)
        self.position_embedding = nn.Embedding(cfg.max_positions, d)
        self.segment_embedding = nn.Embedding(cfg.num_segments, d)
        self.embedding_norm = nn.LayerNorm(d, eps=LN_EPS)
        self.embedding_dropout = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=INIT_STD)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    # ----- embeddings ------------------------------------------------------

    def embed(self, content: Tensor, position_ids: Tensor, segment_ids: Tensor) -> Tensor:
        """Sum of content + segment + position rows.

        ``content`` is either a LongTensor of token ids or pre-built float
        rows (label embeddings) of shape (..., d).
        """
        rows = content if content.is_floating_point() else self.token_embedding(content)
        return rows + self.segment_embedding(segment_ids) + self.position_embedding(position_ids)

    def token_rows(self, token_ids: Tensor | Sequence[int]) -> Tensor:
        if not torch.is_tensor(token_ids):
            token_ids = torch.tensor(token_ids, dtype=torch.long)
        return self.token_embedding(token_ids)

    # ----- forward passes --------------------------------------------------

    def _check(self, rows: Tensor, allow: Tensor) -> tuple[Tensor, Tensor, bool]:
        squeeze = rows.dim() == 2
        if squeeze:
            rows = rows.unsqueeze(0)
        if allow.dim() == 2:
            allow = allow.unsqueeze(0)
        S = rows.shape[1]
        if allow.shape[-2:] != (S, S):
            raise ShapeError(
                f"allow matrix is {tuple(allow.shape[-2:])} but the sequence has {S} positions"
            )
        return rows, allow, squeeze

    def forward(self, rows: Tensor, allow: Tensor) -> Tensor:
        """Hidden states; position i sees only rows j with allow(i, j)."""
        rows, allow, squeeze = self._check(rows, allow)
        bias = bias_from_allow(allow, rows.dtype).unsqueeze(1)  # (B, 1, S, S)
        x = self.embedding_dropout(self.embedding_norm(rows))
        for layer in self.layers:
            x, _, _ = layer(x, bias)
        return x.squeeze(0) if squeeze else x

    def begin_cache(self, rows: Tensor, allow: Tensor, key_mask: Tensor) -> tuple[Tensor, AttentionCache]:
        """Full forward that also returns per-layer K/V for later steps."""
        rows, allow, _ = self._check(rows, allow)
        bias = bias_from_allow(allow, rows.dtype).unsqueeze(1)
        x = self.embedding_dropout(self.embedding_norm(rows))
        keys, values = [], []
        for layer in self.layers:
            x, k, v = layer(x, bias)
            keys.append(k)
            values.append(v)
        return x, AttentionCache(keys=keys, values=values, key_mask=key_mask)

    def step_cache(
        self,
        rows_new: Tensor,
        cache: AttentionCache,
        intra_allow: Tensor,
        append_count: int,
    ) -> tuple[Tensor, AttentionCache]:
        """Encode n new positions against a cached prefix.

        New positions attend every non-masked cached position plus each other
        per ``intra_allow`` (n, n).  The first ``append_count`` new positions
        are appended to the cache for later steps.
        """
        B, n, _ = rows_new.shape
        cached_bias = bias_from_allow(cache.key_mask, rows_new.dtype)[:, None, None, :].expand(B, 1, n, -1)
        intra_bias = bias_from_allow(intra_allow, rows_new.dtype).view(1, 1, n, n).expand(B, 1, n, n)
        bias = torch.cat([cached_bias, intra_bias], dim=-1)
        x = self.embedding_dropout(self.embedding_norm(rows_new))
        new_k, new_v = [], []
        for layer in self.layers:
            x, k, v = layer.step(x, cache.keys[len(new_k)], cache.values[len(new_v)], bias)
            new_k.append(k)
            new_v.append(v)
        if append_count:
            cache = cache.extended(
                [k[:, :, :append_count] for k in new_k],
                [v[:, :, :append_count] for v in new_v],
                append_count,
            )
        return x, cache

    # ----- parameter partitions ---------------------------------------------

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups: dict[str, list[nn.Parameter]] = {
            "token_embedding": list(self.token_embedding.parameters()),
            "position_embedding": list(self.position_embedding.parameters()),
            "segment_embedding": list(self.segment_embedding.parameters()),
            "embedding_norm": list(self.embedding_norm.parameters()),
        }
        for i, layer in enumerate(self.layers):
            groups[f"layer{i}.attention"] = [
                p
                for m in (layer.wq, layer.wk, layer.wv, layer.wo, layer.attn_norm)
                for p in m.parameters()
            ]
            groups[f"layer{i}.ffn"] = [
                p for m in (layer.ffn_in, layer.ffn_out, layer.ffn_norm) for p in m.parameters()
            ]
        return groups

    def set_frozen(self, frozen: bool, groups: Iterable[str] | None = None) -> None:
        """Freeze/unfreeze parameter groups; None means every group."""
        table = self.parameter_groups()
        names = list(table) if groups is None else list(groups)
        for name in names:
            if name not in table:
                raise KeyError(f"unknown parameter group {name!r}")
            for p in table[name]:
                p.requires_grad_(not frozen)

    def frozen_groups(self) -> set[str]:
        return {
            name
            for name, params in self.parameter_groups().items()
            if all(not p.requires_grad for p in params)
        }

    # ----- persistence -------------------------------------------------------

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {name: p.detach().cpu().numpy() for name, p in self.state_dict().items()}

    def state_sha256(self) -> str:
        return tensors_sha256(self.to_tensors(), self.cfg.to_dict())

    def save(self, path) -> None:
        save_tensors(path, self.to_tensors(), {"encoder": self.cfg.to_dict()})

    @classmethod
    def load(cls, path) -> "TransformerEncoder":
        config, tensors = load_tensors(path)
        if "encoder" not in config:
            raise CheckpointError("checkpoint does not hold an encoder config")
        enc = cls(EncoderConfig.from_dict(config["encoder"]))
        enc.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
        return enc


# ----- training primitives ----------------------------------------------------


def make_optimizer(params: Iterable[nn.Parameter], kind: str, lr: float) -> torch.optim.Optimizer:
    params = [p for p in params if p.requires_grad]
    if kind == "sgd":
        return torch.optim.SGD(params, lr=lr)
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def backward_and_step(loss: Tensor, optimizer: torch.optim.Optimizer) -> None:
    """One gradient step; frozen parameters are absent from the optimizer."""
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss: {loss.item()!r}")
    loss.backward()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def full_allow(n: int) -> Tensor:
    return torch.ones(n, n, dtype=torch.bool)


def pretrain_mlm(
    enc: TransformerEncoder,
    corpus: Sequence[Sequence[int]],
    steps: int,
    mask_prob: float,
    *,
    batch_size: int = 32,
    window: int = 32,
    learning_rate: float = 1e-3,
    seed: int = 0,
    pad_id: int = 0,
    cls_id: int = 1,
    sep_id: int = 2,
    mask_id: int = 3,
) -> TransformerEncoder:
    """Masked-token prediction over a tokenized corpus; trains in place.

    The prediction head is the token embedding table itself (tied weights),
    so no extra parameters are introduced.
    """
    if not corpus:
        raise ValueError("empty corpus")
    import random as _random

    rng = _random.Random(seed)
    opt = make_optimizer(enc.parameters(), "adam", learning_rate)
    enc.train()
    for _ in range(steps):
        batch, targets, mask_pos = _mlm_batch(
            corpus, rng, batch_size, window, mask_prob, pad_id, cls_id, sep_id, mask_id
        )
        if not mask_pos.any():
            continue  # nothing masked this step; no update
        loss = _mlm_loss(enc, batch, targets, mask_pos, pad_id)
        backward_and_step(loss, opt)
    enc.eval()
    return enc


def _mlm_batch(corpus, rng, batch_size, window, mask_prob, pad_id, cls_id, sep_id, mask_id):
    rows = []
    for _ in range(batch_size):
        line = corpus[rng.randrange(len(corpus))]
        if len(line) > window:
            start = rng.randrange(len(line) - window + 1)
            line = line[start : start + window]
        rows.append([cls_id, *line, sep_id])
    S = max(len(r) for r in rows)
    batch = torch.full((len(rows), S), pad_id, dtype=torch.long)
    targets = torch.full((len(rows), S), -100, dtype=torch.long)
    mask_pos = torch.zeros(len(rows), S, dtype=torch.bool)
    for i, r in enumerate(rows):
        batch[i, : len(r)] = torch.tensor(r)
        for j, tok in enumerate(r):
            if tok not in (cls_id, sep_id) and rng.random() < mask_prob:
                targets[i, j] = tok
                batch[i, j] = mask_id
                mask_pos[i, j] = True
    return batch, targets, mask_pos


def _mlm_loss(enc, batch, targets, mask_pos, pad_id):
    B, S = batch.shape
    real = batch != pad_id
    allow = real[:, None, :].expand(B, S, S).clone()
    allow |= torch.eye(S, dtype=torch.bool)  # pads attend themselves
    pos = torch.arange(S).expand(B, S)
    seg = torch.zeros(B, S, dtype=torch.long)
    hidden = enc(enc.embed(batch, pos, seg), allow)
    logits = hidden @ enc.token_embedding.weight.T
    return torch.nn.functional.cross_entropy(
        logits[mask_pos], targets[mask_pos], reduction="mean"
    )


def mlm_accuracy(
    enc: TransformerEncoder,
    corpus: Sequence[Sequence[int]],
    mask_prob: float,
    *,
    seed: int = 0,
    batches: int = 20,
    batch_size: int = 32,
    window: int = 32,
) -> float:
    """Held-out masked-token argmax accuracy."""
    import random as _random

    rng = _random.Random(seed)
    enc.eval()
    correct = total = 0
    with torch.no_grad():
        for _ in range(batches):
            batch, targets, mask_pos = _mlm_batch(corpus, rng, batch_size, window, mask_prob, 0, 1, 2, 3)
            if not mask_pos.any():
                continue
            B, S = batch.shape
            real = batch != 0
            allow = real[:, None, :].expand(B, S, S).clone()
            allow |= torch.eye(S, dtype=torch.bool)
            pos = torch.arange(S).expand(B, S)
            seg = torch.zeros(B, S, dtype=torch.long)
            hidden = enc(enc.embed(batch, pos, seg), allow)
            logits = hidden @ enc.token_embedding.weight.T
            pred = logits[mask_pos].argmax(dim=-1)
            correct += (pred == targets[mask_pos]).sum().item()
            total += int(mask_pos.sum())
    return correct / max(total, 1)
