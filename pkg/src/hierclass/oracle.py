"""Brute-force reference implementations for property tests.

Everything here is written against plain numpy arrays and python scalars,
deliberately sharing no code (and no imports) with the production modules it
checks.  Instances are capped at 50 positions; these are O(n^2) to O(n^3)
loops and exist for verification, not speed.
"""

from __future__ import annotations

import math

import numpy as np

SIZE_CAP = 50


class OracleSizeError(ValueError):
    pass


def _cap(n: int) -> None:
    if n > SIZE_CAP:
        raise OracleSizeError(f"oracle instances are capped at {SIZE_CAP} positions, got {n}")


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        mu = float(np.mean(x[i]))
        var = float(np.mean((x[i] - mu) ** 2))
        out[i] = (x[i] - mu) / math.sqrt(var + eps) * gamma + beta
    return out


def _linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # weight is (out, in), matching the fast path's storage convention.
    return x @ weight.T + bias


def _gelu(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    flat_in, flat_out = x.reshape(-1), out.reshape(-1)
    for i in range(flat_in.size):
        flat_out[i] = 0.5 * flat_in[i] * (1.0 + math.erf(flat_in[i] / math.sqrt(2.0)))
    return out


def naive_forward(
    rows: np.ndarray,
    allow: np.ndarray,
    params: dict[str, np.ndarray],
    num_layers: int,
    num_heads: int,
) -> np.ndarray:
    """Loop-based replica of the masked encoder forward (dropout off).

    ``params`` uses the encoder's state-dict names.  Attention is computed one
    query position and one head at a time; blocked keys are simply skipped,
    which equals the -1e9 additive-bias path because exp(-1e9) underflows to
    exactly zero.
    """
    S, d = rows.shape
    _cap(S)
    dz = d // num_heads
    x = _layer_norm(
        rows.astype(np.float64),
        params["embedding_norm.weight"].astype(np.float64),
        params["embedding_norm.bias"].astype(np.float64),
    )
    for layer in range(num_layers):
        p = lambda name: params[f"layers.{layer}.{name}"].astype(np.float64)  # noqa: E731
        q_all = _linear(x, p("wq.weight"), p("wq.bias"))
        k_all = _linear(x, p("wk.weight"), p("wk.bias"))
        v_all = _linear(x, p("wv.weight"), p("wv.bias"))
        attn_out = np.zeros_like(x)
        for i in range(S):
            for head in range(num_heads):
                lo, hi = head * dz, (head + 1) * dz
                logits = {}
                for j in range(S):
                    if allow[i, j]:
                        logits[j] = float(np.dot(q_all[i, lo:hi], k_all[j, lo:hi])) / math.sqrt(dz)
                top = max(logits.values())
                weights = {j: math.exp(val - top) for j, val in logits.items()}
                z = sum(weights.values())
                for j, w in weights.items():
                    attn_out[i, lo:hi] += (w / z) * v_all[j, lo:hi]
        x = _layer_norm(
            x + _linear(attn_out, p("wo.weight"), p("wo.bias")),
            p("attn_norm.weight"),
            p("attn_norm.bias"),
        )
        h = _linear(_gelu(_linear(x, p("ffn_in.weight"), p("ffn_in.bias"))), p("ffn_out.weight"), p("ffn_out.bias"))
        x = _layer_norm(x + h, p("ffn_norm.weight"), p("ffn_norm.bias"))
    return x


def mask_from_edges(num_labels: int, edges: list[tuple[int, int]]) -> np.ndarray:
    """Allow matrix from edge enumeration: diagonal plus both edge directions."""
    allow = np.zeros((num_labels, num_labels), dtype=bool)
    for v in range(num_labels):
        allow[v, v] = True
    for parent, child in edges:
        allow[parent, child] = True
        allow[child, parent] = True
    return allow


def packed_mask(num_text_tokens: int, depth: int) -> np.ndarray:
    """Allow matrix of a packed [text | teacher | masked] input by rule enumeration.

    Text span is [CLS] + tokens + [SEP]; each label part has ``depth`` level
    slots plus a trailing separator that behaves like a level depth+1 slot.
    """
    text_len = num_text_tokens + 2
    size = text_len + 2 * (depth + 1)
    _cap(size)

    def kind(idx: int) -> tuple[str, int]:
        if idx < text_len:
            return "text", 0
        idx -= text_len
        if idx <= depth:
            return "teacher", idx + 1  # separator lands on depth + 1
        idx -= depth + 1
        return "masked", idx + 1

    allow = np.zeros((size, size), dtype=bool)
    for i in range(size):
        kind_i, level_i = kind(i)
        for j in range(size):
            kind_j, level_j = kind(j)
            if kind_i == "text":
                ok = kind_j == "text"
            elif kind_i == "teacher":
                ok = kind_j == "text" or (kind_j == "teacher" and level_j <= level_i)
            else:
                ok = (
                    kind_j == "text"
                    or (kind_j == "teacher" and level_j < level_i)
                    or (kind_j == "masked" and i == j)
                )
            allow[i, j] = ok
    return allow


def loop_bce(scores: np.ndarray, targets: np.ndarray) -> float:
    """Summed binary cross-entropy, scalar loops, scores clamped to [1e-7, 1-1e-7]."""
    assert scores.shape == targets.shape
    total = 0.0
    for s, y in zip(scores.reshape(-1), targets.reshape(-1)):
        s = min(max(float(s), 1e-7), 1.0 - 1e-7)
        total -= float(y) * math.log(s) + (1.0 - float(y)) * math.log(1.0 - s)
    return total


def fd_gradient(f, theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f(theta.reshape(theta.shape)))
        flat[i] = orig - eps
        down = float(f(theta.reshape(theta.shape)))
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2.0 * eps)
    return grad


def eq6_expansion(query_rows: np.ndarray, key_rows: np.ndarray, wq: np.ndarray, wk: np.ndarray) -> float:
    """Sum of per-label attention logits between two groups of label rows.

    By bilinearity this equals the single logit computed from the summed
    rows; the four-term case is two rows in each group.
    """
    total = 0.0
    for qr in query_rows:
        for kr in key_rows:
            total += float((qr @ wq) @ (kr @ wk).T)
    return total
