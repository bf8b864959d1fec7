"""Multi-head attention and its foreground/background-partitioned variant.

The partitioned form routes every query to keys and values of its own mask
group only: foreground queries see foreground keys, background queries see
background keys. It is implemented as a single softmax with disallowed pairs
masked to -inf, which is algebraically identical to running two independent
attentions and merging by mask, and keeps the cross-group derivative exactly
zero. Output projections are deliberately absent; callers own all linear
maps.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .errors import DegeneratePartitionError, ParameterError, ShapeError


def _as_2d(name: str, x: torch.Tensor) -> torch.Tensor:
    if x.dim() != 2:
        raise ShapeError(f"{name} must be (tokens, dim), got {tuple(x.shape)}")
    return x


def _as_bool_mask(mask, n_tokens: int, name: str) -> torch.Tensor:
    m = torch.as_tensor(np.asarray(mask)) if not isinstance(mask, torch.Tensor) else mask
    m = m.reshape(-1)
    if m.numel() != n_tokens:
        raise ShapeError(f"{name} has {m.numel()} entries for {n_tokens} tokens")
    if m.dtype != torch.bool:
        vals = m.detach()
        if not bool(((vals == 0) | (vals == 1)).all()):
            raise ParameterError(f"{name} must be binary")
        m = m != 0
    return m


def masked_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                     n_heads: int, allowed: torch.Tensor | None = None) -> torch.Tensor:
    """Batched scaled dot-product attention with an optional pair mask.

    Args:
        q: (B, Nq, d) queries.
        k, v: (B, Nk, d) keys and values.
        n_heads: head count; d must be divisible by it.
        allowed: optional (B, Nq, Nk) bool; False pairs get -inf scores.
            Every query row must keep at least one allowed key.

    Returns:
        (B, Nq, d) attention output with heads concatenated; no output
        projection is applied.
    """
    if q.dim() != 3 or k.dim() != 3 or v.dim() != 3:
        raise ShapeError("masked_attention expects batched (B, N, d) tensors")
    b, nq, d = q.shape
    nk = k.shape[1]
    if k.shape[0] != b or v.shape[0] != b or v.shape[1] != nk:
        raise ShapeError("key/value batch or token counts disagree")
    if k.shape[2] != d or v.shape[2] != d:
        raise ShapeError("query/key/value dims disagree")
    if n_heads < 1 or d % n_heads != 0:
        raise ParameterError(f"dim {d} not divisible by n_heads {n_heads}")
    if nk == 0:
        raise ParameterError("attention requires at least one key")
    dh = d // n_heads

    qh = q.view(b, nq, n_heads, dh).transpose(1, 2)
    kh = k.view(b, nk, n_heads, dh).transpose(1, 2)
    vh = v.view(b, nk, n_heads, dh).transpose(1, 2)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(dh)
    if allowed is not None:
        if allowed.shape != (b, nq, nk):
            raise ShapeError(f"allowed must be (B, Nq, Nk), got {tuple(allowed.shape)}")
        scores = scores.masked_fill(~allowed[:, None, :, :], float("-inf"))
    weights = scores.softmax(dim=-1)
    out = weights @ vh
    return out.transpose(1, 2).reshape(b, nq, d)


def mha(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, n_heads: int) -> torch.Tensor:
    """Plain multi-head attention over single (tokens, dim) matrices."""
    q, k, v = _as_2d("q", q), _as_2d("k", k), _as_2d("v", v)
    return masked_attention(q[None], k[None], v[None], n_heads)[0]


def partition_allowed(query_mask: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
    """(Nq, Nk) bool pair mask: a query may attend keys of its own group."""
    return query_mask[:, None] == key_mask[None, :]


def shape_adaptive_mha(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                       m_a, key_mask, n_heads: int) -> torch.Tensor:
    """Group-partitioned attention merged by the query-side mask.

    Equivalent to m_a * mha(q, k_fg, v_fg) + (1 - m_a) * mha(q, k_bg, v_bg)
    row-selected by m_a, with the foreground subsets taken where key_mask is
    1. Raises DegeneratePartitionError when a non-empty query group has no
    matching keys.
    """
    q, k, v = _as_2d("q", q), _as_2d("k", k), _as_2d("v", v)
    qm = _as_bool_mask(m_a, q.shape[0], "m_a")
    km = _as_bool_mask(key_mask, k.shape[0], "key_mask")
    for group, label in ((True, "foreground"), (False, "background")):
        if bool((qm == group).any()) and not bool((km == group).any()):
            raise DegeneratePartitionError(
                f"{label} queries present but no {label} keys to attend"
            )
    allowed = partition_allowed(qm, km)
    return masked_attention(q[None], k[None], v[None], n_heads, allowed[None])[0]


def shape_adaptive_cross(q: torch.Tensor, prompt_tokens: torch.Tensor,
                         null_tokens: torch.Tensor, m_a, n_heads: int) -> torch.Tensor:
    """Route foreground queries to prompt tokens and background to null tokens.

    Prompt/null token matrices serve as both keys and values; the two groups
    are merged by the query-side mask exactly as in shape_adaptive_mha.
    """
    q = _as_2d("q", q)
    prompt_tokens = _as_2d("prompt_tokens", prompt_tokens)
    null_tokens = _as_2d("null_tokens", null_tokens)
    if prompt_tokens.shape[0] == 0 or null_tokens.shape[0] == 0:
        raise ParameterError("prompt_tokens and null_tokens must be non-empty")
    qm = _as_bool_mask(m_a, q.shape[0], "m_a")
    kv = torch.cat([prompt_tokens, null_tokens], dim=0)
    key_groups = torch.cat([
        torch.ones(prompt_tokens.shape[0], dtype=torch.bool, device=q.device),
        torch.zeros(null_tokens.shape[0], dtype=torch.bool, device=q.device),
    ])
    allowed = partition_allowed(qm, key_groups)
    return masked_attention(q[None], kv[None], kv[None], n_heads, allowed[None])[0]
