"""Query refinement against flattened mask features.

Each Transformer block is cross-attention (queries -> mask features) followed
by self-attention among queries and an FFN, all post-norm. Three blocks per
decoder level by default; the order in which levels are visited is either
``sequential`` (all blocks of level 1, then level 2, ...) or ``cyclic``
(block b of every level before block b+1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..config import ConfigError
from ..core import ContractError, LayerNorm, Linear, Module, ModuleList, Parameter, Tensor
from ..core import functional as F
from .pixel_decoder import DecoderLevelOutput


@dataclass
class QuerySet:
    q: Tensor          # [N, D] or [B, N, D]
    q_pos: Tensor      # [N, D]
    states: list[Tensor] = field(default_factory=list)


@dataclass
class AttentionContext:
    source: Tensor     # [B, S, D], S = H*W, row-major
    pos: np.ndarray    # [S, D]


def sinusoidal_pos_embed(h: int, w: int, dim: int, temperature: float = 10000.0) -> np.ndarray:
    """2-D sine embedding, [H*W, dim], y channels first then x channels.

    Each half interleaves sin/cos over geometric frequencies of the 0-based
    pixel index, so position (0, 0) is sin=0, cos=1 throughout.
    """
    if dim % 4:
        raise ConfigError(f"positional embedding width {dim} must be divisible by 4")
    half = dim // 2
    freq = temperature ** (2 * (np.arange(half) // 2) / half)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")

    def encode(p):
        angles = p.reshape(-1, 1) / freq
        out = np.empty_like(angles)
        out[:, 0::2] = np.sin(angles[:, 0::2])
        out[:, 1::2] = np.cos(angles[:, 1::2])
        return out

    return np.concatenate([encode(ys), encode(xs)], axis=1)


def flatten_context(x_mask: Tensor) -> AttentionContext:
    b, d, h, w = x_mask.shape
    src = x_mask.reshape(b, d, h * w).transpose(0, 2, 1)
    return AttentionContext(src, sinusoidal_pos_embed(h, w, d))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the last two axes; q [B,N,D], k/v [B,S,D]."""
    b, n, d = q.shape
    s = k.shape[1]
    dh = d // heads
    if heads > 1:
        q = q.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
        k = k.reshape(b, s, heads, dh).transpose(0, 2, 1, 3)
        v = v.reshape(b, s, heads, dh).transpose(0, 2, 1, 3)
    scores = F.matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(dh))
    weights = F.softmax_lastdim(scores)
    out = F.matmul(weights, v)
    if heads > 1:
        out = out.transpose(0, 2, 1, 3).reshape(b, n, d)
    return out, weights


class CrossAttentionBlock(Module):
    def __init__(self, dim: int, rng: np.random.Generator, heads: int = 1):
        super().__init__()
        self.heads = heads
        self.f_q = Linear(dim, dim, rng)
        self.f_k = Linear(dim, dim, rng)
        self.f_v = Linear(dim, dim, rng)
        self.norm = LayerNorm(dim)
        self.last_weights: Optional[np.ndarray] = None

    def forward(self, queries: Tensor, q_pos: Tensor, ctx: AttentionContext) -> Tensor:
        if ctx.source.shape[1] == 0:
            raise ContractError("cross-attention needs a non-empty source")
        q = self.f_q(queries + q_pos)
        k = self.f_k(ctx.source + Tensor(ctx.pos))
        v = self.f_v(ctx.source)
        out, weights = attention(q, k, v, self.heads)
        self.last_weights = weights.data
        return self.norm(out + queries)


class SelfAttentionFFNBlock(Module):
    def __init__(self, dim: int, ffn_dim: int, rng: np.random.Generator, heads: int = 1):
        super().__init__()
        self.heads = heads
        self.f_q = Linear(dim, dim, rng)
        self.f_k = Linear(dim, dim, rng)
        self.f_v = Linear(dim, dim, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn_in = Linear(dim, ffn_dim, rng)
        self.ffn_out = Linear(ffn_dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.last_weights: Optional[np.ndarray] = None

    def forward(self, queries: Tensor, q_pos: Tensor) -> Tensor:
        qk_in = queries + q_pos
        out, weights = attention(self.f_q(qk_in), self.f_k(qk_in), self.f_v(queries), self.heads)
        self.last_weights = weights.data
        x = self.norm1(out + queries)
        return self.norm2(x + self.ffn_out(F.relu(self.ffn_in(x))))


class TransformerBlock(Module):
    def __init__(self, dim: int, ffn_dim: int, rng: np.random.Generator, heads: int = 1):
        super().__init__()
        self.cross = CrossAttentionBlock(dim, rng, heads)
        self.self_ffn = SelfAttentionFFNBlock(dim, ffn_dim, rng, heads)

    def forward(self, queries: Tensor, q_pos: Tensor, ctx: AttentionContext) -> Tensor:
        return self.self_ffn(self.cross(queries, q_pos, ctx), q_pos)


class TransformerDecoder(Module):
    def __init__(self, num_queries: int, dim: int, ffn_dim: int, rng: np.random.Generator,
                 num_levels: int = 3, blocks_per_layer: int = 3, heads: int = 1):
        super().__init__()
        self.num_levels = num_levels
        self.blocks_per_layer = blocks_per_layer
        self.query_feat = Parameter(rng.standard_normal((num_queries, dim)))
        self.query_pos = Parameter(rng.standard_normal((num_queries, dim)))
        # blocks[level * blocks_per_layer + b]
        self.blocks = ModuleList([TransformerBlock(dim, ffn_dim, rng, heads)
                                  for _ in range(num_levels * blocks_per_layer)])

    def initial_queries(self, batch: int) -> QuerySet:
        n, d = self.query_feat.shape
        return QuerySet(F.broadcast_to(self.query_feat, (batch, n, d)), self.query_pos)

    def schedule(self, order: str) -> list[tuple[int, int]]:
        """(level index, block index) pairs in execution order."""
        if order == "sequential":
            return [(lv, b) for lv in range(self.num_levels) for b in range(self.blocks_per_layer)]
        if order == "cyclic":
            return [(lv, b) for b in range(self.blocks_per_layer) for lv in range(self.num_levels)]
        raise ConfigError(f"unknown update order {order!r}")

    def refine(self, qs: QuerySet, levels: list[DecoderLevelOutput], order: str = "sequential") -> QuerySet:
        if not levels:
            raise ContractError("refine needs at least one decoder level")
        if len(levels) != self.num_levels:
            raise ContractError(f"decoder has blocks for {self.num_levels} levels, got {len(levels)}")
        contexts = [flatten_context(lv.x_mask) for lv in levels]
        q = qs.q
        states = list(qs.states)
        for lv, b in self.schedule(order):
            q = self.blocks[lv * self.blocks_per_layer + b](q, qs.q_pos, contexts[lv])
            states.append(q)
        return QuerySet(q, qs.q_pos, states)
