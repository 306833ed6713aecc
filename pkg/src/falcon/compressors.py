"""Vision-language projector plus the three baseline token compressors.

The projector maps register outputs toward an LLM embedding width. The
baselines (average pooling, pixel shuffle, a learnable-query abstractor)
operate on a plain ViT's per-tile image-token features and all emit exactly
``target_tokens`` rows per tile, so token budgets and FLOPs compare
like-for-like against the register route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig
from .errors import ShapeError
from .numerics import SplitMix64, gelu, init_uniform, layer_norm, softmax_rows

COMPRESSOR_KINDS = ("registers", "pool", "pixel_shuffle", "abstractor")

_LN_EPS = 1e-6


@dataclass(frozen=True)
class CompressorSpec:
    kind: str
    target_tokens: int = 64

    def __post_init__(self):
        if self.kind not in COMPRESSOR_KINDS:
            raise ShapeError(f"unknown compressor kind {self.kind!r}")


# ---------------------------------------------------------------------------
# MLP projector
# ---------------------------------------------------------------------------


@dataclass
class ProjectorWeights:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def init_projector(d: int, d_llm: int, rng: SplitMix64, dtype=np.float32) -> ProjectorWeights:
    return ProjectorWeights(
        w1=init_uniform((d, d_llm), d, d_llm, rng).astype(dtype),
        b1=np.zeros(d_llm, dtype=dtype),
        w2=init_uniform((d_llm, d_llm), d_llm, d_llm, rng).astype(dtype),
        b2=np.zeros(d_llm, dtype=dtype),
    )


def mlp_project(f: np.ndarray, pw: ProjectorWeights) -> np.ndarray:
    """Row-wise two-layer GeLU MLP: gelu(f @ W1 + b1) @ W2 + b2."""
    f = np.asarray(f)
    if f.ndim != 2 or f.shape[1] != pw.w1.shape[0]:
        raise ShapeError(f"projector input {f.shape} does not match W1 {pw.w1.shape}")
    return gelu(f @ pw.w1 + pw.b1) @ pw.w2 + pw.b2


# ---------------------------------------------------------------------------
# Pooling and pixel-shuffle baselines
# ---------------------------------------------------------------------------


def _square_side(feats: np.ndarray, factor: int = 3) -> int:
    if feats.ndim != 2:
        raise ShapeError(f"expected a 2-D token matrix, got {feats.shape}")
    side = math.isqrt(feats.shape[0])
    if side * side != feats.shape[0]:
        raise ShapeError(f"token count {feats.shape[0]} is not a perfect square")
    if side % factor != 0:
        raise ShapeError(f"grid side {side} not divisible by pooling factor {factor}")
    return side


def avg_pool_compress(feats: np.ndarray) -> np.ndarray:
    """3x3 average pooling with stride 3 over the token grid (576 -> 64)."""
    side = _square_side(feats)
    d = feats.shape[1]
    out = side // 3
    grid = feats.reshape(out, 3, out, 3, d)
    return grid.mean(axis=(1, 3)).reshape(out * out, d)


def pixel_shuffle_compress(feats: np.ndarray, proj: np.ndarray) -> np.ndarray:
    """Space-to-depth by 3 (fixed raster order of each 3x3 neighborhood),
    then a linear projection 9D -> D."""
    side = _square_side(feats)
    d = feats.shape[1]
    proj = np.asarray(proj)
    if proj.shape != (9 * d, d):
        raise ShapeError(f"projection shape {proj.shape}, expected {(9 * d, d)}")
    out = side // 3
    stacked = (
        feats.reshape(out, 3, out, 3, d).transpose(0, 2, 1, 3, 4).reshape(out * out, 9 * d)
    )
    return stacked @ proj


# ---------------------------------------------------------------------------
# Abstractor baseline (learnable queries + cross-attention)
# ---------------------------------------------------------------------------


@dataclass
class AbstractorBlock:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class AbstractorWeights:
    heads: int
    blocks: list[AbstractorBlock]


def init_abstractor(
    d: int, heads: int, rng: SplitMix64, depth: int = 2, dtype=np.float32
) -> AbstractorWeights:
    blocks = []
    for _ in range(depth):
        blocks.append(
            AbstractorBlock(
                ln1_gamma=np.ones(d, dtype=dtype),
                ln1_beta=np.zeros(d, dtype=dtype),
                wq=init_uniform((d, d), d, d, rng).astype(dtype),
                wk=init_uniform((d, d), d, d, rng).astype(dtype),
                wv=init_uniform((d, d), d, d, rng).astype(dtype),
                wo=init_uniform((d, d), d, d, rng).astype(dtype),
                ln2_gamma=np.ones(d, dtype=dtype),
                ln2_beta=np.zeros(d, dtype=dtype),
                w1=init_uniform((d, 4 * d), d, 4 * d, rng).astype(dtype),
                w2=init_uniform((4 * d, d), 4 * d, d, rng).astype(dtype),
            )
        )
    return AbstractorWeights(heads=heads, blocks=blocks)


def _cross_attention(queries, feats, blk: AbstractorBlock, heads: int, collect=None):
    q = queries @ blk.wq
    k = feats @ blk.wk
    v = feats @ blk.wv
    dk = q.shape[1] // heads
    scale = 1.0 / math.sqrt(dk)
    outs = []
    for h in range(heads):
        cols = slice(h * dk, (h + 1) * dk)
        attn = softmax_rows((q[:, cols] @ k[:, cols].T) * scale)
        if collect is not None:
            collect(h, attn)
        outs.append(attn @ v[:, cols])
    return np.hstack(outs) @ blk.wo


def abstractor_compress(
    feats: np.ndarray, queries: np.ndarray, aw: AbstractorWeights, collect=None
) -> np.ndarray:
    """Learnable queries cross-attend to image features over two blocks.

    Each block: residual pre-norm multi-head cross-attention (queries attend
    to the raw features), then a residual pre-norm GeLU FFN on the queries.
    Output row count always equals the query count.
    """
    feats = np.asarray(feats)
    q = np.asarray(queries)
    if feats.ndim != 2 or q.ndim != 2 or feats.shape[1] != q.shape[1]:
        raise ShapeError(f"feature/query widths disagree: {feats.shape} vs {q.shape}")
    for blk in aw.blocks:
        normed = layer_norm(q, blk.ln1_gamma, blk.ln1_beta, _LN_EPS)
        q = q + _cross_attention(normed, feats, blk, aw.heads, collect)
        normed = layer_norm(q, blk.ln2_gamma, blk.ln2_beta, _LN_EPS)
        q = q + gelu(normed @ blk.w1) @ blk.w2
    return q


# ---------------------------------------------------------------------------
# Structural comparison (token parity, parameters, FLOPs)
# ---------------------------------------------------------------------------


def _attention_ffn_macs(n_tokens: int, d: int) -> int:
    """Multiply-adds of one transformer layer on n_tokens rows of width d."""
    return 4 * n_tokens * d**2 + 2 * n_tokens**2 * d + 8 * n_tokens * d**2


def comparison_row(
    kind: str,
    cfg: EncoderConfig,
    target_tokens: int = 64,
    abstractor_depth: int = 2,
    n_tiles: int | None = None,
    thumbnail: bool = True,
) -> dict:
    """Per-tile token/parameter/FLOP accounting for one compression route.

    FLOP figures are multiply-add counts. For the register route the figure
    is the marginal per-tile transformer cost of carrying M extra rows
    through all L layers; the cross-tile exchange cost is reported
    separately (it is shared across tiles, so it is quoted in total for a
    full load of ``n_tiles`` tiles plus the thumbnail).
    """
    spec = CompressorSpec(kind, target_tokens)
    n = cfg.n_image_tokens
    m = cfg.registers if kind == "registers" else spec.target_tokens
    d = cfg.width
    row = {"kind": kind, "tokens_per_tile": m}
    if kind == "pool":
        row["params"] = 0
        row["flops_per_tile"] = n * d
    elif kind == "pixel_shuffle":
        row["params"] = 9 * d * d
        row["flops_per_tile"] = m * 9 * d * d
    elif kind == "abstractor":
        block_params = 4 * d * d + 8 * d * d + 4 * d
        row["params"] = m * d + abstractor_depth * block_params
        block_flops = 2 * m * d**2 + 2 * n * d**2 + 2 * m * n * d + 8 * m * d**2
        row["flops_per_tile"] = abstractor_depth * block_flops
    else:  # registers
        row["params"] = cfg.registers * d + cfg.layers * (4 * d * d + 2 * d)
        marginal = _attention_ffn_macs(n + cfg.registers, d) - _attention_ffn_macs(n, d)
        row["flops_per_tile"] = cfg.layers * marginal
        t = (cfg.max_tiles if n_tiles is None else n_tiles) + (1 if thumbnail else 0)
        reg_tokens = cfg.registers * t
        row["reatten_flops_total"] = cfg.layers * (
            4 * reg_tokens * d**2 + 2 * reg_tokens**2 * d
        )
    return row
