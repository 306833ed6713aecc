"""Register-based visual encoder.

A ViT whose per-tile input is the image tokens concatenated with M shared
learnable registers. Each layer runs joint self-attention over all N+M rows
of every tile (no masking), then a cross-tile exchange step: the register
rows of all tiles (thumbnail included) are concatenated, passed through a
residual multi-head self-attention of their own, and scattered back before
the FFN. Only the register rows are emitted, so a tile's N image tokens
compress to M output tokens.

Block topology is pre-norm (ln -> attention -> residual, ln -> FFN ->
residual) with a dedicated pre-norm on the exchange step. Registers carry
no positional embedding, and no positional information crosses tiles, which
makes the encoder equivariant under tile permutation.

The forward is written over the dispatch helpers in ``autodiff``, so the
same code serves the plain fast path and the reverse-mode gradient path.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import falt
from .errors import BoundsError, ConfigError, StateError
from .image_crop import CropPlan, TileSet, normalize_pixels, patchify
from .numerics import SplitMix64, init_uniform


@dataclass(frozen=True)
class EncoderConfig:
    """All architecture hyperparameters of the encoder."""

    layers: int
    width: int
    heads: int
    patch: int
    tile: int
    registers: int
    max_tiles: int = 16
    ffn_mult: int = 4
    ln_eps: float = 1e-6
    reatten_enabled: bool = True

    def __post_init__(self):
        if min(self.layers, self.width, self.heads, self.patch, self.tile) < 1:
            raise ConfigError("layers, width, heads, patch, and tile must be >= 1")
        if self.registers < 1:
            raise ConfigError(f"register count must be >= 1, got {self.registers}")
        if self.max_tiles < 1:
            raise ConfigError(f"max_tiles must be >= 1, got {self.max_tiles}")
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.tile % self.patch != 0:
            raise ConfigError(f"tile {self.tile} not divisible by patch {self.patch}")
        if self.ln_eps <= 0:
            raise ConfigError(f"ln_eps must be positive, got {self.ln_eps}")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @property
    def n_image_tokens(self) -> int:
        return (self.tile // self.patch) ** 2

    @property
    def n_tokens(self) -> int:
        return self.n_image_tokens + self.registers

    @property
    def compression_ratio(self) -> float:
        return self.n_image_tokens / self.registers


PRESETS = {
    # Production-scale dimensions; only registers/tile/patch/max_tiles are
    # architecture-defining, the rest mirrors a large 384px/16 ViT.
    "paper": EncoderConfig(
        layers=24, width=1024, heads=16, patch=16, tile=384, registers=64, max_tiles=16
    ),
    # Small enough for loop-based oracles and finite-difference checks.
    "tiny": EncoderConfig(
        layers=2, width=8, heads=2, patch=16, tile=32, registers=4, max_tiles=16
    ),
}


@dataclass
class LayerWeights:
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
class ReattenWeights:
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    rq: np.ndarray
    rk: np.ndarray
    rv: np.ndarray
    ro: np.ndarray


@dataclass
class EncoderWeights:
    patch_embed: np.ndarray
    pos_embed: np.ndarray
    registers: np.ndarray
    layers: list[LayerWeights]
    reatten: list[ReattenWeights]


# ---------------------------------------------------------------------------
# Canonical tensor naming, initialization, serialization
# ---------------------------------------------------------------------------

_LAYER_FIELDS = ("ln1_gamma", "ln1_beta", "wq", "wk", "wv", "wo",
                 "ln2_gamma", "ln2_beta", "w1", "w2")
_REATTEN_FIELDS = ("ln_gamma", "ln_beta", "rq", "rk", "rv", "ro")


def tensor_specs(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...], int, int, str]]:
    """Canonical (name, shape, fan_in, fan_out, init) list.

    This order defines both the archive entry order and the PRNG draw order
    during seeded initialization.
    """
    d = cfg.width
    f = cfg.ffn_mult * d
    patch_dim = 3 * cfg.patch**2
    specs = [
        ("patch_embed", (patch_dim, d), patch_dim, d, "uniform"),
        ("pos_embed", (cfg.n_image_tokens, d), d, d, "uniform"),
        ("registers", (cfg.registers, d), d, d, "uniform"),
    ]
    for l in range(cfg.layers):
        specs += [
            (f"layers.{l}.ln1_gamma", (d,), d, d, "ones"),
            (f"layers.{l}.ln1_beta", (d,), d, d, "zeros"),
            (f"layers.{l}.wq", (d, d), d, d, "uniform"),
            (f"layers.{l}.wk", (d, d), d, d, "uniform"),
            (f"layers.{l}.wv", (d, d), d, d, "uniform"),
            (f"layers.{l}.wo", (d, d), d, d, "uniform"),
            (f"layers.{l}.ln2_gamma", (d,), d, d, "ones"),
            (f"layers.{l}.ln2_beta", (d,), d, d, "zeros"),
            (f"layers.{l}.w1", (d, f), d, f, "uniform"),
            (f"layers.{l}.w2", (f, d), f, d, "uniform"),
        ]
    for l in range(cfg.layers):
        specs += [
            (f"reatten.{l}.ln_gamma", (d,), d, d, "ones"),
            (f"reatten.{l}.ln_beta", (d,), d, d, "zeros"),
            (f"reatten.{l}.rq", (d, d), d, d, "uniform"),
            (f"reatten.{l}.rk", (d, d), d, d, "uniform"),
            (f"reatten.{l}.rv", (d, d), d, d, "uniform"),
            (f"reatten.{l}.ro", (d, d), d, d, "uniform"),
        ]
    return specs


def init_weights(cfg: EncoderConfig, seed: int, dtype=np.float32) -> EncoderWeights:
    """Seeded deterministic initialization in canonical tensor order."""
    rng = SplitMix64(seed)
    entries: dict[str, np.ndarray] = {}
    for name, shape, fan_in, fan_out, kind in tensor_specs(cfg):
        if kind == "uniform":
            entries[name] = init_uniform(shape, fan_in, fan_out, rng).astype(dtype)
        elif kind == "ones":
            entries[name] = np.ones(shape, dtype=dtype)
        else:
            entries[name] = np.zeros(shape, dtype=dtype)
    return weights_from_dict(entries, cfg)


def weights_to_dict(w: EncoderWeights, cfg: EncoderConfig) -> dict[str, np.ndarray]:
    """Flatten weights into the canonical name -> tensor mapping."""
    entries = {
        "patch_embed": w.patch_embed,
        "pos_embed": w.pos_embed,
        "registers": w.registers,
    }
    for l, lw in enumerate(w.layers):
        for fname in _LAYER_FIELDS:
            entries[f"layers.{l}.{fname}"] = getattr(lw, fname)
    for l, rw in enumerate(w.reatten):
        for fname in _REATTEN_FIELDS:
            entries[f"reatten.{l}.{fname}"] = getattr(rw, fname)
    return entries


def weights_from_dict(entries, cfg: EncoderConfig) -> EncoderWeights:
    """Assemble weights from named tensors, validating names and shapes."""
    specs = tensor_specs(cfg)
    expected = {name for name, *_ in specs}
    got = set(entries)
    if got != expected:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise ConfigError(f"weight names do not match config: missing {missing}, extra {extra}")
    for name, shape, *_ in specs:
        actual = tuple(ad.value_of(entries[name]).shape)
        if actual != shape:
            raise ConfigError(f"tensor {name!r} has shape {actual}, expected {shape}")
    layers = [
        LayerWeights(**{fname: entries[f"layers.{l}.{fname}"] for fname in _LAYER_FIELDS})
        for l in range(cfg.layers)
    ]
    reatten_ws = [
        ReattenWeights(**{fname: entries[f"reatten.{l}.{fname}"] for fname in _REATTEN_FIELDS})
        for l in range(cfg.layers)
    ]
    return EncoderWeights(
        patch_embed=entries["patch_embed"],
        pos_embed=entries["pos_embed"],
        registers=entries["registers"],
        layers=layers,
        reatten=reatten_ws,
    )


def save_weights(path: str, w: EncoderWeights, cfg: EncoderConfig) -> None:
    falt.save(path, weights_to_dict(w, cfg))


def load_weights(path: str, cfg: EncoderConfig) -> EncoderWeights:
    return weights_from_dict(falt.load(path), cfg)


def init_reatten_from_vit(w: EncoderWeights) -> EncoderWeights:
    """Copy each layer's self-attention parameters into its exchange module.

    Deep copies: later mutation of the exchange weights leaves the ViT
    parameters untouched and vice versa.
    """
    w.reatten = [
        ReattenWeights(
            ln_gamma=lw.ln1_gamma.copy(),
            ln_beta=lw.ln1_beta.copy(),
            rq=lw.wq.copy(),
            rk=lw.wk.copy(),
            rv=lw.wv.copy(),
            ro=lw.wo.copy(),
        )
        for lw in w.layers
    ]
    return w


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


@dataclass
class AttentionTrace:
    """Recorded attention rows for visualization and invariant checks.

    ``register_rows`` maps (layer, head, tile) to the M x N slice of the
    softmax rows where registers query image tokens; each entry is a piece
    of a full softmax row over N+M keys, so its row sums are <= 1. The
    ``full_rows`` / ``reatten_rows`` maps hold complete softmax matrices and
    are populated only on request (test instrumentation).
    """

    n_image_tokens: int
    n_registers: int
    register_rows: dict[tuple[int, int, int], np.ndarray] = field(default_factory=dict)
    full_rows: dict[tuple[int, int, int], np.ndarray] | None = None
    reatten_rows: dict[tuple[int, int], np.ndarray] | None = None


def _weights_dtype(w: EncoderWeights):
    return np.asarray(ad.value_of(w.patch_embed)).dtype


def embed_tiles(tiles: TileSet, w: EncoderWeights, cfg: EncoderConfig, thumbnail: bool = True):
    """Layer-0 token states: patch embeddings plus the shared registers.

    Per tile: image rows are patchify(normalized tile) @ patch_embed +
    pos_embed; register rows are the single shared register tensor. The
    thumbnail, when included, is appended last and treated exactly like a
    tile.
    """
    if len(tiles.tiles) > cfg.max_tiles:
        raise ConfigError(f"{len(tiles.tiles)} tiles exceed max_tiles={cfg.max_tiles}")
    dtype = _weights_dtype(w)
    states = []
    raster = list(tiles.tiles) + ([tiles.global_thumb] if thumbnail else [])
    for tile in raster:
        tile = np.asarray(tile)
        if tile.shape != (cfg.tile, cfg.tile, 3):
            raise ConfigError(f"tile shape {tile.shape} does not match config tile {cfg.tile}")
        tokens = patchify(normalize_pixels(tile.astype(dtype)), cfg.patch)
        image_rows = tokens @ w.patch_embed + w.pos_embed
        states.append(ad.vstack([image_rows, w.registers]))
    return states


def _multi_head_attention(x, wq, wk, wv, wo, heads: int, collect=None):
    """Pre-normed input -> multi-head softmax attention -> output projection."""
    q = x @ wq
    k = x @ wk
    v = x @ wv
    width = ad.value_of(q).shape[1]
    dk = width // heads
    scale = 1.0 / math.sqrt(dk)
    outs = []
    for h in range(heads):
        cols = slice(h * dk, (h + 1) * dk)
        attn = ad.softmax_rows((q[:, cols] @ k[:, cols].T) * scale)
        if collect is not None:
            collect(h, ad.value_of(attn))
        outs.append(attn @ v[:, cols])
    return ad.hstack(outs) @ wo


def self_attention_block(x, lw: LayerWeights, cfg: EncoderConfig, collect=None):
    """Residual pre-norm self-attention over all N+M rows jointly, unmasked."""
    normed = ad.layer_norm(x, lw.ln1_gamma, lw.ln1_beta, cfg.ln_eps)
    return x + _multi_head_attention(normed, lw.wq, lw.wk, lw.wv, lw.wo, cfg.heads, collect)


def reatten(states, rw: ReattenWeights, cfg: EncoderConfig, enabled: bool = True, collect=None):
    """Cross-tile register exchange; identity when disabled.

    Register rows of all tiles are concatenated in tile order, passed
    through residual pre-norm multi-head self-attention, and scattered back.
    Image-token rows are untouched.
    """
    if not enabled:
        return states
    shapes = {tuple(ad.value_of(s).shape) for s in states}
    if len(shapes) != 1:
        raise StateError(f"tiles at mismatched layers: state shapes {sorted(shapes)}")
    n = cfg.n_image_tokens
    m = cfg.registers
    regs = ad.vstack([s[n:] for s in states])
    normed = ad.layer_norm(regs, rw.ln_gamma, rw.ln_beta, cfg.ln_eps)
    exchanged = regs + _multi_head_attention(normed, rw.rq, rw.rk, rw.rv, rw.ro, cfg.heads, collect)
    return [
        ad.vstack([s[:n], exchanged[i * m : (i + 1) * m]]) for i, s in enumerate(states)
    ]


def ffn_block(x, lw: LayerWeights, cfg: EncoderConfig):
    """Residual pre-norm two-layer GeLU MLP, applied row-wise."""
    normed = ad.layer_norm(x, lw.ln2_gamma, lw.ln2_beta, cfg.ln_eps)
    return x + ad.gelu(normed @ lw.w1) @ lw.w2


def _map_tiles(fn, states, threads: int):
    if threads <= 1 or len(states) <= 1:
        return [fn(k, s) for k, s in enumerate(states)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(len(states)), states))


def _self_attn_collector(trace, layer, tile, trace_layers, trace_heads, trace_full):
    if trace is None:
        return None
    if trace_layers is not None and layer not in trace_layers:
        return None
    n = trace.n_image_tokens

    def collect(head, attn):
        if trace_heads is not None and head not in trace_heads:
            return
        trace.register_rows[(layer, head, tile)] = attn[n:, :n].copy()
        if trace.full_rows is not None:
            trace.full_rows[(layer, head, tile)] = attn.copy()

    return collect


def _run_layers(states, w, cfg, trace, threads, trace_layers, trace_heads, trace_full):
    for layer in range(cfg.layers):
        lw = w.layers[layer]

        def attn_fn(k, s, _lw=lw, _layer=layer):
            collect = _self_attn_collector(trace, _layer, k, trace_layers, trace_heads, trace_full)
            return self_attention_block(s, _lw, cfg, collect)

        states = _map_tiles(attn_fn, states, threads)

        reatten_collect = None
        if trace is not None and trace.reatten_rows is not None:
            if trace_layers is None or layer in trace_layers:

                def reatten_collect(head, attn, _layer=layer):
                    trace.reatten_rows[(_layer, head)] = attn.copy()

        states = reatten(states, w.reatten[layer], cfg, cfg.reatten_enabled, reatten_collect)

        def ffn_fn(k, s, _lw=lw):
            return ffn_block(s, _lw, cfg)

        states = _map_tiles(ffn_fn, states, threads)
    return states


def encode(
    tiles: TileSet,
    w: EncoderWeights,
    cfg: EncoderConfig,
    *,
    thumbnail: bool = True,
    threads: int = 1,
    record_trace: bool = False,
    trace_layers=None,
    trace_heads=None,
    trace_full: bool = False,
):
    """Run the full encoder; returns (register outputs, optional trace).

    The output stacks each tile's M register rows in tile order, thumbnail
    last: M * (n_tiles + 1) rows in total when the thumbnail is included.
    Image-token outputs are discarded. Per-tile blocks may run on a thread
    pool; the exchange step is a per-layer barrier, and results are
    bit-identical to sequential execution.
    """
    states = embed_tiles(tiles, w, cfg, thumbnail=thumbnail)
    trace = None
    if record_trace:
        trace = AttentionTrace(
            cfg.n_image_tokens,
            cfg.registers,
            full_rows={} if trace_full else None,
            reatten_rows={} if trace_full else None,
        )
    states = _run_layers(states, w, cfg, trace, threads, trace_layers, trace_heads, trace_full)
    f_hr = ad.vstack([s[cfg.n_image_tokens :] for s in states])
    return f_hr, trace


def parameter_gradients(tiles: TileSet, w: EncoderWeights, cfg: EncoderConfig, thumbnail: bool = True):
    """Analytic gradients of loss = sum(F_hr) w.r.t. every trainable tensor.

    Returns (loss value, canonical name -> gradient array). Runs the same
    forward as ``encode`` with the weights wrapped as autodiff variables.
    """
    params = {name: ad.Var(tensor) for name, tensor in weights_to_dict(w, cfg).items()}
    var_weights = weights_from_dict(params, cfg)
    states = embed_tiles(tiles, var_weights, cfg, thumbnail=thumbnail)
    states = _run_layers(states, var_weights, cfg, None, 1, None, None, False)
    loss = ad.total(ad.vstack([s[cfg.n_image_tokens :] for s in states]))
    loss.backward()
    grads = {
        name: (v.grad if v.grad is not None else np.zeros_like(v.value))
        for name, v in params.items()
    }
    return float(loss.value), grads


def extract_register_attention(
    trace: AttentionTrace, layer: int, head: int, register: int, plan: CropPlan
) -> np.ndarray:
    """Stitch one register's image-token attention into the crop grid.

    Each tile's N-entry row reshapes to (tile/p, tile/p); tiles are placed
    at their grid position. The thumbnail is excluded.
    """
    if not 0 <= register < trace.n_registers:
        raise BoundsError(f"register {register} out of range [0, {trace.n_registers})")
    side = math.isqrt(trace.n_image_tokens)
    if side * side != trace.n_image_tokens:
        raise BoundsError(f"non-square token count {trace.n_image_tokens}")
    first = trace.register_rows.get((layer, head, 0))
    if first is None:
        raise BoundsError(f"no recorded attention for layer {layer}, head {head}")
    grid = np.zeros((plan.rows * side, plan.cols * side), dtype=first.dtype)
    for k in range(plan.n_tiles):
        rows = trace.register_rows.get((layer, head, k))
        if rows is None:
            raise BoundsError(f"no recorded attention for layer {layer}, head {head}, tile {k}")
        r, c = divmod(k, plan.cols)
        grid[r * side : (r + 1) * side, c * side : (c + 1) * side] = rows[register].reshape(
            side, side
        )
    return grid


def config_with_overrides(base: EncoderConfig, **overrides) -> EncoderConfig:
    """Dataclass replace that drops None values (CLI convenience)."""
    kept = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(base, **kept) if kept else base
