"""Patch-based transformer classifier.

Pipeline: flatten the image into P x P patches, project each patch to the
model width, prepend a learnable class token, add fixed sinusoidal
position encodings, run a stack of post-norm encoder layers (multi-head
scaled dot-product attention + position-wise feed-forward, residual
connections, layer norm), and classify the final class-token vector with
a small MLP head. Losses and metrics consume raw logits; no terminal
softmax is applied here.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .seeding import STREAM_INIT, substream
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters.

    Defaults: width 64, 8 heads, 8 layers, dropout 0.5, a two-hidden-layer
    classification head of widths (2*model_dim, model_dim), and an inner
    feed-forward width of 2*model_dim.
    """

    image_size: int
    patch_size: int
    num_classes: int
    channels: int = 3
    model_dim: int = 64
    num_heads: int = 8
    num_layers: int = 8
    ffn_dim: Optional[int] = None
    dropout_rate: float = 0.5
    head_hidden: Optional[tuple[int, ...]] = None
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 2 * self.model_dim)
        if self.head_hidden is None:
            object.__setattr__(self, "head_hidden", (2 * self.model_dim, self.model_dim))
        else:
            object.__setattr__(self, "head_hidden", tuple(int(h) for h in self.head_hidden))
        self.validate()

    def validate(self) -> None:
        if self.image_size <= 0 or self.patch_size <= 0:
            raise ConfigError(f"image_size and patch_size must be positive, got {self.image_size}, {self.patch_size}")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if self.model_dim % 2 != 0:
            raise ConfigError(f"model_dim must be even for sinusoidal position encoding, got {self.model_dim}")
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.ffn_dim is not None and self.ffn_dim < 1:
            raise ConfigError(f"ffn_dim must be >= 1, got {self.ffn_dim}")
        if self.ln_eps <= 0.0:
            raise ConfigError(f"ln_eps must be positive, got {self.ln_eps}")
        if any(h < 1 for h in self.head_hidden):
            raise ConfigError(f"head_hidden widths must be >= 1, got {self.head_hidden}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def seq_len(self) -> int:
        # patches plus the class token
        return self.num_patches + 1

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["head_hidden"] = list(self.head_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("head_hidden") is not None:
            d["head_hidden"] = tuple(d["head_hidden"])
        return cls(**d)


@dataclass(frozen=True)
class LayerParams:
    """Tensors of one encoder layer; attention projections are stacked per head."""

    w_q: Tensor  # (heads, model_dim, head_dim)
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor  # (model_dim, model_dim)
    ln1_gain: Tensor
    ln1_bias: Tensor
    ffn_w1: Tensor  # (model_dim, ffn_dim)
    ffn_b1: Tensor
    ffn_w2: Tensor  # (ffn_dim, model_dim)
    ffn_b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


def _param_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Ordered (name, shape, kind) for every parameter; kind drives initialization."""
    d, h, dh, f = config.model_dim, config.num_heads, config.head_dim, config.ffn_dim
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("patch_proj.w", (config.patch_dim, d), "weight"),
        ("patch_proj.b", (d,), "zero"),
        ("class_token", (d,), "zero"),
    ]
    for i in range(config.num_layers):
        p = f"layers.{i}."
        specs += [
            (p + "attn.w_q", (h, d, dh), "weight"),
            (p + "attn.w_k", (h, d, dh), "weight"),
            (p + "attn.w_v", (h, d, dh), "weight"),
            (p + "attn.w_o", (d, d), "weight"),
            (p + "ln1.gain", (d,), "one"),
            (p + "ln1.bias", (d,), "zero"),
            (p + "ffn.w1", (d, f), "weight"),
            (p + "ffn.b1", (f,), "zero"),
            (p + "ffn.w2", (f, d), "weight"),
            (p + "ffn.b2", (d,), "zero"),
            (p + "ln2.gain", (d,), "one"),
            (p + "ln2.bias", (d,), "zero"),
        ]
    widths = [d, *config.head_hidden, config.num_classes]
    last = len(widths) - 2
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        # the final classifier layer starts at zero so an untrained model
        # predicts exactly uniform probabilities (chance-level loss ln C)
        specs += [
            (f"head.{i}.w", (fan_in, fan_out), "zero" if i == last else "weight"),
            (f"head.{i}.b", (fan_out,), "zero"),
        ]
    return specs


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected parameter shapes; a pure function of the config."""
    return {name: shape for name, shape, _ in _param_specs(config)}


class ModelParams:
    """Named parameter tensors validated against a config."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        expected = param_shapes(config)
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        if missing or extra:
            raise ConfigError(f"parameter names do not match config (missing={missing}, unexpected={extra})")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"parameter '{name}' has shape {tensors[name].shape}, expected {shape}")
        self.config = config
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def items(self) -> Iterable[tuple[str, Tensor]]:
        # iteration order matches _param_specs, which is deterministic
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def layer(self, i: int) -> LayerParams:
        p = f"layers.{i}."
        g = self._tensors
        return LayerParams(
            w_q=g[p + "attn.w_q"], w_k=g[p + "attn.w_k"], w_v=g[p + "attn.w_v"], w_o=g[p + "attn.w_o"],
            ln1_gain=g[p + "ln1.gain"], ln1_bias=g[p + "ln1.bias"],
            ffn_w1=g[p + "ffn.w1"], ffn_b1=g[p + "ffn.b1"],
            ffn_w2=g[p + "ffn.w2"], ffn_b2=g[p + "ffn.b2"],
            ln2_gain=g[p + "ln2.gain"], ln2_bias=g[p + "ln2.bias"],
        )

    def head_layers(self) -> list[tuple[Tensor, Tensor]]:
        out = []
        i = 0
        while f"head.{i}.w" in self._tensors:
            out.append((self._tensors[f"head.{i}.w"], self._tensors[f"head.{i}.b"]))
            i += 1
        return out


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded initialization: Xavier-uniform weights, zero biases and class token, unit norm gains."""
    rng = substream(seed, STREAM_INIT)
    tensors: dict[str, Tensor] = {}
    for name, shape, kind in _param_specs(config):
        if kind == "weight":
            fan_in, fan_out = shape[-2], shape[-1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=shape)
        elif kind == "one":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(config, tensors)


def extract_patches(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Split (..., H, W, C) pixels into flattened patches (..., N, P*P*C).

    Patches are ordered row-major over the patch grid; each patch is the
    row-major flattening of its P x P x C block, so `patches_to_image`
    inverts the operation exactly.
    """
    if image.ndim not in (3, 4):
        raise ConfigError(f"expected (H, W, C) or (B, H, W, C) pixels, got shape {image.shape}")
    h, w, c = image.shape[-3], image.shape[-2], image.shape[-1]
    p = int(patch_size)
    if p <= 0 or h % p != 0 or w % p != 0:
        raise ConfigError(f"image size {h}x{w} is not divisible by patch size {p}")
    lead = image.shape[:-3]
    grid_h, grid_w = h // p, w // p
    x = image.reshape(lead + (grid_h, p, grid_w, p, c))
    x = np.moveaxis(x, -3, -4)  # (..., grid_h, grid_w, p, p, c)
    return np.ascontiguousarray(x).reshape(lead + (grid_h * grid_w, p * p * c))


def patches_to_image(patches: np.ndarray, image_size: int, patch_size: int, channels: int) -> np.ndarray:
    """Inverse of `extract_patches` for square images."""
    p = int(patch_size)
    grid = image_size // p
    lead = patches.shape[:-2]
    x = patches.reshape(lead + (grid, grid, p, p, channels))
    x = np.moveaxis(x, -4, -3)  # (..., grid, p, grid, p, c)
    return np.ascontiguousarray(x).reshape(lead + (image_size, image_size, channels))


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal table: even columns sin(pos/10000^(c/dim)), odd columns the cosine.

    All entries lie in [-1, 1]. Row 0 (the class-token slot) is the
    alternating 0/1 pattern of sin(0)/cos(0).
    """
    if dim % 2 != 0:
        raise ConfigError(f"position encoding width must be even, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    even = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, even / dim)
    pe = np.empty((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def embed(
    patches: T.ArrayLike,
    params: ModelParams,
    config: ModelConfig,
    pos: Optional[np.ndarray] = None,
) -> Tensor:
    """Project patches to model width, prepend the class token, add position encodings.

    `pos` overrides the sinusoidal table (tests inject zeros to isolate the
    projection); by default the table for the resulting sequence length is used.
    """
    patches = T.as_tensor(patches)
    if patches.shape[-1] != config.patch_dim:
        raise ShapeError(f"patch length {patches.shape[-1]} does not match projection input {config.patch_dim}")
    proj = T.matmul(patches, params["patch_proj.w"]) + params["patch_proj.b"]
    lead = proj.shape[:-2]
    token_slot = Tensor(np.zeros(lead + (1, config.model_dim)))
    cls = token_slot + params["class_token"]
    seq = T.concat([cls, proj], axis=-2)
    if pos is None:
        pos = positional_encoding(seq.shape[-2], config.model_dim)
    return seq + Tensor(pos)


def self_attention(q: Tensor, k: Tensor, v: Tensor, probe: Optional[dict] = None) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V over the last two axes.

    Scores are scaled before the softmax; each output row is a convex
    combination of the rows of V.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"attention operands must share a shape, got {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    weights = T.softmax(scores)
    if probe is not None:
        probe.setdefault("attention_weights", []).append(weights.data.copy())
    return T.matmul(weights, v)


def multi_head_attention(x: Tensor, layer: LayerParams, probe: Optional[dict] = None) -> Tensor:
    """Project x into per-head Q/K/V, attend per head, concatenate, recombine with w_o."""
    d = x.shape[-1]
    heads, d_in, head_dim = layer.w_q.shape
    if d != d_in or heads * head_dim != d:
        raise ConfigError(f"attention projections {layer.w_q.shape} do not match width {d}")
    xh = x.reshape(x.shape[:-2] + (1,) + x.shape[-2:])  # head broadcast axis
    q = T.matmul(xh, layer.w_q)  # (..., heads, T, head_dim)
    k = T.matmul(xh, layer.w_k)
    v = T.matmul(xh, layer.w_v)
    att = self_attention(q, k, v, probe=probe)
    merged = att.swapaxes(-3, -2).reshape(x.shape[:-1] + (d,))
    return T.matmul(merged, layer.w_o)


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise relu(x w1 + b1) w2 + b2."""
    return T.matmul(T.relu(T.matmul(x, w1) + b1), w2) + b2


def encoder_layer(
    x: Tensor,
    layer: LayerParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    probe: Optional[dict] = None,
) -> Tensor:
    """Post-norm block: LN(x + MHA(x)) then LN(y + FFN(y)), sub-layer outputs dropped out in training."""
    a = multi_head_attention(x, layer, probe=probe)
    a = T.dropout(a, config.dropout_rate, training, rng)
    y = T.layer_norm(x + a, layer.ln1_gain, layer.ln1_bias, config.ln_eps)
    f = feed_forward(y, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2)
    f = T.dropout(f, config.dropout_rate, training, rng)
    return T.layer_norm(y + f, layer.ln2_gain, layer.ln2_bias, config.ln_eps)


def forward(
    images: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    probe: Optional[dict] = None,
) -> Tensor:
    """Logits for a batch of normalized images.

    `images` is (B, S, S, C) or a single (S, S, C); the result is (B, C)
    or (C,). Eval mode is deterministic; train mode needs `rng` for
    dropout when the configured rate is nonzero.
    """
    arr = np.asarray(images, dtype=np.float64)
    expected = (config.image_size, config.image_size, config.channels)
    if arr.shape[-3:] != expected:
        raise ConfigError(f"images have shape {arr.shape[-3:]}, config expects {expected}")
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    patches = Tensor(extract_patches(arr, config.patch_size))
    x = embed(patches, params, config)
    for i in range(config.num_layers):
        x = encoder_layer(x, params.layer(i), config, training=training, rng=rng, probe=probe)
    h = x[:, 0, :]  # class-token representation
    for w, b in params.head_layers()[:-1]:
        h = T.relu(T.matmul(h, w) + b)
        h = T.dropout(h, config.dropout_rate, training, rng)
    w_out, b_out = params.head_layers()[-1]
    logits = T.matmul(h, w_out) + b_out
    return logits[0] if single else logits
