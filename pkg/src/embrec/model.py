"""Toy transformer encoder, splittable at any layer boundary.

The forward pass can stop after layer k, hand the activation tensor to a
cache, and resume later at layer k+1; because both paths run the identical
layer routine in the identical order, the resumed output is bitwise equal
to the uninterrupted one.  Post-layer-norm wiring: x' = LN(MH(h) + h),
out = LN(FF(x') + x').  Bottleneck adapters can be inserted after the MH
and FF sub-layers, and a small MLP can fuse one model's final activations
into another model's input embeddings.

All parameters and activations are float32; initialization is a pure
function of (config, seed).
"""

from __future__ import annotations

import dataclasses
import json
import math
import zlib
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import Rng, as_activation, checksum, tensor_bytes
from .errors import ConfigError, InputError, LayerRangeError, ShapeError

_GELU_C = 0.7978845608  # sqrt(2/pi), tanh-approximation constant
_GELU_A = 0.044715

_CONFIG_FIELDS = (
    "n_layers", "d_model", "n_heads", "d_ff",
    "vocab_size", "max_seq", "ln_eps", "seed",
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; the JSON field names are the contract."""

    n_layers: int
    d_model: int
    n_heads: int
    d_ff: int
    vocab_size: int
    max_seq: int = 64
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_heads < 1:
            raise ConfigError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.d_model < 2:
            raise ConfigError(f"d_model must be >= 2, got {self.d_model}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.d_ff < 1:
            raise ConfigError(f"d_ff must be >= 1, got {self.d_ff}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.max_seq < 1:
            raise ConfigError(f"max_seq must be >= 1, got {self.max_seq}")
        if not self.ln_eps > 0:
            raise ConfigError(f"ln_eps must be > 0, got {self.ln_eps}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(obj) - set(_CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as e:
            raise ConfigError(f"incomplete config: {e}") from e

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls.from_json(f.read())
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e


@dataclass
class LayerParams:
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    gamma1: np.ndarray
    beta1: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    gamma2: np.ndarray
    beta2: np.ndarray

    def arrays(self):
        """Parameter arrays in initialization order."""
        return (self.w_q, self.b_q, self.w_k, self.b_k, self.w_v, self.b_v,
                self.w_o, self.b_o, self.gamma1, self.beta1,
                self.w1, self.b1, self.w2, self.b2, self.gamma2, self.beta2)


@dataclass
class Adapter:
    """Bottleneck residual module: h + ReLU(h W_down + b_down) W_up + b_up."""

    w_down: np.ndarray
    b_down: np.ndarray
    w_up: np.ndarray
    b_up: np.ndarray

    def arrays(self):
        return (self.w_down, self.b_down, self.w_up, self.b_up)


@dataclass
class AdapterStack:
    """Adapter pairs (post-MH, post-FF) on the contiguous layers k+1..N."""

    bottleneck: int
    first_layer: int
    pairs: list  # [(mh_adapter, ff_adapter)] for layers first_layer..N

    def for_layer(self, l: int) -> Optional[tuple]:
        i = l - self.first_layer
        if 0 <= i < len(self.pairs):
            return self.pairs[i]
        return None

    def param_count(self) -> int:
        return sum(a.size for mh, ff in self.pairs for ad in (mh, ff)
                   for a in ad.arrays())


@dataclass
class FusionMLP:
    """Two-layer ReLU MLP mapping source activations into a consumer's width."""

    w_a: np.ndarray
    b_a: np.ndarray
    w_b: np.ndarray
    b_b: np.ndarray


@dataclass
class Model:
    config: ModelConfig
    token_embedding: np.ndarray
    position_embedding: np.ndarray
    layers: list
    adapters: Optional[AdapterStack] = None


def _draw(rng: Rng, *shape: int) -> np.ndarray:
    n = math.prod(shape)
    return rng.fill_uniform(n, -0.05, 0.05).reshape(shape)


def init_model(config: ModelConfig) -> Model:
    """Build a model from a single deterministic stream seeded by config.seed.

    Draw order is fixed: token embedding row-major, position embedding
    row-major, then per layer W_Q, b_Q, W_K, b_K, W_V, b_V, W_O, b_O,
    W_1, b_1, W_2, b_2.  Layer-norm scales start at 1 and shifts at 0
    without consuming draws.
    """
    rng = Rng(config.seed)
    d, ff = config.d_model, config.d_ff
    tok = _draw(rng, config.vocab_size, d)
    pos = _draw(rng, config.max_seq, d)
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerParams(
            w_q=_draw(rng, d, d), b_q=_draw(rng, d),
            w_k=_draw(rng, d, d), b_k=_draw(rng, d),
            w_v=_draw(rng, d, d), b_v=_draw(rng, d),
            w_o=_draw(rng, d, d), b_o=_draw(rng, d),
            gamma1=np.ones(d, dtype=np.float32),
            beta1=np.zeros(d, dtype=np.float32),
            w1=_draw(rng, d, ff), b1=_draw(rng, ff),
            w2=_draw(rng, ff, d), b2=_draw(rng, d),
            gamma2=np.ones(d, dtype=np.float32),
            beta2=np.zeros(d, dtype=np.float32),
        ))
    return Model(config, tok, pos, layers)


def model_param_arrays(model: Model):
    """All parameter arrays in initialization order (adapters excluded)."""
    yield model.token_embedding
    yield model.position_embedding
    for layer in model.layers:
        yield from layer.arrays()


def parameter_checksum(model: Model) -> int:
    """CRC-32 over every parameter's little-endian float32 bytes, in order."""
    crc = 0
    for a in model_param_arrays(model):
        crc = zlib.crc32(tensor_bytes(a), crc)
    return crc & 0xFFFFFFFF


def model_id(config: ModelConfig) -> str:
    """Short stable identifier; equal configs (seed included) share it."""
    return "m%08x" % checksum(config.to_json().encode("utf-8"))


def embed(model: Model, tokens: Sequence[int]) -> np.ndarray:
    """h^0: token embedding plus learned absolute position embedding."""
    ids = np.asarray(tokens)
    if ids.ndim != 1 or ids.size < 1:
        raise InputError("tokens must be a non-empty 1-D sequence of ids")
    if ids.size > model.config.max_seq:
        raise InputError(
            f"sequence length {ids.size} exceeds max_seq {model.config.max_seq}"
        )
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError(f"token ids must be integers, got dtype {ids.dtype}")
    if ids.min() < 0 or ids.max() >= model.config.vocab_size:
        raise InputError(
            f"token id out of range [0, {model.config.vocab_size})"
        )
    return model.token_embedding[ids] + model.position_embedding[: ids.size]


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                eps: float) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x * x * x)))


def _attention(h: np.ndarray, p: LayerParams, n_heads: int) -> np.ndarray:
    S, d = h.shape
    hd = d // n_heads
    q = h @ p.w_q + p.b_q
    k = h @ p.w_k + p.b_k
    v = h @ p.w_v + p.b_v
    out = np.empty((S, d), dtype=np.float32)
    scale = 1.0 / math.sqrt(hd)
    for i in range(n_heads):
        sl = slice(i * hd, (i + 1) * hd)
        scores = (q[:, sl] @ k[:, sl].T) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        out[:, sl] = attn @ v[:, sl]
    return out @ p.w_o + p.b_o


def layer_forward(model: Model, l: int, h: np.ndarray) -> np.ndarray:
    """One encoder layer: out = LN(FF(x') + x') with x' = LN(MH(h) + h).

    When an adapter stack covers layer l, its adapters run on the MH and FF
    outputs before the residual add and norm.
    """
    cfg = model.config
    if not 1 <= l <= cfg.n_layers:
        raise LayerRangeError(f"layer {l} outside 1..{cfg.n_layers}")
    h = as_activation(h, "h")
    if h.shape[1] != cfg.d_model:
        raise ShapeError(f"h dim {h.shape[1]} != d_model {cfg.d_model}")
    p = model.layers[l - 1]
    pair = model.adapters.for_layer(l) if model.adapters else None

    mh = _attention(h, p, cfg.n_heads)
    if pair is not None:
        mh = adapter_apply(mh, pair[0])
    x = _layer_norm(mh + h, p.gamma1, p.beta1, cfg.ln_eps)

    ffo = _gelu(x @ p.w1 + p.b1) @ p.w2 + p.b2
    if pair is not None:
        ffo = adapter_apply(ffo, pair[1])
    return _layer_norm(ffo + x, p.gamma2, p.beta2, cfg.ln_eps)


def forward_range(model: Model, h: np.ndarray, from_layer: int,
                  to_layer: int) -> np.ndarray:
    """Apply layers from_layer+1 .. to_layer; equal bounds return h as is."""
    n = model.config.n_layers
    if not 0 <= from_layer <= to_layer <= n:
        raise LayerRangeError(
            f"need 0 <= from <= to <= {n}, got ({from_layer}, {to_layer})"
        )
    h = as_activation(h, "h")
    for l in range(from_layer + 1, to_layer + 1):
        h = layer_forward(model, l, h)
    return h


def full_forward(model: Model, tokens: Sequence[int]) -> np.ndarray:
    return forward_range(model, embed(model, tokens), 0, model.config.n_layers)


def adapter_apply(h: np.ndarray, adapter: Adapter) -> np.ndarray:
    """h + ReLU(h W_down + b_down) W_up + b_up."""
    h = as_activation(h, "h")
    d = h.shape[1]
    if adapter.w_down.shape[0] != d or adapter.w_up.shape[1] != d:
        raise ShapeError(
            f"adapter dims {adapter.w_down.shape[0]}->{adapter.w_up.shape[1]} "
            f"do not match input dim {d}"
        )
    z = h @ adapter.w_down + adapter.b_down
    delta = np.maximum(z, 0.0) @ adapter.w_up + adapter.b_up
    if not delta.any():
        # h + 0.0 would still flip -0.0 entries to +0.0; a freshly
        # initialized (zero up-projection) adapter must be the exact identity
        return h
    return h + delta


def attach_adapters(model: Model, k: int, bottleneck: int,
                    seed: int = 0) -> Model:
    """Return a model sharing weights with `model` plus adapters on k+1..N.

    Down-projections are drawn uniformly from a fresh stream; up-projections
    start at zero so each adapter begins as the identity.  Draw order: for
    each adapted layer ascending, MH adapter then FF adapter, W_down before
    b_down.
    """
    n = model.config.n_layers
    if not 0 <= k <= n:
        raise LayerRangeError(f"k={k} outside 0..{n}")
    if bottleneck < 1:
        raise ConfigError(f"bottleneck must be >= 1, got {bottleneck}")
    d = model.config.d_model
    rng = Rng(seed)

    def one() -> Adapter:
        return Adapter(
            w_down=_draw(rng, d, bottleneck),
            b_down=_draw(rng, bottleneck),
            w_up=np.zeros((bottleneck, d), dtype=np.float32),
            b_up=np.zeros(d, dtype=np.float32),
        )

    pairs = [(one(), one()) for _ in range(n - k)]
    stack = AdapterStack(bottleneck=bottleneck, first_layer=k + 1, pairs=pairs)
    return Model(model.config, model.token_embedding,
                 model.position_embedding, model.layers, adapters=stack)


class TrainableCounts(NamedTuple):
    trainable: int
    total: int
    fraction: float


def trainable_fraction(model: Model, k: int, mode: str) -> TrainableCounts:
    """Count trainable vs. total parameters when layers 1..k are frozen.

    `reduced` counts the transformer parameters of layers k+1..N;
    `adapters` counts only adapter parameters on those layers.  The total
    always covers embeddings, all layers, and any attached adapters.
    """
    n = model.config.n_layers
    if not 0 <= k <= n:
        raise LayerRangeError(f"k={k} outside 0..{n}")
    if mode not in ("reduced", "adapters"):
        raise InputError(f"mode must be 'reduced' or 'adapters', got {mode!r}")
    layer_counts = [sum(a.size for a in layer.arrays())
                    for layer in model.layers]
    total = (model.token_embedding.size + model.position_embedding.size
             + sum(layer_counts))
    if model.adapters is not None:
        total += model.adapters.param_count()
    if mode == "reduced":
        trainable = sum(layer_counts[k:])
    else:
        trainable = 0
        if model.adapters is not None:
            for l in range(k + 1, n + 1):
                pair = model.adapters.for_layer(l)
                if pair is not None:
                    trainable += sum(a.size for ad in pair
                                     for a in ad.arrays())
    return TrainableCounts(trainable, total, trainable / total)


def cross_model_fuse(consumer_h0: np.ndarray, source_hN: np.ndarray,
                     mlp: FusionMLP) -> np.ndarray:
    """consumer_h0 + MLP(source_hN), MLP = ReLU(x W_a + b_a) W_b + b_b."""
    consumer_h0 = as_activation(consumer_h0, "consumer_h0")
    source_hN = as_activation(source_hN, "source_hN")
    if consumer_h0.shape[0] != source_hN.shape[0]:
        raise ShapeError(
            f"sequence lengths differ: consumer {consumer_h0.shape[0]} "
            f"vs source {source_hN.shape[0]}"
        )
    if mlp.w_a.shape[0] != source_hN.shape[1]:
        raise ShapeError(
            f"W_a expects dim {mlp.w_a.shape[0]}, source has {source_hN.shape[1]}"
        )
    if mlp.w_b.shape[1] != consumer_h0.shape[1]:
        raise ShapeError(
            f"W_b produces dim {mlp.w_b.shape[1]}, consumer has "
            f"{consumer_h0.shape[1]}"
        )
    hidden = np.maximum(source_hN @ mlp.w_a + mlp.b_a, 0.0)
    add = hidden @ mlp.w_b + mlp.b_b
    if not add.any():
        return consumer_h0  # same -0.0 consideration as adapter_apply
    return consumer_h0 + add


def init_fusion(d_src: int, d_consumer: int, hidden: Optional[int] = None,
                seed: int = 0) -> FusionMLP:
    """Deterministic fusion MLP; hidden width defaults to the source width."""
    if hidden is None:
        hidden = d_src
    rng = Rng(seed)
    return FusionMLP(
        w_a=_draw(rng, d_src, hidden), b_a=_draw(rng, hidden),
        w_b=_draw(rng, hidden, d_consumer), b_b=_draw(rng, d_consumer),
    )
