"""CNN front end + pre-norm transformer encoder + pooled three-class head."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

N_CLASSES = 3
N_INPUTS = 25  # 5 bands x 5 channels per window

# search space as printed, in row order
SEARCH_SPACE = {
    "cnn_out_channels": (8, 16),
    "kernel_size": (3, 5),
    "n_transformer_layers": (2, 4),
    "ffn_hidden": (128, 256),
    "n_heads": (4, 8),
    "embed_dim": (32, 64),
    "batch_size": (8, 16, 32),
    "dropout": (0.1, 0.3),
    "learning_rate": (1e-3, 5e-4),
}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    cnn_out_channels: int = 8
    kernel_size: int = 5
    n_transformer_layers: int = 4
    ffn_hidden: int = 128
    n_heads: int = 4
    embed_dim: int = 64
    batch_size: int = 8
    dropout: float = 0.1
    learning_rate: float = 5e-4

    def __post_init__(self):
        for f in ("cnn_out_channels", "kernel_size", "n_transformer_layers", "ffn_hidden",
                  "n_heads", "embed_dim", "batch_size"):
            if getattr(self, f) < 1:
                raise ModelError(f"{f} must be positive")
        if self.kernel_size % 2 == 0:
            raise ModelError("kernel_size must be odd")
        if not 0 <= self.dropout < 1:
            raise ModelError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")

    def check_divisible(self) -> None:
        if self.embed_dim % self.n_heads:
            raise ModelError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")

    def in_search_space(self, space=None) -> bool:
        space = SEARCH_SPACE if space is None else space
        return all(getattr(self, k) in v for k, v in space.items())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ModelError(f"unknown model fields: {sorted(unknown)}")
        return cls(**d)


# optimum reported for the full training run
OPTIMAL_CONFIG = ModelConfig(8, 5, 4, 128, 4, 64, 8, 0.1, 5e-4)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every trainable tensor, in a fixed order."""
    c, k, d, f = config.cnn_out_channels, config.kernel_size, config.embed_dim, config.ffn_hidden
    shapes = {
        "conv.weight": (c, N_INPUTS, k),
        "conv.bias": (c,),
        "proj.weight": (d, c),
        "proj.bias": (d,),
    }
    for i in range(config.n_transformer_layers):
        p = f"layer{i}."
        for n in "qkvo":
            shapes[p + f"attn.w{n}"] = (d, d)
            # no key bias: it shifts every score in a row equally and has zero gradient
            if n != "k":
                shapes[p + f"attn.b{n}"] = (d,)
        shapes[p + "ffn.w1"] = (f, d)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (d, f)
        shapes[p + "ffn.b2"] = (d,)
        for n in ("ln1", "ln2"):
            shapes[p + n + ".gain"] = (d,)
            shapes[p + n + ".shift"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.shift"] = (d,)
    shapes["head.weight"] = (N_CLASSES, d)
    shapes["head.bias"] = (N_CLASSES,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def values(self):
        return self.tensors.values()

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in self.tensors.items()},
        )

    def zero_grad(self) -> None:
        ag.zero_grad(self.tensors.values())


def glorot_bound(shape) -> float:
    if len(shape) == 3:  # conv (out, in, k)
        fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
    else:
        fan_out, fan_in = shape
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases and shifts, unit layer-norm gains."""
    config.check_divisible()
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            bound = glorot_bound(shape)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams(config, tensors)


def positional_encoding(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    i = np.arange(0, d, 2)
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((t, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


@dataclass
class Batch:
    features: np.ndarray  # B x T_max x 5 x 5
    mask: np.ndarray  # B x T_max
    labels: np.ndarray  # B

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 4 or self.features.shape[2:] != (5, 5):
            raise ModelError(f"features must be B x T x 5 x 5, got {self.features.shape}")
        if self.mask.shape != self.features.shape[:2]:
            raise ModelError("mask shape must be B x T")
        if not np.all(self.mask.any(axis=1)):
            raise ModelError("every sample needs at least one valid window")

    def __len__(self):
        return len(self.labels)


def make_batch(tensors, labels=None) -> Batch:
    """Zero-pad a list of (T_i x 5 x 5) arrays to a common length."""
    arrays = [np.asarray(getattr(t, "values", t), dtype=np.float64) for t in tensors]
    if labels is None:
        labels = [int(t.label) for t in tensors]
    t_max = max(a.shape[0] for a in arrays)
    feats = np.zeros((len(arrays), t_max, 5, 5))
    mask = np.zeros((len(arrays), t_max), dtype=bool)
    for i, a in enumerate(arrays):
        if a.shape[1:] != (5, 5):
            raise ModelError(f"feature tensor must be T x 5 x 5, got {a.shape}")
        feats[i, : len(a)] = a
        mask[i, : len(a)] = True
    return Batch(feats, mask, np.asarray(labels))


def forward(params: ModelParams, batch: Batch, train: bool = False, seed=0) -> Tensor:
    """Logits (B, 3). Dropout is active only when ``train`` is set, drawn from ``seed``."""
    cfg = params.config
    p = params.tensors
    rng = np.random.Generator(np.random.PCG64(seed)) if train and cfg.dropout > 0 else None
    drop = cfg.dropout

    b, t = batch.mask.shape
    # padded windows are zeroed so the convolution never sees their content
    x = batch.features.reshape(b, t, N_INPUTS) * batch.mask[..., None]
    x = Tensor(np.swapaxes(x, 1, 2))  # B x 25 x T
    h = ag.relu(ag.conv1d_same(x, p["conv.weight"], p["conv.bias"]))
    h = ag.transpose(h)  # B x T x C
    h = ag.dropout(ag.linear(h, p["proj.weight"], p["proj.bias"]), drop, train, rng)
    h = ag.add(h, positional_encoding(t, cfg.embed_dim))

    for i in range(cfg.n_transformer_layers):
        pre = f"layer{i}."
        attn_w = {k[len(pre) + 5 :]: v for k, v in p.items() if k.startswith(pre + "attn.")}
        y = ag.layer_norm(h, p[pre + "ln1.gain"], p[pre + "ln1.shift"])
        y = ag.multi_head_attention(y, attn_w, batch.mask, cfg.n_heads)
        h = ag.add(h, ag.dropout(y, drop, train, rng))
        y = ag.layer_norm(h, p[pre + "ln2.gain"], p[pre + "ln2.shift"])
        y = ag.relu(ag.linear(y, p[pre + "ffn.w1"], p[pre + "ffn.b1"]))
        y = ag.linear(y, p[pre + "ffn.w2"], p[pre + "ffn.b2"])
        h = ag.add(h, ag.dropout(y, drop, train, rng))

    h = ag.layer_norm(h, p["final_ln.gain"], p["final_ln.shift"])
    pooled = ag.masked_mean(h, batch.mask)
    return ag.linear(pooled, p["head.weight"], p["head.bias"])


def predict_proba(params: ModelParams, batch: Batch) -> np.ndarray:
    return ag.softmax(forward(params, batch, train=False).data)
