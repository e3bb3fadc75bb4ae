"""Multi-axis attention encoder / transposed-conv decoder for radio maps.

Parameters live in a flat :class:`ParamSet` with dotted names; the forward
functions look weights up by name, so the same code runs the float32 training
model and the float64 gradient-check model.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ops
from .init import kaiming_for, ones, zeros
from .tensor import ParamSet, Tensor

MODEL_KINDS = ("rmt", "baseline")


@dataclass(frozen=True)
class ModelConfig:
    profile: str
    height: int
    width: int
    stem_channels: int
    stage_channels: tuple
    window: int
    head_dim: int
    mlp_expansion: int = 4
    depth: int = 1

    @property
    def stages(self) -> int:
        return len(self.stage_channels)

    def validate(self) -> None:
        n = self.stages
        if n < 1:
            raise ValueError("at least one encoder stage is required")
        step = 2 ** (n + 1)
        if self.height % step or self.width % step:
            raise ValueError(f"H, W must be divisible by 2^(N+1) = {step}")
        for i, c in enumerate(self.stage_channels, start=1):
            h, w = self.height >> (i + 1), self.width >> (i + 1)
            if h % self.window or w % self.window:
                raise ValueError(f"stage {i} extent {h}x{w} not divisible by window {self.window}")
            if c % self.head_dim:
                raise ValueError(f"stage {i} channels {c} not divisible by head_dim {self.head_dim}")
        if self.depth < 1 or self.mlp_expansion < 1:
            raise ValueError("depth and mlp_expansion must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d


PROFILES = {
    "paper": ModelConfig("paper", 256, 256, 128, (128, 256, 512, 1024), window=8, head_dim=32),
    "desk": ModelConfig("desk", 64, 64, 16, (16, 32, 64, 128), window=2, head_dim=8),
    "desk-mini": ModelConfig("desk-mini", 16, 16, 4, (8, 8), window=2, head_dim=4, mlp_expansion=2),
}


def get_profile(name: str, **overrides) -> ModelConfig:
    try:
        cfg = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    if overrides:
        cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


# parameters -------------------------------------------------------------------

def _conv(specs, name, cout, cin, k, bias=True):
    specs.append((f"{name}.w", (cout, cin, k, k), cin * k * k))
    if bias:
        specs.append((f"{name}.b", (cout,), 0))


def _norm(specs, name, c):
    specs.append((f"{name}.gamma", (c,), -1))
    specs.append((f"{name}.beta", (c,), 0))


def _conv_unit(specs, name, c):
    _norm(specs, f"{name}.norm", c)
    _conv(specs, f"{name}.conv1", c, c, 3)
    _conv(specs, f"{name}.conv2", c, c, 3)


def _attn(specs, name, c):
    _norm(specs, f"{name}.norm", c)
    for proj in ("wq", "wk", "wv", "wo"):
        specs.append((f"{name}.{proj}", (c, c), c))


def _mixer(specs, name, c):
    # conv stand-in for an attention sublayer in the baseline
    _norm(specs, f"{name}.norm", c)
    _conv(specs, f"{name}.conv", c, c, 3)


def _mlp(specs, name, c, expansion):
    _norm(specs, f"{name}.norm", c)
    _conv(specs, f"{name}.fc1", c * expansion, c, 1)
    _conv(specs, f"{name}.fc2", c, c * expansion, 1)


def param_specs(cfg: ModelConfig, kind: str = "rmt") -> list:
    """(name, shape, fan_in) for every parameter. fan_in 0 = zeros, -1 = ones."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    specs: list = []
    ch = (cfg.stem_channels,) + tuple(cfg.stage_channels)
    _conv(specs, "stem.conv1", ch[0], 2, 3)
    _conv(specs, "stem.conv2", ch[0], ch[0], 3)
    for n in range(1, cfg.stages + 1):
        c = ch[n]
        _conv(specs, f"enc.stage{n}.down", c, ch[n - 1], 3)
        for d in range(cfg.depth):
            blk = f"enc.stage{n}.block{d}"
            _conv_unit(specs, f"{blk}.conv", c)
            for axis in ("block", "grid"):
                if kind == "rmt":
                    _attn(specs, f"{blk}.{axis}_attn", c)
                else:
                    _mixer(specs, f"{blk}.{axis}_mix", c)
                _mlp(specs, f"{blk}.{axis}_mlp", c, cfg.mlp_expansion)
    N = cfg.stages
    specs.append((f"dec.up{N}.w", (ch[N], ch[N], 2, 2), ch[N]))
    specs.append((f"dec.up{N}.b", (ch[N],), 0))
    for n in range(N - 1, 0, -1):
        cin = ch[n] + ch[n + 1]
        specs.append((f"dec.up{n}.w", (cin, ch[n], 2, 2), cin))
        specs.append((f"dec.up{n}.b", (ch[n],), 0))
    _conv(specs, "head.conv", 1, ch[1] + 2, 3)
    return specs


def init_params(cfg: ModelConfig, seed: int = 0, kind: str = "rmt") -> ParamSet:
    """Kaiming-uniform weights keyed by parameter path; zero biases, unit norm scales."""
    params = ParamSet()
    for name, shape, fan_in in param_specs(cfg, kind):
        if fan_in > 0:
            params[name] = kaiming_for(name, shape, fan_in, seed)
        elif fan_in == 0:
            params[name] = zeros(shape)
        else:
            params[name] = ones(shape)
    return params


def zero_params(cfg: ModelConfig, kind: str = "rmt") -> ParamSet:
    return ParamSet({name: zeros(shape) for name, shape, _ in param_specs(cfg, kind)})


def count_params(cfg: ModelConfig, kind: str = "rmt") -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in param_specs(cfg, kind))


# windowing --------------------------------------------------------------------

def _check_div(H: int, W: int, p: int) -> None:
    if p < 1 or H % p or W % p:
        raise ValueError(f"{H}x{W} is not divisible by window {p}")


def block_partition(x: Tensor, p: int) -> Tensor:
    """[B,C,H,W] -> [B*(H/p)*(W/p), p*p, C]; each window is a contiguous p x p patch."""
    B, C, H, W = x.shape
    _check_div(H, W, p)
    t = ops.reshape(x, (B, C, H // p, p, W // p, p))
    t = ops.permute(t, (0, 2, 4, 3, 5, 1))
    return ops.reshape(t, (B * (H // p) * (W // p), p * p, C))


def block_unpartition(tokens: Tensor, p: int, shape: tuple) -> Tensor:
    B, C, H, W = shape
    t = ops.reshape(tokens, (B, H // p, W // p, p, p, C))
    t = ops.permute(t, (0, 5, 1, 3, 2, 4))
    return ops.reshape(t, (B, C, H, W))


def grid_partition(x: Tensor, g: int) -> Tensor:
    """[B,C,H,W] -> [B*(H/g)*(W/g), g*g, C]; group (r, c) holds cells (r + i*H/g, c + j*W/g)."""
    B, C, H, W = x.shape
    _check_div(H, W, g)
    t = ops.reshape(x, (B, C, g, H // g, g, W // g))
    t = ops.permute(t, (0, 3, 5, 2, 4, 1))
    return ops.reshape(t, (B * (H // g) * (W // g), g * g, C))


def grid_unpartition(tokens: Tensor, g: int, shape: tuple) -> Tensor:
    B, C, H, W = shape
    t = ops.reshape(tokens, (B, H // g, W // g, g, g, C))
    t = ops.permute(t, (0, 5, 3, 1, 4, 2))
    return ops.reshape(t, (B, C, H, W))


# layers -------------------------------------------------------------------------

def mhsa(tokens: Tensor, p, head_dim: int) -> Tensor:
    """Multi-head self-attention over [B', T, C] tokens, no positional bias."""
    Bp, T, C = tokens.shape
    if C % head_dim:
        raise ValueError(f"channels {C} not divisible by head_dim {head_dim}")
    h = C // head_dim

    def heads(t):
        return ops.permute(ops.reshape(t, (Bp, T, h, head_dim)), (0, 2, 1, 3))

    q = heads(ops.linear(tokens, p["wq"]))
    k = heads(ops.linear(tokens, p["wk"]))
    v = heads(ops.linear(tokens, p["wv"]))
    scores = ops.mul(ops.matmul(q, ops.permute(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    ctx = ops.matmul(ops.softmax_lastdim(scores), v)
    ctx = ops.reshape(ops.permute(ctx, (0, 2, 1, 3)), (Bp, T, C))
    return ops.linear(ctx, p["wo"])


def _ln(x: Tensor, p) -> Tensor:
    return ops.layer_norm_channels(x, p["gamma"], p["beta"])


def _conv_p(x: Tensor, p, stride: int = 1) -> Tensor:
    k = p["w"].shape[-1]
    return ops.conv2d(x, p["w"], p["b"], stride=stride, pad=k // 2)


def conv_unit(x: Tensor, p) -> Tensor:
    """norm -> 3x3 conv -> GELU -> 3x3 conv (residual added by the caller)."""
    y = _ln(x, p.scope("norm"))
    y = ops.gelu(_conv_p(y, p.scope("conv1")))
    return _conv_p(y, p.scope("conv2"))


def mlp(x: Tensor, p) -> Tensor:
    y = _ln(x, p.scope("norm"))
    return _conv_p(ops.gelu(_conv_p(y, p.scope("fc1"))), p.scope("fc2"))


def attention_sublayer(x: Tensor, p, axis: str, window: int, head_dim: int) -> Tensor:
    shape = x.shape
    y = _ln(x, p.scope("norm"))
    if axis == "block":
        return block_unpartition(mhsa(block_partition(y, window), p, head_dim), window, shape)
    return grid_unpartition(mhsa(grid_partition(y, window), p, head_dim), window, shape)


def mixer_sublayer(x: Tensor, p) -> Tensor:
    return ops.gelu(_conv_p(_ln(x, p.scope("norm")), p.scope("conv")))


def stem_forward(g: Tensor, params, cfg: ModelConfig | None = None) -> Tensor:
    if g.shape[2] % 2 or g.shape[3] % 2:
        raise ValueError("stem needs even spatial extents")
    s = params.scope("stem")
    x = ops.gelu(_conv_p(g, s.scope("conv1"), stride=2))
    return _conv_p(x, s.scope("conv2"))


def stage_forward(x: Tensor, params, n: int, cfg: ModelConfig, kind: str = "rmt") -> Tensor:
    s = params.scope(f"enc.stage{n}")
    x = _conv_p(x, s.scope("down"), stride=2)
    _check_div(x.shape[2], x.shape[3], cfg.window)
    for d in range(cfg.depth):
        b = s.scope(f"block{d}")
        x = ops.add(x, conv_unit(x, b.scope("conv")))
        for axis in ("block", "grid"):
            if kind == "rmt":
                y = attention_sublayer(x, b.scope(f"{axis}_attn"), axis, cfg.window, cfg.head_dim)
            else:
                y = mixer_sublayer(x, b.scope(f"{axis}_mix"))
            x = ops.add(x, y)
            x = ops.add(x, mlp(x, b.scope(f"{axis}_mlp")))
    return x


maxvit_stage_forward = stage_forward


def encoder_forward(g: Tensor, params, cfg: ModelConfig, kind: str = "rmt") -> list:
    """Feature pyramid [X_0, ..., X_N]."""
    if g.shape[1] != 2 or g.shape[2:] != (cfg.height, cfg.width):
        raise ValueError(
            f"input {g.shape} does not match profile {cfg.profile!r} (2x{cfg.height}x{cfg.width})"
        )
    pyramid = [stem_forward(g, params, cfg)]
    for n in range(1, cfg.stages + 1):
        pyramid.append(stage_forward(pyramid[-1], params, n, cfg, kind))
    return pyramid


def decoder_forward(pyramid: list, g: Tensor, params, cfg: ModelConfig, return_ladder: bool = False):
    """Transposed-conv decoder with encoder skips, then the output head."""
    N = cfg.stages
    if len(pyramid) != N + 1:
        raise ValueError(f"pyramid has {len(pyramid)} levels, profile needs {N + 1}")
    up = params.scope(f"dec.up{N}")
    y = ops.gelu(ops.conv_transpose2d(pyramid[N], up["w"], up["b"]))
    ladder = [y]
    for n in range(N - 1, 0, -1):
        up = params.scope(f"dec.up{n}")
        y = ops.gelu(ops.conv_transpose2d(ops.concat_channels(pyramid[n], y), up["w"], up["b"]))
        ladder.append(y)
    h = ops.concat_channels(ops.upsample_nearest2x(y), g)
    out = ops.sigmoid(_conv_p(h, params.scope("head.conv")))
    return (out, ladder) if return_ladder else out


def model_forward(g: Tensor, params, cfg: ModelConfig, kind: str = "rmt") -> Tensor:
    """[B, 2, H, W] geography -> [B, 1, H, W] normalised radio map estimate."""
    return decoder_forward(encoder_forward(g, params, cfg, kind), g, params, cfg)


def baseline_cnn_forward(g: Tensor, params, cfg: ModelConfig) -> Tensor:
    return model_forward(g, params, cfg, kind="baseline")
