"""Channel attention and the sub-band pyramid attention (SPA) block.

SPA decomposes a feature map into a Haar pyramid, gates the top low band
with a channel-attention block, then walks back down: at every level the
current low band is concatenated with that level's (LH, HL, HH) triple,
the ``4C``-channel stack is gated by its own channel-attention block, and
the four gated bands are merged by the inverse transform.  Level 0 is
plain channel attention.

``force_gates`` is a test hook: when set, every sigmoid output is replaced
by that constant (``1.0`` makes SPA an exact identity).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import wavelet as W


@dataclass
class ChannelAttentionParams:
    """``f1: C -> C/r`` and ``f2: C/r -> C``."""

    f1: L.DenseParams
    f2: L.DenseParams

    @property
    def channels(self) -> int:
        return self.f1.weights.shape[1]

    def named_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.f1.weight": self.f1.weights, f"{prefix}.f1.bias": self.f1.bias,
            f"{prefix}.f2.weight": self.f2.weights, f"{prefix}.f2.bias": self.f2.bias,
        }

    @classmethod
    def from_registry(cls, reg, prefix: str) -> "ChannelAttentionParams":
        return cls(L.DenseParams(reg[f"{prefix}.f1.weight"], reg[f"{prefix}.f1.bias"]),
                   L.DenseParams(reg[f"{prefix}.f2.weight"], reg[f"{prefix}.f2.bias"]))


@dataclass
class SpaParams:
    """``top_ca`` over C channels and one ``4C``-channel block per level."""

    top_ca: ChannelAttentionParams
    per_level_ca: list[ChannelAttentionParams] = field(default_factory=list)

    @property
    def level(self) -> int:
        return len(self.per_level_ca)

    def named_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = self.top_ca.named_tensors(f"{prefix}.top")
        for i, ca in enumerate(self.per_level_ca, start=1):
            out.update(ca.named_tensors(f"{prefix}.level{i}"))
        return out

    @classmethod
    def from_registry(cls, reg, prefix: str, level: int) -> "SpaParams":
        return cls(ChannelAttentionParams.from_registry(reg, f"{prefix}.top"),
                   [ChannelAttentionParams.from_registry(reg, f"{prefix}.level{i}")
                    for i in range(1, level + 1)])


def reduced_channels(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


def init_channel_attention(channels: int, reduction: int, rng: np.random.Generator,
                           dtype=np.float64) -> ChannelAttentionParams:
    """Uniform(+-sqrt(1/fan_in)) initialization."""
    hidden = reduced_channels(channels, reduction)

    def dense(n_in, n_out):
        bound = np.sqrt(1.0 / n_in)
        return L.DenseParams(rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype),
                             rng.uniform(-bound, bound, n_out).astype(dtype))

    return ChannelAttentionParams(dense(channels, hidden), dense(hidden, channels))


def init_spa(channels: int, level: int, reduction: int, rng: np.random.Generator,
             dtype=np.float64) -> SpaParams:
    return SpaParams(init_channel_attention(channels, reduction, rng, dtype),
                     [init_channel_attention(4 * channels, reduction, rng, dtype)
                      for _ in range(level)])


def channel_attention_param_count(channels: int, reduction: int) -> int:
    hidden = reduced_channels(channels, reduction)
    return 2 * channels * hidden + hidden + channels


def spa_param_count(channels: int, level: int, reduction: int) -> int:
    return (channel_attention_param_count(channels, reduction)
            + level * channel_attention_param_count(4 * channels, reduction))


def _zero_ca(ca: ChannelAttentionParams) -> ChannelAttentionParams:
    return ChannelAttentionParams(
        L.DenseParams(np.zeros_like(ca.f1.weights), np.zeros_like(ca.f1.bias)),
        L.DenseParams(np.zeros_like(ca.f2.weights), np.zeros_like(ca.f2.bias)))


@dataclass
class _CaCache:
    x: np.ndarray
    pooled: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    gates: np.ndarray
    forced: bool


def _ca_forward(x, p: ChannelAttentionParams, force_gates=None):
    if x.shape[-3] != p.channels:
        raise L.ShapeError(f"channel attention expects {p.channels} channels, input has shape {x.shape}")
    pooled = L.global_average_pool(x)[..., 0, 0]
    hidden_pre = L.dense_forward(pooled, p.f1)
    hidden = L.relu(hidden_pre)
    logits = L.dense_forward(hidden, p.f2)
    if force_gates is None:
        gates = L.sigmoid(logits)
    else:
        gates = np.full_like(logits, force_gates)
    y = x * gates[..., None, None]
    return y, _CaCache(x, pooled, hidden_pre, hidden, logits, gates, force_gates is not None)


def _ca_backward(cache: _CaCache, p: ChannelAttentionParams, grad_y):
    x, gates = cache.x, cache.gates
    grad_x = grad_y * gates[..., None, None]
    if cache.forced:
        return grad_x, _zero_ca(p)
    grad_gates = (grad_y * x).sum(axis=(-2, -1))
    grad_logits = L.sigmoid_backward(cache.logits, grad_gates)
    grad_hidden, g_w2, g_b2 = L.dense_backward(cache.hidden, p.f2, grad_logits)
    grad_hidden_pre = L.relu_backward(cache.hidden_pre, grad_hidden)
    grad_pooled, g_w1, g_b1 = L.dense_backward(cache.pooled, p.f1, grad_hidden_pre)
    grad_x = grad_x + L.global_average_pool_backward(x, grad_pooled[..., None, None])
    return grad_x, ChannelAttentionParams(L.DenseParams(g_w1, g_b1), L.DenseParams(g_w2, g_b2))


def channel_attention(x: np.ndarray, p: ChannelAttentionParams, force_gates: float | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Squeeze-and-excitation gating.

    Returns
    -------
    y : ndarray
        ``x`` with channel ``c`` scaled by ``gates[c]``.
    gates : ndarray
        ``sigmoid(f2(relu(f1(mean_hw(x)))))``, shape ``C`` (or ``N x C``).
    """
    y, cache = _ca_forward(x, p, force_gates)
    return y, cache.gates


def channel_attention_backward(x: np.ndarray, p: ChannelAttentionParams, grad_out: np.ndarray,
                               force_gates: float | None = None
                               ) -> tuple[np.ndarray, ChannelAttentionParams]:
    _, cache = _ca_forward(x, p, force_gates)
    return _ca_backward(cache, p, grad_out)


def usable_level(h: int, w: int, level: int) -> int:
    """SPA level actually applied to an ``h x w`` map: capped by divisibility."""
    return min(level, W.max_levels(h, w))


@dataclass
class SpaCache:
    level: int
    channels: int
    top: _CaCache
    steps: list  # per level from top to bottom: _CaCache


def spa_forward_cached(x: np.ndarray, p: SpaParams, force_gates: float | None = None,
                       level: int | None = None):
    """SPA forward returning ``(y, cache)`` for :func:`spa_backward`.

    ``level`` overrides how many pyramid levels are used (at most
    ``p.level``); the network uses it to cap SPA depth on small maps.
    """
    n = p.level if level is None else level
    if n > p.level:
        raise ValueError(f"requested SPA level {n} exceeds parameter level {p.level}")
    c = x.shape[-3]
    pyr = W.build_pyramid(x, n)
    ll, top = _ca_forward(pyr.top_ll, p.top_ca, force_gates)
    steps = []
    for i in range(n, 0, -1):
        z = L.concat_channels(ll, *pyr.highs[i - 1].as_tuple())
        z, cache = _ca_forward(z, p.per_level_ca[i - 1], force_gates)
        steps.append(cache)
        ll = W.idwt2(*L.split_channels(z, [c] * 4))
    return ll, SpaCache(n, c, top, steps)


def spa_forward(x: np.ndarray, p: SpaParams, force_gates: float | None = None,
                level: int | None = None) -> np.ndarray:
    """Sub-band pyramid attention; output has the shape of ``x``."""
    return spa_forward_cached(x, p, force_gates, level)[0]


def spa_backward(x: np.ndarray, p: SpaParams, grad_out: np.ndarray,
                 force_gates: float | None = None, level: int | None = None,
                 cache: SpaCache | None = None) -> tuple[np.ndarray, SpaParams]:
    """Gradients of :func:`spa_forward` w.r.t. ``x`` and every parameter.

    Per-level blocks beyond the level actually used get zero gradients.
    """
    if cache is None:
        _, cache = spa_forward_cached(x, p, force_gates, level)
    if grad_out.shape != x.shape:
        raise L.ShapeError(f"grad_out shape {grad_out.shape} does not match input shape {x.shape}")
    n, c = cache.level, cache.channels
    level_grads = [_zero_ca(ca) for ca in p.per_level_ca]
    g_ll = grad_out
    highs = [None] * n
    # steps[0] is level n, steps[-1] is level 1
    for i, step in zip(range(1, n + 1), reversed(cache.steps)):
        g_bands = W.idwt2_backward(g_ll)
        g_z, level_grads[i - 1] = _ca_backward(step, p.per_level_ca[i - 1], L.concat_channels(*g_bands))
        g_ll, g_lh, g_hl, g_hh = L.split_channels(g_z, [c] * 4)
        highs[i - 1] = W.SubbandSet(g_lh, g_hl, g_hh)
    g_top, top_grad = _ca_backward(cache.top, p.top_ca, g_ll)
    grad_x = W.build_pyramid_backward(W.SubbandPyramid(g_top, highs))
    return grad_x, SpaParams(top_grad, level_grads)
