"""Two-stage denoiser: noise-map estimation followed by pyramid reconstruction.

Stage 1 (estimation)
    four 3x3 conv + ReLU layers at ``base_channels``, an SPA block, and a
    3x3 conv back to the input channel count.  Produces a per-pixel noise
    map with the shape of the input.

Stage 2 (reconstruction)
    ``[x, noise_map]`` -> 3x3 conv + ReLU -> Haar pyramid of the features.
    Sub-networks of EAM+ blocks run top-down: the level-``L`` stack refines
    the top low band, the stored high bands of that level are merged back in
    by the inverse transform, and the result feeds the next stack, ending
    with the full-resolution level-0 stack.  A final 3x3 conv maps back to
    the input channels and the input is added as a global residual.

EAM+ block
    two parallel 3x3 conv + ReLU branches, concatenated and fused by a 1x1
    conv; a residual pair ``relu(conv(relu(conv(f))) + f)``; an SPA block;
    and an outer residual adding the block input.

Weights live in a flat :class:`ModelWeights` registry keyed by
hierarchical names such as ``stage2.sub1.eam0.fuse.weight``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import layers as L
from . import wavelet as W
from .attention import SpaParams, init_spa, spa_backward, spa_forward_cached, usable_level


@dataclass
class ModelConfig:
    input_channels: int = 1
    base_channels: int = 8
    spa_level: int = 3
    pyramid_levels: int = 3
    # EAM+ blocks per sub-network, ordered from the top level down to level 0
    eam_counts: tuple[int, ...] = (2, 2, 4, 4)
    reduction: int = 4

    def __post_init__(self):
        self.eam_counts = tuple(int(c) for c in self.eam_counts)
        if self.input_channels < 1 or self.base_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.base_channels % self.reduction:
            raise ValueError(f"base_channels {self.base_channels} not divisible by reduction {self.reduction}")
        if self.spa_level < 0 or self.pyramid_levels < 0:
            raise ValueError("levels must be >= 0")
        if len(self.eam_counts) != self.pyramid_levels + 1:
            raise ValueError(f"eam_counts needs {self.pyramid_levels + 1} entries "
                             f"(one per sub-network), got {len(self.eam_counts)}")
        if min(self.eam_counts) < 1:
            raise ValueError("every sub-network needs at least one EAM+ block")

    @property
    def alignment(self) -> int:
        """Spatial extents fed to the model must be multiples of this."""
        return 2 ** max(self.spa_level + 1, self.pyramid_levels)

    def eam_count(self, level: int) -> int:
        return self.eam_counts[self.pyramid_levels - level]

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            kw[k] = tuple(int(t) for t in v.split(",")) if k == "eam_counts" else int(v)
        return cls(**kw)


class ModelWeights(dict):
    """Ordered name -> array registry of every learnable tensor."""

    def __missing__(self, key):
        raise KeyError(f"weight registry has no entry {key!r}")

    def copy(self) -> "ModelWeights":
        return ModelWeights((k, v.copy()) for k, v in self.items())

    def zeros_like(self) -> "ModelWeights":
        return ModelWeights((k, np.zeros_like(v)) for k, v in self.items())

    @property
    def size(self) -> int:
        return sum(v.size for v in self.values())


# -- layout / initialization -------------------------------------------------

def _eam_prefixes(cfg: ModelConfig):
    for level in range(cfg.pyramid_levels, -1, -1):
        for j in range(cfg.eam_count(level)):
            yield f"stage2.sub{level}.eam{j}"


def init_weights(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> ModelWeights:
    """Uniform(+-sqrt(1/fan_in)) initialization from a seeded generator."""
    rng = np.random.default_rng(seed)
    w = ModelWeights()
    c, cin = cfg.base_channels, cfg.input_channels

    def conv(name, n_in, n_out, k=3):
        bound = np.sqrt(1.0 / (n_in * k * k))
        w[f"{name}.weight"] = rng.uniform(-bound, bound, (n_out, n_in, k, k)).astype(dtype)
        w[f"{name}.bias"] = rng.uniform(-bound, bound, n_out).astype(dtype)

    def spa(name):
        w.update(init_spa(c, cfg.spa_level, cfg.reduction, rng, dtype).named_tensors(name))

    conv("stage1.conv0", cin, c)
    for i in range(1, 4):
        conv(f"stage1.conv{i}", c, c)
    spa("stage1.spa")
    conv("stage1.out", c, cin)

    conv("stage2.head", 2 * cin, c)
    for prefix in _eam_prefixes(cfg):
        conv(f"{prefix}.branch_a", c, c)
        conv(f"{prefix}.branch_b", c, c)
        conv(f"{prefix}.fuse", 2 * c, c, k=1)
        conv(f"{prefix}.res_a", c, c)
        conv(f"{prefix}.res_b", c, c)
        spa(f"{prefix}.spa")
    conv("stage2.tail", c, cin)
    return w


# -- forward / backward --------------------------------------------------------

def _conv_params(w: ModelWeights, name: str) -> L.ConvParams:
    weight = w[f"{name}.weight"]
    return L.ConvParams(weight, w[f"{name}.bias"], 1, weight.shape[-1] // 2)


class _Pass:
    """Records per-layer inputs during forward so backward can replay them."""

    def __init__(self, w: ModelWeights, cfg: ModelConfig, force_gates=None):
        self.w = w
        self.cfg = cfg
        self.force_gates = force_gates
        self.grads: ModelWeights | None = None

    # each op returns output and a closure-free record for backward
    def conv(self, name, x):
        return L.conv2d_forward(x, _conv_params(self.w, name))

    def conv_back(self, name, x, g):
        gx, gw, gb = L.conv2d_backward(x, _conv_params(self.w, name), g)
        self.grads[f"{name}.weight"] += gw
        self.grads[f"{name}.bias"] += gb
        return gx

    def spa(self, name, x):
        p = SpaParams.from_registry(self.w, name, self.cfg.spa_level)
        level = usable_level(*x.shape[-2:], self.cfg.spa_level)
        y, cache = spa_forward_cached(x, p, self.force_gates, level)
        return y, (p, cache)

    def spa_back(self, name, x, rec, g):
        p, cache = rec
        gx, gp = spa_backward(x, p, g, self.force_gates, cache=cache)
        for k, v in gp.named_tensors(name).items():
            self.grads[k] += v
        return gx

    # EAM+ block
    def eam(self, name, x):
        pa = self.conv(f"{name}.branch_a", x)
        pb = self.conv(f"{name}.branch_b", x)
        cat = L.concat_channels(L.relu(pa), L.relu(pb))
        f = self.conv(f"{name}.fuse", cat)
        ra = self.conv(f"{name}.res_a", f)
        rb = self.conv(f"{name}.res_b", L.relu(ra))
        pre = rb + f
        g = L.relu(pre)
        s, spa_rec = self.spa(f"{name}.spa", g)
        return s + x, (x, pa, pb, cat, f, ra, pre, g, spa_rec)

    def eam_back(self, name, rec, grad):
        x, pa, pb, cat, f, ra, pre, g, spa_rec = rec
        c = x.shape[-3]
        g_g = self.spa_back(f"{name}.spa", g, spa_rec, grad)
        g_pre = L.relu_backward(pre, g_g)
        g_ra = L.relu_backward(ra, self.conv_back(f"{name}.res_b", L.relu(ra), g_pre))
        g_f = g_pre + self.conv_back(f"{name}.res_a", f, g_ra)
        g_cat = self.conv_back(f"{name}.fuse", cat, g_f)
        g_a, g_b = L.split_channels(g_cat, [c, c])
        g_x = grad.copy()
        g_x += self.conv_back(f"{name}.branch_a", x, L.relu_backward(pa, g_a))
        g_x += self.conv_back(f"{name}.branch_b", x, L.relu_backward(pb, g_b))
        return g_x

    def subnet(self, level, x):
        recs = []
        for j in range(self.cfg.eam_count(level)):
            x, rec = self.eam(f"stage2.sub{level}.eam{j}", x)
            recs.append(rec)
        return x, recs

    def subnet_back(self, level, recs, grad):
        for j in reversed(range(len(recs))):
            grad = self.eam_back(f"stage2.sub{level}.eam{j}", recs[j], grad)
        return grad

    # stages
    def stage1(self, x):
        acts, pres = [x], []
        h = x
        for i in range(4):
            pre = self.conv(f"stage1.conv{i}", h)
            h = L.relu(pre)
            pres.append(pre)
            acts.append(h)
        s, spa_rec = self.spa("stage1.spa", h)
        est = self.conv("stage1.out", s)
        return est, (acts, pres, s, spa_rec)

    def stage1_back(self, rec, grad):
        acts, pres, s, spa_rec = rec
        g = self.conv_back("stage1.out", s, grad)
        g = self.spa_back("stage1.spa", acts[4], spa_rec, g)
        for i in reversed(range(4)):
            g = self.conv_back(f"stage1.conv{i}", acts[i], L.relu_backward(pres[i], g))
        return g

    def stage2(self, x, est):
        cfg = self.cfg
        inp = L.concat_channels(x, est)
        head_pre = self.conv("stage2.head", inp)
        feat = L.relu(head_pre)
        pyr = W.build_pyramid(feat, cfg.pyramid_levels)
        cur = pyr.top_ll
        sub_recs = {}
        for level in range(cfg.pyramid_levels, 0, -1):
            cur, sub_recs[level] = self.subnet(level, cur)
            cur = W.idwt2(cur, *pyr.highs[level - 1].as_tuple())
        cur, sub_recs[0] = self.subnet(0, cur)
        y = self.conv("stage2.tail", cur) + x
        return y, (inp, head_pre, sub_recs, cur)

    def stage2_back(self, rec, grad):
        cfg = self.cfg
        inp, head_pre, sub_recs, last = rec
        g = self.conv_back("stage2.tail", last, grad)
        g = self.subnet_back(0, sub_recs[0], g)
        highs = [None] * cfg.pyramid_levels
        for level in range(1, cfg.pyramid_levels + 1):
            g, g_lh, g_hl, g_hh = W.idwt2_backward(g)
            highs[level - 1] = W.SubbandSet(g_lh, g_hl, g_hh)
            g = self.subnet_back(level, sub_recs[level], g)
        g_feat = W.build_pyramid_backward(W.SubbandPyramid(g, highs))
        g_inp = self.conv_back("stage2.head", inp, L.relu_backward(head_pre, g_feat))
        cin = cfg.input_channels
        g_x, g_est = L.split_channels(g_inp, [cin, cin])
        return g_x + grad, g_est


def _check_input(x: np.ndarray, cfg: ModelConfig):
    if x.shape[-3] != cfg.input_channels:
        raise L.ShapeError(f"model expects {cfg.input_channels} input channels, got shape {x.shape}")
    h, w = x.shape[-2:]
    m = 2 ** cfg.pyramid_levels
    if h % m or w % m:
        raise L.ShapeError(f"extents {h}x{w} must be multiples of {m} for a level-{cfg.pyramid_levels} "
                           f"pyramid; use denoise_image to pad arbitrary sizes")


def stage1_estimate(x: np.ndarray, w: ModelWeights, cfg: ModelConfig) -> np.ndarray:
    """Per-pixel noise-map estimate with the shape of ``x``."""
    if x.shape[-3] != cfg.input_channels:
        raise L.ShapeError(f"model expects {cfg.input_channels} input channels, got shape {x.shape}")
    return _Pass(w, cfg).stage1(x)[0]


def stage2_reconstruct(x: np.ndarray, est: np.ndarray, w: ModelWeights, cfg: ModelConfig) -> np.ndarray:
    if est.shape != x.shape:
        raise L.ShapeError(f"noise map shape {est.shape} differs from input shape {x.shape}")
    _check_input(x, cfg)
    return _Pass(w, cfg).stage2(x, est)[0]


@dataclass
class ForwardCache:
    stage1: tuple
    stage2: tuple
    force_gates: float | None = None
    extra: dict = field(default_factory=dict)


def model_forward(x: np.ndarray, w: ModelWeights, cfg: ModelConfig, force_gates=None
                  ) -> tuple[np.ndarray, ForwardCache]:
    """Full model on ``C x H x W`` or ``N x C x H x W`` input."""
    _check_input(x, cfg)
    run = _Pass(w, cfg, force_gates)
    est, rec1 = run.stage1(x)
    y, rec2 = run.stage2(x, est)
    return y, ForwardCache(rec1, rec2, force_gates)


def model_backward(cache: ForwardCache, w: ModelWeights, cfg: ModelConfig, grad_y: np.ndarray
                   ) -> tuple[ModelWeights, np.ndarray]:
    """Gradients for every registry entry and for the input."""
    run = _Pass(w, cfg, cache.force_gates)
    run.grads = w.zeros_like()
    g_x, g_est = run.stage2_back(cache.stage2, grad_y)
    g_x = g_x + run.stage1_back(cache.stage1, g_est)
    return run.grads, g_x


def denoise(x: np.ndarray, w: ModelWeights, cfg: ModelConfig) -> np.ndarray:
    return model_forward(x, w, cfg)[0]


def padding_for(h: int, w: int, cfg: ModelConfig) -> tuple[int, int]:
    m = cfg.alignment
    return (-h) % m, (-w) % m


def denoise_image(x: np.ndarray, w: ModelWeights, cfg: ModelConfig) -> np.ndarray:
    """Denoise an image of any size with values in [0, 1].

    Accepts ``H x W`` or ``C x H x W``.  The image is reflection-padded on
    the bottom/right to the model's alignment, run through both stages,
    cropped back and clamped to [0, 1].
    """
    squeeze = x.ndim == 2
    img = x[None] if squeeze else x
    if img.size == 0:
        raise L.ShapeError(f"cannot denoise an empty image of shape {x.shape}")
    h, wd = img.shape[-2:]
    ph, pw = padding_for(h, wd, cfg)
    padded = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect") if (ph or pw) else img
    out = denoise(padded.astype(next(iter(w.values())).dtype), w, cfg)[:, :h, :wd]
    out = np.clip(out, 0.0, 1.0)
    return out[0] if squeeze else out
