"""Toy-scale training: MAE loss, Adam with step-halving schedule, dihedral
augmentation and a procedural clean-image / structured-noise generator.

Every random draw is derived from ``np.random.default_rng([seed, ...])``
with explicit stream keys, so runs are bitwise reproducible.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import network as N

log = logging.getLogger(__name__)

# stream keys for default_rng([seed, STREAM, ...])
_POOL_STREAM = 1
_BATCH_STREAM = 2
_HELDOUT_STREAM = 3


class TrainingDiverged(FloatingPointError):
    """Raised when the loss or a gradient becomes non-finite."""

    def __init__(self, msg, weights=None, iteration=None):
        super().__init__(msg)
        self.weights = weights
        self.iteration = iteration


# -- loss ------------------------------------------------------------------------

def mae_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error and its gradient ``sign(pred - target) / count``."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {name!r} at step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} differs from parameter {name!r} shape {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def learning_rate(iteration: int, base_lr: float, halve_every: int) -> float:
    """Step schedule: ``base_lr`` halved after every ``halve_every`` iterations."""
    return base_lr * 0.5 ** (iteration // halve_every)


# -- augmentation ----------------------------------------------------------------

def dihedral(img: np.ndarray, rotations: int, flip: bool) -> np.ndarray:
    """Rotate counter-clockwise by ``90 * rotations`` degrees, then optionally mirror left-right."""
    out = np.rot90(img, rotations, axes=(-2, -1))
    if flip:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment(pair: tuple[np.ndarray, np.ndarray], rng: np.random.Generator,
            rotations: int | None = None, flip: bool | None = None):
    """Apply one of the 8 dihedral transforms identically to a (clean, noisy) pair."""
    clean, noisy = pair
    if clean.shape[-1] != clean.shape[-2]:
        raise ValueError(f"augmentation needs square patches, got {clean.shape}")
    k = int(rng.integers(4)) if rotations is None else rotations
    f = bool(rng.integers(2)) if flip is None else flip
    return dihedral(clean, k, f), dihedral(noisy, k, f)


# -- synthetic data --------------------------------------------------------------

def synthetic_image(size: int, rng: np.random.Generator, channels: int = 1) -> np.ndarray:
    """Procedural clean image in [0, 1]: smooth gradient, shapes and stripe texture."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.empty((channels, size, size))
    for c in range(channels):
        a, b, d = rng.uniform(-0.4, 0.4, 3)
        img = 0.5 + a * (xx - 0.5) + b * (yy - 0.5) + d * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * (xx + yy))
        for _ in range(rng.integers(2, 6)):
            cy, cx = rng.uniform(0, 1, 2)
            r = rng.uniform(0.08, 0.3)
            level = rng.uniform(0, 1)
            if rng.random() < 0.5:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
            else:
                mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < rng.uniform(0.5, 1.5) * r)
            img[mask] = level
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(4, 10)
        stripes = 0.1 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
        cy, cx = rng.uniform(0.2, 0.8, 2)
        region = (np.abs(yy - cy) < 0.25) & (np.abs(xx - cx) < 0.25)
        img = img + stripes * region
        out[c] = img
    return np.clip(out, 0.0, 1.0)


@dataclass
class NoiseModel:
    """Additive noise recipe.

    ``awgn`` draws i.i.d. Gaussian noise of std ``sigma``.  ``structured``
    adds to that a per-row offset (``banding``), blurred white noise
    rescaled to unit variance (``correlated``) and a signal-dependent term
    ``signal_dependent * sqrt(clean) * N(0, 1)``.
    """

    kind: str = "structured"
    sigma: float = 0.04
    banding: float = 0.03
    correlated: float = 0.04
    signal_dependent: float = 0.04
    blur_sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("awgn", "structured"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        for name in ("sigma", "banding", "correlated", "signal_dependent", "blur_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"noise amplitude {name} must be >= 0")


def sample_noise(clean: np.ndarray, model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Unclamped additive noise field for ``clean`` (``C x H x W``)."""
    noise = model.sigma * rng.standard_normal(clean.shape)
    if model.kind == "awgn":
        return noise
    c, h, w = clean.shape
    noise += model.banding * rng.standard_normal((c, h, 1))
    white = rng.standard_normal(clean.shape)
    if model.blur_sigma > 0:
        smooth = gaussian_filter(white, sigma=(0, model.blur_sigma, model.blur_sigma), mode="wrap")
        # unit variance for the blurred field: divide by the kernel's l2 norm
        radius = int(np.ceil(4 * model.blur_sigma))  # gaussian_filter's default truncation
        impulse = np.zeros((1, 2 * radius + 1, 2 * radius + 1))
        impulse[0, radius, radius] = 1.0
        kernel = gaussian_filter(impulse, sigma=(0, model.blur_sigma, model.blur_sigma), mode="wrap")
        smooth /= np.sqrt(np.sum(kernel ** 2))
    else:
        smooth = white
    noise += model.correlated * smooth
    noise += model.signal_dependent * np.sqrt(np.clip(clean, 0, None)) * rng.standard_normal(clean.shape)
    return noise


def synth_pair(clean: np.ndarray, model: NoiseModel, seed) -> tuple[np.ndarray, np.ndarray]:
    """``(clean, clamp(clean + noise, 0, 1))``, deterministic per ``seed``."""
    rng = np.random.default_rng(seed)
    return clean, np.clip(clean + sample_noise(clean, model, rng), 0.0, 1.0)


# -- training loop ---------------------------------------------------------------

@dataclass
class TrainConfig:
    iterations: int = 2000
    lr: float = 1e-3
    halve_every: int = 500
    patch_size: int = 32
    batch_size: int = 4
    seed: int = 0
    augment: bool = True
    pool_size: int = 32
    pool_image_size: int = 64
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("halve_every", "patch_size", "batch_size", "pool_size", "pool_image_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or self.lr <= 0:
            raise ValueError("iterations must be >= 0 and lr > 0")
        if self.patch_size > self.pool_image_size:
            raise ValueError("patch_size exceeds pool_image_size")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def clean_pool(cfg: TrainConfig, channels: int) -> list[np.ndarray]:
    rng = np.random.default_rng([cfg.seed, _POOL_STREAM])
    return [synthetic_image(cfg.pool_image_size, rng, channels) for _ in range(cfg.pool_size)]


def sample_batch(pool: list[np.ndarray], cfg: TrainConfig, noise: NoiseModel, iteration: int
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Crop, augment and corrupt ``batch_size`` patches for one iteration."""
    clean, noisy = [], []
    for slot in range(cfg.batch_size):
        rng = np.random.default_rng([cfg.seed, _BATCH_STREAM, iteration, slot])
        img = pool[int(rng.integers(len(pool)))]
        top, left = rng.integers(0, img.shape[-1] - cfg.patch_size + 1, 2)
        patch = img[:, top:top + cfg.patch_size, left:left + cfg.patch_size]
        patch_noisy = np.clip(patch + sample_noise(patch, noise, rng), 0.0, 1.0)
        if cfg.augment:
            patch, patch_noisy = augment((patch, patch_noisy), rng)
        clean.append(patch)
        noisy.append(patch_noisy)
    return np.stack(clean), np.stack(noisy)


@dataclass
class TrainResult:
    weights: N.ModelWeights
    log: list[tuple[int, float, float]]

    @property
    def losses(self) -> np.ndarray:
        return np.array([row[2] for row in self.log])


def write_loss_log(path, log_rows) -> None:
    with open(path, "w") as fh:
        for it, lr, loss in log_rows:
            fh.write(f"{it}\t{lr!r}\t{loss!r}\n")


def train(model_cfg: N.ModelConfig, cfg: TrainConfig, noise: NoiseModel | None = None,
          weights: N.ModelWeights | None = None, out_dir=None, pool=None) -> TrainResult:
    """Train the two-stage model on synthetic pairs.

    With ``out_dir`` set, writes ``model.ckpt`` and ``loss.tsv`` there.  A
    non-finite loss stops training, saves the last good weights (if
    ``out_dir`` is set) and raises :class:`TrainingDiverged`.
    """
    from .fileio import save_checkpoint

    noise = noise or NoiseModel()
    dtype = np.dtype(cfg.dtype)
    if weights is None:
        weights = N.init_weights(model_cfg, cfg.seed, dtype)
    pool = pool if pool is not None else clean_pool(cfg, model_cfg.input_channels)
    state = AdamState(lr=cfg.lr)
    rows = []
    for it in range(cfg.iterations):
        state.lr = learning_rate(it, cfg.lr, cfg.halve_every)
        clean, noisy = sample_batch(pool, cfg, noise, it)
        clean, noisy = clean.astype(dtype), noisy.astype(dtype)
        pred, cache = N.model_forward(noisy, weights, model_cfg)
        loss, grad = mae_loss(pred, clean)
        try:
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at iteration {it}")
            grads, _ = N.model_backward(cache, weights, model_cfg, grad.astype(dtype))
            adam_step(weights, grads, state)
        except TrainingDiverged as exc:
            # adam_step validates before mutating, so weights are still the last good ones
            if out_dir is not None:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(Path(out_dir) / "model.ckpt", model_cfg, weights)
            raise TrainingDiverged(str(exc), weights, it) from exc
        rows.append((it, state.lr, loss))
        if it % 100 == 0:
            log.info("iter %d lr %.3g loss %.5f", it, state.lr, loss)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "model.ckpt", model_cfg, weights)
        write_loss_log(out / "loss.tsv", rows)
    return TrainResult(weights, rows)


def heldout_pairs(n: int, size: int, noise: NoiseModel, seed: int = 0, channels: int = 1):
    """``n`` fresh (clean, noisy) pairs from a stream disjoint from training."""
    pairs = []
    for i in range(n):
        rng = np.random.default_rng([seed, _HELDOUT_STREAM, i])
        clean = synthetic_image(size, rng, channels)
        pairs.append((clean, np.clip(clean + sample_noise(clean, noise, rng), 0.0, 1.0)))
    return pairs
