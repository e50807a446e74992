"""Run configuration files, held-out evaluation and the pyramid-level ablation."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import metrics as M
from . import network as N
from . import training as T

# Published validation PSNR (dB) by SPA level, full-scale model on real data.
# Printed next to toy results for context only; the scales are not comparable.
PAPER_LEVEL_PSNR = {0: 39.24, 1: 39.33, 2: 39.47, 3: 39.57, 4: 39.55}

NOISE_PREFIX = "noise."


@dataclass
class EvalConfig:
    pairs: int = 32
    size: int = 64
    # held-out stream seed, independent of the training seed so every run is scored on the same images
    seed: int = 1000


@dataclass
class RunConfig:
    """Everything one training run needs, loadable from ``key = value`` text.

    Keys are the field names of :class:`~spadenoise.network.ModelConfig` and
    :class:`~spadenoise.training.TrainConfig`, ``noise.<field>`` for the
    noise model and ``eval.<field>`` for the held-out set.
    """

    model: N.ModelConfig = field(default_factory=lambda: N.ModelConfig(base_channels=8, spa_level=2))
    train: T.TrainConfig = field(default_factory=T.TrainConfig)
    noise: T.NoiseModel = field(default_factory=T.NoiseModel)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_kv(cls, d: dict[str, str]) -> "RunConfig":
        base = cls()
        model_keys = {f.name for f in fields(N.ModelConfig)}
        model, train, noise, ev = {}, {}, {}, {}
        for key, value in d.items():
            if key in model_keys:
                model[key] = value
            elif key in T.TrainConfig.field_names():
                train[key] = _convert(T.TrainConfig, key, value)
            elif key.startswith(NOISE_PREFIX):
                noise[key[len(NOISE_PREFIX):]] = _convert(T.NoiseModel, key[len(NOISE_PREFIX):], value)
            elif key.startswith("eval."):
                ev[key[5:]] = _convert(EvalConfig, key[5:], value)
            else:
                raise ValueError(f"unknown config key {key!r}")
        model_cfg = N.ModelConfig.from_dict({**base.model.to_dict(), **model})
        return cls(model_cfg, replace(base.train, **train), replace(base.noise, **noise),
                   replace(base.eval, **ev))


def _convert(cls, name: str, value: str):
    kinds = {f.name: f.type for f in fields(cls)}
    if name not in kinds:
        raise ValueError(f"unknown config key {name!r}")
    kind = kinds[name]
    if kind in ("bool", bool):
        if value.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"{name}: expected a boolean, got {value!r}")
        return value.lower() in ("true", "1")
    if kind in ("int", int):
        return int(value)
    if kind in ("float", float):
        return float(value)
    return value


def evaluate(weights: N.ModelWeights, cfg: N.ModelConfig, pairs) -> tuple[float, float]:
    """Mean PSNR of the noisy inputs and of the denoised outputs over ``pairs``."""
    noisy = [M.psnr(c, n) for c, n in pairs]
    denoised = [M.psnr(c, N.denoise_image(n, weights, cfg)) for c, n in pairs]
    return float(np.mean(noisy)), float(np.mean(denoised))


@dataclass
class AblationRow:
    level: int
    seed: int
    noisy_psnr: float
    psnr: float
    final_loss: float


def run_level(run: RunConfig, level: int, seed: int, pairs=None) -> AblationRow:
    """Train one model with SPA level ``level`` and score it on the held-out set."""
    model = replace(run.model, spa_level=level)
    result = T.train(model, replace(run.train, seed=seed), run.noise)
    if pairs is None:
        pairs = T.heldout_pairs(run.eval.pairs, run.eval.size, run.noise, run.eval.seed, model.input_channels)
    noisy, den = evaluate(result.weights, model, pairs)
    tail = result.losses[-50:]
    return AblationRow(level, seed, noisy, den, float(tail.mean()) if tail.size else float("nan"))


def ablate(run: RunConfig, levels, seeds) -> list[AblationRow]:
    """Identical budgets and seeds for every level; rows ordered by level then seed."""
    pairs = T.heldout_pairs(run.eval.pairs, run.eval.size, run.noise, run.eval.seed, run.model.input_channels)
    return [run_level(run, lv, s, pairs) for lv in levels for s in seeds]


def ablation_table(rows: list[AblationRow]) -> str:
    seeds = sorted({r.seed for r in rows})
    head = "level  " + "  ".join(f"seed{s:<4d}" for s in seeds) + "  median   paper(full scale)"
    lines = [head]
    for lv in sorted({r.level for r in rows}):
        by_seed = {r.seed: r.psnr for r in rows if r.level == lv}
        cells = "  ".join(f"{by_seed[s]:8.3f}" for s in seeds)
        ref = PAPER_LEVEL_PSNR.get(lv)
        ref_text = f"{ref:.2f}" if ref is not None else "-"
        lines.append(f"{lv:5d}  {cells}  {np.median(list(by_seed.values())):7.3f}  {ref_text}")
    noisy = rows[0].noisy_psnr if rows else float("nan")
    lines.append(f"noisy input PSNR: {noisy:.3f} dB")
    return "\n".join(lines)
