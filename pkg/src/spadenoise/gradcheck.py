"""Central finite-difference checks for every hand-written backward pass.

Each check builds a random small instance, projects the output onto a
random direction ``r`` so the objective ``sum(out * r)`` is scalar, and
compares analytic gradients against ``(f(t + h) - f(t - h)) / 2h``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention as A
from . import layers as L
from . import network as N
from . import wavelet as W

STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-7
# probes straddling a ReLU kink are skipped; more than this fraction fails the group
MAX_SKIP_FRACTION = 0.1


@dataclass
class GradResult:
    group: str
    checked: int
    max_rel_error: float
    max_abs_error: float
    worst: str
    passed: bool
    skipped: int = 0

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (f"{status:4s} {self.group:32s} n={self.checked:5d} "
                f"max_rel={self.max_rel_error:.3e} max_abs={self.max_abs_error:.3e} "
                f"kinks_skipped={self.skipped} worst={self.worst}")


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.abs(a), np.abs(b))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, np.abs(a - b) / scale, 0.0)
    return rel


def numeric_gradient(f: Callable[[], float], t: np.ndarray, indices=None, step: float = STEP,
                     with_kinks: bool = False):
    """Central differences of scalar ``f()`` w.r.t. entries of ``t`` (perturbed in place).

    With ``with_kinks`` also returns a boolean mask of probes whose one-sided
    slopes disagree by more than ``RTOL`` of their magnitude, i.e. probes
    whose interval ``[t - h, t + h]`` straddles a ReLU kink.
    """
    flat = t.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    f0 = f() if with_kinks else 0.0
    out, kinks = [], []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2 * step))
        if with_kinks:
            right, left = (fp - f0) / step, (f0 - fm) / step
            kinks.append(abs(right - left) > RTOL * max(abs(right), abs(left)) + ATOL)
    if with_kinks:
        return np.array(out), np.array(kinks, dtype=bool)
    return np.array(out)


def compare(group: str, analytic: np.ndarray, numeric: np.ndarray, labels=None,
            rtol: float = RTOL, atol: float = ATOL, skip=None) -> GradResult:
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    keep = np.ones(analytic.size, bool) if skip is None else ~np.asarray(skip)
    abs_err = np.where(keep, np.abs(analytic - numeric), 0.0)
    rel = np.where(keep, relative_error(analytic, numeric), 0.0)
    bad = (rel >= rtol) & (abs_err >= atol)
    # rel error is meaningless where both values are ~0
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel_reported = np.where(scale >= atol, rel, 0.0)
    worst = int(np.argmax(rel_reported)) if rel_reported.size else 0
    label = labels[worst] if labels is not None and len(labels) else str(worst)
    skipped = int((~keep).sum())
    passed = not bool(bad.any()) and skipped <= MAX_SKIP_FRACTION * analytic.size
    return GradResult(group, int(keep.sum()),
                      float(rel_reported.max(initial=0.0)), float(abs_err.max(initial=0.0)),
                      label, passed, skipped)


def _sample(size: int, limit: int | None, rng) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, limit, replace=False))


def check_tensors(group: str, objective: Callable[[], float], tensors: dict[str, np.ndarray],
                  analytic: dict[str, np.ndarray], rng, per_tensor: int | None = None,
                  sign: float = 1.0, skip_kinks: bool = False) -> GradResult:
    """Finite-difference check over named tensors (optionally a sample of entries)."""
    a_all, n_all, k_all, labels = [], [], [], []
    for name, t in tensors.items():
        idx = _sample(t.size, per_tensor, rng)
        if skip_kinks:
            num, kinks = numeric_gradient(objective, t, idx, with_kinks=True)
            k_all.append(kinks)
        else:
            num = numeric_gradient(objective, t, idx)
        n_all.append(num)
        a_all.append(sign * analytic[name].reshape(-1)[idx])
        labels.extend(f"{name}[{i}]" for i in idx)
    skip = np.concatenate(k_all) if skip_kinks else None
    return compare(group, np.concatenate(a_all), np.concatenate(n_all), labels, skip=skip)


# -- suites --------------------------------------------------------------------

def check_layers(seed: int = 0, sign: float = 1.0) -> list[GradResult]:
    rng = np.random.default_rng(seed)
    results = []

    for stride, pad in ((1, 1), (2, 1), (1, 0)):
        x = rng.standard_normal((2, 2, 6, 6)) if stride == 1 else rng.standard_normal((2, 2, 5, 5))
        p = L.ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3), stride, pad)
        r = rng.standard_normal(L.conv2d_forward(x, p).shape)
        obj = lambda: float(np.sum(L.conv2d_forward(x, p) * r))
        gx, gw, gb = L.conv2d_backward(x, p, r)
        results.append(check_tensors(f"conv2d(stride={stride},pad={pad})", obj,
                                     {"input": x, "weights": p.weights, "bias": p.bias},
                                     {"input": gx, "weights": gw, "bias": gb}, rng, sign=sign))

    x = rng.standard_normal((3, 4))
    p = L.DenseParams(rng.standard_normal((2, 4)), rng.standard_normal(2))
    r = rng.standard_normal((3, 2))
    gx, gw, gb = L.dense_backward(x, p, r)
    results.append(check_tensors("dense", lambda: float(np.sum(L.dense_forward(x, p) * r)),
                                 {"input": x, "weights": p.weights, "bias": p.bias},
                                 {"input": gx, "weights": gw, "bias": gb}, rng, sign=sign))

    x = rng.standard_normal((2, 3, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the relu kink
    r = rng.standard_normal(x.shape)
    results.append(check_tensors("relu", lambda: float(np.sum(L.relu(x) * r)), {"input": x},
                                 {"input": L.relu_backward(x, r)}, rng, sign=sign))
    results.append(check_tensors("sigmoid", lambda: float(np.sum(L.sigmoid(x) * r)), {"input": x},
                                 {"input": L.sigmoid_backward(x, r)}, rng, sign=sign))

    x = rng.standard_normal((3, 4, 4))
    r = rng.standard_normal((3, 1, 1))
    results.append(check_tensors("global_average_pool",
                                 lambda: float(np.sum(L.global_average_pool(x) * r)), {"input": x},
                                 {"input": L.global_average_pool_backward(x, r)}, rng, sign=sign))

    x = rng.standard_normal((2, 4, 6))
    rb = [rng.standard_normal((2, 2, 3)) for _ in range(4)]
    gx = W.dwt2_backward(*rb)
    results.append(check_tensors("dwt2", lambda: float(sum(np.sum(b * q) for b, q in zip(W.dwt2(x), rb))),
                                 {"input": x}, {"input": gx}, rng, sign=sign))

    bands = {k: rng.standard_normal((2, 2, 3)) for k in W.BANDS}
    r = rng.standard_normal((2, 4, 6))
    g = dict(zip(W.BANDS, W.idwt2_backward(r)))
    results.append(check_tensors("idwt2", lambda: float(np.sum(W.idwt2(*bands.values()) * r)),
                                 bands, g, rng, sign=sign))
    return results


def check_spa(seed: int = 0, sign: float = 1.0, levels=(0, 1, 2)) -> list[GradResult]:
    rng = np.random.default_rng(seed)
    results = []

    x = rng.standard_normal((4, 4, 4))
    p = A.init_channel_attention(4, 2, rng)
    r = rng.standard_normal(x.shape)
    gx, gp = A.channel_attention_backward(x, p, r)
    tensors = {"input": x, **p.named_tensors("ca")}
    analytic = {"input": gx, **gp.named_tensors("ca")}
    results.append(check_tensors("channel_attention", lambda: float(np.sum(A.channel_attention(x, p)[0] * r)),
                                 tensors, analytic, rng, sign=sign))

    for n in levels:
        x = rng.standard_normal((2, 8, 8))
        p = A.init_spa(2, n, 2, rng)
        r = rng.standard_normal(x.shape)
        gx, gp = A.spa_backward(x, p, r)
        tensors = {"input": x, **p.named_tensors("spa")}
        analytic = {"input": gx, **gp.named_tensors("spa")}
        results.append(check_tensors(f"spa(level={n})", lambda: float(np.sum(A.spa_forward(x, p) * r)),
                                     tensors, analytic, rng, sign=sign))
    return results


def check_network(seed: int = 0, sign: float = 1.0, cfg: N.ModelConfig | None = None,
                  size: int = 16, per_tensor: int | None = 2) -> list[GradResult]:
    """Toy end-to-end check; ``per_tensor`` samples entries of each weight tensor."""
    cfg = cfg or N.ModelConfig(input_channels=1, base_channels=4, spa_level=2)
    rng = np.random.default_rng(seed)
    w = N.init_weights(cfg, seed)
    x = rng.uniform(0, 1, (cfg.input_channels, size, size))
    r = rng.standard_normal(x.shape)
    y, cache = N.model_forward(x, w, cfg)
    grads, gx = N.model_backward(cache, w, cfg, r)
    obj = lambda: float(np.sum(N.denoise(x, w, cfg) * r))

    results = [check_tensors("network.input", obj, {"input": x}, {"input": gx}, rng,
                              sign=sign, skip_kinks=True)]
    groups: dict[str, list[str]] = {}
    for name in w:
        key = name.split(".")[0] + (".spa" if ".spa." in name else ".conv")
        groups.setdefault(key, []).append(name)
    for key, names in groups.items():
        results.append(check_tensors(f"network.{key}", obj, {n: w[n] for n in names},
                                     {n: grads[n] for n in names}, rng, per_tensor, sign=sign,
                                     skip_kinks=True))
    return results


SUITES = {"layers": check_layers, "spa": check_spa, "network": check_network}
