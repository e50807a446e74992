"""Unnormalized 2-D Haar transform and sub-band pyramids.

The four analysis filters are the plain +-1 kernels, so a single level
scales energy by 4 and the inverse divides by 4.  For output position
``(i, j)`` (0-based) the transform reads the 2x2 input block at rows
``2i, 2i+1`` and columns ``2j, 2j+1``; within the block the top-left
sample is ``a``, top-right ``b``, bottom-left ``c``, bottom-right ``d``::

    ll =  a + b + c + d
    lh = -a - b + c + d
    hl = -a + b - c + d
    hh =  a - b - c + d

All functions act on the last two axes and accept any leading axes
(channels, batch).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import ShapeError

HAAR_FILTERS: dict[str, np.ndarray] = {
    "ll": np.array([[1.0, 1.0], [1.0, 1.0]]),
    "lh": np.array([[-1.0, -1.0], [1.0, 1.0]]),
    "hl": np.array([[-1.0, 1.0], [-1.0, 1.0]]),
    "hh": np.array([[1.0, -1.0], [-1.0, 1.0]]),
}

BANDS = ("ll", "lh", "hl", "hh")


@dataclass
class SubbandSet:
    """High-frequency triple of one decomposition level."""

    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self):
        if not (self.lh.shape == self.hl.shape == self.hh.shape):
            raise ShapeError(f"sub-band shapes differ: {self.lh.shape}, {self.hl.shape}, {self.hh.shape}")

    def as_tuple(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.lh, self.hl, self.hh


@dataclass
class SubbandPyramid:
    """``top_ll`` plus ``highs[i - 1]`` holding the level-``i`` triple."""

    top_ll: np.ndarray
    highs: list[SubbandSet] = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.highs)


def _blocks(x: np.ndarray):
    return x[..., 0::2, 0::2], x[..., 0::2, 1::2], x[..., 1::2, 0::2], x[..., 1::2, 1::2]


def dwt2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One level of the Haar analysis transform.

    Returns ``(ll, lh, hl, hh)``, each with half the spatial extents of ``x``.
    Odd extents raise :class:`ShapeError`; padding is the caller's job.
    """
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"dwt2 needs even spatial extents, got height {h} and width {w}")
    a, b, c, d = _blocks(x)
    ll = a + b + c + d
    lh = -a - b + c + d
    hl = -a + b - c + d
    hh = a - b - c + d
    return ll, lh, hl, hh


def idwt2(ll: np.ndarray, lh: np.ndarray, hl: np.ndarray, hh: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`dwt2` (the four synthesis formulas, each over 4)."""
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise ShapeError(f"idwt2 needs four equal shapes, got {ll.shape}, {lh.shape}, {hl.shape}, {hh.shape}")
    out = np.empty(ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1]),
                   dtype=np.result_type(ll, lh, hl, hh))
    out[..., 0::2, 0::2] = (ll - lh - hl + hh) / 4
    out[..., 0::2, 1::2] = (ll - lh + hl - hh) / 4
    out[..., 1::2, 0::2] = (ll + lh - hl - hh) / 4
    out[..., 1::2, 1::2] = (ll + lh + hl + hh) / 4
    return out


def dwt2_backward(g_ll, g_lh, g_hl, g_hh) -> np.ndarray:
    """Adjoint of :func:`dwt2`: maps band gradients to an input gradient.

    The analysis matrix ``H`` satisfies ``H^T = 4 H^{-1}``, so the adjoint is
    four times the inverse transform.
    """
    return 4.0 * idwt2(g_ll, g_lh, g_hl, g_hh)


def idwt2_backward(grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Adjoint of :func:`idwt2`."""
    h, w = grad_out.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"idwt2_backward needs even extents, got height {h} and width {w}")
    return tuple(band / 4 for band in dwt2(grad_out))


def max_levels(h: int, w: int) -> int:
    """Largest n such that both extents are divisible by 2**n."""
    n = 0
    while h % 2 == 0 and w % 2 == 0 and h > 1 and w > 1:
        h //= 2
        w //= 2
        n += 1
    return n


def build_pyramid(x: np.ndarray, n: int) -> SubbandPyramid:
    """Apply :func:`dwt2` ``n`` times to the low band."""
    if n < 0:
        raise ValueError(f"pyramid level must be >= 0, got {n}")
    h, w = x.shape[-2:]
    if h % (2 ** n) or w % (2 ** n):
        raise ShapeError(f"extents {h}x{w} not divisible by 2**{n}; "
                         f"maximum legal level for this shape is {max_levels(h, w)}")
    highs = []
    ll = x
    for _ in range(n):
        ll, lh, hl, hh = dwt2(ll)
        highs.append(SubbandSet(lh, hl, hh))
    return SubbandPyramid(ll, highs)


def reconstruct_pyramid(p: SubbandPyramid) -> np.ndarray:
    """Fold :func:`idwt2` from the top band down to full resolution."""
    ll = p.top_ll
    for level in range(p.levels, 0, -1):
        s = p.highs[level - 1]
        if s.lh.shape != ll.shape:
            raise ShapeError(f"broken pyramid at level {level}: low band {ll.shape}, "
                             f"high bands {s.lh.shape}")
        ll = idwt2(ll, *s.as_tuple())
    return ll


def build_pyramid_backward(grad: SubbandPyramid) -> np.ndarray:
    """Adjoint of :func:`build_pyramid` given gradients for every band."""
    g = grad.top_ll
    for level in range(grad.levels, 0, -1):
        g = dwt2_backward(g, *grad.highs[level - 1].as_tuple())
    return g


def reconstruct_pyramid_backward(grad_out: np.ndarray, n: int) -> SubbandPyramid:
    """Adjoint of :func:`reconstruct_pyramid` for an ``n``-level pyramid."""
    highs = []
    g = grad_out
    for _ in range(n):
        g, lh, hl, hh = idwt2_backward(g)
        highs.append(SubbandSet(lh, hl, hh))
    return SubbandPyramid(g, highs)
