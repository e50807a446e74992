"""
Haar sub-band pyramids
======================

Decompose a synthetic image into a multi-level Haar pyramid, look at where
the energy sits, and rebuild it exactly.
"""

# %%
import numpy as np

from spadenoise import training, wavelet

rng = np.random.default_rng(0)
img = training.synthetic_image(64, rng)
print("image", img.shape, "range", img.min().round(3), img.max().round(3))

# %%
# One level splits the image into a low band and three detail bands.  The
# filters are the unnormalized +-1 Haar kernels, so every band is half the
# size and the band energies add up to four times the image energy.
ll, lh, hl, hh = wavelet.dwt2(img)
energies = {name: float(np.sum(b * b)) for name, b in zip(wavelet.BANDS, (ll, lh, hl, hh))}
print(energies)
print("sum / (4 * image energy) =", sum(energies.values()) / (4 * np.sum(img * img)))

# %%
# Three levels: the top low band is 8x8, each level keeps its detail bands.
pyr = wavelet.build_pyramid(img, 3)
print("top", pyr.top_ll.shape, "details", [s.lh.shape for s in pyr.highs])
for level, s in enumerate(pyr.highs, start=1):
    share = sum(np.sum(b * b) for b in s.as_tuple()) / 4 ** level
    print(f"level {level}: detail energy (rescaled) {share:.3f}")

# %%
# Reconstruction is exact up to rounding.
back = wavelet.reconstruct_pyramid(pyr)
print("max abs reconstruction error", np.max(np.abs(back - img)))

# %%
# Dropping every detail band leaves a blocky image made of 8x8 block means.
for s in pyr.highs:
    for b in s.as_tuple():
        b[...] = 0
blocky = wavelet.reconstruct_pyramid(pyr)
print("distinct values in first 8x8 block:", np.unique(blocky[0, :8, :8].round(12)).size)
