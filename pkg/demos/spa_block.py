"""
Channel attention and the SPA block
===================================

Channel attention rescales each feature map by one gate computed from its
global average.  The sub-band pyramid version applies the same gating to
every frequency band of a Haar pyramid, from the coarsest level up.
"""

# %%
import numpy as np

from spadenoise import attention

rng = np.random.default_rng(1)
x = rng.standard_normal((8, 32, 32))

# %%
ca = attention.init_channel_attention(8, 4, rng)
y, gates = attention.channel_attention(x, ca)
print("gates", gates.round(3))

# %%
# Level 0 is plain channel attention, bit for bit.
p0 = attention.init_spa(8, 0, 4, rng)
print("level 0 == channel attention:",
      attention.spa_forward(x, p0).tobytes() == attention.channel_attention(x, p0.top_ca)[0].tobytes())

# %%
# At level 2 the block has one extra attention unit per level, working on
# 4C = 32 channels: the processed low band plus the level's three detail bands.
p2 = attention.init_spa(8, 2, 4, rng)
print("parameters at level 0 / level 2:",
      attention.spa_param_count(8, 0, 4), attention.spa_param_count(8, 2, 4))
y2, cache = attention.spa_forward_cached(x, p2)
for i, step in enumerate(cache.steps):
    print(f"step {i}: {step.gates.shape[-1]} gates, mean {step.gates.mean():.3f}")

# %%
# With every gate forced open the block is the identity.
print("identity error", np.max(np.abs(attention.spa_forward(x, p2, force_gates=1.0) - x)))
