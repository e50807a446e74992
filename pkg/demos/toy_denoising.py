"""
Training the toy denoiser
=========================

Train a small two-stage model on synthetic structured noise and score it
on held-out pairs.  The default budget (2000 iterations) takes a few
minutes on one CPU core; set ITERATIONS lower for a quick look.
"""

# %%
import numpy as np

from spadenoise import experiments, metrics, network, training

ITERATIONS = 2000

model_cfg = network.ModelConfig(input_channels=1, base_channels=8, spa_level=2)
train_cfg = training.TrainConfig(iterations=ITERATIONS, seed=0)
noise = training.NoiseModel()
print("parameters:", network.init_weights(model_cfg).size)

# %%
result = training.train(model_cfg, train_cfg, noise)
losses = result.losses
print(f"MAE first 20 iterations {losses[:20].mean():.4f}, last 50 {losses[-50:].mean():.4f}")

# %%
# Held-out pairs come from a separate random stream.
pairs = training.heldout_pairs(32, 64, noise, seed=1000)
noisy_psnr, den_psnr = experiments.evaluate(result.weights, model_cfg, pairs)
print(f"noisy {noisy_psnr:.2f} dB -> denoised {den_psnr:.2f} dB ({den_psnr - noisy_psnr:+.2f} dB)")

# %%
clean, noisy = pairs[0]
den = network.denoise_image(noisy, result.weights, model_cfg)
print("SSIM noisy / denoised:", round(metrics.ssim(clean, noisy), 4), round(metrics.ssim(clean, den), 4))
