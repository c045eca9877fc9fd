"""Build a Gabor bank, modulate one learned kernel and show orientation response.

A vertical bar excites the orientation channel whose carrier runs across it far
more than the channel aligned with it.  Run: python demos/gabor_bank.py
"""
import numpy as np
import torch

from frbdet.gabor import GaborParams, build_gabor_bank, gof_conv_forward

params = GaborParams(kernel_size=7, orientations=4, scales=1)
bank = build_gabor_bank(params)
print("bank shape (scales, orientations, k, k):", bank.shape)
for u in range(params.orientations):
    print(f"  theta_{u}: centre={bank[0, u, 3, 3]:+.3f}  max|g|={np.abs(bank[0, u]).max():.3f}")

# one input and one output channel, canonical kernel = all ones
canonical = torch.ones(1, 1, 7, 7)
image = torch.zeros(1, 1, 4, 32, 32)
image[..., 12:20, 15:17] = 1.0  # thin vertical bar, replicated on every orientation
out = gof_conv_forward(image, canonical, torch.as_tensor(bank))
energy = out.pow(2).sum(dim=(-1, -2))[0, 0]
for u, e in enumerate(energy.tolist()):
    print(f"response energy on orientation {u}: {e:9.2f}")
