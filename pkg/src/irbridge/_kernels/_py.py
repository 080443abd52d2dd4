"""Pure-numpy fallback for the compiled kernels (same arithmetic order)."""
import numpy as np


def em_affine(x, target, kappa_h, noise_scale, z):
    x = np.asarray(x)
    n_steps = z.shape[0]
    if z.shape[1] != x.shape[0] or target.shape[0] != x.shape[0]:
        raise ValueError("shape mismatch")
    if len(kappa_h) < n_steps or len(noise_scale) < n_steps:
        raise ValueError("coefficient arrays shorter than noise block")
    for k in range(n_steps):
        x[...] = (x + kappa_h[k] * (target - x)) + noise_scale[k] * z[k]
