# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Euler-Maruyama stepping for affine-drift SDEs."""

cimport cython


def em_affine(double[::1] x, const double[::1] target,
              const double[::1] kappa_h, const double[::1] noise_scale,
              const double[:, ::1] z):
    """Advance ``x`` in place through ``z.shape[0]`` steps.

    Step k applies ``x += kappa_h[k] * (target - x) + noise_scale[k] * z[k]``.
    """
    cdef Py_ssize_t n_steps = z.shape[0]
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t k, m
    cdef double kh, gs
    if z.shape[1] != n or target.shape[0] != n:
        raise ValueError("shape mismatch")
    if kappa_h.shape[0] < n_steps or noise_scale.shape[0] < n_steps:
        raise ValueError("coefficient arrays shorter than noise block")
    with nogil:
        for k in range(n_steps):
            kh = kappa_h[k]
            gs = noise_scale[k]
            for m in range(n):
                x[m] = (x[m] + kh * (target[m] - x[m])) + gs * z[k, m]
