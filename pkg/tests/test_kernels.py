import os
import subprocess
import sys

import numpy as np
import pytest

from irbridge._kernels import BACKEND, em_affine, em_affine_compiled, em_affine_python
from irbridge.paths import BridgeParams, em_simulate
from irbridge.rng import substream

needs_compiled = pytest.mark.skipif(em_affine_compiled is None, reason="compiled extension not built")


def _case(n_steps=37, n=129, seed=0):
    g = substream(seed, "kernel")
    return (
        g.standard_normal(n),
        g.standard_normal(n),
        np.ascontiguousarray(g.uniform(0, 0.1, n_steps)),
        np.ascontiguousarray(g.uniform(0, 0.3, n_steps)),
        g.standard_normal((n_steps, n)),
    )


class TestFallback:
    def test_single_step_formula(self):
        x, tgt, kh, ns, z = _case(1, 5)
        expected = (x + kh[0] * (tgt - x)) + ns[0] * z[0]
        em_affine_python(x, tgt, kh, ns, z)
        assert np.array_equal(x, expected)

    def test_shape_checks(self):
        x, tgt, kh, ns, z = _case(4, 6)
        with pytest.raises(ValueError):
            em_affine_python(x[:5], tgt, kh, ns, z)
        with pytest.raises(ValueError):
            em_affine_python(x, tgt, kh[:2], ns, z)


@needs_compiled
class TestCompiled:
    def test_backend_selected(self):
        assert BACKEND == "cython" and em_affine is em_affine_compiled

    def test_bitwise_equal_to_fallback(self):
        a = _case()
        b = tuple(np.array(v, copy=True) for v in a)
        em_affine_python(*a)
        em_affine_compiled(*b)
        assert np.array_equal(a[0], b[0])

    def test_shape_checks(self):
        x, tgt, kh, ns, z = _case(4, 6)
        with pytest.raises(ValueError):
            em_affine_compiled(np.ascontiguousarray(x[:5]), tgt, kh, ns, z)


def test_pure_python_switch_gives_identical_simulation():
    code = (
        "import numpy as np, irbridge._kernels as k;"
        "from irbridge.paths import em_simulate, BridgeParams;"
        "from irbridge.rng import substream;"
        "x = em_simulate('goub', BridgeParams(), np.array([4.0, 3.0]), np.array([2.0, 5.0]), 300, substream(1, 's'), n_traj=50);"
        "print(k.BACKEND); print(x.tobytes().hex())"
    )
    env = dict(os.environ, IRBRIDGE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert out[0] == "python"
    local = em_simulate("goub", BridgeParams(), np.array([4.0, 3.0]), np.array([2.0, 5.0]), 300, substream(1, "s"), n_traj=50)
    assert out[1] == local.tobytes().hex()
