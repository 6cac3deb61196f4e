"""The pure-numpy fallback honors the same contracts as the numba path."""

import json
import os
import subprocess
import sys

import numpy as np

from cscseg import _kernels_numpy, backend, ops
from cscseg.rng import Stream

REPO_SRC = os.path.join(os.path.dirname(__file__), os.pardir, "src")


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, CSCSEG_BACKEND="numpy", PYTHONPATH=REPO_SRC)
    out = subprocess.run(
        [sys.executable, "-c",
         "import cscseg, json; print(json.dumps(cscseg.active_backend()))"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert json.loads(out.stdout) == "numpy"


def test_numpy_kernels_match_active_backend():
    stream = Stream(77, "parity")
    for stride, padding, k in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 2, 5)]:
        x = stream.normal((2, 3, 10, 9))
        w = stream.normal((4, 3, k, k))
        oh = ops.conv_out_size(10, k, stride, padding)
        ow = ops.conv_out_size(9, k, stride, padding)
        gy = stream.normal((2, 4, oh, ow))

        got_fwd = backend.conv2d(x, w, stride, padding)
        got_gx = backend.conv2d_input_grad(gy, w, stride, padding, 10, 9)
        got_gw = backend.conv2d_kernel_grad(x, gy, stride, padding, k, k)

        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        ref_fwd = _kernels_numpy.conv2d_kernel(
            xp, w, stride, np.zeros_like(got_fwd)
        )
        gxp = np.zeros((2, 3, 10 + 2 * padding, 9 + 2 * padding))
        _kernels_numpy.conv2d_input_grad_kernel(gy, w, stride, gxp)
        ref_gx = gxp[:, :, padding:padding + 10, padding:padding + 9]
        ref_gw = _kernels_numpy.conv2d_kernel_grad_kernel(
            xp, gy, stride, np.zeros_like(got_gw)
        )

        assert np.allclose(got_fwd, ref_fwd, rtol=1e-11, atol=1e-12)
        assert np.allclose(got_gx, ref_gx, rtol=1e-11, atol=1e-12)
        assert np.allclose(got_gw, ref_gw, rtol=1e-11, atol=1e-12)


def test_numpy_backend_passes_adjoint_and_mechanics():
    env = dict(os.environ, CSCSEG_BACKEND="numpy", PYTHONPATH=REPO_SRC)
    script = (
        "import json\n"
        "from cscseg import checks\n"
        "adj = checks.adjoint_suite(n_configs=25)\n"
        "mech = checks.mechanics_suite()\n"
        "print(json.dumps({'adj': adj['passed'], 'mech': mech['passed']}))\n"
    )
    out = subprocess.run([sys.executable, "-c", script], env=env,
                         capture_output=True, text=True, check=True)
    result = json.loads(out.stdout.strip().splitlines()[-1])
    assert result == {"adj": True, "mech": True}


def test_upsample_adjoint_parity(stream):
    g = stream.normal((2, 3, 8, 6))
    got = ops.upsample2x_adjoint(g)
    taps_h = ops._bilinear_taps(4, g.dtype)
    taps_w = ops._bilinear_taps(3, g.dtype)
    ref = _kernels_numpy.upsample2x_adjoint_kernel(
        g, *taps_h, *taps_w, np.zeros((2, 3, 4, 3), dtype=g.dtype)
    )
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-14)
