"""The backend benchmark script runs and reports both paths."""

import os
import subprocess
import sys

REPO = os.path.join(os.path.dirname(__file__), os.pardir)


def test_bench_backends_smoke():
    env = dict(os.environ, PYTHONPATH=os.path.join(REPO, "src"))
    out = subprocess.run(
        [sys.executable, os.path.join(REPO, "benchmarks", "bench_backends.py"),
         "--iters", "1", "--dtype", "f64"],
        env=env, capture_output=True, text=True, timeout=300,
    )
    assert out.returncode == 0, out.stderr
    assert "numpy ms" in out.stdout
    assert "numba ms" in out.stdout
