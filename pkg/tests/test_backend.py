"""The compiled kernels and the numpy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from adaloc import _backend
from adaloc._backend import KERNEL_NAMES, compiled_available, get

needs_compiled = pytest.mark.skipif(not compiled_available(), reason="compiled kernels not built")


def both(name):
    return get(name, "compiled"), get(name, "python")


def test_kernel_lookup():
    assert set(KERNEL_NAMES) == {"combine_array", "rho_block", "l96_advance", "arakawa_jacobian",
                                 "analysis_rmse_batch"}
    with pytest.raises(KeyError):
        get("nope")
    with pytest.raises(ValueError):
        get("rho_block", "gpu")
    assert callable(get("rho_block"))


@needs_compiled
@pytest.mark.parametrize("kind", range(6))
def test_combine_agrees(rng, kind):
    fc, fp = both("combine_array")
    a = np.concatenate([rng.uniform(0, 1, 200), [0.0, 0.0, 1e-310, 0.3]])
    b = np.concatenate([rng.uniform(0, 1, 200), [0.0, 0.5, 1e-300, 0.3]])
    np.testing.assert_allclose(np.asarray(fc(kind, a, b)), fp(kind, a, b), rtol=1e-14, atol=0)


@needs_compiled
@pytest.mark.parametrize("kind", range(6))
def test_rho_block_agrees(rng, kind):
    fc, fp = both("rho_block")
    dist = np.ascontiguousarray(rng.uniform(0, 10, (7, 5)))
    rr, rc = rng.uniform(0.5, 4, 7), rng.uniform(0.5, 4, 5)
    np.testing.assert_allclose(np.asarray(fc(dist, rr, rc, kind)), fp(dist, rr, rc, kind), rtol=1e-13)


@needs_compiled
@pytest.mark.parametrize("amp", [0.0, 4.0])
def test_l96_advance_agrees(rng, amp):
    fc, fp = both("l96_advance")
    x0 = np.ascontiguousarray(8 + rng.standard_normal((40, 3)))
    args = (0.3, 0.01, 25, 8.0, amp, 2 * np.pi, 4)
    np.testing.assert_allclose(np.asarray(fc(x0, *args)), fp(x0, *args), rtol=1e-11, atol=1e-11)


@needs_compiled
def test_arakawa_agrees(rng):
    fc, fp = both("arakawa_jacobian")
    psi, q = (np.ascontiguousarray(rng.standard_normal((9, 9, 2))) for _ in range(2))
    np.testing.assert_allclose(np.asarray(fc(psi, q, 0.1)), fp(psi, q, 0.1), rtol=1e-12, atol=1e-10)


@needs_compiled
def test_analysis_rmse_batch_agrees(rng):
    fc, fp = both("analysis_rmse_batch")
    n, m, N = 12, 5, 6
    X = rng.standard_normal((n, N))
    X -= X.mean(axis=1, keepdims=True)
    obs = np.array([0, 3, 5, 8, 11], dtype=np.int64)
    Y = X[obs]
    idx = np.arange(n)
    dist = np.minimum(np.abs(idx[:, None] - idx[None, :]), n - np.abs(idx[:, None] - idx[None, :])).astype(float)
    args = (rng.standard_normal(n), np.ascontiguousarray(X @ Y.T / 5), np.ascontiguousarray(Y @ Y.T / 5),
            rng.standard_normal(m), np.full(m, 0.5), np.ascontiguousarray(dist[:, obs]),
            np.ascontiguousarray(dist[np.ix_(obs, obs)]), obs, np.ascontiguousarray(rng.uniform(0.5, 3, (4, n))),
            2, rng.standard_normal(n))
    np.testing.assert_allclose(np.asarray(fc(*args)), fp(*args), rtol=1e-12)


def test_kernels_accept_read_only_inputs(rng):
    a = rng.uniform(0, 1, 10)
    a.setflags(write=False)
    assert np.all(np.isfinite(np.asarray(get("combine_array")(2, a, a))))


def test_pure_python_switch():
    env = dict(os.environ, ADALOC_PURE_PYTHON="1")
    code = "import adaloc; print(adaloc.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_pure_python_backend_runs_the_filter(tmp_path):
    env = dict(os.environ, ADALOC_PURE_PYTHON="1")
    code = (
        "from adaloc.harness.config import loads\n"
        "from adaloc.harness.experiment import run_experiment\n"
        "cfg = loads('[observations]\\npattern = \"sparse30\"\\n[filter]\\ncycles = 20\\nspinup = 5\\n')\n"
        "print(repr(run_experiment(cfg).aggregate_rmse))\n"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    from adaloc.harness.config import loads
    from adaloc.harness.experiment import run_experiment

    cfg = loads('[observations]\npattern = "sparse30"\n[filter]\ncycles = 20\nspinup = 5\n')
    assert float(out.stdout) == pytest.approx(run_experiment(cfg).aggregate_rmse, rel=1e-9)


def test_backend_flag_matches_kernels():
    assert _backend.BACKEND in ("compiled", "python")
    if _backend.BACKEND == "compiled":
        assert _backend.kernels is not _backend._fallback


def test_benchmark_script_runs(capsys):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    mod.main(["--repeat", "1", "--no-end-to-end"])
    out = capsys.readouterr().out
    for name in KERNEL_NAMES:
        assert name in out
