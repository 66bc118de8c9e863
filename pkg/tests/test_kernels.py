"""Cross-backend agreement and backend selection."""

import subprocess
import sys

import numpy as np
import pytest

from effcl.kernels import numpy_impl

numba_impl = pytest.importorskip("effcl.kernels.numba_impl")

rng = np.random.default_rng(42)


class TestBackendAgreement:
    """The numba twins must match the numpy reference to round-off."""

    def test_layer_norm_fwd_bwd(self):
        x = rng.normal(size=(48, 24))
        gain = rng.normal(size=24)
        bias = rng.normal(size=24)
        y0, mu0, rs0 = numpy_impl.layer_norm_fwd(x, gain, bias, 1e-5)
        y1, mu1, rs1 = numba_impl.layer_norm_fwd(x, gain, bias, 1e-5)
        np.testing.assert_allclose(y1, y0, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(mu1, mu0, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(rs1, rs0, rtol=1e-12)
        dy = rng.normal(size=(48, 24))
        d0 = numpy_impl.layer_norm_bwd(dy, x, gain, mu0, rs0)
        d1 = numba_impl.layer_norm_bwd(dy, x, gain, mu1, rs1)
        for a, b in zip(d0, d1):
            np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-12)

    def test_gelu_fwd_bwd(self):
        x = rng.normal(size=(30, 17)) * 3
        dy = rng.normal(size=(30, 17))
        np.testing.assert_allclose(
            numba_impl.gelu_fwd(x), numpy_impl.gelu_fwd(x), rtol=1e-13, atol=1e-15
        )
        np.testing.assert_allclose(
            numba_impl.gelu_bwd(x, dy), numpy_impl.gelu_bwd(x, dy), rtol=1e-12, atol=1e-14
        )

    def test_attn_softmax_fwd_bwd(self):
        scores = rng.normal(size=(3, 2, 7, 7)) * 4
        mask = rng.random((3, 7)) < 0.8
        mask[:, 0] = True
        p0 = numpy_impl.attn_softmax_fwd(scores, mask)
        p1 = numba_impl.attn_softmax_fwd(scores, mask)
        np.testing.assert_allclose(p1, p0, rtol=1e-12, atol=1e-15)
        assert np.all(p0[~np.broadcast_to(mask[:, None, None, :], p0.shape)] == 0)
        dp = rng.normal(size=scores.shape)
        np.testing.assert_allclose(
            numba_impl.attn_softmax_bwd(p1, dp),
            numpy_impl.attn_softmax_bwd(p0, dp),
            rtol=1e-12, atol=1e-15,
        )

    def test_softmax_xent_fwd_bwd(self):
        logits = rng.normal(size=(25, 13)) * 5
        targets = rng.integers(0, 13, size=25)
        l0, p0 = numpy_impl.softmax_xent_fwd(logits, targets)
        l1, p1 = numba_impl.softmax_xent_fwd(logits, targets)
        assert l1 == pytest.approx(l0, rel=1e-12)
        np.testing.assert_allclose(p1, p0, rtol=1e-12, atol=1e-15)
        d0 = numpy_impl.softmax_xent_bwd(p0, targets, 0.04)
        d1 = numba_impl.softmax_xent_bwd(p1, targets, 0.04)
        np.testing.assert_allclose(d1, d0, rtol=1e-12, atol=1e-16)

    def test_adamw_update(self):
        n = 400
        base_p = rng.normal(size=n)
        g = rng.normal(size=n)
        state0 = [base_p.copy(), np.zeros(n), np.zeros(n)]
        state1 = [base_p.copy(), np.zeros(n), np.zeros(n)]
        for t in (1, 2, 3):
            numpy_impl.adamw_update(state0[0], g, state0[1], state0[2], t,
                                    1e-3, 0.9, 0.999, 1e-8, 0.1)
            numba_impl.adamw_update(state1[0], g, state1[1], state1[2], t,
                                    1e-3, 0.9, 0.999, 1e-8, 0.1)
        for a, b in zip(state0, state1):
            np.testing.assert_allclose(b, a, rtol=1e-13, atol=1e-16)


class TestBackendSelection:
    """EFFCL_BACKEND picks the implementation bound at import."""

    def test_env_flag_subprocess(self):
        import os
        for value, module in (("numpy", "numpy_impl"), ("numba", "numba_impl"),
                              ("auto", "numba_impl")):
            env = dict(os.environ, EFFCL_BACKEND=value)
            out = subprocess.run(
                [sys.executable, "-c",
                 "import effcl.kernels as k; print(k.layer_norm_fwd.__module__)"],
                capture_output=True, text=True, env=env, check=True,
            )
            assert out.stdout.strip().endswith(module)

    def test_invalid_value_rejected(self):
        import os
        env = dict(os.environ, EFFCL_BACKEND="cuda")
        out = subprocess.run(
            [sys.executable, "-c", "import effcl.kernels"],
            capture_output=True, text=True, env=env,
        )
        assert out.returncode != 0
        assert "EFFCL_BACKEND" in out.stderr
