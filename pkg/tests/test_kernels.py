import math
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import digamma, polygamma

from regimefx import _accel
from regimefx._kernels import JUMP_GAMMA, JUMP_POINT_MASS, chain_batch, series_batch, spot_batch
from regimefx._rng import CHAIN_KEY, SPOT_KEY, Stream, path_seeds
from regimefx.pricing import black_scholes_call

needs_numba = pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not installed")


def spot_args(kind, param, shape):
    return dict(
        drift=[0.05, -0.03, 0.01], sigma=[0.1, 0.2, 0.15], intensity=[2.0, 4.0, 1.0],
        jump_kind=kind, jump_param=param, jump_shape=shape,
        theta_c=[0.5, -1.0, 2.0], theta_j=[0.3, 0.3, -0.2], lam_phys=[1.5, 3.0, 1.2],
        m_theta_j=[1.1, 1.2, 0.9],
    )


class TestBackendEquivalence:
    @needs_numba
    def test_chain(self, three_rate):
        seeds = path_seeds(77, 500)
        a = chain_batch(three_rate.pi, 1, 2.0, seeds, use_numba=True)
        b = chain_batch(three_rate.pi, 1, 2.0, seeds, use_numba=False)
        np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-13)
        np.testing.assert_array_equal(a[1], b[1])

    @needs_numba
    @pytest.mark.parametrize("kind,param,shape", [
        (JUMP_GAMMA, [5.0, 3.0, 8.0], [1.0, 1.0, 1.0]),
        (JUMP_GAMMA, [5.0, 3.0, 8.0], [0.4, 2.5, 7.0]),
        (JUMP_POINT_MASS, [1.05, 0.9, 1.2], [1.0, 1.0, 1.0]),
    ])
    def test_spot(self, three_rate, kind, param, shape):
        seeds = path_seeds(5, 400)
        kw = spot_args(kind, param, shape)
        a = spot_batch(three_rate.pi, 0, 1.5, seeds, use_numba=True, **kw)
        b = spot_batch(three_rate.pi, 0, 1.5, seeds, use_numba=False, **kw)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)

    @needs_numba
    def test_series(self, rng):
        n = 300
        r = rng.uniform(-0.02, 0.05, n)
        u = rng.uniform(0.001, 0.1, n)
        lam = rng.uniform(0.0, 8.0, n)
        dc = rng.uniform(-0.5, 0.5, n)
        lg = rng.uniform(-0.3, 0.3, n)
        sj = rng.uniform(0.0, 0.6, n)
        a = series_batch(1.0, 0.95, 1.2, r, u, lam, dc, lg, sj, use_numba=True)
        b = series_batch(1.0, 0.95, 1.2, r, u, lam, dc, lg, sj, use_numba=False)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize("use_numba", [False, pytest.param(True, marks=needs_numba)])
    def test_series_without_jumps_is_black_scholes(self, use_numba):
        p = series_batch(1.0, 1.1, 0.7, [0.02], [0.04], [0.0], [0.0], [0.0], 0.5, use_numba=use_numba)
        assert p[0] == pytest.approx(black_scholes_call(1.0, 1.1, 0.7, 0.04, 0.02), abs=1e-15)


class TestStreams:
    def test_scalar_stream_matches_vectorised(self):
        from regimefx._rng import np_stream_state, np_uniform

        seeds = path_seeds(123, 4)
        states = np_stream_state(seeds, SPOT_KEY)
        idx = np.arange(4)
        vec = np.array([np_uniform(states, idx) for _ in range(5)]).T
        for i, s in enumerate(seeds):
            st = Stream(int(s), SPOT_KEY)
            np.testing.assert_array_equal(vec[i], [st.uniform() for _ in range(5)])

    def test_uniforms_in_open_unit_interval(self):
        st = Stream(0, CHAIN_KEY)
        u = np.array([st.uniform() for _ in range(20_000)])
        assert u.min() > 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 3 * math.sqrt(1 / 12 / u.size)

    def test_keys_give_distinct_streams(self):
        assert Stream(9, CHAIN_KEY).uniform() != Stream(9, SPOT_KEY).uniform()


class TestGammaSampler:
    @pytest.mark.parametrize("use_numba", [False, pytest.param(True, marks=needs_numba)])
    @pytest.mark.parametrize("shape", [0.4, 1.0, 3.5])
    def test_log_moments(self, shape, use_numba):
        # a single state with no diffusion: log S_T is a sum of log-gamma draws
        rate = 4.0
        n = 40_000
        log_s, _, nj, _ = spot_batch(
            np.array([[0.0]]), 0, 1.0, path_seeds(31, n), drift=[0.0], sigma=[0.0],
            intensity=[1.0], jump_kind=JUMP_GAMMA, jump_param=[rate], jump_shape=[shape],
            theta_c=[0.0], theta_j=[0.0], lam_phys=[1.0], m_theta_j=[1.0], use_numba=use_numba,
        )
        x = log_s[nj == 1]
        mean = digamma(shape) - math.log(rate)
        var = polygamma(1, shape)
        assert abs(x.mean() - mean) < 4 * math.sqrt(var / x.size)
        assert x.var(ddof=1) == pytest.approx(var, rel=0.05)


class TestBackendFlag:
    @pytest.mark.parametrize("value,expected", [("1", "numpy"), ("", "numba" if _accel.HAS_NUMBA else "numpy")])
    def test_env_flag_selects_backend(self, value, expected):
        env = dict(os.environ, REGIMEFX_DISABLE_NUMBA=value)
        out = subprocess.run(
            [sys.executable, "-c", "from regimefx._accel import backend_name; print(backend_name())"],
            env=env, capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == expected
