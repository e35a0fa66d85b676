import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from regimefx.errors import UnobservedRegimeError
from regimefx.markov_regime import (
    EURUSD_2000_2013,
    ChainPath,
    EstimatorWindows,
    OccupationTimes,
    RateMatrix,
    RegimeSet,
    TransitionMatrix,
    classify_trends,
    estimate_transition_matrix,
    occupation_mgf,
    occupation_times,
    read_matrix_csv,
    read_open_prices,
    sample_occupation_times,
    simulate_chain_path,
    transition_to_rate,
    write_counts_csv,
    write_matrix_csv,
)


def random_generator(rng, n, scale=2.0):
    pi = rng.uniform(0.0, scale, size=(n, n))
    np.fill_diagonal(pi, 0.0)
    np.fill_diagonal(pi, -pi.sum(axis=1))
    return RateMatrix(pi)


class TestTypes:
    def test_regime_set_validates(self):
        with pytest.raises(ValueError):
            RegimeSet([0.0], [0.0], [1.0], [0.0], [0.0])
        with pytest.raises(ValueError):
            RegimeSet([0.0], [0.1], [-1.0], [0.0], [0.0])
        with pytest.raises(ValueError):
            RegimeSet([0.0, 0.1], [0.1], [1.0], [0.0], [0.0])

    def test_regime_set_is_read_only(self, three_regimes):
        with pytest.raises(ValueError):
            three_regimes.mu[0] = 1.0

    def test_rate_matrix_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            RateMatrix([[-1.0, 1.1], [1.0, -1.0]])
        with pytest.raises(ValueError):
            RateMatrix([[1.0, -1.0], [1.0, -1.0]])

    def test_transition_matrix_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            TransitionMatrix([[0.5, 0.6], [0.5, 0.5]])
        with pytest.raises(ValueError):
            TransitionMatrix([[1.0, 0.0], [0.0, 1.0]], dt=0.0)

    def test_occupation_times_must_sum_to_horizon(self):
        with pytest.raises(ValueError):
            OccupationTimes([0.5, 0.4], 1.0)
        with pytest.raises(ValueError):
            OccupationTimes([-0.1, 1.1], 1.0)


class TestSimulateChainPath:
    def test_single_state_is_one_sojourn(self):
        path = simulate_chain_path(RateMatrix([[0.0]]), 0, 2.5, seed=1)
        assert path.states == (0,) and path.durations == (2.5,)

    def test_all_zero_rates_stay_put(self):
        path = simulate_chain_path(RateMatrix.frozen_chain(3), 2, 1.7, seed=3)
        assert list(path) == [(2, 1.7)]

    def test_negative_horizon_rejected(self, three_rate):
        with pytest.raises(ValueError):
            simulate_chain_path(three_rate, 0, -1.0, seed=0)
        with pytest.raises(ValueError):
            simulate_chain_path(three_rate, 3, 1.0, seed=0)

    def test_durations_positive_and_sum_to_horizon(self, three_rate):
        for seed in range(200):
            path = simulate_chain_path(three_rate, seed % 3, 1.3, seed)
            assert all(d > 0 for d in path.durations)
            assert math.isclose(sum(path.durations), 1.3, abs_tol=1e-12)
            assert all(a != b for a, b in zip(path.states, path.states[1:]))

    def test_deterministic_and_matches_batch(self, three_rate):
        occ, trans = sample_occupation_times(three_rate, 1, 2.0, 50, seed=77)
        for k in range(50):
            path = simulate_chain_path(three_rate, 1, 2.0, 77 + k)
            assert path == simulate_chain_path(three_rate, 1, 2.0, 77 + k)
            np.testing.assert_allclose(occupation_times(path).j, occ[k], rtol=0, atol=1e-13)
            assert path.n_transitions == trans[k]

    def test_shorter_horizon_is_prefix(self, three_rate):
        long = simulate_chain_path(three_rate, 0, 3.0, seed=5)
        short = simulate_chain_path(three_rate, 0, 1.0, seed=5)
        k = len(short.states) - 1
        assert short.states == long.states[: k + 1]
        assert short.durations[:k] == long.durations[:k]

    def test_two_state_switch_count_mean(self):
        # symmetric +-q chain: switches form a Poisson process with rate q
        q, t, n = 1.5, 2.0, 200_000
        _, trans = sample_occupation_times(RateMatrix([[-q, q], [q, -q]]), 0, t, n, seed=11)
        se = trans.std(ddof=1) / math.sqrt(n)
        assert abs(trans.mean() - q * t) <= 3 * se

    def test_next_state_frequencies(self):
        pi = RateMatrix([[-4.0, 1.0, 3.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        n = 40_000
        occ, trans = sample_occupation_times(pi, 0, 50.0, n, seed=2)
        # after the single jump the chain is absorbed; which state gets the time?
        went_to_1 = occ[:, 1] > 0
        p = went_to_1.mean()
        assert abs(p - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / n)
        assert np.all(trans == 1)


class TestOccupationTimes:
    def test_examples(self):
        j = occupation_times(ChainPath(2, (0, 1), (0.5, 0.5), 1.0))
        np.testing.assert_array_equal(j.j, [0.5, 0.5])
        j = occupation_times(ChainPath(3, (2,), (1.5,), 1.5))
        np.testing.assert_array_equal(j.j, [0.0, 0.0, 1.5])

    def test_symmetric_chain_mean(self):
        n = 1_000_000
        occ, _ = sample_occupation_times(RateMatrix([[-1.0, 1.0], [1.0, -1.0]]), 0, 1.0, n, seed=3)
        se = occ[:, 0].std(ddof=1) / math.sqrt(n)
        # started in state 0, so E[J0] = (1 + (1 - e^{-2})/2) / 2 exactly; the
        # symmetric-start value 0.5 is checked by averaging both starts
        occ1, _ = sample_occupation_times(RateMatrix([[-1.0, 1.0], [1.0, -1.0]]), 1, 1.0, n, seed=3 + n)
        both = 0.5 * (occ[:, 0].mean() + occ1[:, 0].mean())
        assert abs(both - 0.5) <= 3 * se
        exact = 0.5 + (1 - math.exp(-2.0)) / 4
        assert abs(occ[:, 0].mean() - exact) <= 3 * se

    def test_rows_sum_to_horizon(self, three_rate):
        occ, _ = sample_occupation_times(three_rate, 2, 1.7, 5000, seed=9)
        assert np.all(occ >= 0)
        np.testing.assert_allclose(occ.sum(axis=1), 1.7, rtol=0, atol=1e-12)


class TestOccupationMgf:
    def test_zero_u_is_one(self, fixture_rate):
        assert occupation_mgf(fixture_rate, [0.0, 0.0, 0.0], 2.0, [0.2, 0.3, 0.5]) == pytest.approx(1.0, abs=1e-12)

    def test_frozen_chain(self):
        v = occupation_mgf(RateMatrix.frozen_chain(3), [0.3, -0.7, 1.1], 1.5, [0.0, 1.0, 0.0])
        assert v == pytest.approx(math.exp(-0.7 * 1.5), rel=1e-14)

    def test_two_state_closed_form(self):
        # two-state chain with u on state 0 only: explicit 2x2 exponential
        a, b, u0, t = 1.2, 0.8, 0.3, 1.0
        pi = RateMatrix([[-a, a], [b, -b]])
        m = np.array([[-a + u0, a], [b, -b]])
        lam, vec = np.linalg.eig(m)
        e = (vec @ np.diag(np.exp(lam * t)) @ np.linalg.inv(vec)).real
        assert occupation_mgf(pi, [u0, 0.0], t, [1.0, 0.0]) == pytest.approx(e[0].sum(), rel=1e-12)

    def test_two_state_monte_carlo(self):
        pi = RateMatrix([[-1.0, 1.0], [2.0, -2.0]])
        u = np.array([0.3, -0.2])
        n = 1_000_000
        occ, _ = sample_occupation_times(pi, 0, 1.0, n, seed=101)
        vals = np.exp(occ @ u)
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(vals.mean() - occupation_mgf(pi, u, 1.0, [1.0, 0.0])) <= 3 * se

    def test_randomized_small_chains(self, rng):
        for trial in range(5):
            n = int(rng.integers(1, 5))
            pi = random_generator(rng, n)
            u = rng.uniform(-1, 1, n)
            t = float(rng.uniform(0.1, 2.0))
            i0 = int(rng.integers(n))
            occ, _ = sample_occupation_times(pi, i0, t, 100_000, seed=1000 * trial)
            vals = np.exp(occ @ u)
            se = vals.std(ddof=1) / math.sqrt(len(vals))
            p0 = np.eye(n)[i0]
            assert abs(vals.mean() - occupation_mgf(pi, u, t, p0)) <= 3 * se + 1e-14

    def test_rejects_bad_distribution(self, three_rate):
        with pytest.raises(ValueError):
            occupation_mgf(three_rate, [0, 0, 0], 1.0, [0.5, 0.5, 0.5])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.floats(0.0, 3.0), st.integers(0, 2**31))
    def test_zero_u_property(self, n, t, seed):
        pi = random_generator(np.random.default_rng(seed), n)
        p0 = np.full(n, 1.0 / n)
        assert occupation_mgf(pi, np.zeros(n), t, p0) == pytest.approx(1.0, abs=1e-10)


class TestTransitionToRate:
    def test_identity_gives_zero(self):
        np.testing.assert_array_equal(transition_to_rate(TransitionMatrix(np.eye(3), 0.1)).pi, np.zeros((3, 3)))

    def test_direct_arithmetic(self):
        r = transition_to_rate(TransitionMatrix([[0.9, 0.1], [0.2, 0.8]], dt=1.0))
        np.testing.assert_allclose(r.pi, [[-0.1, 0.1], [0.2, -0.2]], atol=1e-15)

    def test_fixture_round_trip(self, fixture_rate):
        dt = 1.0 / 252.0
        p = expm(fixture_rate.pi * dt)
        err = np.abs(p - EURUSD_2000_2013).max()
        bound = dt * np.linalg.norm(fixture_rate.pi, 2) ** 2 * dt
        assert err <= bound
        assert np.all(fixture_rate.pi - np.diag(np.diag(fixture_rate.pi)) >= 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.floats(1e-3, 10.0), st.integers(0, 2**31))
    def test_always_valid_generator(self, n, dt, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(n), size=n)
        r = transition_to_rate(TransitionMatrix(p, dt))
        assert np.all(np.abs(r.pi.sum(axis=1)) <= 1e-12 * max(1.0, np.abs(r.pi).max()))


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


def matlab_reference(x, cbu, cbd, dbu, dbd, cu, cd, du, dd):
    """Loop-for-loop transcription of the original eight-argument routine."""
    du, dd = du / 10000, dd / 10000
    size = len(x)
    prior = [0] * size  # 0 = sideway in the original encoding
    for i in range(max(cbu, cbd), size):
        s = 0
        if x[i] - x[i - cbu] >= du:
            s = 1
        if x[i - cbd] - x[i] >= dd:
            s = 2
        prior[i] = s
    counts = [[0] * 3 for _ in range(3)]
    order = {1: 0, 2: 1, 0: 2}
    for i in range(size - max(cu, cd)):
        if x[i + cu] - x[i] >= du:
            f = 1
        elif x[i] - x[i + cd] >= dd:
            f = 2
        else:
            f = 0
        counts[order[prior[i]]][order[f]] += 1
    return np.array(counts)


class TestEstimator:
    def test_constant_series(self):
        with pytest.raises(UnobservedRegimeError) as info:
            estimate_transition_matrix(np.full(200, 1.25))
        assert info.value.regimes == ("up", "down")
        counts = info.value.counts
        assert counts[2].tolist() == [0, 0, counts[2, 2]] and counts[2, 2] > 0

    def test_monotone_series_up_row(self):
        x = 1.0 + 0.002 * np.arange(300)
        prior, future = classify_trends(x, EstimatorWindows())
        assert np.all(future == 0)
        with pytest.raises(UnobservedRegimeError) as info:
            estimate_transition_matrix(x)
        c = info.value.counts
        assert c[0].tolist() == [c[0, 0], 0, 0] and c[0, 0] > 0

    def test_matches_reference_transcription(self, rng):
        for trial in range(20):
            params = (
                int(rng.integers(1, 15)), int(rng.integers(1, 15)), 5.0, 5.0,
                int(rng.integers(1, 15)), int(rng.integers(1, 15)),
                float(rng.uniform(0, 30)), float(rng.uniform(0, 30)),
            )
            x = 1.3 + np.cumsum(rng.normal(0, 0.002, 400))
            ref = matlab_reference(x, *params)
            try:
                _, counts = estimate_transition_matrix(x, EstimatorWindows(*params))
            except UnobservedRegimeError as exc:
                counts = exc.counts
            np.testing.assert_array_equal(counts, ref)

    def test_down_overrides_up(self):
        # bar 2 sees +20 pips against bar 1 and -20 pips against bar 0
        x = np.array([1.0040, 1.0000, 1.0020, 1.0, 1.0, 1.0])
        w = EstimatorWindows(1, 2, 0, 0, 1, 1, 10, 10)
        prior, _ = classify_trends(x, w)
        assert prior[2] == 1

    def test_rows_sum_to_one_and_counts(self, rng):
        x = 1.3 + np.cumsum(rng.normal(0, 0.003, 2000))
        p, counts = estimate_transition_matrix(x)
        assert np.all(p.p.sum(axis=1) == 1.0)
        np.testing.assert_allclose(p.p, counts / counts.sum(axis=1, keepdims=True), rtol=0, atol=1e-15)
        assert counts.dtype.kind == "i" and np.all(counts >= 0)
        assert counts.sum() == len(x) - 30

    def test_too_short(self):
        with pytest.raises(ValueError, match="too short"):
            estimate_transition_matrix(np.linspace(1, 2, 60))

    def test_keyword_thresholds(self, rng):
        x = 1.3 + np.cumsum(rng.normal(0, 0.003, 500))
        a = estimate_transition_matrix(x, candles_up=20, candles_down=20)[1]
        b = estimate_transition_matrix(x, EstimatorWindows(candles_up=20, candles_down=20))[1]
        np.testing.assert_array_equal(a, b)

    def test_window_validation(self):
        with pytest.raises(ValueError):
            EstimatorWindows(0, 30, 10, 10, 30, 30, 10, 10)
        with pytest.raises(ValueError):
            EstimatorWindows(delta_up=-1)


class TestFiles:
    def test_matrix_round_trip(self, tmp_path):
        write_matrix_csv(tmp_path / "m.csv", EURUSD_2000_2013)
        text = (tmp_path / "m.csv").read_text().splitlines()
        assert text[0] == "state,up,down,sideway"
        back = read_matrix_csv(tmp_path / "m.csv", dt=1 / 252)
        np.testing.assert_array_equal(back.p, EURUSD_2000_2013)

    def test_counts_header_echoes_parameters(self, tmp_path):
        w = EstimatorWindows(30, 30, 10, 10, 30, 30, 10, 10)
        write_counts_csv(tmp_path / "c.csv", np.ones((3, 3), dtype=int), w)
        first = (tmp_path / "c.csv").read_text().splitlines()[0]
        assert first == ("# candles_back_up=30 candles_back_down=30 delta_back_up=10 delta_back_down=10 "
                         "candles_up=30 candles_down=30 delta_up=10 delta_down=10")

    def test_read_open_prices_header(self, tmp_path):
        f = tmp_path / "p.txt"
        f.write_text("open\n1.1\n\n1.2\n1.3\n")
        np.testing.assert_array_equal(read_open_prices(f), [1.1, 1.2, 1.3])
        f.write_text("1.1\nabc\n")
        with pytest.raises(ValueError):
            read_open_prices(f)
