import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import j1

from rmtqubit.dynamics import AlphaTrace, ModelParams, realization_traces
from rmtqubit.errors import ConfigError
from rmtqubit.markovianity import (
    detect_transition,
    nm_from_stack,
    nm_measure,
    nm_of_series,
    nm_sweep,
)
from rmtqubit.spectral_oracles import alpha0_largeN

from properties import check_nm_additivity, check_nm_refinement

finite = st.floats(-1, 1, allow_nan=False)


def test_examples():
    t = np.arange(4.0)
    res = nm_measure((t, [1, 0.2, 0.5, 0.3]), (0, 3))
    assert res.measure == pytest.approx(0.6, abs=1e-15)
    assert res.rise_segments == [(1.0, 2.0, pytest.approx(0.3))]
    assert nm_measure((t, [1, 0.8, 0.5, 0.1]), (0, 3)).measure == 0.0


def _extrema_oracle(f, t):
    # sum of 2 * (local max - preceding local min), scanning sign changes of f'
    x = f(t)
    total, low = 0.0, x[0]
    rising = False
    for k in range(1, len(x)):
        if x[k] > x[k - 1] and not rising:
            low, rising = x[k - 1], True
        elif x[k] < x[k - 1] and rising:
            total += 2 * (x[k - 1] - low)
            rising = False
    if rising:
        total += 2 * (x[-1] - low)
    return total


def test_bessel_square_against_extrema_oracle():
    t = np.linspace(0, 10, 10001)
    f = lambda u: np.where(u == 0, 1.0, (j1(2 * np.where(u == 0, 1, u)) / np.where(u == 0, 1, u)) ** 2)
    assert abs(nm_measure((t, alpha0_largeN(t)), (0, 10)).measure - _extrema_oracle(f, t)) < 1e-6


def test_window_handling():
    t = np.linspace(0, 4, 41)
    a = np.cos(3 * t)
    full = nm_measure((t, a), (0, 4)).measure
    assert full == pytest.approx(nm_of_series(a))
    with pytest.raises(ConfigError):
        nm_measure((t, a), (0, 5))
    with pytest.raises(ConfigError):
        nm_measure((t, a), (2, 1))
    with pytest.raises(ConfigError):
        nm_measure((t, a), (1.01, 1.02))
    tr = AlphaTrace(t, a)
    assert nm_measure(tr, (0, 4)).measure == full


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=3, max_size=60), st.data())
def test_additivity_property(values, data):
    split = data.draw(st.integers(1, len(values) - 2))
    check_nm_additivity(np.array(values), split)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=2, max_size=40), st.integers(2, 9))
def test_refinement_property(values, factor):
    check_nm_refinement(np.array(values), factor)


@settings(max_examples=50, deadline=None)
@given(st.lists(finite, min_size=2, max_size=60))
def test_measure_matches_segments(values):
    t = np.arange(len(values), dtype=float)
    res = nm_measure((t, values), (0, t[-1]))
    assert res.measure >= 0
    assert res.measure == pytest.approx(2 * sum(d for _, _, d in res.rise_segments), abs=1e-12)


def test_stack_stderr_and_noise_floor():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 10, 201)
    clean = np.exp(-t)
    samples = clean + 0.05 * rng.standard_normal((400, t.size))
    res = nm_from_stack(t, samples, (0, 10), np.random.default_rng(1))
    # pure noise: the measure is at the noise floor and flagged as such
    assert res.noise_floor > 0 and res.stderr > 0
    assert abs(res.measure - res.noise_floor) < 5 * res.stderr
    bumpy = clean + 0.2 * np.sin(3 * t) ** 2
    strong = nm_from_stack(t, bumpy + 0.05 * rng.standard_normal((400, t.size)), (0, 10), np.random.default_rng(1))
    assert strong.consistent_with_zero is False
    assert nm_from_stack(t, samples[:1], (0, 10)).stderr is None


def test_noise_floor_grows_with_amplitude():
    t = np.linspace(0, 10, 101)
    floors = []
    for sigma in (0.01, 0.04):
        samples = sigma * np.random.default_rng(2).standard_normal((100, t.size))
        floors.append(nm_from_stack(t, samples, (0, 10), np.random.default_rng(3)).noise_floor)
    assert floors[1] == pytest.approx(4 * floors[0], rel=1e-9)


def test_detect_transition():
    s = np.array([0.0, 0.1, 0.2, 0.3])
    assert detect_transition(s, [0.05, 0.03, 0.005, 0.001]) == pytest.approx(0.1 + 0.1 * 0.02 / 0.025)
    assert detect_transition(s, [0.0, 0.0, 0.0, 0.0]) == 0.0
    assert detect_transition(s, [0.05, 0.0, 0.0, 0.02]) is None
    # a late dip that comes back up does not count
    assert detect_transition(s, [0.05, 0.0, 0.02, 0.0]) == pytest.approx(0.2 + 0.1 * 0.01 / 0.02)
    with pytest.raises(ConfigError):
        detect_transition([0.2, 0.1], [0.1, 0.0])


def test_sweep_deterministic_and_streamed():
    res = nm_sweep([0.1, 0.3], 4, R=6, master_seed=5, window=(0, 2), dt=0.1, workers=1)
    again = nm_sweep([0.1, 0.3], 4, R=6, master_seed=5, window=(0, 2), dt=0.1, workers=2)
    assert np.array_equal(res.measures, again.measures)
    assert np.array_equal(res.noise_floors, again.noise_floors)
    times = np.arange(0, 2.05, 0.1)
    stack = realization_traces(ModelParams(4, 0.3), times, 5, range(2**32, 2**32 + 6))
    assert nm_from_stack(times, stack[:, 0], (0, 2)).measure == res.results[1].measure
    with pytest.raises(ConfigError):
        nm_sweep([], 4)
