import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wifiload.bianchi import P_FLOOR, ProtocolParams, busy_of_collision, collision_of_users, users_of_p
from wifiload.dcf import (
    DcfSimulator,
    LoadSchedule,
    MeasurementMode,
    StationState,
    SubframeOutcome,
    measure,
    run_schedule,
    step_subframe,
)

PARAMS = ProtocolParams()


def straight_line_mean_n_hat(n, windows, k_all, seed, params=PARAMS):
    """Plain re-implementation: one sub-frame per loop, no idle skipping."""
    rng = np.random.default_rng(seed)
    G, m = params.G, params.m
    stage = [0] * n
    counter = [int(rng.integers(G)) for _ in range(n)]
    total = 0.0
    for _ in range(windows):
        busy = 0
        for _ in range(k_all):
            tx = [i for i in range(n) if counter[i] == 0]
            if not tx:
                counter = [c - 1 for c in counter]
                continue
            busy += 1
            counter = [c - 1 if c > 0 else 0 for c in counter]
            for i in tx:
                stage[i] = min(stage[i] + 1, m) if len(tx) > 1 else 0
                counter[i] = int(rng.integers(G * 2 ** stage[i]))
        p = min(max(busy / k_all, P_FLOOR), 0.999)
        total += users_of_p(p, params)
    return total / windows


def test_rejects_empty():
    with pytest.raises(ValueError):
        DcfSimulator(0)
    with pytest.raises(ValueError):
        step_subframe([], np.random.default_rng(0), PARAMS)
    with pytest.raises(ValueError):
        LoadSchedule([(0, 10)])
    with pytest.raises(ValueError):
        LoadSchedule([(3, 0)])
    with pytest.raises(ValueError):
        LoadSchedule([])


def test_single_station_never_collides():
    sim = DcfSimulator(1, seed=3)
    for _ in range(20):
        m = sim.observe_window(100)
        assert m.k_coll == 0
    assert sim.collided_attempts == 0
    assert sim.attempts > 0


@pytest.mark.parametrize("freeze", [False, True])
def test_simulator_matches_reference_rule(freeze):
    n, seed = 7, 11
    sim = DcfSimulator(n, seed=seed, freeze_on_busy=freeze)
    rng = np.random.default_rng(seed)
    ref = [StationState(0, int(rng.integers(PARAMS.G))) for _ in range(n)]
    assert sim.stations == ref
    for _ in range(5000):
        a = sim.step_subframe()
        b = step_subframe(ref, rng, PARAMS, freeze_on_busy=freeze)
        assert a is b
        assert sim.stations == ref


def test_idle_skipping_matches_single_steps():
    a = DcfSimulator(4, seed=5)
    b = DcfSimulator(4, seed=5)
    counts = [0, 0, 0]
    for _ in range(3000):
        counts[list(SubframeOutcome).index(b.step_subframe())] += 1
    k_busy, k_coll = a.count_window(3000)
    assert (k_busy, k_coll) == (counts[1], counts[2])
    assert a.stations == b.stations
    assert a.subframes == b.subframes == 3000


def test_counter_bounds_fuzz():
    sim = DcfSimulator(12, seed=1)
    for _ in range(100_000):
        sim.step_subframe()
        for s in sim.stations:
            assert 0 <= s.stage <= PARAMS.m
            assert 0 <= s.counter < PARAMS.window(s.stage)


def test_measure_examples():
    m = measure(60, 15, 100, PARAMS)
    assert m.p_hat == 0.75
    assert m.k_idle == 25
    assert m.elapsed_us == pytest.approx(60 * 192.58 + 15 * 45.58 + 25 * 20.0)
    idle = measure(0, 0, 100, PARAMS)
    assert idle.p_hat == 0.0
    assert idle.n_hat == users_of_p(P_FLOOR, PARAMS)
    assert idle.n_hat == pytest.approx(1.0, abs=0.01)
    share = measure(60, 15, 100, PARAMS, MeasurementMode.COLLISION_SHARE)
    assert share.p_hat == pytest.approx(15 / 75)
    assert measure(0, 0, 100, PARAMS, "collision-share").p_hat == 0.0
    with pytest.raises(ValueError):
        measure(60, 50, 100, PARAMS)
    with pytest.raises(ValueError):
        measure(0, 0, 0, PARAMS)


def test_conditional_mode_inverts_busy_fraction():
    m = measure(40, 10, 100, PARAMS, MeasurementMode.CONDITIONAL)
    assert busy_of_collision(m.p_hat, PARAMS) == pytest.approx(0.5, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_window_accounting(n, k_all, seed):
    sim = DcfSimulator(n, seed=seed)
    for _ in range(3):
        m = sim.observe_window(k_all)
        assert m.k_busy + m.k_coll + m.k_idle == k_all
        assert m.k_idle >= 0
        assert 0.0 <= m.p_hat <= 1.0
        assert m.elapsed_us == pytest.approx(
            m.k_busy * PARAMS.t_success + m.k_coll * PARAMS.t_collision + m.k_idle * PARAMS.t_idle
        )


def test_schedule_deterministic():
    a = run_schedule(LoadSchedule([(5, 100)]), 100, seed=9)
    b = run_schedule(LoadSchedule([(5, 100)]), 100, seed=9)
    assert a == b
    c = run_schedule(LoadSchedule([(5, 100)]), 100, seed=10)
    assert a != c


def test_schedule_bookkeeping_and_monotone_busy():
    sched = LoadSchedule([(5, 2000), (8, 2000), (12, 2000)])
    assert sched.total_slots == 6000
    assert sched.boundaries() == [0, 2000, 4000]
    stream = run_schedule(sched, 20, seed=2)
    assert len(stream) == 6000
    n_true = np.array([m.n_true for m in stream])
    assert np.array_equal(n_true, sched.true_counts())
    assert np.flatnonzero(np.diff(n_true)).tolist() == [1999, 3999]
    means = [np.mean([m.p_hat for m in stream[i : i + 2000]]) for i in (0, 2000, 4000)]
    assert means[0] < means[1] < means[2]


def test_resize():
    sim = DcfSimulator(5, seed=0)
    sim.resize(9)
    assert sim.n == 9
    assert all(s.stage == 0 for s in sim.stations[5:])
    sim.resize(2)
    assert sim.n == 2
    with pytest.raises(ValueError):
        sim.resize(0)


def test_mean_n_hat_matches_straight_line_oracle():
    sim = DcfSimulator(25, seed=21)
    ours = np.mean([sim.observe_window(100).n_hat for _ in range(500)])
    oracle = straight_line_mean_n_hat(25, 500, 100, seed=22)
    assert abs(ours - oracle) <= 3


@pytest.mark.parametrize("freeze", [False, True])
def test_tagged_collision_rate_matches_model(freeze):
    sim = DcfSimulator(10, seed=4, freeze_on_busy=freeze)
    sim.count_window(200_000)
    target = collision_of_users(10, PARAMS)
    assert abs(sim.tagged_collision_rate - target) <= 0.015
    assert abs(sim.collision_rate - target) <= 0.015


def test_busy_fraction_follows_model_without_freeze():
    n = 20
    sim = DcfSimulator(n, seed=8)
    k_busy, k_coll = sim.count_window(200_000)
    expected = busy_of_collision(collision_of_users(n, PARAMS), PARAMS)
    assert (k_busy + k_coll) / 200_000 == pytest.approx(expected, abs=0.01)
