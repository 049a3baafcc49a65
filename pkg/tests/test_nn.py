import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wifiload.dcf import DcfSimulator, LoadSchedule, MeasurementMode, run_schedule
from wifiload.kalman import EstimatorError
from wifiload.nn import (
    AdamState,
    MlpParams,
    NnConfig,
    Regime,
    forward,
    gradient_check,
    load_state,
    loss,
    loss_grad,
    nn_init,
    nn_run,
    nn_step,
    save_state,
)

CFG = NnConfig()
CHANGED = (CFG.alpha_plus, CFG.beta_minus, CFG.lr_plus)
STABLE = (CFG.alpha_minus, CFG.beta_plus, CFG.lr_minus)


def simulated_counts(n, slots, seed, k_all=100):
    sim = DcfSimulator(n, seed=seed)
    return [sim.observe_window(k_all, MeasurementMode.CONDITIONAL).n_hat for _ in range(slots)]


def test_default_architecture():
    state = nn_init(CFG)
    assert state.params.layer_sizes == (2, 32, 16, 8, 4, 1)
    assert state.params.activations == ("tanh", "tanh", "tanh", "none", "none")
    assert state.params.size == sum(o * i + o for i, o in zip((2, 32, 16, 8, 4), (32, 16, 8, 4, 1)))
    assert state.prev_output == 0.0
    assert state.regime is Regime.CHANGED
    assert state.cusum.g == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        NnConfig(alpha_plus=0.0)
    with pytest.raises(ValueError):
        NnConfig(beta_minus=1.5)
    with pytest.raises(ValueError):
        NnConfig(lr_minus=0.0)
    with pytest.raises(ValueError):
        NnConfig(hidden=(4, 4), activations=("tanh",))
    with pytest.raises(ValueError):
        MlpParams((2, 3, 1), ("relu",))


def test_zero_weights_give_zero():
    net = MlpParams(CFG.layer_sizes, CFG.activations)
    for x in ([0.0, 0.0], [3.0, -7.5], [1e3, 25.0]):
        assert forward(net, x) == 0.0


def test_toy_network_by_hand():
    # 2 -> 1 (tanh) -> 1 (linear)
    net = MlpParams((2, 1, 1), ("tanh",))
    net.weights[0][...] = [[0.3, -0.2]]
    net.biases[0][...] = [0.1]
    net.weights[1][...] = [[1.5]]
    net.biases[1][...] = [-0.4]
    x = (2.0, 1.0)
    expected = 1.5 * math.tanh(0.3 * 2.0 - 0.2 * 1.0 + 0.1) - 0.4
    assert forward(net, x) == pytest.approx(expected, abs=1e-12)


def test_linear_layer_by_hand():
    # 2 -> 2 (tanh) -> 1 (none) -> 1
    net = MlpParams((2, 2, 1, 1), ("tanh", "none"))
    net.weights[0][...] = [[1.0, 0.0], [0.5, 0.5]]
    net.biases[0][...] = [0.0, -1.0]
    net.weights[1][...] = [[2.0, -1.0]]
    net.biases[1][...] = [0.25]
    net.weights[2][...] = [[3.0]]
    net.biases[2][...] = [1.0]
    x = (0.2, 0.6)
    hidden = (math.tanh(0.2), math.tanh(0.5 * 0.2 + 0.5 * 0.6 - 1.0))
    expected = 3.0 * (2.0 * hidden[0] - hidden[1] + 0.25) + 1.0
    assert forward(net, x) == pytest.approx(expected, abs=1e-12)


def test_forward_deterministic():
    net = nn_init(CFG).params
    assert forward(net, [4.0, 5.0]) == forward(net, [4.0, 5.0])


def test_forward_rejects_non_finite():
    net = nn_init(CFG).params
    net.biases[-1][...] = np.inf
    with pytest.raises(EstimatorError):
        forward(net, [1.0, 1.0])


def test_loss_examples():
    assert loss(3.0, 3.0, 3.0, 0.5, 0.5) == 0.0
    assert loss(5.0, 7.0, 5.0, 0.99, 0.01) == pytest.approx(1.98, abs=1e-12)


@pytest.mark.parametrize("o, n_hat, prev, alpha, beta", [
    (5.0, 7.0, 5.0, 0.99, 0.01),
    (-1.0, 3.0, 2.5, 0.01, 0.99),
    (30.2, 28.0, 31.0, 0.99, 0.01),
])
def test_loss_gradient_vs_central_difference(o, n_hat, prev, alpha, beta):
    h = 1e-5
    fd = (loss(o + h, n_hat, prev, alpha, beta) - loss(o - h, n_hat, prev, alpha, beta)) / (2 * h)
    assert loss_grad(o, n_hat, prev, alpha, beta) == pytest.approx(fd, abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-100, 100), st.floats(-100, 100), st.floats(-100, 100),
    st.floats(1e-3, 1.0), st.floats(1e-3, 1.0),
)
def test_loss_non_negative(o, n_hat, prev, alpha, beta):
    assert loss(o, n_hat, prev, alpha, beta) >= 0.0
    assert loss(o, o, o, alpha, beta) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check(seed):
    rng = np.random.default_rng(seed)
    net = MlpParams.glorot(CFG.layer_sizes, CFG.activations, rng)
    x = rng.uniform(-3, 3, size=2)
    err = gradient_check(net, x, n_hat=rng.uniform(0, 5), prev=x[0], alpha=0.99, beta=0.01)
    assert err < 1e-4


def test_gradient_check_catches_a_wrong_gradient():
    rng = np.random.default_rng(1)
    net = MlpParams.glorot((2, 3, 1), ("tanh",), rng)

    class Broken(MlpParams):
        def backward(self, cache, dout):
            return super().backward(cache, 2.0 * dout)

    broken = Broken((2, 3, 1), ("tanh",), net.theta.copy())
    assert gradient_check(broken, [0.5, -0.2], 1.0, 0.0, 0.99, 0.01) > 0.1


def test_adam_first_step():
    theta = np.array([1.0, -2.0, 0.5])
    grad = np.array([0.3, -4.0, 0.0])
    adam = AdamState.zeros(3)
    adam.apply(theta, grad, lr=0.1)
    # bias correction makes the first step lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0, 0.5]) - 0.1 * grad / (np.abs(grad) + 1e-8)
    np.testing.assert_allclose(theta, expected, rtol=1e-12, atol=1e-15)
    assert adam.t == 1


def test_adam_two_steps_by_hand():
    theta = np.array([0.0])
    adam = AdamState.zeros(1)
    adam.apply(theta, np.array([1.0]), lr=0.01)
    adam.apply(theta, np.array([3.0]), lr=0.01)
    m = 0.9 * 0.1 + 0.1 * 3.0
    v = 0.999 * 0.001 + 0.001 * 9.0
    step1 = 0.01 * 1.0 / (1.0 + 1e-8)
    step2 = 0.01 * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert theta[0] == pytest.approx(-step1 - step2, rel=1e-12)


def test_init_determinism_and_bounds():
    a = nn_init(CFG).params
    b = nn_init(CFG).params
    c = nn_init(dataclasses.replace(CFG, init_seed=1)).params
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)
    for w, bias in zip(a.weights, a.biases):
        fan_out, fan_in = w.shape
        assert np.all(np.abs(w) <= math.sqrt(6 / (fan_in + fan_out)))
        assert np.all(bias == 0.0)


def test_exact_network_stays_put():
    cfg = dataclasses.replace(CFG, warmup=0)
    state = nn_init(cfg)
    state.params.theta[:] = 0.0
    state.params.biases[-1][...] = 7.0
    state.prev_output = 7.0
    state.cusum = dataclasses.replace(state.cusum, g=0.5)
    before = state.params.theta.copy()
    step = nn_step(state, 7.0, cfg)
    assert step.loss == 0.0 and step.train_loss == 0.0
    assert step.g == pytest.approx(0.4)
    assert step.regime is Regime.STABLE
    assert np.array_equal(state.params.theta, before)


def test_warmup_forces_changed_regime():
    steps = nn_run([5.0] * 200, CFG)
    assert all(s.regime is Regime.CHANGED for s in steps[: CFG.warmup])
    assert all(s.lr == CFG.lr_plus for s in steps[: CFG.warmup])
    # a constant input is learnt during warm-up, so the detector stays quiet
    assert not any(s.triggered for s in steps)
    assert all(s.regime is Regime.STABLE for s in steps[CFG.warmup:])


def test_regime_dichotomy():
    steps = nn_run(simulated_counts(12, 600, seed=2), CFG)
    for t, s in enumerate(steps):
        triple = (s.alpha, s.beta, s.lr)
        assert triple in (CHANGED, STABLE)
        if s.regime is Regime.CHANGED:
            assert triple == CHANGED
            assert s.triggered or t < CFG.warmup
        else:
            assert triple == STABLE
            assert not s.triggered


def test_stable_regime_moves_less():
    stable = dataclasses.replace(CFG, warmup=0, e_d=1e12)
    changed = dataclasses.replace(CFG, warmup=10**9)
    counts = [10.0] * 300
    a = np.array([s.output for s in nn_run(counts, stable)])
    b = np.array([s.output for s in nn_run(counts, changed)])
    assert all(s.regime is Regime.STABLE for s in nn_run(counts[:5], stable))
    assert np.mean(np.abs(np.diff(a))) < np.mean(np.abs(np.diff(b)))


def test_estimate_is_clamped_output_is_not():
    state = nn_init(CFG)
    state.params.theta[:] = 0.0
    state.params.biases[-1][...] = -3.0
    step = nn_step(state, 2.0, CFG)
    assert step.output == -3.0
    assert step.estimate == 1.0
    assert state.prev_output == -3.0


def test_input_scale_keeps_loss_in_user_units():
    cfg = dataclasses.replace(CFG, input_scale=10.0)
    state = nn_init(cfg)
    state.params.theta[:] = 0.0
    state.params.biases[-1][...] = 0.5
    step = nn_step(state, 3.0, cfg)
    assert step.output == 5.0
    assert step.loss == pytest.approx(loss(5.0, 3.0, 0.0, CFG.alpha_plus, CFG.beta_minus))


def test_run_errors_carry_slot():
    with pytest.raises(EstimatorError) as info:
        nn_run([3.0, 4.0, float("inf")], CFG)
    assert info.value.slot == 2


def test_run_deterministic():
    counts = simulated_counts(8, 200, seed=5)
    a = [s.output for s in nn_run(counts, CFG)]
    b = [s.output for s in nn_run(counts, CFG)]
    assert a == b


def test_save_load_round_trip(tmp_path):
    counts = simulated_counts(9, 60, seed=3)
    state = nn_init(CFG)
    nn_run(counts[:30], CFG, state)
    path = save_state(state, tmp_path / "net.txt")
    assert path.read_text().splitlines()[0] == "wifiload-nn 1"
    loaded = load_state(path)
    assert np.array_equal(loaded.params.theta, state.params.theta)
    assert np.array_equal(loaded.adam.m, state.adam.m)
    assert np.array_equal(loaded.adam.v, state.adam.v)
    assert loaded.adam.t == state.adam.t
    assert loaded.cusum == state.cusum
    assert (loaded.prev_output, loaded.regime, loaded.slots) == (state.prev_output, state.regime, state.slots)
    a = [s.output for s in nn_run(counts[30:], CFG, state)]
    b = [s.output for s in nn_run(counts[30:], CFG, loaded)]
    assert a == b


def test_load_rejects_other_formats(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("something-else 1\n")
    with pytest.raises(ValueError):
        load_state(bad)
    bad.write_text("wifiload-nn 2\n")
    with pytest.raises(ValueError):
        load_state(bad)


@pytest.mark.parametrize("seed", [0, 1])
def test_finite_on_long_stream(seed):
    counts = simulated_counts(30, 10_000, seed=seed, k_all=50)
    state = nn_init(dataclasses.replace(CFG, init_seed=seed))
    steps = nn_run(counts, CFG, state)
    assert all(math.isfinite(s.output) and math.isfinite(s.loss) for s in steps)
    assert np.all(np.isfinite(state.params.theta))
    assert np.all(np.isfinite(state.adam.m)) and np.all(np.isfinite(state.adam.v))


def test_init_seeds_agree_after_warmup():
    counts = simulated_counts(6, 1500, seed=0)
    a = np.array([s.estimate for s in nn_run(counts, dataclasses.replace(CFG, init_seed=1))])
    b = np.array([s.estimate for s in nn_run(counts, dataclasses.replace(CFG, init_seed=2))])
    assert np.max(np.abs(a - b)[CFG.warmup:]) <= 2


def test_tracks_step_from_25_to_30():
    stream = run_schedule(LoadSchedule([(25, 2000), (30, 2000)]), 100, seed=0, mode=MeasurementMode.CONDITIONAL)
    est = np.array([s.estimate for s in nn_run([m.n_hat for m in stream], CFG)])
    after = np.abs(est[2000:] - 30) <= 2
    hits = np.flatnonzero(after)
    assert hits.size and hits[0] <= 600
    assert after[hits[0]:].mean() >= 0.8
