"""Online, unsupervised MLP filter for the station count.

At every decision slot the network maps ``[previous output, measured count]``
to a new estimate and takes one Adam step on

    L = alpha * (o - n_hat)**2 / 2 + beta * (o - prev)**2 / 2

There are no labels: the measurement term pulls the output toward the noisy
measurement, the prediction term toward the previous output.  A CUSUM on
``L`` decides which term dominates.  After a detected change the filter
uses ``(alpha+, beta-, lr+)`` and follows the measurements quickly.  While
stable it uses ``(alpha-, beta+, lr-)`` and holds its output.

Forward pass, back-propagation and Adam are written out in numpy.  All
parameters live in one flat vector, and each layer's weight matrix and bias
are views into it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .cusum import CusumState, update
from .kalman import EstimatorError

__all__ = [
    "AdamState",
    "MlpParams",
    "NnConfig",
    "NnState",
    "NnStep",
    "Regime",
    "forward",
    "gradient_check",
    "load_state",
    "loss",
    "loss_grad",
    "nn_init",
    "nn_run",
    "nn_step",
    "save_state",
]

ACTIVATIONS = ("tanh", "none")
FORMAT_TAG = "wifiload-nn"
FORMAT_VERSION = 1


class Regime(enum.Enum):
    STABLE = "stable"
    CHANGED = "changed"


class MlpParams:
    """Fully connected network with optional tanh on hidden layers.

    ``layer_sizes`` lists neuron counts from input to output; ``activations``
    has one tag per hidden layer.  The output layer is always linear.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        activations: Sequence[str],
        theta: Optional[np.ndarray] = None,
    ):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {layer_sizes!r}")
        acts = tuple(activations)
        if len(acts) != len(sizes) - 2:
            raise ValueError("need one activation per hidden layer")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.layer_sizes = sizes
        self.activations = acts + ("none",)
        shapes = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes.append((fan_out, fan_in))
        self.size = sum(o * i + o for o, i in shapes)
        if theta is None:
            theta = np.zeros(self.size)
        theta = np.ascontiguousarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {theta.shape}")
        self._shapes = shapes
        self.theta = theta
        self.weights, self.biases = self.views(theta)
        self._grad = np.zeros(self.size)
        self._grad_w, self._grad_b = self.views(self._grad)

    def views(self, flat: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Per-layer weight and bias views into a flat array laid out like ``theta``."""
        weights, biases = [], []
        offset = 0
        for fan_out, fan_in in self._shapes:
            k = fan_out * fan_in
            weights.append(flat[offset:offset + k].reshape(fan_out, fan_in))
            offset += k
            biases.append(flat[offset:offset + fan_out])
            offset += fan_out
        return weights, biases

    @classmethod
    def glorot(cls, layer_sizes, activations, rng: np.random.Generator) -> "MlpParams":
        """Uniform weights in ``±sqrt(6 / (fan_in + fan_out))``, zero biases."""
        net = cls(layer_sizes, activations)
        for w in net.weights:
            fan_out, fan_in = w.shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        return net

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, self.activations[:-1], self.theta.copy())

    def forward(self, x) -> Tuple[float, List[np.ndarray]]:
        """Network output and the per-layer activations needed by ``backward``."""
        a = np.asarray(x, dtype=float)
        cache = [a]
        for w, b, act in zip(self.weights, self.biases, self.activations):
            a = w @ a + b
            if act == "tanh":
                np.tanh(a, out=a)
            cache.append(a)
        return float(a[0]), cache

    def backward(self, cache: List[np.ndarray], dout: float) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. ``theta`` given ``dL/d output``.

        The returned array is an internal buffer, overwritten on the next call.
        """
        delta = np.array([dout])
        for i in range(len(self.weights) - 1, -1, -1):
            if self.activations[i] == "tanh":
                out = cache[i + 1]
                delta = delta * (1.0 - out * out)
            np.outer(delta, cache[i], out=self._grad_w[i])
            self._grad_b[i][...] = delta
            if i:
                delta = self.weights[i].T @ delta
        return self._grad


def forward(params: MlpParams, x) -> float:
    out, _ = params.forward(x)
    if not math.isfinite(out):
        raise EstimatorError(f"non-finite network output for input {list(x)!r}")
    return out


def loss(o: float, n_hat: float, prev: float, alpha: float, beta: float) -> float:
    return 0.5 * alpha * (o - n_hat) ** 2 + 0.5 * beta * (o - prev) ** 2


def loss_grad(o: float, n_hat: float, prev: float, alpha: float, beta: float) -> float:
    """``dL/do`` for :func:`loss`."""
    return alpha * (o - n_hat) + beta * (o - prev)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, beta1, beta2, eps)

    def apply(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> None:
        """One bias-corrected Adam update of ``theta`` in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * (grad * grad)
        m_hat = self.m / (1.0 - b1 ** self.t)
        v_hat = self.v / (1.0 - b2 ** self.t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class NnConfig:
    alpha_plus: float = 0.99
    alpha_minus: float = 0.01
    beta_plus: float = 0.99
    beta_minus: float = 0.01
    lr_plus: float = 0.1
    lr_minus: float = 0.01
    e_d: float = 20.0
    q: float = 0.1
    init_seed: int = 0
    warmup: int = 50
    input_scale: float = 1.0
    hidden: Tuple[int, ...] = (32, 16, 8, 4)
    activations: Tuple[str, ...] = ("tanh", "tanh", "tanh", "none")
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("alpha_plus", "alpha_minus", "beta_plus", "beta_minus"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value!r}")
        if not (self.lr_plus > 0 and self.lr_minus > 0):
            raise ValueError("learning rates must be > 0")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if not self.input_scale > 0:
            raise ValueError("input_scale must be > 0")
        if len(self.activations) != len(self.hidden):
            raise ValueError("need one activation per hidden layer")

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        return (2,) + tuple(self.hidden) + (1,)

    def weights_for(self, regime: Regime) -> Tuple[float, float, float]:
        """``(alpha, beta, lr)`` for a regime."""
        if regime is Regime.CHANGED:
            return self.alpha_plus, self.beta_minus, self.lr_plus
        return self.alpha_minus, self.beta_plus, self.lr_minus


@dataclass
class NnState:
    params: MlpParams
    adam: AdamState
    cusum: CusumState
    prev_output: float = 0.0
    regime: Regime = Regime.CHANGED
    slots: int = 0


class NnStep(NamedTuple):
    estimate: float
    output: float
    loss: float
    train_loss: float
    g: float
    triggered: bool
    regime: Regime
    alpha: float
    beta: float
    lr: float


def nn_init(cfg: NnConfig) -> NnState:
    rng = np.random.default_rng(cfg.init_seed)
    params = MlpParams.glorot(cfg.layer_sizes, cfg.activations, rng)
    return NnState(
        params=params,
        adam=AdamState.zeros(params.size, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
        cusum=CusumState(q=cfg.q, e=cfg.e_d),
        regime=Regime.CHANGED,
    )


def nn_step(state: NnState, n_hat: float, cfg: NnConfig) -> NnStep:
    """Process one measurement; ``state`` is updated in place.

    Order per slot: forward pass, loss under the current regime, CUSUM
    update on that loss, regime switch, loss under the new regime, one
    Adam step.
    """
    if not math.isfinite(n_hat):
        raise EstimatorError(f"non-finite measurement {n_hat!r}")
    scale = cfg.input_scale
    prev = state.prev_output
    o_scaled, cache = state.params.forward(np.array([prev / scale, n_hat / scale]))
    o = o_scaled * scale
    if not math.isfinite(o):
        raise EstimatorError(f"non-finite network output at prev={prev!r}, n_hat={n_hat!r}")

    alpha, beta, _ = cfg.weights_for(state.regime)
    detect_loss = loss(o, n_hat, prev, alpha, beta)
    state.cusum = update(state.cusum, detect_loss)
    if state.cusum.triggered or state.slots < cfg.warmup:
        state.regime = Regime.CHANGED
    else:
        state.regime = Regime.STABLE
    alpha, beta, lr = cfg.weights_for(state.regime)
    train_loss = loss(o, n_hat, prev, alpha, beta)

    grad = state.params.backward(cache, loss_grad(o, n_hat, prev, alpha, beta) * scale)
    if not np.all(np.isfinite(grad)):
        raise EstimatorError("non-finite gradient")
    state.adam.apply(state.params.theta, grad, lr)
    if not np.all(np.isfinite(state.params.theta)):
        raise EstimatorError("non-finite parameters after update")

    state.prev_output = o
    state.slots += 1
    return NnStep(
        estimate=max(o, 1.0),
        output=o,
        loss=detect_loss,
        train_loss=train_loss,
        g=state.cusum.g,
        triggered=state.cusum.triggered,
        regime=state.regime,
        alpha=alpha,
        beta=beta,
        lr=lr,
    )


def nn_run(n_hats, cfg: NnConfig, state: Optional[NnState] = None) -> List[NnStep]:
    """Run :func:`nn_step` over a sequence of measured counts."""
    state = state if state is not None else nn_init(cfg)
    steps = []
    for t, item in enumerate(n_hats):
        try:
            steps.append(nn_step(state, float(getattr(item, "n_hat", item)), cfg))
        except EstimatorError as exc:
            raise EstimatorError(str(exc), slot=t) from exc
    return steps


def gradient_check(
    params: MlpParams,
    x: Sequence[float],
    n_hat: float,
    prev: float,
    alpha: float,
    beta: float,
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Largest relative gap between back-propagated and finite-difference gradients.

    Each parameter is compared with ``|a - b| / max(|a|, |b|, floor)``.  The
    central differences run through a separate forward pass in
    ``np.longdouble``: with user-scale inputs the loss reaches the hundreds
    while saturated units have gradients near 1e-8, and double precision
    differences of the loss cannot resolve those.  On platforms where
    ``longdouble`` is plain double the check loses that headroom.
    """
    o, cache = params.forward(x)
    analytic = params.backward(cache, loss_grad(o, n_hat, prev, alpha, beta)).copy()

    theta = params.theta.astype(np.longdouble)
    weights, biases = params.views(theta)
    x_ld = np.asarray(x, dtype=np.longdouble)
    acts = params.activations

    def objective():
        a = x_ld
        for w, b, act in zip(weights, biases, acts):
            a = w @ a + b
            if act == "tanh":
                a = np.tanh(a)
        return loss(a[0], n_hat, prev, alpha, beta)

    numeric = np.empty(theta.size)
    for i in range(theta.size):
        keep = theta[i]
        theta[i] = keep + eps
        up = objective()
        theta[i] = keep - eps
        down = objective()
        theta[i] = keep
        numeric[i] = float((up - down) / (2 * eps))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


# Text format, one item per line:
#   wifiload-nn <version>
#   sizes <int> ...
#   activations <tag> ...            (hidden layers only)
#   prev_output <float>
#   regime <stable|changed>
#   slots <int>
#   cusum <g> <q> <e> <triggered 0|1>
#   adam <t> <beta1> <beta2> <eps>
#   theta <count>  followed by <count> floats, one per line
#   adam_m <count> ...
#   adam_v <count> ...
def save_state(state: NnState, path: Union[str, Path]) -> Path:
    path = Path(path)
    p = state.params
    lines = [
        f"{FORMAT_TAG} {FORMAT_VERSION}",
        "sizes " + " ".join(str(s) for s in p.layer_sizes),
        "activations " + " ".join(p.activations[:-1]),
        f"prev_output {state.prev_output!r}",
        f"regime {state.regime.value}",
        f"slots {state.slots}",
        f"cusum {state.cusum.g!r} {state.cusum.q!r} {state.cusum.e!r} {int(state.cusum.triggered)}",
        f"adam {state.adam.t} {state.adam.beta1!r} {state.adam.beta2!r} {state.adam.eps!r}",
    ]
    for name, arr in (("theta", p.theta), ("adam_m", state.adam.m), ("adam_v", state.adam.v)):
        lines.append(f"{name} {arr.size}")
        lines.extend(repr(float(v)) for v in arr)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_state(path: Union[str, Path]) -> NnState:
    lines = Path(path).read_text().splitlines()
    it = iter(lines)

    def field(name):
        key, *rest = next(it).split()
        if key != name:
            raise ValueError(f"{path}: expected {name!r}, found {key!r}")
        return rest

    tag, *version = next(it).split()
    if tag != FORMAT_TAG or version != [str(FORMAT_VERSION)]:
        raise ValueError(f"{path}: not a {FORMAT_TAG} v{FORMAT_VERSION} file")
    sizes = [int(s) for s in field("sizes")]
    acts = field("activations")
    prev = float(field("prev_output")[0])
    regime = Regime(field("regime")[0])
    slots = int(field("slots")[0])
    g, q, e, trig = field("cusum")
    t, b1, b2, eps = field("adam")
    arrays = []
    for name in ("theta", "adam_m", "adam_v"):
        count = int(field(name)[0])
        arrays.append(np.array([float(next(it)) for _ in range(count)]))
    params = MlpParams(sizes, acts, arrays[0])
    adam = AdamState(arrays[1], arrays[2], int(t), float(b1), float(b2), float(eps))
    cusum = CusumState(q=float(q), e=float(e), g=float(g), triggered=trig == "1")
    return NnState(params, adam, cusum, prev, regime, slots)
