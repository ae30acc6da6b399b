"""One training step of a sigmoid feedforward network.

Forward layers are fully_connected products followed by a device ``tanh``
(``sigmoid(z) = (1 + tanh(z/2)) / 2``). Output and hidden deltas use the
usual squared-error rule; the hidden delta's back-projection is another
fully_connected. Weight changes ``eta * h^T delta`` come from the conv2D GEMM
and are combined with the momentum term by a device ``add``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidInputError
from ..runtime import Runtime
from ._common import as_matrix, run_task, runtime_scope

ETA = 0.3
MOMENTUM = 0.3


@dataclass
class Network:
    weights: list
    biases: list
    prev_weight_deltas: list = field(default_factory=list)
    prev_bias_deltas: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidInputError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if np.shape(b) != (1, np.shape(w)[1]):
                raise InvalidInputError(f"layer {i}: bias shape {np.shape(b)} does not match weights {np.shape(w)}")
            if i and np.shape(self.weights[i - 1])[1] != np.shape(w)[0]:
                raise InvalidInputError(f"layer {i} input size does not match layer {i - 1} output size")
        if not self.prev_weight_deltas:
            self.prev_weight_deltas = [np.zeros_like(w) for w in self.weights]
        if not self.prev_bias_deltas:
            self.prev_bias_deltas = [np.zeros_like(b) for b in self.biases]

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def copy(self) -> "Network":
        return Network(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [w.copy() for w in self.prev_weight_deltas],
            [b.copy() for b in self.prev_bias_deltas],
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([x.ravel() for x in self.weights + self.biases])


def init_network(sizes: Sequence[int], seed: int = 42) -> Network:
    if len(sizes) < 2 or min(sizes) < 1:
        raise InvalidInputError(f"bad layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)))
        bs.append(rng.uniform(-lim, lim, (1, fan_out)))
    return Network(ws, bs)


@dataclass
class StepResult:
    network: Network
    outputs: np.ndarray
    error: float


def _check(net: Network, samples, targets):
    x = as_matrix(samples, "samples")
    y = as_matrix(targets, "targets")
    if x.shape[1] != net.sizes[0]:
        raise InvalidInputError(f"samples have {x.shape[1]} features, network expects {net.sizes[0]}")
    if y.shape != (x.shape[0], net.sizes[-1]):
        raise InvalidInputError(f"targets shape {y.shape} does not match {(x.shape[0], net.sizes[-1])}")
    return x, y


def backprop(net: Network, samples, targets, rate: float = ETA, momentum: float = MOMENTUM, runtime: Optional[Runtime] = None) -> StepResult:
    """Run one forward/backward pass and return the updated network (a copy)."""
    x, y = _check(net, samples, targets)
    new = net.copy()
    with runtime_scope(runtime) as rt:

        def device(kind, *ins, shape):
            out = rt.empty(*shape)
            rt.invoke_operator(kind, None, [rt.buffer(v) for v in ins], out)
            return out.numpy()

        def task():
            acts = [x]
            for w, b in zip(new.weights, new.biases):
                z = device("fully_connected", acts[-1], w, shape=(x.shape[0], w.shape[1])) + b
                th = device("tanh", 0.5 * z, shape=z.shape)
                acts.append(0.5 * (1.0 + th))
            out = acts[-1]
            delta = out * (1.0 - out) * (y - out)
            for i in range(len(new.weights) - 1, -1, -1):
                w = new.weights[i]
                h = acts[i]
                back = None
                if i:
                    back = device("fully_connected", delta, np.ascontiguousarray(w.T), shape=(x.shape[0], w.shape[0]))
                grad = device("gemm", np.ascontiguousarray(h.T), rate * delta, shape=w.shape)
                dw = device("add", grad, momentum * new.prev_weight_deltas[i], shape=w.shape)
                db = rate * delta.sum(axis=0, keepdims=True) + momentum * new.prev_bias_deltas[i]
                new.weights[i] = w + dw
                new.biases[i] = new.biases[i] + db
                new.prev_weight_deltas[i] = dw
                new.prev_bias_deltas[i] = db
                if i:
                    delta = h * (1.0 - h) * back
            return StepResult(new, out, float(0.5 * np.sum((y - out) ** 2)))

        return run_task(rt, task)
