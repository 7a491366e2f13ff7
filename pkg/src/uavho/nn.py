"""Small fully connected network with exact backprop, in float64 numpy."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, InvalidArgument, TrainingDivergence

FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "identity")


class Mlp:
    """Affine layers with ReLU (or identity) hidden activations.

    Weights are stored as (out, in) matrices so a batch ``X`` of row vectors
    maps through ``X @ W.T + b``. The output layer is always identity.
    """

    def __init__(self, layer_dims: Sequence[int], weights=None, biases=None,
                 activations: Optional[Sequence[str]] = None, seed: int = 0):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise InvalidArgument(f"bad layer dims {dims}")
        n_layers = len(dims) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        activations = list(activations)
        if len(activations) != n_layers or any(a not in ACTIVATIONS for a in activations):
            raise InvalidArgument(f"bad activations {activations}")
        if activations[-1] != "identity":
            raise InvalidArgument("output layer must be identity")
        self.layer_dims = dims
        self.activations = activations
        if weights is None:
            rng = np.random.default_rng(seed)
            weights, biases = [], []
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
                biases.append(np.zeros(fan_out))
        elif biases is None:
            biases = [np.zeros(d) for d in dims[1:]]
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise InvalidArgument(f"layer {i}: inconsistent parameter shapes")
        self.version = 0

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.layer_dims, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activations)

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)[0]

    # serialization

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "layer_dims": self.layer_dims,
            "activations": self.activations,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("format_version") != FORMAT_VERSION:
            raise InvalidArgument(f"unsupported model format {d.get('format_version')!r}")
        dims = d["layer_dims"]
        weights = [np.array(w, dtype=np.float64).reshape(dims[i + 1], dims[i])
                   for i, w in enumerate(d["weights"])]
        return cls(dims, weights, d["biases"], d["activations"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ForwardTrace:
    inputs: np.ndarray  # (n, in), always 2D
    pre: list  # pre-activations per layer
    post: list  # activations per layer (post[-1] is the output)
    model_id: int
    model_version: int
    squeeze: bool


@dataclass
class Gradients:
    weights: list
    biases: list
    inputs: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def _act(kind, z):
    return np.maximum(z, 0.0) if kind == "relu" else z


def forward(model: Mlp, x) -> tuple[np.ndarray, ForwardTrace]:
    """Forward a single vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = inputs = x[None, :] if squeeze else x
    if a.ndim != 2 or a.shape[1] != model.n_inputs:
        raise InvalidArgument(f"expected input width {model.n_inputs}, got shape {x.shape}")
    pre, post = [], []
    for w, b, kind in zip(model.weights, model.biases, model.activations):
        z = a @ w.T + b
        a = _act(kind, z)
        pre.append(z)
        post.append(a)
    trace = ForwardTrace(inputs, pre, post, id(model), model.version, squeeze)
    out = a[0] if squeeze else a
    return out, trace


def backward(model: Mlp, trace: ForwardTrace, output_gradient) -> Gradients:
    """Gradients of the scalar loss whose d(loss)/d(output) is given.

    For a batch trace the parameter gradients are summed over rows.
    """
    if trace.model_id != id(model) or trace.model_version != model.version:
        raise ContractViolation("trace was not produced by this model state")
    g = np.asarray(output_gradient, dtype=np.float64)
    if trace.squeeze:
        g = g[None, :]
    if g.shape != trace.post[-1].shape:
        raise InvalidArgument("output gradient shape mismatch")
    n_layers = len(model.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if model.activations[i] == "relu":
            g = g * (trace.pre[i] > 0.0)
        a_in = trace.post[i - 1] if i > 0 else trace.inputs
        gw[i] = g.T @ a_in
        gb[i] = g.sum(axis=0)
        g = g @ model.weights[i]
    gin = g[0] if trace.squeeze else g
    return Gradients(gw, gb, gin)


def sgd_update(model: Mlp, gradients: Gradients, learning_rate: float) -> Mlp:
    """In-place plain gradient step; returns the model for chaining."""
    if learning_rate < 0:
        raise InvalidArgument("learning_rate must be >= 0")
    for g in gradients.params():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence("non-finite gradient")
    if learning_rate == 0:
        return model
    for p, g in zip(model.params(), gradients.params()):
        p -= learning_rate * g
    model.version += 1
    return model


def clone_into(src: Mlp, dst: Mlp) -> None:
    if src.layer_dims != dst.layer_dims or src.activations != dst.activations:
        raise InvalidArgument("architecture mismatch")
    for ps, pd in zip(src.params(), dst.params()):
        pd[...] = ps
    dst.version += 1
