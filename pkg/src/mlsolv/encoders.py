"""Atom feature encoders: stacked skip-connected GCN and stacked bidirectional
GRU/LSTM, each followed by softmax-weighted layer mixing.

Encoders act on a *batch* of molecules laid out as one row block per molecule:
the GCN receives a block-diagonal propagation matrix and the recurrent
encoder receives segment offsets, so molecules never interact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .numcore import (Parameter, ShapeError, Tensor, add, as_tensor, matmul, softmax, spmm, tanh,
                      weighted_sum)

ENCODER_KINDS = ("gcn", "bilm")
CELL_KINDS = {"gru": _kernels.GRU, "lstm": _kernels.LSTM}
GATES = {"gru": 3, "lstm": 4}


@dataclass
class EncoderConfig:
    kind: str = "gcn"
    layers: int = 2
    dim: int = 128
    cell: str = "gru"

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"encoder kind must be one of {ENCODER_KINDS}, got {self.kind!r}")
        if self.cell not in CELL_KINDS:
            raise ValueError(f"cell kind must be one of {tuple(CELL_KINDS)}, got {self.cell!r}")
        if self.layers < 1 or self.dim < 1:
            raise ValueError("layers and dim must be positive")


@dataclass
class GcnLayerParams:
    W1: Parameter
    W2: Parameter
    b: Parameter

    @property
    def weights(self):
        return [self.W1, self.W2]

    @property
    def all(self):
        return [self.W1, self.W2, self.b]


@dataclass
class RnnCellParams:
    cell: str
    W: Parameter
    U: Parameter
    b: Parameter

    @property
    def weights(self):
        return [self.W, self.U]

    @property
    def all(self):
        return [self.W, self.U, self.b]


@dataclass
class EncoderOutput:
    layers: list[Tensor]
    P: Tensor


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# GCN


def gcn_layer(H, A_hat, params: GcnLayerParams) -> Tensor:
    """``tanh(A_hat H W1 + H W2 + b)``; ``A_hat`` is a constant (dense or sparse)."""
    H = as_tensor(H)
    if A_hat.shape[0] != A_hat.shape[1] or A_hat.shape[0] != H.shape[0]:
        raise ShapeError(f"gcn_layer: propagation matrix {A_hat.shape} does not match features {H.shape}")
    conv = matmul(spmm(A_hat, H), params.W1)
    skip = matmul(H, params.W2)
    return tanh(add(add(conv, skip), params.b))


def layer_mix(layers, mix_logits) -> Tensor:
    """``sum_i softmax(mix_logits)_i * layers[i]``."""
    if not layers:
        raise ShapeError("layer_mix needs at least one layer")
    return weighted_sum(list(layers), softmax(as_tensor(mix_logits)))


def encode_gcn(X, A_hat, layer_params, mix_logits) -> EncoderOutput:
    H = as_tensor(X)
    hidden = []
    for params in layer_params:
        H = gcn_layer(H, A_hat, params)
        hidden.append(H)
    return EncoderOutput(hidden, layer_mix(hidden, mix_logits))


# ---------------------------------------------------------------------------
# recurrent


def rnn_step(params: RnnCellParams, h_prev, x_t, c_prev=None):
    """One GRU or LSTM step on plain vectors (reference form of the kernel).

    Returns ``h_t`` for a GRU and ``(h_t, c_t)`` for an LSTM.
    """
    d = params.U.shape[0]
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if h_prev.shape != (d,) or x_t.shape != (params.W.shape[0],):
        raise ShapeError(f"rnn_step: h_prev {h_prev.shape} / x_t {x_t.shape} do not match d={d}")
    W, U, b = params.W.value, params.U.value, params.b.value
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))
    if params.cell == "gru":
        a = x_t @ W + b
        z = sig(a[:d] + h_prev @ U[:, :d])
        r = sig(a[d:2 * d] + h_prev @ U[:, d:2 * d])
        cand = np.tanh(a[2 * d:] + (r * h_prev) @ U[:, 2 * d:])
        return (1.0 - z) * h_prev + z * cand
    c_prev = np.zeros(d) if c_prev is None else np.asarray(c_prev, dtype=np.float64)
    a = x_t @ W + h_prev @ U + b
    i, f, g, o = sig(a[:d]), sig(a[d:2 * d]), np.tanh(a[2 * d:3 * d]), sig(a[3 * d:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def rnn_sequence(X, params: RnnCellParams, offsets, reverse: bool = False) -> Tensor:
    """Hidden states of a GRU/LSTM run over each molecule segment of ``X``.

    Differentiable with respect to ``X`` and all cell parameters.
    """
    X = as_tensor(X)
    W, U, b = params.W, params.U, params.b
    if X.shape[1] != W.shape[0]:
        raise ShapeError(f"rnn_sequence: input {X.shape} does not match W {W.shape}")
    cell = CELL_KINDS[params.cell]
    xw = X.value @ W.value + b.value
    H, gates, h_prev, c_prev, C = _kernels.rnn_forward(xw, U.value, offsets, cell, reverse)

    def backward(g):
        dxw, dU = _kernels.rnn_backward(g, U.value, gates, h_prev, c_prev, C, offsets, cell, reverse)
        return dxw @ W.value.T, X.value.T @ dxw, dU, dxw.sum(axis=0)

    return Tensor(H, (X, W, U, b), backward, f"{params.cell}_sequence")


def encode_bilm(X, offsets, forward_params, backward_params, mix_logits) -> EncoderOutput:
    """Stacked bidirectional encoder; both directions of layer i+1 read the
    merged (summed) output of layer i."""
    H = as_tensor(X)
    if H.shape[0] < 1:
        raise ShapeError("encode_bilm needs at least one atom")
    hidden = []
    for fwd, bwd in zip(forward_params, backward_params):
        H = add(rnn_sequence(H, fwd, offsets, reverse=False), rnn_sequence(H, bwd, offsets, reverse=True))
        hidden.append(H)
    return EncoderOutput(hidden, layer_mix(hidden, mix_logits))


# ---------------------------------------------------------------------------
# parameter owners


class Encoder:
    """One encoder function with its own parameters.

    ``prefix`` namespaces parameter names (e.g. ``"solvent"``).
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator | None = None, prefix: str = "enc"):
        self.config = config
        self.prefix = prefix
        rng = rng if rng is not None else np.random.default_rng(0)
        d = config.dim
        self.gcn_layers: list[GcnLayerParams] = []
        self.forward_cells: list[RnnCellParams] = []
        self.backward_cells: list[RnnCellParams] = []
        for i in range(config.layers):
            if config.kind == "gcn":
                self.gcn_layers.append(GcnLayerParams(
                    Parameter(f"{prefix}.gcn{i}.W1", _glorot(rng, d, d, (d, d))),
                    Parameter(f"{prefix}.gcn{i}.W2", _glorot(rng, d, d, (d, d))),
                    Parameter(f"{prefix}.gcn{i}.b", np.zeros(d)),
                ))
            else:
                for direction, bucket in (("fwd", self.forward_cells), ("bwd", self.backward_cells)):
                    G = GATES[config.cell]
                    name = f"{prefix}.{config.cell}{i}.{direction}"
                    W = np.hstack([_glorot(rng, d, d, (d, d)) for _ in range(G)])
                    U = np.hstack([_glorot(rng, d, d, (d, d)) for _ in range(G)])
                    bucket.append(RnnCellParams(config.cell, Parameter(f"{name}.W", W), Parameter(f"{name}.U", U),
                                                Parameter(f"{name}.b", np.zeros(G * d))))
        self.mix_logits = Parameter(f"{prefix}.mix_logits", np.zeros(config.layers))

    @property
    def parameters(self) -> list[Parameter]:
        params = []
        for layer in self.gcn_layers:
            params += layer.all
        for fwd, bwd in zip(self.forward_cells, self.backward_cells):
            params += fwd.all + bwd.all
        return params + [self.mix_logits]

    @property
    def weight_matrices(self) -> list[Parameter]:
        """Parameters subject to the L2 penalty (no biases, no mix logits)."""
        ws = []
        for layer in self.gcn_layers:
            ws += layer.weights
        for fwd, bwd in zip(self.forward_cells, self.backward_cells):
            ws += fwd.weights + bwd.weights
        return ws

    def __call__(self, X, A_hat, offsets) -> EncoderOutput:
        if self.config.kind == "gcn":
            return encode_gcn(X, A_hat, self.gcn_layers, self.mix_logits)
        return encode_bilm(X, offsets, self.forward_cells, self.backward_cells, self.mix_logits)
