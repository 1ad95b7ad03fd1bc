"""Three-layer GraphSAGE (mean aggregator) with an explicit forward cache.

Each layer maps ``h_v -> act(W @ [h_v ; mean_{u in N(v)} h_u] + b)``. Hidden
layers use ReLU, the output layer is linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError

N_LAYERS = 3
DEFAULT_HIDDEN_DIM = 1024


@dataclass
class SageLayer:
    W: np.ndarray  # (out_dim, 2 * in_dim)
    b: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.W.shape[1] // 2

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class SageModel:
    layers: list[SageLayer]
    seed: int | None = None

    def __post_init__(self):
        for k, layer in enumerate(self.layers):
            if layer.W.ndim != 2 or layer.W.shape[1] % 2 or layer.b.shape != (layer.W.shape[0],):
                raise ModelError(f"layer {k} has inconsistent shapes W{layer.W.shape} b{layer.b.shape}")
            if k and layer.in_dim != self.layers[k - 1].out_dim:
                raise ModelError(f"layer {k} input does not match layer {k - 1} output")
            if not (np.all(np.isfinite(layer.W)) and np.all(np.isfinite(layer.b))):
                raise ModelError(f"layer {k} has non-finite parameters")

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in (layer.W, layer.b)]

    def copy(self) -> "SageModel":
        return SageModel([SageLayer(l.W.copy(), l.b.copy()) for l in self.layers], self.seed)

    def to_json(self) -> str:
        return json.dumps({
            "dims": self.dims,
            "layers": [{"W": l.W.tolist(), "b": l.b.tolist()} for l in self.layers],
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, data) -> "SageModel":
        doc = json.loads(data) if isinstance(data, (str, bytes, bytearray)) else data
        try:
            layers = [SageLayer(np.asarray(l["W"], dtype=np.float64).reshape(len(l["W"]), -1),
                                np.asarray(l["b"], dtype=np.float64)) for l in doc["layers"]]
            model = cls(layers, doc.get("seed"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed checkpoint: {exc}") from exc
        if model.dims != list(doc.get("dims", model.dims)):
            raise ModelError(f"checkpoint dims {doc['dims']} disagree with layer shapes {model.dims}")
        return model


def init_model(in_dim: int, hidden_dim: int = DEFAULT_HIDDEN_DIM, out_dim: int = 1,
               seed: int = 0, n_layers: int = N_LAYERS) -> SageModel:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    if min(in_dim, hidden_dim, out_dim, n_layers) < 1:
        raise ModelError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    dims = [in_dim] + [hidden_dim] * (n_layers - 1) + [out_dim]
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        fan_in, fan_out = 2 * d_in, d_out
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(SageLayer(rng.uniform(-limit, limit, size=(d_out, 2 * d_in)), np.zeros(d_out)))
    return SageModel(layers, seed)


@dataclass
class ForwardCache:
    """Per-layer activations over the whole graph, kept for backprop."""

    node_ids: np.ndarray
    inputs: list[np.ndarray] = field(default_factory=list)   # [h ; mean h] fed to each layer
    preacts: list[np.ndarray] = field(default_factory=list)  # W x + b
    output: np.ndarray | None = None                         # final layer, all nodes
    param_ids: tuple[int, ...] = ()


def forward(model: SageModel, ds, node_ids=None) -> tuple[np.ndarray, ForwardCache]:
    """Run every layer over the full graph; return rows for ``node_ids`` in order.

    ``ds`` only needs ``features`` and ``mean_operator`` (a sparse row-mean
    neighbor matrix). ``node_ids=None`` selects all nodes.
    """
    if ds.features.shape[1] != model.in_dim:
        raise ModelError(f"features have dim {ds.features.shape[1]}, model expects {model.in_dim}")
    ids = np.arange(ds.features.shape[0]) if node_ids is None else np.asarray(node_ids, dtype=np.int64)
    A = ds.mean_operator
    cache = ForwardCache(node_ids=ids, param_ids=tuple(id(p) for p in model.parameters()))
    h = ds.features
    last = len(model.layers) - 1
    for k, layer in enumerate(model.layers):
        x = np.hstack([h, A @ h])
        z = x @ layer.W.T + layer.b
        cache.inputs.append(x)
        cache.preacts.append(z)
        h = z if k == last else np.maximum(z, 0.0)
    if not np.all(np.isfinite(h)):
        raise ModelError("forward pass produced NaN or Inf", code="nan_forward")
    cache.output = h
    return h[ids], cache
