"""The hybrid classifier: feature vector -> BiLSTM(L=1) -> KAN -> logits.

The aggregated feature vector is treated as a one-step sequence, encoded
by the bidirectional LSTM (output width 2H, dropout in training mode),
then passed through the KAN stack whose final layer width equals the
class count. Softmax lives outside the network; the network boundary is
raw logits.

Parameters are exposed as a flat name -> ndarray dict (views, not copies)
so the optimizer, checkpointing, and the finite-difference checker all
share one addressing scheme:

    lstm.fwd.w_x  lstm.fwd.w_h  lstm.fwd.bias
    lstm.bwd.w_x  lstm.bwd.w_h  lstm.bwd.bias
    kan.<l>.coeffs  [kan.<l>.base_weight]
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import FingerprintError, ShapeError
from .kan import KanLayer, KanNetwork, kan_network_init, network_backward, network_forward
from .lstm import BiLstm, BiLstmGrads, LstmWeights, bilstm_backward, bilstm_encode, bilstm_init
from .splines import make_uniform_grid

__all__ = [
    "HybridModel",
    "ModelGrads",
    "build_model",
    "model_forward",
    "model_backward",
    "softmax",
    "parameters",
    "grads_to_dict",
    "snapshot_parameters",
    "restore_parameters",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


@dataclass
class HybridModel:
    encoder: BiLstm
    kan: KanNetwork

    def __post_init__(self):
        if self.encoder.output_size != self.kan.n_in:
            raise ShapeError(
                f"encoder output {self.encoder.output_size} != KAN input {self.kan.n_in}"
            )

    @property
    def feature_dim(self) -> int:
        return self.encoder.input_size

    @property
    def class_count(self) -> int:
        return self.kan.n_out


@dataclass
class ModelGrads:
    encoder: BiLstmGrads
    kan: list


def build_model(
    d_feat: int,
    class_count: int,
    rng: np.random.Generator,
    lstm_hidden: int = 64,
    dropout_rate: float = 0.3,
    kan_hidden: int = 32,
    grid_size: int = 3,
    spline_order: int = 3,
    domain: tuple[float, float] = (-1.0, 1.0),
    kan_init_scale: float | None = None,
    kan_base_branch: bool = False,
) -> HybridModel:
    """Assemble the default architecture around a discovered feature width."""
    encoder = bilstm_init(d_feat, lstm_hidden, dropout_rate, rng)
    grid = make_uniform_grid(domain[0], domain[1], grid_size, spline_order)
    kan = kan_network_init(
        [2 * lstm_hidden, kan_hidden, class_count],
        grid,
        rng,
        scale=kan_init_scale,
        base_branch=kan_base_branch,
    )
    return HybridModel(encoder=encoder, kan=kan)


def model_forward(
    m: HybridModel,
    x,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Run the full composition on (d_feat,) or (B, d_feat) inputs."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m.feature_dim:
        raise ShapeError(f"expected feature width {m.feature_dim}, got {x.shape[-1]}")
    seq = x[..., None, :]  # length-1 sequence
    encoded, enc_cache = bilstm_encode(m.encoder, seq, training=training, rng=rng)
    logits, kan_caches = network_forward(m.kan, encoded)
    return logits, (enc_cache, kan_caches)


def model_backward(m: HybridModel, cache, grad_logits) -> ModelGrads:
    """Exact gradients of sum(grad_logits * logits) w.r.t. every parameter."""
    enc_cache, kan_caches = cache
    grad_encoded, kan_grads = network_backward(m.kan, kan_caches, grad_logits)
    enc_grads, _ = bilstm_backward(m.encoder, enc_cache, grad_encoded)
    return ModelGrads(encoder=enc_grads, kan=kan_grads)


def softmax(logits) -> np.ndarray:
    """Stable softmax over the last axis; rows sum to 1."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax requires finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def parameters(m: HybridModel) -> dict[str, np.ndarray]:
    """Flat name -> array views over all learnable tensors."""
    out: dict[str, np.ndarray] = {}
    for tag, w in (("fwd", m.encoder.forward), ("bwd", m.encoder.backward)):
        out[f"lstm.{tag}.w_x"] = w.w_x
        out[f"lstm.{tag}.w_h"] = w.w_h
        out[f"lstm.{tag}.bias"] = w.bias
    for idx, layer in enumerate(m.kan.layers):
        out[f"kan.{idx}.coeffs"] = layer.coeffs
        if layer.base_weight is not None:
            out[f"kan.{idx}.base_weight"] = layer.base_weight
    return out


def grads_to_dict(g: ModelGrads) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for tag, lg in (("fwd", g.encoder.forward), ("bwd", g.encoder.backward)):
        out[f"lstm.{tag}.w_x"] = lg.w_x
        out[f"lstm.{tag}.w_h"] = lg.w_h
        out[f"lstm.{tag}.bias"] = lg.bias
    for idx, kg in enumerate(g.kan):
        out[f"kan.{idx}.coeffs"] = kg.coeffs
        if kg.base_weight is not None:
            out[f"kan.{idx}.base_weight"] = kg.base_weight
    return out


def snapshot_parameters(m: HybridModel) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, arr in parameters(m).items()}


def restore_parameters(m: HybridModel, snapshot: dict[str, np.ndarray]) -> None:
    params = parameters(m)
    if set(params) != set(snapshot):
        raise ShapeError("snapshot does not match the model's parameter set")
    for name, arr in params.items():
        arr[...] = snapshot[name]


def save_checkpoint(
    m: HybridModel,
    path,
    fingerprint: str,
    scaler_mean: np.ndarray | None = None,
    scaler_scale: np.ndarray | None = None,
    meta: dict | None = None,
) -> None:
    """Write every tensor plus a JSON meta block into one .npz container."""
    grid = m.kan.layers[0].grid
    header = {
        "version": CHECKPOINT_VERSION,
        "fingerprint": fingerprint,
        "feature_dim": m.feature_dim,
        "class_count": m.class_count,
        "lstm_hidden": m.encoder.hidden_size,
        "dropout_rate": m.encoder.dropout_rate,
        "kan_dims": [m.kan.layers[0].n_in] + [layer.n_out for layer in m.kan.layers],
        "grid_size": grid.grid_size,
        "spline_order": grid.order,
        "domain": [grid.t_min, grid.t_max],
        "base_branch": m.kan.layers[0].base_weight is not None,
        "meta": meta or {},
    }
    arrays = {name.replace(".", "__"): arr for name, arr in parameters(m).items()}
    if scaler_mean is not None:
        arrays["scaler_mean"] = scaler_mean
        arrays["scaler_scale"] = scaler_scale
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expected_fingerprint: str | None = None):
    """Rebuild a model from a checkpoint; rejects fingerprint mismatches.

    Returns ``(model, header, scaler_mean, scaler_scale)`` where the scaler
    entries are None when the checkpoint carries no scaler.
    """
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise FingerprintError(f"unsupported checkpoint version {header.get('version')}")
        if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
            raise FingerprintError(
                f"feature-layout fingerprint mismatch: checkpoint has "
                f"{header['fingerprint']}, expected {expected_fingerprint}"
            )
        arrays = {key: data[key] for key in data.files if key != "header"}

    def take(name):
        return arrays[name.replace(".", "__")]

    fwd = LstmWeights(take("lstm.fwd.w_x"), take("lstm.fwd.w_h"), take("lstm.fwd.bias"))
    bwd = LstmWeights(take("lstm.bwd.w_x"), take("lstm.bwd.w_h"), take("lstm.bwd.bias"))
    encoder = BiLstm(forward=fwd, backward=bwd, dropout_rate=header["dropout_rate"])
    grid = make_uniform_grid(
        header["domain"][0], header["domain"][1], header["grid_size"], header["spline_order"]
    )
    layers = []
    dims = header["kan_dims"]
    for idx in range(len(dims) - 1):
        base = None
        key = f"kan__{idx}__base_weight"
        if key in arrays:
            base = arrays[key]
        layers.append(KanLayer(coeffs=take(f"kan.{idx}.coeffs"), grid=grid, base_weight=base))
    model = HybridModel(encoder=encoder, kan=KanNetwork(layers=layers))
    mean = arrays.get("scaler_mean")
    scale = arrays.get("scaler_scale")
    return model, header, mean, scale
