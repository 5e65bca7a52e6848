"""Vowel graph attention network with audio-visual cross-attention fusion."""
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from helpers.autodiff import Tensor, concat
from helpers.errors import ConfigError, InputError, NumericError
from helpers.misc import make_rng

ACOUSTIC_BRANCHES = ("vgan", "vga", "dnn")
FUSIONS = ("crossatt", "concat")


@dataclass(frozen=True)
class VganConfig:
    """Hyper-dimensions of the network."""

    n_nodes: int = 6
    in_dim: int = 20
    shared_dim: int = 16
    n_heads: int = 3
    head_dim: int = 32
    dense_dims: Tuple[int, ...] = (128, 64)
    visual_in: int = 10
    visual_dims: Tuple[int, ...] = (128, 64, 32)
    fusion_dim: int = 32
    fusion_tokens: int = 6
    final_dim: int = 32
    leaky_slope: float = 0.2
    audio_only: bool = False
    visual_only: bool = False
    acoustic_branches: str = "vgan"
    fusion: str = "crossatt"

    def __post_init__(self):
        object.__setattr__(self, "dense_dims", tuple(int(d) for d in self.dense_dims))
        object.__setattr__(self, "visual_dims", tuple(int(d) for d in self.visual_dims))
        sizes = (
            self.n_nodes,
            self.in_dim,
            self.shared_dim,
            self.n_heads,
            self.head_dim,
            self.visual_in,
            self.fusion_dim,
            self.fusion_tokens,
            self.final_dim,
        )
        if min(sizes) < 1 or not self.dense_dims or not self.visual_dims:
            raise ConfigError("network dimensions must be positive")
        if min(self.dense_dims + self.visual_dims) < 1:
            raise ConfigError("dense layer sizes must be positive")
        if self.audio_only and self.visual_only:
            raise ConfigError("audio-only and visual-only are mutually exclusive")
        if self.acoustic_branches not in ACOUSTIC_BRANCHES:
            raise ConfigError(f"acoustic-branches must be one of {', '.join(ACOUSTIC_BRANCHES)}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {', '.join(FUSIONS)}")
        if self.bimodal and self.fusion == "crossatt" and self.visual_dims[-1] != self.fusion_dim:
            raise ConfigError(
                f"cross-attention needs the visual embedding ({self.visual_dims[-1]}) to equal fusion-dim ({self.fusion_dim})"
            )
        if not 0 <= self.leaky_slope < 1:
            raise ConfigError("leaky-slope must lie in [0, 1)")

    @property
    def bimodal(self):
        return not (self.audio_only or self.visual_only)

    @property
    def uses_audio(self):
        return not self.visual_only

    @property
    def uses_lips(self):
        return not self.audio_only

    @property
    def vga_flatten(self):
        return self.n_nodes * self.n_heads * self.head_dim

    @property
    def feature_flatten(self):
        return self.n_nodes * self.in_dim

    @property
    def acoustic_dim(self):
        branches = 2 if self.acoustic_branches == "vgan" else 1
        return branches * self.dense_dims[-1]

    @property
    def token_width(self):
        """Acoustic token width after zero padding."""
        return math.ceil(self.acoustic_dim / self.fusion_tokens)

    @property
    def final_in(self):
        if self.visual_only:
            return self.visual_dims[-1]
        if self.audio_only:
            return self.acoustic_dim
        if self.fusion == "concat":
            return self.acoustic_dim + self.visual_dims[-1]
        return self.fusion_tokens * self.fusion_dim


def _dense_shapes(shapes, prefix, sizes, fan_in):
    for j, size in enumerate(sizes, start=1):
        shapes[f"{prefix}.dense{j}.W"] = (size, fan_in)
        shapes[f"{prefix}.dense{j}.b"] = (size,)
        fan_in = size


def param_shapes(config):
    """Name to shape of every trainable array, in a fixed order."""

    shapes = OrderedDict()
    if config.uses_audio:
        if config.acoustic_branches in ("vgan", "vga"):
            shapes["shared.W"] = (config.shared_dim, config.in_dim)
            shapes["shared.b"] = (config.shared_dim,)
            for k in range(config.n_heads):
                shapes[f"head{k}.W"] = (config.head_dim, config.shared_dim)
                shapes[f"head{k}.a"] = (2 * config.head_dim,)
            _dense_shapes(shapes, "vga", config.dense_dims, config.vga_flatten)
        if config.acoustic_branches in ("vgan", "dnn"):
            _dense_shapes(shapes, "feat", config.dense_dims, config.feature_flatten)
    if config.uses_lips:
        _dense_shapes(shapes, "visual", config.visual_dims, config.n_nodes * config.visual_in)
    if config.bimodal and config.fusion == "crossatt":
        shapes["fusion.lip.W"] = (config.fusion_dim, config.visual_in)
        shapes["fusion.lip.b"] = (config.fusion_dim,)
        shapes["fusion.vowel"] = (config.n_nodes, config.fusion_dim)
        shapes["fusion.W_Q"] = (config.fusion_dim, config.token_width)
        shapes["fusion.W_K"] = (config.fusion_dim, config.fusion_dim)
        shapes["fusion.W_V"] = (config.fusion_dim, config.fusion_dim)
    shapes["final.W"] = (config.final_dim, config.final_in)
    shapes["final.b"] = (config.final_dim,)
    shapes["out.W"] = (1, config.final_dim)
    shapes["out.b"] = (1,)
    return shapes


def standardization_shapes(config):
    """Shapes of the stored z-score statistics."""

    return OrderedDict(
        [
            ("papi.mean", (config.in_dim,)),
            ("papi.std", (config.in_dim,)),
            ("lip.mean", (config.visual_in,)),
            ("lip.std", (config.visual_in,)),
            ("target.mean", (1,)),
            ("target.std", (1,)),
        ]
    )


def identity_standardization(config):
    """Zero means and unit deviations."""

    return {
        name: np.ones(shape) if name.endswith(".std") else np.zeros(shape)
        for name, shape in standardization_shapes(config).items()
    }


@dataclass(eq=False)
class VganModel:
    """Configuration, parameters, standardization statistics and target scale."""

    config: VganConfig
    params: Dict[str, np.ndarray]
    standardization: Dict[str, np.ndarray] = field(default_factory=dict)
    target_kind: str = "total"
    scale_max: float = 116.0

    def __post_init__(self):
        expected = param_shapes(self.config)
        for name, shape in expected.items():
            if name not in self.params or tuple(self.params[name].shape) != tuple(shape):
                raise ConfigError(f"parameter '{name}' missing or not of shape {shape}")
        if not self.standardization:
            self.standardization = identity_standardization(self.config)
        for name in ("papi.std", "lip.std", "target.std"):
            if np.any(self.standardization[name] <= 0):
                raise ConfigError(f"standardization '{name}' must be positive")

    def n_params(self):
        """Trainable scalar count."""
        return int(sum(array.size for array in self.params.values()))


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Attention maps, embeddings and the prediction of one group."""

    attention: np.ndarray
    acoustic_embedding: Optional[np.ndarray]
    visual_embedding: Optional[np.ndarray]
    fused_embedding: np.ndarray
    prediction: float


def init_params(config, seed=0, target_kind="total", scale_max=116.0):
    """Glorot-uniform weights and zero biases."""

    rng = make_rng(seed)
    params = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        # attention vectors act as a (1, 2·head_dim) weight
        fan_out, fan_in = shape if len(shape) == 2 else (1, shape[0])
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape)
    return VganModel(config, params, identity_standardization(config), target_kind, scale_max)


def _dense(x, params, prefix, count, activate_last=False):
    for j in range(1, count + 1):
        x = x @ params[f"{prefix}.dense{j}.W"].swapaxes() + params[f"{prefix}.dense{j}.b"]
        if j < count or activate_last:
            x = x.relu()
    return x


def _check_finite(array, what):
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{what} contains NaN or Inf")


def _vga(h_input, params, config):
    """Shared layer plus multi-head attention over all node pairs; (B, N, H·D) and per-head α."""

    h = h_input @ params["shared.W"].swapaxes() + params["shared.b"]
    heads, attention = [], []
    d = config.head_dim
    for k in range(config.n_heads):
        z = h @ params[f"head{k}.W"].swapaxes()
        a = params[f"head{k}.a"]
        source = z @ a[:d].reshape(d, 1)
        target = z @ a[d:].reshape(d, 1)
        scores = (source + target.swapaxes()).leaky_relu(config.leaky_slope)
        alpha = scores.softmax(axis=-1)
        heads.append(alpha @ z)
        attention.append(alpha)
    return concat(heads, axis=-1), attention


def vga_forward(node_features, params, config):
    """Attention block on one group's (standardized) node features."""

    node_features = np.asarray(node_features, dtype=np.float64)
    _check_finite(node_features, "node features")
    if node_features.shape != (config.n_nodes, config.in_dim):
        raise InputError(f"node features must be {config.n_nodes}x{config.in_dim}, got {node_features.shape}")
    tensors = {name: Tensor(value) for name, value in params.items()}
    attended, attention = _vga(Tensor(node_features[None]), tensors, config)
    return {
        "attended": attended.data[0],
        "attention": np.stack([alpha.data[0] for alpha in attention]),
    }


def _graph(params, papi, lips, config):
    """Build the batched graph on standardized inputs; returns named tensors."""

    batch = (papi if papi is not None else lips).shape[0]
    out = {"attention": [], "acoustic": None, "visual": None}

    if config.uses_audio:
        branches = []
        if config.acoustic_branches in ("vgan", "vga"):
            attended, out["attention"] = _vga(papi, params, config)
            branches.append(_dense(attended.reshape(batch, config.vga_flatten), params, "vga", len(config.dense_dims)))
        if config.acoustic_branches in ("vgan", "dnn"):
            flat = papi.reshape(batch, config.feature_flatten)
            branches.append(_dense(flat, params, "feat", len(config.dense_dims)))
        out["acoustic"] = branches[0] if len(branches) == 1 else concat(branches, axis=-1)

    if config.uses_lips:
        flat = lips.reshape(batch, config.n_nodes * config.visual_in)
        out["visual"] = _dense(flat, params, "visual", len(config.visual_dims))

    if config.visual_only:
        fused = out["visual"]
    elif config.audio_only:
        fused = out["acoustic"]
    elif config.fusion == "concat":
        fused = concat([out["acoustic"], out["visual"]], axis=-1)
    else:
        width = config.token_width
        padded = out["acoustic"].pad_last(width * config.fusion_tokens - config.acoustic_dim)
        acoustic_tokens = padded.reshape(batch, config.fusion_tokens, width)
        visual_tokens = (
            lips @ params["fusion.lip.W"].swapaxes()
            + params["fusion.lip.b"]
            + params["fusion.vowel"]
            + out["visual"].reshape(batch, 1, config.fusion_dim)
        )
        queries = acoustic_tokens @ params["fusion.W_Q"].swapaxes()
        keys = visual_tokens @ params["fusion.W_K"].swapaxes()
        values = visual_tokens @ params["fusion.W_V"].swapaxes()
        cross = (queries @ keys.swapaxes()).softmax(axis=-1)
        out["cross_attention"] = cross
        fused = (cross @ values).reshape(batch, config.fusion_tokens * config.fusion_dim)

    hidden = (fused @ params["final.W"].swapaxes() + params["final.b"]).relu()
    out["fused"] = fused
    out["prediction"] = (hidden @ params["out.W"].swapaxes() + params["out.b"]).reshape(batch)
    return out


def standardize_inputs(model, papi, lips):
    """Apply the model's z-score statistics; validates shapes and presence of lips."""

    config = model.config
    papi_z = lips_z = None
    if config.uses_audio:
        if papi is None:
            raise InputError("acoustic features are required")
        papi = np.asarray(papi, dtype=np.float64)
        if papi.shape[-2:] != (config.n_nodes, config.in_dim):
            raise InputError(f"acoustic features must be (..., {config.n_nodes}, {config.in_dim}), got {papi.shape}")
        _check_finite(papi, "acoustic features")
        papi_z = (papi - model.standardization["papi.mean"]) / model.standardization["papi.std"]
    if config.uses_lips:
        if lips is None:
            raise InputError("lip features are required unless the model is audio-only")
        lips = np.asarray(lips, dtype=np.float64)
        if lips.shape[-2:] != (config.n_nodes, config.visual_in):
            raise InputError(f"lip features must be (..., {config.n_nodes}, {config.visual_in}), got {lips.shape}")
        _check_finite(lips, "lip features")
        lips_z = (lips - model.standardization["lip.mean"]) / model.standardization["lip.std"]
    return papi_z, lips_z


def _destandardize(model, values):
    return values * model.standardization["target.std"][0] + model.standardization["target.mean"][0]


def _run(model, papi, lips, requires_grad=False):
    papi_z, lips_z = standardize_inputs(model, papi, lips)
    params = {name: Tensor(value, requires_grad=requires_grad) for name, value in model.params.items()}
    graph = _graph(
        params,
        None if papi_z is None else Tensor(papi_z),
        None if lips_z is None else Tensor(lips_z),
        model.config,
    )
    return params, graph


def predict_batch(model, papi, lips=None):
    """Predictions in score points for (B, N, in_dim) / (B, N, visual_in) inputs."""

    _, graph = _run(model, papi, lips)
    return _destandardize(model, graph["prediction"].data)


def forward_batch(model, papi, lips=None):
    """Traces for a batch of groups."""

    _, graph = _run(model, papi, lips)
    predictions = _destandardize(model, graph["prediction"].data)
    traces = []
    for i, prediction in enumerate(predictions):
        attention = np.stack([alpha.data[i] for alpha in graph["attention"]]) if graph["attention"] else np.zeros((0,))
        traces.append(
            ForwardTrace(
                attention=attention,
                acoustic_embedding=None if graph["acoustic"] is None else graph["acoustic"].data[i],
                visual_embedding=None if graph["visual"] is None else graph["visual"].data[i],
                fused_embedding=graph["fused"].data[i],
                prediction=float(prediction),
            )
        )
    return traces


def forward(group_papi, group_lip, model):
    """Trace of one group given raw (unstandardized) features."""

    papi = None if group_papi is None else np.asarray(group_papi, dtype=np.float64)[None]
    lips = None if group_lip is None else np.asarray(group_lip, dtype=np.float64)[None]
    return forward_batch(model, papi, lips)[0]


def mse_loss(pred, target):
    """Mean squared error of two equal-length sequences."""

    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0 or pred.shape != target.shape:
        raise InputError("loss needs two non-empty sequences of equal length")
    return float(np.mean((target - pred) ** 2))


def standardize_targets(model, targets):
    """Targets in score points to the model's standardized scale."""

    targets = np.asarray(targets, dtype=np.float64)
    return (targets - model.standardization["target.mean"][0]) / model.standardization["target.std"][0]


def gradients(model, papi, lips, targets):
    """Mean batch loss on standardized targets and its gradient for every parameter array."""

    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 1 or targets.size == 0:
        raise InputError("gradients need a non-empty batch")
    params, graph = _run(model, papi, lips, requires_grad=True)
    residual = graph["prediction"] - standardize_targets(model, targets)
    loss = (residual * residual).mean()
    loss.backward()
    grads = OrderedDict()
    for name, tensor in params.items():
        grads[name] = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        _check_finite(grads[name], f"gradient of {name}")
    return float(loss.data), grads


def batch_loss(model, papi, lips, targets):
    """Mean batch loss on standardized targets (no gradients)."""

    _, graph = _run(model, papi, lips)
    return mse_loss(graph["prediction"].data, standardize_targets(model, targets))
