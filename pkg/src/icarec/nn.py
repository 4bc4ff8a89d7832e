"""Network construction, initialization, Adam optimization, checkpoints.

A `NetSpec` is a declarative stack of layer descriptors; `build_net` turns it
into a `Net` with deterministically initialized parameters.  `Net.forward`
runs on the autodiff graph; `Net.forward_array` runs the identical arithmetic
on raw arrays (used on gradient-free paths), so the two agree bitwise.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tensor
from .errors import (CheckpointError, NonFiniteError, ShapeMismatchError,
                     SpecError)

ACTIVATIONS = ("tanh", "relu", "leaky_relu", "softplus", "sigmoid", "identity")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    activation: str = "identity"


@dataclass(frozen=True)
class Conv1d:
    in_ch: int
    out_ch: int
    kernel: int
    activation: str = "identity"


@dataclass(frozen=True)
class BatchNorm1d:
    ch: int


@dataclass(frozen=True)
class ConcatCondition:
    """Inject the condition: append features (optionally via a learnable
    class-embedding table) or append channels along the channel axis."""

    mode: str  # "append-features" | "append-channels"
    dim: int
    classes: int | None = None  # symbolic conditions: embedding table rows


@dataclass(frozen=True)
class NetSpec:
    layers: tuple
    role: str  # "encoder" | "decoder" | "discriminator"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        validate_spec(self)


def validate_spec(spec):
    if spec.role not in ("encoder", "decoder", "discriminator"):
        raise SpecError(f"unknown net role {spec.role!r}")
    n_concat = sum(isinstance(l, ConcatCondition) for l in spec.layers)
    if spec.role == "decoder" and n_concat != 1:
        raise SpecError(
            f"decoder spec must contain exactly one concat-condition layer, "
            f"found {n_concat}")
    if n_concat > 1:
        raise SpecError("at most one concat-condition layer per net")
    domain = None  # ("features", f) or ("channels", c)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            if layer.in_dim < 1 or layer.out_dim < 1:
                raise SpecError(f"layer {i}: dense dims must be positive")
            if layer.activation not in ACTIVATIONS:
                raise SpecError(f"layer {i}: unknown activation {layer.activation!r}")
            if domain is not None and domain != ("features", layer.in_dim):
                raise SpecError(
                    f"layer {i}: dense expects {layer.in_dim} features, "
                    f"previous layer provides {domain}")
            domain = ("features", layer.out_dim)
        elif isinstance(layer, Conv1d):
            if layer.kernel < 1 or layer.kernel % 2 == 0:
                raise SpecError(f"layer {i}: conv kernel must be odd, got {layer.kernel}")
            if layer.activation not in ACTIVATIONS:
                raise SpecError(f"layer {i}: unknown activation {layer.activation!r}")
            if domain is not None and domain != ("channels", layer.in_ch):
                raise SpecError(
                    f"layer {i}: conv expects {layer.in_ch} channels, "
                    f"previous layer provides {domain}")
            domain = ("channels", layer.out_ch)
        elif isinstance(layer, BatchNorm1d):
            if domain != ("channels", layer.ch):
                raise SpecError(
                    f"layer {i}: batchnorm over {layer.ch} channels does not "
                    f"match previous layer {domain}")
        elif isinstance(layer, ConcatCondition):
            if layer.mode not in ("append-features", "append-channels"):
                raise SpecError(f"layer {i}: unknown concat mode {layer.mode!r}")
            if layer.dim < 1:
                raise SpecError(f"layer {i}: condition dim must be positive")
            if layer.classes is not None and layer.mode != "append-features":
                raise SpecError(
                    f"layer {i}: class-embedding conditions append features")
            if domain is None:
                continue  # condition concatenated straight onto the input
            kind, size = domain
            if layer.mode == "append-features":
                if kind != "features":
                    raise SpecError(f"layer {i}: cannot append features to {domain}")
                domain = ("features", size + layer.dim)
            else:
                if kind != "channels":
                    raise SpecError(f"layer {i}: cannot append channels to {domain}")
                domain = ("channels", size + layer.dim)
        else:
            raise SpecError(f"layer {i}: unknown layer descriptor {layer!r}")


class Net:
    """Instantiated network: spec plus named parameter Nodes."""

    def __init__(self, spec, params, buffers, mode="train"):
        self.spec = spec
        self.params = params     # dict name -> Node (requires_grad)
        self.buffers = buffers   # dict name -> ndarray (batchnorm running stats)
        self.mode = mode

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def param_count(self):
        return sum(p.value.size for p in self.params.values())

    def forward(self, x, condition=None):
        """Forward on the autodiff graph; returns the output Node."""
        return self._run(x, condition, node_mode=True)

    def forward_array(self, x, condition=None):
        """Forward on raw arrays (no graph); bitwise-identical arithmetic."""
        return self._run(np.asarray(x, dtype=np.float64), condition,
                         node_mode=False)

    # -- single implementation of the layer walk, two value representations --

    def _p(self, name, node_mode):
        p = self.params[name]
        return p if node_mode else p.value.data

    def _run(self, h, condition, node_mode):
        if node_mode:
            op = lambda kind, ins, attrs=None: ad.apply_primitive(kind, ins, attrs)
            as_input = lambda v: v if isinstance(v, Node) else ad.constant(v)
            raw = lambda v: v.value.data
        else:
            op = lambda kind, ins, attrs=None: ad.forward_value(kind, ins, attrs)
            as_input = lambda v: np.asarray(v, dtype=np.float64)
            raw = lambda v: v
        h = as_input(h)
        has_concat = any(isinstance(l, ConcatCondition) for l in self.spec.layers)
        if has_concat and condition is None:
            raise ShapeMismatchError(
                f"{self.spec.role}: spec has a concat-condition layer but no "
                "condition was given")
        if not has_concat and condition is not None:
            raise ShapeMismatchError(
                f"{self.spec.role}: condition given but spec has no "
                "concat-condition layer")
        for i, layer in enumerate(self.spec.layers):
            if isinstance(layer, Dense):
                h = op("matmul", [h, self._p(f"layer{i}.w", node_mode)])
                h = op("add", [h, self._p(f"layer{i}.b", node_mode)])
                if layer.activation != "identity":
                    h = _activation_op(op, layer.activation, h)
            elif isinstance(layer, Conv1d):
                h = op("conv1d", [h, self._p(f"layer{i}.w", node_mode)])
                h = op("add", [h, self._p(f"layer{i}.b", node_mode)])
                if layer.activation != "identity":
                    h = _activation_op(op, layer.activation, h)
            elif isinstance(layer, BatchNorm1d):
                gamma = self._p(f"layer{i}.gamma", node_mode)
                beta = self._p(f"layer{i}.beta", node_mode)
                if self.mode == "train":
                    xv = raw(h)
                    bmean = xv.mean(axis=(0, 2))
                    bvar = xv.var(axis=(0, 2))
                    h = op("batchnorm1d", [h, gamma, beta],
                           {"mode": "train", "eps": BN_EPS})
                    rm = self.buffers[f"layer{i}.running_mean"]
                    rv = self.buffers[f"layer{i}.running_var"]
                    self.buffers[f"layer{i}.running_mean"] = (
                        BN_MOMENTUM * rm + (1.0 - BN_MOMENTUM) * bmean)
                    self.buffers[f"layer{i}.running_var"] = (
                        BN_MOMENTUM * rv + (1.0 - BN_MOMENTUM) * bvar)
                else:
                    h = op("batchnorm1d", [h, gamma, beta],
                           {"mode": "eval", "eps": BN_EPS,
                            "running_mean": self.buffers[f"layer{i}.running_mean"],
                            "running_var": self.buffers[f"layer{i}.running_var"]})
            elif isinstance(layer, ConcatCondition):
                if layer.classes is not None:
                    idx = np.asarray(condition)
                    if idx.ndim != 1:
                        raise ShapeMismatchError(
                            f"{self.spec.role}: class condition must be a flat "
                            f"index array, got shape {idx.shape}")
                    table = self._p(f"layer{i}.embed", node_mode)
                    cond = op("take_rows", [table],
                              {"indices": idx.astype(np.int64)})
                else:
                    cond = as_input(condition)
                h = op("concat", [h, cond], {"axis": 1})
        return h


def _activation_op(op, name, h):
    if name == "leaky_relu":
        return op("leaky_relu", [h], {"alpha": 0.2})
    return op(name, [h])


def build_net(spec, seed):
    """Instantiate a validated spec with seed-deterministic initialization.

    Dense and conv weights draw from uniform(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    rng = np.random.default_rng(seed)
    params = {}
    buffers = {}
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            a = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            params[f"layer{i}.w"] = ad.parameter(
                Tensor(rng.uniform(-a, a, (layer.in_dim, layer.out_dim))),
                name=f"layer{i}.w")
            params[f"layer{i}.b"] = ad.parameter(
                Tensor.zeros((layer.out_dim,)), name=f"layer{i}.b")
        elif isinstance(layer, Conv1d):
            fan_in = layer.in_ch * layer.kernel
            fan_out = layer.out_ch * layer.kernel
            a = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"layer{i}.w"] = ad.parameter(
                Tensor(rng.uniform(-a, a, (layer.out_ch, layer.in_ch, layer.kernel))),
                name=f"layer{i}.w")
            params[f"layer{i}.b"] = ad.parameter(
                Tensor.zeros((layer.out_ch, 1)), name=f"layer{i}.b")
        elif isinstance(layer, BatchNorm1d):
            params[f"layer{i}.gamma"] = ad.parameter(
                Tensor(np.ones(layer.ch)), name=f"layer{i}.gamma")
            params[f"layer{i}.beta"] = ad.parameter(
                Tensor.zeros((layer.ch,)), name=f"layer{i}.beta")
            buffers[f"layer{i}.running_mean"] = np.zeros(layer.ch)
            buffers[f"layer{i}.running_var"] = np.ones(layer.ch)
        elif isinstance(layer, ConcatCondition) and layer.classes is not None:
            a = np.sqrt(6.0 / (layer.classes + layer.dim))
            params[f"layer{i}.embed"] = ad.parameter(
                Tensor(rng.uniform(-a, a, (layer.classes, layer.dim))),
                name=f"layer{i}.embed")
    return Net(spec, params, buffers)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """One bias-corrected Adam update over a named parameter dict.

    `params` maps name -> parameter Node, `grads` maps name -> gradient
    array.  Parameter values are rebound to the updated tensors; the state's
    moments and step count advance in place.  Returns (params, state).
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, node in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        if g.shape != node.value.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} != parameter {name!r} shape "
                f"{node.value.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros(node.value.shape)
            v = np.zeros(node.value.shape)
        else:
            v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        node.value = Tensor(node.value.data - update)
    return params, state


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

_LAYER_TAGS = {
    Dense: "dense", Conv1d: "conv1d", BatchNorm1d: "batchnorm1d",
    ConcatCondition: "concat_condition",
}


def spec_to_json(spec):
    layers = []
    for layer in spec.layers:
        d = {"type": _LAYER_TAGS[type(layer)]}
        for key, val in layer.__dict__.items():
            d[key] = val
        layers.append(d)
    return {"role": spec.role, "layers": layers}


def spec_from_json(doc):
    classes = {v: k for k, v in _LAYER_TAGS.items()}
    try:
        layers = []
        for d in doc["layers"]:
            d = dict(d)
            cls = classes[d.pop("type")]
            layers.append(cls(**d))
        return NetSpec(tuple(layers), doc["role"])
    except (KeyError, TypeError) as exc:
        raise SpecError(f"invalid net spec document: {exc}") from exc


def _arrays_to_json(named):
    return [{"name": k, "shape": list(np.shape(v)), "data": np.ravel(v).tolist()}
            for k, v in named.items()]


def _arrays_from_json(items):
    out = {}
    for item in items:
        arr = np.array(item["data"], dtype=np.float64).reshape(item["shape"])
        out[item["name"]] = arr
    return out


def checkpoint_document(net, adam=None):
    """The checkpoint JSON document for one net (and optional Adam state)."""
    doc = {
        "spec": spec_to_json(net.spec),
        "params": _arrays_to_json(
            {k: p.value.data for k, p in net.params.items()}),
        "buffers": _arrays_to_json(net.buffers),
        "mode": net.mode,
    }
    if adam is not None:
        doc["adam"] = {
            "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
            "eps": adam.eps, "step_count": adam.step_count,
            "m": _arrays_to_json(adam.m), "v": _arrays_to_json(adam.v),
        }
    else:
        doc["adam"] = None
    return doc


def net_from_document(doc):
    spec = spec_from_json(doc["spec"])
    net = build_net(spec, seed=0)
    loaded = _arrays_from_json(doc["params"])
    if set(loaded) != set(net.params):
        raise CheckpointError(
            f"checkpoint parameters {sorted(loaded)} do not match spec "
            f"parameters {sorted(net.params)}")
    for name, arr in loaded.items():
        if arr.shape != net.params[name].value.shape:
            raise CheckpointError(
                f"checkpoint parameter {name!r} has shape {arr.shape}, spec "
                f"requires {net.params[name].value.shape}")
        net.params[name].value = Tensor(arr)
    net.buffers = _arrays_from_json(doc.get("buffers", []))
    net.mode = doc.get("mode", "train")
    adam = None
    if doc.get("adam") is not None:
        a = doc["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                         eps=a["eps"], step_count=a["step_count"],
                         m=_arrays_from_json(a["m"]),
                         v=_arrays_from_json(a["v"]))
    return net, adam


def save_checkpoint(net, adam, path):
    """Write the checkpoint JSON atomically (temp file + rename)."""
    doc = checkpoint_document(net, adam)
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Load (net, adam_state) from a checkpoint file written by save_checkpoint."""
    with open(path, "r") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(
            f"malformed checkpoint {path}: {exc.msg} at byte offset {exc.pos}"
        ) from exc
    try:
        return net_from_document(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint {path}: {exc}") from exc
