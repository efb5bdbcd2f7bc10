"""U-Net generator and PatchGAN discriminator construction and execution.

Generators are pruned U-Nets: a stride-2 conv encoder, a stride-2 deconv
decoder, skip concatenations from each encoder layer into the matching
decoder layer, and (for the inpainting role) a spatial attention layer on
the decoder input three steps before the output. A uniform width-scale
knob shrinks every filter count for desk-scale runs.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .attention import AttentionConfig, attend
from .tensor import (
    ConvParams,
    DimensionError,
    Tensor,
    activation,
    concat,
    conv2d,
    instance_norm,
    transposed_conv2d,
)

INSTANCE_NORM_EPS = 1e-5
WEIGHT_INIT_STD = 0.02

CHECKPOINT_MAGIC = b"LBPI"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One conv or deconv stage with its wiring."""

    name: str
    kind: str  # "conv" | "deconv"
    filters: int
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    norm: bool = False
    pre_activation: str = ""
    concat_source: str = ""
    attention: bool = False
    post_activation: str = ""


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack plus the input channel count."""

    layers: tuple
    in_channels: int
    width_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not 0 < self.width_scale <= 1:
            raise ValueError(f"width_scale must lie in (0, 1], got {self.width_scale}")
        seen = set()
        attention_count = 0
        for layer in self.layers:
            if layer.kind not in ("conv", "deconv"):
                raise ValueError(f"unknown layer kind {layer.kind!r}")
            if layer.filters < 1:
                raise ValueError(f"layer {layer.name} has no filters")
            if layer.concat_source and layer.concat_source not in seen:
                raise ValueError(
                    f"layer {layer.name} concatenates {layer.concat_source!r}, "
                    "which is not an earlier layer"
                )
            if layer.attention:
                attention_count += 1
                if layer.kind != "deconv":
                    raise ValueError("attention may only decorate a decoder (deconv) layer")
            seen.add(layer.name)
        if attention_count > 1:
            raise ValueError("at most one attention layer is allowed")

    @property
    def encoder_depth(self):
        return sum(1 for l in self.layers if l.kind == "conv" and l.stride == 2)

    def has_attention(self):
        return any(l.attention for l in self.layers)

    def channel_trace(self):
        """Yield (input_channels, layer) pairs, accounting for skip concats."""
        out_by_name = {}
        current = self.in_channels
        for layer in self.layers:
            cin = current
            if layer.concat_source:
                cin = current + out_by_name[layer.concat_source]
            out_by_name[layer.name] = layer.filters
            current = layer.filters
            yield cin, layer

    def parameter_shapes(self):
        shapes = {}
        for cin, layer in self.channel_trace():
            k = layer.kernel
            if layer.kind == "conv":
                shapes[f"{layer.name}.weight"] = (layer.filters, cin, k, k)
            else:
                shapes[f"{layer.name}.weight"] = (cin, layer.filters, k, k)
            shapes[f"{layer.name}.bias"] = (layer.filters,)
        return shapes


class ModelState:
    """Named parameter tensors for one network."""

    def __init__(self, params):
        self.params = dict(params)

    def set_requires_grad(self, flag):
        for t in self.params.values():
            t.requires_grad = bool(flag)

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()

    def copy(self):
        return ModelState(
            {n: Tensor(t.data.copy(), requires_grad=t.requires_grad) for n, t in self.params.items()}
        )


def scaled_filters(base, width_scale):
    return max(1, math.ceil(base * width_scale))


def _encoder_ladder(depth):
    return [min(64 * 2 ** i, 512) for i in range(depth)]


def build_generator(role, width_scale=1.0, depth=8, seed=0, with_attention=True):
    """U-Net generator spec and freshly initialized state.

    role "lbp": inputs are (code plane, mask) -> 2 channels, 1 output channel.
    role "inpaint": inputs are (image, code plane, mask) -> 5 channels,
    3 output channels, attention on the decoder layer 3 steps before the end
    (unless with_attention is False, the ablation variant).
    """
    if role not in ("lbp", "inpaint"):
        raise ValueError(f"unknown generator role {role!r}")
    if depth < 3:
        raise ValueError(f"generator depth must be >= 3, got {depth}")
    in_channels = 2 if role == "lbp" else 5
    out_channels = 1 if role == "lbp" else 3
    enc = _encoder_ladder(depth)
    layers = []
    for k in range(depth):
        layers.append(
            LayerSpec(
                name=f"enc{k + 1}",
                kind="conv",
                filters=scaled_filters(enc[k], width_scale),
                norm=0 < k < depth - 1,
                pre_activation="" if k == 0 else "leaky_relu",
            )
        )
    for k in range(depth):
        last = k == depth - 1
        layers.append(
            LayerSpec(
                name=f"dec{k + 1}",
                kind="deconv",
                filters=out_channels if last else scaled_filters(enc[depth - 2 - k], width_scale),
                norm=not last,
                pre_activation="relu",
                concat_source=f"enc{depth - k}" if k >= 1 else "",
                attention=role == "inpaint" and with_attention and k == depth - 3,
                post_activation="tanh" if last else "",
            )
        )
    spec = NetworkSpec(tuple(layers), in_channels, width_scale)
    return spec, init_state(spec, seed)


def build_discriminator(width_scale=1.0, in_channels=3, seed=0, depth=5):
    """PatchGAN: stride-2 convs ending in a sigmoid score grid.

    The standard form is 5 layers (64/128/256/512/1); smaller depths keep
    the same ladder prefix and exist for inputs below 32 pixels.
    """
    if not 2 <= depth <= 5:
        raise ValueError(f"discriminator depth must be in [2, 5], got {depth}")
    ladder = (64, 128, 256, 512)[: depth - 1]
    layers = []
    for k, base in enumerate(ladder):
        layers.append(
            LayerSpec(
                name=f"disc{k + 1}",
                kind="conv",
                filters=scaled_filters(base, width_scale),
                norm=k > 0,
                pre_activation="" if k == 0 else "leaky_relu",
            )
        )
    layers.append(
        LayerSpec(
            name=f"disc{depth}",
            kind="conv",
            filters=1,
            norm=False,
            pre_activation="leaky_relu",
            post_activation="sigmoid",
        )
    )
    spec = NetworkSpec(tuple(layers), in_channels, width_scale)
    return spec, init_state(spec, seed)


def init_state(spec, seed=0):
    """Zero-mean normal (std 0.02) weights, zero biases."""
    rng = np.random.default_rng((0xAB, seed))
    params = {}
    for name, shape in spec.parameter_shapes().items():
        if name.endswith(".weight"):
            params[name] = Tensor(rng.normal(0.0, WEIGHT_INIT_STD, shape), requires_grad=True)
        else:
            params[name] = Tensor(np.zeros(shape), requires_grad=True)
    return ModelState(params)


def forward(spec, state, x, mask=None, attention_cfg=None, collect_features=False):
    """Run the network; optionally also return every layer's feature map.

    The mask is required exactly when the spec carries an attention layer.
    Generator inputs must be divisible by 2^depth so the decoder can restore
    the resolution.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"forward expects rank-4 input, got {x.shape}")
    if x.data.shape[1] != spec.in_channels:
        raise DimensionError(
            f"input has {x.data.shape[1]} channels, spec expects {spec.in_channels}", axis=1
        )
    if spec.has_attention():
        if mask is None:
            raise ValueError("this network has an attention layer and needs a mask")
    is_generator = any(l.kind == "deconv" for l in spec.layers)
    if is_generator:
        factor = 2 ** spec.encoder_depth
        if x.data.shape[2] % factor or x.data.shape[3] % factor:
            raise DimensionError(
                f"generator input {x.data.shape[2]}x{x.data.shape[3]} must be divisible by {factor}",
                axis=2,
            )
    cfg = attention_cfg or AttentionConfig()
    outputs = {}
    features = []
    h = x
    for layer in spec.layers:
        inp = h
        if layer.concat_source:
            inp = concat([h, outputs[layer.concat_source]], axis=1)
        if layer.attention:
            inp = attend(inp, mask, cfg)
        if layer.pre_activation:
            inp = activation(inp, layer.pre_activation)
        p = ConvParams(layer.filters, layer.kernel, layer.stride, layer.padding)
        w = state.params[f"{layer.name}.weight"]
        b = state.params[f"{layer.name}.bias"]
        h = conv2d(inp, w, b, p) if layer.kind == "conv" else transposed_conv2d(inp, w, b, p)
        if layer.norm:
            h = instance_norm(h, INSTANCE_NORM_EPS)
        if layer.post_activation:
            h = activation(h, layer.post_activation)
        outputs[layer.name] = h
        features.append(h)
    if collect_features:
        return h, features
    return h


# -- serialization --------------------------------------------------------


def spec_to_dict(spec):
    return {
        "in_channels": spec.in_channels,
        "width_scale": spec.width_scale,
        "layers": [asdict(l) for l in spec.layers],
    }


def spec_from_dict(d):
    layers = tuple(LayerSpec(**entry) for entry in d["layers"])
    return NetworkSpec(layers, d["in_channels"], d["width_scale"])


def save_checkpoint(path, models):
    """Write named (spec, state) pairs: magic, version, manifest, raw blobs."""
    manifest = {"models": {}}
    blobs = []
    for name, (spec, state) in models.items():
        entries = []
        for pname, tensor in state.params.items():
            entries.append({"name": pname, "shape": list(tensor.data.shape)})
            blobs.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
        manifest["models"][name] = {"spec": spec_to_dict(spec), "params": entries}
    payload = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint, validating parameter shapes against each spec."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (length,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(length).decode("utf-8"))
        models = {}
        for name, entry in manifest["models"].items():
            spec = spec_from_dict(entry["spec"])
            expected = spec.parameter_shapes()
            params = {}
            for pentry in entry["params"]:
                pname = pentry["name"]
                shape = tuple(pentry["shape"])
                if pname not in expected:
                    raise ValueError(f"checkpoint parameter {pname!r} not in spec for {name!r}")
                if expected[pname] != shape:
                    raise ValueError(
                        f"checkpoint shape {shape} for {pname!r} does not match spec {expected[pname]}"
                    )
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * 8)
                if len(raw) != count * 8:
                    raise ValueError("checkpoint truncated")
                data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
                params[pname] = Tensor(data, requires_grad=True)
            if set(params) != set(expected):
                missing = sorted(set(expected) - set(params))
                raise ValueError(f"checkpoint for {name!r} is missing parameters: {missing}")
            models[name] = (spec, ModelState(params))
    return models
