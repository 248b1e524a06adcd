"""Minimal CNN engine: a static layer DAG with exact reverse-mode gradients.

Arrays are batched NHWC. The engine is dtype-flexible: float32 for inference
and training, float64 for finite-difference testing. Only conv2d layers carry
parameters; everything else is a fixed linear or pointwise operator whose
backward pass is its transpose or elementwise chain rule.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgcore
from .errors import CorruptFileError, GraphValidationError, InvalidInputError

LAYER_KINDS = (
    "conv2d",
    "activation",
    "upsample2x_bilinear",
    "avgpool2x",
    "concat",
    "add",
    "space_to_depth",
    "bilateral_slice",
)
ACTIVATIONS = ("relu", "sigmoid", "tanh", "softmax")

WEIGHTS_MAGIC = b"LWE1"
WEIGHTS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 0
    in_channels: int = 0
    out_channels: int = 0
    stride: int = 1
    activation: str = ""
    grid: tuple[int, int, int] = imgcore.DEFAULT_GRID
    sigma_r: float | None = None


@dataclass(frozen=True)
class Node:
    name: str
    spec: LayerSpec
    inputs: tuple[str, ...]

    def __init__(self, name: str, spec: LayerSpec, inputs):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "inputs", tuple(inputs))


def conv3(cin: int, cout: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", kernel=3, in_channels=cin, out_channels=cout, stride=stride)


def conv1(cin: int, cout: int) -> LayerSpec:
    return LayerSpec("conv2d", kernel=1, in_channels=cin, out_channels=cout)


def act(name: str) -> LayerSpec:
    return LayerSpec("activation", activation=name)


class NetworkGraph:
    """Topologically ordered DAG of layers with static channel checking.

    inputs maps graph-input names to channel counts; outputs lists node names
    whose values forward() returns.
    """

    def __init__(self, nodes: list[Node], inputs: dict[str, int], outputs: list[str]):
        self.nodes = list(nodes)
        self.inputs = dict(inputs)
        self.outputs = list(outputs)
        self.channels: dict[str, int] = dict(inputs)
        self._validate()

    def _validate(self) -> None:
        seen = set(self.inputs)
        for node in self.nodes:
            if node.name in seen:
                raise GraphValidationError(f"duplicate node name: {node.name}")
            spec = node.spec
            if spec.kind not in LAYER_KINDS:
                raise GraphValidationError(f"{node.name}: unknown layer kind {spec.kind!r}")
            for src in node.inputs:
                if src not in seen:
                    raise GraphValidationError(
                        f"edge {src}->{node.name}: producer undefined or out of order"
                    )
            cin = [self.channels[src] for src in node.inputs]
            self.channels[node.name] = self._infer(node, cin)
            seen.add(node.name)
        for out in self.outputs:
            if out not in self.channels or out in self.inputs:
                raise GraphValidationError(f"output {out!r} is not a node")

    def _infer(self, node: Node, cin: list[int]) -> int:
        spec = node.spec
        name = node.name

        def need(n):
            if len(node.inputs) != n:
                raise GraphValidationError(f"{name}: expected {n} input(s), got {len(node.inputs)}")

        if spec.kind == "conv2d":
            need(1)
            if spec.kernel not in (1, 3):
                raise GraphValidationError(f"{name}: conv kernel must be 1 or 3")
            if spec.stride not in (1, 2):
                raise GraphValidationError(f"{name}: conv stride must be 1 or 2")
            if cin[0] != spec.in_channels:
                raise GraphValidationError(
                    f"edge {node.inputs[0]}->{name}: expected {spec.in_channels} channels, got {cin[0]}"
                )
            return spec.out_channels
        if spec.kind == "activation":
            need(1)
            if spec.activation not in ACTIVATIONS:
                raise GraphValidationError(f"{name}: unknown activation {spec.activation!r}")
            return cin[0]
        if spec.kind in ("upsample2x_bilinear", "avgpool2x"):
            need(1)
            return cin[0]
        if spec.kind == "concat":
            if len(node.inputs) < 2:
                raise GraphValidationError(f"{name}: concat needs >= 2 inputs")
            return sum(cin)
        if spec.kind == "add":
            if len(node.inputs) < 2:
                raise GraphValidationError(f"{name}: add needs >= 2 inputs")
            if len(set(cin)) != 1:
                raise GraphValidationError(f"{name}: add inputs disagree on channels: {cin}")
            return cin[0]
        if spec.kind == "space_to_depth":
            need(1)
            return cin[0] * 4
        if spec.kind == "bilateral_slice":
            need(2)
            if cin[0] != 1 or cin[1] != 1:
                raise GraphValidationError(
                    f"{name}: bilateral_slice wants 1-channel (lowres, guide), got {cin}"
                )
            return 1
        raise AssertionError(spec.kind)

    def conv_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.spec.kind == "conv2d"]


def param_count(graph: NetworkGraph) -> int:
    total = 0
    for n in graph.conv_nodes():
        s = n.spec
        total += s.kernel * s.kernel * s.in_channels * s.out_channels + s.out_channels
    return total


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

@dataclass
class WeightStore:
    """Named tensors in graph order: <node>/kernel (kh,kw,cin,cout), <node>/bias (cout,)."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def astype(self, dtype) -> "WeightStore":
        return WeightStore({k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self.tensors.items()})


def init_weights(graph: NetworkGraph, seed: int = 0, dtype=np.float32) -> WeightStore:
    """He-uniform for convs feeding a relu, Xavier-uniform otherwise; zero biases."""
    relu_fed = set()
    for node in graph.nodes:
        if node.spec.kind == "activation" and node.spec.activation == "relu":
            relu_fed.update(node.inputs)
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for node in graph.conv_nodes():
        s = node.spec
        fan_in = s.kernel * s.kernel * s.in_channels
        fan_out = s.kernel * s.kernel * s.out_channels
        if node.name in relu_fed:
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        shape = (s.kernel, s.kernel, s.in_channels, s.out_channels)
        tensors[f"{node.name}/kernel"] = rng.uniform(-limit, limit, shape).astype(dtype)
        tensors[f"{node.name}/bias"] = np.zeros(s.out_channels, dtype=dtype)
    return WeightStore(tensors)


def save_weights(store: WeightStore, path) -> None:
    layers = []
    blob = bytearray()
    for name, tensor in store.tensors.items():
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        layers.append({"name": name, "shape": list(arr.shape), "byte_offset": len(blob)})
        blob += arr.tobytes()
    header = json.dumps(
        {"format_version": WEIGHTS_FORMAT_VERSION, "layers": layers},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(bytes(blob))


def load_weights(path) -> WeightStore:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != WEIGHTS_MAGIC:
        raise CorruptFileError(f"{path}: not a weights file")
    (header_len,) = struct.unpack("<I", data[4:8])
    if 8 + header_len > len(data):
        raise CorruptFileError(f"{path}: truncated header")
    try:
        header = json.loads(data[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: bad header: {exc}") from None
    if header.get("format_version") != WEIGHTS_FORMAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported format version")
    blob = data[8 + header_len:]
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for layer in header.get("layers", []):
        try:
            name, shape, byte_offset = layer["name"], tuple(layer["shape"]), layer["byte_offset"]
        except (KeyError, TypeError) as exc:
            raise CorruptFileError(f"{path}: bad layer record: {exc}") from None
        nbytes = int(np.prod(shape)) * 4
        if byte_offset != offset or byte_offset + nbytes > len(blob):
            raise CorruptFileError(f"{path}: layer {name}: offset/shape disagree with blob")
        arr = np.frombuffer(blob[byte_offset:byte_offset + nbytes], dtype="<f4").reshape(shape)
        if not np.isfinite(arr).all():
            raise CorruptFileError(f"{path}: layer {name}: non-finite values")
        tensors[name] = arr.copy()
        offset += nbytes
    if offset != len(blob):
        raise CorruptFileError(f"{path}: blob length disagrees with header")
    return WeightStore(tensors)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _runtime_error(node: Node, msg: str) -> GraphValidationError:
    edges = ", ".join(f"{src}->{node.name}" for src in node.inputs)
    return GraphValidationError(f"{msg} (at {edges})")


def _conv_forward(x, kernel, bias, stride):
    kh = kernel.shape[0]
    pad = (kh - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="edge") if pad else x
    n, h, w, _ = x.shape
    ho = -(-h // stride)
    wo = -(-w // stride)
    cout = kernel.shape[3]
    out = np.zeros((n, ho, wo, cout), dtype=np.result_type(x, kernel))
    for dy in range(kh):
        for dx in range(kh):
            sl = xp[:, dy:dy + stride * (ho - 1) + 1:stride,
                    dx:dx + stride * (wo - 1) + 1:stride, :]
            # matmul on the strided view skips the copy a flat reshape would force
            out += sl @ kernel[dy, dx]
    return out + bias


def _conv_backward(x, kernel, stride, g):
    kh = kernel.shape[0]
    pad = (kh - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="edge") if pad else x
    n, ho, wo, cout = g.shape
    g2 = g.reshape(-1, cout)
    dk = np.zeros_like(kernel)
    dxp = np.zeros_like(xp)
    for dy in range(kh):
        for dx in range(kh):
            rows = slice(dy, dy + stride * (ho - 1) + 1, stride)
            cols = slice(dx, dx + stride * (wo - 1) + 1, stride)
            sl = xp[:, rows, cols, :]
            dk[dy, dx] = sl.reshape(-1, sl.shape[3]).T.dot(g2)
            dxp[:, rows, cols, :] += g2.dot(kernel[dy, dx].T).reshape(sl.shape)
    db = g.sum(axis=(0, 1, 2))
    if pad:
        # transpose of edge-clamp padding: fold borders inward
        dxp[:, 1, :, :] += dxp[:, 0, :, :]
        dxp[:, -2, :, :] += dxp[:, -1, :, :]
        dxp[:, :, 1, :] += dxp[:, :, 0, :]
        dxp[:, :, -2, :] += dxp[:, :, -1, :]
        dx = dxp[:, 1:-1, 1:-1, :]
    else:
        dx = dxp
    return dx, dk, db


def _act_forward(x, kind):
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if kind == "tanh":
        return np.tanh(x)
    if kind == "softmax":
        e = np.exp(x - x.max(axis=3, keepdims=True))
        return e / e.sum(axis=3, keepdims=True)
    raise AssertionError(kind)


def _act_backward(x, y, kind, g):
    if kind == "relu":
        return g * (x > 0)
    if kind == "sigmoid":
        return g * y * (1.0 - y)
    if kind == "tanh":
        return g * (1.0 - y * y)
    if kind == "softmax":
        return y * (g - (g * y).sum(axis=3, keepdims=True))
    raise AssertionError(kind)


def _lin_taps(n_out: int, n_in: int):
    src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def _upsample_forward(x):
    n, h, w, c = x.shape
    y0, y1, wy = _lin_taps(2 * h, h)
    x0, x1, wx = _lin_taps(2 * w, w)
    wy = wy.astype(x.dtype)[None, :, None, None]
    wx = wx.astype(x.dtype)[None, None, :, None]
    rows = x[:, y0] * (1 - wy) + x[:, y1] * wy
    return rows[:, :, x0] * (1 - wx) + rows[:, :, x1] * wx


def _upsample_backward(in_shape, g):
    n, h, w, c = in_shape
    y0, y1, wy = _lin_taps(2 * h, h)
    x0, x1, wx = _lin_taps(2 * w, w)
    wyc = wy.astype(g.dtype)[None, :, None, None]
    wxc = wx.astype(g.dtype)[None, None, :, None]
    drows = np.zeros((n, 2 * h, w, c), dtype=g.dtype)
    np.add.at(drows, (slice(None), slice(None), x0), g * (1 - wxc))
    np.add.at(drows, (slice(None), slice(None), x1), g * wxc)
    dx = np.zeros(in_shape, dtype=g.dtype)
    np.add.at(dx, (slice(None), y0), drows * (1 - wyc))
    np.add.at(dx, (slice(None), y1), drows * wyc)
    return dx


def _s2d_forward(x):
    n, h, w, c = x.shape
    return (x.reshape(n, h // 2, 2, w // 2, 2, c)
             .transpose(0, 1, 3, 2, 4, 5)
             .reshape(n, h // 2, w // 2, 4 * c))


def _s2d_backward(in_shape, g):
    n, h, w, c = in_shape
    return (g.reshape(n, h // 2, w // 2, 2, 2, c)
             .transpose(0, 1, 3, 2, 4, 5)
             .reshape(in_shape))


def forward(graph: NetworkGraph, weights: WeightStore, inputs: dict[str, np.ndarray],
            keep_cache: bool = False):
    """Evaluate the graph on a batch of NHWC inputs.

    Returns {output_name: array}, or (outputs, cache) with keep_cache=True.
    """
    values: dict[str, np.ndarray] = {}
    for name, c in graph.inputs.items():
        if name not in inputs:
            raise InvalidInputError(f"missing graph input {name!r}")
        x = inputs[name]
        if x.ndim != 4 or x.shape[3] != c:
            raise InvalidInputError(f"input {name!r} must be (N, H, W, {c}), got {x.shape}")
        values[name] = x
    aux: dict[str, object] = {}

    for node in graph.nodes:
        xs = [values[s] for s in node.inputs]
        spec = node.spec
        if spec.kind == "conv2d":
            y = _conv_forward(xs[0], weights[f"{node.name}/kernel"],
                              weights[f"{node.name}/bias"], spec.stride)
        elif spec.kind == "activation":
            y = _act_forward(xs[0], spec.activation)
        elif spec.kind == "upsample2x_bilinear":
            y = _upsample_forward(xs[0])
        elif spec.kind == "avgpool2x":
            n, h, w, c = xs[0].shape
            if h % 2 or w % 2:
                raise _runtime_error(node, f"avgpool2x needs even dims, got {h}x{w}")
            y = xs[0].reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
        elif spec.kind == "concat":
            hw = {x.shape[:3] for x in xs}
            if len(hw) != 1:
                raise _runtime_error(node, f"concat spatial mismatch: {sorted(hw)}")
            y = np.concatenate(xs, axis=3)
        elif spec.kind == "add":
            if len({x.shape for x in xs}) != 1:
                raise _runtime_error(node, f"add shape mismatch: {[x.shape for x in xs]}")
            y = xs[0].copy()
            for other in xs[1:]:
                y += other
        elif spec.kind == "space_to_depth":
            n, h, w, c = xs[0].shape
            if h % 2 or w % 2:
                raise _runtime_error(node, f"space_to_depth needs even dims, got {h}x{w}")
            y = _s2d_forward(xs[0])
        elif spec.kind == "bilateral_slice":
            low, guide = xs
            outs, ctxs = [], []
            for i in range(low.shape[0]):
                o, ctx = imgcore.bilateral_upsample(
                    low[i, :, :, 0], guide[i, :, :, 0], spec.grid, spec.sigma_r,
                    return_context=True,
                )
                outs.append(o)
                ctxs.append(ctx)
            y = np.stack(outs)[:, :, :, None]
            aux[node.name] = ctxs
        else:
            raise AssertionError(spec.kind)
        values[node.name] = y

    outputs = {name: values[name] for name in graph.outputs}
    if keep_cache:
        return outputs, {"values": values, "aux": aux}
    return outputs


def backward(graph: NetworkGraph, weights: WeightStore, cache,
             out_grads: dict[str, np.ndarray]):
    """Reverse-mode pass. Returns (weight gradients, graph-input gradients).

    The guide port of bilateral_slice is treated as data: its gradient is zero.
    """
    if not isinstance(cache, dict) or "values" not in cache:
        raise InvalidInputError("backward requires the cache from forward(keep_cache=True)")
    values, aux = cache["values"], cache["aux"]

    grads: dict[str, np.ndarray] = {}
    for name, g in out_grads.items():
        if name not in graph.outputs:
            raise InvalidInputError(f"{name!r} is not a graph output")
        grads[name] = np.array(g, copy=True)

    wgrads = {}
    for node in graph.conv_nodes():
        for part in ("kernel", "bias"):
            key = f"{node.name}/{part}"
            wgrads[key] = np.zeros_like(weights[key])

    def send(name: str, g: np.ndarray) -> None:
        if name in grads:
            grads[name] += g
        else:
            grads[name] = g

    for node in reversed(graph.nodes):
        g = grads.get(node.name)
        if g is None:
            continue
        xs = [values[s] for s in node.inputs]
        spec = node.spec
        if spec.kind == "conv2d":
            dx, dk, db = _conv_backward(xs[0], weights[f"{node.name}/kernel"], spec.stride, g)
            wgrads[f"{node.name}/kernel"] += dk
            wgrads[f"{node.name}/bias"] += db
            send(node.inputs[0], dx)
        elif spec.kind == "activation":
            send(node.inputs[0], _act_backward(xs[0], values[node.name], spec.activation, g))
        elif spec.kind == "upsample2x_bilinear":
            send(node.inputs[0], _upsample_backward(xs[0].shape, g))
        elif spec.kind == "avgpool2x":
            up = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)
            send(node.inputs[0], up / 4.0)
        elif spec.kind == "concat":
            offsets = np.cumsum([x.shape[3] for x in xs])[:-1]
            for src, piece in zip(node.inputs, np.split(g, offsets, axis=3)):
                send(src, piece)
        elif spec.kind == "add":
            for src in node.inputs:
                send(src, g.copy())
        elif spec.kind == "space_to_depth":
            send(node.inputs[0], _s2d_backward(xs[0].shape, g))
        elif spec.kind == "bilateral_slice":
            ctxs = aux[node.name]
            dlow = np.stack([
                imgcore.bilateral_upsample_transpose(g[i, :, :, 0], ctxs[i])
                for i in range(g.shape[0])
            ])[:, :, :, None]
            send(node.inputs[0], dlow.astype(g.dtype))
            send(node.inputs[1], np.zeros_like(xs[1]))
        else:
            raise AssertionError(spec.kind)

    input_grads = {
        name: grads.get(name, np.zeros_like(values[name])) for name in graph.inputs
    }
    return WeightStore(wgrads), input_grads


# ---------------------------------------------------------------------------
# Reference subnets
# ---------------------------------------------------------------------------

def illumination_net(grid: tuple[int, int, int] = imgcore.DEFAULT_GRID) -> NetworkGraph:
    """Bright channel -> low-res illumination coefficients -> edge-aware upsample.

    Ends in a sigmoid so the sliced map stays in (0, 1).
    """
    nodes = [
        Node("pack", LayerSpec("space_to_depth"), ["bright"]),
        Node("enc1", conv3(4, 8), ["pack"]),
        Node("enc1_relu", act("relu"), ["enc1"]),
        Node("enc2", conv3(8, 8, stride=2), ["enc1_relu"]),
        Node("enc2_relu", act("relu"), ["enc2"]),
        Node("enc3", conv3(8, 4), ["enc2_relu"]),
        Node("enc3_relu", act("relu"), ["enc3"]),
        Node("coeff", conv1(4, 1), ["enc3_relu"]),
        Node("coeff_sig", act("sigmoid"), ["coeff"]),
        Node("L", LayerSpec("bilateral_slice", grid=grid), ["coeff_sig", "bright"]),
    ]
    return NetworkGraph(nodes, inputs={"bright": 1}, outputs=["L"])


def fusion_net() -> NetworkGraph:
    """9-channel (image, under, over) triple -> 3 softmax fusion weight maps."""
    nodes = [
        Node("f1", conv3(9, 6), ["triple"]),
        Node("f1_relu", act("relu"), ["f1"]),
        Node("pool", LayerSpec("avgpool2x"), ["f1_relu"]),
        Node("f2", conv3(6, 6), ["pool"]),
        Node("f2_relu", act("relu"), ["f2"]),
        Node("up", LayerSpec("upsample2x_bilinear"), ["f2_relu"]),
        Node("skip", LayerSpec("concat"), ["up", "f1_relu"]),
        Node("f3", conv3(12, 6), ["skip"]),
        Node("f3_relu", act("relu"), ["f3"]),
        Node("logits", conv1(6, 3), ["f3_relu"]),
        Node("W", act("softmax"), ["logits"]),
    ]
    return NetworkGraph(nodes, inputs={"triple": 9}, outputs=["W"])


def restoration_net() -> NetworkGraph:
    """Multi-branch noise estimator; branch depths 1/2/3 with cross-branch skips.

    Heads are linear so the predicted noise map is unbounded.
    """
    nodes = [
        Node("stem", conv3(3, 4), ["image"]),
        Node("b1a", conv3(4, 4), ["stem"]),
        Node("b1a_relu", act("relu"), ["b1a"]),
        Node("b2a", conv3(4, 4), ["stem"]),
        Node("b2a_relu", act("relu"), ["b2a"]),
        Node("b2_skip", LayerSpec("add"), ["b2a_relu", "b1a_relu"]),
        Node("b2b", conv3(4, 4), ["b2_skip"]),
        Node("b2b_relu", act("relu"), ["b2b"]),
        Node("b3a", conv3(4, 4), ["stem"]),
        Node("b3a_relu", act("relu"), ["b3a"]),
        Node("b3_skip1", LayerSpec("add"), ["b3a_relu", "b2a_relu"]),
        Node("b3b", conv3(4, 4), ["b3_skip1"]),
        Node("b3b_relu", act("relu"), ["b3b"]),
        Node("b3_skip2", LayerSpec("add"), ["b3b_relu", "b2b_relu"]),
        Node("b3c", conv3(4, 4), ["b3_skip2"]),
        Node("b3c_relu", act("relu"), ["b3c"]),
        Node("head1", conv1(4, 3), ["b1a_relu"]),
        Node("head2", conv1(4, 3), ["b2b_relu"]),
        Node("head3", conv1(4, 3), ["b3c_relu"]),
        Node("noise", LayerSpec("add"), ["head1", "head2", "head3"]),
    ]
    return NetworkGraph(nodes, inputs={"image": 3}, outputs=["noise"])
