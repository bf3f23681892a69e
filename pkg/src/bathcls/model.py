"""The DECUSR classifier and its lightweight DECUSR-L variant as layer graphs.

A :class:`ModelGraph` is a topologically ordered list of :class:`Node`
objects. Each node reads the outputs of earlier nodes by name, so dense
(concatenation) connectivity is just a node with several inputs.

Pooling halves the resolution after each repeating block, while dense
connectivity wants every earlier block output at the current resolution.
Earlier outputs are therefore aligned with parameter-free ``skip_pool``
nodes (repeated 2x2 max pooling) before concatenation. These are not
counted as the optional pooling layers.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn

VARIANTS = ("decusr", "decusr_l")
PUBLISHED_PARAM_COUNTS = {"decusr": 45_122, "decusr_l": 11_138}
WEIGHT_MAGIC = b"BWT1"
WEIGHT_VERSION = 1


class WeightFormatError(ValueError):
    pass


class FingerprintMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "decusr_l"
    feb_filters: tuple = (16, 8, 8, 8)
    rb_count: int = 3
    rb_filters: int = 8
    rb_depth: int = 2
    kernel_size: int = 3
    activation: str = "relu"
    use_maxpool: bool = True
    use_batchnorm: bool = False
    input_size: int = 256
    input_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "feb_filters", tuple(int(f) for f in self.feb_filters))
        object.__setattr__(self, "activation", nn.ActivationKind(self.activation).value)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if len(self.feb_filters) != 4:
            raise ValueError("feb_filters must list exactly 4 channel counts")
        if min(self.feb_filters) < 1 or self.rb_filters < 1 or self.input_channels < 1:
            raise ValueError("all filter counts must be >= 1")
        if self.rb_count < 1:
            raise ValueError("rb_count must be >= 1")
        if self.rb_depth < 1:
            raise ValueError("rb_depth must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if self.input_size < 1:
            raise ValueError("input_size must be >= 1")

    def canonical(self) -> str:
        d = asdict(self)
        d["feb_filters"] = list(self.feb_filters)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> int:
        digest = hashlib.sha256(self.canonical().encode()).digest()
        return int.from_bytes(digest[:8], "little")


class Node:
    """One layer in the graph. Subclasses fill in ``forward``/``backward``."""

    kind = "node"

    def __init__(self, name: str, inputs: list[str]):
        self.name = name
        self.inputs = inputs
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.need_input_grad = True
        self._cache = None

    def forward(self, xs, training: bool, update_stats: bool = True):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r} <- {self.inputs})"


class InputNode(Node):
    kind = "input"

    def __init__(self, name):
        super().__init__(name, [])


class ConvNode(Node):
    kind = "conv"

    def __init__(self, name, inp, cin, cout, k, activation, seed):
        super().__init__(name, [inp])
        self.activation = activation
        fan_in, fan_out = k * k * cin, k * k * cout
        self.params["kernel"] = nn.seeded_init((k, k, cin, cout), fan_in, fan_out, seed)
        self.params["bias"] = np.zeros(cout, dtype=np.float32)

    def forward(self, xs, training, update_stats=True):
        y, conv_cache = nn.conv2d_forward(xs[0], self.params["kernel"], self.params["bias"])
        act_cache = None
        if self.activation is not None:
            y, act_cache = nn.activate(self.activation, y)
        self._cache = (conv_cache, act_cache)
        return y

    def backward(self, dy):
        conv_cache, act_cache = self._cache
        if act_cache is not None:
            dy = nn.activate_backward(dy, act_cache)
        dx, dw, db = nn.conv2d_backward(dy, conv_cache, need_dx=self.need_input_grad)
        self.grads["kernel"], self.grads["bias"] = dw, db
        return [dx]


class MaxPoolNode(Node):
    kind = "maxpool"

    def __init__(self, name, inp, times: int = 1):
        super().__init__(name, [inp])
        self.times = times

    def forward(self, xs, training, update_stats=True):
        x, caches = xs[0], []
        for _ in range(self.times):
            x, c = nn.maxpool2d_forward(x)
            caches.append(c)
        self._cache = caches
        return x

    def backward(self, dy):
        for c in reversed(self._cache):
            dy = nn.maxpool2d_backward(dy, c)
        return [dy]


class SkipPoolNode(MaxPoolNode):
    """Resolution alignment for a dense skip connection."""

    kind = "skip_pool"


class BatchNormNode(Node):
    kind = "batchnorm"

    def __init__(self, name, inp, channels):
        super().__init__(name, [inp])
        self.params["gamma"] = np.ones(channels, dtype=np.float32)
        self.params["beta"] = np.zeros(channels, dtype=np.float32)
        self.state["moving_mean"] = np.zeros(channels, dtype=np.float32)
        self.state["moving_variance"] = np.ones(channels, dtype=np.float32)

    def forward(self, xs, training, update_stats=True):
        y, self._cache = nn.batchnorm_forward(
            xs[0],
            self.params["gamma"],
            self.params["beta"],
            self.state["moving_mean"],
            self.state["moving_variance"],
            training,
            update_stats=update_stats,
        )
        return y

    def backward(self, dy):
        dx, dg, db = nn.batchnorm_backward(dy, self._cache)
        self.grads["gamma"], self.grads["beta"] = dg, db
        return [dx]


class UpsampleNode(Node):
    """Nearest-neighbour replication by an integer factor."""

    kind = "upsample"

    def __init__(self, name, inp, scale: int = 1):
        super().__init__(name, [inp])
        self.scale = scale

    def forward(self, xs, training, update_stats=True):
        s = self.scale
        return xs[0] if s == 1 else xs[0].repeat(s, axis=1).repeat(s, axis=2)

    def backward(self, dy):
        s = self.scale
        if s == 1:
            return [dy]
        n, h, w, c = dy.shape
        return [dy.reshape(n, h // s, s, w // s, s, c).sum(axis=(2, 4))]


class ConcatNode(Node):
    kind = "concat"

    def forward(self, xs, training, update_stats=True):
        y, self._cache = nn.concat_channels(xs)
        return y

    def backward(self, dy):
        return nn.concat_backward(dy, self._cache)


class FlattenNode(Node):
    kind = "flatten"

    def forward(self, xs, training, update_stats=True):
        self._cache = xs[0].shape
        return nn.flatten(xs[0])

    def backward(self, dy):
        return [dy.reshape(self._cache)]


class DenseNode(Node):
    kind = "dense"

    def __init__(self, name, inp, d, units, activation, seed):
        super().__init__(name, [inp])
        self.activation = activation
        self.params["kernel"] = nn.seeded_init((d, units), d, units, seed)
        self.params["bias"] = np.zeros(units, dtype=np.float32)

    def forward(self, xs, training, update_stats=True):
        z, dense_cache = nn.dense_forward(xs[0], self.params["kernel"], self.params["bias"])
        y, act_cache = nn.activate(self.activation, z)
        self._cache = (dense_cache, act_cache)
        return y

    def backward(self, dy):
        dense_cache, act_cache = self._cache
        dx, dw, db = nn.dense_backward(nn.activate_backward(dy, act_cache), dense_cache)
        self.grads["kernel"], self.grads["bias"] = dw, db
        return [dx]


@dataclass
class WeightSnapshot:
    tensors: dict
    fingerprint: int

    def copy(self) -> "WeightSnapshot":
        return WeightSnapshot({k: v.copy() for k, v in self.tensors.items()}, self.fingerprint)


@dataclass
class ModelGraph:
    config: ModelConfig
    nodes: list
    shapes: dict = field(default_factory=dict)
    training: bool = False

    @property
    def output_name(self) -> str:
        return self.nodes[-1].name

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def count(self, kind: str) -> int:
        return sum(1 for n in self.nodes if n.kind == kind)

    @property
    def dtype(self):
        return self.nodes[-1].params["kernel"].dtype

    def astype(self, dtype) -> "ModelGraph":
        """Cast all parameters and state in place (float64 for gradient checks)."""
        for n in self.nodes:
            for d in (n.params, n.state):
                for k in d:
                    d[k] = d[k].astype(dtype)
        return self

    def named_parameters(self, include_state: bool = True) -> dict:
        out = {}
        for n in self.nodes:
            for k, v in n.params.items():
                out[f"{n.name}.{k}"] = v
            if include_state:
                for k, v in n.state.items():
                    out[f"{n.name}.{k}"] = v
        return out

    def named_gradients(self) -> dict:
        return {f"{n.name}.{k}": n.grads[k] for n in self.nodes for k in n.params}

    def forward(self, batch: np.ndarray, training: bool = False, update_stats: bool = True) -> np.ndarray:
        cfg = self.config
        expected = (cfg.input_size, cfg.input_size, cfg.input_channels)
        if batch.ndim != 4 or batch.shape[1:] != expected:
            raise nn.ShapeError(f"expected batch of shape [N, {expected[0]}, {expected[1]}, {expected[2]}], got {batch.shape}")
        self.training = training
        values = {}
        for n in self.nodes:
            if n.kind == "input":
                values[n.name] = batch.astype(self.dtype, copy=False)
            else:
                values[n.name] = n.forward([values[i] for i in n.inputs], training, update_stats)
        return values[self.output_name]

    def backward(self, dout: np.ndarray, need_input_grad: bool = False):
        """Backpropagate ``dout`` (gradient w.r.t. the [N,1] scores).

        Parameter gradients land in each node's ``grads``. The gradient with
        respect to the input batch is returned only if ``need_input_grad``.
        """
        for n in self.nodes:
            if isinstance(n, ConvNode):
                n.need_input_grad = need_input_grad or n.inputs != ["input"]
        pending = {self.output_name: dout}
        for n in reversed(self.nodes):
            dy = pending.pop(n.name, None)
            if n.kind == "input":
                return dy
            if dy is None:
                raise RuntimeError(f"node {n.name} received no gradient")
            for src, dx in zip(n.inputs, n.backward(dy)):
                if dx is None:
                    continue
                if src in pending:
                    pending[src] = pending[src] + dx
                else:
                    pending[src] = dx
        raise RuntimeError("graph has no input node")

    def snapshot(self) -> WeightSnapshot:
        return WeightSnapshot({k: v.copy() for k, v in self.named_parameters().items()}, self.config.fingerprint())

    def load_snapshot(self, snap: WeightSnapshot) -> None:
        if snap.fingerprint != self.config.fingerprint():
            raise FingerprintMismatch(
                f"weights were produced for config {snap.fingerprint:#018x}, graph is {self.config.fingerprint():#018x}"
            )
        own = self.named_parameters()
        if set(own) != set(snap.tensors):
            raise FingerprintMismatch("weight names do not match the graph")
        for k, target in own.items():
            src = snap.tensors[k]
            if src.shape != target.shape:
                raise FingerprintMismatch(f"{k}: shape {src.shape} != {target.shape}")
            target[...] = src


class _Builder:
    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        self.nodes: list[Node] = []
        self.shapes: dict[str, tuple] = {}
        self._skip_cache: dict[tuple, str] = {}

    def _seed(self) -> int:
        return int(np.random.SeedSequence([self.seed, len(self.nodes)]).generate_state(1)[0])

    def add(self, node: Node, shape: tuple) -> str:
        self.nodes.append(node)
        self.shapes[node.name] = shape
        return node.name

    def conv(self, name, inp, cout, k=None, activation="default"):
        h, w, cin = self.shapes[inp]
        k = self.config.kernel_size if k is None else k
        act = self.config.activation if activation == "default" else activation
        return self.add(ConvNode(name, inp, cin, cout, k, act, self._seed()), (h, w, cout))

    def pool(self, name, inp, times=1, cls=MaxPoolNode):
        h, w, c = self.shapes[inp]
        for _ in range(times):
            if h < 2 or w < 2:
                raise ValueError(
                    f"pooling at {name} reduces spatial size below 1x1 for input_size {self.config.input_size}"
                )
            h, w = h // 2, w // 2
        return self.add(cls(name, inp, times), (h, w, c))

    def batchnorm(self, name, inp):
        return self.add(BatchNormNode(name, inp, self.shapes[inp][2]), self.shapes[inp])

    def upsample(self, name, inp, scale=1):
        h, w, c = self.shapes[inp]
        return self.add(UpsampleNode(name, inp, scale), (h * scale, w * scale, c))

    def align(self, src: str, target_hw: tuple) -> str:
        h, w, _ = self.shapes[src]
        times = 0
        while (h, w) != target_hw:
            if h < 2 or w < 2 or h < target_hw[0]:
                raise ValueError(f"cannot align {src} ({h}x{w}) to {target_hw}")
            h, w, times = h // 2, w // 2, times + 1
        if times == 0:
            return src
        key = (src, times)
        if key not in self._skip_cache:
            self._skip_cache[key] = self.pool(f"{src}_skip{times}", src, times, cls=SkipPoolNode)
        return self._skip_cache[key]

    def dense_concat(self, name: str, sources: list[str]) -> str:
        if len(sources) == 1:
            return sources[0]
        target = self.shapes[sources[-1]][:2]
        aligned = [self.align(s, target) for s in sources]
        c = sum(self.shapes[s][2] for s in aligned)
        return self.add(ConcatNode(name, aligned), target + (c,))


def build_model(config: ModelConfig, seed: int = 0) -> ModelGraph:
    """Instantiate the layer graph for ``config`` with seeded Glorot weights."""
    cfg = config
    b = _Builder(cfg, seed)
    x = b.add(InputNode("input"), (cfg.input_size, cfg.input_size, cfg.input_channels))

    h = x
    for i, f in enumerate(cfg.feb_filters, start=1):
        h = b.conv(f"feb{i}", h, f)

    if cfg.variant == "decusr":
        lfup = b.upsample("lfup_up", b.conv("lfup", h, cfg.rb_filters))
        ldup = b.upsample("ldup_up", b.conv("ldup", x, cfg.rb_filters))
        if cfg.use_maxpool:
            lfup = b.pool("lfup_pool", lfup)
        sources = [ldup, lfup]
    else:
        h = b.pool("feb_pool", h)
        h = b.batchnorm("feb_bn", h)
        sources = [h]

    for r in range(1, cfg.rb_count + 1):
        h = b.dense_concat(f"rb{r}_concat", sources)
        for d in range(1, cfg.rb_depth + 1):
            h = b.conv(f"rb{r}_conv{d}", h, cfg.rb_filters)
        if cfg.use_batchnorm:
            h = b.batchnorm(f"rb{r}_bn", h)
        if cfg.use_maxpool:
            h = b.pool(f"rb{r}_pool", h)
        sources.append(h)

    h = b.dense_concat("head_concat", sources)
    h = b.conv("head_conv", h, 1, k=1, activation=None)
    hh, ww, cc = b.shapes[h]
    h = b.add(FlattenNode("flatten", [h]), (hh * ww * cc,))
    b.add(DenseNode("dense", h, hh * ww * cc, 1, "sigmoid", b._seed()), (1,))
    return ModelGraph(cfg, b.nodes, b.shapes)


def count_params(graph: ModelGraph) -> int:
    """All parameter elements, including batch-norm moving statistics."""
    return int(sum(v.size for v in graph.named_parameters(include_state=True).values()))


# -- weight files -----------------------------------------------------------


def save_weights(graph: ModelGraph, path) -> WeightSnapshot:
    snap = graph.snapshot()
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<IQI", WEIGHT_VERSION, snap.fingerprint, len(snap.tensors)))
        for name, arr in snap.tensors.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return snap


def read_weights(path) -> WeightSnapshot:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise WeightFormatError(f"{path}: truncated weight file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != WEIGHT_MAGIC:
        raise WeightFormatError(f"{path}: bad magic, not a weight file")
    version, fingerprint, count = struct.unpack("<IQI", take(16))
    if version != WEIGHT_VERSION:
        raise WeightFormatError(f"{path}: unsupported format version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims)) if ndim else 1
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(data):
        raise WeightFormatError(f"{path}: trailing bytes after last tensor")
    return WeightSnapshot(tensors, fingerprint)


def load_weights(graph: ModelGraph, path) -> WeightSnapshot:
    snap = read_weights(path)
    graph.load_snapshot(snap)
    return snap
