"""W-Net and U-Net baselines as declarative layer graphs executed with torch.

A :class:`LayerGraph` lists every node (conv, batch-norm, relu, pool, up-conv,
concat, softmax) with its declared output shape ``(channels, rows, cols)``.
:class:`Network` interprets the graph and checks each produced tensor against
the declaration. All convolutions use same-padding, so every encoder branch
pools four times and all skip connections line up with the decoder scales.

Channel schedule with grey width C and RF width R:

* grey encoder block i: C * 2**(i-1); bottleneck: 16C
* each RF branch block i: R * 2**(i-1); blocks 1-2 use the branch kernel,
  blocks 3-4 use 3x3
* bottom fusion: 16C + 4 * 8R
* decoder scale s (s=4 coarsest): up-conv keeps its input width, concat with
  the grey skip (C * 2**(s-1)) and the four RF skips (R * 2**(s-1) each), then
  two 3x3 convs down to C * 2**(s-1)
* head: 1x1 conv to the class count, softmax
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import gabor

MODELS = ("wnet", "unet-grey", "unet-grey-rf")
RF_BRANCHES = ("7x3", "11x3", "21x5", "51x9")
DEPTH = 4


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    model: str = "wnet"
    base_channels: int = 16
    rf_base_channels: int = 4
    n_classes: int = 5
    rows: int = 256
    cols: int = 64
    branches: tuple[str, ...] = RF_BRANCHES

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.rows % 16 or self.cols % 16 or self.rows <= 0 or self.cols <= 0:
            raise ShapeError(f"input {self.rows}x{self.cols} must be divisible by 16")
        if self.base_channels < 1 or self.rf_base_channels < 1 or self.n_classes < 2:
            raise ValueError("channel counts must be positive and n_classes >= 2")
        for b in self.branches:
            if b not in gabor.BRANCHES:
                raise ValueError(f"unknown RF branch {b!r}")
        object.__setattr__(self, "branches", tuple(self.branches))

    def to_json(self) -> dict:
        d = asdict(self)
        d["branches"] = list(self.branches)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        if "branches" in doc:
            doc["branches"] = tuple(doc["branches"])
        return cls(**doc)


@dataclass(frozen=True)
class Node:
    name: str
    op: str
    inputs: tuple[str, ...]
    shape: tuple[int, int, int]
    kernel: tuple[int, int] | None = None
    in_channels: int = 0


@dataclass
class LayerGraph:
    config: ModelConfig
    nodes: list[Node] = field(default_factory=list)
    skips: list[tuple[str, str]] = field(default_factory=list)
    inputs: dict[str, str] = field(default_factory=dict)  # input node -> source ("grey", "rf", "grey+rf")

    def __post_init__(self):
        self._index = {n.name: n for n in self.nodes}

    def node(self, name: str) -> Node:
        return self._index[name]

    def __contains__(self, name) -> bool:
        return name in self._index

    def add(self, node: Node) -> Node:
        if node.name in self._index:
            raise ValueError(f"duplicate node {node.name!r}")
        self.nodes.append(node)
        self._index[node.name] = node
        return node

    @property
    def prefixes(self) -> list[str]:
        """Encoder branch prefixes: ``grey`` then ``rf<kernel>`` per RF branch."""
        out = ["grey"]
        if self.config.model == "wnet":
            out += [f"rf{b}" for b in self.config.branches]
        return out

    def block_names(self) -> list[str]:
        return [f"block{i}" for i in range(1, DEPTH + 1)]

    def block_output(self, prefix: str, block: str) -> str:
        return f"{prefix}.{block}.relu2"

    def validate(self) -> None:
        """Recompute every node's shape from its inputs; raise on mismatch."""
        seen: dict[str, tuple[int, int, int]] = {}
        for n in self.nodes:
            for i in n.inputs:
                if i not in seen:
                    raise ShapeError(f"{n.name}: input {i!r} not defined before use")
            shape = _infer_shape(n, [seen[i] for i in n.inputs])
            if shape != n.shape:
                raise ShapeError(f"{n.name}: declared {n.shape}, computed {shape}")
            seen[n.name] = shape
        for src, dst in self.skips:
            if seen[src][1:] != seen[dst][1:]:
                raise ShapeError(f"skip {src} -> {dst} joins unequal spatial shapes")


def _infer_shape(n: Node, ins: list[tuple[int, int, int]]) -> tuple[int, int, int]:
    if n.op == "input":
        return n.shape
    if n.op == "concat":
        spatial = {s[1:] for s in ins}
        if len(spatial) != 1:
            raise ShapeError(f"{n.name}: concat of unequal spatial shapes {sorted(spatial)}")
        return (sum(s[0] for s in ins), *ins[0][1:])
    (c, h, w), = ins
    if n.op == "conv":
        if n.in_channels != c:
            raise ShapeError(f"{n.name}: expects {n.in_channels} input channels, got {c}")
        return (n.shape[0], h, w)
    if n.op in ("bn", "relu", "softmax"):
        return (c, h, w)
    if n.op == "pool":
        if h % 2 or w % 2:
            raise ShapeError(f"{n.name}: cannot 2x2-pool odd shape {h}x{w}")
        return (c, h // 2, w // 2)
    if n.op == "upconv":
        return (n.shape[0], 2 * h, 2 * w)
    raise ValueError(f"unknown op {n.op!r}")


class _Builder:
    def __init__(self, graph: LayerGraph):
        self.g = graph

    def __call__(self, name, op, inputs, out_channels=None, kernel=None) -> str:
        ins = [self.g.node(i).shape for i in inputs]
        in_ch = ins[0][0] if op in ("conv", "upconv") else 0
        proto = Node(name, op, tuple(inputs), (out_channels or 0, 0, 0), kernel, in_ch)
        shape = _infer_shape(proto, ins)
        self.g.add(Node(name, op, tuple(inputs), shape, kernel, in_ch))
        return name

    def conv_block(self, prefix, x, channels, kernel, pool=True):
        for j in (1, 2):
            x = self(f"{prefix}.conv{j}", "conv", [x], channels, kernel)
            x = self(f"{prefix}.bn{j}", "bn", [x])
            x = self(f"{prefix}.relu{j}", "relu", [x])
        skip = x
        if pool:
            x = self(f"{prefix}.pool", "pool", [x])
        return skip, x


def _encoder(b: _Builder, prefix: str, x: str, width: int, kernels) -> tuple[list[str], str]:
    skips = []
    for i in range(1, DEPTH + 1):
        skip, x = b.conv_block(f"{prefix}.block{i}", x, width * 2 ** (i - 1), kernels[i - 1])
        skips.append(skip)
    return skips, x


def _build(config: ModelConfig, with_rf_branches: bool, in_channels: int) -> LayerGraph:
    g = LayerGraph(config)
    b = _Builder(g)
    C, R, H, W = config.base_channels, config.rf_base_channels, config.rows, config.cols
    if with_rf_branches:
        g.add(Node("grey", "input", (), (1, H, W)))
        g.add(Node("rf", "input", (), (1, H, W)))
        g.inputs = {"grey": "grey", "rf": "rf"}
        x_grey = "grey"
    else:
        g.add(Node("image", "input", (), (in_channels, H, W)))
        g.inputs = {"image": "grey" if in_channels == 1 else "grey+rf"}
        x_grey = "image"
    grey_skips, x = _encoder(b, "grey", x_grey, C, [(3, 3)] * DEPTH)
    _, bottom = b.conv_block("bottom", x, 16 * C, (3, 3), pool=False)
    rf_skips: list[list[str]] = []
    fuse_inputs = [bottom]
    if with_rf_branches:
        for br in config.branches:
            k = gabor.kernel_shape(br)
            skips, out = _encoder(b, f"rf{br}", "rf", R, [k, k, (3, 3), (3, 3)])
            rf_skips.append(skips)
            fuse_inputs.append(out)
        x = b("fuse", "concat", fuse_inputs)
    else:
        x = bottom
    for s in range(DEPTH, 0, -1):
        width = g.node(x).shape[0]
        up = b(f"dec{s}.up", "upconv", [x], width, (2, 2))
        cat_in = [up, grey_skips[s - 1]] + [sk[s - 1] for sk in rf_skips]
        for src in cat_in[1:]:
            g.skips.append((src, f"dec{s}.cat"))
        cat = b(f"dec{s}.cat", "concat", cat_in)
        _, x = b.conv_block(f"dec{s}", cat, C * 2 ** (s - 1), (3, 3), pool=False)
    logits = b("head", "conv", [x], config.n_classes, (1, 1))
    b("probs", "softmax", [logits])
    g.validate()
    return g


def build_wnet(config: ModelConfig) -> LayerGraph:
    if config.model != "wnet":
        raise ValueError("build_wnet needs model='wnet'")
    return _build(config, True, 2)


def build_unet(config: ModelConfig) -> LayerGraph:
    if config.model not in ("unet-grey", "unet-grey-rf"):
        raise ValueError("build_unet needs model 'unet-grey' or 'unet-grey-rf'")
    return _build(config, False, 1 if config.model == "unet-grey" else 2)


def build_graph(config: ModelConfig) -> LayerGraph:
    return build_wnet(config) if config.model == "wnet" else build_unet(config)


def parameter_count(graph: LayerGraph) -> int:
    """Learnable scalars: conv/up-conv kernels and biases, batch-norm scale/shift."""
    total = 0
    for n in graph.nodes:
        if n.op == "conv":
            kh, kw = n.kernel
            total += n.shape[0] * n.in_channels * kh * kw + n.shape[0]
        elif n.op == "upconv":
            total += n.in_channels * n.shape[0] * 4 + n.shape[0]
        elif n.op == "bn":
            total += 2 * n.shape[0]
    return total


def _key(name: str) -> str:
    return name.replace(".", "__")


class Network(nn.Module):
    """Executes a :class:`LayerGraph`."""

    def __init__(self, graph: LayerGraph, check_finite: bool = True):
        super().__init__()
        self.graph = graph
        self.check_finite = check_finite
        layers = {}
        for n in graph.nodes:
            if n.op == "conv":
                kh, kw = n.kernel
                layers[_key(n.name)] = nn.Conv2d(n.in_channels, n.shape[0], n.kernel, padding=(kh // 2, kw // 2))
            elif n.op == "upconv":
                layers[_key(n.name)] = nn.ConvTranspose2d(n.in_channels, n.shape[0], 2, stride=2)
            elif n.op == "bn":
                layers[_key(n.name)] = nn.BatchNorm2d(n.shape[0])
        self.layers = nn.ModuleDict(layers)

    @property
    def config(self) -> ModelConfig:
        return self.graph.config

    def layer(self, name: str) -> nn.Module:
        return self.layers[_key(name)]

    @property
    def oversized_kernels(self) -> bool:
        """True when some conv kernel is taller or wider than its feature map.

        The oneDNN backward pass can crash on such layers under deterministic
        mode, so training falls back to the native kernels for these models.
        """
        return any(n.op == "conv" and (n.kernel[0] > n.shape[1] or n.kernel[1] > n.shape[2]) for n in self.graph.nodes)

    def parameter_set(self) -> "OrderedDict[str, torch.Tensor]":
        """Named copies of every parameter and batch-norm buffer."""
        out = OrderedDict()
        for k, v in self.state_dict().items():
            mod, _, leaf = k[len("layers.") :].rpartition(".")
            out[f"{mod.replace('__', '.')}.{leaf}"] = v.detach().clone()
        return out

    def load_parameter_set(self, params) -> "Network":
        state = OrderedDict()
        for k, v in params.items():
            node, _, leaf = k.rpartition(".")
            state[f"layers.{_key(node)}.{leaf}"] = v
        self.load_state_dict(state, strict=True)
        return self

    def inputs_from(self, grey: torch.Tensor, rf: torch.Tensor | None) -> dict[str, torch.Tensor]:
        env = {}
        for name, src in self.graph.inputs.items():
            if src == "grey":
                env[name] = grey
            elif src == "rf":
                env[name] = rf
            else:
                env[name] = torch.cat([grey, rf], dim=1)
        return env

    def run(self, grey, rf=None, keep: set[str] | None = None):
        """Evaluate the graph; return logits, probabilities and any ``keep`` nodes."""
        env = self.inputs_from(grey, rf)
        kept = {}
        for n in self.graph.nodes:
            if n.op == "input":
                x = env[n.name]
            else:
                ins = [env[i] for i in n.inputs]
                if n.op in ("conv", "upconv", "bn"):
                    x = self.layers[_key(n.name)](ins[0])
                elif n.op == "relu":
                    x = F.relu(ins[0])
                elif n.op == "pool":
                    x = F.max_pool2d(ins[0], 2)
                elif n.op == "concat":
                    x = torch.cat(ins, dim=1)
                elif n.op == "softmax":
                    x = torch.softmax(ins[0], dim=1)
                else:
                    raise ValueError(n.op)
            if tuple(x.shape[1:]) != n.shape:
                raise ShapeError(f"{n.name}: produced {tuple(x.shape[1:])}, declared {n.shape}")
            if self.check_finite and not torch.isfinite(x).all():
                raise NumericError(f"non-finite activation in layer {n.name}")
            env[n.name] = x
            if keep and n.name in keep:
                kept[n.name] = x
        return env["head"], env["probs"], kept

    def forward(self, grey, rf=None):
        logits, probs, _ = self.run(grey, rf)
        return logits, probs


def init_parameters(graph: LayerGraph, seed: int, gabor_banks=None) -> "OrderedDict[str, torch.Tensor]":
    """Seeded fan-in uniform (He) conv init, identity batch-norm, optional Gabor seeding."""
    gen = torch.Generator().manual_seed(int(seed))
    net = Network(graph)
    with torch.no_grad():
        for n in graph.nodes:
            if n.op in ("conv", "upconv"):
                layer = net.layer(n.name)
                w = layer.weight
                fan_in = w.shape[1] * w.shape[2] * w.shape[3] if n.op == "conv" else w.shape[0] * 4
                bound = float(np.sqrt(6.0 / fan_in))
                w.copy_(torch.rand(w.shape, generator=gen, dtype=w.dtype) * (2 * bound) - bound)
                layer.bias.zero_()
            elif n.op == "bn":
                layer = net.layer(n.name)
                layer.reset_parameters()
    params = net.parameter_set()
    if gabor_banks is not None:
        params = gabor.init_rf_branch_weights(graph, params, gabor_banks)
    return params


def create_model(config: ModelConfig, seed: int = 0, gabor_init: bool = True, n_kernels: int = 4) -> Network:
    graph = build_graph(config)
    banks = gabor.build_all_banks(n_kernels) if gabor_init and config.model == "wnet" else None
    return Network(graph).load_parameter_set(init_parameters(graph, seed, banks))


def as_batch(a, dtype=torch.float32) -> torch.Tensor:
    """(H, W) or (N, H, W) array -> (N, 1, H, W) tensor."""
    t = torch.as_tensor(np.asarray(a), dtype=dtype)
    if t.ndim == 2:
        t = t[None]
    if t.ndim == 3:
        t = t[:, None]
    return t


def forward(model: Network, grey, rf=None, mode: str = "eval"):
    """Class probabilities and logits, shape (N, n_classes, rows, cols)."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    dtype = next(model.parameters()).dtype
    g = grey if torch.is_tensor(grey) else as_batch(grey, dtype)
    r = None if rf is None else (rf if torch.is_tensor(rf) else as_batch(rf, dtype))
    if model.config.model != "unet-grey" and r is None:
        raise ValueError(f"model {model.config.model} needs an RF input")
    model.train(mode == "train")
    if mode == "eval":
        with torch.no_grad():
            logits, probs = model(g, r)
    else:
        logits, probs = model(g, r)
    return probs, logits


def save_checkpoint(model: Network, path, extra: dict | None = None) -> Path:
    """Parameter set to ``path`` plus a JSON sidecar with the model config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.parameter_set(), path)
    meta = {"model_config": model.config.to_json(), **(extra or {})}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[Network, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    config = ModelConfig.from_json(meta["model_config"])
    params = torch.load(path, map_location="cpu", weights_only=True)
    model = Network(build_graph(config)).load_parameter_set(params)
    model.eval()
    return model, meta
