"""Dense tensor graphs with a reverse-mode tape.

Tensors are plain numpy arrays in NCHW layout (batch first).  A :class:`Graph`
is an ordered list of op records built once and evaluated many times;
:func:`evaluate` runs the forward pass and returns a :class:`Tape` holding
every intermediate value, and :func:`backprop` walks the tape backwards.

Parameters, data and dropout masks are all named inputs, so the same graph is
reused for different parameter sets and masks can be replayed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs, unbound inputs and shape mismatches."""


class NonFiniteError(FloatingPointError):
    """Raised in checked mode when an op produces NaN or Inf."""


OP_KINDS = (
    "input", "dense", "conv2d", "deconv2d", "relu", "leaky_relu", "tanh",
    "concat_channels", "dropout", "spatial_replicate", "add", "scale",
    "reduce_sum", "reduce_mean", "batchnorm", "reshape",
)


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    name: str | None = None


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def default_pad(kernel: int, stride: int) -> int:
    # "same" for stride 1 with odd kernels, else the usual (k - s) / 2 rounding
    if stride == 1:
        return (kernel - 1) // 2
    return max((kernel - stride + 1) // 2, 0)


class Graph:
    """Builder for a static op graph.

    Every builder method returns the integer id of the new node.  Named
    inputs (``input``) are bound at evaluation time from a mapping.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.input_ids: dict[str, int] = {}
        self.input_shapes: dict[str, tuple | None] = {}
        self.param_names: list[str] = []
        self.outputs: dict[str, int] = {}

    def _add(self, op, inputs=(), name=None, **attrs):
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise GraphError(f"{op}: input node {i} does not exist")
        self.nodes.append(Node(op, tuple(inputs), attrs, name))
        return len(self.nodes) - 1

    # -- leaves ---------------------------------------------------------
    def input(self, name: str, shape: tuple | None = None) -> int:
        if name in self.input_ids:
            raise GraphError(f"duplicate input name {name!r}")
        nid = self._add("input", (), name=name)
        self.input_ids[name] = nid
        self.input_shapes[name] = tuple(shape) if shape is not None else None
        return nid

    def param(self, name: str, shape: tuple) -> int:
        """A named input that is a trainable parameter with a fixed shape."""
        nid = self.input(name, shape)
        self.param_names.append(name)
        return nid

    # -- layers ---------------------------------------------------------
    def dense(self, x, w, b=None, name=None):
        return self._add("dense", (x, w) if b is None else (x, w, b), name)

    def conv2d(self, x, w, b=None, stride=1, pad=None, name=None):
        return self._add("conv2d", (x, w) if b is None else (x, w, b), name,
                         stride=stride, pad=pad)

    def deconv2d(self, x, w, b=None, stride=1, pad=None, out_hw=None, name=None):
        """Transposed convolution; the adjoint of ``conv2d`` with the same kernel.

        ``out_hw`` picks among output sizes that map back to the input size
        under strided-convolution arithmetic; default is the smallest one.
        """
        return self._add("deconv2d", (x, w) if b is None else (x, w, b), name,
                         stride=stride, pad=pad, out_hw=out_hw)

    def relu(self, x, name=None):
        return self._add("relu", (x,), name)

    def leaky_relu(self, x, slope=0.2, name=None):
        return self._add("leaky_relu", (x,), name, slope=float(slope))

    def tanh(self, x, name=None):
        return self._add("tanh", (x,), name)

    def concat_channels(self, *xs, name=None):
        return self._add("concat_channels", xs, name)

    def dropout(self, x, mask, rate, name=None):
        """Inverted dropout with an explicit binary mask input."""
        if not 0.0 <= rate < 1.0:
            raise GraphError("dropout rate must be in [0, 1)")
        return self._add("dropout", (x, mask), name, rate=float(rate))

    def spatial_replicate(self, x, height, width, name=None):
        return self._add("spatial_replicate", (x,), name, height=height, width=width)

    def add(self, a, b, name=None):
        return self._add("add", (a, b), name)

    def scale(self, x, factor, name=None):
        return self._add("scale", (x,), name, factor=float(factor))

    def reduce_sum(self, x, name=None):
        """Sum over all non-batch axes, giving shape (N,)."""
        return self._add("reduce_sum", (x,), name)

    def reduce_mean(self, x, name=None):
        return self._add("reduce_mean", (x,), name)

    def batchnorm(self, x, gamma, beta, eps=1e-5, name=None):
        """Batch normalization using the statistics of the current batch."""
        return self._add("batchnorm", (x, gamma, beta), name, eps=float(eps))

    def reshape(self, x, shape, name=None):
        """Reshape the non-batch axes to ``shape``."""
        return self._add("reshape", (x,), name, shape=tuple(shape))

    def output(self, name: str, node: int):
        if not 0 <= node < len(self.nodes):
            raise GraphError(f"output node {node} does not exist")
        self.outputs[name] = node
        return node


# ---------------------------------------------------------------------------
# convolution kernels

def _pad_of(attrs, kernel):
    pad = attrs.get("pad")
    return default_pad(kernel, attrs["stride"]) if pad is None else pad


def _conv_fwd(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise GraphError(f"conv2d: input has {c} channels, kernel expects {c2}")
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(wd, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise GraphError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{wd}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((n, o, ho, wo), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            out += np.einsum("nchw,oc->nohw", patch, w[:, :, i, j], optimize=True)
    return out


def _conv_adjoint(g, w, stride, pad, in_hw):
    """Input-gradient of ``_conv_fwd``; doubles as the transposed convolution."""
    n, o, ho, wo = g.shape
    _, c, kh, kw = w.shape
    h, wd = in_hw
    gp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.result_type(g, w))
    for i in range(kh):
        for j in range(kw):
            gp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.einsum(
                "nohw,oc->nchw", g, w[:, :, i, j], optimize=True)
    if pad:
        gp = gp[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(gp)


def _conv_weight_grad(g, x, stride, pad, kshape):
    _, _, kh, kw = kshape
    _, _, ho, wo = g.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gw = np.zeros(kshape, dtype=np.result_type(g, x))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            gw[:, :, i, j] = np.einsum("nohw,nchw->oc", g, patch, optimize=True)
    return gw


def _deconv_out_hw(in_hw, kernel, stride, pad, out_hw):
    lo = tuple((s - 1) * stride - 2 * pad + kernel for s in in_hw)
    if out_hw is None:
        return lo
    out_hw = tuple(out_hw)
    for s_in, s_out in zip(in_hw, out_hw):
        if conv_output_size(s_out, kernel, stride, pad) != s_in:
            raise GraphError(f"deconv2d: output size {out_hw} inconsistent with input "
                             f"{in_hw} for kernel {kernel}, stride {stride}, pad {pad}")
    return out_hw


# ---------------------------------------------------------------------------
# forward

@dataclass
class Tape:
    graph: Graph
    values: list
    cache: dict
    outputs: dict


def _check_shape(name, value, declared):
    if declared is not None and tuple(value.shape) != declared:
        raise GraphError(f"input {name!r}: expected shape {declared}, got {tuple(value.shape)}")


def evaluate(graph: Graph, inputs: Mapping[str, np.ndarray], checked: bool = False) -> Tape:
    """Run the forward pass.  Returns the tape; outputs are in ``tape.outputs``."""
    values: list = [None] * len(graph.nodes)
    cache: dict = {}
    for nid, node in enumerate(graph.nodes):
        op, a = node.op, node.attrs
        args = [values[i] for i in node.inputs]
        if op == "input":
            if node.name not in inputs:
                raise GraphError(f"unbound input {node.name!r}")
            v = np.asarray(inputs[node.name])
            _check_shape(node.name, v, graph.input_shapes[node.name])
        elif op == "dense":
            x, w = args[0], args[1]
            x2 = x.reshape(x.shape[0], -1)
            if x2.shape[1] != w.shape[0]:
                raise GraphError(f"dense: input width {x2.shape[1]} != weight rows {w.shape[0]}")
            v = x2 @ w
            if len(args) == 3:
                v = v + args[2]
            cache[nid] = x2
        elif op == "conv2d":
            x, w = args[0], args[1]
            if x.ndim != 4:
                raise GraphError("conv2d expects a 4-d NCHW input")
            v = _conv_fwd(x, w, a["stride"], _pad_of(a, w.shape[2]))
            if len(args) == 3:
                v = v + args[2][None, :, None, None]
        elif op == "deconv2d":
            x, w = args[0], args[1]
            if x.ndim != 4 or x.shape[1] != w.shape[0]:
                raise GraphError(f"deconv2d: input channels {x.shape[1:2]} != kernel {w.shape[0]}")
            pad = _pad_of(a, w.shape[2])
            out_hw = _deconv_out_hw(x.shape[2:], w.shape[2], a["stride"], pad, a["out_hw"])
            v = _conv_adjoint(x, w, a["stride"], pad, out_hw)
            if len(args) == 3:
                v = v + args[2][None, :, None, None]
        elif op == "relu":
            v = np.maximum(args[0], 0)
        elif op == "leaky_relu":
            x = args[0]
            v = np.where(x > 0, x, a["slope"] * x)
        elif op == "tanh":
            v = np.tanh(args[0])
        elif op == "concat_channels":
            if len({x.shape[0] for x in args}) != 1 or len({x.shape[2:] for x in args}) != 1:
                raise GraphError(f"concat_channels: incompatible shapes {[x.shape for x in args]}")
            v = np.concatenate(args, axis=1)
        elif op == "dropout":
            x, m = args
            if m.shape != x.shape:
                raise GraphError(f"dropout: mask shape {m.shape} != input shape {x.shape}")
            v = x * m * (1.0 / (1.0 - a["rate"]))
        elif op == "spatial_replicate":
            x = args[0]
            x = x.reshape(x.shape[0], -1, 1, 1)
            v = np.broadcast_to(x, x.shape[:2] + (a["height"], a["width"])).copy()
        elif op == "add":
            if args[0].shape != args[1].shape:
                raise GraphError(f"add: shapes {args[0].shape} and {args[1].shape} differ")
            v = args[0] + args[1]
        elif op == "scale":
            v = args[0] * a["factor"]
        elif op == "reduce_sum":
            x = args[0]
            v = x.reshape(x.shape[0], -1).sum(axis=1)
        elif op == "reduce_mean":
            x = args[0]
            v = x.reshape(x.shape[0], -1).mean(axis=1)
        elif op == "batchnorm":
            x, gamma, beta = args
            axes = (0,) if x.ndim == 2 else (0, 2, 3)
            mu = x.mean(axis=axes, keepdims=True)
            var = x.var(axis=axes, keepdims=True)
            inv = 1.0 / np.sqrt(var + a["eps"])
            xhat = (x - mu) * inv
            bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
            v = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
            cache[nid] = (xhat, inv, axes, bshape)
        elif op == "reshape":
            x = args[0]
            try:
                v = x.reshape((x.shape[0],) + a["shape"])
            except ValueError as exc:
                raise GraphError(f"reshape: {exc}") from None
        else:
            raise GraphError(f"unknown op {op!r}")
        if checked and not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite value produced by node {nid} ({op})")
        values[nid] = v
    outputs = {k: values[i] for k, i in graph.outputs.items()}
    return Tape(graph, values, cache, outputs)


# ---------------------------------------------------------------------------
# backward

def _requires_grad(graph: Graph, targets: frozenset) -> list:
    """Forward flag: does node i depend on any target?  Cached per target set."""
    cache = graph.__dict__.setdefault("_req_cache", {})
    key = (targets, len(graph.nodes))
    if key not in cache:
        req = [False] * len(graph.nodes)
        for nid, node in enumerate(graph.nodes):
            req[nid] = nid in targets or any(req[i] for i in node.inputs)
        cache[key] = req
    return cache[key]


def _accumulate(grads, nid, g):
    if grads[nid] is None:
        grads[nid] = g
    else:
        grads[nid] = grads[nid] + g


def backprop(tape: Tape, seed, wrt: Iterable) -> dict:
    """Reverse-mode gradients of ``sum(seed * output)``.

    ``seed`` is either an array (for a graph with exactly one output) or a
    mapping from output name to seed array.  ``wrt`` holds input names or
    node ids; the result is keyed the same way.
    """
    graph, values = tape.graph, tape.values
    if not isinstance(seed, Mapping):
        if len(graph.outputs) != 1:
            raise GraphError("a bare seed needs a graph with exactly one output")
        seed = {next(iter(graph.outputs)): seed}
    targets = {}
    for key in wrt:
        nid = graph.input_ids.get(key) if isinstance(key, str) else key
        if nid is None or not (isinstance(nid, (int, np.integer)) and 0 <= nid < len(graph.nodes)):
            raise GraphError(f"node {key!r} is not on the tape")
        targets[key] = int(nid)

    grads: list = [None] * len(graph.nodes)
    for name, s in seed.items():
        if name not in graph.outputs:
            raise GraphError(f"unknown output {name!r}")
        nid = graph.outputs[name]
        s = np.asarray(s)
        if s.shape != values[nid].shape:
            raise GraphError(f"seed shape {s.shape} != output shape {values[nid].shape}")
        _accumulate(grads, nid, s)

    req = _requires_grad(graph, frozenset(targets.values()))
    lowest = min(targets.values(), default=len(graph.nodes))
    for nid in range(len(graph.nodes) - 1, lowest - 1, -1):
        g = grads[nid]
        node = graph.nodes[nid]
        if g is None or node.op == "input" or not req[nid]:
            continue
        op, a, ins = node.op, node.attrs, node.inputs
        args = [values[i] for i in ins]
        need = [req[i] for i in ins]
        if op == "dense":
            x2, w = tape.cache[nid], args[1]
            if need[0]:
                _accumulate(grads, ins[0], (g @ w.T).reshape(args[0].shape))
            if need[1]:
                _accumulate(grads, ins[1], x2.T @ g)
            if len(ins) == 3:
                if need[2]:
                    _accumulate(grads, ins[2], g.sum(axis=0))
        elif op == "conv2d":
            x, w = args[0], args[1]
            stride, pad = a["stride"], _pad_of(a, w.shape[2])
            if need[0]:
                _accumulate(grads, ins[0], _conv_adjoint(g, w, stride, pad, x.shape[2:]))
            if need[1]:
                _accumulate(grads, ins[1], _conv_weight_grad(g, x, stride, pad, w.shape))
            if len(ins) == 3:
                if need[2]:
                    _accumulate(grads, ins[2], g.sum(axis=(0, 2, 3)))
        elif op == "deconv2d":
            x, w = args[0], args[1]
            stride, pad = a["stride"], _pad_of(a, w.shape[2])
            if need[0]:
                _accumulate(grads, ins[0], _conv_fwd(g, w, stride, pad))
            if need[1]:
                _accumulate(grads, ins[1], _conv_weight_grad(x, g, stride, pad, w.shape))
            if len(ins) == 3:
                if need[2]:
                    _accumulate(grads, ins[2], g.sum(axis=(0, 2, 3)))
        elif op == "relu":
            if need[0]:
                _accumulate(grads, ins[0], g * (args[0] > 0))
        elif op == "leaky_relu":
            if need[0]:
                _accumulate(grads, ins[0], np.where(args[0] > 0, g, a["slope"] * g))
        elif op == "tanh":
            y = values[nid]
            if need[0]:
                _accumulate(grads, ins[0], g * (1.0 - y * y))
        elif op == "concat_channels":
            start = 0
            for i, x, nd in zip(ins, args, need):
                if nd:
                    _accumulate(grads, i, g[:, start:start + x.shape[1]])
                start += x.shape[1]
        elif op == "dropout":
            x, m = args
            k = 1.0 / (1.0 - a["rate"])
            if need[0]:
                _accumulate(grads, ins[0], g * m * k)
            if need[1]:
                _accumulate(grads, ins[1], g * x * k)
        elif op == "spatial_replicate":
            if need[0]:
                _accumulate(grads, ins[0], g.sum(axis=(2, 3)).reshape(args[0].shape))
        elif op == "add":
            if need[0]:
                _accumulate(grads, ins[0], g)
            if need[1]:
                _accumulate(grads, ins[1], g)
        elif op == "scale":
            if need[0]:
                _accumulate(grads, ins[0], g * a["factor"])
        elif op in ("reduce_sum", "reduce_mean"):
            x = args[0]
            per = x[0].size
            k = 1.0 if op == "reduce_sum" else 1.0 / per
            gx = np.broadcast_to((g * k).reshape((-1,) + (1,) * (x.ndim - 1)), x.shape)
            if need[0]:
                _accumulate(grads, ins[0], gx.copy())
        elif op == "batchnorm":
            x, gamma, _ = args
            xhat, inv, axes, bshape = tape.cache[nid]
            m = x.size // gamma.size
            if need[2]:
                _accumulate(grads, ins[2], g.sum(axis=axes))
            if need[1]:
                _accumulate(grads, ins[1], (g * xhat).sum(axis=axes))
            gxhat = g * gamma.reshape(bshape)
            gx = inv / m * (m * gxhat - gxhat.sum(axis=axes, keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            if need[0]:
                _accumulate(grads, ins[0], gx)
        elif op == "reshape":
            if need[0]:
                _accumulate(grads, ins[0], g.reshape(args[0].shape))
        else:  # pragma: no cover - evaluate rejects unknown ops first
            raise GraphError(f"unknown op {op!r}")

    out = {}
    for key, nid in targets.items():
        g = grads[nid]
        out[key] = np.zeros_like(values[nid]) if g is None else np.asarray(g)
    return out


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckEntry:
    name: str
    rel_error: float
    abs_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    def __str__(self):
        lines = [f"{'ok ' if e.passed else 'BAD'} {e.name}: rel {e.rel_error:.2e} abs {e.abs_error:.2e}"
                 for e in self.entries]
        return "\n".join(lines) or "(no parameters)"


def finite_diff_check(graph: Graph, inputs: Mapping[str, np.ndarray], tolerance: float = 1e-4,
                      wrt: Iterable[str] | None = None, step: float = 1e-5,
                      floor: float = 1e-8, rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare backprop against central differences of ``sum(seed * outputs)``.

    Runs in float64.  ``wrt`` defaults to the graph's parameters.  Each
    entry reports ``|a - n| / max(|a|, |n|, floor)`` in the 2-norm over the
    whole tensor; the check passes when that is below ``tolerance``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    names = list(graph.param_names if wrt is None else wrt)
    tape = evaluate(graph, inputs)
    seeds = {k: rng.standard_normal(v.shape) for k, v in tape.outputs.items()}

    def objective(inp):
        outs = evaluate(graph, inp).outputs
        return sum(float(np.sum(seeds[k] * outs[k])) for k in seeds)

    analytic = backprop(tape, seeds, names) if names else {}
    entries = []
    for name in names:
        base = inputs[name]
        numeric = np.zeros_like(base)
        flat = numeric.reshape(-1)
        for idx in range(base.size):
            orig = base.flat[idx]
            base.flat[idx] = orig + step
            up = objective(inputs)
            base.flat[idx] = orig - step
            down = objective(inputs)
            base.flat[idx] = orig
            flat[idx] = (up - down) / (2 * step)
        a = analytic[name]
        diff = float(np.linalg.norm(a - numeric))
        scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(numeric)), floor)
        rel = diff / scale
        entries.append(GradCheckEntry(name, rel, diff, rel < tolerance or diff < floor))
    return GradCheckReport(entries, tolerance)
