"""Solver energy f(Y, C; theta) and initializer g(X, C; alpha).

Both networks are described by an :class:`ArchDescriptor` (JSON-friendly) and
compiled to an :class:`~cooplearn.autodiff.Graph`.  Variants:

``mlp``
    vector targets; the condition is concatenated to the input of a dense net.
``cat2img_early``
    one-hot condition fused at the input (replicated spatially for the solver,
    concatenated with X for the initializer).
``cat2img_late``
    condition replicated to ``concat_size`` x ``concat_size`` and fused after
    the ``layers`` encoder/decoder stage, then ``post_layers`` finish the job.
``img2img_naive``
    initializer only; C is encoded to a vector and concatenated with X.
``img2img_unet``
    initializer only; encoder ``layers`` and decoder ``post_layers`` joined by
    skip connections, with dropout masks as the latent.
``solver_channel_concat``
    solver only; Y and C images stacked along channels.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, GraphError, backprop, conv_output_size, default_pad, evaluate

SOLVER_VARIANTS = ("mlp", "cat2img_early", "cat2img_late", "solver_channel_concat")
GENERATOR_VARIANTS = ("mlp", "cat2img_early", "cat2img_late", "img2img_naive", "img2img_unet")
INIT_STD = 0.02


@dataclass
class LayerSpec:
    kind: str  # "dense", "conv" or "deconv"
    channels: int
    kernel: int = 1
    stride: int = 1
    pad: int | None = None
    out_hw: tuple | None = None
    reshape: tuple | None = None  # dense only: reshape output to (C, H, W)

    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("out_hw", "reshape"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class ArchDescriptor:
    variant: str
    target_shape: tuple
    condition_shape: tuple
    layers: list = field(default_factory=list)
    post_layers: list = field(default_factory=list)
    concat_size: int | None = None
    head_units: int = 1
    activation: str = "relu"
    slope: float = 0.2
    batchnorm: bool = False
    dropout: float = 0.0
    output_activation: str = "tanh"

    def __post_init__(self):
        self.target_shape = tuple(self.target_shape)
        self.condition_shape = tuple(self.condition_shape)
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec.from_dict(l) for l in self.layers]
        self.post_layers = [l if isinstance(l, LayerSpec) else LayerSpec.from_dict(l)
                            for l in self.post_layers]

    @property
    def categorical(self) -> bool:
        return len(self.condition_shape) == 1

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["target_shape"] = list(self.target_shape)
        d["condition_shape"] = list(self.condition_shape)
        d["layers"] = [l.to_dict() for l in self.layers]
        d["post_layers"] = [l.to_dict() for l in self.post_layers]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------------
# graph construction

class _Builder:
    """Graph builder that tracks per-sample shapes and parameter shapes."""

    def __init__(self, arch: ArchDescriptor):
        self.arch = arch
        self.g = Graph()
        self.shapes: dict[int, tuple] = {}
        self.param_shapes: dict[str, tuple] = {}
        self.latent_shapes: dict[str, tuple] = {}
        self.count = 0

    def inp(self, name, shape):
        nid = self.g.input(name)
        self.shapes[nid] = tuple(shape)
        return nid

    def param(self, name, shape):
        self.param_shapes[name] = tuple(shape)
        return self.g.param(name, None)

    def act(self, x, kind=None):
        kind = kind or self.arch.activation
        if kind == "relu":
            y = self.g.relu(x)
        elif kind == "leaky_relu":
            y = self.g.leaky_relu(x, self.arch.slope)
        elif kind == "tanh":
            y = self.g.tanh(x)
        elif kind == "linear":
            return x
        else:
            raise GraphError(f"unknown activation {kind!r}")
        self.shapes[y] = self.shapes[x]
        return y

    def norm(self, x):
        c = self.shapes[x][0]
        k = self.count
        gam = self.param(f"bn{k}.gamma", (c,))
        bet = self.param(f"bn{k}.beta", (c,))
        y = self.g.batchnorm(x, gam, bet)
        self.shapes[y] = self.shapes[x]
        return y

    def layer(self, x, spec: LayerSpec):
        k = self.count
        self.count += 1
        shape = self.shapes[x]
        if spec.kind == "dense":
            n_in = int(np.prod(shape))
            w = self.param(f"L{k}.w", (n_in, spec.channels))
            b = self.param(f"L{k}.b", (spec.channels,))
            y = self.g.dense(x, w, b)
            out = (spec.channels,)
            if spec.reshape is not None:
                if int(np.prod(spec.reshape)) != spec.channels:
                    raise GraphError(f"layer {k}: reshape {spec.reshape} needs {spec.channels} units")
                y = self.g.reshape(y, spec.reshape)
                out = tuple(spec.reshape)
        elif spec.kind in ("conv", "deconv"):
            if len(shape) != 3:
                raise GraphError(f"layer {k}: {spec.kind} needs a (C, H, W) input, got {shape}")
            c, h, wd = shape
            pad = default_pad(spec.kernel, spec.stride) if spec.pad is None else spec.pad
            if spec.kind == "conv":
                w = self.param(f"L{k}.w", (spec.channels, c, spec.kernel, spec.kernel))
                b = self.param(f"L{k}.b", (spec.channels,))
                y = self.g.conv2d(x, w, b, stride=spec.stride, pad=pad)
                hw = (conv_output_size(h, spec.kernel, spec.stride, pad),
                      conv_output_size(wd, spec.kernel, spec.stride, pad))
            else:
                w = self.param(f"L{k}.w", (c, spec.channels, spec.kernel, spec.kernel))
                b = self.param(f"L{k}.b", (spec.channels,))
                y = self.g.deconv2d(x, w, b, stride=spec.stride, pad=pad, out_hw=spec.out_hw)
                hw = spec.out_hw or tuple((s - 1) * spec.stride - 2 * pad + spec.kernel for s in (h, wd))
            if min(hw) < 1:
                raise GraphError(f"layer {k}: spatial size collapses to {hw}")
            out = (spec.channels,) + tuple(hw)
        else:
            raise GraphError(f"unknown layer kind {spec.kind!r}")
        self.shapes[y] = out
        return y

    def concat(self, *xs):
        shapes = [self.shapes[x] for x in xs]
        if len({s[1:] for s in shapes}) != 1:
            raise GraphError(f"cannot concatenate shapes {shapes}")
        y = self.g.concat_channels(*xs)
        self.shapes[y] = (sum(s[0] for s in shapes),) + shapes[0][1:]
        return y

    def replicate(self, x, h, w):
        y = self.g.spatial_replicate(x, h, w)
        self.shapes[y] = (int(np.prod(self.shapes[x])), h, w)
        return y

    def flatten(self, x):
        shape = self.shapes[x]
        if len(shape) == 1:
            return x
        y = self.g.reshape(x, (int(np.prod(shape)),))
        self.shapes[y] = (int(np.prod(shape)),)
        return y

    def as_map(self, x):
        shape = self.shapes[x]
        if len(shape) == 3:
            return x
        y = self.g.reshape(x, (int(np.prod(shape)), 1, 1))
        self.shapes[y] = (int(np.prod(shape)), 1, 1)
        return y

    def stack(self, x, specs, last_linear=False, norm=True, skip_first_norm=False):
        for i, spec in enumerate(specs):
            x = self.layer(x, spec)
            if last_linear and i == len(specs) - 1:
                break
            if self.arch.batchnorm and norm and not (skip_first_norm and i == 0):
                x = self.norm(x)
            x = self.act(x)
        return x


def build_energy_graph(arch: ArchDescriptor):
    """Compile f(Y, C).  Returns (graph, param_shapes)."""
    if arch.variant not in SOLVER_VARIANTS:
        raise GraphError(f"{arch.variant!r} is not a solver variant")
    b = _Builder(arch)
    y = b.inp("Y", arch.target_shape)
    c = b.inp("C", arch.condition_shape)
    if arch.variant == "mlp":
        h = b.concat(b.flatten(y), b.flatten(c))
        h = b.stack(h, arch.layers)
    elif arch.variant == "cat2img_early":
        _, hh, ww = arch.target_shape
        h = b.concat(y, b.replicate(c, hh, ww))
        h = b.stack(h, arch.layers)
    elif arch.variant == "cat2img_late":
        h = b.stack(y, arch.layers)
        _, hh, ww = b.shapes[h]
        if arch.concat_size is not None and (hh, ww) != (arch.concat_size, arch.concat_size):
            raise GraphError(f"encoder reaches {hh}x{ww}, concat_size is {arch.concat_size}")
        h = b.concat(h, b.replicate(c, hh, ww))
        h = b.stack(h, arch.post_layers)
    else:  # solver_channel_concat
        if arch.condition_shape[1:] != arch.target_shape[1:]:
            raise GraphError("channel concatenation needs equal spatial sizes")
        h = b.concat(y, c)
        h = b.stack(h, arch.layers)
    head = b.layer(h, LayerSpec("dense", arch.head_units))
    f = b.g.reduce_sum(head)
    b.g.output("f", f)
    b.g.node_shapes = b.shapes
    return b.g, b.param_shapes, b.shapes


def build_generator_graph(arch: ArchDescriptor, latent_dim: int):
    """Compile g(X, C).  Returns (graph, param_shapes, latent_shapes)."""
    if arch.variant not in GENERATOR_VARIANTS:
        raise GraphError(f"{arch.variant!r} is not an initializer variant")
    b = _Builder(arch)
    out_act = arch.output_activation
    if arch.variant == "img2img_unet":
        h = _unet(b, arch)
    else:
        x = b.inp("X", (latent_dim,))
        c = b.inp("C", arch.condition_shape)
        if arch.variant == "mlp":
            h = b.concat(x, b.flatten(c))
            h = b.stack(h, arch.layers, last_linear=True)
        elif arch.variant == "cat2img_early":
            h = b.as_map(b.concat(x, b.flatten(c)))
            h = b.stack(h, arch.layers, last_linear=True)
        elif arch.variant == "cat2img_late":
            h = b.stack(b.as_map(x), arch.layers)
            _, hh, ww = b.shapes[h]
            if arch.concat_size is not None and (hh, ww) != (arch.concat_size, arch.concat_size):
                raise GraphError(f"decoder reaches {hh}x{ww}, concat_size is {arch.concat_size}")
            h = b.concat(h, b.replicate(c, hh, ww))
            h = b.stack(h, arch.post_layers, last_linear=True)
        else:  # img2img_naive
            emb = b.flatten(b.stack(c, arch.layers))
            h = b.concat(x, emb)
            h = b.stack(h, arch.post_layers, last_linear=True)
    if b.shapes[h] != arch.target_shape:
        if int(np.prod(b.shapes[h])) == int(np.prod(arch.target_shape)) and len(arch.target_shape) == 1:
            h = b.flatten(h)
        else:
            raise GraphError(f"initializer produces {b.shapes[h]}, target is {arch.target_shape}")
    h = b.act(h, out_act)
    b.g.output("Y", h)
    b.g.node_shapes = b.shapes
    return b.g, b.param_shapes, b.latent_shapes


def _unet(b: _Builder, arch: ArchDescriptor):
    c = b.inp("C", arch.condition_shape)
    enc, dec = arch.layers, arch.post_layers
    if len(enc) != len(dec):
        raise GraphError("U-Net needs as many decoder layers as encoder layers")
    skips = []
    h = c
    for i, spec in enumerate(enc):
        h = b.layer(h, spec)
        if arch.batchnorm and i > 0:
            h = b.norm(h)
        h = b.act(h, "leaky_relu")
        skips.append(h)
    m = len(dec)
    for j, spec in enumerate(dec):
        if j > 0:
            h = b.concat(h, skips[m - 1 - j])
        h = b.layer(h, spec)
        if j == m - 1:
            break
        if arch.batchnorm:
            h = b.norm(h)
        if arch.dropout > 0:
            name = f"drop{j}"
            mask = b.inp(name, b.shapes[h])
            b.latent_shapes[name] = b.shapes[h]
            y = b.g.dropout(h, mask, arch.dropout)
            b.shapes[y] = b.shapes[h]
            h = y
        h = b.act(h, "relu")
    return h


def init_params(param_shapes: dict, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Gaussian(0, 0.02) weights, zero biases, unit batchnorm scales."""
    params = {}
    for name, shape in param_shapes.items():
        if name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".b") or name.endswith(".beta"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = (INIT_STD * rng.standard_normal(shape)).astype(dtype)
    return params


# ---------------------------------------------------------------------------
# model objects

@dataclass
class EnergyModel:
    """Conditional energy-based solver p(Y|C) proportional to exp(f(Y,C)) N(Y; 0, s^2 I).

    ``reference_std=None`` drops the Gaussian reference factor.
    """

    arch: ArchDescriptor
    params: dict
    reference_std: float | None = 1.0
    graph: Graph = field(init=False, repr=False, compare=False)
    param_shapes: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.graph, self.param_shapes, _ = build_energy_graph(self.arch)
        _check_params(self.params, self.param_shapes)

    @classmethod
    def create(cls, arch, rng, reference_std=1.0, dtype=np.float32):
        _, shapes, _ = build_energy_graph(arch)
        return cls(arch, init_params(shapes, rng, dtype), reference_std)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def _inputs(self, Y, C):
        Y = np.asarray(Y, dtype=self.dtype)
        C = np.asarray(C, dtype=self.dtype)
        _check_batch(Y, C, self.arch)
        return {**self.params, "Y": Y, "C": C}

    def tape(self, Y, C):
        return evaluate(self.graph, self._inputs(Y, C))

    def value(self, Y, C, reference=True):
        f = self.tape(Y, C).outputs["f"]
        if reference and self.reference_std is not None:
            Y = np.asarray(Y, dtype=self.dtype)
            f = f - (Y.reshape(len(Y), -1) ** 2).sum(axis=1) / (2 * self.reference_std ** 2)
        return f

    def grad_y(self, Y, C, reference=True):
        Y = np.asarray(Y, dtype=self.dtype)
        t = self.tape(Y, C)
        g = backprop(t, np.ones_like(t.outputs["f"]), ["Y"])["Y"]
        if reference and self.reference_std is not None:
            g = g - Y / self.reference_std ** 2
        return g

    def value_and_grad_y(self, Y, C, reference=True):
        Y = np.asarray(Y, dtype=self.dtype)
        t = self.tape(Y, C)
        f = t.outputs["f"]
        g = backprop(t, np.ones_like(f), ["Y"])["Y"]
        if reference and self.reference_std is not None:
            f = f - (Y.reshape(len(Y), -1) ** 2).sum(axis=1) / (2 * self.reference_std ** 2)
            g = g - Y / self.reference_std ** 2
        return f, g

    def param_grad(self, Y, C, weights):
        """Gradient of sum_i weights[i] * f(Y_i, C_i) with respect to theta."""
        t = self.tape(Y, C)
        return backprop(t, np.asarray(weights, dtype=self.dtype), list(self.params))

    def with_params(self, params):
        return dataclasses.replace(self, params=params)


@dataclass
class QuadraticEnergy:
    """Analytic energy f(Y) = -|Y - mean|^2 / (2 scale^2), ignoring C.

    With the reference factor disabled this is exactly N(mean, scale^2 I).
    """

    mean: np.ndarray | float = 0.0
    scale: float = 1.0
    reference_std: float | None = None

    def value(self, Y, C=None, reference=True):
        Y = np.asarray(Y, dtype=float)
        d = (Y - self.mean).reshape(len(Y), -1)
        f = -(d ** 2).sum(axis=1) / (2 * self.scale ** 2)
        if reference and self.reference_std is not None:
            f = f - (Y.reshape(len(Y), -1) ** 2).sum(axis=1) / (2 * self.reference_std ** 2)
        return f

    def grad_y(self, Y, C=None, reference=True):
        Y = np.asarray(Y, dtype=float)
        g = (self.mean - Y) / self.scale ** 2
        if reference and self.reference_std is not None:
            g = g - Y / self.reference_std ** 2
        return g

    def value_and_grad_y(self, Y, C=None, reference=True):
        return self.value(Y, C, reference), self.grad_y(Y, C, reference)


@dataclass
class DropoutLatent:
    """Recorded dropout masks that play the role of X in the U-Net initializer."""

    masks: dict

    def __len__(self):
        return len(next(iter(self.masks.values()))) if self.masks else 0

    def take(self, idx):
        return DropoutLatent({k: v[idx] for k, v in self.masks.items()})


@dataclass
class GeneratorModel:
    """Initializer Y = g(X, C; alpha) + eps with eps ~ N(0, residual_std^2 I)."""

    arch: ArchDescriptor
    params: dict
    latent_dim: int
    residual_std: float = 0.3
    graph: Graph = field(init=False, repr=False, compare=False)
    param_shapes: dict = field(init=False, repr=False, compare=False)
    latent_shapes: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.graph, self.param_shapes, self.latent_shapes = build_generator_graph(
            self.arch, self.latent_dim)
        _check_params(self.params, self.param_shapes)

    @classmethod
    def create(cls, arch, rng, latent_dim, residual_std=0.3, dtype=np.float32):
        _, shapes, _ = build_generator_graph(arch, latent_dim)
        return cls(arch, init_params(shapes, rng, dtype), latent_dim, residual_std)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def uses_dropout_latent(self) -> bool:
        return self.arch.variant == "img2img_unet"

    def _inputs(self, X, C):
        C = np.asarray(C, dtype=self.dtype)
        feed = {**self.params, "C": C}
        if isinstance(X, DropoutLatent):
            if not self.uses_dropout_latent:
                raise GraphError("dropout latent given to a vector-latent initializer")
            for name, shape in self.latent_shapes.items():
                m = np.asarray(X.masks[name], dtype=self.dtype)
                if m.shape != (len(C),) + shape:
                    raise GraphError(f"mask {name}: expected {(len(C),) + shape}, got {m.shape}")
                feed[name] = m
        else:
            if self.uses_dropout_latent:
                raise GraphError("the U-Net initializer takes a DropoutLatent")
            X = np.asarray(X, dtype=self.dtype)
            if X.ndim != 2 or X.shape[1] != self.latent_dim or len(X) != len(C):
                raise GraphError(f"latent shape {X.shape} does not match ({len(C)}, {self.latent_dim})")
            feed["X"] = X
        if C.shape[1:] != self.arch.condition_shape:
            raise GraphError(f"condition shape {C.shape[1:]} != {self.arch.condition_shape}")
        return feed

    def tape(self, X, C):
        return evaluate(self.graph, self._inputs(X, C))

    def mean(self, X, C):
        return self.tape(X, C).outputs["Y"]

    def with_params(self, params):
        return dataclasses.replace(self, params=params)


def _check_params(params, shapes):
    missing = set(shapes) - set(params)
    extra = set(params) - set(shapes)
    if missing or extra:
        raise GraphError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for k, s in shapes.items():
        if tuple(params[k].shape) != s:
            raise GraphError(f"parameter {k}: expected shape {s}, got {params[k].shape}")


def _check_batch(Y, C, arch):
    if Y.shape[1:] != arch.target_shape:
        raise GraphError(f"Y shape {Y.shape[1:]} != target shape {arch.target_shape}")
    if C.shape[1:] != arch.condition_shape:
        raise GraphError(f"C shape {C.shape[1:]} != condition shape {arch.condition_shape}")
    if len(Y) != len(C):
        raise GraphError(f"batch sizes differ: {len(Y)} vs {len(C)}")


# ---------------------------------------------------------------------------
# functional surface

def energy(model, Y, C, reference=False):
    """Per-sample f(Y, C); ``reference=True`` adds -|Y|^2 / (2 s^2)."""
    return model.value(Y, C, reference=reference)


def energy_grad_y(model, Y, C):
    """d/dY of the total (reference-inclusive) value used for sampling."""
    return model.grad_y(Y, C, reference=True)


def sample_latent(model: GeneratorModel, batch: int, rng: np.random.Generator):
    if batch < 1:
        raise ValueError("batch must be at least 1")
    if model.uses_dropout_latent:
        keep = 1.0 - model.arch.dropout
        return DropoutLatent({name: (rng.random((batch,) + shape) < keep).astype(model.dtype)
                              for name, shape in model.latent_shapes.items()})
    return rng.standard_normal((batch, model.latent_dim)).astype(model.dtype)


def generate(model: GeneratorModel, X, C, rng: np.random.Generator | None = None):
    """g(X, C) plus N(0, sigma^2) residual noise (omitted when rng is None or sigma is 0)."""
    y = model.mean(X, C)
    if rng is not None and model.residual_std > 0:
        y = y + (model.residual_std * rng.standard_normal(y.shape)).astype(y.dtype)
    return y


# ---------------------------------------------------------------------------
# reference architectures

def _deconv(ch, k, s, out):
    return LayerSpec("deconv", ch, k, s, out_hw=(out, out))


def reference_arch(name: str) -> ArchDescriptor:
    """Full-width reference architectures.

    ``mnist_initializer`` starts with a 7x7 projection, since a 1x1 input
    cannot reach 28x28 through kernel-5 layers with factors 1, 2, 2, 2.
    """
    if name == "mnist_initializer":
        return ArchDescriptor("cat2img_early", (1, 28, 28), (10,),
                              [LayerSpec("deconv", 256, 7, 1, pad=0),
                               _deconv(128, 5, 1, 7), _deconv(64, 5, 2, 14), _deconv(1, 5, 2, 28)],
                              batchnorm=True)
    if name == "mnist_solver":
        return ArchDescriptor("cat2img_late", (1, 28, 28), (10,),
                              [LayerSpec("conv", 64, 5, 2), LayerSpec("conv", 128, 3, 2)],
                              [LayerSpec("conv", 256, 3, 1)], concat_size=7, head_units=100)
    if name == "cifar_initializer":
        return ArchDescriptor("cat2img_late", (3, 32, 32), (10,),
                              [LayerSpec("deconv", 256, 4, 1, pad=0), _deconv(128, 5, 2, 8)],
                              [_deconv(64, 5, 2, 16), _deconv(3, 5, 2, 32)],
                              concat_size=8, batchnorm=True)
    if name == "cifar_solver":
        return ArchDescriptor("cat2img_late", (3, 32, 32), (10,),
                              [LayerSpec("conv", 64, 5, 2), LayerSpec("conv", 128, 3, 2)],
                              [LayerSpec("conv", 256, 3, 1)], concat_size=8, head_units=100)
    if name == "facade_initializer":
        enc = [LayerSpec("conv", c, 4, 2, pad=1) for c in (64, 128, 256, 512, 512, 512, 512, 512)]
        dec = [LayerSpec("deconv", c, 4, 2, pad=1) for c in (512, 512, 512, 512, 256, 128, 64, 3)]
        return ArchDescriptor("img2img_unet", (3, 256, 256), (3, 256, 256), enc, dec,
                              batchnorm=True, dropout=0.5)
    if name == "facade_solver":
        return ArchDescriptor("solver_channel_concat", (3, 256, 256), (3, 256, 256),
                              [LayerSpec("conv", 64, 5, 2), LayerSpec("conv", 128, 3, 2),
                               LayerSpec("conv", 256, 3, 1)],
                              head_units=100, activation="leaky_relu")
    raise KeyError(name)


def desk_unet(channels=1, size=32, widths=(8, 16, 32, 32), dropout=0.5):
    """Shrunken U-Net initializer for square single-scale images."""
    enc = [LayerSpec("conv", w, 4, 2, pad=1) for w in widths]
    dec_widths = list(reversed(widths[:-1])) + [channels]
    dec = [LayerSpec("deconv", w, 4, 2, pad=1) for w in dec_widths]
    return ArchDescriptor("img2img_unet", (channels, size, size), (channels, size, size),
                          enc, dec, dropout=dropout)


def desk_channel_concat_solver(channels=1, size=32, widths=(16, 32), head_units=1):
    layers = [LayerSpec("conv", w, 5 if i == 0 else 3, 2) for i, w in enumerate(widths)]
    return ArchDescriptor("solver_channel_concat", (channels, size, size), (channels, size, size),
                          layers, head_units=head_units, activation="leaky_relu")


def mlp_arch(dim: int, n_classes: int, hidden=(64, 64), activation="leaky_relu",
             generator=False, output_activation="tanh") -> ArchDescriptor:
    layers = [LayerSpec("dense", h) for h in hidden]
    if generator:
        layers.append(LayerSpec("dense", dim))
    return ArchDescriptor("mlp", (dim,), (n_classes,), layers, activation=activation,
                          output_activation=output_activation)


def one_hot(labels, n_classes, dtype=np.float32):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def log_normal_const(dim: int, std: float) -> float:
    return -0.5 * dim * math.log(2 * math.pi * std * std)
