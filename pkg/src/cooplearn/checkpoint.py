"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"COOPCKPT"  u32 version  u64 header_len  header (UTF-8 JSON)  payloads

The JSON header carries both architecture descriptors, the run config, the
epoch/step counters, the RNG bit-generator state and an index of tensors
(name, dtype, shape, offset, nbytes).  Payloads are raw little-endian bytes
concatenated in index order, so a round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .models import ArchDescriptor, EnergyModel, GeneratorModel
from .training import TrainState

MAGIC = b"COOPCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(IOError):
    """Malformed file, wrong magic or unsupported version."""


@dataclass
class Checkpoint:
    solver_arch: ArchDescriptor
    initializer_arch: ArchDescriptor
    tensors: dict                      # name -> ndarray
    latent_dim: int
    residual_std: float
    reference_std: float | None
    epoch: int = 0
    step: int = 0
    rng_state: dict | None = None
    run_config: dict = field(default_factory=dict)

    # -- conversion -----------------------------------------------------
    @classmethod
    def from_state(cls, state: TrainState, run_config=None) -> "Checkpoint":
        tensors = {}
        for prefix, params, moments in (
                ("solver", state.solver.params, state.solver_moments),
                ("initializer", state.initializer.params, state.initializer_moments)):
            for k, v in params.items():
                m, s = moments[k]
                tensors[f"{prefix}/{k}"] = v
                tensors[f"{prefix}.m/{k}"] = m
                tensors[f"{prefix}.v/{k}"] = s
        return cls(state.solver.arch, state.initializer.arch, tensors,
                   state.initializer.latent_dim, state.initializer.residual_std,
                   state.solver.reference_std, state.epoch, state.step,
                   state.rng.bit_generator.state, dict(run_config or {}))

    def _group(self, prefix):
        head = prefix + "/"
        return {k[len(head):]: v for k, v in self.tensors.items() if k.startswith(head)}

    def solver(self) -> EnergyModel:
        return EnergyModel(self.solver_arch, self._group("solver"), self.reference_std)

    def initializer(self) -> GeneratorModel:
        return GeneratorModel(self.initializer_arch, self._group("initializer"),
                              self.latent_dim, self.residual_std)

    def rng(self) -> np.random.Generator:
        rng = np.random.default_rng()
        if self.rng_state is not None:
            bg = getattr(np.random, self.rng_state["bit_generator"])()
            bg.state = self.rng_state
            rng = np.random.Generator(bg)
        return rng

    def to_state(self) -> TrainState:
        def moments(prefix, params):
            m, v = self._group(prefix + ".m"), self._group(prefix + ".v")
            return {k: (m[k], v[k]) for k in params}
        solver, gen = self.solver(), self.initializer()
        return TrainState(solver, gen, moments("solver", solver.params),
                          moments("initializer", gen.params), self.rng(), self.epoch, self.step)


def save_checkpoint(path, ckpt: Checkpoint):
    index, blobs, offset = [], [], 0
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        index.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "solver_arch": ckpt.solver_arch.to_dict(),
        "initializer_arch": ckpt.initializer_arch.to_dict(),
        "latent_dim": ckpt.latent_dim,
        "residual_std": ckpt.residual_std,
        "reference_std": ckpt.reference_std,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "run_config": ckpt.run_config,
        "tensors": index,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(data[_PREFIX.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    tensors = {}
    for entry in header["tensors"]:
        lo = start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        dt = np.dtype(entry["dtype"])
        arr = np.frombuffer(data[lo:hi], dtype=dt).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    return Checkpoint(
        ArchDescriptor.from_dict(header["solver_arch"]),
        ArchDescriptor.from_dict(header["initializer_arch"]),
        tensors, header["latent_dim"], header["residual_std"], header["reference_std"],
        header["epoch"], header["step"], header["rng_state"], header["run_config"])
