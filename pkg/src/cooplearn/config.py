"""JSON run configuration: schema, validation and object construction.

A config names a task and carries the architecture of both models, training
and Langevin settings, a data source and (for ``fixed_point``) a discrete
system.  Validation happens before anything is built or written; unknown keys
and out-of-range values are rejected.

Example (toy task)::

    {
      "task": "toy",
      "seed": 0,
      "data": {"toy": {"family": "gaussian_mixture", "n_classes": 3, "n": 3000}},
      "solver": {"preset": "mlp", "options": {"hidden": [64, 64]}, "reference_std": 1.0},
      "initializer": {"preset": "mlp", "latent_dim": 2, "residual_std": 0.3},
      "train": {"epochs": 150, "batch_size": 100, "lr_solver": 0.001, "lr_initializer": 0.001},
      "langevin": {"steps": 30, "step_size": 0.05}
    }
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import data as D
from . import models as M
from .langevin import LangevinConfig
from .training import TrainConfig

TASKS = ("toy", "cat2img", "img2img", "inpaint", "fixed_point")
PRESETS = ("mlp", "desk_unet", "desk_channel_concat_solver") + tuple(
    f"{d}_{r}" for d in ("mnist", "cifar", "facade") for r in ("initializer", "solver"))


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_nonnegint = {"type": "integer", "minimum": 0}
_prob = {"type": "number", "minimum": 0, "exclusiveMaximum": 1}

_model = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"enum": list(PRESETS)},
        "options": {"type": "object"},
        "descriptor": {"type": "object"},
        "reference_std": {"oneOf": [_pos, {"type": "null"}]},
        "latent_dim": _posint,
        "residual_std": _nonneg,
    },
    "oneOf": [{"required": ["preset"]}, {"required": ["descriptor"]}],
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "RunConfig",
    "type": "object",
    "additionalProperties": False,
    "required": ["task"],
    "properties": {
        "task": {"enum": list(TASKS)},
        "seed": _nonnegint,
        "out": {"type": "string"},
        "precision": {"enum": [32, 64]},
        "solver": _model,
        "initializer": _model,
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _nonnegint,
                "batch_size": _posint,
                "chains": _posint,
                "lr_solver": _pos,
                "lr_initializer": _pos,
                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "adam_eps": _pos,
                "l1_weight": _nonneg,
                "noise_anneal_epoch": {"oneOf": [_nonnegint, {"type": "null"}]},
                "checkpoint_every": _posint,
                "augment": {"type": "boolean"},
                "log_timing": {"type": "boolean"},
            },
        },
        "langevin": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": _nonnegint,
                "step_size": _pos,
                "noise_enabled": {"type": "boolean"},
                "mh_correction": {"type": "boolean"},
                "bound": _pos,
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "toy": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["n"],
                    "properties": {
                        "n": _posint,
                        "family": {"enum": ["gaussian_mixture", "ring", "glyphs"]},
                        "n_classes": _posint,
                        "dim": _posint,
                        "means": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                        "stds": {"type": "array", "items": _pos},
                        "radii": {"type": "array", "items": _pos},
                        "image_size": _posint,
                        "jitter": _nonneg,
                        "seed": _nonnegint,
                    },
                },
                "images": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["condition_dir", "target_dir", "manifest"],
                    "properties": {
                        "condition_dir": {"type": "string"},
                        "target_dir": {"type": "string"},
                        "manifest": {"type": "string"},
                    },
                },
                "glyphs": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["n"],
                    "properties": {
                        "n": _posint,
                        "size": _posint,
                        "hole": _posint,
                        "n_classes": {"type": "integer", "minimum": 1, "maximum": 4},
                        "jitter": _nonneg,
                        "seed": _nonnegint,
                    },
                },
            },
            "minProperties": 1,
            "maxProperties": 1,
        },
        "mask": {
            "type": "object",
            "additionalProperties": False,
            "required": ["top", "left", "height", "width"],
            "properties": {k: _nonnegint for k in ("top", "left", "height", "width")},
        },
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "data": {"type": "array"},
                "theta": {"type": "array"},
                "alpha": {"type": "array"},
                "condition_weights": {"type": "array", "items": _nonneg},
                "n_states": _posint,
                "n_conditions": _posint,
                "seed": _nonnegint,
                "kernel": {"enum": ["metropolis", "exact"]},
                "mcmc_steps": _posint,
                "lr_theta": _pos,
                "lr_alpha": _pos,
            },
        },
        "iterations": _nonnegint,
        "dropout_rate": _prob,
    },
}


@dataclass
class RunConfig:
    raw: dict

    @property
    def task(self) -> str:
        return self.raw["task"]

    @property
    def seed(self) -> int:
        return self.raw.get("seed", 0)

    @property
    def dtype(self):
        return np.float64 if self.raw.get("precision", 32) == 64 else np.float32

    def to_dict(self):
        return copy.deepcopy(self.raw)


def validate(raw: dict) -> RunConfig:
    """Schema check plus cross-field checks.  Raises ConfigError."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    task = raw["task"]
    if task == "fixed_point":
        if "system" not in raw:
            raise ConfigError("fixed_point task needs a 'system' section")
        return RunConfig(copy.deepcopy(raw))
    for key in ("solver", "initializer", "data"):
        if key not in raw:
            raise ConfigError(f"{task} task needs a '{key}' section")
    source = next(iter(raw["data"]))
    allowed = {"toy": ("toy",), "cat2img": ("toy",), "img2img": ("images",),
               "inpaint": ("glyphs", "images")}[task]
    if source not in allowed:
        raise ConfigError(f"{task} task cannot use data source '{source}'")
    if task == "inpaint" and source == "images" and "mask" not in raw:
        raise ConfigError("inpaint on image files needs a 'mask' section")
    tr = raw.get("train", {})
    if "chains" in tr and tr["chains"] != tr.get("batch_size", 100):
        raise ConfigError("train/chains must equal train/batch_size")
    lv = raw.get("langevin", {})
    if lv.get("mh_correction") and lv.get("noise_enabled") is False:
        raise ConfigError("langevin/mh_correction needs noise_enabled")
    return RunConfig(copy.deepcopy(raw))


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return validate(raw)


# ---------------------------------------------------------------------------
# construction

def build_dataset(cfg: RunConfig):
    """Returns (dataset, oracle_or_None, inpaint_mask_or_None)."""
    (source, opts), = cfg.raw["data"].items()
    opts = dict(opts)
    if source == "toy":
        n = opts.pop("n")
        spec = D.ToySpec(**opts)
        ds, oracle = D.generate_toy(spec, n)
        return ds, oracle, None
    if source == "glyphs":
        ds, mask = D.glyph_inpainting_dataset(**opts)
        if "mask" in cfg.raw:
            C, mask = D.occlude(ds.Y, D.MaskSpec(**cfg.raw["mask"]))
            ds = D.CondDataset(ds.Y, C.astype(np.float32), "image", ds.labels)
            mask = mask[0]
        return ds, None, mask
    ds = D.load_paired_images(opts["condition_dir"], opts["target_dir"], opts["manifest"])
    if cfg.task == "inpaint" and len(ds):
        C, mask = D.occlude(ds.Y, D.MaskSpec(**cfg.raw["mask"]))
        ds = D.CondDataset(ds.Y, C.astype(np.float32), "image", ds.labels, ds.normalization)
        return ds, None, mask[0]
    return ds, None, None


def _arch(section: dict, role: str, target_shape, condition_shape) -> M.ArchDescriptor:
    if "descriptor" in section:
        return M.ArchDescriptor.from_dict(section["descriptor"])
    preset = section["preset"]
    opts = dict(section.get("options", {}))
    if preset == "mlp":
        if len(target_shape) != 1 or len(condition_shape) != 1:
            raise ConfigError("the mlp preset needs vector targets and one-hot conditions")
        return M.mlp_arch(target_shape[0], condition_shape[0], generator=role == "initializer",
                          **{k: (tuple(v) if isinstance(v, list) else v) for k, v in opts.items()})
    if preset == "desk_unet":
        return M.desk_unet(channels=target_shape[0], size=target_shape[-1], **opts)
    if preset == "desk_channel_concat_solver":
        return M.desk_channel_concat_solver(channels=target_shape[0], size=target_shape[-1], **opts)
    return M.reference_arch(preset)


def build_models(cfg: RunConfig, target_shape, condition_shape, rng):
    """Fresh (EnergyModel, GeneratorModel) for the config."""
    s, g = cfg.raw["solver"], cfg.raw["initializer"]
    try:
        solver_arch = _arch(s, "solver", target_shape, condition_shape)
        gen_arch = _arch(g, "initializer", target_shape, condition_shape)
    except TypeError as exc:
        raise ConfigError(f"bad architecture options: {exc}") from None
    for role, arch in (("solver", solver_arch), ("initializer", gen_arch)):
        if arch.target_shape != tuple(target_shape) or arch.condition_shape != tuple(condition_shape):
            raise ConfigError(f"{role} architecture expects target {arch.target_shape} and "
                              f"condition {arch.condition_shape}; data has {tuple(target_shape)} "
                              f"and {tuple(condition_shape)}")
    solver = M.EnergyModel.create(solver_arch, rng, s.get("reference_std", 1.0), cfg.dtype)
    gen = M.GeneratorModel.create(gen_arch, rng, g.get("latent_dim", 8),
                                  g.get("residual_std", 0.3), cfg.dtype)
    return solver, gen


def langevin_config(cfg: RunConfig) -> LangevinConfig:
    return LangevinConfig(**cfg.raw.get("langevin", {}))


def train_config(cfg: RunConfig, inpaint_mask=None) -> TrainConfig:
    tr = dict(cfg.raw.get("train", {}))
    if "l1_weight" not in tr:
        # regression toward ground truth helps image-to-image tasks
        tr["l1_weight"] = 100.0 if cfg.task == "img2img" else 0.0
    return TrainConfig(**tr, langevin=langevin_config(cfg), seed=cfg.seed,
                       inpaint_mask=inpaint_mask)
