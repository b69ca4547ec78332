"""Cooperative training of the initializer and the solver.

One iteration (``train_step``):

1. draw latents X and initial solutions Y^ = g(X, C) + eps,
2. refine them with Langevin dynamics on the solver,
3. raise f on observed solutions relative to refined ones (Adam ascent),
4. regress g(X, C) onto the refined solutions with the *same* X (Adam descent),
   optionally pulling it toward the ground truth with an l1 term.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import backprop
from .data import CondDataset, augment
from .langevin import LangevinConfig, infer_latent_x, refine
from .models import DropoutLatent, EnergyModel, GeneratorModel, generate, sample_latent

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 100
    chains: int | None = None
    lr_solver: float = 0.002
    lr_initializer: float = 0.0064
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    langevin: LangevinConfig = field(default_factory=LangevinConfig)
    l1_weight: float = 0.0
    noise_anneal_epoch: int | None = None
    seed: int = 0
    checkpoint_every: int = 1
    augment: bool = False
    inpaint_mask: np.ndarray | None = None
    log_timing: bool = False

    def __post_init__(self):
        if self.chains is None:
            self.chains = self.batch_size
        if self.chains != self.batch_size:
            raise ValueError("one chain per example: chains must equal batch_size")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be nonnegative")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be positive")


@dataclass
class TrainState:
    solver: EnergyModel
    initializer: GeneratorModel
    solver_moments: dict
    initializer_moments: dict
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0

    @classmethod
    def create(cls, solver, initializer, seed=0):
        return cls(solver, initializer, zero_moments(solver.params),
                   zero_moments(initializer.params), np.random.default_rng(seed))


@dataclass
class StepStats:
    f_observed: float
    f_refined: float
    solver_grad_norm: float
    initializer_loss: float
    wall_time: float

    def record(self, epoch, step, timing=False):
        d = {"epoch": epoch, "step": step, **asdict(self)}
        if not timing:
            d.pop("wall_time")
        return d


def zero_moments(params):
    return {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}


def adam_step(params, grads, moments, lr, beta1, beta2, eps, t):
    """One bias-corrected Adam descent step.  Returns (params, moments)."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    new_p, new_m = {}, {}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        m, v = moments[k]
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"{k}: shapes {p.shape}, grad {g.shape}, moment {m.shape} differ")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_p[k] = (p - step).astype(p.dtype, copy=False)
        new_m[k] = (m.astype(p.dtype, copy=False), v.astype(p.dtype, copy=False))
    return new_p, new_m


def grad_norm(grads):
    # fixed summation order so the value does not depend on dict insertion order
    return float(np.sqrt(sum(float(np.sum(np.square(grads[k], dtype=np.float64)))
                             for k in sorted(grads))))


def solver_grad(observed, refined, C, model: EnergyModel):
    """d/dtheta [mean f(observed, C) - mean f(refined, C)]."""
    observed, refined = np.asarray(observed), np.asarray(refined)
    if observed.shape != refined.shape or len(C) != len(observed):
        raise ValueError(f"batch mismatch: observed {observed.shape}, refined {refined.shape}, "
                         f"conditions {len(C)}")
    n = len(observed)
    w = np.full(n, 1.0 / n)
    g_obs = model.param_grad(observed, C, w)
    g_ref = model.param_grad(refined, C, w)
    return {k: g_obs[k] - g_ref[k] for k in g_obs}


def _latent_len(latents):
    return len(latents) if isinstance(latents, DropoutLatent) else np.shape(latents)[0]


def initializer_loss_and_grad(latents, C, refined, model: GeneratorModel,
                              ground_truth=None, l1_weight=0.0):
    n = len(C)
    if _latent_len(latents) != n or len(refined) != n:
        raise ValueError("latent/condition/refined batch sizes differ")
    t = model.tape(latents, C)
    g = t.outputs["Y"]
    resid = g - np.asarray(refined, dtype=g.dtype)
    loss = float(np.sum(resid.astype(np.float64) ** 2) / n)
    seed = (2.0 / n) * resid
    if ground_truth is not None and l1_weight > 0:
        gt_resid = g - np.asarray(ground_truth, dtype=g.dtype)
        loss += l1_weight * float(np.abs(gt_resid).sum() / n)
        seed = seed + (l1_weight / n) * np.sign(gt_resid)
    grads = backprop(t, seed.astype(g.dtype, copy=False), list(model.params))
    return loss, grads


def initializer_grad(latents, C, refined, model: GeneratorModel, ground_truth=None, l1_weight=0.0):
    """Gradient of (1/n) sum |Y~ - g(X, C)|^2 (+ l1_weight (1/n) sum |Y - g(X, C)|_1)."""
    return initializer_loss_and_grad(latents, C, refined, model, ground_truth, l1_weight)[1]


def langevin_for_epoch(cfg: TrainConfig, epoch: int) -> LangevinConfig:
    lcfg = cfg.langevin
    if cfg.inpaint_mask is not None:
        lcfg = replace(lcfg, update_mask=cfg.inpaint_mask)
    if cfg.noise_anneal_epoch is not None and epoch >= cfg.noise_anneal_epoch:
        lcfg = lcfg.without_noise()
    return lcfg


def initial_solutions(initializer, X, C, rng, inpaint_mask=None):
    """Y^ = g(X, C) + eps; for inpainting the known pixels are copied from C."""
    Y0 = generate(initializer, X, C, rng)
    if inpaint_mask is not None:
        Y0 = np.where(np.broadcast_to(inpaint_mask, Y0.shape) > 0, Y0, np.asarray(C, dtype=Y0.dtype))
    return Y0


def train_step(batch, state: TrainState, cfg: TrainConfig):
    """One pass of initialize / solve / objective shift / mapping shift."""
    Y, C = batch
    if len(Y) == 0:
        raise ValueError("empty batch")
    start = time.perf_counter()
    solver, gen, rng = state.solver, state.initializer, state.rng
    Y = np.asarray(Y, dtype=solver.dtype)
    C = np.asarray(C, dtype=solver.dtype)

    X = sample_latent(gen, len(Y), rng)
    Y_init = initial_solutions(gen, X, C, rng, cfg.inpaint_mask)
    Y_ref = refine(Y_init, C, solver, langevin_for_epoch(cfg, state.epoch), rng)

    t = state.step + 1
    g_theta = solver_grad(Y, Y_ref, C, solver)
    ascent = {k: -v for k, v in g_theta.items()}
    theta, m_theta = adam_step(solver.params, ascent, state.solver_moments, cfg.lr_solver,
                               cfg.beta1, cfg.beta2, cfg.adam_eps, t)

    loss, g_alpha = initializer_loss_and_grad(X, C, Y_ref, gen, Y if cfg.l1_weight > 0 else None,
                                              cfg.l1_weight)
    alpha, m_alpha = adam_step(gen.params, g_alpha, state.initializer_moments, cfg.lr_initializer,
                               cfg.beta1, cfg.beta2, cfg.adam_eps, t)

    stats = StepStats(
        f_observed=float(np.mean(solver.value(Y, C, reference=False))),
        f_refined=float(np.mean(solver.value(Y_ref, C, reference=False))),
        solver_grad_norm=grad_norm(g_theta),
        initializer_loss=loss,
        wall_time=time.perf_counter() - start,
    )
    new_state = replace(state, solver=solver.with_params(theta), initializer=gen.with_params(alpha),
                        solver_moments=m_theta, initializer_moments=m_alpha, step=t)
    return new_state, stats


def iterate_batches(dataset: CondDataset, cfg: TrainConfig, rng):
    n = len(dataset)
    perm = rng.permutation(n)
    for s in range(0, n, cfg.batch_size):
        idx = perm[s:s + cfg.batch_size]
        Y, C = dataset.Y[idx], dataset.C[idx]
        if cfg.augment:
            pairs = [augment((y, c), rng) for y, c in zip(Y, C)]
            Y = np.stack([p[0] for p in pairs])
            C = np.stack([p[1] for p in pairs])
        yield Y, C


def train(dataset: CondDataset, cfg: TrainConfig, state: TrainState, log_file=None,
          on_checkpoint=None):
    """Run epochs ``state.epoch`` .. ``cfg.epochs - 1``.

    ``log_file`` (an open text handle) receives one JSON record per step.
    ``on_checkpoint(state)`` is called every ``cfg.checkpoint_every`` epochs
    and after the final epoch.
    """
    if len(dataset) == 0 and cfg.epochs > state.epoch:
        raise ValueError("cannot train on an empty dataset")
    while state.epoch < cfg.epochs:
        for batch in iterate_batches(dataset, cfg, state.rng):
            state, stats = train_step(batch, state, cfg)
            if log_file is not None:
                log_file.write(json.dumps(stats.record(state.epoch, state.step, cfg.log_timing)) + "\n")
        state = replace(state, epoch=state.epoch + 1)
        log.info("epoch %d done (step %d)", state.epoch, state.step)
        if log_file is not None:
            log_file.flush()
        if on_checkpoint is not None and (state.epoch % cfg.checkpoint_every == 0
                                          or state.epoch == cfg.epochs):
            on_checkpoint(state)
    return state


def train_initializer_alone(dataset: CondDataset, model: GeneratorModel, cfg: TrainConfig,
                            inference: LangevinConfig, rng=None, history=None):
    """Alternating back-propagation: infer X by Langevin, then regress g on (X, C).

    Latents persist per example across epochs (warm-started chains).  When
    ``history`` is a list, the mean reconstruction loss of each epoch is
    appended to it.
    """
    if model.uses_dropout_latent:
        raise ValueError("standalone training needs posterior inference, unsupported for U-Net")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = len(dataset)
    X_all = rng.standard_normal((n, model.latent_dim)).astype(model.dtype)
    moments = zero_moments(model.params)
    t = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            Y, C = dataset.Y[idx], dataset.C[idx]
            X = infer_latent_x(Y, C, model, inference, X_all[idx], rng)
            X_all[idx] = X
            loss, grads = initializer_loss_and_grad(X, C, Y, model)
            total += loss * len(idx)
            t += 1
            params, moments = adam_step(model.params, grads, moments, cfg.lr_initializer,
                                        cfg.beta1, cfg.beta2, cfg.adam_eps, t)
            model = model.with_params(params)
        if history is not None:
            history.append(total / n)
    return model


def draw_solutions(initializer, solver, C, lcfg: LangevinConfig, rng, stage="solver"):
    """Initializer outputs Y^ (``stage="initializer"``) or their Langevin refinements."""
    if stage not in ("initializer", "solver"):
        raise ValueError(f"unknown stage {stage!r}")
    C = np.asarray(C, dtype=initializer.dtype)
    X = sample_latent(initializer, len(C), rng)
    Y0 = initial_solutions(initializer, X, C, rng, None if lcfg.update_mask is None else lcfg.update_mask)
    if stage == "initializer":
        return Y0
    return refine(Y0, C, solver, lcfg, rng)
