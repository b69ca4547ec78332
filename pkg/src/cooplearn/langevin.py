"""Langevin refinement of solutions, latents and soft category variables."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import backprop
from .models import GeneratorModel


class DivergenceError(FloatingPointError):
    """A chain left the configured bound or produced non-finite values."""


@dataclass(frozen=True)
class LangevinConfig:
    steps: int = 15
    step_size: float = 0.002
    noise_enabled: bool = True
    mh_correction: bool = False
    update_mask: np.ndarray | None = None
    bound: float = 1e3

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.mh_correction and not self.noise_enabled:
            raise ValueError("MH correction needs the noise term")

    def without_noise(self):
        return replace(self, noise_enabled=False, mh_correction=False)


def _guard(state, bound, what):
    if not np.all(np.isfinite(state)):
        raise DivergenceError(f"{what}: non-finite state (step size too large?)")
    peak = float(np.max(np.abs(state))) if state.size else 0.0
    if peak > bound:
        raise DivergenceError(f"{what}: |state| reached {peak:.3g} > bound {bound:g}")


def _mask_for(cfg, shape, dtype):
    if cfg.update_mask is None:
        return None
    m = np.asarray(cfg.update_mask)
    try:
        m = np.broadcast_to(m, shape)
    except ValueError:
        raise ValueError(f"update mask of shape {m.shape} does not fit state {shape}") from None
    return m.astype(bool)


def refine(Y0, C, model, cfg: LangevinConfig, rng: np.random.Generator):
    """Run ``cfg.steps`` Langevin steps on the model's total value, starting at Y0.

    Each step is ``Y + (delta^2 / 2) grad + delta U`` with U standard normal.
    With ``mh_correction`` every chain accepts or rejects its proposal using
    the Langevin proposal density.  Entries outside ``cfg.update_mask`` are
    copied from Y0 untouched.
    """
    Y = np.array(Y0, copy=True)
    if cfg.steps == 0:
        return Y
    mask = _mask_for(cfg, Y.shape, Y.dtype)
    d = cfg.step_size
    half = d * d / 2
    axes = tuple(range(1, Y.ndim))
    if cfg.mh_correction:
        logp, grad = model.value_and_grad_y(Y, C)
    for _ in range(cfg.steps):
        if not cfg.mh_correction:
            grad = model.grad_y(Y, C)
        drift = half * grad
        if cfg.noise_enabled:
            noise = rng.standard_normal(Y.shape).astype(Y.dtype, copy=False)
            step = drift + d * noise
        else:
            step = drift
        if mask is not None:
            step = np.where(mask, step, 0)
        prop = Y + step
        if mask is not None:
            prop = np.where(mask, prop, Y)
        if cfg.mh_correction:
            logp_new, grad_new = model.value_and_grad_y(prop, C)
            fwd = prop - Y - drift
            bwd = Y - prop - half * grad_new
            if mask is not None:
                fwd = np.where(mask, fwd, 0)
                bwd = np.where(mask, bwd, 0)
            log_ratio = (logp_new - logp
                         - (bwd ** 2).sum(axis=axes) / (2 * d * d)
                         + (fwd ** 2).sum(axis=axes) / (2 * d * d))
            u = rng.random(len(Y))
            accept = np.log(u) < log_ratio
            sel = accept.reshape((-1,) + (1,) * (Y.ndim - 1))
            Y = np.where(sel, prop, Y)
            logp = np.where(accept, logp_new, logp)
            grad = np.where(sel, grad_new, grad)
        else:
            Y = prop
        _guard(Y, cfg.bound, "refine")
    return Y


def _require_vector_latent(model: GeneratorModel):
    if model.uses_dropout_latent:
        raise ValueError("latent inference is not supported for the dropout-latent U-Net initializer")
    if model.residual_std <= 0:
        raise ValueError("latent inference needs a positive residual_std")


def latent_drift(Y, C, model: GeneratorModel, X):
    """(1/sigma^2) (Y - g(X, C)) dg/dX - X, the gradient of log p(X, Y | C)."""
    _require_vector_latent(model)
    t = model.tape(X, C)
    resid = (np.asarray(Y, dtype=model.dtype) - t.outputs["Y"]) / model.residual_std ** 2
    return backprop(t, resid, ["X"])["X"] - X


def infer_latent_x(Y, C, model: GeneratorModel, cfg: LangevinConfig, X0, rng):
    """Sample X from p(X | Y, C) by Langevin dynamics started at X0."""
    _require_vector_latent(model)
    X = np.array(X0, dtype=model.dtype, copy=True)
    s = cfg.step_size
    for _ in range(cfg.steps):
        X = X + (s * s / 2) * latent_drift(Y, C, model, X)
        if cfg.noise_enabled:
            X = X + s * rng.standard_normal(X.shape).astype(X.dtype, copy=False)
        _guard(X, cfg.bound, "infer_latent_x")
    return X


def softmax(A):
    A = np.asarray(A)
    z = A - A.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def category_drift(Y, X, model: GeneratorModel, A):
    """Gradient of log p(A, Y | X) with C = softmax(A) and prior A ~ N(0, I)."""
    _require_vector_latent(model)
    C = softmax(A)
    t = model.tape(X, C)
    resid = (np.asarray(Y, dtype=model.dtype) - t.outputs["Y"]) / model.residual_std ** 2
    gc = backprop(t, resid, ["C"])["C"]
    # softmax Jacobian-transpose product: c * (v - <c, v>)
    ga = C * (gc - (C * gc).sum(axis=1, keepdims=True))
    return ga - A


def infer_category(Y, X, model: GeneratorModel, cfg: LangevinConfig, A0, rng):
    """Sample auxiliary logits A from p(A | Y, X); returns (A, softmax(A))."""
    if not model.arch.categorical or model.arch.condition_shape[0] < 2:
        raise ValueError("category inference needs a one-hot condition with K >= 2")
    A = np.array(A0, dtype=model.dtype, copy=True)
    s = cfg.step_size
    for _ in range(cfg.steps):
        A = A + (s * s / 2) * category_drift(Y, X, model, A)
        if cfg.noise_enabled:
            A = A + s * rng.standard_normal(A.shape).astype(A.dtype, copy=False)
        _guard(A, cfg.bound, "infer_category")
    return A, softmax(A)


def gibbs_infer_xc(Y, model: GeneratorModel, cfg: LangevinConfig, rng, sweeps: int = 10,
                   category_cfg: LangevinConfig | None = None):
    """Alternate X ~ p(X | Y, C) and A ~ p(A | Y, X) from a random start.

    Returns (X, C) with C = softmax(A).
    """
    if not model.arch.categorical:
        raise ValueError("joint inference needs a categorical condition")
    _require_vector_latent(model)
    category_cfg = category_cfg or cfg
    n = len(Y)
    K = model.arch.condition_shape[0]
    X = rng.standard_normal((n, model.latent_dim)).astype(model.dtype)
    A = rng.standard_normal((n, K)).astype(model.dtype)
    for _ in range(sweeps):
        X = infer_latent_x(Y, softmax(A), model, cfg, X, rng)
        A, _ = infer_category(Y, X, model, category_cfg, A, rng)
    return X, softmax(A)
