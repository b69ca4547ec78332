"""Cooperative learning of a fast initializer and a slow energy-based solver."""

from .autodiff import Graph, GraphError, backprop, evaluate, finite_diff_check
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .data import CondDataset, DataError, MaskSpec, ToySpec, generate_toy, occlude
from .fixed_point import DiscreteCoopSystem, fixed_point_sim, random_system
from .langevin import (DivergenceError, LangevinConfig, gibbs_infer_xc, infer_category,
                       infer_latent_x, refine)
from .metrics import ParzenEstimator, parzen_loglik, parzen_protocol, psnr, select_bandwidth, ssim
from .models import (ArchDescriptor, EnergyModel, GeneratorModel, LayerSpec, QuadraticEnergy,
                     energy, energy_grad_y, generate, sample_latent)
from .training import (TrainConfig, TrainState, adam_step, initializer_grad, solver_grad, train,
                       train_initializer_alone, train_step)

__version__ = "0.1.0"
