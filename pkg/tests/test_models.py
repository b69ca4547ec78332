"""Solver energy and initializer networks."""

import numpy as np
import pytest

from cooplearn.autodiff import GraphError, finite_diff_check
from cooplearn.models import (ArchDescriptor, DropoutLatent, EnergyModel, GeneratorModel, LayerSpec,
                              QuadraticEnergy, build_energy_graph, build_generator_graph,
                              desk_channel_concat_solver, desk_unet, energy, energy_grad_y, generate,
                              mlp_arch, one_hot, reference_arch, sample_latent)


def zero_params(model):
    return model.with_params({k: np.zeros_like(v) for k, v in model.params.items()})


def concat_shapes(graph):
    return [graph.node_shapes[i] for i, n in enumerate(graph.nodes) if n.op == "concat_channels"]


@pytest.fixture
def small_solver(rng):
    return EnergyModel.create(mlp_arch(2, 3, (8, 8)), rng, reference_std=1.0, dtype=np.float64)


@pytest.fixture
def small_generator(rng):
    return GeneratorModel.create(mlp_arch(2, 3, (8,), generator=True), rng, latent_dim=2,
                                 residual_std=0.0, dtype=np.float64)


# -- energy --------------------------------------------------------------------

def test_zero_theta_gives_zero_energy(small_solver, rng):
    m = zero_params(small_solver)
    Y = rng.standard_normal((6, 2))
    C = one_hot(rng.integers(0, 3, 6), 3)
    assert np.array_equal(energy(m, Y, C), np.zeros(6))


def test_zero_theta_unit_reference_gradient_is_minus_y(small_solver, rng):
    m = zero_params(small_solver)
    Y = rng.standard_normal((4, 2))
    assert np.allclose(energy_grad_y(m, Y, one_hot([0, 1, 2, 0], 3)), -Y)


def test_quadratic_energy_gradient():
    mu = np.array([0.3, -1.0])
    q = QuadraticEnergy(mu, 1.0)
    Y = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert np.allclose(q.grad_y(Y), mu - Y)


def test_single_dense_energy_hand_computed():
    # f(Y, C) = [Y, C] . w + b with one unit and no hidden layers
    arch = ArchDescriptor("mlp", (2,), (2,), layers=[])
    w = np.array([[0.5], [-2.0], [1.0], [3.0]])
    m = EnergyModel(arch, {"L0.w": w, "L0.b": np.array([0.25])}, reference_std=2.0)
    Y = np.array([[1.0, 2.0]])
    C = np.array([[0.0, 1.0]])
    f = 0.5 * 1 - 2.0 * 2 + 3.0 + 0.25
    assert energy(m, Y, C)[0] == pytest.approx(f)
    assert energy(m, Y, C, reference=True)[0] == pytest.approx(f - 5.0 / 8.0)
    assert np.allclose(energy_grad_y(m, Y, C), [[0.5 - 1 / 4, -2.0 - 2 / 4]])


def test_energy_grad_matches_finite_differences(small_solver, rng):
    Y = rng.standard_normal((3, 2))
    C = one_hot([0, 2, 1], 3)
    g = energy_grad_y(small_solver, Y, C)
    eps = 1e-6
    num = np.zeros_like(Y)
    for i in range(3):
        for j in range(2):
            up, dn = Y.copy(), Y.copy()
            up[i, j] += eps
            dn[i, j] -= eps
            num[i, j] = (small_solver.value(up, C)[i] - small_solver.value(dn, C)[i]) / (2 * eps)
    assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-4


def test_energy_shape_mismatch(small_solver):
    with pytest.raises(GraphError):
        energy(small_solver, np.zeros((2, 3)), one_hot([0, 1], 3))
    with pytest.raises(GraphError):
        energy(small_solver, np.zeros((2, 2)), one_hot([0, 1], 4))
    with pytest.raises(GraphError):
        energy(small_solver, np.zeros((3, 2)), one_hot([0, 1], 3))


def test_energy_invariant_to_batch_order(rng):
    m = EnergyModel.create(desk_channel_concat_solver(1, 16, (4, 8)), rng, dtype=np.float64)
    Y = rng.standard_normal((5, 1, 16, 16))
    C = rng.standard_normal((5, 1, 16, 16))
    perm = rng.permutation(5)
    assert np.allclose(energy(m, Y, C)[perm], energy(m, Y[perm], C[perm]), rtol=1e-12)


# -- reference architectures ---------------------------------------------------

def test_mnist_solver_late_concat_size():
    g, _, _ = build_energy_graph(reference_arch("mnist_solver"))
    assert concat_shapes(g) == [(138, 7, 7)]


def test_mnist_initializer_input_and_output():
    g, _, _ = build_generator_graph(reference_arch("mnist_initializer"), latent_dim=100)
    assert concat_shapes(g) == [(110,)]
    model = GeneratorModel.create(reference_arch("mnist_initializer"), np.random.default_rng(0), 100)
    out = model.mean(np.zeros((1, 100), np.float32), one_hot([3], 10))
    assert out.shape == (1, 1, 28, 28)


def test_mnist_latent_dim_and_reference_std_are_configurable(rng):
    m = GeneratorModel.create(mlp_arch(4, 10, (8,), generator=True), rng, latent_dim=100)
    assert sample_latent(m, 3, rng).shape == (3, 100)
    s = EnergyModel.create(mlp_arch(4, 10, (8,)), rng, reference_std=0.016)
    assert s.reference_std == 0.016


def test_cifar_late_concat_sizes():
    g, _, _ = build_energy_graph(reference_arch("cifar_solver"))
    assert concat_shapes(g) == [(138, 8, 8)]
    gg, _, _ = build_generator_graph(reference_arch("cifar_initializer"), 100)
    assert concat_shapes(gg)[-1] == (138, 8, 8)


def test_early_and_late_variants_share_external_shapes(rng):
    late = ArchDescriptor("cat2img_late", (1, 8, 8), (3,),
                          [LayerSpec("conv", 4, 3, 2)], [LayerSpec("conv", 4, 3, 1)], concat_size=4)
    early = ArchDescriptor("cat2img_early", (1, 8, 8), (3,), [LayerSpec("conv", 4, 3, 2)])
    Y = rng.standard_normal((2, 1, 8, 8))
    C = one_hot([0, 2], 3)
    for arch in (late, early):
        m = EnergyModel.create(arch, rng, dtype=np.float64)
        assert energy(m, Y, C).shape == (2,)


def test_late_concat_size_is_checked():
    bad = ArchDescriptor("cat2img_late", (1, 8, 8), (3,), [LayerSpec("conv", 4, 3, 2)],
                         concat_size=8)
    with pytest.raises(GraphError):
        build_energy_graph(bad)


def test_unet_skip_channels_double():
    arch = desk_unet(1, 32, (4, 8, 16, 16))
    g, _, _ = build_generator_graph(arch, 0)
    # decoder layer j consumes [previous decoder output, encoder layer M-1-j]
    assert concat_shapes(g) == [(32, 4, 4), (16, 8, 8), (8, 16, 16)]


# -- generator -----------------------------------------------------------------

def test_zero_alpha_tanh_head_gives_zero_image(rng):
    arch = ArchDescriptor("cat2img_early", (1, 8, 8), (3,),
                          [LayerSpec("deconv", 4, 4, 1, pad=0), LayerSpec("deconv", 1, 5, 2, out_hw=(8, 8))])
    m = GeneratorModel.create(arch, rng, latent_dim=5, residual_std=0.0)
    m = zero_params(m)
    out = generate(m, rng.standard_normal((2, 5)), one_hot([0, 1], 3), rng)
    assert out.shape == (2, 1, 8, 8)
    assert np.array_equal(out, np.zeros_like(out))


def test_tiny_dense_generator_hand_computed():
    arch = ArchDescriptor("mlp", (1,), (2,), layers=[LayerSpec("dense", 1)])
    w = np.array([[0.5], [1.0], [-1.0]])
    m = GeneratorModel(arch, {"L0.w": w, "L0.b": np.array([0.1])}, latent_dim=1, residual_std=0.0)
    X = np.array([[2.0]])
    C = np.array([[1.0, 0.0]])
    assert generate(m, X, C)[0, 0] == pytest.approx(np.tanh(0.5 * 2 + 1.0 + 0.1))


def test_generator_outputs_bounded_before_noise(rng):
    m = GeneratorModel.create(mlp_arch(2, 3, (8,), generator=True), rng, latent_dim=2)
    m = m.with_params({k: 50 * v for k, v in m.params.items()})
    out = m.mean(rng.standard_normal((100, 2)), one_hot(rng.integers(0, 3, 100), 3))
    assert np.all(np.abs(out) <= 1)


def test_residual_noise_and_determinism(small_generator, rng):
    X = rng.standard_normal((4, 2))
    C = one_hot([0, 1, 2, 0], 3)
    a = generate(small_generator, X, C, np.random.default_rng(3))
    b = generate(small_generator, X, C, np.random.default_rng(4))
    assert np.array_equal(a, b)  # sigma = 0
    noisy = GeneratorModel(small_generator.arch, small_generator.params, 2, residual_std=0.3)
    c = generate(noisy, X, C, np.random.default_rng(3))
    d = generate(noisy, X, C, np.random.default_rng(3))
    assert np.array_equal(c, d) and not np.array_equal(c, a)


def test_generator_shape_errors(small_generator):
    with pytest.raises(GraphError):
        generate(small_generator, np.zeros((2, 3)), one_hot([0, 1], 3))
    with pytest.raises(GraphError):
        generate(small_generator, np.zeros((2, 2)), one_hot([0, 1], 4))


def test_sample_latent_replay_and_moments(small_generator):
    a = sample_latent(small_generator, 5, np.random.default_rng(9))
    b = sample_latent(small_generator, 5, np.random.default_rng(9))
    assert np.array_equal(a, b)
    big = sample_latent(small_generator, 100_000, np.random.default_rng(0))
    # CLT: standard error 1/sqrt(1e5) ~ 0.0032, so 0.02 is > 6 SE
    assert np.all(np.abs(big.mean(axis=0)) < 0.02)
    with pytest.raises(ValueError):
        sample_latent(small_generator, 0, np.random.default_rng(0))


def test_unet_dropout_masks_replay_bit_exact(rng):
    m = GeneratorModel.create(desk_unet(1, 16, (4, 8, 8)), rng, latent_dim=0)
    X = sample_latent(m, 3, np.random.default_rng(5))
    assert isinstance(X, DropoutLatent) and len(X) == 3
    C = rng.standard_normal((3, 1, 16, 16)).astype(np.float32)
    a = m.mean(X, C)
    b = m.mean(DropoutLatent({k: v.copy() for k, v in X.masks.items()}), C)
    assert np.array_equal(a, b)
    other = sample_latent(m, 3, np.random.default_rng(6))
    assert not np.array_equal(a, m.mean(other, C))
    keep = np.concatenate([v.ravel() for v in sample_latent(m, 200, rng).masks.values()]).mean()
    assert keep == pytest.approx(0.5, abs=0.02)
    with pytest.raises(GraphError):
        m.mean(np.zeros((3, 4)), C)


ASSEMBLED = ([("solver", a) for a in ("mlp", "early", "late", "channel_concat", "batchnorm")]
             + [("generator", a) for a in ("mlp", "early", "late", "naive", "unet", "batchnorm")])


@pytest.mark.parametrize("which,arch", ASSEMBLED)
def test_assembled_networks_gradcheck(arch, which, rng):
    graph, inputs = _assembled(arch, which, rng)
    report = finite_diff_check(graph, inputs, tolerance=1e-4)
    assert report.passed, str(report)


def _assembled(kind, which, rng):
    img = (1, 6, 6)
    if kind == "mlp":
        arch = mlp_arch(2, 3, (4,), generator=which == "generator")
        C = one_hot([0, 2], 3)
    elif kind == "early":
        layers = ([LayerSpec("conv", 3, 3, 2)] if which == "solver"
                  else [LayerSpec("deconv", 3, 3, 1, pad=0), LayerSpec("deconv", 1, 4, 2, pad=1, out_hw=(6, 6))])
        arch = ArchDescriptor("cat2img_early", img, (3,), layers, activation="leaky_relu")
        C = one_hot([0, 2], 3)
    elif kind == "late":
        if which == "solver":
            arch = ArchDescriptor("cat2img_late", img, (3,), [LayerSpec("conv", 2, 3, 2)],
                                  [LayerSpec("conv", 2, 3, 1)], concat_size=3)
        else:
            arch = ArchDescriptor("cat2img_late", img, (3,), [LayerSpec("deconv", 2, 3, 1, pad=0)],
                                  [LayerSpec("deconv", 1, 4, 2, pad=1, out_hw=(6, 6))], concat_size=3)
        C = one_hot([0, 2], 3)
    elif kind == "naive":
        arch = ArchDescriptor("img2img_naive", img, img, [LayerSpec("conv", 2, 3, 2)],
                              [LayerSpec("dense", 36, reshape=(1, 6, 6))])
        C = rng.standard_normal((2,) + img)
    elif kind == "unet":
        arch = desk_unet(1, 8, (2, 3), dropout=0.5)
        arch.batchnorm = True
        C = rng.standard_normal((3, 1, 8, 8))
    elif kind == "channel_concat":
        arch = desk_channel_concat_solver(1, 6, (2, 3))
        C = rng.standard_normal((2,) + img)
    else:  # batchnorm in a cat2img stack
        layers = ([LayerSpec("conv", 3, 3, 2), LayerSpec("conv", 2, 3, 1)] if which == "solver"
                  else [LayerSpec("deconv", 3, 3, 1, pad=0), LayerSpec("deconv", 1, 4, 2, pad=1, out_hw=(6, 6))])
        arch = ArchDescriptor("cat2img_early", img, (3,), layers, batchnorm=True)
        C = one_hot([0, 2, 1, 1], 3)
    n = len(C)
    if which == "solver":
        m = EnergyModel.create(arch, rng, dtype=np.float64)
        # larger weights so the check is not dominated by near-zero activations
        params = {k: (v * 20 if k.endswith(".w") else v + 0.1 * rng.standard_normal(v.shape))
                  for k, v in m.params.items()}
        Y = rng.standard_normal((n,) + arch.target_shape)
        return m.graph, {**params, "Y": Y, "C": C}
    m = GeneratorModel.create(arch, rng, latent_dim=3, dtype=np.float64)
    params = {k: (v * 20 if k.endswith(".w") else v + 0.1 * rng.standard_normal(v.shape))
              for k, v in m.params.items()}
    feed = {**params, "C": C}
    X = sample_latent(m, n, rng)
    if isinstance(X, DropoutLatent):
        feed.update(X.masks)
    else:
        feed["X"] = X
    return m.graph, feed


def test_arch_descriptor_dict_round_trip():
    for name in ("mnist_solver", "cifar_initializer", "facade_initializer"):
        a = reference_arch(name)
        assert ArchDescriptor.from_dict(a.to_dict()) == a
