import numpy as np
import pytest
from conftest import rel_err

from padis.assemble import (
    Assembler,
    OverlapGrid,
    WholeCanvasAssembler,
    assembled_denoise,
    assembled_denoise_vjp,
    assembled_score,
    draw_partition,
    full_average_score,
    overlap_average_denoise,
    overlap_denoise,
    overlap_denoise_vjp,
    overlap_stitch_denoise,
    stochastic_partition_score,
)
from padis.data import synth_images
from padis.denoiser import NetConfig, PatchDataset, TrainConfig, train
from padis.grid import PartitionSpec, all_partitions, extract_patch_array, make_partition, positional_channels
from padis.scoremodel import GaussianPrior, PatchProductPrior, PixelGaussianOracle


class ConstantModel:
    def __init__(self, value):
        self.value = value

    def denoise(self, x, sigma, pos=None):
        return np.full(x.shape, self.value)

    def vjp(self, x, sigma, pos, v):
        return np.zeros_like(v)


class LocationModel:
    """Output depends on the patch contents and on its absolute position."""

    def denoise(self, x, sigma, pos=None):
        return np.tanh(x) * (1.0 + 0.3 * pos[:, :1]) + 0.1 * pos[:, 1:]

    def vjp(self, x, sigma, pos, v):
        return v * (1.0 - np.tanh(x) ** 2) * (1.0 + 0.3 * pos[:, :1])


def _pixel_oracle(N, P, C, rng):
    _, M = make_partition(N, P)
    prior = GaussianPrior(rng.uniform(0.2, 0.8, (C, N, N)), rng.uniform(0.01, 0.1, (C, N, N)))
    return PixelGaussianOracle(prior, M)


def test_product_prior_score_is_exact(rng):
    worst = 0.0
    for trial in range(100):
        N, P, C = [(8, 3, 1), (10, 4, 2), (12, 5, 1)][trial % 3]
        k, M = make_partition(N, P)
        spec = PartitionSpec.create(N, P, int(rng.integers(1, M + 1)), int(rng.integers(1, M + 1)))
        prior = PatchProductPrior.random(spec, C, rng)
        sigma = float(np.exp(rng.uniform(np.log(0.01), np.log(5))))
        canvas = prior.sample(rng) + sigma * rng.standard_normal((C, spec.canvas_size, spec.canvas_size))
        got = assembled_score(canvas, sigma, prior.patch_model(), spec)
        worst = max(worst, rel_err(got, prior.canvas_score(canvas, sigma)))
    assert worst < 1e-10


def test_score_vanishes_at_prior_mean(rng):
    N, P = 12, 4
    oracle = _pixel_oracle(N, P, 1, rng)
    mean, _ = oracle.canvas_prior()
    for spec in all_partitions(N, P):
        assert np.max(np.abs(assembled_score(mean, 0.3, oracle, spec))) < 1e-12


def test_symmetric_prior_patch_swap(rng):
    N, P = 8, 4
    spec = PartitionSpec.create(N, P, 2, 2)
    prior = PatchProductPrior.random(spec, 1, rng)
    shared = prior.factors[0]
    prior = PatchProductPrior(spec, 1, [shared] * spec.n_patches)
    canvas = rng.standard_normal((1, spec.canvas_size, spec.canvas_size))
    (r0, c0), (r1, c1) = spec.locations()[:2]
    canvas[:, r1:r1 + P, c1:c1 + P] = canvas[:, r0:r0 + P, c0:c0 + P]
    s = assembled_score(canvas, 0.4, prior.patch_model(), spec)
    np.testing.assert_array_equal(s[:, r0:r0 + P, c0:c0 + P], s[:, r1:r1 + P, c1:c1 + P])


def test_single_partition_is_deterministic(rng):
    N, P = 11, 4
    assert make_partition(N, P)[1] == 1
    model = LocationModel()
    canvas = rng.standard_normal((1, N + 2, N + 2))
    s, ij = stochastic_partition_score(canvas, 0.5, model, N, P, rng)
    assert ij == (1, 1)
    np.testing.assert_array_equal(s, assembled_score(canvas, 0.5, model, PartitionSpec.create(N, P)))


@pytest.mark.parametrize("N,P", [(8, 3), (10, 4), (16, 5), (13, 4)])
def test_stochastic_expectation_matches_full_average(rng, N, P):
    _, M = make_partition(N, P)
    assert M <= 4
    model = LocationModel()
    L = N + 2 * M
    canvas = rng.standard_normal((1, L, L))
    total = np.zeros_like(canvas)
    for i in range(1, M + 1):
        for j in range(1, M + 1):
            total += assembled_score(canvas, 0.7, model, PartitionSpec.create(N, P, i, j))
    assert rel_err(total / M**2, full_average_score(canvas, 0.7, model, N, P)) < 1e-12


def test_partition_draws_reproducible_and_uniform():
    a = [draw_partition(20, 6, np.random.default_rng(4)) for _ in range(2)]
    assert a[0] == a[1]
    r = np.random.default_rng(0)
    _, M = make_partition(20, 6)
    counts = np.zeros((M, M))
    for _ in range(20000):
        s = draw_partition(20, 6, r)
        counts[s.i - 1, s.j - 1] += 1
    assert np.all(np.abs(counts / 20000 - 1 / M**2) < 0.01)


def test_oracle_patches_match_whole_canvas_oracle(rng):
    N, P = 12, 5
    oracle = _pixel_oracle(N, P, 2, rng)
    mean, var = oracle.canvas_prior()
    canvas = mean + 0.5 * rng.standard_normal(mean.shape)
    for spec in all_partitions(N, P):
        got = assembled_denoise(canvas, 0.3, oracle, spec)
        expected = mean + var / (var + 0.09) * (canvas - mean)
        assert rel_err(got, expected) < 1e-10


def test_small_sigma_oracle_returns_canvas(rng):
    N, P = 12, 5
    oracle = _pixel_oracle(N, P, 1, rng)
    spec = PartitionSpec.create(N, P, 2, 3)
    canvas = rng.standard_normal((1, spec.canvas_size, spec.canvas_size))
    D = assembled_denoise(canvas, 1e-9, oracle, spec)
    M = spec.M
    image = np.zeros((spec.canvas_size, spec.canvas_size), dtype=bool)
    image[M:M + N, M:M + N] = True
    np.testing.assert_allclose(D[:, image], canvas[:, image], atol=1e-12)


def test_tweedie_consistency_bitwise(rng):
    model = LocationModel()
    spec = PartitionSpec.create(10, 4, 2, 1)
    canvas = rng.standard_normal((1, spec.canvas_size, spec.canvas_size))
    sigma = 0.37
    D = assembled_denoise(canvas, sigma, model, spec)
    np.testing.assert_array_equal((D - canvas) / sigma**2, assembled_score(canvas, sigma, model, spec))


def test_vjp_zero_and_oracle_blockwise(rng):
    N, P = 12, 5
    oracle = _pixel_oracle(N, P, 1, rng)
    _, var = oracle.canvas_prior()
    spec = PartitionSpec.create(N, P, 3, 2)
    canvas = rng.standard_normal(var.shape)
    assert np.all(assembled_denoise_vjp(canvas, 0.2, oracle, spec, np.zeros_like(canvas)) == 0)
    v = rng.standard_normal(var.shape)
    expected = np.where(spec.border_mask(), 0.0, var / (var + 0.04) * v)
    assert rel_err(assembled_denoise_vjp(canvas, 0.2, oracle, spec, v), expected) < 1e-12


def test_trained_net_vjp_single_precision():
    images, _ = synth_images("ct_phantom", 4, 16, 0)
    ck = train(PatchDataset(images, 16, 6), TrainConfig(iterations=20, batch_size=4, patch_sizes={6: 1.0}),
               NetConfig(width=8, depth=3))
    r = np.random.default_rng(2)
    asm32 = Assembler(ck.network(dtype=np.float32), 16, 6)
    asm64 = Assembler(ck.network(dtype=np.float64), 16, 6)
    plan = asm32.plan(r)
    x = r.standard_normal(asm32.canvas_shape)
    u, v = r.standard_normal((2, *x.shape))
    h = 1e-5
    fd = (asm64.denoise(x + h * u, 0.3, plan) - asm64.denoise(x - h * u, 0.3, plan)) / (2 * h)
    lhs = float(np.sum(fd * v))
    rhs = float(np.sum(u * asm32.denoise_vjp(x, 0.3, plan, v)))
    assert abs(lhs - rhs) < 1e-3 * abs(lhs)


def test_loss_splits_over_patches(rng):
    """Whole-canvas squared error under a fixed partition equals the sum of per-patch errors."""
    model = LocationModel()
    N, P = 14, 4
    k, M = make_partition(N, P)
    for i in range(1, M + 1):
        spec = PartitionSpec.create(N, P, i, M + 1 - i)
        clean = np.zeros((2, spec.canvas_size, spec.canvas_size))
        clean[:, M:M + N, M:M + N] = rng.random((2, N, N))
        noisy = clean + 0.3 * rng.standard_normal(clean.shape)
        noisy[:, spec.border_mask()] = clean[:, spec.border_mask()]  # border term is exactly zero
        whole = float(np.sum((assembled_denoise(noisy, 0.3, model, spec) - clean) ** 2))
        patches = extract_patch_array(noisy, spec)
        D = model.denoise(patches, 0.3, positional_channels(spec.canvas_size, spec.locations(), P))
        split = sum(float(np.sum((d - c) ** 2)) for d, c in zip(D, extract_patch_array(clean, spec)))
        assert abs(whole - split) <= 1e-10 * abs(whole)


def test_overlap_zero_matches_partition(rng):
    spec = PartitionSpec.create(11, 4, 1, 1)
    grid = OverlapGrid(origin=0, size=spec.side, P=4, overlap=0, canvas_size=spec.canvas_size)
    assert grid.locations() == spec.locations()
    model = LocationModel()
    canvas = rng.standard_normal((1, spec.canvas_size, spec.canvas_size))
    ref = assembled_denoise(canvas, 0.5, model, spec)
    np.testing.assert_allclose(overlap_average_denoise(canvas, 0.5, model, grid), ref, atol=1e-15)
    np.testing.assert_allclose(overlap_stitch_denoise(canvas, 0.5, model, grid), ref, atol=1e-15)


@pytest.mark.parametrize("overlap", [0, 3, 5])
def test_overlap_constant_model(rng, overlap):
    grid = OverlapGrid(origin=2, size=14, P=6, overlap=overlap, canvas_size=18)
    canvas = rng.standard_normal((1, 18, 18))
    for fn in (overlap_average_denoise, overlap_stitch_denoise):
        out = fn(canvas, 0.1, ConstantModel(0.7), grid)
        np.testing.assert_allclose(out[:, grid.region_mask()], 0.7, atol=1e-14)
        assert np.all(out[:, ~grid.region_mask()] == 0)


def test_overlap_coverage_counts():
    grid = OverlapGrid(origin=0, size=256, P=56, overlap=8, canvas_size=256)
    cov = grid.coverage()
    assert set(np.unique(cov).tolist()) == {1, 2, 4}
    for mode in ("overlap_average", "overlap_stitch"):
        total = np.zeros((256, 256))
        w = grid.weights(mode)
        for n, (r, c) in enumerate(grid.locations()):
            total[r:r + 56, c:c + 56] += w[n][:max(0, 256 - r), :max(0, 256 - c)]
        np.testing.assert_allclose(total, 1.0, atol=1e-12)


def test_overlap_vjp_adjoint(rng):
    grid = OverlapGrid(origin=2, size=14, P=6, overlap=2, canvas_size=18)
    model = LocationModel()
    x = rng.standard_normal((1, 18, 18))
    u, v = rng.standard_normal((2, 1, 18, 18))
    h = 1e-6
    for mode in ("overlap_average", "overlap_stitch"):
        fd = (overlap_denoise(x + h * u, 0.3, model, grid, mode) - overlap_denoise(x - h * u, 0.3, model, grid, mode)) / (2 * h)
        lhs, rhs = float(np.sum(fd * v)), float(np.sum(u * overlap_denoise_vjp(x, 0.3, model, grid, mode, v)))
        assert abs(lhs - rhs) < 1e-7 * abs(lhs)


def test_assembler_modes_and_whole_canvas(rng):
    N, P = 12, 5
    oracle = _pixel_oracle(N, P, 1, rng)
    mean, var = oracle.canvas_prior()
    canvas = mean + rng.standard_normal(mean.shape)
    expected = mean + var / (var + 0.25) * (canvas - mean)
    whole = WholeCanvasAssembler(oracle, N, oracle.M)
    assert rel_err(whole.denoise(canvas, 0.5), expected) < 1e-12
    for mode in ("padis_stochastic", "padis_full_average", "overlap_average", "overlap_stitch"):
        asm = Assembler(oracle, N, P, mode=mode, overlap=2)
        plan = asm.plan(rng)
        assert rel_err(asm.denoise(canvas, 0.5, plan), expected) < 1e-12
        assert rel_err(asm.score(canvas, 0.5, plan), (expected - canvas) / 0.25) < 1e-12
    with pytest.raises(ValueError):
        Assembler(oracle, N, P, mode="bogus")
    with pytest.raises(ValueError):
        Assembler(oracle, N, P).denoise(canvas, 0.5, None)
