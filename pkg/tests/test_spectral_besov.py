import numpy as np
import pytest

from brwlab.lattice import Field, make_grid, constant_field
from brwlab.spectral import lp_masks, apply_laplacian, fourier_mode
from brwlab.besov import WeightSpec, lp_blocks, paraproduct, besov_norm
from brwlab.environment import sample_environment


def rand_field(grid, seed):
    return Field(grid, np.random.default_rng(seed).standard_normal((grid.M, grid.M)))


def test_masks_partition_of_unity_and_supports():
    for n, L in [(4, 4), (8, 4), (16, 4), (8, 2)]:
        g = make_grid(n, L)
        masks = lp_masks(g)
        total = sum(masks)
        assert np.max(np.abs(total - 1.0)) < 1e-12
        # non-adjacent blocks have disjoint supports
        for i in range(len(masks)):
            for j in range(i + 2, len(masks)):
                assert np.all((masks[i] > 1e-300) * (masks[j] > 1e-300) == 0)


def test_lp_reconstruction_100_random_fields():
    for n in (4, 8, 16):
        g = make_grid(n, 4)
        for seed in range(100):
            f = rand_field(g, seed)
            recon = sum(b.values for b in lp_blocks(f))
            assert np.max(np.abs(recon - f.values)) < 1e-10


def test_constant_field_lives_in_lowest_block():
    g = make_grid(8, 4)
    blocks = lp_blocks(constant_field(g, 3.0))
    assert np.allclose(blocks[0].values, 3.0, atol=1e-12)
    for b in blocks[1:]:
        assert np.max(np.abs(b.values)) < 1e-12


def test_checkerboard_concentrates_in_top_block():
    g = make_grid(16, 4)
    x, y = np.meshgrid(np.arange(g.M), np.arange(g.M), indexing="ij")
    f = Field(g, ((-1.0) ** (x + y)))  # Nyquist mode |k| = n/sqrt(2) * ...
    blocks = lp_blocks(f)
    energies = [float(np.sum(b.values**2)) for b in blocks]
    assert energies[-1] / sum(energies) > 0.999


def test_paraproduct_identity_and_symmetry():
    for n in (4, 8):
        g = make_grid(n, 4)
        for seed in range(100 if n == 8 else 20):
            f, h = rand_field(g, seed), rand_field(g, 1000 + seed)
            less, res, great = paraproduct(f, h)
            total = less.values + res.values + great.values
            assert np.max(np.abs(total - f.values * h.values)) < 1e-10
            res_swapped = paraproduct(h, f)[1]
            assert np.array_equal(res.values, res_swapped.values)


def test_paraproduct_of_one_reproduces_field():
    g = make_grid(8, 4)
    one = constant_field(g, 1.0)
    h = rand_field(g, 5)
    less, res, great = paraproduct(one, h)
    # constant has only the lowest block, so "one below h" collects nothing
    # beyond what the resonant/greater parts already carry; the sum is h
    assert np.max(np.abs(less.values + res.values + great.values - h.values)) < 1e-10


def test_paraproduct_grid_mismatch():
    f = rand_field(make_grid(4, 4), 0)
    h = rand_field(make_grid(8, 4), 0)
    with pytest.raises(ValueError):
        paraproduct(f, h)


def test_lp_blocks_rejects_bad_partition():
    g = make_grid(8, 4)
    masks = lp_masks(g)
    masks[0] = masks[0] * 1.01
    with pytest.raises(ValueError):
        lp_blocks(rand_field(g, 0), masks)


def test_besov_norm_zero_and_constant():
    g = make_grid(8, 4)
    assert besov_norm(constant_field(g, 0.0), 0.5, 2, 2) == 0.0
    val = besov_norm(constant_field(g, 1.0), 0.0, np.inf, np.inf)
    assert abs(val - 1.0) < 1e-6


def test_besov_norm_validates_pq():
    g = make_grid(8, 4)
    with pytest.raises(ValueError):
        besov_norm(constant_field(g, 1.0), 0.0, 0.5, 2)


def test_weight_spec():
    g = make_grid(8, 4)
    w = WeightSpec("polynomial", a=1.0)
    vals = w.evaluate(g)
    assert np.all(vals > 0)
    assert np.isclose(vals[g.M // 2, g.M // 2], 1.0)  # (1+0)^1 at the origin
    e = WeightSpec("exponential", l=-0.5, sigma=0.5).evaluate(g)
    assert np.all(e > 0) and np.all(e <= 1.0)
    with pytest.raises(ValueError):
        WeightSpec("polynomial", a=-1.0)
    with pytest.raises(ValueError):
        WeightSpec("banana")


def test_environment_besov_norm_bounded_over_n():
    # white-noise-like regularity: the \alpha = -1-kappa' norm of xi stays of
    # one size as the lattice refines (trend band, fixed seeds)
    kappa = 0.1
    norms = []
    for n in (8, 16, 32, 64):
        g = make_grid(n, 4)
        env = sample_environment(g, "rademacher", seed=42)
        norms.append(besov_norm(env.xi, -1.0 - kappa, np.inf, np.inf,
                                WeightSpec("polynomial", a=1.0)))
    assert max(norms) / min(norms) < 3.0


def test_laplacian_symbol_matches_stencil():
    g = make_grid(8, 4)
    for mx, my in [(1, 0), (3, 2), (7, 5)]:
        mode = fourier_mode(g, mx, my)
        lam = 4 * g.n**2 * (np.sin(np.pi * mx / (g.L * g.n)) ** 2
                            + np.sin(np.pi * my / (g.L * g.n)) ** 2)
        resid = apply_laplacian(mode).values + lam * mode.values
        assert np.max(np.abs(resid)) < 1e-9 * max(lam, 1.0)
