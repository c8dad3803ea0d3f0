import numpy as np
import pytest

from brwlab.lattice import Field, make_grid
from brwlab.spectral import apply_laplacian, apply_multiplier, chi_mask, fourier_mode
from brwlab.environment import (sample_environment, compute_I_xi, renormalization_constant,
                                dist_bound, write_environment, read_environment,
                                constant_environment)


def test_rademacher_values_and_signs():
    g = make_grid(4, 4)
    env = sample_environment(g, "rademacher", seed=0)
    assert set(np.unique(env.xi.values)) == {-4.0, 4.0}
    # pointwise sign decomposition, exact
    assert np.array_equal(env.xi_plus.values - env.xi_minus.values, env.xi.values)
    assert np.array_equal(env.xi_plus.values + env.xi_minus.values, env.xi_abs.values)
    assert np.all(env.xi_plus.values * env.xi_minus.values == 0.0)
    assert np.all(env.xi_plus.values >= 0) and np.all(env.xi_minus.values >= 0)


def test_uniform_bound_and_clt_mean():
    for dist in ("rademacher", "truncated-gaussian"):
        g = make_grid(32, 4)
        env = sample_environment(g, dist, seed=3)
        assert np.max(np.abs(env.xi.values)) / g.n <= dist_bound(dist) + 1e-12
        n_sites = g.n_sites
        assert abs(np.mean(env.xi.values) / g.n) <= 4.0 / np.sqrt(n_sites)


def test_nu_hat_near_half_for_rademacher():
    g = make_grid(32, 4)
    env = sample_environment(g, "rademacher", seed=5)
    band = 4.0 / np.sqrt(g.n_sites)
    assert 0.5 - band <= env.nu_hat <= 0.5 + band


def test_truncated_gaussian_variance_normalized():
    g = make_grid(64, 4)
    env = sample_environment(g, "truncated-gaussian", seed=1)
    phi = env.xi.values / g.n
    assert abs(phi.mean()) < 4 / np.sqrt(g.n_sites)
    assert abs(phi.var() - 1.0) < 0.05


def test_I_xi_zero_field():
    g = make_grid(8, 4)
    out = compute_I_xi(Field(g, np.zeros((g.M, g.M))))
    assert np.max(np.abs(out.values)) == 0.0


def test_I_xi_single_mode_inside_cutoff():
    g = make_grid(8, 4)
    mode = fourier_mode(g, 4, 0)  # |k| = 1 >= 1/4, chi = 1 there
    I = compute_I_xi(mode)
    lam = 4 * g.n**2 * np.sin(np.pi * (4 / g.L) / g.n) ** 2
    assert np.max(np.abs(I.values - mode.values / lam)) < 1e-10
    # -Laplacian I equals the mode pointwise
    resid = -apply_laplacian(I).values - mode.values
    assert np.max(np.abs(resid)) < 1e-10


def test_I_xi_mode_inside_dead_zone_is_killed():
    g = make_grid(8, 16)  # frequency spacing 1/16 < 1/8
    mode = fourier_mode(g, 1, 0)  # |k| = 1/16 < 1/8 where chi = 0
    I = compute_I_xi(mode)
    assert np.max(np.abs(I.values)) < 1e-12


def test_I_xi_equation_real_space_residual():
    g = make_grid(16, 4)
    env = sample_environment(g, "rademacher", seed=9)
    lhs = -apply_laplacian(env.I_xi).values
    rhs = apply_multiplier(env.xi, chi_mask(g)).values
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)) < 1e-8


def test_chi_must_vanish_near_zero():
    g = make_grid(8, 4)
    env_field = sample_environment(g, "rademacher", 0).xi
    with pytest.raises(ValueError):
        compute_I_xi(env_field, r_zero=0.0, r_one=0.25)


def test_renormalization_constant_trend():
    # c_n increases with n while c_n / n decreases toward 0 (ensemble mean)
    cns = []
    for n in (8, 16, 32, 64):
        g = make_grid(n, 4)
        env = sample_environment(g, "rademacher", seed=100 + n)
        cns.append(renormalization_constant(env, n_ensemble=8))
    assert all(b > a for a, b in zip(cns, cns[1:]))
    over_n = [c / n for c, n in zip(cns, (8, 16, 32, 64))]
    assert all(b < a for a, b in zip(over_n, over_n[1:]))


def test_constant_zero_environment_has_zero_cn():
    g = make_grid(8, 4)
    env = constant_environment(g, 0.0)
    assert env.c_n == 0.0
    assert np.all(env.resonant.values == 0.0)


def test_environment_determinism_bitwise():
    g = make_grid(16, 4)
    a = sample_environment(g, "rademacher", seed=7)
    b = sample_environment(g, "rademacher", seed=7)
    assert a.xi.values.tobytes() == b.xi.values.tobytes()
    assert a.I_xi.values.tobytes() == b.I_xi.values.tobytes()
    assert a.c_n == b.c_n
    c = sample_environment(g, "rademacher", seed=8)
    assert a.xi.values.tobytes() != c.xi.values.tobytes()


def test_environment_bundle_roundtrip(tmp_path):
    g = make_grid(8, 4)
    env = sample_environment(g, "rademacher", seed=2)
    write_environment(tmp_path / "env", env, config_hash="cafe")
    env2 = read_environment(tmp_path / "env")
    np.testing.assert_array_equal(env.xi.values, env2.xi.values)
    np.testing.assert_array_equal(env.I_xi.values, env2.I_xi.values)
    assert env2.c_n == env.c_n and env2.nu_hat == env.nu_hat and env2.dist == env.dist


def test_with_c_n_shifts_potential():
    g = make_grid(8, 4)
    env = sample_environment(g, "rademacher", seed=2)
    shifted = env.with_c_n(1.5)
    np.testing.assert_allclose(shifted.xi_e.values, env.xi.values - 1.5)
    np.testing.assert_array_equal(shifted.xi.values, env.xi.values)
