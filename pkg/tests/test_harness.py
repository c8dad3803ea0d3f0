import json
import math

import numpy as np
import pytest
from scipy.special import gamma as gamma_fn

from brwlab import harness as hz
from brwlab.offspring import pgf_coefficients
from brwlab.reporting import VerificationReport, CheckResult, config_hash


QUICK = hz.TestSpec(name="quick", replicas=1500, T=0.25)


def _assert_all_pass(report):
    for c in report.checks:
        assert c.passed, f"{report.name} / {c.name}: est={c.estimate} ref={c.reference}"


def test_laplace_duality_quick():
    rep = hz.laplace_duality_test(QUICK)
    _assert_all_pass(rep)
    c = rep.checks[0]
    assert c.policy == "3sigma+dt"
    assert c.tolerance == pytest.approx(3 * c.stderr + 5 * QUICK.dt)


def test_duality_trivial_phi_zero():
    # phi = 0 makes both sides exactly 1
    spec = hz._respec(QUICK, phi_height=0.0, replicas=50)
    grid, env, law, phi, mu0 = hz._setup(spec)
    ref, _ = hz.laplace_functional_reference(env, law, phi, mu0, spec.eps, spec.T, spec.dt)
    assert ref == 1.0
    from brwlab.particles import simulate_batch
    batch = simulate_batch(env, law, mechanism="site", mu0=mu0, eps=spec.eps, T=spec.T,
                           replicas=spec.replicas, seed=spec.seed, phi=phi)
    assert np.all(np.exp(-batch.pair[:, -1]) == 1.0)


def test_first_moment_quick():
    rep = hz.first_moment_test(QUICK)
    _assert_all_pass(rep)
    names = [c.name for c in rep.checks]
    assert any("site system" in n for n in names)
    assert any("auxiliary system" in n for n in names)
    assert any("linear transport" in n for n in names)
    assert any("bounded dual transport" in n for n in names)


def test_mass_conservation_quick():
    rep = hz.mass_conservation_test(hz._respec(QUICK, replicas=3000))
    _assert_all_pass(rep)
    assert rep.checks[0].reference == 1.0


def test_moment_bound_quick():
    spec = hz._respec(QUICK, replicas=600, T=0.1)
    rep = hz.moment_bound_test(spec, theta=0.25, n_list=(4, 8))
    _assert_all_pass(rep)


def test_moment_bound_theta_zero_matches_first_moment():
    spec = hz._respec(QUICK, replicas=1200, T=0.1)
    grid, env, law, phi, mu0 = hz._setup(spec)
    from brwlab.particles import simulate_batch
    batch = simulate_batch(env, law, mechanism="site", mu0=mu0, eps=spec.eps, T=spec.T,
                           replicas=spec.replicas, seed=spec.seed, phi=phi)
    vals = batch.ok(batch.pair[:, -1])
    assert np.mean(vals ** (1 + 0.0)) == pytest.approx(np.mean(vals))


def test_moment_bound_rejects_bad_theta():
    with pytest.raises(ValueError):
        hz.moment_bound_test(QUICK, theta=0.7)


def test_tail_fit_on_sampler_ledger():
    led = hz.sampler_ledger(0.5, 2_000_000, seed=7)
    rep = hz.offspring_tail_test(led, 0.5)
    c = rep.checks[0]
    assert c.status == "ran" and c.passed
    assert abs(c.detail["jump_density_constant"]
               - 0.5 * 1.5 / gamma_fn(0.5)) < 1e-12
    # the reported constant at beta = 1/2 is 0.4231...
    assert c.detail["jump_density_constant"] == pytest.approx(0.42314218, abs=1e-6)


def test_tail_insufficient_events():
    led = hz.sampler_ledger(0.5, 1000, seed=1)
    rep = hz.offspring_tail_test(led, 0.5)
    assert rep.checks[0].status == "insufficient"


def test_tail_negative_site_ledger_skipped():
    led = hz.sampler_ledger(0.5, 200_000, seed=2, positive_site=False)
    rep = hz.offspring_tail_test(led, 0.5)
    assert rep.checks[0].status == "insufficient"  # no k >= 2 events


def test_sampler_tail_chunked():
    rep = hz.sampler_tail_test(0.5, 4_000_000, seed=3, chunk=1_000_000)
    assert rep.checks[0].passed


def test_auxiliary_inequalities():
    rep = hz.auxiliary_inequalities_test(seed=1, n_points=100_000)
    _assert_all_pass(rep)
    assert len(rep.checks) == 6


def test_auxiliary_inequality_spot_values():
    # direct arithmetic: -10 ln(0.8) - 2 <= 0.8 at eps=0.1, x=2
    val = -math.log(1 - 0.1 * 2) / 0.1 - 2
    assert 0 <= val <= 2 * 0.1 * 4
    assert val == pytest.approx(0.2314, abs=1e-4)
    # Bernoulli(1/2) at r = 0.9 in the tail-from-Laplace bound, exact enumeration
    r, c = 0.9, 2.0 / 0.9
    inner = 0.5 * ((1 - math.exp(-c)) / 1.0 - c + c**2 / 2)
    assert 0.5 <= 2 * r * inner


def test_poisson_cluster():
    rep = hz.poisson_cluster_test(beta=0.5, seed=1, replicas=20_000)
    _assert_all_pass(rep)


def test_coupling_search_values():
    assert hz.coupling_search(pgf_coefficients(0.5)) == 3
    n8 = hz.coupling_search(pgf_coefficients(0.8))
    assert 2 <= n8 <= 16


def test_coupling_search_dominates_pointwise():
    # verify the certificate: CCDF of the N-fold sum dominates both site laws
    law = pgf_coefficients(0.5)
    N = hz.coupling_search(law)
    pmf = np.zeros(4000)
    pmf[0] = law.p[0]
    pmf[2:] = law.p[2:4000]
    conv = np.array([1.0])
    for _ in range(N):
        conv = np.convolve(conv, pmf)[:4000]
    ks = np.arange(1001)
    ccdf_sum = 1 - np.concatenate([[0], np.cumsum(conv[:1000])])
    pos = np.zeros(4000)
    pos[0] = law.p[0] * 0.5
    pos[2:] = 2 * law.p[2:4000]
    ccdf_pos = 1 - np.concatenate([[0], np.cumsum(pos[:1000])])
    assert np.all(ccdf_sum >= ccdf_pos - 1e-12)


def test_coupling_domination_quick():
    rep = hz.coupling_domination_test(hz._respec(QUICK, replicas=800))
    _assert_all_pass(rep)
    assert rep.config["n_aux"] == 3


def test_convergence_rho_eq_beta_quick():
    spec = hz._respec(QUICK, replicas=1200)
    rep = hz.convergence_study(spec, n_list=(4, 8), regime="rho_eq_beta")
    _assert_all_pass(rep)
    assert len(rep.detail_rows) == 2


def test_convergence_bad_regime():
    with pytest.raises(ValueError):
        hz.convergence_study(QUICK, regime="bogus")


def test_report_roundtrip(tmp_path):
    rep = VerificationReport(name="demo", config={"a": 1})
    rep.add(CheckResult(name="one", policy="exact", passed=True, estimate=1.0))
    rep.write(tmp_path)
    data = json.loads((tmp_path / "report_demo.json").read_text())
    assert data["passed"] is True
    assert data["config_hash"] == config_hash({"a": 1})
    md = (tmp_path / "report_demo.md").read_text()
    assert "| one |" in md
    # append-only: a second write must not clobber the first
    rep.write(tmp_path)
    assert len(list(tmp_path.glob("report_demo*.json"))) == 2


def test_tolerances_declared_before_data():
    # the declared policy string fully determines the tolerance formula
    rep = hz.laplace_duality_test(hz._respec(QUICK, replicas=800, name="tolcheck"))
    c = rep.checks[0]
    assert c.tolerance == pytest.approx(3 * c.stderr + 5 * QUICK.dt)
    rep2 = hz.mass_conservation_test(hz._respec(QUICK, replicas=800))
    c2 = rep2.checks[0]
    assert c2.tolerance == pytest.approx(3 * c2.stderr)


def test_duality_degenerate_no_branching_no_nonlinearity():
    # branching off in the simulator and B = 0, zero potential in the solver:
    # the duality reduces to the Poisson + heat computation exactly
    from brwlab.environment import constant_environment
    from brwlab.particles import simulate_batch
    from brwlab import solvers as sol
    from brwlab.lattice import make_grid, bump_field, square_measure, constant_field

    spec = hz._respec(QUICK, replicas=2000)
    g = make_grid(spec.n, spec.L)
    env0 = constant_environment(g, 0.0)
    law = pgf_coefficients(spec.beta)
    phi = bump_field(g)
    mu0 = square_measure(g, side=1.0, mass=1.0)
    batch = simulate_batch(env0, law, mechanism="none", mu0=mu0, eps=spec.eps, T=spec.T,
                           replicas=spec.replicas, seed=spec.seed, phi=phi)
    Y = np.exp(-batch.pair[:, -1])
    mean, se = float(np.mean(Y)), float(np.std(Y, ddof=1) / np.sqrt(len(Y)))
    v0 = sol.dual_initial(phi, spec.eps)
    U = sol.nonlinear_solve(env0, v0, constant_field(g, 0.0), spec.beta, spec.T, spec.dt,
                            store_every=0)
    ref = float(np.exp(-np.sum(mu0 * U.final().values)))
    assert abs(mean - ref) <= 3 * se + 5 * spec.dt

    # first-moment version: both sides are the heat pairing
    vals = batch.pair[:, -1]
    heat_ref = float(np.sum(mu0 * sol.heat_solve(g, phi, spec.T).values))
    m, s = float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
    assert abs(m - heat_ref) <= 3 * s
