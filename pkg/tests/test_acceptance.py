"""Acceptance suite: every primary criterion at its declared tolerance.

Each test prints one PASS/FAIL line (run with -s to stream them).  Budgets
and tolerances are fixed here, up front; nothing is tuned after the fact.
"""

import math

import numpy as np
import pytest

from brwlab.lattice import Field, make_grid, bump_field, constant_field
from brwlab.spectral import apply_laplacian, apply_multiplier, chi_mask, fourier_mode
from brwlab.besov import lp_blocks, paraproduct
from brwlab.environment import sample_environment
from brwlab.offspring import (pgf_coefficients, tail_mean, SiteMechanism,
                              sample_offspring_many, pgf_eval)
from brwlab import solvers as sol
from brwlab import harness as hz

SEED = 1

# the central configuration: n=8, L=4, beta=1/2, rho=beta, unit mass on the
# centre unit square, smooth bump of height 1, T=1/4, dt=1e-3
BASE = hz.TestSpec(name="acceptance", n=8, L=4.0, beta=0.5, rho=None, dist="rademacher",
                   seed=SEED, T=0.25, dt=1e-3, replicas=20_000)


def report(name: str, passed: bool, detail: str = ""):
    print(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f"  ({detail})" if detail else ""))
    assert passed, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# 1. Laplace duality at fixed refinement (the central identity)
# ---------------------------------------------------------------------------

def test_criterion_laplace_duality():
    rep = hz.laplace_duality_test(BASE)
    c = rep.checks[0]
    report("duality at fixed n: |MC - exp(-<mu0, U_T phi>)| <= 3 stderr + 5 dt",
           c.passed, f"mc={c.estimate:.5f} ref={c.reference:.5f} tol={c.tolerance:.5f}")


# ---------------------------------------------------------------------------
# 2. First-moment semigroup identities
# ---------------------------------------------------------------------------

def test_criterion_first_moment():
    rep = hz.first_moment_test(BASE)
    by_name = {c.name: c for c in rep.checks}
    site = next(c for n, c in by_name.items() if "site system" in n)
    aux = next(c for n, c in by_name.items() if "auxiliary system" in n)
    lin = next(c for n, c in by_name.items() if "linear transport" in n)
    bnd = next(c for n, c in by_name.items() if "bounded dual transport" in n)
    report("first moment: site system vs Anderson semigroup at 3 sigma",
           site.passed, f"z={site.zscore:+.2f}")
    report("first moment: auxiliary system vs heat semigroup at 3 sigma",
           aux.passed, f"z={aux.zscore:+.2f}")
    report("two-time martingale transport (bounded dual form) at 3 sigma",
           bnd.passed, f"z={bnd.zscore:+.2f}")
    report("two-time martingale transport (linear form, heavy-tailed) sanity band",
           lin.passed, f"z={lin.zscore:+.2f}")


# ---------------------------------------------------------------------------
# 3. Critical total-mass conservation
# ---------------------------------------------------------------------------

def test_criterion_mass_conservation():
    rep = hz.mass_conservation_test(hz._respec(BASE, replicas=10_000))
    c = rep.checks[0]
    report("auxiliary total mass E<mu_t,1> = <mu0,1> at 3 sigma, 1e4 replicas",
           c.passed, f"mc={c.estimate:.4f} z={c.zscore:+.2f}")


# ---------------------------------------------------------------------------
# 4. Offspring-law exactness
# ---------------------------------------------------------------------------

def test_criterion_offspring_exactness():
    law = pgf_coefficients(0.5)

    def product_oracle(beta, k):
        prod = 1.0
        for i in range(k):
            prod *= (1.0 + beta - i) / (i + 1)
        return abs(prod) / (1.0 + beta)

    worst = max(abs(law.p[k] - product_oracle(0.5, k)) / product_oracle(0.5, k)
                for k in (10, 100, 1000))
    report("offspring table vs product oracle at k in {10,100,1000} to 1e-9",
           worst < 1e-9, f"worst rel err={worst:.2e}")

    mean = float(np.sum(np.arange(law.K + 1) * law.p)) + tail_mean(0.5, law.K)
    report("criticality sum k p_k = 1 to 1e-10", abs(mean - 1.0) < 1e-10,
           f"|mean-1|={abs(mean - 1):.2e}")

    mech = SiteMechanism(q0=0.5, q_ge2=2.0)
    ks = sample_offspring_many(law, mech, 1_000_000, np.random.default_rng(SEED))
    ok = True
    zs = []
    for s in (0.2, 0.5, 0.8):
        vals = s ** ks.astype(float)
        emp, se = float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
        z = (emp - pgf_eval(law, mech, s)) / se
        zs.append(z)
        ok = ok and abs(z) <= 4
    report("sampler empirical pgf at s in {0.2,0.5,0.8} within 4 sigma, 1e6 draws",
           ok, "z=" + ",".join(f"{z:+.2f}" for z in zs))


# ---------------------------------------------------------------------------
# 5. Tail exponent for beta in {0.5, 0.8}
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("beta", [0.5, 0.8])
def test_criterion_tail_exponent(beta):
    rep = hz.sampler_tail_test(beta, 100_000_000, seed=SEED)
    c = rep.checks[0]
    report(f"offspring tail CCDF slope = -(1+beta) +- 0.1 at beta={beta}",
           c.passed, f"slope={c.estimate:.4f} target={c.reference}")


# ---------------------------------------------------------------------------
# 6. Solver correctness
# ---------------------------------------------------------------------------

def test_criterion_solver_correctness():
    g = make_grid(8, 4)

    # heat vs the spectral closed form
    worst = 0.0
    for mx, my in [(1, 0), (4, 4), (9, 2)]:
        mode = fourier_mode(g, mx, my)
        lam = 4 * g.n**2 * (np.sin(np.pi * mx / g.M) ** 2 + np.sin(np.pi * my / g.M) ** 2)
        out = sol.heat_solve(g, mode, 0.05)
        worst = max(worst, float(np.max(np.abs(out.values - np.exp(-lam * 0.05) * mode.values))))
    report("heat semigroup vs spectral closed form to 1e-12", worst < 1e-12,
           f"worst={worst:.2e}")

    # constant-potential Anderson flow vs e^{ct} P_t
    from brwlab.environment import constant_environment
    env_c = constant_environment(g, 1.7)
    phi = bump_field(g)
    traj = sol.pam_solve(env_c, phi, 0.2, 1e-3, store_every=0)
    ref = np.exp(1.7 * 0.2) * sol.heat_solve(g, phi, 0.2).values
    rel = float(np.max(np.abs(traj.final().values - ref)) / np.max(np.abs(ref)))
    report("constant-potential Anderson flow vs e^{ct} P_t phi to 1e-8", rel < 1e-8,
           f"rel={rel:.2e}")

    # nonlinear decay sub-step vs an RK4 oracle
    def rk4(w0, B, beta, T, steps=20000):
        w, h = w0, T / steps
        f = lambda v: -B * v ** (1 + beta)
        for _ in range(steps):
            k1 = f(w); k2 = f(w + h * k1 / 2); k3 = f(w + h * k2 / 2); k4 = f(w + h * k3)
            w += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        return w
    worst = 0.0
    for w0, B, beta, T in [(1.0, 1.0, 0.5, 1.0), (2.0, 0.7, 0.3, 0.5), (0.3, 2.0, 0.8, 2.0)]:
        closed = float(sol.nonlinear_decay_step(np.array([w0]), np.array([B]), beta, T)[0])
        worst = max(worst, abs(closed - rk4(w0, B, beta, T)))
    report("nonlinear decay sub-step vs fourth-order ODE oracle to 1e-8",
           worst < 1e-8, f"worst={worst:.2e}")

    # Strang self-convergence order
    env = sample_environment(g, "rademacher", seed=4)
    rng = np.random.default_rng(3)
    vals = np.zeros((g.M, g.M))
    for _ in range(6):
        mx, my = rng.integers(-2, 3, size=2)
        vals += rng.normal() * fourier_mode(g, mx, my).values
    smooth = Field(g, vals)
    finals = [sol.pam_solve(env, smooth, 0.2, dt, store_every=0).final().values
              for dt in (0.002, 0.001, 0.0005)]
    order = math.log2(np.max(np.abs(finals[0] - finals[1]))
                      / np.max(np.abs(finals[1] - finals[2])))
    report("Strang self-convergence order 2 +- 0.2", 1.8 <= order <= 2.2,
           f"order={order:.3f}")

    # positivity: compactly supported data through the nonnegative solvers
    env0 = env.with_c_n(0.0)
    B = hz.dual_coefficient(env0, BASE.eps, 0.5)
    nl = sol.nonlinear_solve(env0, sol.dual_initial(phi, BASE.eps), B, 0.5, 0.25, 1e-3,
                             store_every=1, use_raw_xi=True)
    var = sol.variant_pam_solve(env0, phi, potential=constant_field(g, 1.0),
                                forcing=constant_field(g, 0.1), T=0.25, dt=1e-3, store_every=1)
    neg = sum(int(np.sum(s < 0)) for s in nl.states) + sum(int(np.sum(s < 0)) for s in var.states)
    report("positivity violations = 0 across nonnegative solvers", neg == 0,
           f"violations={neg}")


# ---------------------------------------------------------------------------
# 7. Feynman-Kac cross-check
# ---------------------------------------------------------------------------

def test_criterion_feynman_kac():
    g = make_grid(8, 4)
    env = sample_environment(g, "rademacher", seed=SEED)
    phi = bump_field(g)
    probe = (g.M // 2, g.M // 2)
    est = sol.feynman_kac_estimate(env, phi, [probe], T=0.25, n_paths=100_000, seed=SEED)
    ref = sol.pam_solve(env, phi, 0.25, 1e-3, store_every=0).final().values[probe]
    z = (est["mean"][0] - ref) / est["stderr"][0]
    report("Feynman-Kac estimate of the Anderson flow at the origin within 3 stderr, 1e5 paths",
           abs(z) <= 3, f"z={z:+.2f} mc={est['mean'][0]:.4f} ref={ref:.4f}")


# ---------------------------------------------------------------------------
# 8. Auxiliary scalar inequalities
# ---------------------------------------------------------------------------

def test_criterion_auxiliary_inequalities():
    rep = hz.auxiliary_inequalities_test(seed=SEED, n_points=100_000)
    total_viol = sum(c.detail.get("violations", 0) + c.detail.get("violations_strong_constant", 0)
                     for c in rep.checks)
    report("auxiliary inequalities: zero violations over 1e5 domain points each",
           rep.passed and total_viol == 0, f"violations={total_viol}")


# ---------------------------------------------------------------------------
# 9. Harmonic-analysis identities
# ---------------------------------------------------------------------------

def test_criterion_paraproduct_and_inverse_laplacian():
    g = make_grid(8, 4)
    rng = np.random.default_rng(SEED)
    worst_lp = worst_pp = 0.0
    for _ in range(100):
        f = Field(g, rng.standard_normal((g.M, g.M)))
        h = Field(g, rng.standard_normal((g.M, g.M)))
        recon = sum(b.values for b in lp_blocks(f))
        worst_lp = max(worst_lp, float(np.max(np.abs(recon - f.values))))
        less, res, great = paraproduct(f, h)
        total = less.values + res.values + great.values
        worst_pp = max(worst_pp, float(np.max(np.abs(total - f.values * h.values))))
    report("block reconstruction on 100 random fields to 1e-10", worst_lp < 1e-10,
           f"worst={worst_lp:.2e}")
    report("paraproduct decomposition on 100 random fields to 1e-10", worst_pp < 1e-10,
           f"worst={worst_pp:.2e}")

    env = sample_environment(g, "rademacher", seed=SEED)
    lhs = -apply_laplacian(env.I_xi).values
    rhs = apply_multiplier(env.xi, chi_mask(g)).values
    rel = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)))
    report("inverse-Laplacian field equation residual <= 1e-8 relative", rel < 1e-8,
           f"rel={rel:.2e}")


# ---------------------------------------------------------------------------
# 10. Poisson cluster Laplace formula
# ---------------------------------------------------------------------------

def test_criterion_poisson_cluster():
    rep = hz.poisson_cluster_test(beta=0.5, seed=SEED, replicas=20_000)
    c = rep.checks[0]
    report("Poisson cluster Laplace formula on a 4-site toy space at 3 sigma",
           rep.passed, f"mc={c.estimate:.5f} ref={c.reference:.5f}")


# ---------------------------------------------------------------------------
# 11. Linear regime rho < beta: gap to the linear prediction shrinks in n
# ---------------------------------------------------------------------------

def test_criterion_linear_regime_trend():
    spec = hz.TestSpec(name="linear_regime", n=8, L=4.0, beta=0.8, rho=0.5, dist="rademacher",
                       seed=SEED, T=0.25, dt=1e-3, replicas=8000,
                       mu0_mass=0.5, phi_height=3.0)
    rep = hz.convergence_study(spec, n_list=(8, 16, 32), regime="rho_lt_beta",
                               replicas_per_n={8: 8000, 16: 3000, 32: 1250})
    c = rep.checks[0]
    rows = c.detail["rows"]
    gaps = ", ".join(f"n={r['n']}: {r['gap_pam']:.4f}" for r in rows)
    report("rho < beta: gap to exp(-<mu0, T_T phi>) non-increasing over n in {8,16,32}",
           c.passed, gaps)


# ---------------------------------------------------------------------------
# 12. Coupling domination by auxiliary sums
# ---------------------------------------------------------------------------

def test_criterion_coupling_domination():
    rep = hz.coupling_domination_test(hz._respec(BASE, replicas=4000))
    c = next(c for c in rep.checks if "domination" in c.name)
    report("site-system CDF dominates the N(beta)-fold auxiliary sum at deciles (DKW bands)",
           c.passed, f"N={rep.config['n_aux']} worst slack={c.estimate:+.4f}")
