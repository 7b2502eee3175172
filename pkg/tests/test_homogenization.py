import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpgd.chaos import ThalerParams, birkhoff_sums
from mpgd.homogenization import (FastSlowSpec, SDESpec, WeakConvergenceReport, ou_drift,
                                 ou_marginal_scale, ou_reference_sample, simulate_fast_slow,
                                 simulate_stable_sde, weak_convergence_report, zero_drift)
from mpgd.homogenization import _diffuse
from mpgd.stable import StableLawSpec, ks_distance

# 40-digit evaluation of ((1 - e^-alpha) / alpha)^(1/alpha) at alpha = 1/0.6
OU_SCALE_G06 = 0.6491472608294804930100006564866437344804


def test_spec_validation():
    p = ThalerParams(0.6)
    with pytest.raises(ValueError):
        FastSlowSpec(zero_drift, "quadratic", 1.0, p, 1.0, 10)
    with pytest.raises(ValueError):
        FastSlowSpec(zero_drift, "additive_constant", 1.0, p, 1.0, 0)
    with pytest.raises(ValueError):
        SDESpec(zero_drift, "additive_constant", 1.0, StableLawSpec(1.5), dt=0.0)
    with pytest.raises(ValueError):
        SDESpec(zero_drift, "additive_constant", 1.0, StableLawSpec(1.5), dt=2.0, T=1.0)
    assert FastSlowSpec(zero_drift, "additive_constant", 1.0, p, 1.5, 100).n_steps == 150


def test_ou_scale_oracle():
    assert ou_marginal_scale(1 / 0.6) == pytest.approx(OU_SCALE_G06, rel=1e-14)
    assert ou_marginal_scale(1.5, coef=2.0) == pytest.approx(2 * ou_marginal_scale(1.5), rel=1e-15)


@pytest.mark.parametrize("m,T", [(100, 1.0), (250, 0.7)])
def test_additive_identity_with_birkhoff_sums(m, T):
    p = ThalerParams(0.6, 0.2)
    spec = FastSlowSpec(zero_drift, "additive_constant", 1.7, p, T, m, (0.3,), burn_in=300)
    x, bad = simulate_fast_slow(spec, 11, 50)
    n = spec.n_steps
    b = birkhoff_sums(11, p, n, 50, burn_in=300)
    expect = 0.3 + 1.7 * (n / m) ** p.gamma * b
    assert not bad.any()
    assert np.allclose(x[:, 0], expect, rtol=1e-12, atol=1e-12)


def test_zero_noise_is_ode_euler():
    p = ThalerParams(0.6)
    spec = FastSlowSpec(ou_drift, "additive_constant", 0.0, p, 1.0, 64, (2.0, -1.0), burn_in=50)
    x, _ = simulate_fast_slow(spec, 0, 3)
    assert np.allclose(x, np.array([2.0, -1.0]) * (1 - 1 / 64) ** 64, rtol=1e-13)
    sde = SDESpec(ou_drift, "diagonal_linear", 0.0, StableLawSpec(1.5), dt=0.01, T=1.0,
                  x0=(2.0,))
    y, _ = simulate_stable_sde(sde, 0, 4)
    assert np.allclose(y, 2.0 * 0.99**100, rtol=1e-13)


def test_reproducible_and_seed_sensitive():
    spec = FastSlowSpec(ou_drift, "diagonal_linear", 0.5, ThalerParams(0.6, 0.3), 1.0, 50,
                        (1.0, 2.0), burn_in=100)
    a, _ = simulate_fast_slow(spec, 4, 20)
    b, _ = simulate_fast_slow(spec, 4, 20)
    c, _ = simulate_fast_slow(spec, 5, 20)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    sde = SDESpec(ou_drift, "additive_constant", 1.0, StableLawSpec(1.5), dt=0.01)
    assert np.array_equal(simulate_stable_sde(sde, 3, 10)[0], simulate_stable_sde(sde, 3, 10)[0])


@given(arrays_x=st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=5),
       dl=st.floats(-30, 30), c=st.floats(0.0, 2.0))
def test_marcus_positivity_and_identity(arrays_x, dl, c):
    x = np.array(arrays_x)
    out = _diffuse(x, "diagonal_linear", c, dl)
    assert np.all(out >= 0)
    assert np.array_equal(_diffuse(x, "diagonal_linear", c, 0.0), x)
    assert np.array_equal(_diffuse(x, "additive_constant", c, 0.0), x)


def test_marcus_flow_solves_linear_field():
    # the flow of dx/ds = c x dL over s in [0, 1] ends at x exp(c dL)
    from scipy.integrate import solve_ivp
    x0, c, dl = np.array([0.7, 2.0]), 0.8, -1.3
    sol = solve_ivp(lambda s, x: c * x * dl, (0, 1), x0, rtol=1e-12, atol=1e-14)
    assert np.allclose(_diffuse(x0, "diagonal_linear", c, dl), sol.y[:, -1], rtol=1e-9)


def test_diagonal_linear_sde_keeps_sign():
    sde = SDESpec(zero_drift, "diagonal_linear", 0.5, StableLawSpec(1.5, 0.0), dt=0.01,
                  x0=(1.0, 3.0))
    x, bad = simulate_stable_sde(sde, 1, 500)
    assert np.all(x[~bad] > 0)


@pytest.fixture(scope="module")
def ou_reference():
    return ou_reference_sample(1 / 0.6, 0.5, 1.0, 10_000, 99)


def test_sde_reference_matches_analytic_ou(ou_reference):
    law = StableLawSpec(1 / 0.6, 0.5)
    sde = SDESpec(ou_drift, "additive_constant", 1.0, law, dt=1e-3)
    x, bad = simulate_stable_sde(sde, 7, 10_000)
    assert not bad.any()
    assert ks_distance(x[:, 0], ou_reference) <= 0.03


def test_time_grid_refinement_is_stable(ou_reference):
    law = StableLawSpec(1 / 0.6, 0.5)
    ks = []
    for dt in (1e-3, 5e-4):
        x, _ = simulate_stable_sde(SDESpec(ou_drift, "additive_constant", 1.0, law, dt=dt), 8,
                                   10_000)
        ks.append(ks_distance(x[:, 0], ou_reference))
    # two-sample KS noise floor at N = 10^4 each
    assert abs(ks[0] - ks[1]) <= 1.36 * math.sqrt(2 / 10_000)


def test_report_plumbing(tmp_path):
    p = ThalerParams(0.6)
    fam = [FastSlowSpec(ou_drift, "additive_constant", 1.0, p, 1.0, m, burn_in=200)
           for m in (16, 64)]
    ref = ou_reference_sample(p.alpha, 0.0, 1.0, 5000, 1)
    rep = weak_convergence_report(fam, 1000, seed=3, reference_sample=ref)
    assert rep.m == [16, 64] and rep.reference == "analytic"
    assert rep.n_effective == [1000, 1000] and rep.divergence_count == [0, 0]
    assert rep.spearman is not None and rep.ks_largest == rep.ks[-1]
    csv_path, json_path = rep.write(tmp_path / "rep")
    import json
    d = json.load(open(json_path))
    assert d["ks"] == rep.ks and "trend_nonincreasing" in d
    single = weak_convergence_report(fam[:1], 1000, seed=3, reference_sample=ref)
    assert single.spearman is None and "spearman" not in single.to_dict()
    with pytest.raises(ValueError):
        weak_convergence_report(fam, 999, reference_sample=ref)
    with pytest.raises(ValueError):
        weak_convergence_report(fam[::-1], 1000, reference_sample=ref)
    with pytest.raises(ValueError):
        weak_convergence_report(fam, 1000)


def test_report_with_sde_reference():
    p = ThalerParams(0.6)
    fam = [FastSlowSpec(ou_drift, "additive_constant", 1.0, p, 1.0, 64, burn_in=200)]
    sde = SDESpec(ou_drift, "additive_constant", 1.0, StableLawSpec(p.alpha), dt=0.01)
    rep = weak_convergence_report(fam, 1000, seed=2, sde_ref=sde)
    assert rep.reference == "sde" and 0 <= rep.ks[0] <= 1


def test_divergent_samples_are_counted():
    p = ThalerParams(0.6)
    blow = [FastSlowSpec(lambda x: 1e3 * x**3, "additive_constant", 1.0, p, 1.0, 8, (1.0,),
                         burn_in=10)]
    rep = weak_convergence_report(blow, 1000, seed=0, reference_sample=np.zeros(10))
    assert rep.divergence_count[0] == 1000 and rep.n_effective[0] == 0
    assert math.isnan(rep.ks[0])


def test_identical_generators_smoke():
    sde = SDESpec(ou_drift, "additive_constant", 1.0, StableLawSpec(1.5), dt=0.01)
    a, b = np.random.SeedSequence(0).spawn(2)
    assert ks_distance(simulate_stable_sde(sde, a, 10_000)[0][:, 0],
                       simulate_stable_sde(sde, b, 10_000)[0][:, 0]) <= 0.03
