import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import levy_stable, kstest

from mpgd.stable import (SampleSet, StableLawSpec, char_fn, ecf, ecf_distance, hill_estimator,
                         hill_side, ks_distance, ks_distance_cdf, levy_exponent, sample_stable)

# 40-digit mpmath evaluation of exp(-(1 - i 0.5 tan(0.75 pi)))
CF_15_05 = complex(0.3228445824500330098887422814978499255499,
                   -0.1763707992250319473615489798224287065645)


def test_spec_validation():
    for bad in [dict(alpha=1.0), dict(alpha=2.1), dict(alpha=1.5, beta=1.2),
                dict(alpha=1.5, scale=0.0)]:
        with pytest.raises(ValueError):
            StableLawSpec(**bad)
    assert StableLawSpec(1.5, 0.2, 2.0).scaled(0.5) == StableLawSpec(1.5, 0.2, 1.0)


def test_char_fn_oracle():
    assert char_fn(1.0, StableLawSpec(1.5, 0.5)) == pytest.approx(CF_15_05, abs=1e-15)
    assert char_fn(0.0, StableLawSpec(1.7, -0.3)) == 1.0


@given(st.floats(1.05, 1.95), st.floats(-1, 1), st.floats(-5, 5))
def test_char_fn_hermitian_and_bounded(a, b, t):
    spec = StableLawSpec(a, b)
    assert char_fn(-t, spec) == pytest.approx(np.conj(char_fn(t, spec)), abs=1e-14)
    assert abs(char_fn(t, spec)) <= 1.0 + 1e-15


@given(st.floats(1.05, 1.95), st.floats(-1, 1), st.floats(0.1, 5), st.floats(0.1, 3))
def test_levy_exponent_homogeneous(a, b, t, lam):
    spec = StableLawSpec(a, b)
    assert levy_exponent(lam * t, spec) == pytest.approx(lam**a * levy_exponent(t, spec),
                                                         rel=1e-12)


def test_gaussian_limit():
    spec = StableLawSpec(2.0, 0.0, 1.0)
    assert char_fn(1.3, spec) == pytest.approx(math.exp(-1.69), rel=1e-14)
    x = sample_stable(spec, np.random.default_rng(0), 200_000)
    assert np.var(x) == pytest.approx(2.0, rel=0.02)


@pytest.mark.parametrize("a,b", [(1.5, 0.0), (1.3, 0.7), (1.7, -1.0), (1 / 0.6, 1.0)])
def test_sampler_matches_scipy_law(a, b):
    x = sample_stable(StableLawSpec(a, b, 1.3), np.random.default_rng(1), 4000)
    # scipy's default S1 parameterisation uses the same characteristic function
    res = kstest(x, levy_stable(a, b, loc=0.0, scale=1.3).cdf)
    assert res.pvalue > 1e-3


@pytest.mark.parametrize("a,b", [(1.5, 0.5), (1.4, -0.8)])
def test_sampler_matches_char_fn(a, b):
    spec = StableLawSpec(a, b)
    x = sample_stable(spec, np.random.default_rng(2), 100_000)
    assert ecf_distance(x, spec) < 0.01


def test_sampler_reproducible():
    spec = StableLawSpec(1.6, 0.3)
    a = sample_stable(spec, np.random.default_rng(5), 100)
    b = sample_stable(spec, np.random.default_rng(5), 100)
    assert np.array_equal(a, b)


def test_ecf_of_point_mass():
    t = np.linspace(-3, 3, 7)
    assert np.allclose(ecf(np.zeros(5), t), 1.0)
    with pytest.raises(ValueError):
        ecf_distance([0.0, 1.0], StableLawSpec(1.5), t_grid=[])


def test_hill_on_pareto():
    rng = np.random.default_rng(3)
    alpha = 1.6
    x = rng.pareto(alpha, 400_000) + 1.0
    sgn = rng.choice([-1.0, 1.0], x.size)
    assert hill_estimator(x * sgn) == pytest.approx(alpha, rel=0.05)
    assert hill_estimator(x, side=1) == pytest.approx(alpha, rel=0.05)


def test_hill_on_stable_samples():
    x = sample_stable(StableLawSpec(1.5, 1.0), np.random.default_rng(4), 500_000)
    assert abs(hill_estimator(x, side=hill_side(1.0)) - 1.5) < 0.1


def test_hill_errors_and_side_rule():
    with pytest.raises(ValueError):
        hill_estimator(np.arange(100.0) + 1)
    with pytest.raises(ValueError):
        hill_estimator(np.arange(1e4) + 1, tail_fraction=0.5)
    assert (hill_side(1.0), hill_side(-1.0), hill_side(0.3)) == (1, -1, 0)


def test_ks_distance_properties():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=500), rng.normal(size=700)
    assert ks_distance(a, a) == 0.0
    assert ks_distance(a, b) == pytest.approx(ks_distance(b, a))
    from scipy.stats import ks_2samp, norm
    assert ks_distance(a, b) == pytest.approx(ks_2samp(a, b).statistic, abs=1e-12)
    assert ks_distance_cdf(a, norm.cdf) == pytest.approx(kstest(a, norm.cdf).statistic,
                                                         abs=1e-12)
    assert ks_distance([0.0], [10.0]) == 1.0


def test_sampleset_roundtrip(tmp_path):
    vals = np.random.default_rng(7).normal(size=50)
    s = SampleSet(vals)
    assert len(s) == 50 and np.all(np.diff(s.values) >= 0)
    s.to_csv(tmp_path / "s.csv")
    assert np.array_equal(SampleSet.from_csv(tmp_path / "s.csv").values, s.values)
    with pytest.raises(ValueError):
        SampleSet([])


@given(st.floats(1.05, 1.95), st.floats(-1, 1), st.floats(-5, 5), st.floats(0.2, 3))
def test_modulus_independent_of_beta(a, b, t, c):
    assert abs(char_fn(t, StableLawSpec(a, b, c))) == pytest.approx(math.exp(-abs(c * t) ** a),
                                                                    rel=1e-12)


@given(st.floats(1.05, 1.95), st.floats(-1, 1), st.floats(-5, 5))
def test_exponent_consistent_with_char_fn(a, b, t):
    spec = StableLawSpec(a, b)
    assert np.exp(-levy_exponent(t, spec)) == pytest.approx(char_fn(t, spec), abs=1e-14)
    assert levy_exponent(0.0, spec) == 0


def test_near_gaussian_ks():
    from scipy.stats import norm
    x = sample_stable(StableLawSpec(2.0, 0.7), np.random.default_rng(8), 100_000)
    assert ks_distance_cdf(x, norm(scale=math.sqrt(2.0)).cdf) <= 0.02


def test_symmetric_median():
    x = sample_stable(StableLawSpec(1.4, 0.0), np.random.default_rng(9), 100_000)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    assert abs(np.median(x)) <= 3 * iqr / math.sqrt(x.size)


@pytest.mark.parametrize("n", [2, 5])
def test_stability_under_summation(n):
    spec = StableLawSpec(1.5, 0.5)
    rng = np.random.default_rng(10 + n)
    sums = sample_stable(spec, rng, (10_000, n)).sum(axis=1) * n ** (-1 / spec.alpha)
    assert ks_distance(sums, sample_stable(spec, rng, 10_000)) <= 0.03


def test_ecf_separates_gaussian_from_stable():
    x = np.random.default_rng(11).normal(size=10_000)
    assert ecf_distance(x, StableLawSpec(1.5)) > 0.05
    assert ecf_distance(x, StableLawSpec(1.5), t_grid=[0.0]) == 0.0


def test_hill_spec_ranges():
    rng = np.random.default_rng(12)
    pareto = (1.0 - rng.random(100_000)) ** (-1 / 1.5)
    assert 1.35 <= hill_estimator(pareto, tail_fraction=0.05) <= 1.65
    stable = sample_stable(StableLawSpec(1.7), rng, 100_000)
    assert 1.5 <= hill_estimator(stable) <= 1.9


def test_beta_flip_mirrors_samples():
    a = sample_stable(StableLawSpec(1.5, 0.6), np.random.default_rng(13), 1000)
    # u -> -u maps the beta draw to the -beta draw with the sign flipped
    rng = np.random.default_rng(13)
    u = rng.uniform(-np.pi / 2, np.pi / 2, 1000)
    w = rng.standard_exponential(1000)

    class Mirror:
        def uniform(self, lo, hi, size):
            return -u

        def standard_exponential(self, size):
            return w

    b = sample_stable(StableLawSpec(1.5, -0.6), Mirror(), 1000)
    assert np.allclose(a, -b, rtol=1e-12, atol=1e-12)


def test_same_law_ks_small():
    spec = StableLawSpec(1.6, 0.2)
    rng = np.random.default_rng(14)
    assert ks_distance(sample_stable(spec, rng, 10_000), sample_stable(spec, rng, 10_000)) <= 0.03
