import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdenoise.measures import MixtureMeasure, UniformMeasure, evolve, sample
from msdenoise.transport import (
    ChainConfig,
    OUDraws,
    ParticleEnsemble,
    backward_rate,
    backward_step,
    forward_rate,
    forward_step,
    gaussian_w2,
    ou_ensemble,
    perturb,
    realized_M,
    roundtrip_residual,
    run_chain,
    w2,
)
from msdenoise.verify import kde_modes

TWO_POINT = MixtureMeasure.from_components([(0.5, -1.0, 0.0), (0.5, 1.0, 0.0)])
INF = math.inf


def ens(x):
    return ParticleEnsemble(np.asarray(x, dtype=float))


# -- ensembles ------------------------------------------------------------------


def test_ensemble_is_sorted_and_validated():
    e = ens([3.0, -1.0, 2.0])
    assert list(e.positions) == [-1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        ens([1.0])
    with pytest.raises(ValueError):
        ens([1.0, np.nan])
    with pytest.raises(ValueError):
        e.positions[0] = 5.0


def test_ou_draws_share_randomness_across_time():
    d = OUDraws(TWO_POINT, 1000, seed=3)
    np.testing.assert_array_equal(d.at(0.0).positions, np.sort(sample(TWO_POINT, 1000, seed=3)))
    a, b = d.at(0.5).positions, ou_ensemble(TWO_POINT, 0.5, 1.0, 1000, seed=3).positions
    np.testing.assert_array_equal(a, b)


def test_ou_ensemble_has_evolved_moments():
    for m in (TWO_POINT, UniformMeasure(-1.0, 3.0), MixtureMeasure.normal(2.0, 0.3)):
        t, beta = 0.4, 2.0
        x = ou_ensemble(m, t, beta, 10**6, seed=1).positions
        ref = sample(evolve(m, t, beta), 10**6, seed=2)
        assert abs(x.mean() - ref.mean()) < 0.01
        assert abs(x.var() - ref.var()) < 0.02


# -- step maps ---------------------------------------------------------------------


def test_forward_step_is_identity_at_equilibrium():
    e = ou_ensemble(MixtureMeasure.normal(), 0.3, 1.0, 1000, seed=0)
    out = forward_step(e, MixtureMeasure.normal(), 0.3, 0.05)
    np.testing.assert_allclose(out.positions, e.positions, atol=1e-14)
    back = backward_step(e, MixtureMeasure.normal(), 0.3, 0.05)
    np.testing.assert_allclose(back.positions, e.positions, atol=1e-14)


def test_forward_step_on_diffused_dirac():
    t, eta = 0.2, 0.01
    e = ou_ensemble(MixtureMeasure.dirac(), t, 1.0, 500, seed=1)
    x = e.positions
    want = x - eta * (x - x / (1 - math.exp(-2 * t)))
    np.testing.assert_allclose(forward_step(e, MixtureMeasure.dirac(), t, eta).positions,
                               np.sort(want), rtol=1e-12)


def test_pure_drift_contracts_and_expands():
    eta = 0.02
    a, b = ens([1.0, 1.0]), ens([3.0, 3.0])
    fa = forward_step(a, MixtureMeasure.dirac(1.0), 0.5, eta, beta=INF)
    fb = forward_step(b, MixtureMeasure.dirac(3.0), 0.5, eta, beta=INF)
    assert w2(fa, fb) == pytest.approx(2 * (1 - eta), rel=1e-14)
    ba = backward_step(fa, MixtureMeasure.dirac(1.0), 0.5, eta, beta=INF)
    bb = backward_step(fb, MixtureMeasure.dirac(3.0), 0.5, eta, beta=INF)
    assert w2(ba, bb) == pytest.approx(2.0, abs=2 * eta**2 + 1e-14)


def test_backward_step_gaussian_slope():
    s2, t, eta = 3.0, 0.4, 0.01
    m = MixtureMeasure.normal(0.0, s2)
    var_t = math.exp(-2 * t) * s2 + 1 - math.exp(-2 * t)
    x = np.linspace(-3, 3, 61)
    out = backward_step(ens(x), m, t, eta).positions
    np.testing.assert_allclose(out, x * (1 + eta * (1 - 1 / var_t)), rtol=1e-12, atol=1e-15)


def test_steps_count_and_keep_metadata():
    e = ParticleEnsemble(np.array([0.0, 1.0]), seed=4, source="x")
    out = backward_step(forward_step(e, TWO_POINT, 0.5, 0.01), TWO_POINT, 0.5, 0.01)
    assert out.steps == 2 and out.seed == 4 and out.source == "x"


# -- W2 ------------------------------------------------------------------------------


def test_w2_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=1000)
    assert w2(ens(x), ens(x)) == 0.0
    assert w2(ens(x), ens(x + 0.7)) == pytest.approx(0.7, rel=1e-12)
    a = rng.normal(0, 1, 10**6)
    b = rng.normal(2, 2, 10**6)
    assert w2(ens(a), ens(b)) == pytest.approx(math.sqrt(5), abs=0.01)


def test_w2_unequal_sizes_exact():
    # quantile functions: a is 0 on (0,1/2], 1 on (1/2,1]; b is 0, 3, 6 on thirds
    a, b = ens([0.0, 1.0]), ens([0.0, 3.0, 6.0])
    # pieces: (0,1/3] 0-0, (1/3,1/2] 0-3, (1/2,2/3] 1-3, (2/3,1] 1-6
    want = math.sqrt((1 / 6) * 9 + (1 / 6) * 4 + (1 / 3) * 25)
    assert w2(a, b) == pytest.approx(want, rel=1e-14)
    assert w2(b, a) == pytest.approx(want, rel=1e-14)
    # duplicating every particle leaves the empirical law unchanged
    c = ens([0.0, 0.0, 3.0, 3.0, 6.0, 6.0])
    assert w2(c, ens([0.0, 3.0, 6.0])) == 0.0


def test_w2_matches_gaussian_closed_form():
    rng = np.random.default_rng(1)
    z = rng.standard_normal(10**6)
    assert w2(ens(1 + 0.5 * z), ens(-1 + 2 * rng.standard_normal(10**6))) == pytest.approx(
        gaussian_w2(1, 0.5, -1, 2), abs=0.01)


def test_gaussian_w2_examples():
    assert gaussian_w2(0, 1, 0, 1) == 0
    assert gaussian_w2(0, 1, 2, 1) == 2
    assert gaussian_w2(0, 1, 2, 2) == pytest.approx(math.sqrt(5))
    with pytest.raises(ValueError):
        gaussian_w2(0, -1, 0, 1)


arrays = st.lists(st.floats(-100, 100), min_size=2, max_size=30)


@given(arrays, arrays, arrays)
@settings(max_examples=200, deadline=None)
def test_w2_metric_axioms(a, b, c):
    ea, eb, ec = ens(a), ens(b), ens(c)
    assert w2(ea, eb) == w2(eb, ea)
    assert w2(ea, ec) <= w2(ea, eb) + w2(eb, ec) + 1e-12 * (1 + w2(ea, ec))


@given(st.lists(st.floats(-100, 100), min_size=5, max_size=5),
       st.lists(st.floats(-100, 100), min_size=5, max_size=5),
       st.floats(0.01, 10), st.floats(-10, 10))
@settings(max_examples=200, deadline=None)
def test_w2_affine_equivariance(a, b, c, d):
    a, b = np.array(a), np.array(b)
    base = w2(ens(a), ens(b))
    assert w2(ens(c * a + d), ens(c * b + d)) == pytest.approx(c * base, rel=1e-12, abs=1e-12)


# -- rates ---------------------------------------------------------------------------


def test_forward_rate_dirac_pure_drift():
    eta = 0.01
    rate = forward_rate(MixtureMeasure.dirac(0.0), MixtureMeasure.dirac(1.0), 0.3, eta,
                        beta=INF, n=100)
    assert rate == pytest.approx(-2 + eta, abs=1e-10)


def test_forward_rate_coincident_chains():
    with pytest.raises(ValueError, match="coincident"):
        forward_rate(TWO_POINT, TWO_POINT, 0.5, 0.01)


@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0])
def test_forward_rate_gaussian_against_closed_form(t):
    eta = 0.01
    (m1, s1), (m2, s2) = (0.0, 0.5), (2.0, 2.0)
    mu, nu = MixtureMeasure.normal(m1, s1**2), MixtureMeasure.normal(m2, s2**2)

    def evolved(m, s):
        return math.exp(-t) * m, math.sqrt(math.exp(-2 * t) * s * s + 1 - math.exp(-2 * t))

    (a1, b1), (a2, b2) = evolved(m1, s1), evolved(m2, s2)
    # the forward step maps N(a, b^2) affinely: mean a(1 - eta), sd b(1 - eta) + eta / b
    before = gaussian_w2(a1, b1, a2, b2) ** 2
    after = gaussian_w2(a1 * (1 - eta), b1 * (1 - eta) + eta / b1,
                        a2 * (1 - eta), b2 * (1 - eta) + eta / b2) ** 2
    exact = (after - before) / (eta * before)
    got = forward_rate(mu, nu, t, eta, n=10**5)
    assert got == pytest.approx(exact, abs=0.02)
    assert got <= -2 + eta + 1e-9


def test_backward_rate_gaussian_exact():
    s2, t, eta = 4.0, 0.3, 0.01
    var_t = math.exp(-2 * t) * s2 + 1 - math.exp(-2 * t)
    k = 1 - 1 / var_t
    res = backward_rate(MixtureMeasure.normal(0, s2), ("shift", 0.01), t, eta, n=10**4)
    assert res.rate == pytest.approx(2 * k + eta * k * k, rel=1e-9)
    assert res.realized_M == pytest.approx(1.0)
    assert res.stderr < 1e-9


def test_backward_rate_dilation_reports_larger_M():
    res = backward_rate(TWO_POINT, ("dilation", 0.02), 0.5, 0.01, n=10**4)
    assert res.realized_M > 1.5
    with pytest.raises(ValueError):
        backward_rate(TWO_POINT, ("shift", 0.0), 0.5, 0.01)
    with pytest.raises(ValueError):
        perturb(np.zeros(3), "rotate", 0.1)


def test_realized_M_of_shift_is_one():
    x = np.linspace(-1, 1, 11)
    assert realized_M(x, x + 0.3) == pytest.approx(1.0)


# -- roundtrip ------------------------------------------------------------------------


def test_roundtrip_pure_drift():
    eta = 0.01
    e = ou_ensemble(TWO_POINT, 0.5, INF, 100, seed=0)
    rms = math.sqrt(np.mean(e.positions**2))
    got = roundtrip_residual(TWO_POINT, 0.5, eta, beta=INF, n=100, seed=0)
    assert got == pytest.approx(eta**2 * rms, rel=1e-9)


@pytest.mark.parametrize("m", [MixtureMeasure.normal(0, 4.0), TWO_POINT])
def test_roundtrip_is_second_order(m):
    for t in (0.2, 1.0):
        r1 = roundtrip_residual(m, t, 0.02, n=10**4)
        r2 = roundtrip_residual(m, t, 0.01, n=10**4)
        assert 4 * 0.7 <= r1 / r2 <= 4 * 1.3


def test_roundtrip_gaussian_residual_over_eta_squared_settles():
    m = MixtureMeasure.normal(0, 4.0)
    vals = [roundtrip_residual(m, 0.5, eta, n=10**4) / eta**2 for eta in (0.02, 0.01, 0.005)]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0]) + 1e-3 * vals[2]
    assert vals[2] == pytest.approx(vals[1], rel=0.05)


# -- chain -------------------------------------------------------------------------------


def test_chain_config_validation():
    base = dict(K=10, eta=0.01, beta=1.0, n=100, seed=0, mu=TWO_POINT, nu=TWO_POINT)
    ChainConfig(**base)
    for bad in (dict(K=0), dict(eta=0.2), dict(K=20000, eta=0.01), dict(n=1),
                dict(start="random"), dict(beta=-1.0)):
        with pytest.raises(ValueError):
            ChainConfig(**{**base, **bad})
    ChainConfig(**{**base, "K": 10_000, "eta": 0.01})


def test_chain_identical_measures_is_noise_only():
    n = 4000
    rep = run_chain(ChainConfig(K=20, eta=0.01, beta=1.0, n=n, seed=1, mu=MixtureMeasure.normal(),
                                nu=MixtureMeasure.normal()))
    assert len(rep.rows) == 21 and [r["k"] for r in rep.rows] == list(range(21))
    for row in rep.rows:
        assert row["w2_forward"] < 5 / math.sqrt(n)
        assert row["w2_backward"] < 5 / math.sqrt(n)


def test_chain_two_point_recovers_both_atoms():
    rep = run_chain(ChainConfig(K=100, eta=0.01, beta=1.0, n=10**4, seed=7, mu=TWO_POINT,
                                nu=MixtureMeasure.dirac()))
    x = rep.recovered.positions
    assert abs(np.mean(x < 0) - 0.5) < 0.05
    modes = kde_modes(x)
    assert len(modes) == 2
    np.testing.assert_allclose(modes, [-1.0, 1.0], atol=0.05)
    assert rep.rows[-1]["w2_forward"] == rep.rows[-1]["w2_backward"]
    assert rep.realized_M >= 1.0
    doc = rep.to_json()
    for key in ("config", "rows", "roundtrip_residual", "realized_M"):
        assert f'"{key}"' in doc


def test_chain_equilibrium_start():
    rep = run_chain(ChainConfig(K=50, eta=0.02, beta=1.0, n=5000, seed=2, mu=TWO_POINT,
                                nu=MixtureMeasure.dirac(), start="equilibrium"))
    assert rep.start_ensemble.source == "equilibrium"
    assert rep.rows[0]["w2_backward"] < 0.5 * w2(rep.initial_mu, rep.initial_nu)


@pytest.mark.parametrize("mu", [MixtureMeasure.normal(1.0, 0.5), UniformMeasure(-1.0, 1.0)])
@pytest.mark.parametrize("K", [50, 100])
def test_chained_contraction_log_concave(mu, K):
    n = 10**4
    rep = run_chain(ChainConfig(K=K, eta=0.01, beta=1.0, n=n, seed=3, mu=mu,
                                nu=MixtureMeasure.dirac(0.0)))
    ratio = w2(rep.initial_mu, rep.recovered) / w2(rep.initial_mu, rep.initial_nu)
    assert ratio <= 1 + 2 / math.sqrt(n)
