import io

import numpy as np
import pytest

from dropmark.gilbert import GilbertParams, sample
from dropmark.stats import (
    LossDensity,
    KsResult,
    ZeroVarianceError,
    autocorrelation,
    ks_critical,
    ks_test,
    loss_cdf,
    loss_density,
    write_acf,
    write_density,
)

from oracles import binomial_pmf, literal_acf


def test_density_examples():
    d = loss_density([1, 0, 0, 1, 0, 0], 3)
    assert d.f.tolist() == [0.0, 1.0, 0.0, 0.0] and d.blocks == 2
    assert loss_density(np.zeros(10, int), 5)[0] == 1.0
    # remainder discarded
    assert loss_density([1, 0, 0, 0, 1], 2).f.tolist() == [0.5, 0.5, 0.0]
    with pytest.raises(ValueError):
        loss_density([1, 0], 3)
    with pytest.raises(ValueError):
        loss_density([1, 0], 0)


def test_density_matches_binomial():
    p, q = 0.01, 150
    b = (np.random.default_rng(0).random(150 * 20_000) < p).astype(int)
    d = loss_density(b, q)
    pmf = np.array(binomial_pmf(q, p))
    se = np.sqrt(pmf * (1 - pmf) / d.blocks)
    big = pmf > 1e-4
    assert (np.abs(d.f - pmf)[big] < 4 * se[big]).all()
    F = loss_cdf(d)
    assert np.abs(F - np.cumsum(pmf))[big].max() < 0.01
    assert abs(d.f.sum() - 1) < 1e-12


def test_cdf_examples():
    assert loss_cdf(LossDensity(2, np.array([0.0, 1.0, 0.0]), 1)).tolist() == [0.0, 1.0, 1.0]
    assert loss_cdf(LossDensity(1, np.array([0.5, 0.5]), 2)).tolist() == [0.5, 1.0]


def test_acf_examples():
    alt = [1, 0] * 20
    acf = autocorrelation(alt, 2)
    assert acf.rho[0] == 1.0
    assert acf.rho.tolist() == pytest.approx(literal_acf(alt, 2), abs=1e-14)
    rng = np.random.default_rng(2)
    for _ in range(5):
        b = (rng.random(300) < 0.2).astype(int)
        assert autocorrelation(b, 10).rho.tolist() == pytest.approx(literal_acf(b.tolist(), 10), abs=1e-12)
    with pytest.raises(ZeroVarianceError):
        autocorrelation(np.zeros(100, int), 3)
    with pytest.raises(ValueError):
        autocorrelation([0, 1, 0], 5)


def test_acf_white_noise_band_and_reversal():
    N = 10**6
    b = (np.random.default_rng(3).random(N) < 0.002).astype(int)
    acf = autocorrelation(b, 20)
    assert (np.abs(acf.rho[1:]) < 4 / np.sqrt(N)).all()
    rev = autocorrelation(b[::-1], 20)
    assert np.allclose(rev.rho, acf.rho, atol=1e-12)
    assert (np.abs(acf.rho) <= 1 + 1e-9).all()


def test_ks_identical_and_mismatch():
    d = loss_density((np.random.default_rng(0).random(3000) < 0.05).astype(int), 30)
    r = ks_test(d, d, 1e-9)
    assert r.distance == 0.0 and r.accepted
    with pytest.raises(ValueError):
        ks_test(d, loss_density([0] * 100, 20), 0.1)


# (mean loss rate, KS distance) per traffic mix, from the published invisibility table
REPORTED_KS = {"enterprise": (0.001834, 0.000873), "bandwidth": (0.001413, 0.000733)}


def test_reported_distances_accepted_at_99_percent():
    # 100 GB per capture of MTU packets gives ~4.4e5 blocks of q = 150 on each side
    blocks = 100 * 10**9 // (1500 * 150)
    eps = ks_critical(blocks, blocks, 0.99)
    for mean, dist in REPORTED_KS.values():
        assert dist < 0.0009 and 0 < mean < 0.002
        assert KsResult(dist, eps).accepted


def test_ks_critical():
    assert ks_critical(10**6, 10**6) == pytest.approx(1.628 * np.sqrt(2 / 10**6))
    assert ks_critical(10**6, 10**6) == pytest.approx(0.0023, abs=5e-5)
    assert ks_critical(50, 50, 0.95) == pytest.approx(1.358 * np.sqrt(2 / 50))
    assert ks_critical(40, 90, 0.99) == pytest.approx(1.628 * np.sqrt(130 / 3600))
    # off-table confidence falls back to the asymptotic quantile
    assert ks_critical(100, 100, 0.98) == pytest.approx(np.sqrt(-np.log(0.01) / 2) * np.sqrt(0.02))
    with pytest.raises(ValueError):
        ks_critical(0, 5)


@pytest.mark.slow
def test_same_params_pass_ks_95_of_100():
    p = GilbertParams.from_dict({-2: 0.001, -1: 0.05, 1: 0.3, 2: 0.5})
    rng = np.random.default_rng(11)
    passed = 0
    for _ in range(100):
        a = loss_density(sample(p, 10**6, rng), 150)
        b = loss_density(sample(p, 10**6, rng), 150)
        passed += ks_test(a, b).accepted
    assert passed >= 95


def test_csv_outputs():
    buf = io.StringIO()
    write_density(loss_density([1, 0, 0, 1, 0, 0], 3), buf)
    assert buf.getvalue() == "k,f\n0,0.0\n1,1.0\n2,0.0\n3,0.0\n"
    buf = io.StringIO()
    write_acf(autocorrelation([1, 0, 1, 0], 1), buf)
    assert buf.getvalue().splitlines()[:2] == ["h,rho", "0,1.0"]
