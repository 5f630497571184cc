import numpy as np
import pytest

from pdfa.opu import OpuSim, ternarize


def test_ternarize_examples():
    assert ternarize([0.2, -0.1, -0.5], 0.15).tolist() == [1, 0, -1]
    assert ternarize([0.3, 0.0, -2.0], 0.0).tolist() == [1, 0, -1]
    assert ternarize([0.15, -0.15], 0.15).tolist() == [0, 0]
    with pytest.raises(ValueError):
        ternarize([1.0], -0.1)


def test_ternarize_idempotent(rng):
    e = rng.normal(size=200)
    t = ternarize(e, 0.15)
    for t2 in (0.0, 0.5, 0.99):
        assert np.array_equal(ternarize(t, t2), t)


def test_matrix_determinism_and_std():
    a, b = OpuSim(10, 20, matrix_seed=5), OpuSim(10, 20, matrix_seed=5)
    assert np.array_equal(a.B, b.B)
    assert not np.array_equal(a.B, OpuSim(10, 20, matrix_seed=6).B)
    big = OpuSim(1000, 1000, entry_std=0.3, matrix_seed=1)
    assert abs(big.B.std() / 0.3 - 1) < 0.01
    assert OpuSim(10, 400).entry_std == pytest.approx(1 / 20)


def test_matrix_is_read_only():
    opu = OpuSim(4, 3)
    with pytest.raises(ValueError):
        opu.B[0, 0] = 1.0
    digest = opu.matrix_digest()
    opu.project(np.ones(4))
    assert opu.matrix_digest() == digest


def test_invalid_construction():
    with pytest.raises(ValueError):
        OpuSim(0, 3)
    with pytest.raises(ValueError):
        OpuSim(3, 3, entry_std=0.0)
    with pytest.raises(ValueError):
        OpuSim(3, 3, noise_sigma=-1.0)


def test_project_noiseless_and_mismatch(rng):
    opu = OpuSim(6, 4, matrix_seed=2)
    x = rng.normal(size=6)
    assert np.array_equal(opu.project(x), opu.B @ x)
    with pytest.raises(ValueError):
        opu.project(np.ones(5))


def test_project_noise_statistics():
    n = 100_000
    opu = OpuSim(3, 2, noise_sigma=1.0, matrix_seed=0, noise_seed=9)
    out = opu.project(np.zeros((n, 3)))
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=0.01)
    x = np.array([1.0, -2.0, 0.5])
    draws = opu.project(np.tile(x, (n, 1)))
    assert np.all(np.abs(draws.mean(axis=0) - opu.B @ x) < 4 / np.sqrt(n))


def test_consecutive_calls_differ():
    opu = OpuSim(3, 4, noise_sigma=0.5, noise_seed=3)
    x = np.ones(3)
    diffs = np.array([opu.project(x) - opu.project(x) for _ in range(20_000)])
    assert np.all(diffs != 0)
    np.testing.assert_allclose(diffs.std(axis=0), np.sqrt(2) * 0.5, rtol=0.03)


def test_project_ternary_equivalences(rng):
    opu = OpuSim(10, 7, matrix_seed=4)
    for _ in range(100):
        e = rng.normal(scale=0.3, size=10)
        expected = opu.B @ ternarize(e, 0.15)
        np.testing.assert_allclose(opu.project_ternary(e, 0.15), expected, atol=1e-14)
        np.testing.assert_allclose(opu.project(ternarize(e, 0.15)), expected, atol=1e-14)


def test_project_ternary_zero_error_is_pure_noise():
    sigma = 0.2
    single = OpuSim(5, 3, noise_sigma=sigma, noise_seed=1)
    out = single.project_ternary(np.zeros((50_000, 5)), 0.15)
    np.testing.assert_allclose(out.std(axis=0), sigma, rtol=0.02)
    double = OpuSim(5, 3, noise_sigma=sigma, noise_seed=1, per_pass_noise=True)
    out = double.project_ternary(np.zeros((50_000, 5)), 0.15)
    np.testing.assert_allclose(out.std(axis=0), np.sqrt(2) * sigma, rtol=0.02)
    assert double.effective_sigma == pytest.approx(np.sqrt(2) * sigma)


def test_scale_cap_applies_before_noise(rng):
    opu = OpuSim(8, 30, entry_std=5.0, noise_sigma=0.0)
    out = opu.project(rng.normal(size=(20, 8)), scale_cap=1.0)
    assert np.all(np.linalg.norm(out, axis=1) <= 1 + 1e-12)
