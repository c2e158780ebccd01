import numpy as np
import pytest
from scipy import stats

from vdmn.datagen import (
    RATIO_BOUNDS,
    EnsembleConfig,
    HomogTriplet,
    build_ensemble,
    denormalize,
    generate_dataset,
    lhs_orthotropic,
    normalize,
    ratios_to_stiffness,
    split_sizes,
)
from vdmn.laminate import IsoElastic, isotropic_stiffness, leaf_volume_fraction
from vdmn.propagation import VdmnParams, propagate_tree


@pytest.fixture(scope="module")
def oracle():
    return build_ensemble(EnsembleConfig(), seed=11)


def test_centered_single_sample_is_midpoint():
    C1, C2 = lhs_orthotropic(1, seed=0, centered=True)
    np.testing.assert_allclose(C1[0], [[1, 0.45, 0], [0.45, 1, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_allclose(C2[0], [[1, 0.45, 0], [0.45, 1, 0], [0, 0, 1]], atol=1e-15)


def _ratios(C1, C2):
    g1 = np.sqrt(C1[:, 0, 0] * C1[:, 1, 1])
    g2 = np.sqrt(C2[:, 0, 0] * C2[:, 1, 1])
    return np.stack([
        np.log(C2[:, 0, 0] / C1[:, 0, 0]),
        np.log(C1[:, 1, 1] / C1[:, 0, 0]),
        np.log(C2[:, 1, 1] / C2[:, 0, 0]),
        C1[:, 0, 1] / g1,
        C2[:, 0, 1] / g2,
        np.log(C1[:, 2, 2] / g1),
        np.log(C2[:, 2, 2] / g2),
    ], axis=1)


def test_lhs_marginals_uniform_and_stratified():
    n = 1655
    C1, C2 = lhs_orthotropic(n, seed=1)
    assert np.all(C1[:, 0, 0] == 1.0)
    r = _ratios(C1, C2)
    lo, hi = RATIO_BOUNDS[:, 0], RATIO_BOUNDS[:, 1]
    u = (r - lo) / (hi - lo)
    for k in range(7):
        assert stats.kstest(u[:, k], "uniform").pvalue > 0.01
        # one sample per stratum
        np.testing.assert_array_equal(np.sort(np.floor(u[:, k] * n).astype(int)), np.arange(n))
    assert np.all(np.linalg.eigvalsh(C1)[:, 0] > 0) and np.all(np.linalg.eigvalsh(C2)[:, 0] > 0)


def test_ratios_roundtrip():
    rng = np.random.default_rng(2)
    lo, hi = RATIO_BOUNDS[:, 0], RATIO_BOUNDS[:, 1]
    r = lo + rng.random((50, 7)) * (hi - lo)
    np.testing.assert_allclose(_ratios(*ratios_to_stiffness(r)), r, atol=1e-14)


def test_lhs_errors_and_determinism():
    with pytest.raises(ValueError):
        lhs_orthotropic(0)
    a, b = lhs_orthotropic(20, seed=5), lhs_orthotropic(20, seed=5)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_zero_jitter_members_identical():
    orc = build_ensemble(EnsembleConfig(n_members=4, angle_jitter=0.0, weight_jitter=0.0), seed=0)
    C1, C2 = lhs_orthotropic(5, seed=0)
    out = np.stack([orc.homogenize(C1, C2, np.full(5, k)) for k in range(4)])
    np.testing.assert_allclose(out, np.broadcast_to(out[0], out.shape), rtol=1e-14)


def test_member_volume_fractions_within_tolerance(oracle):
    vf0 = leaf_volume_fraction(oracle.base)
    for m in oracle.members:
        assert abs(leaf_volume_fraction(m) - vf0) <= 0.05
    assert len(oracle) == 30


def test_member_spread_in_expected_band(oracle):
    C1 = isotropic_stiffness(IsoElastic(1.0, 0.3))
    C2 = isotropic_stiffness(IsoElastic(np.e, 0.3))
    c11 = oracle.homogenize(C1, C2)[:, 0, 0]
    rel = c11.std() / c11.mean()
    assert 1e-3 < rel < 0.1


def test_ensemble_errors():
    with pytest.raises(ValueError):
        build_ensemble(EnsembleConfig(n_members=1))
    with pytest.raises(ValueError):
        build_ensemble(EnsembleConfig(weight_jitter=5.0, vf_tolerance=1e-6, max_tries=3), seed=0)


def test_split_sizes():
    assert split_sizes(1655) == (1158, 248, 249)
    assert sum(split_sizes(10)) == 10


def test_generate_dataset_splits_and_determinism(oracle):
    C1, C2 = lhs_orthotropic(1655, seed=3)
    a = generate_dataset(oracle, (C1, C2), seed=4)
    b = generate_dataset(oracle, (C1, C2), seed=4)
    assert [len(a[k]) for k in ("train", "val", "test")] == [1158, 248, 249]
    for k in a:
        np.testing.assert_array_equal(a[k].ch, b[k].ch)
        np.testing.assert_array_equal(a[k].member_id, b[k].member_id)
    # disjoint and exhaustive: every input appears exactly once
    keys = np.concatenate([a[k].c2[:, 0, 0] * a[k].scale for k in a])
    np.testing.assert_allclose(np.sort(keys), np.sort(C2[:, 0, 0]), rtol=1e-14)
    counts = np.bincount(np.concatenate([a[k].member_id for k in a]), minlength=30)
    assert counts.min() > 25 and counts.max() < 95  # about n / M = 55 per member


def test_equal_phases_give_input(oracle):
    C1, _ = lhs_orthotropic(10, seed=6)
    d = generate_dataset(oracle, (C1, C1), split=(1.0, 0.0, 0.0), seed=0)["train"]
    np.testing.assert_allclose(d.ch, d.c1, rtol=1e-13, atol=1e-15)


def test_reuss_voigt_bounds(oracle):
    C1, C2 = lhs_orthotropic(300, seed=7)
    d = generate_dataset(oracle, (C1, C2), split=(1.0, 0.0, 0.0), seed=1)["train"]
    vf = np.array([leaf_volume_fraction(oracle.members[k]) for k in d.member_id])[:, None, None]
    voigt = vf * d.c1 + (1 - vf) * d.c2
    reuss = np.linalg.inv(vf * np.linalg.inv(d.c1) + (1 - vf) * np.linalg.inv(d.c2))
    for i in range(3):
        assert np.all(d.ch[:, i, i] <= voigt[:, i, i] + 1e-9)
        assert np.all(d.ch[:, i, i] >= reuss[:, i, i] - 1e-9)


def test_normalize_roundtrip():
    rng = np.random.default_rng(8)
    C1, C2 = lhs_orthotropic(1, seed=8)
    t = HomogTriplet(C1[0], C2[0], 0.5 * (C1[0] + C2[0]))
    n = normalize(t)
    assert n.scale == 1.0
    np.testing.assert_array_equal(n.Ch, t.Ch)
    a = rng.uniform(1, 1e5)
    raw = HomogTriplet(a * C1[0], a * C2[0], a * t.Ch)
    n = normalize(raw)
    assert n.scale == pytest.approx(a, rel=1e-15)
    np.testing.assert_allclose(denormalize(n.Ch, n.scale), raw.Ch, rtol=1e-14)
    with pytest.raises(ValueError):
        normalize(HomogTriplet(-C1[0], C2[0], C2[0]))


def test_denormalized_prediction_matches_raw_propagation():
    p = VdmnParams.initialize(3, seed=2, logvar=-4.0)
    C1, C2 = lhs_orthotropic(1, seed=9)
    a = 2.5e4
    raw = propagate_tree(p, a * C1[0], a * C2[0])
    n = normalize(HomogTriplet(a * C1[0], a * C2[0], a * C1[0]))
    g = denormalize(propagate_tree(p, n.C1, n.C2), n.scale)
    np.testing.assert_allclose(g.mean, raw.mean, rtol=1e-12)
    np.testing.assert_allclose(g.cov, raw.cov, rtol=1e-10, atol=1e-12 * np.abs(raw.cov).max())
