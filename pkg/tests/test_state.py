import math

import numpy as np
import pytest

from strobospin.lattice import LatticeSpec
from strobospin.state import (
    Purpose,
    RngStream,
    SpinConfig,
    init_polarized_noisy,
    perturb_copy,
    site_coordinates,
    write_spin_csv,
)

BIG = LatticeSpec(1, 100_000, 1.5)


def sampling_sin2_mean(W, n=200_000, seed=123):
    """Sampling oracle for E[sin^2 theta] under theta ~ N(0, 2 pi W)."""
    rng = np.random.default_rng(seed)
    theta = rng.normal(0.0, 2 * np.pi * W, size=n)
    return float(np.mean(np.sin(theta) ** 2))


class TestRngStream:
    def test_reproducible(self):
        a = RngStream(42, 3, Purpose.INIT).generator().normal(size=8)
        b = RngStream(42, 3, Purpose.INIT).generator().normal(size=8)
        np.testing.assert_array_equal(a, b)

    def test_distinct_keys_differ(self):
        base = RngStream(42, 3, Purpose.INIT).generator().normal(size=8)
        other_r = RngStream(42, 4, Purpose.INIT).generator().normal(size=8)
        other_p = RngStream(42, 3, Purpose.PERTURB).generator().normal(size=8)
        other_s = RngStream(43, 3, Purpose.INIT).generator().normal(size=8)
        assert not np.array_equal(base, other_r)
        assert not np.array_equal(base, other_p)
        assert not np.array_equal(base, other_s)


class TestInitPolarizedNoisy:
    def test_zero_noise_is_fully_polarized(self):
        spec = LatticeSpec(2, 8, 3.0)
        config = init_polarized_noisy(spec, 0.0, RngStream(1))
        np.testing.assert_array_equal(config.sz, np.ones(spec.N))
        np.testing.assert_array_equal(config.sx, np.zeros(spec.N))
        np.testing.assert_array_equal(config.sy, np.zeros(spec.N))

    @pytest.mark.parametrize("W", [0.05, 0.1, 0.2])
    def test_mean_sz_matches_gaussian_characteristic_function(self, W):
        # E[cos theta] = exp(-sigma^2 / 2) for theta ~ N(0, sigma)
        config = init_polarized_noisy(BIG, W, RngStream(7))
        expected = math.exp(-((2 * math.pi * W) ** 2) / 2)
        se = float(np.std(config.sz)) / math.sqrt(BIG.N)
        assert abs(float(np.mean(config.sz)) - expected) < 3 * se

    def test_large_w_depolarizes(self):
        config = init_polarized_noisy(BIG, 10.0, RngStream(11))
        assert abs(float(np.mean(config.sz))) < 0.01

    def test_azimuthal_symmetry(self):
        config = init_polarized_noisy(BIG, 0.15, RngStream(3))
        for comp in (config.sx, config.sy):
            se = float(np.std(comp)) / math.sqrt(BIG.N)
            assert abs(float(np.mean(comp))) < 3 * se

    def test_unit_norms(self):
        config = init_polarized_noisy(LatticeSpec(3, 10, 4.0), 0.3, RngStream(5))
        np.testing.assert_allclose(config.norms(), 1.0, atol=1e-9)

    def test_bit_reproducible(self):
        spec = LatticeSpec(1, 512, 2.0)
        a = init_polarized_noisy(spec, 0.1, RngStream(99, 4, Purpose.INIT))
        b = init_polarized_noisy(spec, 0.1, RngStream(99, 4, Purpose.INIT))
        np.testing.assert_array_equal(a.sx, b.sx)
        np.testing.assert_array_equal(a.sy, b.sy)
        np.testing.assert_array_equal(a.sz, b.sz)

    def test_rejects_negative_w(self):
        with pytest.raises(ValueError):
            init_polarized_noisy(LatticeSpec(1, 4, 2.0), -0.1, RngStream(1))


def decorrelator_distance(a, b):
    d2 = (a.sx - b.sx) ** 2 + (a.sy - b.sy) ** 2 + (a.sz - b.sz) ** 2
    return math.sqrt(float(np.mean(d2)))


class TestPerturbCopy:
    def test_zero_delta_is_identical(self):
        config = init_polarized_noisy(LatticeSpec(1, 1000, 1.5), 0.1, RngStream(2))
        copy = perturb_copy(config, 0.0, RngStream(2, 0, Purpose.PERTURB))
        np.testing.assert_array_equal(copy.sx, config.sx)
        np.testing.assert_array_equal(copy.sy, config.sy)
        np.testing.assert_array_equal(copy.sz, config.sz)

    def test_input_unmodified(self):
        config = init_polarized_noisy(LatticeSpec(1, 100, 1.5), 0.1, RngStream(2))
        before = config.copy()
        perturb_copy(config, 0.05, RngStream(2, 0, Purpose.PERTURB))
        np.testing.assert_array_equal(config.sx, before.sx)
        np.testing.assert_array_equal(config.sz, before.sz)

    def test_initial_distance_small_angle_estimate(self):
        # |dS|^2 ~ dtheta^2 + sin^2(theta) dphi^2 per site, so
        # d(0) ~ 2 pi Delta sqrt(1 + E[sin^2 theta]).
        W, delta = 0.1, 0.01
        config = init_polarized_noisy(BIG, W, RngStream(21))
        copy = perturb_copy(config, delta, RngStream(21, 0, Purpose.PERTURB))
        expected = 2 * math.pi * delta * math.sqrt(1 + sampling_sin2_mean(W))
        assert decorrelator_distance(config, copy) == pytest.approx(expected, rel=0.10)
        assert expected == pytest.approx(0.0709, abs=0.002)

    def test_initial_distance_linear_in_delta(self):
        W = 0.1
        spec = LatticeSpec(1, 100_000, 1.5)
        config = init_polarized_noisy(spec, W, RngStream(31))
        d_small = decorrelator_distance(
            config, perturb_copy(config, 1e-3, RngStream(31, 0, Purpose.PERTURB))
        )
        d_big = decorrelator_distance(
            config, perturb_copy(config, 1e-2, RngStream(31, 0, Purpose.PERTURB))
        )
        assert d_big / d_small == pytest.approx(10.0, rel=0.05)


class TestExport:
    def test_site_coordinates_row_major(self):
        spec = LatticeSpec(2, 3, 3.0)
        coords = site_coordinates(spec)
        assert coords.shape == (9, 2)
        np.testing.assert_array_equal(coords[0], [0, 0])
        np.testing.assert_array_equal(coords[1], [0, 1])
        np.testing.assert_array_equal(coords[3], [1, 0])

    def test_csv_round_trip(self, tmp_path):
        spec = LatticeSpec(2, 4, 3.0)
        config = init_polarized_noisy(spec, 0.2, RngStream(8))
        path = tmp_path / "snap.csv"
        write_spin_csv(config, spec, path)
        rows = path.read_text().strip().split("\n")
        assert rows[0] == "x,y,sx,sy,sz"
        assert len(rows) == spec.N + 1
        data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
        np.testing.assert_array_equal(data[:, 2], config.sx)
        np.testing.assert_array_equal(data[:, 4], config.sz)

    def test_csv_rejects_mismatched_spec(self, tmp_path):
        spec = LatticeSpec(1, 8, 2.0)
        config = SpinConfig(np.zeros(4), np.zeros(4), np.ones(4))
        with pytest.raises(ValueError):
            write_spin_csv(config, spec, tmp_path / "x.csv")
