"""Array manifold tests: steering vectors, frequency mapping, dictionaries."""

import numpy as np
import pytest

from risce import (ArraySpec, FreqGrid, build_dictionary, freq_from_angles,
                   steering, ula_steering, ura_steering, wrap_freq)


class TestUlaSteering:
    def test_zero_frequency(self):
        np.testing.assert_allclose(ula_steering(0.0, 4), np.ones(4))

    def test_half_wave_alternation(self):
        np.testing.assert_allclose(ula_steering(np.pi, 2), [1, -1], atol=1e-15)

    def test_quarter_turn(self):
        np.testing.assert_allclose(ula_steering(np.pi / 2, 4), [1, 1j, -1, -1j],
                                   atol=1e-15)

    def test_first_element_exactly_one(self):
        for w in (-2.0, 0.3, np.pi):
            assert ula_steering(w, 5)[0] == 1.0 + 0.0j

    def test_unit_modulus(self):
        rng = np.random.default_rng(0)
        for w in rng.uniform(-np.pi, np.pi, 20):
            np.testing.assert_allclose(np.abs(ula_steering(w, 9)), 1.0,
                                       atol=1e-14)

    def test_conjugate_symmetry(self):
        rng = np.random.default_rng(1)
        for w in rng.uniform(-np.pi, np.pi, 10):
            np.testing.assert_allclose(ula_steering(-w, 6),
                                       ula_steering(w, 6).conj(), atol=1e-14)


class TestUraSteering:
    spec22 = ArraySpec.ura(2, 2)

    def test_zero_frequency(self):
        np.testing.assert_allclose(ura_steering((0, 0), self.spec22), np.ones(4))

    def test_x_axis_alternation(self):
        np.testing.assert_allclose(ura_steering((np.pi, 0), self.spec22),
                                   [1, 1, -1, -1], atol=1e-15)

    def test_hand_kronecker(self):
        # ula(pi/2, 2) kron ula(pi, 2) = [1, -1, j, -j]
        np.testing.assert_allclose(ura_steering((np.pi / 2, np.pi), self.spec22),
                                   [1, -1, 1j, -1j], atol=1e-15)

    def test_kron_factorization(self):
        rng = np.random.default_rng(2)
        spec = ArraySpec.ura(3, 4)
        for _ in range(10):
            w1, w2 = rng.uniform(-np.pi, np.pi, 2)
            expect = np.kron(ula_steering(w1, 3), ula_steering(w2, 4))
            np.testing.assert_allclose(ura_steering((w1, w2), spec), expect,
                                       atol=1e-14)

    def test_rejects_ula(self):
        with pytest.raises(ValueError):
            ura_steering((0, 0), ArraySpec.ula(4))

    def test_conjugate_symmetry(self):
        spec = ArraySpec.ura(3, 2)
        w = np.array([0.7, -1.1])
        np.testing.assert_allclose(ura_steering(-w, spec),
                                   ura_steering(w, spec).conj(), atol=1e-14)


class TestFreqFromAngles:
    def test_broadside(self):
        assert freq_from_angles(0, 0, ArraySpec.ula(4)).w1 == 0.0

    def test_endfire(self):
        assert freq_from_angles(90, 0, ArraySpec.ula(4)).w1 == pytest.approx(np.pi)

    def test_ura_formula(self):
        w = freq_from_angles(30, 60, ArraySpec.ura(2, 2))
        assert w.w1 == pytest.approx(np.pi * 0.5)
        assert w.w2 == pytest.approx(np.pi * np.sin(np.deg2rad(60))
                                     * np.cos(np.deg2rad(30)))
        assert w.w2 == pytest.approx(np.pi * 0.75)

    def test_ula_zero_elevation_component(self):
        assert freq_from_angles(17, 55, ArraySpec.ula(4)).w2 == 0.0

    def test_out_of_range_rejected(self):
        spec = ArraySpec.ula(4)
        with pytest.raises(ValueError):
            freq_from_angles(91, 0, spec)
        with pytest.raises(ValueError):
            freq_from_angles(0, -1, spec)

    def test_injective_on_angle_box(self):
        # Full 181 x 91 grid: w1 strictly increases with azimuth and, per
        # azimuth, w2 strictly increases with elevation, so the map cannot
        # collide. A coarser subgrid is additionally checked all-pairs.
        spec = ArraySpec.ura(4, 4)
        az = np.linspace(-90, 90, 181)
        el = np.linspace(0, 90, 91)
        w1 = np.array([freq_from_angles(a, 0, spec).w1 for a in az])
        assert np.all(np.diff(w1) > 1e-9)
        for a in (-60.0, 0.0, 45.0):
            w2 = np.array([freq_from_angles(a, e, spec).w2 for e in el[1:]])
            assert np.all(np.diff(np.abs(w2)) > 0)
        sub = np.array([tuple(freq_from_angles(a, e, spec))
                        for a in az[::6] for e in el[::6]])
        d2 = np.linalg.norm(sub[:, None, :] - sub[None, :, :], axis=2)
        d2[np.diag_indices_from(d2)] = np.inf
        assert d2.min() > 1e-9


class TestWrapFreq:
    def test_interval(self):
        vals = wrap_freq(np.array([-np.pi, np.pi, 3 * np.pi, -3 * np.pi + 0.1]))
        assert np.all(vals > -np.pi) and np.all(vals <= np.pi)

    def test_identity_inside(self):
        assert wrap_freq(0.5) == 0.5


class TestDictionary:
    def test_single_point(self):
        grid = FreqGrid(np.array([[0.0, 0.0]]))
        D = build_dictionary(ArraySpec.ula(3), grid)
        np.testing.assert_allclose(D, np.ones((3, 1)))

    def test_two_point(self):
        grid = FreqGrid(np.array([[0.0], [np.pi]]))
        D = build_dictionary(ArraySpec.ula(2), grid)
        np.testing.assert_allclose(D, [[1, 1], [1, -1]], atol=1e-15)

    def test_matched_column_self_correlation(self):
        spec = ArraySpec.ula(8)
        grid = FreqGrid.uniform_1d(32)
        D = build_dictionary(spec, grid)
        i = 7
        a = steering(grid.points[i], spec)
        corr = np.abs(a.conj() @ D[:, i]) / spec.n_elements
        assert corr == pytest.approx(1.0)

    def test_ura_columns_match_steering(self):
        spec = ArraySpec.ura(3, 2)
        grid = FreqGrid.uniform_2d(4, 4)
        D = build_dictionary(spec, grid)
        for i in (0, 5, 13):
            np.testing.assert_allclose(D[:, i], steering(grid.points[i], spec),
                                       atol=1e-14)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            FreqGrid(np.zeros((0, 2)))
        with pytest.raises(ValueError):
            FreqGrid(np.array([[0.2], [0.1]]))  # not increasing
        with pytest.raises(ValueError):
            FreqGrid(np.array([[0.1], [0.1]]))  # duplicate

    def test_uniform_grid_in_interval(self):
        grid = FreqGrid.uniform_1d(16)
        assert np.all(grid.points[:, 0] > -np.pi)
        assert np.all(grid.points[:, 0] <= np.pi)
        assert len(grid) == 16
