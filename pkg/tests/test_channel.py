import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from metaiot import channel as ch
from metaiot import circuit
from metaiot.errors import ArgumentError, DomainError, SingularityError
from oracles import path_phase

GEOM = ch.SystemGeometry()
FREE = ch.SystemGeometry(wall=ch.FREE_SPACE)
V = ch.SPEED_OF_LIGHT
F21 = np.linspace(3.5e9, 4e9, 21)


def test_free_space_gain_magnitude_and_inverse_distance():
    x, f = np.array([1.0, 0.0, 1.0]), 3.7e9
    g1 = ch.propagation_gain(x, [0, 0, 1.0], f, 1.0, ch.FREE_SPACE)
    g2 = ch.propagation_gain(x, [-1.0, 0, 1.0], f, 1.0, ch.FREE_SPACE)
    assert abs(g1) == pytest.approx(V / (4 * math.pi * f * 1.0), rel=1e-14)
    assert abs(g2) == pytest.approx(abs(g1) / 2, rel=1e-14)


def test_wall_phase_per_metre_by_differencing():
    wall = ch.WallModel(0.0, 4.2, 0.03)
    f, D = 3.75e9, 1.0
    x = np.array([D, 0.0, 0.0])
    r0 = 1.0
    g_a = ch.propagation_gain(x, [D - r0, 0, 0], f, D, wall) / ch.propagation_gain(
        x, [D - r0, 0, 0], f, D, ch.FREE_SPACE)
    g_b = ch.propagation_gain(x, [D - r0 - 1e-3, 0, 0], f, D, wall) / ch.propagation_gain(
        x, [D - r0 - 1e-3, 0, 0], f, D, ch.FREE_SPACE)
    slope = -np.angle(g_b / g_a) / 1e-3
    assert slope == pytest.approx(2 * math.pi * f * 0.03 / (V * D) * 3.2, rel=1e-6)


def test_gain_singular_and_invalid():
    with pytest.raises(SingularityError):
        ch.propagation_gain([1, 0, 0], [1, 0, 0], 3.7e9, 1.0)
    with pytest.raises(ArgumentError):
        ch.propagation_gain([1, 0, 0], [0, 0, 0], -1.0, 1.0)


@given(a=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       b=st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_gain_reciprocity(a, b):
    if np.linalg.norm(np.subtract(a, b)) < 1e-6:
        return
    assert ch.propagation_gain(a, b, 3.7e9, 1.0) == ch.propagation_gain(b, a, 3.7e9, 1.0)


@given(r1=st.floats(0.01, 10), r2=st.floats(0.01, 10))
def test_gain_decreasing_in_distance(r1, r2):
    if abs(r1 - r2) < 1e-9:
        return
    g = [abs(ch.propagation_gain([0, 0, 0], [r, 0, 0], 3.7e9, 1.0)) for r in (r1, r2)]
    assert (g[0] > g[1]) == (r1 < r2)


def test_steering_angles():
    g = ch.SystemGeometry(tx_count=1, tx_center_height=1.10, rx_heights=(0.1, 0.32),
                          array_center_heights=(1.10, 0.58))
    th_tx, th_rx = ch.steering_angles(g, 0, 0, 1.0)
    assert th_tx == 0.0
    assert th_rx == pytest.approx(math.pi / 4)
    angles = [ch.steering_angles(GEOM, 0, 0, D) for D in (1, 2, 4, 8, 16)]
    assert all(abs(a[0]) > abs(b[0]) and abs(a[1]) > abs(b[1]) for a, b in zip(angles, angles[1:]))


def test_beamform_phase_zero_cases_and_span():
    assert ch.beamform_phase(0, 0, 3.7e9, 1.15, 1.0, GEOM) == 0
    g = ch.SystemGeometry(tx_center_height=1.10)
    assert ch.beamform_phase(5, 0, 3.7e9, 1.10, 1.0, g) == 0
    p1 = ch.beamform_phase(1, 0, 3.7e9, 1.15, 1.0, GEOM)
    assert ch.beamform_phase(3, 0, 3.7e9, 1.15, 1.0, GEOM) == pytest.approx(3 * p1, rel=1e-14)
    with pytest.raises(DomainError):
        ch.beamform_phase(1, 0, 3.7e9, 1.5, 1.0, GEOM)


def _arg_spread(geom, D, phase_fn):
    f = 3.75e9
    args = np.array([np.angle(ch.received_signal_large(j, 0, f, 1.0, geom.array_center_heights[0], D,
                                                       geom, phase=phase_fn(j)))
                     for j in range(geom.tx_count)])
    centre = np.angle(np.mean(np.exp(1j * args)))
    return np.max(np.abs(np.angle(np.exp(1j * (args - centre)))))


@pytest.mark.xfail(strict=True, reason="far-field steering phase misaligns by ~0.4-0.6 rad at 1 m")
def test_far_field_phase_aligns_within_tolerance():
    h = GEOM.array_center_heights[0]
    assert _arg_spread(GEOM, 1.0, lambda j: ch.beamform_phase(j, 0, 3.75e9, h, 1.0, GEOM)) < 0.15


def test_exact_path_phase_aligns_antennas():
    spread = _arg_spread(GEOM, 1.0, lambda j: ch.beamform_phase_exact(j, 0, 3.75e9, 1.0, GEOM))
    assert spread < 1e-9


def test_far_field_phase_reduces_spread():
    h = GEOM.array_center_heights[0]
    steered = _arg_spread(GEOM, 2.0, lambda j: ch.beamform_phase(j, 0, 3.75e9, h, 2.0, GEOM))
    unsteered = _arg_spread(GEOM, 2.0, lambda j: 0.0)
    assert steered < unsteered


def test_mirror_and_specular_gain():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0.1, 3, (100, 3))
    mid = (ch.mirror(pts) + pts) / 2
    np.testing.assert_array_equal(mid[:, 0], 0.0)
    x = np.array([2.0, 0.0, 1.0])
    g = ch.specular_gain(x, x, 3.7e9, 2.0, ch.FREE_SPACE)
    assert abs(g) == pytest.approx(V / (4 * math.pi * 3.7e9 * 4.0), rel=1e-14)
    assert ch.specular_gain(x, x + [0, 0, 0.2], 3.7e9, 2.0) == ch.propagation_gain(
        x + [0, 0, 0.2], ch.mirror(x), 3.7e9, 2.0)
    on_plane = np.array([0.0, 0.1, 0.5])
    np.testing.assert_array_equal(ch.mirror(on_plane), on_plane)


def test_chi_properties():
    f = 3.7e9
    assert ch.chi_from_gamma(f, 0.0, 1.0, GEOM.wall) == 0
    c1 = ch.chi_from_gamma(f, 0.3 + 0.1j, 1.0, GEOM.wall)
    assert ch.chi_from_gamma(f, 0.6 + 0.2j, 1.0, GEOM.wall) == 2 * c1
    free = [ch.chi_from_gamma(f, 0.5, D, ch.FREE_SPACE) for D in (0.5, 1.0, 3.0)]
    assert free[0] == pytest.approx(0.5 * V ** 2 / (4 * math.pi * f ** 2 * 1j), rel=1e-14)
    assert free[0] == pytest.approx(free[2], rel=1e-14)
    with pytest.raises(ArgumentError):
        ch.chi_from_gamma(0.0, 0.5, 1.0, GEOM.wall)


def test_chi_from_circuit():
    params = circuit.default_params()
    gamma = circuit.reflection_coefficient_analytic(3.7e9, circuit.OPTIMAL_STRUCTURE,
                                                    circuit.NORMAL_CONDITION, params)
    assert ch.chi(3.7e9, circuit.OPTIMAL_STRUCTURE, circuit.NORMAL_CONDITION, 1.0, GEOM.wall,
                  params) == pytest.approx(ch.chi_from_gamma(3.7e9, gamma, 1.0, GEOM.wall))


def test_large_model_power_scaling():
    h = GEOM.array_center_heights[0]
    y1 = ch.received_signal_large(2, 0, F21, 0.5, h, 1.0, GEOM)
    y4 = ch.received_signal_large(2, 0, F21, 0.5, h, 1.0, ch.SystemGeometry(tx_power=4.0))
    np.testing.assert_allclose(np.abs(y4), 2 * np.abs(y1), rtol=1e-14)
    y0 = ch.received_signal_large(2, 0, F21, 0.5, h, 1.0, ch.SystemGeometry(tx_power=0.0))
    assert np.all(y0 == 0)


def test_small_model_single_sensor():
    f, h, D = 3.7e9, FREE.array_center_heights[0], 1.5
    x_s = ch.specular_point(FREE, 0, 0, D)
    gamma, A = 0.4 + 0.1j, ch.sensor_area(FREE)
    y = ch.received_signal_small(0, 0, f, gamma, [x_s], h, D, FREE,
                                 patterns=(ch.AntennaPattern(1, 0), ch.AntennaPattern(1, 0)))
    rt = np.linalg.norm(FREE.tx_position(0, D) - x_s)
    rr = np.linalg.norm(FREE.rx_position(0, D) - x_s)
    expect = (gamma * A * V / (4 * math.pi * f * rt) * V / (4 * math.pi * f * rr)
              * np.exp(1j * (path_phase(rt + rr, f, V))))
    assert y == pytest.approx(expect, rel=1e-12)


def test_small_model_additive_and_order_free():
    c = ch.sensor_grid(GEOM, 0, 12, 12)
    h = GEOM.array_center_heights[0]
    full = ch.received_signal_small(3, 0, F21, 0.5, c, h, 1.0, GEOM)
    halves = (ch.received_signal_small(3, 0, F21, 0.5, c[:70], h, 1.0, GEOM)
              + ch.received_signal_small(3, 0, F21, 0.5, c[70:], h, 1.0, GEOM))
    np.testing.assert_allclose(full, halves, rtol=1e-12)
    perm = np.random.default_rng(0).permutation(len(c))
    np.testing.assert_allclose(ch.received_signal_small(3, 0, F21, 0.5, c[perm], h, 1.0, GEOM), full,
                               rtol=1e-12)
    with pytest.raises(ArgumentError):
        ch.received_signal_small(3, 0, F21, 0.5, np.empty((0, 3)), h, 1.0, GEOM)


def test_surface_sum_self_convergence():
    h = GEOM.array_center_heights[1]
    vals = [ch.tapered_surface_sum(2, 1, 3.75e9, 1.0, h, 2.0, GEOM, n=n, half_extent=1.0)
            for n in (20, 40, 80, 160)]
    diffs = [abs(b - a) / abs(b) for a, b in zip(vals, vals[1:])]
    assert all(d2 < d1 for d1, d2 in zip(diffs, diffs[1:]))
    assert diffs[-1] < 0.01


@pytest.mark.parametrize("D", [1.0, 2.0])
def test_large_model_matches_dense_sum(D):
    gamma = np.full(F21.shape, 0.3 + 0.2j)
    for i in range(GEOM.n_rx):
        h = GEOM.array_center_heights[i]
        large = sum(ch.received_signal_large(j, i, F21, gamma, h, D, GEOM) for j in range(GEOM.tx_count))
        dense = sum(ch.tapered_surface_sum(j, i, F21, gamma, h, D, GEOM) for j in range(GEOM.tx_count))
        assert np.max(np.abs(np.abs(large) - np.abs(dense)) / np.abs(dense)) < 0.05


def test_large_model_cost_independent_of_sensor_count():
    f = np.linspace(3.5e9, 4e9, 201)
    gamma = np.full(f.shape, 0.5)
    h = GEOM.array_center_heights[0]
    c = ch.sensor_grid(GEOM, 0, 40, 40)

    def best(fn, n):
        out = []
        for _ in range(n):
            t = time.perf_counter()
            fn()
            out.append(time.perf_counter() - t)
        return min(out)

    t_large = best(lambda: ch.received_signal_large(3, 0, f, gamma, h, 1.0, GEOM), 30)
    t_small = best(lambda: ch.received_signal_small(3, 0, f, gamma, c, h, 1.0, GEOM), 5)
    assert t_small / t_large > len(c) / 10


def test_received_vector_constructive_and_single_antenna():
    f = np.array([3.75e9, 3.8e9])
    one = ch.SystemGeometry(tx_count=1)
    i, h = 0, one.array_center_heights[0]
    y = ch.received_vector(i, 0.5, h, 1.0, ch.FrequencyGrid(tuple(f)), one).values
    np.testing.assert_array_equal(y, ch.received_signal_large(0, i, f, 0.5, h, 1.0, one))
    terms = [ch.received_signal_large(j, 0, f, 0.5, h, 1.0, GEOM,
                                      phase=ch.beamform_phase_exact(j, 0, f, 1.0, GEOM))[0]
             for j in range(GEOM.tx_count)]
    total = abs(sum(terms))
    assert total >= GEOM.tx_count * min(abs(t) for t in terms) * (1 - 1e-9)


def test_zero_patterns_beyond_first_antenna():
    f = F21
    h = GEOM.array_center_heights[0]
    ones = np.ones_like(f, dtype=complex)
    only = sum(ch.received_signal_large(j, 0, f, ones, h, 1.0, GEOM) * (j == 0)
               for j in range(GEOM.tx_count))
    single = ch.received_signal_large(0, 0, f, ones, h, 1.0, GEOM)
    np.testing.assert_array_equal(only, single)


@pytest.mark.parametrize("D", [1.0, 2.0])
def test_beam_scan_peaks_on_array(D):
    grid = ch.FrequencyGrid.linspace()
    for i in range(GEOM.n_rx):
        heights, power = ch.beam_scan(i, grid, D, GEOM)
        assert len(heights) == 41
        peak = heights[np.argmax(power)]
        assert abs(peak - GEOM.array_center_heights[i]) <= GEOM.array_width / 2


def test_height_displacements_and_db():
    dh = ch.height_displacements(GEOM, 8)
    assert dh[0] == -GEOM.array_width / 2
    np.testing.assert_allclose(np.diff(dh), GEOM.array_width / 8)
    p, floored = ch.to_db(np.ones(5))
    np.testing.assert_array_equal(p, 0.0)
    assert not floored
    y = np.array([0.3 + 0.1j, 1e-3, 2.0])
    np.testing.assert_allclose(ch.to_db(10 * y)[0], ch.to_db(y)[0] + 10, rtol=0, atol=1e-12)
    p, floored = ch.to_db(np.array([0.0, 1.0]))
    assert floored and p[0] == ch.DB_FLOOR


def test_feature_vector_monotone_transform():
    grid = ch.FrequencyGrid.linspace(n=21)
    fv = ch.feature_vector(1, 0, 0.5, 1.0, grid, GEOM)
    y = ch.received_vector(1, 0.5, GEOM.array_center_heights[1] - GEOM.array_width / 2, 1.0, grid, GEOM)
    np.testing.assert_allclose(fv.values, 10 * np.log10(np.abs(y.values)), rtol=1e-13)
    assert (fv.array_index, fv.height_index) == (1, 0)


def test_deterministic_outputs():
    h = GEOM.array_center_heights[0]
    a = ch.channel_factor(0, F21, h, 1.0, GEOM)
    b = ch.channel_factor(0, F21, h, 1.0, GEOM)
    np.testing.assert_array_equal(a, b)


def test_geometry_round_trip_and_validation():
    g = ch.SystemGeometry(measuring_distances=(1.0, 2.0))
    assert ch.SystemGeometry.from_dict(g.to_dict()) == g
    np.testing.assert_allclose(g.tx_heights.mean(), g.tx_center_height)
    with pytest.raises(ArgumentError):
        ch.SystemGeometry(rx_heights=(1.0,))
    with pytest.raises(ArgumentError):
        ch.FrequencyGrid((3e9,))
