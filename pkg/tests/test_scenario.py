import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcisac.scenario import (
    ArrayGeometry,
    ScenarioError,
    dump_scenario,
    generate_channels,
    load_scenario,
    steering,
    target_response,
)
from conftest import random_topology


class TestSteering:
    def test_broadside_is_all_ones(self):
        np.testing.assert_allclose(steering(0.0, 4), np.ones(4))

    def test_broadside_derivative(self):
        expected = 1j * math.pi * np.arange(4)
        np.testing.assert_allclose(steering(0.0, 4, "derivative"), expected)

    def test_derivative_matches_central_difference(self):
        h = 1e-6
        d_ana = steering(0.3, 8, "derivative")
        d_num = (steering(0.3 + h, 8) - steering(0.3 - h, 8)) / (2 * h)
        assert np.abs(d_ana - d_num).max() / np.abs(d_ana).max() < 1e-7

    def test_derivative_grid(self):
        h = 1e-6
        for theta in np.linspace(-np.pi / 2 + 0.01, np.pi / 2 - 0.01, 100):
            d_ana = steering(theta, 6, "derivative")
            d_num = (steering(theta + h, 6) - steering(theta - h, 6)) / (2 * h)
            scale = max(np.abs(d_ana).max(), 1.0)
            assert np.abs(d_ana - d_num).max() / scale < 1e-6

    @given(st.floats(-math.pi / 2, math.pi / 2), st.integers(1, 32))
    @settings(max_examples=60, deadline=None)
    def test_unit_modulus_norm(self, theta, n):
        v = steering(theta, n)
        assert np.linalg.norm(v) ** 2 == pytest.approx(n, rel=1e-12)

    def test_nonfinite_angle_rejected(self):
        with pytest.raises(ScenarioError):
            steering(math.nan, 4)
        with pytest.raises(ScenarioError):
            steering(math.inf, 4)


class TestTargetResponse:
    def test_zero_amplitude(self, geometry):
        g = target_response(0.0, 0.2, -0.4, geometry)
        assert np.all(g == 0)

    def test_all_ones_outer_product(self):
        geo = ArrayGeometry(n_tx=2, n_rx=2)
        g = target_response(1.0, 0.0, 0.0, geo)
        np.testing.assert_allclose(g, np.ones((2, 2)))

    def test_rank_one_singular_values(self, rng):
        geo = ArrayGeometry(n_tx=5, n_rx=3)
        alpha = complex(rng.standard_normal(), rng.standard_normal())
        g = target_response(alpha, 0.7, -0.2, geo)
        sv = np.linalg.svd(g, compute_uv=False)
        assert sv[0] == pytest.approx(abs(alpha) * math.sqrt(15), rel=1e-12)
        assert sv[1:].max() < 1e-12 * sv[0]
        fro = np.linalg.norm(g)
        assert fro == pytest.approx(abs(alpha) * math.sqrt(15), rel=1e-12)


class TestGenerateChannels:
    def test_deterministic_for_seed(self, rng, geometry):
        topo = random_topology(rng)
        a = generate_channels(topo, geometry, 3.0, rng_seed=5)
        b = generate_channels(topo, geometry, 3.0, rng_seed=5)
        assert a == b

    def test_intercell_power_reduced_by_factor(self, geometry):
        rng = np.random.default_rng(0)
        topo = random_topology(rng, j=2, k=1)
        sums_intra, sums_inter, count = 0.0, 0.0, 0
        for seed in range(300):
            ch = generate_channels(topo, geometry, 3.0, rng_seed=seed)
            sums_intra += np.sum(np.abs(ch.nominal[0, 0]) ** 2) + np.sum(
                np.abs(ch.nominal[1, 1]) ** 2
            )
            sums_inter += np.sum(np.abs(ch.nominal[0, 1]) ** 2) + np.sum(
                np.abs(ch.nominal[1, 0]) ** 2
            )
            count += 2 * geometry.n_tx
        assert sums_intra / count == pytest.approx(1.0, rel=0.05)
        assert sums_inter / count == pytest.approx(1.0 / 3.0, rel=0.05)

    def test_factor_one_matches_moments(self, geometry):
        rng = np.random.default_rng(1)
        topo = random_topology(rng, j=2, k=2)
        intra, inter = 0.0, 0.0
        for seed in range(300):
            ch = generate_channels(topo, geometry, 1.0, rng_seed=seed)
            intra += np.mean(np.abs(ch.nominal[0, 0]) ** 2)
            inter += np.mean(np.abs(ch.nominal[0, 1]) ** 2)
        assert intra / 300 == pytest.approx(inter / 300, rel=0.05)


class TestLoadScenario:
    def test_fig3_preset(self):
        sc = load_scenario('{"preset": "paper-fig3"}')
        assert sc.j_cells == 2 and sc.k_users == 3
        assert sc.geometry.n_tx == 6 and sc.geometry.n_rx == 6
        assert sc.channels.delta == 0.0
        assert sc.mpsk_order == 4
        np.testing.assert_allclose(
            np.rad2deg(sc.topology.arrival_angles), [-50.0, 50.0]
        )
        np.testing.assert_allclose(
            np.rad2deg(sc.topology.departure_angles), [[-50.0, 60.0], [-60.0, 50.0]]
        )

    def test_fig4_preset_parameters(self):
        sc = load_scenario('{"preset": "fig4"}')
        assert (sc.geometry.n_tx, sc.geometry.n_rx) == (6, 6)
        assert sc.channels.delta == 0.01
        assert sc.p_t == pytest.approx(1e4)

    def test_amplitude_normalization(self):
        sc = load_scenario('{"preset": "fig3"}')
        own = abs(sc.topology.amplitudes[0, 0]) ** 2
        assert own * sc.frame_len * sc.p_t / sc.sigma_r_sq == pytest.approx(1.0)
        cross = abs(sc.topology.amplitudes[0, 1]) ** 2
        assert own / cross == pytest.approx(3.0)

    def test_frame_shorter_than_array_rejected(self):
        with pytest.raises(ScenarioError, match="frame.l"):
            load_scenario(json.dumps({"frame": {"l": 6}, "array": {"n_tx": 6, "n_rx": 6}}))

    def test_unknown_field_rejected(self):
        with pytest.raises(ScenarioError, match="unknown configuration field"):
            load_scenario('{"bogus": 1}')
        with pytest.raises(ScenarioError, match="cells.q"):
            load_scenario('{"cells": {"q": 1}}')

    def test_round_trip_identity(self):
        doc = json.dumps({"preset": "fig4", "seed": 9, "frame": {"l": 24, "mpsk": 8}})
        sc = load_scenario(doc)
        again = load_scenario(dump_scenario(sc))
        assert sc == again

    def test_caps_resolved_linear(self):
        sc = load_scenario('{"preset": "fig3"}')
        assert sc.caps.i_intra_max == pytest.approx(10.0)
        assert sc.caps.i_inter_max == pytest.approx(10.0)
        assert sc.caps.p_leak_max == pytest.approx(4 * math.pi * 1e4)

    def test_unknown_preset(self):
        with pytest.raises(ScenarioError, match="unknown preset"):
            load_scenario('{"preset": "fig99"}')
