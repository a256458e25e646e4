import numpy as np
import pytest

from mcisac.scenario import ArrayGeometry
from mcisac.sensing_crb import (
    FisherInformation,
    SingularFimError,
    clutter_covariance_cbf,
    crb_diag,
    fim,
)
from conftest import random_psd, random_topology
from oracles import clutter_direct_oracle, fim_fd_oracle, inverse_3x3_adjugate

L = 16
SIGMA_R = 1.3


def build_case(rng, j=2, n_tx=4, n_rx=4, complex_amps=True):
    geometry = ArrayGeometry(n_tx=n_tx, n_rx=n_rx)
    topology = random_topology(rng, j=j, k=2, complex_amps=complex_amps)
    return geometry, topology


class TestClutterCovariance:
    def test_single_cell_is_noise(self, rng):
        geometry, topology = build_case(rng, j=1)
        c = clutter_covariance_cbf(0, {}, topology, geometry, SIGMA_R, L)
        np.testing.assert_allclose(c.matrix, SIGMA_R * np.eye(4))

    def test_zero_neighbors_is_noise(self, rng):
        geometry, topology = build_case(rng, j=2)
        c = clutter_covariance_cbf(
            0, {1: np.zeros((4, 4))}, topology, geometry, SIGMA_R, L
        )
        np.testing.assert_allclose(c.matrix, SIGMA_R * np.eye(4))

    def test_matches_direct_triple_product(self, rng):
        geometry, topology = build_case(rng, j=3)
        covs = {1: random_psd(rng, 4, rank=1), 2: random_psd(rng, 4, rank=1)}
        c = clutter_covariance_cbf(0, covs, topology, geometry, SIGMA_R, L)
        expected = clutter_direct_oracle(0, covs, topology, geometry, SIGMA_R, L)
        np.testing.assert_allclose(c.matrix, expected, rtol=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        geometry, topology = build_case(rng, j=2)
        with pytest.raises(ValueError, match="shape"):
            clutter_covariance_cbf(
                0, {1: np.eye(3)}, topology, geometry, SIGMA_R, L
            )


class TestFim:
    def test_zero_covariance_gives_zero_fim(self, rng):
        geometry, topology = build_case(rng)
        clutter = clutter_covariance_cbf(
            0, {1: random_psd(rng, 4)}, topology, geometry, SIGMA_R, L
        )
        fi = fim("cbf", 0, np.zeros((4, 4)), topology, geometry, SIGMA_R, L, clutter)
        assert np.all(fi.matrix == 0)

    def test_single_cell_cbf_equals_comp(self, rng):
        geometry, topology = build_case(rng, j=1)
        r = random_psd(rng, 4)
        clutter = clutter_covariance_cbf(0, {}, topology, geometry, SIGMA_R, L)
        fi_cbf = fim("cbf", 0, r, topology, geometry, SIGMA_R, L, clutter)
        fi_comp = fim("comp", 0, r, topology, geometry, SIGMA_R, L)
        scale = np.abs(fi_cbf.matrix).max()
        assert np.abs(fi_cbf.matrix - fi_comp.matrix).max() <= 1e-10 * scale

    @pytest.mark.parametrize("mode", ["cbf", "comp"])
    def test_matches_finite_difference_oracle(self, mode):
        rng = np.random.default_rng(42)
        for trial in range(5):
            geometry, topology = build_case(rng, j=2)
            clutter = None
            if mode == "cbf":
                r = random_psd(rng, 4)
                clutter = clutter_covariance_cbf(
                    0, {1: random_psd(rng, 4)}, topology, geometry, SIGMA_R, L
                )
                expected = fim_fd_oracle(
                    mode, 0, r, topology, geometry, SIGMA_R, L, clutter.matrix
                )
            else:
                r = random_psd(rng, 8)
                expected = fim_fd_oracle(mode, 0, r, topology, geometry, SIGMA_R, L)
            got = fim(mode, 0, r, topology, geometry, SIGMA_R, L, clutter).matrix
            scale = np.abs(expected).max()
            assert np.abs(got - expected).max() < 1e-5 * scale

    def test_linearity_and_scaling(self, rng):
        geometry, topology = build_case(rng)
        clutter = clutter_covariance_cbf(
            0, {1: random_psd(rng, 4)}, topology, geometry, SIGMA_R, L
        )
        r1, r2 = random_psd(rng, 4), random_psd(rng, 4)
        f1 = fim("cbf", 0, r1, topology, geometry, SIGMA_R, L, clutter).matrix
        f2 = fim("cbf", 0, r2, topology, geometry, SIGMA_R, L, clutter).matrix
        f12 = fim("cbf", 0, r1 + r2, topology, geometry, SIGMA_R, L, clutter).matrix
        scale = np.abs(f12).max()
        assert np.abs(f12 - f1 - f2).max() < 1e-10 * scale
        f_scaled = fim("cbf", 0, 2.5 * r1, topology, geometry, SIGMA_R, L, clutter).matrix
        assert np.abs(f_scaled - 2.5 * f1).max() < 1e-10 * np.abs(f_scaled).max()

    def test_crb_decreases_when_cov_scaled_up(self, rng):
        geometry, topology = build_case(rng, complex_amps=False)
        r = random_psd(rng, 8)
        f1 = fim("comp", 0, r, topology, geometry, SIGMA_R, L)
        f2 = fim("comp", 0, 3.0 * r, topology, geometry, SIGMA_R, L)
        assert crb_diag(f2).crb_theta == pytest.approx(crb_diag(f1).crb_theta / 3.0)

    def test_clutter_monotonicity(self, rng):
        # enlarging the interference covariance never improves the angle CRB
        import dataclasses

        geometry, topology = build_case(rng, complex_amps=False)
        r = random_psd(rng, 4)
        base = clutter_covariance_cbf(
            0, {1: random_psd(rng, 4, scale=0.1)}, topology, geometry, SIGMA_R, L
        )
        crb_base = crb_diag(
            fim("cbf", 0, r, topology, geometry, SIGMA_R, L, base)
        ).crb_theta
        for _ in range(8):
            extra = random_psd(rng, geometry.n_rx, scale=0.4)
            bumped = dataclasses.replace(base, matrix=base.matrix + extra)
            crb_bumped = crb_diag(
                fim("cbf", 0, r, topology, geometry, SIGMA_R, L, bumped)
            ).crb_theta
            assert crb_bumped >= crb_base * (1 - 1e-9)

    def test_wrong_covariance_size_rejected(self, rng):
        geometry, topology = build_case(rng)
        with pytest.raises(ValueError, match="shape"):
            fim("comp", 0, np.eye(4), topology, geometry, SIGMA_R, L)


class TestCrbDiag:
    def test_diagonal_fim(self):
        fi = FisherInformation(0, 2.0 * np.diag([4.0, 3.0, 3.0]), "cbf")
        out = crb_diag(fi)
        assert out.crb_theta == pytest.approx(1 / 8)
        assert out.crb_alpha_r == pytest.approx(1 / 6)
        assert out.crb_alpha_i == pytest.approx(1 / 6)
        assert out.rcrb_theta == pytest.approx((1 / 8) ** 0.5)

    def test_identity(self):
        fi = FisherInformation(0, np.eye(3), "comp")
        assert crb_diag(fi) == pytest.approx((1.0, 1.0, 1.0, 1.0))

    def test_matches_adjugate_oracle(self, rng):
        b = rng.standard_normal((3, 3))
        m = b @ b.T + 0.5 * np.eye(3)
        fi = FisherInformation(0, m, "cbf")
        expected = np.diag(inverse_3x3_adjugate(m))
        out = crb_diag(fi)
        np.testing.assert_allclose(
            [out.crb_theta, out.crb_alpha_r, out.crb_alpha_i], expected, rtol=1e-10
        )

    def test_singular_raises_with_eigenvalue(self):
        fi = FisherInformation(0, np.diag([1.0, 1.0, 0.0]), "cbf")
        with pytest.raises(SingularFimError) as err:
            crb_diag(fi)
        assert err.value.min_eigenvalue <= 1e-12
