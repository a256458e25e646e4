"""Independent oracles used by the test suite.

Everything here recomputes expected values from first principles (finite
differences, direct dense algebra, eigendecompositions) without touching the
production code paths it checks.
"""

from __future__ import annotations

import numpy as np


def ula_response(theta: float, n: int) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(n) * np.sin(theta))


def frame_from_covariance(r: np.ndarray, frame_len: int, rng=None) -> np.ndarray:
    """A frame X with (1/L) X X^H equal to r exactly (columns padded with 0)."""
    n = r.shape[0]
    assert frame_len >= n
    w, u = np.linalg.eigh(r)
    w = np.clip(w, 0.0, None)
    b = u @ np.diag(np.sqrt(w))
    x = np.zeros((n, frame_len), dtype=complex)
    x[:, :n] = np.sqrt(frame_len) * b
    return x


def echo_mean(mode, cell, theta, alpha, topology, geometry, x):
    """Mean of the echo frame at BS `cell` as a function of the estimated
    parameters (theta, alpha); all other-path constants come from topology."""
    n_tx = geometry.n_tx
    a = ula_response(theta, geometry.n_rx)
    v_own = ula_response(theta, n_tx)
    if mode == "cbf":
        return alpha * np.outer(a, v_own) @ x
    j = topology.j_cells
    mu = np.zeros((geometry.n_rx, x.shape[1]), dtype=complex)
    for n in range(j):
        xn = x[n * n_tx : (n + 1) * n_tx]
        if n == cell:
            mu += alpha * np.outer(a, v_own) @ xn
        else:
            v = ula_response(topology.departure_angles[n, cell], n_tx)
            mu += topology.amplitudes[n, cell] * np.outer(a, v) @ xn
    return mu


def fim_fd_oracle(
    mode,
    cell,
    r_x,
    topology,
    geometry,
    sigma_r_sq,
    frame_len,
    clutter_matrix=None,
    step=1e-6,
):
    """3x3 FIM via central finite differences of the echo mean and the direct
    trace rule F_ij = 2 Re tr(dmu_i^H C^{-1} dmu_j)."""
    x = frame_from_covariance(np.asarray(r_x, dtype=complex), frame_len)
    if mode == "cbf":
        c = np.asarray(clutter_matrix, dtype=complex)
    else:
        c = sigma_r_sq * np.eye(geometry.n_rx, dtype=complex)
    c_inv = np.linalg.inv(c)

    theta0 = topology.arrival_angles[cell]
    alpha0 = topology.amplitudes[cell, cell]

    def mu(theta, a_re, a_im):
        return echo_mean(mode, cell, theta, a_re + 1j * a_im, topology, geometry, x)

    partials = []
    for i in range(3):
        args_hi = [theta0, alpha0.real, alpha0.imag]
        args_lo = [theta0, alpha0.real, alpha0.imag]
        args_hi[i] += step
        args_lo[i] -= step
        partials.append((mu(*args_hi) - mu(*args_lo)) / (2 * step))

    f = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            f[i, j] = 2.0 * np.real(np.trace(partials[i].conj().T @ c_inv @ partials[j]))
    return f


def clutter_direct_oracle(cell, neighbor_covs, topology, geometry, sigma_r_sq, frame_len):
    """Direct dense evaluation of L * sum G R G^H + sigma^2 I."""
    c = sigma_r_sq * np.eye(geometry.n_rx, dtype=complex)
    for n, r in neighbor_covs.items():
        if n == cell:
            continue
        a = ula_response(topology.arrival_angles[cell], geometry.n_rx)
        v = ula_response(topology.departure_angles[n, cell], geometry.n_tx)
        g = topology.amplitudes[n, cell] * np.outer(a, v)
        c = c + frame_len * g @ np.asarray(r, dtype=complex) @ g.conj().T
    return c


def inverse_3x3_adjugate(m: np.ndarray) -> np.ndarray:
    """Closed-form 3x3 inverse via the adjugate and determinant."""
    m = np.asarray(m, dtype=float)
    cof = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            minor = np.delete(np.delete(m, i, axis=0), j, axis=1)
            cof[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    det = m[0, 0] * cof[0, 0] + m[0, 1] * cof[0, 1] + m[0, 2] * cof[0, 2]
    return cof.T / det


def sample_ball(rng, n: int, radius: float, count: int) -> np.ndarray:
    """Uniform complex vectors in the radius ball, shape (count, n)."""
    z = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / (2 * n))
    return z * r[:, None]
