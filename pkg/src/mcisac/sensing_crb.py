"""Clutter covariance, Fisher information, and CRB diagonals per coordination mode.

The echo at BS m is Gaussian with mean linear in the transmitted frame and a
covariance that is either noise plus neighboring-cell echo power (coordinated
beamforming, mono-static sensing) or noise only (coordinated multipoint, where
neighbor echoes carry known data and aid estimation bi-statically).  Every
Fisher entry is linear in the transmit covariance, which is what the precoder
problems rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .scenario import ArrayGeometry, CellTopology, steering, target_response

__all__ = [
    "FisherInformation",
    "ClutterCovariance",
    "SingularFimError",
    "clutter_covariance_cbf",
    "fim",
    "fim_coefficients",
    "crb_diag",
    "CrbDiag",
]

_SINGULAR_CONDITION = 1e12


class SingularFimError(ValueError):
    """FIM is numerically singular; carries the offending minimum eigenvalue."""

    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"Fisher information matrix is singular (min eigenvalue {min_eigenvalue:.3e})"
        )


@dataclass(frozen=True, eq=False)
class FisherInformation:
    """3x3 Fisher information over (theta, alpha_re, alpha_im) for one cell."""

    cell: int
    matrix: np.ndarray
    mode: str

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        if m.shape != (3, 3):
            raise ValueError("Fisher information must be 3x3")
        if self.mode not in ("cbf", "comp"):
            raise ValueError(f"unknown mode {self.mode!r}")
        scale = np.linalg.norm(m)
        if np.abs(m - m.T).max() > 1e-10 * max(1.0, scale):
            raise ValueError("Fisher information must be symmetric")
        if scale > 0 and np.linalg.eigvalsh(m).min() < -1e-9 * scale:
            raise ValueError("Fisher information must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class ClutterCovariance:
    """Sensing-interference-plus-noise covariance seen by one BS receiver."""

    cell: int
    matrix: np.ndarray
    noise_floor: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("clutter covariance must be square")
        scale = max(1.0, float(np.linalg.norm(m)))
        if np.abs(m - m.conj().T).max() > 1e-10 * scale:
            raise ValueError("clutter covariance must be Hermitian")
        if np.linalg.eigvalsh(m).min() < self.noise_floor - 1e-9 * scale:
            raise ValueError("clutter covariance fell below the noise floor")


def _check_hermitian(r: np.ndarray, side: int, what: str) -> np.ndarray:
    r = np.asarray(r, dtype=complex)
    if r.shape != (side, side):
        raise ValueError(f"{what} must have shape ({side}, {side}), got {r.shape}")
    if np.abs(r - r.conj().T).max() > 1e-8 * max(1.0, float(np.abs(r).max())):
        raise ValueError(f"{what} must be Hermitian")
    return r


def clutter_covariance_cbf(
    cell: int,
    neighbor_covariances: dict[int, np.ndarray],
    topology: CellTopology,
    geometry: ArrayGeometry,
    sigma_r_sq: float,
    frame_len: int,
) -> ClutterCovariance:
    """Neighbor echo power plus receiver noise at BS `cell` in CBF mode.

    neighbor_covariances maps BS index n != cell to its transmit covariance
    R_Xn (n_tx x n_tx Hermitian PSD).
    """
    n_rx = geometry.n_rx
    c = sigma_r_sq * np.eye(n_rx, dtype=complex)
    for n, r_xn in neighbor_covariances.items():
        if n == cell:
            continue
        r_xn = _check_hermitian(r_xn, geometry.n_tx, f"neighbor covariance for BS {n}")
        g = target_response(
            topology.amplitudes[n, cell],
            topology.arrival_angles[cell],
            topology.departure_angles[n, cell],
            geometry,
        )
        c += frame_len * g @ r_xn @ g.conj().T
    c = 0.5 * (c + c.conj().T)
    return ClutterCovariance(cell=cell, matrix=c, noise_floor=sigma_r_sq)


def _mode_vectors(
    mode: str, cell: int, topology: CellTopology, geometry: ArrayGeometry
) -> tuple[np.ndarray, ...]:
    """Receive steering pair (a, da) and the transmit-side vectors u1, u2, u3.

    The mean of the echo can be written a(theta) u1^T X + theta-derivative
    terms with u2, and the amplitude derivative uses u3, so every Fisher entry
    reduces to products of receive-side quadratic forms with u_i^T R u_j^*.
    """
    theta = topology.arrival_angles[cell]
    a = steering(theta, geometry.n_rx)
    da = steering(theta, geometry.n_rx, "derivative")
    v = steering(theta, geometry.n_tx)
    dv = steering(theta, geometry.n_tx, "derivative")
    alpha_own = topology.amplitudes[cell, cell]
    if mode == "cbf":
        return a, da, alpha_own * v, alpha_own * dv, v
    j, n_tx = topology.j_cells, geometry.n_tx
    u1 = np.zeros(j * n_tx, dtype=complex)
    u2 = np.zeros(j * n_tx, dtype=complex)
    u3 = np.zeros(j * n_tx, dtype=complex)
    own = slice(cell * n_tx, (cell + 1) * n_tx)
    u1[own] = alpha_own * v
    u2[own] = alpha_own * dv
    u3[own] = v
    for n in range(j):
        if n == cell:
            continue
        blk = slice(n * n_tx, (n + 1) * n_tx)
        u1[blk] = topology.amplitudes[n, cell] * steering(
            topology.departure_angles[n, cell], n_tx
        )
    return a, da, u1, u2, u3


def fim_coefficients(
    mode: str,
    cell: int,
    topology: CellTopology,
    geometry: ArrayGeometry,
    sigma_r_sq: float,
    frame_len: int,
    clutter: ClutterCovariance | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Matrices (Z11, Z12, Z22) with F11 = tr(R Z11) etc., linear in R.

    These are the coefficient matrices of the (complex) Fisher blocks as
    functionals of the transmit covariance; the precoder builders consume them
    to emit affine constraint rows.
    """
    if mode == "cbf":
        if clutter is None:
            raise ValueError("cbf mode requires a clutter covariance")
        c_inv = np.linalg.inv(clutter.matrix)
    elif mode == "comp":
        c_inv = np.eye(geometry.n_rx, dtype=complex) / sigma_r_sq
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a, da, u1, u2, u3 = _mode_vectors(mode, cell, topology, geometry)
    c1 = da.conj() @ c_inv @ da
    c2 = da.conj() @ c_inv @ a
    c3 = np.conj(c2)
    c4 = a.conj() @ c_inv @ a
    z11 = frame_len * (
        c1 * np.outer(u1.conj(), u1)
        + c2 * np.outer(u1.conj(), u2)
        + c3 * np.outer(u2.conj(), u1)
        + c4 * np.outer(u2.conj(), u2)
    )
    z12 = frame_len * (c2 * np.outer(u1.conj(), u3) + c4 * np.outer(u2.conj(), u3))
    z22 = frame_len * c4 * np.outer(u3.conj(), u3)
    return z11, z12, z22


def assemble_fim(f11: complex, f12: complex, f22: complex) -> np.ndarray:
    """3x3 real FIM from the complex blocks over (theta, alpha_re, alpha_im)."""
    return 2.0 * np.array(
        [
            [f11.real, f12.real, -f12.imag],
            [f12.real, f22.real, -f22.imag],
            [-f12.imag, -f22.imag, f22.real],
        ]
    )


def fim(
    mode: str,
    cell: int,
    r_x: np.ndarray,
    topology: CellTopology,
    geometry: ArrayGeometry,
    sigma_r_sq: float,
    frame_len: int,
    clutter: ClutterCovariance | None = None,
) -> FisherInformation:
    """Fisher information of (theta, alpha_re, alpha_im) for one cell.

    r_x is the transmit covariance: n_tx-sided for cbf, (J*n_tx)-sided for
    comp (the stacked covariance of all BSs).
    """
    side = geometry.n_tx if mode == "cbf" else topology.j_cells * geometry.n_tx
    r_x = _check_hermitian(r_x, side, "transmit covariance")
    z11, z12, z22 = fim_coefficients(
        mode, cell, topology, geometry, sigma_r_sq, frame_len, clutter
    )
    f11 = np.trace(r_x @ z11)
    f12 = np.trace(r_x @ z12)
    f22 = np.trace(r_x @ z22)
    matrix = assemble_fim(f11, f12, f22)
    # Clip roundoff asymmetry from the complex traces.
    matrix = 0.5 * (matrix + matrix.T)
    return FisherInformation(cell=cell, matrix=matrix, mode=mode)


class CrbDiag(NamedTuple):
    crb_theta: float
    crb_alpha_r: float
    crb_alpha_i: float
    rcrb_theta: float


def crb_diag(fi: FisherInformation) -> CrbDiag:
    """Diagonal of the inverse FIM plus the root bound on the angle."""
    eigs = np.linalg.eigvalsh(fi.matrix)
    if eigs[0] <= eigs[-1] / _SINGULAR_CONDITION or eigs[-1] <= 0:
        raise SingularFimError(float(eigs[0]))
    inv_diag = np.diag(np.linalg.inv(fi.matrix))
    return CrbDiag(
        crb_theta=float(inv_diag[0]),
        crb_alpha_r=float(inv_diag[1]),
        crb_alpha_i=float(inv_diag[2]),
        rcrb_theta=math.sqrt(float(inv_diag[0])),
    )
