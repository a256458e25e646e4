"""Worst-case channel-uncertainty bounds and constructive-interference algebra.

All channel errors live in Euclidean balls around the observed CSI.  The
quadratic-form bounds decouple a robust SINR constraint into a nominal
numerator and a certified worst-case denominator; the symbol-level functions
express the PSK decision-region condition as real linear algebra plus norm
terms, with the residual convention "<= 0 means feasible" so the same
expressions serve both solver rows and verification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadraticBounds",
    "SlpStack",
    "worst_case_quadratic_bounds",
    "worst_case_interference",
    "slp_stack",
    "ci_residuals",
    "slp_inter_leakage_residual",
]


@dataclass(frozen=True)
class QuadraticBounds:
    """Certified range of |h~^T w|^2 over the error ball."""

    min_val: float
    max_val: float

    def __post_init__(self):
        if self.min_val < -1e-12 or self.max_val < self.min_val - 1e-12:
            raise ValueError("quadratic bounds must satisfy 0 <= min <= max")


@dataclass(frozen=True, eq=False)
class SlpStack:
    """Real stacking of a rotated channel and a transmit vector.

    f_hat = [Re h~; Im h~] for the rotated channel h~ = h * exp(-1j*phi);
    x_hat = [Im x; Re x] and x_hat_prime = [Re x; -Im x], so that
    f_hat^T x_hat = Im{h~^T x} and f_hat^T x_hat_prime = Re{h~^T x}.
    """

    f_hat: np.ndarray
    x_hat: np.ndarray
    x_hat_prime: np.ndarray


def worst_case_quadratic_bounds(h: np.ndarray, w: np.ndarray, delta: float) -> QuadraticBounds:
    """Range of the received power |h~^T w|^2 = tr(Q~ W) over ||e|| <= delta.

    The lower end is the nominal value tr(QW); the upper end adds the
    Cauchy-Schwarz terms delta^2 tr(W) + delta(||h^T W|| + ||W h*||).
    """
    h = np.asarray(h, dtype=complex).reshape(-1)
    w = np.asarray(w, dtype=complex)
    if w.shape != (h.size, h.size):
        raise ValueError(f"W must be {h.size}x{h.size}, got {w.shape}")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    scale = float(np.abs(w).max()) if w.size else 0.0
    if scale > 0:
        if np.abs(w - w.conj().T).max() > 1e-8 * scale:
            raise ValueError("W must be Hermitian")
        if np.linalg.eigvalsh(w).min() < -1e-9 * np.linalg.norm(w):
            raise ValueError("W must be positive semidefinite")
    nominal = float(np.real(h @ w @ h.conj()))
    nominal = max(nominal, 0.0)
    if delta == 0.0:
        return QuadraticBounds(nominal, nominal)
    extra = (
        delta**2 * float(np.real(np.trace(w)))
        + delta * float(np.linalg.norm(h @ w))
        + delta * float(np.linalg.norm(w @ h.conj()))
    )
    return QuadraticBounds(nominal, nominal + extra)


def worst_case_interference(
    scope: str,
    h: np.ndarray,
    covariances: list[np.ndarray],
    delta: float,
    j_cells: int = 1,
) -> float:
    """Sum of per-covariance worst-case received powers for one victim channel.

    Scopes intra_cbf and inter_cbf use the plain radius delta; scope comp uses
    the stacked-channel radius sqrt(J)*delta (and hence J*delta^2 on the
    squared term).
    """
    if scope in ("intra_cbf", "inter_cbf"):
        radius = delta
    elif scope == "comp":
        if j_cells < 1:
            raise ValueError("comp scope needs j_cells >= 1")
        radius = math.sqrt(j_cells) * delta
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return sum(worst_case_quadratic_bounds(h, w, radius).max_val for w in covariances)


def slp_stack(h: np.ndarray, x: np.ndarray, phi: float) -> SlpStack:
    """Stack the phi-rotated channel and a transmit vector into real vectors."""
    h = np.asarray(h, dtype=complex).reshape(-1)
    x = np.asarray(x, dtype=complex).reshape(-1)
    if h.size != x.size:
        raise ValueError("channel and transmit vector lengths differ")
    h_rot = h * np.exp(-1j * phi)
    return SlpStack(
        f_hat=np.concatenate([h_rot.real, h_rot.imag]),
        x_hat=np.concatenate([x.imag, x.real]),
        x_hat_prime=np.concatenate([x.real, -x.imag]),
    )


def ci_residuals(
    mode: str,
    stack: SlpStack,
    gamma_prime: float,
    inter_bound: float,
    sigma_c: float,
    delta: float,
    psi: float,
) -> tuple[float, float]:
    """Robust constructive-interference residual pair; feasible iff both <= 0.

    delta is the effective error-ball radius for the channel behind the stack
    (callers pass sqrt(J)*delta for stacked comp channels).  In comp mode all
    co-channel signals are aligned, so inter_bound must be 0.
    """
    if mode not in ("cbf", "comp"):
        raise ValueError(f"unknown mode {mode!r}")
    if inter_bound < 0:
        raise ValueError("inter_bound must be >= 0")
    if mode == "comp" and inter_bound != 0:
        raise ValueError("comp mode aligns all interference; inter_bound must be 0")
    if not 0 < psi <= math.pi / 2:
        raise ValueError("psi must lie in (0, pi/2]")
    tan_psi = math.tan(psi)
    im_part = float(stack.f_hat @ stack.x_hat)
    re_part = float(stack.f_hat @ stack.x_hat_prime)
    guard = gamma_prime * math.sqrt(sigma_c**2 + inter_bound**2) * tan_psi
    r_plus = (
        im_part
        - re_part * tan_psi
        + guard
        + delta * float(np.linalg.norm(stack.x_hat - stack.x_hat_prime * tan_psi))
    )
    r_minus = (
        -im_part
        - re_part * tan_psi
        + guard
        + delta * float(np.linalg.norm(stack.x_hat + stack.x_hat_prime * tan_psi))
    )
    return r_plus, r_minus


def slp_inter_leakage_residual(
    h: np.ndarray, x: np.ndarray, delta: float, cap: float, j_cells: int
) -> float:
    """Residual of the per-victim symbol-level leakage cap; feasible iff <= 0."""
    if j_cells < 2:
        raise ValueError("inter-cell leakage needs at least two cells")
    h = np.asarray(h, dtype=complex).reshape(-1)
    x = np.asarray(x, dtype=complex).reshape(-1)
    return (
        abs(h @ x)
        + delta * float(np.linalg.norm(x))
        - cap / math.sqrt(j_cells - 1)
    )
