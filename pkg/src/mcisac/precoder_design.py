"""Conic-program builders and the alternating-optimization precoder driver.

Four design families share one machinery: block-level or symbol-level
precoding under coordinated-beamforming (per-BS programs, neighbors held
fixed) or coordinated-multipoint (one stacked program).  Stage A maximizes a
weighted sensing/communication objective under fixed interference caps; stage
B shrinks the caps while preserving the achieved bounds; the driver alternates
the two until the objective settles.  All sensing bounds enter through Schur
LMI blocks on the Fisher matrix, which is affine in an aggregate-covariance
variable tied to the per-user (or per-slot) covariances by equality rows.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._builder import CVec, HermVar, LinExpr, ProgramBuilder
from .conic_solver import ConeSolution, ConicProgram, SolverSettings, solve
from .robust_constraints import (
    ci_residuals,
    slp_inter_leakage_residual,
    slp_stack,
    worst_case_interference,
)
from .scenario import Scenario, steering
from .sensing_crb import ClutterCovariance, clutter_covariance_cbf, fim, fim_coefficients

__all__ = [
    "CapsState",
    "DesignSpec",
    "AoSettings",
    "PrecoderSolution",
    "InfeasibleConfigurationError",
    "SolverFailureError",
    "build_stage_a",
    "build_stage_b",
    "normalization_factors",
    "run_algorithm1",
    "rank1_extract",
    "initial_covariances",
    "symbol_phases",
    "verify_solution",
]

log = logging.getLogger("mcisac")


class InfeasibleConfigurationError(RuntimeError):
    def __init__(self, message: str, families: list[str]):
        super().__init__(message)
        self.families = families


class SolverFailureError(RuntimeError):
    pass


@dataclass
class CapsState:
    """Current interference-cap values driven by the stage-B updates."""

    p_leak: float
    i_intra: np.ndarray  # per cell
    i_inter: float
    i_comp: float
    i_inter_sl: float  # amplitude units; its square is the tolerable power

    @staticmethod
    def initial(scenario: Scenario) -> "CapsState":
        caps = scenario.caps
        return CapsState(
            p_leak=caps.p_leak_max,
            i_intra=np.full(scenario.j_cells, caps.i_intra_max),
            i_inter=caps.i_inter_max,
            i_comp=caps.i_inter_max,
            i_inter_sl=math.sqrt(caps.i_max),
        )

    def snapshot(self) -> dict:
        return {
            "p_leak": self.p_leak,
            "i_intra": self.i_intra.tolist(),
            "i_inter": self.i_inter,
            "i_comp": self.i_comp,
            "i_inter_sl": self.i_inter_sl,
        }


@dataclass
class DesignSpec:
    """One stage-A/B problem instance description."""

    mode: str  # cbf | comp
    precoding: str  # blp | slp
    rho: float
    caps: CapsState
    nf: tuple[float, float] | None = None
    cell: int | None = None  # which BS for cbf builds
    gamma_target: float | None = None  # linear SINR; fixes gamma instead of rho

    def __post_init__(self):
        if self.mode not in ("cbf", "comp"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.precoding not in ("blp", "slp"):
            raise ValueError(f"unknown precoding {self.precoding!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.mode == "cbf" and self.cell is None:
            raise ValueError("cbf builds are per-BS; spec.cell is required")


@dataclass
class AoSettings:
    ao_tol: float = 1e-3
    ao_max_iters: int = 10
    solver: SolverSettings = field(default_factory=SolverSettings)
    gamma_target_db: float | None = None
    rng_seed: int | None = None  # symbol draw; defaults to the scenario seed


@dataclass
class AoIteration:
    iteration: int
    objective: float
    gamma: float
    sensing_bound: float
    caps: dict
    solver_iters: int
    max_residual: float


@dataclass
class PrecoderSolution:
    mode: str
    precoding: str
    rho: float
    gamma_target: float | None
    covariances: list  # cbf-blp: [m][k]; comp-blp: [k]; slp: per-slot covariances
    beamvectors: list | None
    rank_residuals: list | None
    slot_vectors: list | None  # cbf-slp: [m][s]; comp-slp: [s]
    symbol_phases: np.ndarray | None
    achieved: dict
    caps: CapsState
    clutter: list  # per-cell covariance matrices backing the final solves
    trace: list[AoIteration]
    warning: str | None = None

    @property
    def converged(self) -> bool:
        return self.warning is None


# ---------------------------------------------------------------------------
# shared builder pieces
# ---------------------------------------------------------------------------


def _fim_entry_exprs(r_agg: HermVar, z11, z12, z22) -> list[list[LinExpr]]:
    """3x3 symmetric FIM entries as affine expressions of the aggregate
    covariance, ordered (theta, alpha_re, alpha_im)."""
    re11, _ = r_agg.trace_product(z11)
    re12, im12 = r_agg.trace_product(z12)
    re22, im22 = r_agg.trace_product(z22)
    f = [[None] * 3 for _ in range(3)]
    f[0][0] = re11.scaled(2.0)
    f[0][1] = f[1][0] = re12.scaled(2.0)
    f[0][2] = f[2][0] = im12.scaled(-2.0)
    f[1][1] = re22.scaled(2.0)
    f[1][2] = f[2][1] = im22.scaled(-2.0)
    f[2][2] = re22.scaled(2.0)
    return f


def _add_schur_blocks(
    bld: ProgramBuilder,
    f_exprs: list[list[LinExpr]],
    corners: list[LinExpr],
    family: str,
):
    """One bordered LMI [[F, e_l], [e_l^T, corner_l]] >= 0 per parameter l."""
    for l, corner in enumerate(corners):
        def entry(i, j, l=l, corner=corner):
            if i < 3 and j < 3:
                return f_exprs[i][j]
            if i == 3 and j == 3:
                return corner
            other = j if i == 3 else i
            return LinExpr.constant(1.0 if other == l else 0.0)

        bld.add_psd_real(entry, 4, family=family)


def _add_worst_case_sum(
    bld: ProgramBuilder,
    sources: list[tuple[HermVar, np.ndarray]],
    radius: float,
    family: str,
) -> LinExpr:
    """Affine upper bound sum_l max_e |h~^T w_l|^2 as an expression; emits the
    norm epigraph cones when the radius is positive."""
    parts = []
    for w, h in sources:
        parts.append(w.quad_form(h))
        if radius > 0:
            parts.append(w.trace().scaled(radius**2))
            n1 = bld.scalar(f"{family}.n1#{bld.n_vars}")
            n2 = bld.scalar(f"{family}.n2#{bld.n_vars}")
            row_entries = w.row_product(h)  # h^T W
            col_entries = w.col_product(h.conj())  # W h*
            vec1 = [e for pair in row_entries for e in pair]
            vec2 = [e for pair in col_entries for e in pair]
            bld.add_soc(LinExpr.term(n1), vec1, family=f"{family}.norm")
            bld.add_soc(LinExpr.term(n2), vec2, family=f"{family}.norm")
            parts.append(LinExpr.term(n1, radius))
            parts.append(LinExpr.term(n2, radius))
    return LinExpr.combine(parts) if parts else LinExpr.constant(0.0)


def _neighbor_clutter(
    scenario: Scenario, cell: int, neighbor_covs: dict[int, np.ndarray]
) -> ClutterCovariance:
    return clutter_covariance_cbf(
        cell,
        {n: c for n, c in neighbor_covs.items() if n != cell},
        scenario.topology,
        scenario.geometry,
        scenario.sigma_r_sq,
        scenario.frame_len,
    )


def symbol_phases(scenario: Scenario, rng_seed: int | None = None) -> np.ndarray:
    """PSK symbol phases per (cell, user, slot), drawn with the run seed."""
    seed = scenario.channels.rng_seed if rng_seed is None else rng_seed
    rng = np.random.default_rng([seed, 0xD1CE])
    picks = rng.integers(
        0, scenario.mpsk_order, size=(scenario.j_cells, scenario.k_users, scenario.frame_len)
    )
    return 2.0 * math.pi * picks / scenario.mpsk_order


def initial_covariances(scenario: Scenario) -> list[list[np.ndarray]]:
    """Matched-filter rank-one starting covariances, per (cell, user)."""
    j, k, n_tx = scenario.j_cells, scenario.k_users, scenario.geometry.n_tx
    out = []
    share = scenario.p_t / k
    for m in range(j):
        row = []
        for kk in range(k):
            h = scenario.channels.vector(m, m, kk)
            q = np.outer(h.conj(), h) / float(np.linalg.norm(h) ** 2)
            row.append(share * q)
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# stage-A builders
# ---------------------------------------------------------------------------


def _objective_terms(
    bld: ProgramBuilder,
    spec: DesignSpec,
    sensing_idx: int,
    comm_idx: int,
):
    """Weighted stage-A objective; a gamma target pins the comm variable."""
    if spec.gamma_target is not None:
        bld.set_objective_term(sensing_idx, -1.0)
        target = spec.gamma_target
        if spec.precoding == "slp":
            target = math.sqrt(target)
        bld.add_zero(
            [LinExpr.term(comm_idx, 1.0, -target)], family="gamma_target"
        )
        return
    nf_r, nf_c = spec.nf if spec.nf is not None else (1.0, 1.0)
    if spec.rho > 0:
        bld.set_objective_term(sensing_idx, -spec.rho / nf_r)
    if spec.rho < 1:
        bld.set_objective_term(comm_idx, (1.0 - spec.rho) / nf_c)


def _build_cbf_blp_a(
    scenario: Scenario, spec: DesignSpec, neighbor_covs: dict[int, np.ndarray]
) -> tuple[ConicProgram, ProgramBuilder]:
    m = spec.cell
    j, k, n_tx = scenario.j_cells, scenario.k_users, scenario.geometry.n_tx
    delta = scenario.channels.delta
    caps = spec.caps
    bld = ProgramBuilder()

    ws = [bld.herm(f"w.{kk}", n_tx) for kk in range(k)]
    r_agg = bld.herm("r_agg", n_tx)
    t_idx = [bld.scalar(f"t.{l}") for l in range(3)]
    gamma = bld.scalar("gamma")

    # aggregate covariance ties the FIM rows to the per-user blocks
    eq_rows = []
    for i in range(n_tx):
        for jj in range(i, n_tx):
            agg_re, agg_im = r_agg.entry(i, jj)
            parts_re = [w.entry(i, jj)[0] for w in ws]
            parts_im = [w.entry(i, jj)[1] for w in ws]
            eq_rows.append(LinExpr.combine([agg_re] + parts_re, [1.0] + [-1.0] * k))
            if i != jj:
                eq_rows.append(LinExpr.combine([agg_im] + parts_im, [1.0] + [-1.0] * k))
    bld.add_zero(eq_rows, family="aggregate")

    for w in ws:
        bld.add_psd_hermvar(w, family="covariance_psd")

    clutter = _neighbor_clutter(scenario, m, neighbor_covs)
    z11, z12, z22 = fim_coefficients(
        "cbf",
        m,
        scenario.topology,
        scenario.geometry,
        scenario.sigma_r_sq,
        scenario.frame_len,
        clutter,
    )
    f_exprs = _fim_entry_exprs(r_agg, z11, z12, z22)
    _add_schur_blocks(
        bld, f_exprs, [LinExpr.term(t) for t in t_idx], family="fim_schur"
    )

    bld.add_nonneg(
        [r_agg.trace().scaled(-1.0).plus_const(scenario.p_t)], family="power"
    )

    leak_rows = []
    for n in range(j):
        if n == m:
            continue
        v = steering(scenario.topology.departure_angles[m, n], n_tx)
        leak_rows.append(r_agg.quad_form(v).scaled(-1.0).plus_const(caps.p_leak))
    if leak_rows:
        bld.add_nonneg(leak_rows, family="leakage")

    # robust SINR split: nominal numerator vs capped interference
    sinr_rows = []
    for kk in range(k):
        h = scenario.channels.vector(m, m, kk)
        numer = ws[kk].quad_form(h)
        sinr_rows.append(
            LinExpr.combine(
                [numer, LinExpr.term(gamma, -(caps.i_intra[m] + caps.i_inter + scenario.sigma_c_sq))]
            )
        )
    bld.add_nonneg(sinr_rows, family="sinr")
    bld.add_nonneg([LinExpr.term(gamma)], family="gamma_sign")

    for kk in range(k):
        h = scenario.channels.vector(m, m, kk)
        sources = [(ws[l], h) for l in range(k) if l != kk]
        bound = _add_worst_case_sum(bld, sources, delta, family="intra")
        bld.add_nonneg(
            [bound.scaled(-1.0).plus_const(caps.i_intra[m])], family="intra_cap"
        )

    for n in range(j):
        if n == m:
            continue
        for kk in range(k):
            h = scenario.channels.vector(m, n, kk)
            sources = [(ws[l], h) for l in range(k)]
            bound = _add_worst_case_sum(bld, sources, delta, family="inter")
            bld.add_nonneg(
                [bound.scaled(-1.0).plus_const(caps.i_inter / (j - 1))],
                family="inter_cap",
            )

    _objective_terms(bld, spec, t_idx[0], gamma)
    return bld.build(), bld


def _build_comp_blp_a(
    scenario: Scenario, spec: DesignSpec
) -> tuple[ConicProgram, ProgramBuilder]:
    j, k, n_tx = scenario.j_cells, scenario.k_users, scenario.geometry.n_tx
    n = j * n_tx
    users = j * k
    delta = scenario.channels.delta
    caps = spec.caps
    bld = ProgramBuilder()

    ws = [bld.herm(f"w.{u}", n) for u in range(users)]
    r_agg = bld.herm("r_agg", n)
    t_idx = [[bld.scalar(f"t.{m}.{l}") for l in range(3)] for m in range(j)]
    f_idx = bld.scalar("f")
    gamma = bld.scalar("gamma")

    eq_rows = []
    for i in range(n):
        for jj in range(i, n):
            agg_re, agg_im = r_agg.entry(i, jj)
            parts_re = [w.entry(i, jj)[0] for w in ws]
            parts_im = [w.entry(i, jj)[1] for w in ws]
            eq_rows.append(LinExpr.combine([agg_re] + parts_re, [1.0] + [-1.0] * users))
            if i != jj:
                eq_rows.append(
                    LinExpr.combine([agg_im] + parts_im, [1.0] + [-1.0] * users)
                )
    bld.add_zero(eq_rows, family="aggregate")

    for w in ws:
        bld.add_psd_hermvar(w, family="covariance_psd")

    for m in range(j):
        z11, z12, z22 = fim_coefficients(
            "comp",
            m,
            scenario.topology,
            scenario.geometry,
            scenario.sigma_r_sq,
            scenario.frame_len,
        )
        f_exprs = _fim_entry_exprs(r_agg, z11, z12, z22)
        _add_schur_blocks(
            bld, f_exprs, [LinExpr.term(t) for t in t_idx[m]], family="fim_schur"
        )

    bld.add_nonneg(
        [
            LinExpr.combine([LinExpr.term(f_idx), LinExpr.term(t_idx[m][0], -1.0)])
            for m in range(j)
        ],
        family="crb_max",
    )

    power_rows = []
    for m in range(j):
        diag = r_agg.diag[m * n_tx : (m + 1) * n_tx]
        power_rows.append(
            LinExpr(diag, -np.ones(n_tx), scenario.p_t)
        )
    bld.add_nonneg(power_rows, family="power")

    sinr_rows = []
    for u in range(users):
        h = scenario.channels.stacked(u // k, u % k)
        sinr_rows.append(
            LinExpr.combine(
                [
                    ws[u].quad_form(h),
                    LinExpr.term(gamma, -(caps.i_comp + scenario.sigma_c_sq)),
                ]
            )
        )
    bld.add_nonneg(sinr_rows, family="sinr")
    bld.add_nonneg([LinExpr.term(gamma)], family="gamma_sign")

    radius = math.sqrt(j) * delta
    for u in range(users):
        h = scenario.channels.stacked(u // k, u % k)
        sources = [(ws[l], h) for l in range(users) if l != u]
        bound = _add_worst_case_sum(bld, sources, radius, family="comp_int")
        bld.add_nonneg(
            [bound.scaled(-1.0).plus_const(caps.i_comp)], family="comp_int_cap"
        )

    _objective_terms(bld, spec, f_idx, gamma)
    return bld.build(), bld


def _slp_slot_blocks(
    bld: ProgramBuilder, n: int, frame_len: int, prefix: str = ""
) -> tuple[list[CVec], list[HermVar], HermVar]:
    xs = [bld.cvec(f"{prefix}x.{s}", n) for s in range(frame_len)]
    rs = [bld.herm(f"{prefix}r.{s}", n) for s in range(frame_len)]
    r_agg = bld.herm(f"{prefix}r_agg", n)
    eq_rows = []
    inv_l = 1.0 / frame_len
    for i in range(n):
        for jj in range(i, n):
            agg_re, agg_im = r_agg.entry(i, jj)
            parts_re = [r.entry(i, jj)[0] for r in rs]
            parts_im = [r.entry(i, jj)[1] for r in rs]
            eq_rows.append(
                LinExpr.combine([agg_re] + parts_re, [1.0] + [-inv_l] * frame_len)
            )
            if i != jj:
                eq_rows.append(
                    LinExpr.combine([agg_im] + parts_im, [1.0] + [-inv_l] * frame_len)
                )
    bld.add_zero(eq_rows, family="aggregate")
    for x, r in zip(xs, rs):
        def re_entry(i, j, r=r, x=x):
            if i < n and j < n:
                return r.entry(i, j)[0]
            if i == n and j == n:
                return LinExpr.constant(1.0)
            other = j if i == n else i
            # border holds x (column) / x^H (row); lower triangle reaches x^H
            return x.entry(other)[0]

        def im_entry(i, j, r=r, x=x):
            ii, jj = i, j
            sign = 1.0
            if ii < jj:
                ii, jj, sign = jj, ii, -1.0
            if ii < n and jj < n:
                val = r.entry(ii, jj)[1] if ii != jj else LinExpr.constant(0.0)
                return val.scaled(sign) if ii != jj else val
            if ii == n and jj == n:
                return LinExpr.constant(0.0)
            # entry (n, j) of [[R, x],[x^H, 1]] is conj(x_j): Im = -x_im
            return x.entry(jj)[1].scaled(-sign)

        bld.add_psd_hermitian(re_entry, im_entry, n + 1, family="slot_sdr")
    return xs, rs, r_agg


def _ci_norm_slacks(bld: ProgramBuilder, xs: list[CVec], tan_psi: float):
    """Per-slot epigraph variables for ||x_hat -/+ x_hat_prime tan(psi)||."""
    slacks = []
    for s, x in enumerate(xs):
        c_plus = bld.scalar(f"ci_norm_plus.{s}")
        c_minus = bld.scalar(f"ci_norm_minus.{s}")
        vec_plus, vec_minus = [], []
        for i in range(x.n):
            xr, xi = x.entry(i)
            # x_hat = [im; re], x_hat_prime = [re; -im]
            vec_plus.append(LinExpr.combine([xi, xr], [1.0, -tan_psi]))
            vec_minus.append(LinExpr.combine([xi, xr], [1.0, tan_psi]))
        for i in range(x.n):
            xr, xi = x.entry(i)
            vec_plus.append(LinExpr.combine([xr, xi], [1.0, tan_psi]))
            vec_minus.append(LinExpr.combine([xr, xi], [1.0, -tan_psi]))
        bld.add_soc(LinExpr.term(c_plus), vec_plus, family="ci_norm")
        bld.add_soc(LinExpr.term(c_minus), vec_minus, family="ci_norm")
        slacks.append((c_plus, c_minus))
    return slacks


def _add_ci_rows(
    bld: ProgramBuilder,
    x: CVec,
    rotated_channel: np.ndarray,
    gamma_prime: LinExpr,
    guard: float,
    delta_eff: float,
    slacks: tuple[int, int],
    tan_psi: float,
    family: str = "ci",
):
    """Robust constructive-interference pair for one (user, slot)."""
    re_expr, im_expr = x.dot(rotated_channel)
    c_plus, c_minus = slacks
    row_plus = LinExpr.combine(
        [im_expr, re_expr, gamma_prime, LinExpr.term(c_plus)],
        [-1.0, tan_psi, -guard * tan_psi, -delta_eff],
    )
    row_minus = LinExpr.combine(
        [im_expr, re_expr, gamma_prime, LinExpr.term(c_minus)],
        [1.0, tan_psi, -guard * tan_psi, -delta_eff],
    )
    bld.add_nonneg([row_plus, row_minus], family=family)


def _build_cbf_slp_a(
    scenario: Scenario,
    spec: DesignSpec,
    neighbor_covs: dict[int, np.ndarray],
    phases: np.ndarray,
) -> tuple[ConicProgram, ProgramBuilder]:
    m = spec.cell
    j, k, n_tx = scenario.j_cells, scenario.k_users, scenario.geometry.n_tx
    frame_len = scenario.frame_len
    delta = scenario.channels.delta
    caps = spec.caps
    tan_psi = math.tan(scenario.psi)
    bld = ProgramBuilder()

    xs, rs, r_agg = _slp_slot_blocks(bld, n_tx, frame_len)
    t_idx = [bld.scalar(f"t.{l}") for l in range(3)]
    gamma_p = bld.scalar("gamma_prime")

    clutter = _neighbor_clutter(scenario, m, neighbor_covs)
    z11, z12, z22 = fim_coefficients(
        "cbf",
        m,
        scenario.topology,
        scenario.geometry,
        scenario.sigma_r_sq,
        scenario.frame_len,
        clutter,
    )
    f_exprs = _fim_entry_exprs(r_agg, z11, z12, z22)
    _add_schur_blocks(bld, f_exprs, [LinExpr.term(t) for t in t_idx], family="fim_schur")

    bld.add_nonneg([r_agg.trace().scaled(-1.0).plus_const(scenario.p_t)], family="power")

    leak_rows = []
    for n in range(j):
        if n == m:
            continue
        v = steering(scenario.topology.departure_angles[m, n], n_tx)
        leak_rows.append(r_agg.quad_form(v).scaled(-1.0).plus_const(caps.p_leak))
    if leak_rows:
        bld.add_nonneg(leak_rows, family="leakage")

    guard = math.sqrt(scenario.sigma_c_sq + caps.i_inter_sl**2)
    slacks = _ci_norm_slacks(bld, xs, tan_psi)
    for s in range(frame_len):
        for kk in range(k):
            h_rot = scenario.channels.vector(m, m, kk) * np.exp(-1j * phases[m, kk, s])
            _add_ci_rows(
                bld,
                xs[s],
                h_rot,
                LinExpr.term(gamma_p),
                guard,
                delta,
                slacks[s],
                tan_psi,
            )
    bld.add_nonneg([LinExpr.term(gamma_p)], family="gamma_sign")

    if j > 1:
        x_norms = []
        for s, x in enumerate(xs):
            u2 = bld.scalar(f"xnorm.{s}")
            vec = [e for i in range(n_tx) for e in x.entry(i)]
            bld.add_soc(LinExpr.term(u2), vec, family="xnorm")
            x_norms.append(u2)
        cap_term = caps.i_inter_sl / math.sqrt(j - 1)
        for s in range(frame_len):
            for n in range(j):
                if n == m:
                    continue
                for kk in range(k):
                    h = scenario.channels.vector(m, n, kk)
                    u1 = bld.scalar(f"icprod.{s}.{n}.{kk}")
                    re_expr, im_expr = xs[s].dot(h)
                    bld.add_soc(LinExpr.term(u1), [re_expr, im_expr], family="ic_abs")
                    row = LinExpr.combine(
                        [LinExpr.term(u1), LinExpr.term(x_norms[s], delta)],
                        [-1.0, -1.0],
                        const=cap_term,
                    )
                    bld.add_nonneg([row], family="slp_inter_cap")

    _objective_terms(bld, spec, t_idx[0], gamma_p)
    return bld.build(), bld


def _build_comp_slp_a(
    scenario: Scenario, spec: DesignSpec, phases: np.ndarray
) -> tuple[ConicProgram, ProgramBuilder]:
    j, k, n_tx = scenario.j_cells, scenario.k_users, scenario.geometry.n_tx
    n = j * n_tx
    frame_len = scenario.frame_len
    delta_eff = math.sqrt(j) * scenario.channels.delta
    tan_psi = math.tan(scenario.psi)
    bld = ProgramBuilder()

    xs, rs, r_agg = _slp_slot_blocks(bld, n, frame_len)
    t_idx = [[bld.scalar(f"t.{m}.{l}") for l in range(3)] for m in range(j)]
    f_idx = bld.scalar("f")
    gamma_p = bld.scalar("gamma_prime")

    for m in range(j):
        z11, z12, z22 = fim_coefficients(
            "comp",
            m,
            scenario.topology,
            scenario.geometry,
            scenario.sigma_r_sq,
            scenario.frame_len,
        )
        f_exprs = _fim_entry_exprs(r_agg, z11, z12, z22)
        _add_schur_blocks(
            bld, f_exprs, [LinExpr.term(t) for t in t_idx[m]], family="fim_schur"
        )

    bld.add_nonneg(
        [
            LinExpr.combine([LinExpr.term(f_idx), LinExpr.term(t_idx[m][0], -1.0)])
            for m in range(j)
        ],
        family="crb_max",
    )

    power_rows = []
    for m in range(j):
        diag = r_agg.diag[m * n_tx : (m + 1) * n_tx]
        power_rows.append(LinExpr(diag, -np.ones(n_tx), scenario.p_t))
    bld.add_nonneg(power_rows, family="power")

    slacks = _ci_norm_slacks(bld, xs, tan_psi)
    sigma_c = math.sqrt(scenario.sigma_c_sq)
    for s in range(frame_len):
        for m in range(j):
            for kk in range(k):
                h_rot = scenario.channels.stacked(m, kk) * np.exp(
                    -1j * phases[m, kk, s]
                )
                _add_ci_rows(
                    bld,
                    xs[s],
                    h_rot,
                    LinExpr.term(gamma_p),
                    sigma_c,
                    delta_eff,
                    slacks[s],
                    tan_psi,
                )
    bld.add_nonneg([LinExpr.term(gamma_p)], family="gamma_sign")

    _objective_terms(bld, spec, f_idx, gamma_p)
    return bld.build(), bld


def build_stage_a(
    scenario: Scenario,
    spec: DesignSpec,
    fixed_neighbor_covariances: dict[int, np.ndarray] | None = None,
    phases: np.ndarray | None = None,
) -> tuple[ConicProgram, ProgramBuilder]:
    """Stage-A program: maximize the weighted sensing/communication objective
    under the current caps."""
    if spec.mode == "cbf" and fixed_neighbor_covariances is None:
        raise ValueError("cbf builds need the neighbors' transmit covariances")
    if spec.precoding == "slp" and phases is None:
        phases = symbol_phases(scenario)
    if spec.mode == "cbf" and spec.precoding == "blp":
        return _build_cbf_blp_a(scenario, spec, fixed_neighbor_covariances)
    if spec.mode == "comp" and spec.precoding == "blp":
        return _build_comp_blp_a(scenario, spec)
    if spec.mode == "cbf" and spec.precoding == "slp":
        return _build_cbf_slp_a(scenario, spec, fixed_neighbor_covariances, phases)
    return _build_comp_slp_a(scenario, spec, phases)


# ---------------------------------------------------------------------------
# stage-B builders
# ---------------------------------------------------------------------------


def _build_cbf_blp_b(
    scenario: Scenario,
    spec: DesignSpec,
    achieved: dict,
    neighbor_covs: dict[int, np.ndarray],
) -> tuple[ConicProgram, ProgramBuilder]:
    m = spec.cell
    j, k, n_tx = scenario.j_cells, scenario.k_users, scenario.geometry.n_tx
    delta = scenario.channels.delta
    caps = spec.caps
    gamma_star = achieved["gamma"]
    t_star = achieved["t"]
    bld = ProgramBuilder()

    ws = [bld.herm(f"w.{kk}", n_tx) for kk in range(k)]
    r_agg = bld.herm("r_agg", n_tx)
    p_leak = bld.scalar("p_leak")
    i_intra = bld.scalar("i_intra")
    i_inter = bld.scalar("i_inter")

    eq_rows = []
    for i in range(n_tx):
        for jj in range(i, n_tx):
            agg_re, agg_im = r_agg.entry(i, jj)
            parts_re = [w.entry(i, jj)[0] for w in ws]
            parts_im = [w.entry(i, jj)[1] for w in ws]
            eq_rows.append(LinExpr.combine([agg_re] + parts_re, [1.0] + [-1.0] * k))
            if i != jj:
                eq_rows.append(LinExpr.combine([agg_im] + parts_im, [1.0] + [-1.0] * k))
    bld.add_zero(eq_rows, family="aggregate")
    for w in ws:
        bld.add_psd_hermvar(w, family="covariance_psd")

    clutter = _neighbor_clutter(scenario, m, neighbor_covs)
    z11, z12, z22 = fim_coefficients(
        "cbf",
        m,
        scenario.topology,
        scenario.geometry,
        scenario.sigma_r_sq,
        scenario.frame_len,
        clutter,
    )
    f_exprs = _fim_entry_exprs(r_agg, z11, z12, z22)
    _add_schur_blocks(
        bld,
        f_exprs,
        [LinExpr.constant(t_star[l]) for l in range(3)],
        family="fim_schur",
    )

    bld.add_nonneg([r_agg.trace().scaled(-1.0).plus_const(scenario.p_t)], family="power")

    leak_rows = []
    for n in range(j):
        if n == m:
            continue
        v = steering(scenario.topology.departure_angles[m, n], n_tx)
        leak_rows.append(
            LinExpr.combine([r_agg.quad_form(v), LinExpr.term(p_leak)], [-1.0, 1.0])
        )
    if leak_rows:
        bld.add_nonneg(leak_rows, family="leakage")
    bld.add_nonneg([LinExpr.term(p_leak)], family="leak_sign")

    # SINR guarantee at the stage-A optimum; neighbors' pressure enters through
    # the current system-wide inter-cell cap (a constant here).
    sinr_rows = []
    for kk in range(k):
        h = scenario.channels.vector(m, m, kk)
        sinr_rows.append(
            LinExpr.combine(
                [ws[kk].quad_form(h), LinExpr.term(i_intra, -gamma_star)],
                const=-gamma_star * (caps.i_inter + scenario.sigma_c_sq),
            )
        )
    bld.add_nonneg(sinr_rows, family="sinr_guarantee")

    for kk in range(k):
        h = scenario.channels.vector(m, m, kk)
        sources = [(ws[l], h) for l in range(k) if l != kk]
        bound = _add_worst_case_sum(bld, sources, delta, family="intra")
        bld.add_nonneg(
            [LinExpr.combine([bound, LinExpr.term(i_intra)], [-1.0, 1.0])],
            family="intra_cap",
        )

    for n in range(j):
        if n == m:
            continue
        for kk in range(k):
            h = scenario.channels.vector(m, n, kk)
            sources = [(ws[l], h) for l in range(k)]
            bound = _add_worst_case_sum(bld, sources, delta, family="inter")
            bld.add_nonneg(
                [
                    LinExpr.combine(
                        [bound, LinExpr.term(i_inter, 1.0 / (j - 1))], [-1.0, 1.0]
                    )
                ],
                family="inter_cap",
            )
    if j > 1:
        bld.add_nonneg(
            [LinExpr.term(i_inter, -1.0, caps.i_inter)], family="inter_ceiling"
        )
    bld.add_nonneg(
        [LinExpr.term(i_intra), LinExpr.term(i_inter)], family="cap_sign"
    )

    bld.set_objective_term(p_leak, -1.0 / scenario.caps.p_leak_max)
    bld.set_objective_term(i_intra, -1.0 / scenario.caps.i_intra_max)
    if j > 1:
        bld.set_objective_term(i_inter, -1.0 / ((j - 1) * scenario.caps.i_inter_max))
    return bld.build(), bld


def _build_comp_blp_b(
    scenario: Scenario, spec: DesignSpec, achieved: dict
) -> tuple[ConicProgram, ProgramBuilder]:
    j, k, n_tx = scenario.j_cells, scenario.k_users, scenario.geometry.n_tx
    n = j * n_tx
    users = j * k
    delta = scenario.channels.delta
    gamma_star = achieved["gamma"]
    t_star = achieved["t"]  # per cell
    bld = ProgramBuilder()

    ws = [bld.herm(f"w.{u}", n) for u in range(users)]
    r_agg = bld.herm("r_agg", n)
    i_comp = bld.scalar("i_comp")

    eq_rows = []
    for i in range(n):
        for jj in range(i, n):
            agg_re, agg_im = r_agg.entry(i, jj)
            parts_re = [w.entry(i, jj)[0] for w in ws]
            parts_im = [w.entry(i, jj)[1] for w in ws]
            eq_rows.append(LinExpr.combine([agg_re] + parts_re, [1.0] + [-1.0] * users))
            if i != jj:
                eq_rows.append(
                    LinExpr.combine([agg_im] + parts_im, [1.0] + [-1.0] * users)
                )
    bld.add_zero(eq_rows, family="aggregate")
    for w in ws:
        bld.add_psd_hermvar(w, family="covariance_psd")

    for m in range(j):
        z11, z12, z22 = fim_coefficients(
            "comp",
            m,
            scenario.topology,
            scenario.geometry,
            scenario.sigma_r_sq,
            scenario.frame_len,
        )
        f_exprs = _fim_entry_exprs(r_agg, z11, z12, z22)
        _add_schur_blocks(
            bld,
            f_exprs,
            [LinExpr.constant(t_star[m][l]) for l in range(3)],
            family="fim_schur",
        )

    power_rows = []
    for m in range(j):
        diag = r_agg.diag[m * n_tx : (m + 1) * n_tx]
        power_rows.append(LinExpr(diag, -np.ones(n_tx), scenario.p_t))
    bld.add_nonneg(power_rows, family="power")

    sinr_rows = []
    for u in range(users):
        h = scenario.channels.stacked(u // k, u % k)
        sinr_rows.append(
            LinExpr.combine(
                [ws[u].quad_form(h), LinExpr.term(i_comp, -gamma_star)],
                const=-gamma_star * scenario.sigma_c_sq,
            )
        )
    bld.add_nonneg(sinr_rows, family="sinr_guarantee")

    radius = math.sqrt(j) * delta
    for u in range(users):
        h = scenario.channels.stacked(u // k, u % k)
        sources = [(ws[l], h) for l in range(users) if l != u]
        bound = _add_worst_case_sum(bld, sources, radius, family="comp_int")
        bld.add_nonneg(
            [LinExpr.combine([bound, LinExpr.term(i_comp)], [-1.0, 1.0])],
            family="comp_int_cap",
        )
    bld.add_nonneg([LinExpr.term(i_comp)], family="cap_sign")

    bld.set_objective_term(i_comp, -1.0)
    return bld.build(), bld


def _build_cbf_slp_b(
    scenario: Scenario,
    spec: DesignSpec,
    achieved: dict,
    neighbor_covs: dict[int, np.ndarray],
    phases: np.ndarray,
) -> tuple[ConicProgram, ProgramBuilder]:
    m = spec.cell
    j, k, n_tx = scenario.j_cells, scenario.k_users, scenario.geometry.n_tx
    frame_len = scenario.frame_len
    delta = scenario.channels.delta
    caps = spec.caps
    tan_psi = math.tan(scenario.psi)
    gamma_p_star = achieved["gamma_prime"]
    t_star = achieved["t"]
    bld = ProgramBuilder()

    xs, rs, r_agg = _slp_slot_blocks(bld, n_tx, frame_len)
    p_leak = bld.scalar("p_leak")

    clutter = _neighbor_clutter(scenario, m, neighbor_covs)
    z11, z12, z22 = fim_coefficients(
        "cbf",
        m,
        scenario.topology,
        scenario.geometry,
        scenario.sigma_r_sq,
        scenario.frame_len,
        clutter,
    )
    f_exprs = _fim_entry_exprs(r_agg, z11, z12, z22)
    _add_schur_blocks(
        bld,
        f_exprs,
        [LinExpr.constant(t_star[l]) for l in range(3)],
        family="fim_schur",
    )

    bld.add_nonneg([r_agg.trace().scaled(-1.0).plus_const(scenario.p_t)], family="power")
    leak_rows = []
    for n in range(j):
        if n == m:
            continue
        v = steering(scenario.topology.departure_angles[m, n], n_tx)
        leak_rows.append(
            LinExpr.combine([r_agg.quad_form(v), LinExpr.term(p_leak)], [-1.0, 1.0])
        )
    if leak_rows:
        bld.add_nonneg(leak_rows, family="leakage")
    bld.add_nonneg([LinExpr.term(p_leak)], family="leak_sign")

    # the CI guard keeps the current system-wide cap (constant), while this
    # BS's own inflicted interference is what gets minimized
    guard = math.sqrt(scenario.sigma_c_sq + caps.i_inter_sl**2)
    slacks = _ci_norm_slacks(bld, xs, tan_psi)
    for s in range(frame_len):
        for kk in range(k):
            h_rot = scenario.channels.vector(m, m, kk) * np.exp(-1j * phases[m, kk, s])
            _add_ci_rows(
                bld,
                xs[s],
                h_rot,
                LinExpr.constant(gamma_p_star),
                guard,
                delta,
                slacks[s],
                tan_psi,
            )

    i_inter = bld.scalar("i_inter_sl")
    i_inter_sq = bld.scalar("i_inter_sl_sq")
    if j > 1:
        x_norms = []
        for s, x in enumerate(xs):
            u2 = bld.scalar(f"xnorm.{s}")
            vec = [e for i in range(n_tx) for e in x.entry(i)]
            bld.add_soc(LinExpr.term(u2), vec, family="xnorm")
            x_norms.append(u2)
        for s in range(frame_len):
            for n in range(j):
                if n == m:
                    continue
                for kk in range(k):
                    h = scenario.channels.vector(m, n, kk)
                    u1 = bld.scalar(f"icprod.{s}.{n}.{kk}")
                    re_expr, im_expr = xs[s].dot(h)
                    bld.add_soc(LinExpr.term(u1), [re_expr, im_expr], family="ic_abs")
                    row = LinExpr.combine(
                        [
                            LinExpr.term(i_inter, 1.0 / math.sqrt(j - 1)),
                            LinExpr.term(u1),
                            LinExpr.term(x_norms[s], delta),
                        ],
                        [1.0, -1.0, -1.0],
                    )
                    bld.add_nonneg([row], family="slp_inter_cap")
        bld.add_nonneg(
            [LinExpr.term(i_inter, -1.0, caps.i_inter_sl)], family="inter_ceiling"
        )
    bld.add_nonneg([LinExpr.term(i_inter)], family="cap_sign")
    # i_inter_sq >= i_inter^2 as a rotated second-order cone
    bld.add_soc(
        LinExpr.term(i_inter_sq, 1.0, 1.0),
        [LinExpr.term(i_inter, 2.0), LinExpr.term(i_inter_sq, 1.0, -1.0)],
        family="cap_square",
    )

    bld.set_objective_term(p_leak, -1.0 / scenario.caps.p_leak_max)
    bld.set_objective_term(i_inter_sq, -1.0 / scenario.caps.i_max)
    return bld.build(), bld


def build_stage_b(
    scenario: Scenario,
    spec: DesignSpec,
    achieved: dict,
    fixed_neighbor_covariances: dict[int, np.ndarray] | None = None,
    phases: np.ndarray | None = None,
) -> tuple[ConicProgram, ProgramBuilder]:
    """Stage-B program: minimize leakage/interference caps while preserving
    the stage-A sensing and communication achievements."""
    if spec.mode == "comp" and spec.precoding == "slp":
        raise ValueError("comp-slp is a single-shot design; it has no stage B")
    if spec.mode == "cbf" and fixed_neighbor_covariances is None:
        raise ValueError("cbf builds need the neighbors' transmit covariances")
    if spec.precoding == "slp" and phases is None:
        phases = symbol_phases(scenario)
    if spec.mode == "cbf" and spec.precoding == "blp":
        return _build_cbf_blp_b(scenario, spec, achieved, fixed_neighbor_covariances)
    if spec.mode == "comp" and spec.precoding == "blp":
        return _build_comp_blp_b(scenario, spec, achieved)
    return _build_cbf_slp_b(scenario, spec, achieved, fixed_neighbor_covariances, phases)


# ---------------------------------------------------------------------------
# extraction and certification helpers
# ---------------------------------------------------------------------------


def rank1_extract(w: np.ndarray) -> tuple[np.ndarray, float]:
    """Leading-eigenpair beamvector and the relative trace left behind."""
    w = np.asarray(w, dtype=complex)
    tr = float(np.real(np.trace(w)))
    if tr <= 0:
        return np.zeros(w.shape[0], dtype=complex), 0.0
    vals, vecs = np.linalg.eigh(w)
    lead = float(max(vals[-1], 0.0))
    vec = math.sqrt(lead) * vecs[:, -1]
    residual = max(0.0, (tr - lead) / tr)
    return vec, residual


def _solution_ok(sol: ConeSolution, context: str, program: ConicProgram):
    if sol.status == "optimal":
        return
    if sol.status in ("infeasible", "unbounded"):
        families = _blame_families(program, sol)
        raise InfeasibleConfigurationError(
            f"{context}: solver reports {sol.status}; "
            f"most active constraint families: {', '.join(families)}",
            families,
        )
    raise SolverFailureError(
        f"{context}: solver stopped at {sol.status} "
        f"(residuals {sol.primal_res:.2e}/{sol.dual_res:.2e}/{sol.gap:.2e})"
    )


def _blame_families(program: ConicProgram, sol: ConeSolution) -> list[str]:
    y = np.abs(sol.dual)
    scores: dict[str, float] = {}
    for family, lo, hi in program.row_labels:
        scores[family] = scores.get(family, 0.0) + float(y[lo:hi].sum())
    total = sum(scores.values()) or 1.0
    ranked = sorted(scores.items(), key=lambda kv: kv[1], reverse=True)
    return [f"{name} ({val / total:.0%})" for name, val in ranked[:3] if val > 0]


def _warm_tuple(program: ConicProgram, sol: ConeSolution):
    s = program.b - program.a @ sol.primal
    return sol.primal, sol.dual, s


# ---------------------------------------------------------------------------
# the alternating-optimization driver
# ---------------------------------------------------------------------------


def normalization_factors(
    scenario: Scenario,
    mode: str,
    precoding: str,
    fixed_caps: CapsState | None = None,
    solver: SolverSettings | None = None,
) -> tuple[float, float]:
    """Objective normalizers: the sensing bound attained at rho=1 and the
    comm variable attained at rho=0, both under the initial caps."""
    caps = fixed_caps or CapsState.initial(scenario)
    solver = solver or SolverSettings()
    phases = symbol_phases(scenario)
    init = initial_covariances(scenario)
    avg = {m: sum(init[m][kk] for kk in range(scenario.k_users)) for m in range(scenario.j_cells)}

    def stage_a_opt(rho: float) -> tuple[float, float]:
        if mode == "cbf":
            sens_vals, comm_vals = [], []
            for m in range(scenario.j_cells):
                spec = DesignSpec(mode, precoding, rho, caps, nf=(1.0, 1.0), cell=m)
                prog, bld = build_stage_a(scenario, spec, avg, phases)
                sol = solve(prog, solver)
                _solution_ok(sol, f"normalization bootstrap (BS {m}, rho={rho})", prog)
                if precoding == "blp":
                    sens_vals.append(sol.primal[bld.vars["t.0"]])
                    comm_vals.append(sol.primal[bld.vars["gamma"]])
                else:
                    sens_vals.append(sol.primal[bld.vars["t.0"]])
                    comm_vals.append(sol.primal[bld.vars["gamma_prime"]])
            return max(sens_vals), min(comm_vals)
        spec = DesignSpec(mode, precoding, rho, caps, nf=(1.0, 1.0))
        prog, bld = build_stage_a(scenario, spec, None, phases)
        sol = solve(prog, solver)
        _solution_ok(sol, f"normalization bootstrap (rho={rho})", prog)
        sens = sol.primal[bld.vars["f"]]
        comm = sol.primal[
            bld.vars["gamma" if precoding == "blp" else "gamma_prime"]
        ]
        return sens, comm

    nf_r = abs(stage_a_opt(1.0)[0])
    nf_c = abs(stage_a_opt(0.0)[1])
    if nf_r <= 0 or nf_c <= 0:
        raise InfeasibleConfigurationError(
            "normalization bootstrap returned a non-positive factor", []
        )
    return float(nf_r), float(nf_c)


def run_algorithm1(
    scenario: Scenario,
    mode: str,
    precoding: str,
    rho: float,
    settings: AoSettings | None = None,
) -> PrecoderSolution:
    """Alternate stage A and stage B until the stage-A objective settles.

    With a gamma target in the settings the communication variable is pinned
    and the objective is pure sensing (no normalization bootstrap needed).
    """
    st = settings or AoSettings()
    gamma_target = (
        None
        if st.gamma_target_db is None
        else 10.0 ** (st.gamma_target_db / 10.0)
    )
    caps = CapsState.initial(scenario)
    nf = None
    if gamma_target is None and not (rho in (0.0, 1.0)):
        nf = normalization_factors(scenario, mode, precoding, caps, st.solver)
    elif gamma_target is None:
        nf = (1.0, 1.0)

    phases = symbol_phases(scenario, st.rng_seed)
    driver = _AoDriver(scenario, mode, precoding, rho, caps, nf, gamma_target, phases, st)
    return driver.run()


class _AoDriver:
    def __init__(self, scenario, mode, precoding, rho, caps, nf, gamma_target, phases, st):
        self.sc = scenario
        self.mode = mode
        self.precoding = precoding
        self.rho = rho
        self.caps = caps
        self.nf = nf
        self.gamma_target = gamma_target
        self.phases = phases
        self.st = st
        self.j = scenario.j_cells
        self.k = scenario.k_users
        init = initial_covariances(scenario)
        self.avg_cov = {
            m: sum(init[m][kk] for kk in range(self.k)) for m in range(self.j)
        }
        self.warm: dict = {}
        self.trace: list[AoIteration] = []
        self.warning = None

    def _spec(self, cell=None) -> DesignSpec:
        return DesignSpec(
            self.mode,
            self.precoding,
            self.rho,
            self.caps,
            nf=self.nf,
            cell=cell,
            gamma_target=self.gamma_target,
        )

    def _solve(self, key, prog):
        warm = self.warm.get(key)
        if warm is not None and warm[0].size != prog.n_vars:
            warm = None
        sol = solve(prog, self.st.solver, warm_start=warm)
        if sol.status == "optimal":
            self.warm[key] = _warm_tuple(prog, sol)
        return sol

    def run(self) -> PrecoderSolution:
        if self.mode == "comp" and self.precoding == "slp":
            return self._run_comp_slp()
        if self.mode == "comp":
            return self._run_comp_blp()
        return self._run_cbf()

    # -- comp ---------------------------------------------------------------

    def _run_comp_slp(self) -> PrecoderSolution:
        prog, bld = build_stage_a(self.sc, self._spec(), None, self.phases)
        t0 = time.perf_counter()
        sol = self._solve("comp_slp_a", prog)
        _solution_ok(sol, "single-shot comp-slp design", prog)
        gamma_p = float(sol.primal[bld.vars["gamma_prime"]])
        f_star = float(sol.primal[bld.vars["f"]])
        t_vals = [
            [float(sol.primal[bld.vars[f"t.{m}.{l}"]]) for l in range(3)]
            for m in range(self.j)
        ]
        xs = [bld.vars[f"x.{s}"].value(sol.primal) for s in range(self.sc.frame_len)]
        rs = [bld.vars[f"r.{s}"].value(sol.primal) for s in range(self.sc.frame_len)]
        self.trace.append(
            AoIteration(
                1,
                float(prog.objective @ sol.primal),
                gamma_p**2,
                f_star,
                self.caps.snapshot(),
                sol.iters,
                max(sol.primal_res, sol.dual_res, sol.gap),
            )
        )
        log.info("comp-slp solved in %.1fs", time.perf_counter() - t0)
        achieved = {
            "gamma": gamma_p**2,
            "gamma_prime": gamma_p,
            "f": f_star,
            "t": t_vals,
            "objective": float(prog.objective @ sol.primal),
        }
        clutter = [
            self.sc.sigma_r_sq * np.eye(self.sc.geometry.n_rx) for _ in range(self.j)
        ]
        return PrecoderSolution(
            mode=self.mode,
            precoding=self.precoding,
            rho=self.rho,
            gamma_target=self.gamma_target,
            covariances=rs,
            beamvectors=None,
            rank_residuals=None,
            slot_vectors=xs,
            symbol_phases=self.phases,
            achieved=achieved,
            caps=self.caps,
            clutter=clutter,
            trace=self.trace,
            warning=self.warning,
        )

    def _run_comp_blp(self) -> PrecoderSolution:
        users = self.j * self.k
        prev_obj = None
        sol_a = bld_a = None
        covs = None
        for it in range(1, self.st.ao_max_iters + 1):
            prog, bld = build_stage_a(self.sc, self._spec(), None, self.phases)
            sol = self._solve("comp_blp_a", prog)
            try:
                _solution_ok(sol, f"comp-blp stage A (iteration {it})", prog)
            except (InfeasibleConfigurationError, SolverFailureError):
                if it == 1:
                    raise
                self.warning = f"stage A failed at iteration {it}; keeping last iterate"
                break
            sol_a, bld_a = sol, bld
            obj = float(prog.objective @ sol.primal)
            gamma = float(sol.primal[bld.vars["gamma"]])
            f_star = float(sol.primal[bld.vars["f"]])
            t_vals = [
                [float(sol.primal[bld.vars[f"t.{m}.{l}"]]) for l in range(3)]
                for m in range(self.j)
            ]
            self.trace.append(
                AoIteration(
                    it,
                    obj,
                    gamma,
                    f_star,
                    self.caps.snapshot(),
                    sol.iters,
                    max(sol.primal_res, sol.dual_res, sol.gap),
                )
            )
            achieved = {"gamma": gamma, "f": f_star, "t": t_vals}
            prog_b, bld_b = build_stage_b(self.sc, self._spec(), achieved)
            sol_b = self._solve("comp_blp_b", prog_b)
            try:
                _solution_ok(sol_b, f"comp-blp stage B (iteration {it})", prog_b)
            except (InfeasibleConfigurationError, SolverFailureError):
                self.warning = f"stage B failed at iteration {it}; keeping stage-A iterate"
                covs = [bld.vars[f"w.{u}"].value(sol.primal) for u in range(users)]
                break
            covs = [bld_b.vars[f"w.{u}"].value(sol_b.primal) for u in range(users)]
            self.caps.i_comp = max(float(sol_b.primal[bld_b.vars["i_comp"]]), 1e-12)
            if prev_obj is not None and abs(obj - prev_obj) <= self.st.ao_tol * max(
                1.0, abs(obj)
            ):
                break
            prev_obj = obj
        if covs is None:
            covs = [bld_a.vars[f"w.{u}"].value(sol_a.primal) for u in range(users)]
        gamma = float(sol_a.primal[bld_a.vars["gamma"]])
        f_star = float(sol_a.primal[bld_a.vars["f"]])
        t_vals = [
            [float(sol_a.primal[bld_a.vars[f"t.{m}.{l}"]]) for l in range(3)]
            for m in range(self.j)
        ]
        beams, residuals = zip(*(rank1_extract(w) for w in covs))
        achieved = {
            "gamma": gamma,
            "f": f_star,
            "t": t_vals,
            "objective": self.trace[-1].objective,
        }
        clutter = [
            self.sc.sigma_r_sq * np.eye(self.sc.geometry.n_rx) for _ in range(self.j)
        ]
        return PrecoderSolution(
            mode=self.mode,
            precoding=self.precoding,
            rho=self.rho,
            gamma_target=self.gamma_target,
            covariances=list(covs),
            beamvectors=list(beams),
            rank_residuals=list(residuals),
            slot_vectors=None,
            symbol_phases=None,
            achieved=achieved,
            caps=self.caps,
            clutter=clutter,
            trace=self.trace,
            warning=self.warning,
        )

    # -- cbf ------------------------------------------------------------------

    def _run_cbf(self) -> PrecoderSolution:
        j, k = self.j, self.k
        frame_len = self.sc.frame_len
        payload = [None] * j  # per-BS covariance lists or slot payloads
        per_bs = [dict() for _ in range(j)]
        prev_obj = None
        for it in range(1, self.st.ao_max_iters + 1):
            obj_total = 0.0
            solver_iters = 0
            max_res = 0.0
            for m in range(j):
                prog, bld = build_stage_a(self.sc, self._spec(m), self.avg_cov, self.phases)
                sol = self._solve(("a", m), prog)
                try:
                    _solution_ok(sol, f"cbf stage A (BS {m}, iteration {it})", prog)
                except (InfeasibleConfigurationError, SolverFailureError):
                    if it == 1:
                        raise
                    self.warning = (
                        f"stage A failed for BS {m} at iteration {it}; keeping last iterate"
                    )
                    break
                obj_total += float(prog.objective @ sol.primal)
                solver_iters += sol.iters
                max_res = max(max_res, sol.primal_res, sol.dual_res, sol.gap)
                per_bs[m]["t"] = [float(sol.primal[bld.vars[f"t.{l}"]]) for l in range(3)]
                if self.precoding == "blp":
                    per_bs[m]["gamma"] = float(sol.primal[bld.vars["gamma"]])
                    covs = [bld.vars[f"w.{kk}"].value(sol.primal) for kk in range(k)]
                    payload[m] = covs
                    self.avg_cov[m] = sum(covs)
                else:
                    gp = float(sol.primal[bld.vars["gamma_prime"]])
                    per_bs[m]["gamma_prime"] = gp
                    per_bs[m]["gamma"] = gp**2
                    xs = [bld.vars[f"x.{s}"].value(sol.primal) for s in range(frame_len)]
                    rs = [bld.vars[f"r.{s}"].value(sol.primal) for s in range(frame_len)]
                    payload[m] = (xs, rs)
                    self.avg_cov[m] = bld.vars["r_agg"].value(sol.primal)
            if self.warning:
                break
            gamma_min = min(per_bs[m]["gamma"] for m in range(j))
            sens_max = max(per_bs[m]["t"][0] for m in range(j))
            self.trace.append(
                AoIteration(
                    it,
                    obj_total,
                    gamma_min,
                    sens_max,
                    self.caps.snapshot(),
                    solver_iters,
                    max_res,
                )
            )

            # stage B per BS, then collapse the per-BS caps
            new_inter = []
            new_leak = []
            stage_b_failed = False
            for m in range(j):
                achieved = dict(per_bs[m])
                prog_b, bld_b = build_stage_b(
                    self.sc, self._spec(m), achieved, self.avg_cov, self.phases
                )
                sol_b = self._solve(("b", m), prog_b)
                try:
                    _solution_ok(sol_b, f"cbf stage B (BS {m}, iteration {it})", prog_b)
                except (InfeasibleConfigurationError, SolverFailureError):
                    self.warning = (
                        f"stage B failed for BS {m} at iteration {it}; keeping stage-A iterate"
                    )
                    stage_b_failed = True
                    break
                new_leak.append(float(sol_b.primal[bld_b.vars["p_leak"]]))
                if self.precoding == "blp":
                    covs = [bld_b.vars[f"w.{kk}"].value(sol_b.primal) for kk in range(k)]
                    payload[m] = covs
                    self.avg_cov[m] = sum(covs)
                    self.caps.i_intra[m] = max(
                        float(sol_b.primal[bld_b.vars["i_intra"]]), 1e-12
                    )
                    new_inter.append(float(sol_b.primal[bld_b.vars["i_inter"]]))
                else:
                    xs = [bld_b.vars[f"x.{s}"].value(sol_b.primal) for s in range(frame_len)]
                    rs = [bld_b.vars[f"r.{s}"].value(sol_b.primal) for s in range(frame_len)]
                    payload[m] = (xs, rs)
                    self.avg_cov[m] = bld_b.vars["r_agg"].value(sol_b.primal)
                    new_inter.append(float(sol_b.primal[bld_b.vars["i_inter_sl"]]))
            if stage_b_failed:
                break
            if j > 1:
                if self.precoding == "blp":
                    self.caps.i_inter = max(max(new_inter), 1e-12)
                else:
                    self.caps.i_inter_sl = max(max(new_inter), 1e-12)
            self.caps.p_leak = max(max(new_leak), 1e-9 * self.sc.caps.p_leak_max)

            if prev_obj is not None and abs(obj_total - prev_obj) <= self.st.ao_tol * max(
                1.0, abs(obj_total)
            ):
                break
            prev_obj = obj_total

        clutter = [
            _neighbor_clutter(self.sc, m, self.avg_cov).matrix for m in range(j)
        ]
        gamma_min = min(per_bs[m]["gamma"] for m in range(j))
        achieved = {
            "gamma": gamma_min,
            "t": [per_bs[m]["t"] for m in range(j)],
            "objective": self.trace[-1].objective,
        }
        if self.precoding == "blp":
            beams, residuals = [], []
            for m in range(j):
                out = [rank1_extract(w) for w in payload[m]]
                beams.append([b for b, _ in out])
                residuals.append([r for _, r in out])
            return PrecoderSolution(
                mode=self.mode,
                precoding=self.precoding,
                rho=self.rho,
                gamma_target=self.gamma_target,
                covariances=payload,
                beamvectors=beams,
                rank_residuals=residuals,
                slot_vectors=None,
                symbol_phases=None,
                achieved=achieved,
                caps=self.caps,
                clutter=clutter,
                trace=self.trace,
                warning=self.warning,
            )
        achieved["gamma_prime"] = math.sqrt(max(gamma_min, 0.0))
        return PrecoderSolution(
            mode=self.mode,
            precoding=self.precoding,
            rho=self.rho,
            gamma_target=self.gamma_target,
            covariances=[payload[m][1] for m in range(j)],
            beamvectors=None,
            rank_residuals=None,
            slot_vectors=[payload[m][0] for m in range(j)],
            symbol_phases=self.phases,
            achieved=achieved,
            caps=self.caps,
            clutter=clutter,
            trace=self.trace,
            warning=self.warning,
        )


# ---------------------------------------------------------------------------
# independent certification (no solver state consulted)
# ---------------------------------------------------------------------------


def verify_solution(
    scenario: Scenario, solution: PrecoderSolution, tol: float = 1e-6
) -> dict:
    """Re-check power, leakage, caps, Schur bounds, and CI residuals from the
    payload alone.  Returns a report dict; raises AssertionError on failure."""
    checks: dict[str, float] = {}
    sc = scenario
    j, k = sc.j_cells, sc.k_users
    n_tx = sc.geometry.n_tx
    caps = solution.caps

    def _avg_cov(m):
        if solution.precoding == "blp":
            if solution.mode == "cbf":
                return sum(solution.covariances[m])
            full = sum(solution.covariances)
            return full[m * n_tx : (m + 1) * n_tx, m * n_tx : (m + 1) * n_tx]
        if solution.mode == "cbf":
            return sum(solution.covariances[m]) / sc.frame_len
        full = sum(solution.covariances) / sc.frame_len
        return full[m * n_tx : (m + 1) * n_tx, m * n_tx : (m + 1) * n_tx]

    # per-BS average power
    for m in range(j):
        power = float(np.real(np.trace(_avg_cov(m))))
        checks[f"power.{m}"] = power
        assert power <= sc.p_t * (1 + tol), f"BS {m} power {power} exceeds budget"

    # leakage toward neighbor targets
    for m in range(j):
        for n in range(j):
            if n == m:
                continue
            v = steering(sc.topology.departure_angles[m, n], n_tx)
            leak = float(np.real(v @ _avg_cov(m) @ v.conj()))
            checks[f"leakage.{m}->{n}"] = leak
            assert leak <= caps.p_leak * (1 + tol) + tol, (
                f"BS {m} leaks {leak} toward target {n} (cap {caps.p_leak})"
            )

    # Schur bounds: rebuild the FIM from the payload and the recorded clutter
    t_rec = solution.achieved["t"]
    for m in range(j):
        if solution.mode == "cbf":
            r = _avg_cov(m)
            clutter = ClutterCovariance(m, solution.clutter[m], sc.sigma_r_sq)
            fi = fim(
                "cbf", m, r, sc.topology, sc.geometry, sc.sigma_r_sq, sc.frame_len, clutter
            )
        else:
            if solution.precoding == "blp":
                r = sum(solution.covariances)
            else:
                r = sum(solution.covariances) / sc.frame_len
            fi = fim("comp", m, r, sc.topology, sc.geometry, sc.sigma_r_sq, sc.frame_len)
        t_m = t_rec[m]
        inv_diag = np.diag(np.linalg.inv(fi.matrix))
        for l in range(3):
            checks[f"crb.{m}.{l}"] = float(inv_diag[l])
            assert inv_diag[l] <= t_m[l] * (1 + 1e-4) + tol, (
                f"cell {m} CRB bound {l}: {inv_diag[l]} > recorded {t_m[l]}"
            )

    delta = sc.channels.delta
    if solution.precoding == "blp":
        _verify_blp_interference(sc, solution, caps, checks, tol)
    else:
        _verify_slp_ci(sc, solution, caps, checks, tol)
    return checks


def _verify_blp_interference(sc, solution, caps, checks, tol):
    j, k = sc.j_cells, sc.k_users
    delta = sc.channels.delta
    gamma_star = solution.achieved["gamma"]
    if solution.mode == "cbf":
        for m in range(j):
            for kk in range(k):
                h = sc.channels.vector(m, m, kk)
                intra = worst_case_interference(
                    "intra_cbf",
                    h,
                    [solution.covariances[m][l] for l in range(k) if l != kk],
                    delta,
                )
                checks[f"intra.{m}.{kk}"] = intra
                assert intra <= caps.i_intra[m] * (1 + tol) + tol
        for m in range(j):
            for n in range(j):
                if n == m:
                    continue
                for kk in range(k):
                    h = sc.channels.vector(m, n, kk)
                    ici = worst_case_interference(
                        "inter_cbf", h, solution.covariances[m], delta
                    )
                    checks[f"inter.{m}->{n}.{kk}"] = ici
                    assert ici <= caps.i_inter / (j - 1) * (1 + tol) + tol
        for m in range(j):
            for kk in range(k):
                h = sc.channels.vector(m, m, kk)
                numer = float(np.real(h @ solution.covariances[m][kk] @ h.conj()))
                lhs = numer - gamma_star * (
                    caps.i_intra[m] + caps.i_inter + sc.sigma_c_sq
                )
                checks[f"sinr.{m}.{kk}"] = lhs
                assert lhs >= -tol * max(1.0, numer)
    else:
        users = j * k
        for u in range(users):
            h = sc.channels.stacked(u // k, u % k)
            total = worst_case_interference(
                "comp",
                h,
                [solution.covariances[l] for l in range(users) if l != u],
                delta,
                j_cells=j,
            )
            checks[f"comp_int.{u}"] = total
            assert total <= caps.i_comp * (1 + tol) + tol
            numer = float(np.real(h @ solution.covariances[u] @ h.conj()))
            lhs = numer - gamma_star * (caps.i_comp + sc.sigma_c_sq)
            checks[f"sinr.{u}"] = lhs
            assert lhs >= -tol * max(1.0, numer)


def _verify_slp_ci(sc, solution, caps, checks, tol):
    j, k = sc.j_cells, sc.k_users
    delta = sc.channels.delta
    phases = solution.symbol_phases
    gamma_prime = solution.achieved["gamma_prime"]
    frame_len = sc.frame_len
    if solution.mode == "cbf":
        for m in range(j):
            for s in range(frame_len):
                x = solution.slot_vectors[m][s]
                for kk in range(k):
                    h = sc.channels.vector(m, m, kk)
                    stack = slp_stack(h, x, phases[m, kk, s])
                    r_plus, r_minus = ci_residuals(
                        "cbf",
                        stack,
                        gamma_prime,
                        caps.i_inter_sl,
                        math.sqrt(sc.sigma_c_sq),
                        delta,
                        sc.psi,
                    )
                    key = f"ci.{m}.{kk}.{s}"
                    checks[key] = max(r_plus, r_minus)
                    scale = max(1.0, abs(stack.f_hat @ stack.x_hat_prime))
                    assert max(r_plus, r_minus) <= tol * scale
                if j > 1:
                    for n in range(j):
                        if n == m:
                            continue
                        for kk in range(k):
                            h = sc.channels.vector(m, n, kk)
                            res = slp_inter_leakage_residual(
                                h, x, delta, caps.i_inter_sl, j
                            )
                            checks[f"slp_inter.{m}->{n}.{kk}.{s}"] = res
                            assert res <= tol * max(1.0, caps.i_inter_sl)
    else:
        delta_eff = math.sqrt(j) * delta
        for s in range(frame_len):
            x = solution.slot_vectors[s]
            for m in range(j):
                for kk in range(k):
                    h = sc.channels.stacked(m, kk)
                    stack = slp_stack(h, x, phases[m, kk, s])
                    r_plus, r_minus = ci_residuals(
                        "comp",
                        stack,
                        gamma_prime,
                        0.0,
                        math.sqrt(sc.sigma_c_sq),
                        delta_eff,
                        sc.psi,
                    )
                    checks[f"ci.{m}.{kk}.{s}"] = max(r_plus, r_minus)
                    scale = max(1.0, abs(stack.f_hat @ stack.x_hat_prime))
                    assert max(r_plus, r_minus) <= tol * scale
