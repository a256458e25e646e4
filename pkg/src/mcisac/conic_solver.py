"""Self-contained first-order conic solver.

Solves   maximize c^T z   subject to   b - A z in K,
where K is an ordered product of zero, nonnegative, second-order, and
positive-semidefinite cones (PSD blocks in symmetric vectorization with
sqrt(2)-scaled off-diagonals).  The engine is an operator-splitting method on
the homogeneous self-dual embedding: each iteration solves one quasi-definite
linear system with a cached factorization and projects onto the cones, so it
detects infeasibility and unboundedness through certificate residuals.
Deterministic for fixed inputs and settings.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "Cone",
    "ConicProgram",
    "ConeSolution",
    "SolverSettings",
    "hermitian_embed",
    "svec",
    "unsvec",
    "svec_dim",
    "project_cone",
    "solve",
    "kkt_residuals",
    "dump_program",
]

_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# program data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cone:
    """One cone block: kind in {zero, nonneg, soc, psd}; dim is the side
    length for psd blocks and the row count otherwise."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in ("zero", "nonneg", "soc", "psd"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("cone dimension must be >= 1")
        if self.kind == "soc" and self.dim < 2:
            raise ValueError("second-order cone needs dimension >= 2")

    @property
    def rows(self) -> int:
        return svec_dim(self.dim) if self.kind == "psd" else self.dim


@dataclass(eq=False)
class ConicProgram:
    """maximize objective^T z subject to b - A z in the product cone."""

    n_vars: int
    objective: np.ndarray
    a: sp.csr_matrix
    b: np.ndarray
    cones: list[Cone]
    row_labels: list[tuple[str, int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.a = sp.csr_matrix(self.a)
        rows = sum(c.rows for c in self.cones)
        if self.a.shape != (rows, self.n_vars):
            raise ValueError(
                f"constraint matrix shape {self.a.shape} does not match "
                f"{rows} cone rows x {self.n_vars} variables"
            )
        if self.objective.size != self.n_vars or self.b.size != rows:
            raise ValueError("objective/offset sizes do not match the program")

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-6
    max_iters: int = 50_000
    scaling: bool = True
    over_relax: float = 1.5
    check_every: int = 25
    infeas_tol: float = 1e-8
    infeas_sustain_iters: int = 100
    scaling_passes: int = 10
    dense_limit: int = 2_000_000


@dataclass(eq=False)
class ConeSolution:
    status: str
    primal: np.ndarray
    dual: np.ndarray
    primal_res: float
    dual_res: float
    gap: float
    iters: int

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# symmetric vectorization and the Hermitian-to-real embedding
# ---------------------------------------------------------------------------


def svec_dim(side: int) -> int:
    return side * (side + 1) // 2


def _tril_indices(side: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = np.tril_indices(side)
    scale = np.where(rows == cols, 1.0, _SQRT2)
    return rows, cols, scale


def svec(mat: np.ndarray) -> np.ndarray:
    """Lower-triangular stacking with sqrt(2) off-diagonals (inner-product
    preserving); accepts a batch in the leading dimensions."""
    mat = np.asarray(mat, dtype=float)
    side = mat.shape[-1]
    rows, cols, scale = _tril_indices(side)
    return mat[..., rows, cols] * scale


def unsvec(vec: np.ndarray, side: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    rows, cols, scale = _tril_indices(side)
    out = np.zeros(vec.shape[:-1] + (side, side))
    vals = vec / scale
    out[..., rows, cols] = vals
    out[..., cols, rows] = vals
    return out


def hermitian_embed(h: np.ndarray) -> np.ndarray:
    """Real symmetric [[Re H, -Im H], [Im H, Re H]]; PSD iff H is PSD, with
    every eigenvalue of H appearing twice."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("input must be a square matrix")
    if np.abs(h - h.conj().T).max() > 1e-10 * max(1.0, float(np.abs(h).max())):
        raise ValueError("input must be Hermitian")
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


# ---------------------------------------------------------------------------
# cone projections
# ---------------------------------------------------------------------------


def _project_soc(v: np.ndarray) -> np.ndarray:
    """Batched Euclidean projection onto {(t, x): ||x|| <= t}; v is (..., d)."""
    t = v[..., 0]
    x = v[..., 1:]
    nx = np.linalg.norm(x, axis=-1)
    inside = nx <= t
    zero = nx <= -t
    coef = 0.5 * (1.0 + np.divide(t, nx, out=np.zeros_like(nx), where=nx > 0))
    out = np.empty_like(v)
    out[..., 0] = 0.5 * (t + nx)
    out[..., 1:] = coef[..., None] * x
    out[inside] = v[inside]
    out[zero] = 0.0
    return out


def _project_psd_batch(vec: np.ndarray, side: int) -> np.ndarray:
    """Project svec'd symmetric matrices (batch, svec_dim) onto the PSD cone."""
    mats = unsvec(vec, side)
    w, u = np.linalg.eigh(mats)
    w = np.maximum(w, 0.0)
    proj = np.einsum("...ik,...k,...jk->...ij", u, w, u)
    return svec(proj)


def project_cone(cone: Cone, v: np.ndarray) -> np.ndarray:
    """Euclidean projection of one cone block's slice."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != cone.rows:
        raise ValueError(f"expected {cone.rows} entries for {cone}, got {v.size}")
    if cone.kind == "zero":
        return np.zeros_like(v)
    if cone.kind == "nonneg":
        return np.maximum(v, 0.0)
    if cone.kind == "soc":
        return _project_soc(v[None, :])[0]
    return _project_psd_batch(v[None, :], cone.dim)[0]


class _ConePlan:
    """Precomputed index layout for projecting a full slack vector at once."""

    def __init__(self, cones: list[Cone]):
        self.cones = cones
        offset = 0
        zero_idx: list[np.ndarray] = []
        nonneg_idx: list[np.ndarray] = []
        soc_groups: dict[int, list[int]] = {}
        psd_groups: dict[int, list[int]] = {}
        self.block_slices: list[slice] = []
        for cone in cones:
            rows = cone.rows
            self.block_slices.append(slice(offset, offset + rows))
            if cone.kind == "zero":
                zero_idx.append(np.arange(offset, offset + rows))
            elif cone.kind == "nonneg":
                nonneg_idx.append(np.arange(offset, offset + rows))
            elif cone.kind == "soc":
                soc_groups.setdefault(cone.dim, []).append(offset)
            else:
                psd_groups.setdefault(cone.dim, []).append(offset)
            offset += rows
        self.n_rows = offset
        self.zero_idx = np.concatenate(zero_idx) if zero_idx else np.empty(0, dtype=int)
        self.nonneg_idx = (
            np.concatenate(nonneg_idx) if nonneg_idx else np.empty(0, dtype=int)
        )
        self.soc_groups = {
            dim: np.asarray(starts)[:, None] + np.arange(dim)[None, :]
            for dim, starts in soc_groups.items()
        }
        self.psd_groups = {
            side: np.asarray(starts)[:, None] + np.arange(svec_dim(side))[None, :]
            for side, starts in psd_groups.items()
        }

    def project(self, v: np.ndarray, dual: bool) -> np.ndarray:
        """Project onto K (dual=False) or onto the dual cone K* (dual=True);
        they differ only on zero-cone rows, whose dual is the free space."""
        out = v.copy()
        if self.zero_idx.size and not dual:
            out[self.zero_idx] = 0.0
        if self.nonneg_idx.size:
            out[self.nonneg_idx] = np.maximum(v[self.nonneg_idx], 0.0)
        for _, idx in sorted(self.soc_groups.items()):
            out[idx] = _project_soc(v[idx])
        for side, idx in sorted(self.psd_groups.items()):
            out[idx] = _project_psd_batch(v[idx], side)
        return out

    def dist(self, v: np.ndarray, dual: bool) -> float:
        return float(np.linalg.norm(v - self.project(v, dual)))


# ---------------------------------------------------------------------------
# data equilibration
# ---------------------------------------------------------------------------


def _equilibrate(
    a: sp.csr_matrix, cones: list[Cone], passes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Ruiz-style scaling; rows of each soc/psd block share one scale factor
    so scaled slacks stay inside the same cone."""
    m, n = a.shape
    row_scale = np.ones(m)
    col_scale = np.ones(n)
    block_slices = []
    offset = 0
    for cone in cones:
        block_slices.append((slice(offset, offset + cone.rows), cone.kind))
        offset += cone.rows
    cur = a.copy()
    for _ in range(passes):
        sq = cur.multiply(cur)
        row_norms = np.sqrt(np.asarray(sq.sum(axis=1)).ravel())
        for sl, kind in block_slices:
            vals = row_norms[sl]
            if kind in ("soc", "psd"):
                agg = math.sqrt(float(np.mean(vals**2))) if vals.size else 0.0
                vals = np.full(vals.shape, agg)
            row_norms[sl] = vals
        r = 1.0 / np.sqrt(np.clip(row_norms, 1e-8, 1e8))
        col_norms = np.sqrt(np.asarray(sq.sum(axis=0)).ravel())
        c = 1.0 / np.sqrt(np.clip(col_norms, 1e-8, 1e8))
        row_scale *= r
        col_scale *= c
        cur = sp.diags(r) @ cur @ sp.diags(c)
    return row_scale, col_scale


# ---------------------------------------------------------------------------
# linear-system solver for the splitting step
# ---------------------------------------------------------------------------


class _LinSys:
    """Cached solver for M = [[I, A^T], [-A, I]] via I + A^T A."""

    def __init__(self, a: sp.csr_matrix, dense_limit: int):
        m, n = a.shape
        self.dense = m * n <= dense_limit
        if self.dense:
            self.a = a.toarray()
            self.at = self.a.T.copy()
            gram = np.eye(n) + self.at @ self.a
            self.factor = cho_factor(gram, check_finite=False)
        else:
            self.a = a.tocsr()
            self.at = sp.csr_matrix(a.T)
            gram = (sp.identity(n, format="csc") + (self.at @ self.a).tocsc()).tocsc()
            self.factor = spla.splu(gram)

    def mat_vec(self, x: np.ndarray) -> np.ndarray:
        return self.a @ x

    def mat_t_vec(self, y: np.ndarray) -> np.ndarray:
        return self.at @ y

    def solve_gram(self, rhs: np.ndarray) -> np.ndarray:
        if self.dense:
            return cho_solve(self.factor, rhs, check_finite=False)
        return self.factor.solve(rhs)

    def solve_m(self, w1: np.ndarray, w2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z1 = self.solve_gram(w1 - self.mat_t_vec(w2))
        z2 = w2 + self.mat_vec(z1)
        return z1, z2


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------


def _raw_residuals(
    program: ConicProgram,
    plan: _ConePlan,
    x: np.ndarray,
    y: np.ndarray,
    s: np.ndarray | None,
) -> tuple[float, float, float]:
    a, b, c = program.a, program.b, program.objective
    if s is None:
        r = b - a @ x
        s = plan.project(r, dual=False)
    pres = np.linalg.norm(a @ x + s - b) / (1.0 + np.linalg.norm(b))
    dres = np.linalg.norm(a.T @ y - c) / (1.0 + np.linalg.norm(c))
    # y must live in the dual cone for the dual residual to mean anything.
    y_dist = plan.dist(y, dual=True) / (1.0 + np.linalg.norm(y))
    dres = max(dres, y_dist)
    obj_p = float(c @ x)
    obj_d = float(b @ y)
    gap = abs(obj_p - obj_d) / (1.0 + abs(obj_p) + abs(obj_d))
    return float(pres), float(dres), float(gap)


def kkt_residuals(
    program: ConicProgram, solution: ConeSolution
) -> tuple[float, float, float]:
    """Normalized primal/dual/gap residuals of a candidate solution, computed
    from the program data alone (slack taken as the cone projection of
    b - A x)."""
    plan = _ConePlan(program.cones)
    return _raw_residuals(program, plan, solution.primal, solution.dual, None)


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------


def solve(
    program: ConicProgram,
    settings: SolverSettings | None = None,
    warm_start: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> ConeSolution:
    """Operator-splitting solve of the program's homogeneous self-dual
    embedding.  warm_start is an optional (primal, dual, slack) triple."""
    st = settings or SolverSettings()
    m, n = program.a.shape
    c_max = program.objective  # maximize form
    c = -c_max  # internal minimize form
    b = program.b
    plan = _ConePlan(program.cones)

    if st.scaling:
        row_scale, col_scale = _equilibrate(program.a, program.cones, st.scaling_passes)
    else:
        row_scale, col_scale = np.ones(m), np.ones(n)
    a_s = sp.diags(row_scale) @ program.a @ sp.diags(col_scale)
    b_s = row_scale * b
    c_s = col_scale * c
    sigma = 1.0 / max(float(np.linalg.norm(b_s)), 1e-9)
    rho = 1.0 / max(float(np.linalg.norm(c_s)), 1e-9)
    b_s = b_s * sigma
    c_s = c_s * rho

    lin = _LinSys(sp.csr_matrix(a_s), st.dense_limit)
    h1, h2 = c_s, b_s
    g1, g2 = lin.solve_m(h1, h2)
    h_dot_g = float(h1 @ g1 + h2 @ g2)

    u_x = np.zeros(n)
    u_y = np.zeros(m)
    u_tau = 1.0
    v_s = np.zeros(m)
    v_kappa = 1.0
    if warm_start is not None:
        x0, y0, s0 = warm_start
        u_x = (np.asarray(x0, dtype=float) / col_scale) * sigma
        u_y = (np.asarray(y0, dtype=float) / row_scale) * rho
        v_s = (np.asarray(s0, dtype=float) * row_scale) * sigma
        u_tau = 1.0
        v_kappa = 0.0

    alpha = st.over_relax
    best = None
    infeas_count = 0
    unbound_count = 0
    status = "max_iters"
    iters_done = st.max_iters

    def unscale(xs, ys, ss):
        x = col_scale * xs / sigma
        y = row_scale * ys / rho
        s = (ss / row_scale) / sigma
        return x, y, s

    for it in range(1, st.max_iters + 1):
        # linear step: solve (I + Q) u~ = u + v
        w_x = u_x  # v_x is always zero
        w_y = u_y + v_s
        w_tau = u_tau + v_kappa
        p1, p2 = lin.solve_m(w_x, w_y)
        ut_tau = (w_tau + h1 @ p1 + h2 @ p2) / (1.0 + h_dot_g)
        ut_x = p1 - g1 * ut_tau
        ut_y = p2 - g2 * ut_tau

        # over-relaxation
        ut_x = alpha * ut_x + (1 - alpha) * u_x
        ut_y = alpha * ut_y + (1 - alpha) * u_y
        ut_tau = alpha * ut_tau + (1 - alpha) * u_tau

        # cone step
        new_u_x = ut_x  # free block
        new_u_y = plan.project(ut_y - v_s, dual=True)
        new_u_tau = max(ut_tau - v_kappa, 0.0)

        v_s = v_s - ut_y + new_u_y
        v_kappa = v_kappa - ut_tau + new_u_tau
        u_x, u_y, u_tau = new_u_x, new_u_y, new_u_tau

        if it % st.check_every != 0 and it != st.max_iters:
            continue

        tau = u_tau
        if tau > 1e-10:
            x, y, s = unscale(u_x / tau, u_y / tau, v_s / tau)
            pres, dres, gap = _raw_residuals(program, plan, x, y, s)
            if best is None or (pres + dres + gap) < best[0]:
                best = (pres + dres + gap, x, y, pres, dres, gap, it)
            if max(pres, dres, gap) <= st.tol:
                status = "optimal"
                iters_done = it
                best = (pres + dres + gap, x, y, pres, dres, gap, it)
                break

        # certificate checks (unscaled directions)
        x_dir = col_scale * u_x
        y_dir = row_scale * u_y
        s_dir = v_s / row_scale
        bty = float(b @ y_dir)
        ctx = float(c @ x_dir)
        if bty < 0:
            res_inf = np.linalg.norm(program.a.T @ y_dir) * np.linalg.norm(b) / (-bty)
            infeas_count = infeas_count + st.check_every if res_inf <= st.infeas_tol else 0
        else:
            infeas_count = 0
        if ctx < 0:
            res_unb = (
                np.linalg.norm(program.a @ x_dir + s_dir)
                * np.linalg.norm(c)
                / (-ctx)
            )
            unbound_count = unbound_count + st.check_every if res_unb <= st.infeas_tol else 0
        else:
            unbound_count = 0
        if infeas_count >= st.infeas_sustain_iters:
            status = "infeasible"
            iters_done = it
            break
        if unbound_count >= st.infeas_sustain_iters:
            status = "unbounded"
            iters_done = it
            break

    if status == "optimal":
        _, x, y, pres, dres, gap, it = best
        return ConeSolution("optimal", x, y, pres, dres, gap, it)
    if status in ("infeasible", "unbounded"):
        x, y, s = unscale(u_x, u_y, v_s)
        return ConeSolution(status, x, y, math.inf, math.inf, math.inf, iters_done)
    if best is not None:
        _, x, y, pres, dres, gap, _ = best
        return ConeSolution("max_iters", x, y, pres, dres, gap, st.max_iters)
    x, y, s = unscale(u_x / max(u_tau, 1e-10), u_y / max(u_tau, 1e-10), v_s / max(u_tau, 1e-10))
    pres, dres, gap = _raw_residuals(program, plan, x, y, s)
    return ConeSolution("max_iters", x, y, pres, dres, gap, st.max_iters)


# ---------------------------------------------------------------------------
# debug dump
# ---------------------------------------------------------------------------


def dump_program(program: ConicProgram) -> str:
    """Self-describing text form (dimensions, sparse triplets, cone layout)
    for cross-checking against an external solver."""
    buf = io.StringIO()
    coo = program.a.tocoo()
    print(f"vars {program.n_vars}", file=buf)
    print(f"rows {program.n_rows}", file=buf)
    print("cones " + " ".join(f"{c.kind}:{c.dim}" for c in program.cones), file=buf)
    print("objective " + " ".join(repr(v) for v in program.objective), file=buf)
    print("offset " + " ".join(repr(v) for v in program.b), file=buf)
    print(f"triplets {coo.nnz}", file=buf)
    for i, j, v in zip(coo.row, coo.col, coo.data):
        print(f"{i} {j} {v!r}", file=buf)
    return buf.getvalue()
