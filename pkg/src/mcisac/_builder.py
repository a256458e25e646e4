"""Assembly of conic programs over Hermitian-matrix and complex-vector variables.

Variables are flattened into a real vector: a Hermitian n x n block occupies
n*n coordinates (diagonal, then re/im pairs of the upper triangle); a complex
vector occupies 2n (real parts then imaginary parts).  Matrix constraints are
emitted through the Hermitian-to-real embedding in symmetric vectorization, so
the solver only ever sees real cones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .conic_solver import Cone, ConicProgram

_SQRT2 = math.sqrt(2.0)


@dataclass
class LinExpr:
    """Sparse affine expression sum_i coef_i z_idx_i + const."""

    idx: np.ndarray
    coef: np.ndarray
    const: float = 0.0

    @staticmethod
    def constant(value: float) -> "LinExpr":
        return LinExpr(np.empty(0, dtype=np.int64), np.empty(0), float(value))

    @staticmethod
    def term(idx: int, coef: float = 1.0, const: float = 0.0) -> "LinExpr":
        return LinExpr(np.array([idx], dtype=np.int64), np.array([float(coef)]), const)

    @staticmethod
    def combine(parts: list["LinExpr"], weights=None, const: float = 0.0) -> "LinExpr":
        weights = weights if weights is not None else [1.0] * len(parts)
        idx = [p.idx for p in parts]
        coef = [w * p.coef for w, p in zip(weights, parts)]
        total = const + sum(w * p.const for w, p in zip(weights, parts))
        if not idx:
            return LinExpr.constant(total)
        return LinExpr(np.concatenate(idx), np.concatenate(coef), total)

    def scaled(self, w: float) -> "LinExpr":
        return LinExpr(self.idx, w * self.coef, w * self.const)

    def plus_const(self, c: float) -> "LinExpr":
        return LinExpr(self.idx, self.coef, self.const + c)

    def value(self, z: np.ndarray) -> float:
        return float(z[self.idx] @ self.coef + self.const)


class HermVar:
    """Hermitian matrix variable with real coordinates.

    Layout: n diagonal entries, then (re, im) for each upper-triangle pair
    (i < j) in row-major order.
    """

    def __init__(self, name: str, n: int, offset: int):
        self.name = name
        self.n = n
        self.offset = offset
        self.size = n * n
        self.diag = offset + np.arange(n)
        pair_base = offset + n
        self.re = np.full((n, n), -1, dtype=np.int64)
        self.im = np.full((n, n), -1, dtype=np.int64)
        k = 0
        for i in range(n):
            for j in range(i + 1, n):
                self.re[i, j] = pair_base + 2 * k
                self.im[i, j] = pair_base + 2 * k + 1
                k += 1

    def entry(self, i: int, j: int) -> tuple[LinExpr, LinExpr]:
        """(Re, Im) of W[i, j] as expressions."""
        if i == j:
            return LinExpr.term(self.diag[i]), LinExpr.constant(0.0)
        if i < j:
            return LinExpr.term(self.re[i, j]), LinExpr.term(self.im[i, j])
        return LinExpr.term(self.re[j, i]), LinExpr.term(self.im[j, i], -1.0)

    def trace(self) -> LinExpr:
        return LinExpr(self.diag, np.ones(self.n))

    def trace_product(self, z: np.ndarray) -> tuple[LinExpr, LinExpr]:
        """(Re, Im) of tr(W Z) for a constant complex matrix Z."""
        z = np.asarray(z, dtype=complex)
        iu, ju = np.triu_indices(self.n, k=1)
        z_ji = z[ju, iu]
        z_ij = z[iu, ju]
        re_idx = np.concatenate([self.diag, self.re[iu, ju], self.im[iu, ju]])
        re_coef = np.concatenate(
            [np.real(np.diag(z)), np.real(z_ji + z_ij), -np.imag(z_ji - z_ij)]
        )
        im_idx = re_idx
        im_coef = np.concatenate(
            [np.imag(np.diag(z)), np.imag(z_ji + z_ij), np.real(z_ji - z_ij)]
        )
        return LinExpr(re_idx, re_coef), LinExpr(im_idx, im_coef)

    def quad_form(self, c: np.ndarray) -> LinExpr:
        """Real expression c^T W conj(c) = tr(Q W) with Q = conj(c) c^T."""
        c = np.asarray(c, dtype=complex).reshape(-1)
        re_expr, _ = self.trace_product(np.outer(c.conj(), c))
        return re_expr

    def row_product(self, c: np.ndarray) -> list[tuple[LinExpr, LinExpr]]:
        """Entries of the complex row vector c^T W as (Re, Im) expressions."""
        c = np.asarray(c, dtype=complex).reshape(-1)
        out = []
        for j in range(self.n):
            parts_re, parts_im = [], []
            for i in range(self.n):
                w_re, w_im = self.entry(i, j)
                # c_i * W_ij = (cR + j cI)(wR + j wI)
                parts_re.append(w_re.scaled(c[i].real))
                parts_re.append(w_im.scaled(-c[i].imag))
                parts_im.append(w_re.scaled(c[i].imag))
                parts_im.append(w_im.scaled(c[i].real))
            out.append((LinExpr.combine(parts_re), LinExpr.combine(parts_im)))
        return out

    def col_product(self, c: np.ndarray) -> list[tuple[LinExpr, LinExpr]]:
        """Entries of the complex column vector W c as (Re, Im) expressions."""
        c = np.asarray(c, dtype=complex).reshape(-1)
        out = []
        for i in range(self.n):
            parts_re, parts_im = [], []
            for j in range(self.n):
                w_re, w_im = self.entry(i, j)
                parts_re.append(w_re.scaled(c[j].real))
                parts_re.append(w_im.scaled(-c[j].imag))
                parts_im.append(w_re.scaled(c[j].imag))
                parts_im.append(w_im.scaled(c[j].real))
            out.append((LinExpr.combine(parts_re), LinExpr.combine(parts_im)))
        return out

    def value(self, z: np.ndarray) -> np.ndarray:
        w = np.zeros((self.n, self.n), dtype=complex)
        w[np.arange(self.n), np.arange(self.n)] = z[self.diag]
        iu, ju = np.triu_indices(self.n, k=1)
        vals = z[self.re[iu, ju]] + 1j * z[self.im[iu, ju]]
        w[iu, ju] = vals
        w[ju, iu] = vals.conj()
        return w


class CVec:
    """Complex vector variable stored as [real parts; imaginary parts]."""

    def __init__(self, name: str, n: int, offset: int):
        self.name = name
        self.n = n
        self.offset = offset
        self.size = 2 * n
        self.re = offset + np.arange(n)
        self.im = offset + n + np.arange(n)

    def entry(self, i: int) -> tuple[LinExpr, LinExpr]:
        return LinExpr.term(self.re[i]), LinExpr.term(self.im[i])

    def dot(self, c: np.ndarray) -> tuple[LinExpr, LinExpr]:
        """(Re, Im) of c^T x for a constant complex vector c."""
        c = np.asarray(c, dtype=complex).reshape(-1)
        re_expr = LinExpr(
            np.concatenate([self.re, self.im]),
            np.concatenate([c.real, -c.imag]),
        )
        im_expr = LinExpr(
            np.concatenate([self.re, self.im]),
            np.concatenate([c.imag, c.real]),
        )
        return re_expr, im_expr

    def value(self, z: np.ndarray) -> np.ndarray:
        return z[self.re] + 1j * z[self.im]


class ProgramBuilder:
    """Accumulates variables, cone blocks, and an objective, then freezes into
    a ConicProgram (maximize objective, b - A z in cones)."""

    def __init__(self):
        self.n_vars = 0
        self._rows_i: list[np.ndarray] = []
        self._rows_j: list[np.ndarray] = []
        self._rows_v: list[np.ndarray] = []
        self._b: list[float] = []
        self._row_count = 0
        self.cones: list[Cone] = []
        self.row_labels: list[tuple[str, int, int]] = []
        self._obj_idx: list[int] = []
        self._obj_coef: list[float] = []
        self.vars: dict[str, object] = {}

    # -- variables ---------------------------------------------------------

    def herm(self, name: str, n: int) -> HermVar:
        var = HermVar(name, n, self.n_vars)
        self.n_vars += var.size
        self.vars[name] = var
        return var

    def cvec(self, name: str, n: int) -> CVec:
        var = CVec(name, n, self.n_vars)
        self.n_vars += var.size
        self.vars[name] = var
        return var

    def scalar(self, name: str) -> int:
        idx = self.n_vars
        self.n_vars += 1
        self.vars[name] = idx
        return idx

    # -- rows ----------------------------------------------------------------

    def _push_row(self, expr: LinExpr):
        self._rows_i.append(np.full(expr.idx.size, self._row_count, dtype=np.int64))
        self._rows_j.append(expr.idx)
        self._rows_v.append(-expr.coef)  # b - A z = expr
        self._b.append(expr.const)
        self._row_count += 1

    def _label(self, family: str, first_row: int):
        self.row_labels.append((family, first_row, self._row_count))

    def add_zero(self, exprs: list[LinExpr], family: str = "eq"):
        start = self._row_count
        for e in exprs:
            self._push_row(e)
        self.cones.append(Cone("zero", len(exprs)))
        self._label(family, start)

    def add_nonneg(self, exprs: list[LinExpr], family: str = "ineq"):
        start = self._row_count
        for e in exprs:
            self._push_row(e)
        self.cones.append(Cone("nonneg", len(exprs)))
        self._label(family, start)

    def add_soc(self, head: LinExpr, vector: list[LinExpr], family: str = "soc"):
        start = self._row_count
        self._push_row(head)
        for e in vector:
            self._push_row(e)
        self.cones.append(Cone("soc", 1 + len(vector)))
        self._label(family, start)

    def add_psd_hermitian(self, re_entry, im_entry, side: int, family: str = "psd"):
        """PSD block for an affine Hermitian matrix given by entry callbacks.

        re_entry(i, j) must be valid for i >= j; im_entry(i, j) for any i, j
        (antisymmetric, zero diagonal).  Rows are the symmetric vectorization
        of the real embedding [[Re, -Im], [Im, Re]] of the matrix.
        """
        start = self._row_count
        n2 = 2 * side
        for i, j in zip(*np.tril_indices(n2)):
            scale = 1.0 if i == j else _SQRT2
            if i < side and j < side:
                expr = re_entry(int(i), int(j))
            elif i >= side and j >= side:
                expr = re_entry(int(i - side), int(j - side))
            else:
                expr = im_entry(int(i - side), int(j))
            self._push_row(expr.scaled(scale))
        self.cones.append(Cone("psd", n2))
        self._label(family, start)

    def add_psd_hermvar(self, var: HermVar, family: str = "psd"):
        def re_entry(i, j):
            return var.entry(i, j)[0]

        def im_entry(i, j):
            if i == j:
                return LinExpr.constant(0.0)
            return var.entry(i, j)[1]

        self.add_psd_hermitian(re_entry, im_entry, var.n, family)

    def add_psd_real(self, entry, side: int, family: str = "psd"):
        """PSD block for an affine real symmetric matrix (embedded, so the
        block has side 2*side, matching the uniform Hermitian treatment)."""

        def im_entry(i, j):
            return LinExpr.constant(0.0)

        self.add_psd_hermitian(entry, im_entry, side, family)

    # -- objective -----------------------------------------------------------

    def add_objective(self, expr: LinExpr):
        self._obj_idx.extend(expr.idx.tolist())
        self._obj_coef.extend(expr.coef.tolist())

    def set_objective_term(self, idx: int, coef: float):
        self._obj_idx.append(idx)
        self._obj_coef.append(coef)

    # -- finalize --------------------------------------------------------------

    def build(self) -> ConicProgram:
        if self._rows_i:
            i = np.concatenate(self._rows_i)
            j = np.concatenate(self._rows_j)
            v = np.concatenate(self._rows_v)
        else:
            i = j = np.empty(0, dtype=np.int64)
            v = np.empty(0)
        a = sp.coo_matrix((v, (i, j)), shape=(self._row_count, self.n_vars)).tocsr()
        a.sum_duplicates()
        c = np.zeros(self.n_vars)
        np.add.at(c, np.asarray(self._obj_idx, dtype=np.int64), self._obj_coef)
        return ConicProgram(
            n_vars=self.n_vars,
            objective=c,
            a=a,
            b=np.asarray(self._b),
            cones=list(self.cones),
            row_labels=list(self.row_labels),
        )
