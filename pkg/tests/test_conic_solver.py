import math

import numpy as np
import pytest
import scipy.sparse as sp

from mcisac.conic_solver import (
    Cone,
    ConicProgram,
    SolverSettings,
    dump_program,
    hermitian_embed,
    kkt_residuals,
    project_cone,
    solve,
    svec,
    svec_dim,
    unsvec,
)


class TestHermitianEmbed:
    def test_identity(self):
        np.testing.assert_allclose(hermitian_embed(np.eye(3)), np.eye(6))

    def test_pauli_y_eigenvalues(self):
        h = np.array([[0.0, -1j], [1j, 0.0]])
        eigs = np.sort(np.linalg.eigvalsh(hermitian_embed(h)))
        np.testing.assert_allclose(eigs, [-1.0, -1.0, 1.0, 1.0], atol=1e-12)

    def test_spectrum_doubles(self, rng):
        a = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        h = 0.5 * (a + a.conj().T)
        expected = np.sort(np.repeat(np.linalg.eigvalsh(h), 2))
        got = np.sort(np.linalg.eigvalsh(hermitian_embed(h)))
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_non_hermitian_rejected(self, rng):
        with pytest.raises(ValueError, match="Hermitian"):
            hermitian_embed(rng.standard_normal((3, 3)) + 1j * np.eye(3))


class TestSvec:
    def test_inner_product_preserved(self, rng):
        a = rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 4))
        a, b = a + a.T, b + b.T
        assert svec(a) @ svec(b) == pytest.approx(np.trace(a @ b), rel=1e-12)

    def test_round_trip(self, rng):
        a = rng.standard_normal((5, 5))
        a = a + a.T
        np.testing.assert_allclose(unsvec(svec(a), 5), a, atol=1e-14)


class TestProjections:
    def test_nonneg(self):
        out = project_cone(Cone("nonneg", 2), np.array([-1.0, 2.0]))
        np.testing.assert_allclose(out, [0.0, 2.0])

    def test_soc_inside_unchanged(self):
        v = np.array([2.0, 1.0, 1.0])
        np.testing.assert_allclose(project_cone(Cone("soc", 3), v), v)

    def test_soc_polar_maps_to_zero(self):
        v = np.array([-2.0, 1.0, 1.0])
        np.testing.assert_allclose(project_cone(Cone("soc", 3), v), 0.0)

    def test_psd_clips_negative_eigenvalue(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        m = q @ np.diag([2.0, -1.0]) @ q.T
        out = unsvec(project_cone(Cone("psd", 2), svec(m)), 2)
        w, u = np.linalg.eigh(out)
        np.testing.assert_allclose(np.sort(w), [0.0, 2.0], atol=1e-12)
        expected = q @ np.diag([2.0, 0.0]) @ q.T
        np.testing.assert_allclose(out, expected, atol=1e-12)

    @pytest.mark.parametrize(
        "cone", [Cone("zero", 4), Cone("nonneg", 4), Cone("soc", 4), Cone("psd", 3)]
    )
    def test_idempotent(self, cone, rng):
        for _ in range(20):
            v = rng.standard_normal(cone.rows)
            once = project_cone(cone, v)
            twice = project_cone(cone, once)
            np.testing.assert_allclose(twice, once, atol=1e-12)

    @pytest.mark.parametrize("cone", [Cone("nonneg", 4), Cone("soc", 4), Cone("psd", 3)])
    def test_projection_is_closest_point(self, cone, rng):
        v = rng.standard_normal(cone.rows) * 2
        proj = project_cone(cone, v)
        for _ in range(1000):
            u = rng.standard_normal(cone.rows) * 2
            member = project_cone(cone, u)
            assert np.linalg.norm(v - proj) <= np.linalg.norm(v - member) + 1e-10

    @pytest.mark.parametrize("cone", [Cone("nonneg", 5), Cone("soc", 5), Cone("psd", 3)])
    def test_moreau_decomposition(self, cone, rng):
        for _ in range(20):
            v = rng.standard_normal(cone.rows)
            proj = project_cone(cone, v)
            polar = project_cone(cone, -v)  # self-dual: K* = K
            np.testing.assert_allclose(v, proj - polar, atol=1e-10)


def lp_program():
    # maximize -x subject to x >= 1
    a = sp.csr_matrix(np.array([[-1.0]]))
    return ConicProgram(1, np.array([-1.0]), a, np.array([-1.0]), [Cone("nonneg", 1)])


def min_eig_sdp(c_sym):
    """minimize tr(CX) s.t. tr(X) = 1, X psd, variables = svec(X)."""
    side = c_sym.shape[0]
    dim = svec_dim(side)
    obj = -svec(c_sym)  # maximize -tr(CX)
    diag_idx = svec(np.eye(side))
    rows = [diag_idx, -np.eye(dim)]
    a = sp.csr_matrix(np.vstack(rows))
    b = np.concatenate([[1.0], np.zeros(dim)])
    return ConicProgram(dim, obj, a, b, [Cone("zero", 1), Cone("psd", side)])


class TestSolve:
    def test_tiny_lp(self):
        sol = solve(lp_program())
        assert sol.status == "optimal"
        assert sol.primal[0] == pytest.approx(1.0, abs=1e-5)

    def test_min_eigenvalue_sdp(self, rng):
        for _ in range(5):
            c = rng.standard_normal((4, 4))
            c = 0.5 * (c + c.T)
            prog = min_eig_sdp(c)
            sol = solve(prog)
            assert sol.status == "optimal"
            lam_min = np.linalg.eigvalsh(c).min()
            assert -(prog.objective @ sol.primal) == pytest.approx(lam_min, abs=1e-5)

    def test_soc_epigraph(self):
        g = np.array([3.0, 4.0])
        # minimize t s.t. t >= ||g||  ->  max -t
        a = sp.csr_matrix(np.array([[-1.0], [0.0], [0.0]]))
        b = np.array([0.0, 3.0, 4.0])
        prog = ConicProgram(1, np.array([-1.0]), a, b, [Cone("soc", 3)])
        sol = solve(prog)
        assert sol.status == "optimal"
        assert sol.primal[0] == pytest.approx(5.0, abs=1e-5)

    def test_deterministic(self, rng):
        c = rng.standard_normal((4, 4))
        c = 0.5 * (c + c.T)
        prog = min_eig_sdp(c)
        s1 = solve(prog)
        s2 = solve(prog)
        assert np.array_equal(s1.primal, s2.primal)
        assert np.array_equal(s1.dual, s2.dual)
        assert s1.iters == s2.iters

    def test_infeasible_detected(self):
        # x >= 1 and -x >= 1 simultaneously
        a = sp.csr_matrix(np.array([[-1.0], [1.0]]))
        b = np.array([-1.0, -1.0])
        prog = ConicProgram(1, np.array([0.0]), a, b, [Cone("nonneg", 2)])
        sol = solve(prog)
        assert sol.status == "infeasible"

    def test_unbounded_detected(self):
        # maximize x with x >= 1 only
        a = sp.csr_matrix(np.array([[-1.0]]))
        prog = ConicProgram(1, np.array([1.0]), a, np.array([-1.0]), [Cone("nonneg", 1)])
        sol = solve(prog)
        assert sol.status == "unbounded"

    def test_complex_embedding_matches_analytic(self, rng):
        # minimize tr(CX), tr(X)=1, X complex Hermitian PSD -> lambda_min(C)
        n = 2
        a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        c = 0.5 * (a + a.conj().T)
        # variables: d_i (diag), p_ij, q_ij for i<j
        nv = n * n
        # tr(CX) = sum_i d_i c_ii + sum_{i<j} 2(p Re c_ij... work via embedding
        emb_c = hermitian_embed(c)
        # X embed: [[P, -Q],[Q, P]] with P sym (diag d, off p), Q antisym (off q)
        side = 2 * n
        dim = svec_dim(side)
        rows_map = np.zeros((dim, nv))
        tr_i, tr_j, scale = np.tril_indices(side)[0], np.tril_indices(side)[1], None
        scale = np.where(tr_i == tr_j, 1.0, math.sqrt(2.0))

        def var_index(kind, i, j):
            if kind == "d":
                return i
            base = n
            # enumerate i<j pairs
            pairs = [(a_, b_) for a_ in range(n) for b_ in range(a_ + 1, n)]
            k = pairs.index((i, j))
            return base + 2 * k if kind == "p" else base + 2 * k + 1

        for r, (ii, jj) in enumerate(zip(tr_i, tr_j)):
            bi, bj = ii % n, jj % n
            in_p = (ii < n) == (jj < n)
            if in_p:  # real-part block
                if bi == bj:
                    rows_map[r, var_index("d", bi, bj)] += scale[r]
                else:
                    i0, j0 = min(bi, bj), max(bi, bj)
                    rows_map[r, var_index("p", i0, j0)] += scale[r]
            else:  # imaginary block: entry (ii>=n, jj<n) is Q[bi, bj]
                if bi == bj:
                    continue
                i0, j0 = min(bi, bj), max(bi, bj)
                sign = 1.0 if bi > bj else -1.0  # Q antisymmetric
                # embed lower triangle only touches Q block as +Q
                rows_map[r, var_index("q", i0, j0)] += sign * scale[r]

        obj = np.zeros(nv)
        for i in range(n):
            obj[var_index("d", i, i)] = -c[i, i].real
        for i in range(n):
            for j in range(i + 1, n):
                obj[var_index("p", i, j)] = -2 * c[i, j].real
                obj[var_index("q", i, j)] = +2 * c[i, j].imag
        trace_row = np.zeros(nv)
        for i in range(n):
            trace_row[var_index("d", i, i)] = 1.0
        a_mat = sp.csr_matrix(np.vstack([trace_row, -rows_map]))
        b = np.concatenate([[1.0], np.zeros(dim)])
        prog = ConicProgram(nv, obj, a_mat, b, [Cone("zero", 1), Cone("psd", side)])
        sol = solve(prog)
        assert sol.status == "optimal"
        lam = np.linalg.eigvalsh(c).min()
        assert -(obj @ sol.primal) == pytest.approx(lam, abs=1e-5)
        del emb_c


class TestKktResiduals:
    def test_optimal_solution_small_residuals(self, rng):
        c = rng.standard_normal((4, 4))
        c = 0.5 * (c + c.T)
        prog = min_eig_sdp(c)
        sol = solve(prog)
        pres, dres, gap = kkt_residuals(prog, sol)
        assert max(pres, dres, gap) <= 1e-6

    def test_zero_point_residual_is_norm_b(self):
        prog = lp_program()
        from mcisac.conic_solver import ConeSolution

        sol = ConeSolution("optimal", np.zeros(1), np.zeros(1), 0, 0, 0, 0)
        pres, dres, gap = kkt_residuals(prog, sol)
        nb = np.linalg.norm(prog.b)
        assert pres == pytest.approx(nb / (1 + nb))

    def test_perturbation_grows_residual(self, rng):
        c = rng.standard_normal((3, 3))
        c = 0.5 * (c + c.T)
        prog = min_eig_sdp(c)
        sol = solve(prog)
        base = kkt_residuals(prog, sol)[0]
        last = base
        from mcisac.conic_solver import ConeSolution

        for eps in (1e-4, 1e-3, 1e-2):
            pert = sol.primal.copy()
            pert[0] += eps  # violates the trace equality
            s2 = ConeSolution("optimal", pert, sol.dual, 0, 0, 0, 0)
            cur = kkt_residuals(prog, s2)[0]
            assert cur > last
            last = cur


class TestDump:
    def test_dump_round_trippable_text(self):
        prog = lp_program()
        text = dump_program(prog)
        assert "vars 1" in text and "nonneg:1" in text
        assert "triplets 1" in text
