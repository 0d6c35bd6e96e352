"""Global assembly tests: manufactured data oracles, conservation,
symmetry, adjoint relations and functional accuracy."""

import dataclasses

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from sbpsat import assembly, mapping, mesh, refelem, sat


@pytest.fixture(scope="module")
def problem():
    return assembly.manufactured_problem()


def build_setup(variant="br2", family="gamma", p=2, mode="perturbed",
                nx=4, ny=2, problem=None):
    problem = problem or assembly.manufactured_problem()
    refop = refelem.load_operator(family, p)
    m = mesh.generate_rect_mesh(nx, ny)
    nodes = mesh.curve_mesh(m, p_map=2, mode=mode)
    ops = mapping.build_all_operators(refop, m, nodes, problem.diffusivity)
    perms = mesh.match_facet_nodes(m, nodes, refop)
    coeffs = sat.build_mesh_coefficients(sat.SatSpec(variant), m, ops, perms)
    return m, ops, coeffs


def conservation_probe(system, m, ops, coeffs):
    """Row vector 1^T H A minus the boundary-only terms it must reduce to."""
    n_p = ops[0].n_p
    lhs = system.H @ system.A.toarray()
    rhs = np.zeros_like(lhs)
    for fid, f in enumerate(m.facets):
        if f.is_interior:
            continue
        k, lf = f.owner, f.owner_facet
        op = ops[k]
        cols = slice(k * n_p, (k + 1) * n_p)
        if f.tag == "D":
            rhs[cols] += op.B[lf] @ op.D_gamma[lf]
            rhs[cols] -= np.sum(coeffs.dirichlet[fid].t_d, axis=0) \
                @ op.refop.R[lf]
    # boundary-coupling blocks whose rows sit on a boundary facet are
    # legitimate boundary terms; rows on interior facets must cancel
    for blk in coeffs.extra_boundary:
        fid_row = m.element_facets(blk.row_element)[blk.row_local_facet]
        if m.facets[fid_row].is_interior:
            continue
        colsum = np.sum(blk.matrix, axis=0)
        ck, lf_c = blk.col_element, blk.col_local_facet
        R_col = ops[ck].refop.R[lf_c]
        rhs[ck * n_p:(ck + 1) * n_p] -= colsum @ R_col
        if not blk.col_is_dirichlet:
            fid_c = m.element_facets(ck)[lf_c]
            fc = m.facets[fid_c]
            g = fc.neighbor if fc.owner == ck else fc.owner
            lf_g = fc.neighbor_facet if fc.owner == ck else fc.owner_facet
            P = coeffs.perms[fid_c]
            Rg = ops[g].refop.R[lf_g]
            Rg = Rg[P, :] if fc.owner == ck else assembly._invert_rows(Rg, P)
            rhs[g * n_p:(g + 1) * n_p] += colsum @ Rg
    return lhs - rhs


class TestManufacturedProblem:
    def test_source_matches_divergence_oracle(self, problem):
        # central-difference divergence of the diffusive flux
        rng = np.random.default_rng(7)
        x = rng.uniform(1.0, 19.0, 100)
        y = rng.uniform(-4.0, 4.0, 100)
        h = 1e-5

        def flux(x, y):
            lxx, lxy, lyy = problem.diffusivity(x, y)
            a = np.pi / 8
            ux = a * np.cos(a * x) * np.sin(a * y)
            uy = a * np.sin(a * x) * np.cos(a * y)
            return lxx * ux + lxy * uy, lxy * ux + lyy * uy

        div = ((flux(x + h, y)[0] - flux(x - h, y)[0])
               + (flux(x, y + h)[1] - flux(x, y - h)[1])) / (2 * h)
        assert np.max(np.abs(problem.source(x, y) + div)) < 1e-6

    def test_adjoint_source_matches_divergence_oracle(self, problem):
        rng = np.random.default_rng(8)
        x = rng.uniform(1.0, 19.0, 100)
        y = rng.uniform(-4.0, 4.0, 100)
        h = 1e-5

        def flux(x, y):
            lxx, lxy, lyy = problem.diffusivity(x, y)
            return lxx + lxy, lxy + lyy

        div = ((flux(x + h, y)[0] - flux(x - h, y)[0])
               + (flux(x, y + h)[1] - flux(x, y - h)[1])) / (2 * h)
        assert np.max(np.abs(problem.adjoint_source(x, y) + div)) < 1e-6

    def test_neumann_data_is_normal_flux(self, problem):
        y = np.linspace(-5.0, 5.0, 11)
        x = np.full_like(y, 20.0)
        a = np.pi / 8
        ux = a * np.cos(a * x) * np.sin(a * y)
        uy = a * np.sin(a * x) * np.cos(a * y)
        lxx, lxy, _ = problem.diffusivity(x, y)
        expect = lxx * ux + lxy * uy
        got = problem.neumann_data(x, y, np.ones_like(x), np.zeros_like(x))
        assert np.allclose(got, expect, atol=1e-13)

    def test_exact_functional_against_quadrature(self, problem):
        # volume + boundary integrals of the compatible output, evaluated
        # with high-order tensor quadrature
        xg, wg = leggauss(60)
        X, WX = 10.0 * (xg + 1.0), 10.0 * wg
        Y, WY = 5.0 * xg, 5.0 * wg
        XX, YY = np.meshgrid(X, Y, indexing="ij")
        total = float(np.sum(np.outer(WX, WY)
                             * problem.adjoint_source(XX, YY)
                             * problem.exact_solution(XX, YY)))
        # Dirichlet edges: x=0 (n=(-1,0)), y=-5 (n=(0,-1)), y=+5 (n=(0,1))
        edges = [(np.zeros_like(Y), Y, -1.0, 0.0, WY),
                 (X, np.full_like(X, -5.0), 0.0, -1.0, WX),
                 (X, np.full_like(X, 5.0), 0.0, 1.0, WX)]
        for x, y, nx, ny, w in edges:
            fn = problem.neumann_data(x, y, np.full_like(x, nx),
                                      np.full_like(x, ny))
            total -= float(np.sum(w * problem.adjoint_dirichlet_data(x, y) * fn))
        # Neumann edge x=20, n=(1,0)
        zn = problem.adjoint_neumann_data(np.full_like(Y, 20.0), Y,
                                          np.ones_like(Y), np.zeros_like(Y))
        total += float(np.sum(WY * zn * problem.exact_solution(
            np.full_like(Y, 20.0), Y)))
        assert total == pytest.approx(problem.exact_functional, abs=1e-10)


class TestAssembly:
    def test_shapes_and_slices(self, problem):
        m, ops, coeffs = build_setup(problem=problem)
        system = assembly.assemble_primal(m, ops, coeffs, problem)
        n = m.n_e * ops[0].n_p
        assert system.A.shape == (n, n)
        assert system.b.shape == (n,)
        assert system.n == n
        assert system.element_slice(2) == slice(2 * ops[0].n_p,
                                                3 * ops[0].n_p)

    def test_missing_interior_coefficients_raise(self, problem):
        m, ops, coeffs = build_setup(problem=problem)
        fid = next(iter(coeffs.interior))
        broken = dataclasses.replace(
            coeffs, interior={k: v for k, v in coeffs.interior.items()
                              if k != fid})
        with pytest.raises(assembly.AssemblyError):
            assembly.assemble_primal(m, ops, broken, problem)

    def test_missing_dirichlet_coefficients_raise(self, problem):
        m, ops, coeffs = build_setup(problem=problem)
        broken = dataclasses.replace(coeffs, dirichlet={})
        with pytest.raises(assembly.AssemblyError):
            assembly.assemble_primal(m, ops, broken, problem)

    @pytest.mark.parametrize("variant", sat.VARIANTS)
    def test_interface_penalties_conserve(self, variant, problem):
        # with homogeneous data the quadrature functional of du/dt must
        # reduce to boundary terms only: every interface contribution to
        # 1^T H A cancels between the volume flux and the penalties
        m, ops, coeffs = build_setup(variant=variant, problem=problem)
        full = assembly.assemble_primal(m, ops, coeffs, problem)
        probe = conservation_probe(full, m, ops, coeffs)
        scale = np.abs(full.H[:, None] * full.A.toarray()).max()
        assert np.max(np.abs(probe)) <= 1e-10 * scale

    @pytest.mark.parametrize("variant", sorted(sat.ADJOINT_CONSISTENT))
    def test_norm_weighted_matrix_symmetric(self, variant, problem):
        m, ops, coeffs = build_setup(variant=variant, problem=problem)
        system = assembly.assemble_primal(m, ops, coeffs, problem)
        assert system.symmetric
        HA = system.H[:, None] * system.A.toarray()
        assert np.max(np.abs(HA - HA.T)) <= 1e-10 * np.max(np.abs(HA))

    @pytest.mark.parametrize("variant", ["bo", "nipg", "cng"])
    def test_inconsistent_variants_not_symmetric(self, variant, problem):
        m, ops, coeffs = build_setup(variant=variant, problem=problem)
        system = assembly.assemble_primal(m, ops, coeffs, problem)
        assert not system.symmetric
        HA = system.H[:, None] * system.A.toarray()
        assert np.max(np.abs(HA - HA.T)) > 1e-6 * np.max(np.abs(HA))

    @pytest.mark.parametrize("variant", sat.VARIANTS)
    def test_adjoint_matrix_is_norm_transpose(self, variant, problem):
        m, ops, coeffs = build_setup(variant=variant, problem=problem)
        primal = assembly.assemble_primal(m, ops, coeffs, problem)
        adj = assembly.assemble_adjoint(m, ops, coeffs, problem)
        HA = primal.H[:, None] * primal.A.toarray()
        HAa = adj.H[:, None] * adj.A.toarray()
        assert np.max(np.abs(HAa - HA.T)) <= 1e-10 * np.max(np.abs(HA))


class TestSolutions:
    @pytest.mark.parametrize("variant", sorted(sat.ADJOINT_CONSISTENT))
    def test_linear_adjoint_recovered_exactly_on_straight_mesh(
            self, variant, problem):
        m, ops, coeffs = build_setup(variant=variant, mode="affine",
                                     problem=problem)
        adj = assembly.assemble_adjoint(m, ops, coeffs, problem)
        psi = np.linalg.solve(adj.A.toarray(), -adj.b)
        exact = assembly.sample_field(problem.exact_adjoint, ops)
        err = assembly.h_norm(psi - exact, adj.H)
        assert err < 1e-8 * assembly.h_norm(exact, adj.H)

    def test_solution_convergence_third_order(self, problem):
        errs = []
        for nx, ny in ((4, 2), (8, 4), (16, 8)):
            m, ops, coeffs = build_setup(mode="affine", nx=nx, ny=ny,
                                         problem=problem)
            system = assembly.assemble_primal(m, ops, coeffs, problem)
            u = np.linalg.solve(system.A.toarray(), -system.b)
            exact = assembly.sample_field(problem.exact_solution, ops)
            errs.append(assembly.h_norm(u - exact, system.H))
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert rates[-1] == pytest.approx(3.0, abs=0.3)

    def test_functional_superconvergence_fourth_order(self, problem):
        errs = []
        for nx, ny in ((4, 2), (8, 4), (16, 8)):
            m, ops, coeffs = build_setup(mode="affine", nx=nx, ny=ny,
                                         problem=problem)
            system = assembly.assemble_primal(m, ops, coeffs, problem)
            u = np.linalg.solve(system.A.toarray(), -system.b)
            value = assembly.discrete_functional(u, m, ops, coeffs, problem)
            errs.append(abs(value - problem.exact_functional))
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert rates[-1] == pytest.approx(4.0, abs=0.4)

    @pytest.mark.parametrize("variant", ["br1u", "ldgu"])
    def test_functional_superconvergence_with_extra_boundary_blocks(
            self, variant, problem):
        # the extra Dirichlet-coupling penalties must appear in the
        # functional as well, or its accuracy degrades to the solution rate
        errs = []
        for nx, ny in ((4, 2), (8, 4), (16, 8)):
            m, ops, coeffs = build_setup(variant=variant, family="diage",
                                         mode="affine", nx=nx, ny=ny,
                                         problem=problem)
            system = assembly.assemble_primal(m, ops, coeffs, problem)
            u = np.linalg.solve(system.A.toarray(), -system.b)
            value = assembly.discrete_functional(u, m, ops, coeffs, problem)
            errs.append(abs(value - problem.exact_functional))
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert rates[-1] == pytest.approx(4.0, abs=0.4)

    def test_functional_on_exact_samples(self, problem):
        # point samples miss the solved solution's flux cancellation, so the
        # functional error only decays at the base rate here
        errs = []
        for nx, ny in ((8, 4), (16, 8), (32, 16)):
            m, ops, coeffs = build_setup(mode="affine", nx=nx, ny=ny,
                                         problem=problem)
            u = assembly.sample_field(problem.exact_solution, ops)
            value = assembly.discrete_functional(u, m, ops, coeffs, problem)
            errs.append(abs(value - problem.exact_functional))
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert rates.min() > 1.7

    def test_boundary_data_enters_rhs(self, problem):
        m, ops, coeffs = build_setup(problem=problem)
        shifted = dataclasses.replace(
            problem, dirichlet_data=lambda x, y: problem.dirichlet_data(x, y) + 1.0)
        a = assembly.assemble_primal(m, ops, coeffs, problem)
        b = assembly.assemble_primal(m, ops, coeffs, shifted)
        assert np.max(np.abs((a.A - b.A).toarray())) == 0.0
        assert np.max(np.abs(a.b - b.b)) > 1e-8

    def test_sample_field_and_h_norm(self, problem):
        m, ops, coeffs = build_setup(nx=2, ny=1, problem=problem)
        ones = assembly.sample_field(lambda x, y: np.ones_like(x), ops)
        H = np.concatenate([op.H for op in ops])
        # H-norm of the constant one is the square root of the domain area
        assert assembly.h_norm(ones, H) == pytest.approx(np.sqrt(200.0),
                                                         rel=1e-12)
