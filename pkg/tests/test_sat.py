"""Penalty-coefficient tests: structure, conservation/adjoint conditions,
family equivalences and stability certificates."""

import numpy as np
import pytest

from sbpsat import mapping, mesh, refelem, sat

CERTIFIED = ("br1", "br2", "sipg", "ldg", "cdg", "bo", "nipg", "cng")


def variable_diffusivity(x, y):
    return 4.0 * x + 1.0, y.copy(), y**2 + 1.0


def build_setup(family="gamma", p=2, mode="perturbed", nx=4, ny=2,
                diffusivity=variable_diffusivity):
    refop = refelem.load_operator(family, p)
    m = mesh.generate_rect_mesh(nx, ny)
    nodes = mesh.curve_mesh(m, p_map=2, mode=mode)
    ops = mapping.build_all_operators(refop, m, nodes, diffusivity)
    perms = mesh.match_facet_nodes(m, nodes, refop)
    return m, ops, perms


class TestSatSpec:
    def test_rejects_unknown_variant(self):
        with pytest.raises(sat.SatVariantError):
            sat.SatSpec("foo")

    def test_rejects_nonpositive_scaling(self):
        with pytest.raises(sat.SatVariantError):
            sat.SatSpec("br2", sigma1=0.0)

    def test_classification(self):
        assert sat.SatSpec("br2").adjoint_consistent
        assert not sat.SatSpec("bo").adjoint_consistent
        assert sat.SatSpec("ldg").extended_stencil
        assert not sat.SatSpec("cdg").extended_stencil
        assert sat.SatSpec("ldgu").unmodified


class TestUpsilon:
    def test_same_facet_spd(self):
        m, ops, _ = build_setup()
        for op in ops:
            for lf in range(3):
                U = sat.compute_upsilon(op, lf, lf)
                assert np.allclose(U, U.T, atol=1e-13)
                assert np.linalg.eigvalsh(U).min() > 0

    def test_matches_dense_triple_product(self):
        # identity diffusivity, block-stacked oracle
        m, ops, _ = build_setup(diffusivity=mapping.identity_diffusivity)
        op = ops[0]
        for a in range(3):
            for b in range(3):
                Ra = np.hstack([np.diag(op.N_x[a]) @ op.refop.R[a],
                                np.diag(op.N_y[a]) @ op.refop.R[a]])
                Rb = np.hstack([np.diag(op.N_x[b]) @ op.refop.R[b],
                                np.diag(op.N_y[b]) @ op.refop.R[b]])
                Hbar = np.diag(np.concatenate([op.H, op.H]))
                oracle = Ra @ np.linalg.inv(Hbar) @ Rb.T
                assert np.allclose(sat.compute_upsilon(op, a, b), oracle,
                                   atol=1e-12)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_diage_cross_terms_vanish(self, p):
        m, ops, _ = build_setup(family="diage", p=p)
        for op in ops:
            for a in range(3):
                for b in range(3):
                    if a != b:
                        U = sat.compute_upsilon(op, a, b)
                        assert np.max(np.abs(U)) == 0.0


class TestAlphaBeta:
    def test_interior_element_equal_weights(self):
        # build a triangle with three equal-length interior facets by hand
        m = mesh.generate_rect_mesh(4, 4)
        for k in range(m.n_e):
            tags = [m.facets[fid].tag for fid in m.element_facets(k)]
            if tags == ["I", "I", "I"]:
                alpha = sat.compute_alpha(m, k)
                assert alpha.sum() == pytest.approx(1.0)

    def test_reference_values(self):
        # two interior facets (3, 4) and a Dirichlet facet (5):
        # weights 3/17, 4/17, 10/17
        class FakeFacet:
            def __init__(self, tag):
                self.tag = tag

        class FakeMesh:
            facets = {10: FakeFacet("I"), 11: FakeFacet("I"),
                      12: FakeFacet("D")}
            _lengths = {10: 3.0, 11: 4.0, 12: 5.0}

            def element_facets(self, k):
                return [10, 11, 12]

            def facet_length(self, fid):
                return self._lengths[fid]

        alpha = sat.compute_alpha(FakeMesh(), 0)
        assert np.allclose(alpha, [3 / 17, 4 / 17, 10 / 17])
        assert alpha.sum() == pytest.approx(1.0)

    def test_all_neumann_degenerate(self):
        class FakeFacet:
            tag = "N"

        class FakeMesh:
            facets = {0: FakeFacet(), 1: FakeFacet(), 2: FakeFacet()}

            def element_facets(self, k):
                return [0, 1, 2]

            def facet_length(self, fid):
                return 1.0

        with pytest.raises(sat.DegenerateWeightsError):
            sat.compute_alpha(FakeMesh(), 0)

    def test_switch_rule(self):
        g = (np.pi / 2, np.e)
        assert sat.compute_switch(np.array([1.0, 0.0]), g, True) == (1, 0)
        assert sat.compute_switch(np.array([-1.0, 0.0]), g, True) == (0, 1)
        assert sat.compute_switch(np.array([1.0, 0.0]), g, False) == (0, 0)

    def test_switch_partition_of_unity(self):
        m, ops, perms = build_setup()
        spec = sat.SatSpec("ldg")
        coeffs = sat.build_mesh_coefficients(spec, m, ops, perms)
        for fid, f in enumerate(m.facets):
            bk, bv = coeffs.beta[fid]
            if f.is_interior:
                assert bk + bv == 1
            else:
                assert (bk, bv) == (0, 0)


@pytest.fixture(scope="module")
def setup():
    return build_setup()


@pytest.mark.parametrize("variant", sat.VARIANTS)
class TestCoefficientConditions:

    def coeffs(self, variant, setup):
        m, ops, perms = setup
        return m, sat.build_mesh_coefficients(sat.SatSpec(variant), m, ops,
                                              perms)

    def test_conservation_conditions(self, variant, setup):
        m, coeffs = self.coeffs(variant, setup)
        for fid, co in coeffs.interior.items():
            B = np.diag(coeffs.contexts[fid].B)
            assert np.allclose(co.t1, co.t1.T, atol=1e-12)
            assert np.allclose(co.t3_k + co.t3_v, B, atol=1e-12)
            for key in co.t5_k:
                assert np.allclose(co.t5_k[key], -co.t6_k[key])
            for key in co.t5_v:
                assert np.allclose(co.t5_v[key], -co.t6_v[key])

    def test_adjoint_consistency_conditions(self, variant, setup):
        m, coeffs = self.coeffs(variant, setup)
        expected = variant in sat.ADJOINT_CONSISTENT
        for fid, co in coeffs.interior.items():
            B = np.diag(coeffs.contexts[fid].B)
            holds = (np.allclose(co.t2_k + co.t2_v, -B, atol=1e-12)
                     and np.allclose(co.t4_k, co.t4_v, atol=1e-12))
            assert holds == expected

    def test_symmetry(self, variant, setup):
        m, coeffs = self.coeffs(variant, setup)
        for co in coeffs.interior.values():
            for mat in (co.t1, co.t2_k, co.t2_v, co.t3_k, co.t3_v, co.t4_k):
                assert np.allclose(mat, mat.T, atol=1e-12)
        for co in coeffs.dirichlet.values():
            assert np.allclose(co.t_d, co.t_d.T, atol=1e-12)

    def test_cross_penalty_pair_symmetry(self, variant, setup):
        # T5 blocks between two facets of the same element are transposes
        m, coeffs = self.coeffs(variant, setup)
        if variant not in sat.EXTENDED_STENCIL:
            for co in coeffs.interior.values():
                assert not co.t5_k and not co.t5_v
            return
        for a_fid, co_a in coeffs.interior.items():
            for side, t5map in (("k", co_a.t5_k), ("v", co_a.t5_v)):
                f_a = m.facets[a_fid]
                elem = f_a.owner if side == "k" else f_a.neighbor
                for b_fid, t5_ab in t5map.items():
                    co_b = coeffs.interior[b_fid]
                    f_b = m.facets[b_fid]
                    t5_ba = (co_b.t5_k if f_b.owner == elem
                             else co_b.t5_v)[a_fid]
                    assert np.allclose(t5_ab, t5_ba.T, atol=1e-12)


class TestFamilyEquivalence:
    @pytest.mark.parametrize("pair,factor", [(("br1", "br2"), 2.0),
                                             (("ldg", "cdg"), 2.0)])
    def test_diage_wide_equals_compact_with_doubled_t1(self, pair, factor):
        m, ops, perms = build_setup(family="diage")
        wide = sat.build_mesh_coefficients(sat.SatSpec(pair[0]), m, ops, perms)
        compact = sat.build_mesh_coefficients(sat.SatSpec(pair[1]), m, ops,
                                              perms)
        for fid in wide.interior:
            w, c = wide.interior[fid], compact.interior[fid]
            assert np.allclose(w.t1, factor * c.t1, atol=1e-12)
            assert np.allclose(w.t2_k, c.t2_k)
            assert np.allclose(w.t3_k, c.t3_k)
            for mat in w.t5_k.values():
                assert np.max(np.abs(mat)) == 0.0
            for mat in w.t5_v.values():
                assert np.max(np.abs(mat)) == 0.0


class TestCertificates:
    @pytest.mark.parametrize("variant", CERTIFIED)
    def test_certificate_passes(self, variant):
        m, ops, perms = build_setup()
        spec = sat.SatSpec(variant)
        coeffs = sat.build_mesh_coefficients(spec, m, ops, perms)
        cert = sat.certify_stability(spec, coeffs, m)
        assert cert.applicable
        failed = [c for c in cert.checks if not c.passed]
        assert cert.passed, failed[:5]

    def test_unmodified_not_certified(self):
        m, ops, perms = build_setup()
        spec = sat.SatSpec("br1u")
        coeffs = sat.build_mesh_coefficients(spec, m, ops, perms)
        cert = sat.certify_stability(spec, coeffs, m)
        assert not cert.applicable

    def test_understabilized_wide_variant_fails(self):
        # the wide-stencil jump penalty without the alpha scaling violates
        # the jump-penalty bound
        m, ops, perms = build_setup()
        spec = sat.SatSpec("br1")
        coeffs = sat.build_mesh_coefficients(spec, m, ops, perms)
        weak = sat.SatSpec("br1", sigma1=0.25)
        weak_coeffs = sat.build_mesh_coefficients(weak, m, ops, perms)
        cert = sat.certify_stability(weak, weak_coeffs, m)
        assert not cert.passed

    def test_json_report(self):
        import json

        m, ops, perms = build_setup(nx=2, ny=1)
        spec = sat.SatSpec("br2")
        coeffs = sat.build_mesh_coefficients(spec, m, ops, perms)
        cert = sat.certify_stability(spec, coeffs, m)
        data = json.loads(cert.to_json())
        assert data["variant"] == "br2"
        assert data["passed"] is True
        assert data["zeta"] == 2.0
