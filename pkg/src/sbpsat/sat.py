"""Interface and boundary penalty coefficients for the coupled discretization.

Ten penalty variants are supported.  Eight follow the classical interior
penalty / flux-formulation family: ``br1``, ``br2``, ``sipg``, ``ldg``,
``cdg``, ``bo``, ``nipg`` and ``cng``.  Two more, ``br1u`` and ``ldgu``, are
the *unmodified* forms whose lifting operators act on every facet; they need
extra boundary-coupling blocks and are only certified empirically (by the
eigenvalue check) rather than algebraically.

All facet-block matrices produced here are expressed in the facet *owner's*
node ordering; neighbor-side data are permuted into that frame before any
matrix is formed, so downstream assembly never has to reason about node
orientation again.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .mapping import PhysicalOperators
from .mesh import Mesh

#: Recognized variant keys (CLI spelling).
VARIANTS = ("br1", "br1u", "br2", "sipg", "ldg", "ldgu", "cdg", "bo", "nipg",
            "cng")

#: Variants whose coefficients satisfy the adjoint-consistency relations.
ADJOINT_CONSISTENT = frozenset(
    {"br1", "br1u", "br2", "sipg", "ldg", "ldgu", "cdg"})

#: Variants with second-neighbor coupling through cross-facet penalties.
EXTENDED_STENCIL = frozenset({"br1", "br1u", "ldg", "ldgu"})

#: Variants with the extra boundary-coupling blocks (unmodified forms).
UNMODIFIED = frozenset({"br1u", "ldgu"})


class SatVariantError(ValueError):
    """Raised for unknown variant keys or invalid penalty scalings."""


@dataclass(frozen=True)
class SatSpec:
    """Penalty variant selection plus optional scalings.

    ``sigma1``, ``sigma5`` and ``sigma_d`` scale the jump penalty, the
    cross-facet penalty and the Dirichlet penalty respectively.  ``t4_scale``
    turns on the (normally zero) normal-derivative jump penalty as a multiple
    of the facet weight matrix.  ``switch_vector`` is the fixed global vector
    whose dot product with the facet normal picks the one-sided flux
    direction for ldg/cdg.  ``dirichlet_boost`` is the extra factor applied
    to the ldgu Dirichlet penalty.
    """

    variant: str
    sigma1: float = 1.0
    sigma5: float = 1.0
    sigma_d: float = 1.0
    t4_scale: float = 0.0
    switch_vector: tuple[float, float] = (math.pi / 2.0, math.e)
    dirichlet_boost: float = 1.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SatVariantError(
                f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if min(self.sigma1, self.sigma5, self.sigma_d) <= 0:
            raise SatVariantError("penalty scalings must be positive")

    @property
    def adjoint_consistent(self) -> bool:
        return self.variant in ADJOINT_CONSISTENT

    @property
    def extended_stencil(self) -> bool:
        return self.variant in EXTENDED_STENCIL

    @property
    def unmodified(self) -> bool:
        return self.variant in UNMODIFIED


# ---------------------------------------------------------------------------
# Per-facet geometric context
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossFacet:
    """Data for a second facet of the same element (cross-penalty column)."""

    fid: int  # global facet id
    upsilon: np.ndarray  # coupling block, rows in this facet's frame
    B_other: np.ndarray  # facet weights of the other facet (its owner frame)
    switch_factor: float  # 1 + beta_other_near - beta_other_far


@dataclass(frozen=True)
class InteriorContext:
    """Everything needed to build interior coefficients for one facet.

    Side ``k`` is the facet owner, side ``v`` the neighbor; all node-indexed
    arrays are in the owner's facet-node ordering.
    """

    B: np.ndarray  # (n_f,)
    alpha_k: float
    alpha_v: float
    beta_k: int
    beta_v: int
    upsilon_k: np.ndarray  # (n_f, n_f)
    upsilon_v: np.ndarray
    opnorm_k: float  # lam_max * || B^(1/2) R H^(-1/2) ||_2^2
    opnorm_v: float
    cross_k: dict[int, CrossFacet] = field(default_factory=dict)
    cross_v: dict[int, CrossFacet] = field(default_factory=dict)


@dataclass(frozen=True)
class DirichletContext:
    """Owner-side data for a Dirichlet facet."""

    B: np.ndarray
    alpha_k: float
    upsilon_k: np.ndarray
    opnorm_k: float


@dataclass(frozen=True)
class FacetCoefficients:
    """Penalty blocks for one facet; interior or Dirichlet.

    The cross penalties satisfy the conservation pairing: the companion
    block is always the negation of the stored one, exposed via ``t6_k`` and
    ``t6_v``.
    """

    t1: np.ndarray | None = None
    t2_k: np.ndarray | None = None
    t2_v: np.ndarray | None = None
    t3_k: np.ndarray | None = None
    t3_v: np.ndarray | None = None
    t4_k: np.ndarray | None = None
    t4_v: np.ndarray | None = None
    t5_k: dict[int, np.ndarray] = field(default_factory=dict)
    t5_v: dict[int, np.ndarray] = field(default_factory=dict)
    t_d: np.ndarray | None = None

    @property
    def is_interior(self) -> bool:
        return self.t1 is not None

    @property
    def t6_k(self) -> dict[int, np.ndarray]:
        return {fid: -m for fid, m in self.t5_k.items()}

    @property
    def t6_v(self) -> dict[int, np.ndarray]:
        return {fid: -m for fid, m in self.t5_v.items()}


# ---------------------------------------------------------------------------
# Elementary building blocks
# ---------------------------------------------------------------------------


def compute_upsilon(op: PhysicalOperators, a: int, b: int) -> np.ndarray:
    """Facet-pair coupling matrix for local facets ``a``, ``b`` of an element.

    Contracts the two facets' extrapolations through the diffusivity-weighted
    inverse norm; symmetric positive definite when ``a == b``.
    """
    Ra, Rb = op.refop.R[a], op.refop.R[b]
    h_inv = 1.0 / op.H
    rbnx = Rb.T * op.N_x[b]  # (n_p, n_f_b)
    rbny = Rb.T * op.N_y[b]
    col_x = op.lam_xx[:, None] * rbnx + op.lam_xy[:, None] * rbny
    col_y = op.lam_xy[:, None] * rbnx + op.lam_yy[:, None] * rbny
    return (op.N_x[a][:, None] * (Ra @ (h_inv[:, None] * col_x))
            + op.N_y[a][:, None] * (Ra @ (h_inv[:, None] * col_y)))


class DegenerateWeightsError(ValueError):
    """Raised when the facet-weight formula is undefined (all-Neumann)."""


def compute_alpha(msh: Mesh, k: int) -> np.ndarray:
    """Facet weights of element ``k``: straight-facet lengths, Dirichlet
    facets doubled in the numerator, Neumann facets excluded."""
    lengths = np.empty(3)
    tags = []
    for lf in range(3):
        fid = msh.element_facets(k)[lf]
        lengths[lf] = msh.facet_length(fid)
        tags.append(msh.facets[fid].tag)
    denom = sum(ln for ln, t in zip(lengths, tags) if t == "I")
    denom += 2.0 * sum(ln for ln, t in zip(lengths, tags) if t == "D")
    if denom <= 0.0:
        raise DegenerateWeightsError(
            f"element {k}: facet weights undefined (all facets Neumann)")
    alpha = np.zeros(3)
    for lf in range(3):
        if tags[lf] == "I":
            alpha[lf] = lengths[lf] / denom
        elif tags[lf] == "D":
            alpha[lf] = 2.0 * lengths[lf] / denom
    return alpha


def compute_switch(normal: np.ndarray, g: tuple[float, float],
                   interior: bool) -> tuple[int, int]:
    """One-sided flux switch from the owner's straight-facet normal."""
    if not interior:
        return 0, 0
    beta_k = 1 if float(np.dot(normal, g)) >= 0.0 else 0
    return beta_k, 1 - beta_k


# ---------------------------------------------------------------------------
# Coefficient formulas
# ---------------------------------------------------------------------------


def _sym(B: np.ndarray) -> np.ndarray:
    return np.diag(B)


def build_coefficients(spec: SatSpec,
                       ctx: InteriorContext | DirichletContext,
                       ) -> FacetCoefficients:
    """Penalty blocks for one facet from its geometric context."""
    if isinstance(ctx, DirichletContext):
        return FacetCoefficients(t_d=_dirichlet_penalty(spec, ctx))

    B = ctx.B
    Bd = _sym(B)
    v = spec.variant
    half = 0.5 * Bd
    delta = ctx.beta_k - ctx.beta_v

    if v in ("br1", "br2", "br1u", "sipg", "cng"):
        t2_k = t2_v = -half if v != "cng" else 0.0 * Bd
        t3_k = t3_v = half
        if v == "bo":  # pragma: no cover - handled below
            pass
    if v in ("ldg", "ldgu", "cdg"):
        t2_k = 0.5 * (ctx.beta_v - ctx.beta_k - 1) * Bd
        t2_v = 0.5 * (ctx.beta_k - ctx.beta_v - 1) * Bd
        t3_k = 0.5 * (ctx.beta_v - ctx.beta_k + 1) * Bd
        t3_v = 0.5 * (ctx.beta_k - ctx.beta_v + 1) * Bd
    if v in ("bo", "nipg"):
        t2_k = t2_v = half
        t3_k = t3_v = half

    BU_k = B[:, None] * ctx.upsilon_k * B[None, :]
    BU_v = B[:, None] * ctx.upsilon_v * B[None, :]
    if v == "br1":
        t1 = 0.5 * (BU_k / ctx.alpha_k + BU_v / ctx.alpha_v)
    elif v == "br1u":
        t1 = 0.25 * (BU_k + BU_v)
    elif v == "br2":
        t1 = 0.25 * (BU_k / ctx.alpha_k + BU_v / ctx.alpha_v)
    elif v in ("sipg", "nipg"):
        t1 = (ctx.opnorm_k / (4.0 * ctx.alpha_k)
              + ctx.opnorm_v / (4.0 * ctx.alpha_v)) * Bd
    elif v == "ldg":
        t1 = ((delta + 1) / ctx.alpha_k * BU_k
              + (1 - delta) / ctx.alpha_v * BU_v)
    elif v == "ldgu":
        t1 = 0.5 * ((1 + delta) * BU_k + (1 - delta) * BU_v)
    elif v == "cdg":
        t1 = 0.5 * ((delta + 1) / ctx.alpha_k * BU_k
                    + (1 - delta) / ctx.alpha_v * BU_v)
    elif v == "bo":
        t1 = np.zeros_like(Bd)
    else:  # cng
        t1 = (BU_k / ctx.alpha_k + BU_v / ctx.alpha_v) / 16.0
    t1 = spec.sigma1 * t1

    t4 = spec.t4_scale * Bd

    t5_k: dict[int, np.ndarray] = {}
    t5_v: dict[int, np.ndarray] = {}
    if spec.extended_stencil:
        base = 1.0 / 16.0 if v in ("br1", "ldg") else 1.0 / 4.0
        c_gamma_k = (1.0 + delta) if v in ("ldg", "ldgu") else 1.0
        c_gamma_v = (1.0 - delta) if v in ("ldg", "ldgu") else 1.0
        for fid, cf in ctx.cross_k.items():
            c_eps = cf.switch_factor if v in ("ldg", "ldgu") else 1.0
            t5_k[fid] = (spec.sigma5 * base * c_gamma_k * c_eps
                         * B[:, None] * cf.upsilon * cf.B_other[None, :])
        for fid, cf in ctx.cross_v.items():
            c_eps = cf.switch_factor if v in ("ldg", "ldgu") else 1.0
            t5_v[fid] = (spec.sigma5 * base * c_gamma_v * c_eps
                         * B[:, None] * cf.upsilon * cf.B_other[None, :])

    return FacetCoefficients(t1=t1, t2_k=t2_k, t2_v=t2_v, t3_k=t3_k,
                             t3_v=t3_v, t4_k=t4, t4_v=t4.copy(),
                             t5_k=t5_k, t5_v=t5_v)


def _dirichlet_penalty(spec: SatSpec, ctx: DirichletContext) -> np.ndarray:
    B = ctx.B
    BU = B[:, None] * ctx.upsilon_k * B[None, :]
    v = spec.variant
    if v in ("sipg", "nipg"):
        td = (ctx.opnorm_k / ctx.alpha_k) * _sym(B)
    elif v == "br1u":
        td = BU
    elif v == "ldgu":
        td = spec.dirichlet_boost * BU
    else:
        td = BU / ctx.alpha_k
    return spec.sigma_d * td


# ---------------------------------------------------------------------------
# Mesh-level construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryCoupling:
    """One extra penalty block of the unmodified variants.

    Rows enter through the extrapolation of ``row_local_facet`` in
    ``row_element`` (expressed in that element's node ordering).  Columns act
    on facet ``col_local_facet`` of ``col_element``: either on the Dirichlet
    mismatch (extrapolated solution minus boundary data) or on the interior
    jump seen from ``col_element``.
    """

    row_element: int
    row_local_facet: int
    col_element: int
    col_local_facet: int
    col_is_dirichlet: bool
    matrix: np.ndarray


@dataclass(frozen=True)
class MeshCoefficients:
    """All penalty blocks for a mesh, in facet-owner node ordering."""

    spec: SatSpec
    interior: dict[int, FacetCoefficients]
    dirichlet: dict[int, FacetCoefficients]
    extra_boundary: tuple[BoundaryCoupling, ...]
    contexts: dict[int, InteriorContext | DirichletContext]
    beta: dict[int, tuple[int, int]]  # fid -> (owner, neighbor) switches
    alpha: np.ndarray  # (n_e, 3)
    perms: dict[int, np.ndarray]  # fid -> owner-to-neighbor node permutation


def _owner_frame(mat: np.ndarray, perm: np.ndarray | None,
                 rows: bool = True, cols: bool = True) -> np.ndarray:
    """Re-index neighbor-frame rows/columns into the owner's ordering."""
    if perm is None:
        return mat
    out = mat
    if rows:
        out = out[perm, :]
    if cols:
        out = out[:, perm]
    return out


def _opnorm(op: PhysicalOperators, lf: int) -> float:
    """Penalty scale for the norm-based variants: largest squared singular
    value of the weighted extrapolation, times the diffusivity bound."""
    mat = np.sqrt(op.B[lf])[:, None] * op.refop.R[lf] / np.sqrt(op.H)[None, :]
    return op.lam_max * float(np.linalg.norm(mat, 2) ** 2)


def build_mesh_coefficients(spec: SatSpec, msh: Mesh,
                            ops: list[PhysicalOperators],
                            perms: dict[int, np.ndarray]) -> MeshCoefficients:
    """Construct every facet's penalty blocks for the whole mesh."""
    alpha = np.array([compute_alpha(msh, k) for k in range(msh.n_e)])
    beta: dict[int, tuple[int, int]] = {}
    for fid, f in enumerate(msh.facets):
        beta[fid] = compute_switch(msh.facet_normal(fid), spec.switch_vector,
                                   f.is_interior)

    def local_facet(k: int, fid: int) -> int:
        f = msh.facets[fid]
        return f.owner_facet if f.owner == k else f.neighbor_facet

    def beta_pair(fid: int, k: int) -> tuple[int, int]:
        """(near, far) switch values of facet ``fid`` seen from element k."""
        bo, bn = beta[fid]
        return (bo, bn) if msh.facets[fid].owner == k else (bn, bo)

    def cross_blocks(k: int, gamma_fid: int) -> dict[int, CrossFacet]:
        """Cross couplings from facet gamma to the other interior facets of
        element k, with rows in gamma's owner frame and columns in the other
        facet's owner frame."""
        out: dict[int, CrossFacet] = {}
        lf_g = local_facet(k, gamma_fid)
        own_g = msh.facets[gamma_fid].owner == k
        for eps_fid in msh.element_facets(k):
            if eps_fid == gamma_fid or not msh.facets[eps_fid].is_interior:
                continue
            lf_e = local_facet(k, eps_fid)
            own_e = msh.facets[eps_fid].owner == k
            ups = compute_upsilon(ops[k], lf_g, lf_e)
            ups = _owner_frame(ups, None if own_g else perms[gamma_fid],
                               rows=True, cols=False)
            ups = _owner_frame(ups, None if own_e else perms[eps_fid],
                               rows=False, cols=True)
            eo = msh.facets[eps_fid].owner
            B_eps = ops[eo].B[msh.facets[eps_fid].owner_facet]
            near, far = beta_pair(eps_fid, k)
            out[eps_fid] = CrossFacet(fid=eps_fid, upsilon=ups,
                                      B_other=B_eps,
                                      switch_factor=1.0 + near - far)
        return out

    interior: dict[int, FacetCoefficients] = {}
    dirichlet: dict[int, FacetCoefficients] = {}
    contexts: dict[int, InteriorContext | DirichletContext] = {}
    for fid, f in enumerate(msh.facets):
        k, lf_k = f.owner, f.owner_facet
        B = ops[k].B[lf_k]
        if f.tag == "N":
            continue
        if f.tag == "D":
            ctx = DirichletContext(B=B, alpha_k=alpha[k][lf_k],
                                   upsilon_k=compute_upsilon(ops[k], lf_k, lf_k),
                                   opnorm_k=_opnorm(ops[k], lf_k))
            contexts[fid] = ctx
            dirichlet[fid] = build_coefficients(spec, ctx)
            continue
        v, lf_v = f.neighbor, f.neighbor_facet
        P = perms[fid]
        ups_v = compute_upsilon(ops[v], lf_v, lf_v)[np.ix_(P, P)]
        bk, bv = beta[fid]
        ctx = InteriorContext(
            B=B,
            alpha_k=alpha[k][lf_k], alpha_v=alpha[v][lf_v],
            beta_k=bk, beta_v=bv,
            upsilon_k=compute_upsilon(ops[k], lf_k, lf_k),
            upsilon_v=ups_v,
            opnorm_k=_opnorm(ops[k], lf_k), opnorm_v=_opnorm(ops[v], lf_v),
            cross_k=cross_blocks(k, fid) if spec.extended_stencil else {},
            cross_v=cross_blocks(v, fid) if spec.extended_stencil else {},
        )
        contexts[fid] = ctx
        interior[fid] = build_coefficients(spec, ctx)

    extras: list[BoundaryCoupling] = []
    if spec.unmodified:
        extras = _unmodified_boundary_blocks(spec, msh, ops, perms, beta)

    return MeshCoefficients(spec=spec, interior=interior, dirichlet=dirichlet,
                            extra_boundary=tuple(extras), contexts=contexts,
                            beta=beta, alpha=alpha, perms=dict(perms))


def _unmodified_boundary_blocks(spec, msh, ops, perms, beta):
    """Extra Dirichlet-coupling blocks of the unmodified br1u/ldgu variants.

    Matrices are built in element k's own facet frames; only the rows placed
    on the neighboring element are translated into that neighbor's frame.
    """
    ldg_like = spec.variant == "ldgu"
    blocks: list[BoundaryCoupling] = []
    for k in range(msh.n_e):
        facets = msh.element_facets(k)
        tags = [msh.facets[fid].tag for fid in facets]
        dirichlet_lfs = [lf for lf in range(3) if tags[lf] == "D"]
        interior_lfs = [lf for lf in range(3) if tags[lf] == "I"]
        if not dirichlet_lfs:
            continue
        for lf_e in dirichlet_lfs:
            eps_fid = facets[lf_e]
            B_eps = ops[k].B[lf_e]
            # interior-facet rows (on both adjacent elements)
            for lf_g in interior_lfs:
                g_fid = facets[lf_g]
                f = msh.facets[g_fid]
                near, far = ((beta[g_fid][0], beta[g_fid][1])
                             if f.owner == k else
                             (beta[g_fid][1], beta[g_fid][0]))
                c = (1.0 + near - far) / 2.0 if ldg_like else 0.5
                ups = compute_upsilon(ops[k], lf_g, lf_e)
                C = c * ops[k].B[lf_g][:, None] * ups * B_eps[None, :]
                blocks.append(BoundaryCoupling(
                    row_element=k, row_local_facet=lf_g,
                    col_element=k, col_local_facet=lf_e,
                    col_is_dirichlet=True, matrix=C))
                # mirrored rows on the neighbor across gamma, negated
                vel = f.neighbor if f.owner == k else f.owner
                lf_gv = f.neighbor_facet if f.owner == k else f.owner_facet
                P = perms[g_fid]
                C_v = np.empty_like(C)
                if f.owner == k:
                    C_v[P, :] = C  # owner index i -> neighbor index P[i]
                else:
                    C_v = C[P, :]
                blocks.append(BoundaryCoupling(
                    row_element=vel, row_local_facet=lf_gv,
                    col_element=k, col_local_facet=lf_e,
                    col_is_dirichlet=True, matrix=-C_v))
            # Dirichlet-facet rows, including the diagonal pair
            for lf_g in dirichlet_lfs:
                ups = compute_upsilon(ops[k], lf_g, lf_e)
                C = ops[k].B[lf_g][:, None] * ups * B_eps[None, :]
                blocks.append(BoundaryCoupling(
                    row_element=k, row_local_facet=lf_g,
                    col_element=k, col_local_facet=lf_e,
                    col_is_dirichlet=True, matrix=C))
        # interior-jump columns with Dirichlet-facet rows
        for lf_g in dirichlet_lfs:
            for lf_e in interior_lfs:
                eps_fid = facets[lf_e]
                f = msh.facets[eps_fid]
                near, far = ((beta[eps_fid][0], beta[eps_fid][1])
                             if f.owner == k else
                             (beta[eps_fid][1], beta[eps_fid][0]))
                c = (1.0 + near - far) / 2.0 if ldg_like else 0.5
                ups = compute_upsilon(ops[k], lf_g, lf_e)
                C = c * ops[k].B[lf_g][:, None] * ups * ops[k].B[lf_e][None, :]
                blocks.append(BoundaryCoupling(
                    row_element=k, row_local_facet=lf_g,
                    col_element=k, col_local_facet=lf_e,
                    col_is_dirichlet=False, matrix=C))
    return blocks


# ---------------------------------------------------------------------------
# Stability certificates
# ---------------------------------------------------------------------------

#: Relative tolerance used in positive-semidefiniteness checks.
PSD_RTOL = 1e-9
#: Absolute tolerance for the structural equality checks.
EQ_ATOL = 1e-12


@dataclass(frozen=True)
class CertificateCheck:
    """A single per-facet certificate condition."""

    fid: int
    name: str
    min_eig: float
    scale: float
    passed: bool


@dataclass(frozen=True)
class StabilityCertificate:
    """Algebraic energy-stability evidence for an assembled coefficient set."""

    variant: str
    zeta: float
    applicable: bool
    checks: tuple[CertificateCheck, ...]
    notes: str = ""

    @property
    def passed(self) -> bool:
        return self.applicable and all(c.passed for c in self.checks)

    def to_json(self) -> str:
        return json.dumps({
            "variant": self.variant,
            "zeta": self.zeta,
            "applicable": bool(self.applicable),
            "passed": bool(self.passed),
            "notes": self.notes,
            "checks": [
                {"facet": c.fid, "name": c.name, "min_eig": float(c.min_eig),
                 "scale": float(c.scale), "passed": bool(c.passed)}
                for c in self.checks
            ],
        }, indent=1)


def _psd_check(fid: int, name: str, mat: np.ndarray) -> CertificateCheck:
    sym = 0.5 * (mat + mat.T)
    eig = np.linalg.eigvalsh(sym)
    scale = max(float(np.max(np.abs(eig))), 1.0)
    return CertificateCheck(fid=fid, name=name, min_eig=float(eig[0]),
                            scale=scale, passed=eig[0] >= -PSD_RTOL * scale)


def _eq_check(fid: int, name: str, residual: np.ndarray,
              scale: float) -> CertificateCheck:
    r = float(np.max(np.abs(residual)))
    return CertificateCheck(fid=fid, name=name, min_eig=-r, scale=scale,
                            passed=r <= EQ_ATOL * max(scale, 1.0))


def certify_stability(spec: SatSpec, coeffs: MeshCoefficients,
                      msh: Mesh) -> StabilityCertificate:
    """Check the per-facet algebraic stability conditions for the variant."""
    if spec.unmodified:
        return StabilityCertificate(
            variant=spec.variant, zeta=1.0, applicable=False, checks=(),
            notes=("no per-facet algebraic certificate exists for the "
                   "unmodified variants; use the eigenvalue check instead"))

    zeta = 2.0 if not spec.extended_stencil else 1.0
    checks: list[CertificateCheck] = []

    for fid, co in coeffs.interior.items():
        ctx = coeffs.contexts[fid]
        Bd = np.diag(ctx.B)
        b_scale = float(np.max(ctx.B))
        if spec.adjoint_consistent:
            checks.append(_eq_check(fid, "symmetric_stiffness_k",
                                    co.t3_k - co.t2_k - Bd, b_scale))
            checks.append(_eq_check(fid, "symmetric_stiffness_v",
                                    co.t3_v - co.t2_v - Bd, b_scale))
            penal = (co.t2_k @ ctx.upsilon_k @ co.t2_k / ctx.alpha_k
                     + co.t2_v @ ctx.upsilon_v @ co.t2_v / ctx.alpha_v)
            checks.append(_psd_check(fid, "jump_penalty_bound",
                                     co.t1 - (2.0 / zeta) * penal))
        elif spec.variant == "cng":
            checks.append(_eq_check(fid, "no_symmetric_flux", co.t2_k,
                                    b_scale))
            checks.append(_eq_check(fid, "consistency_flux",
                                    co.t3_k - 0.5 * Bd, b_scale))
            BU = (ctx.B[:, None] * ctx.upsilon_k * ctx.B[None, :] / ctx.alpha_k
                  + ctx.B[:, None] * ctx.upsilon_v * ctx.B[None, :] / ctx.alpha_v)
            checks.append(_psd_check(fid, "jump_penalty_bound",
                                     co.t1 - BU / 16.0))
        else:  # bo, nipg
            checks.append(_eq_check(fid, "flux_split_k",
                                    co.t3_k + co.t2_k - Bd, b_scale))
            checks.append(_eq_check(fid, "flux_split_v",
                                    co.t3_v + co.t2_v - Bd, b_scale))
            checks.append(_eq_check(fid, "flux_cross_kv",
                                    co.t3_v - co.t2_k, b_scale))
            checks.append(_eq_check(fid, "flux_cross_vk",
                                    co.t3_k - co.t2_v, b_scale))
            checks.append(_psd_check(fid, "jump_penalty_psd", co.t1))
        checks.append(_psd_check(fid, "derivative_penalty_psd", co.t4_k))

    if spec.extended_stencil:
        checks.extend(_extended_penalty_checks(coeffs, msh))

    for fid, co in coeffs.dirichlet.items():
        ctx = coeffs.contexts[fid]
        BU = ctx.B[:, None] * ctx.upsilon_k * ctx.B[None, :]
        checks.append(_psd_check(fid, "dirichlet_penalty_bound",
                                 co.t_d - BU / ctx.alpha_k))

    return StabilityCertificate(variant=spec.variant, zeta=zeta,
                                applicable=True, checks=tuple(checks))


def _extended_penalty_checks(coeffs: MeshCoefficients,
                             msh: Mesh) -> list[CertificateCheck]:
    """Cross-penalty bound for the wide-stencil variants: every cross block
    must be dominated by the two facets' jump penalties."""
    checks: list[CertificateCheck] = []
    for a_fid, co_a in coeffs.interior.items():
        for side in ("k", "v"):
            t5map = co_a.t5_k if side == "k" else co_a.t5_v
            for b_fid, t5_ab in t5map.items():
                co_b = coeffs.interior.get(b_fid)
                if co_b is None:
                    continue
                try:
                    inv = np.linalg.inv(co_b.t1)
                except np.linalg.LinAlgError:
                    checks.append(CertificateCheck(
                        fid=a_fid, name=f"cross_penalty_bound_{b_fid}",
                        min_eig=-np.inf, scale=1.0, passed=False))
                    continue
                mat = co_a.t1 - 64.0 * t5_ab @ inv @ t5_ab.T
                checks.append(_psd_check(
                    a_fid, f"cross_penalty_bound_{b_fid}", mat))
    return checks
