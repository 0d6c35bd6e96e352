"""Per-element physical-space SBP operators on straight or curved elements.

The element geometry is a degree-``p_map`` polynomial image of the reference
triangle defined by Lagrange mapping nodes.  Metric terms are evaluated
exactly (the mapping is polynomial, so differentiating its modal expansion
is exact up to roundoff).  From the metrics, the reference operator is
transformed into physical derivative operators that retain the SBP
structure: ``H_k D_x = S_x + E_x / 2`` with ``S_x`` skew-symmetric and
``E_x`` assembled from facet extrapolations, normals and facet weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import refelem
from .mesh import MappingNodes, Mesh, reference_lagrange_nodes

DiffusivityField = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]
"""Map (x, y) arrays to the (lxx, lxy, lyy) entries of the symmetric tensor."""


class GeometryError(ValueError):
    """Raised for singular mapping bases or nonpositive Jacobians."""


@dataclass(frozen=True)
class ElementGeometry:
    """Coordinates and exact metric samples for one mapped element."""

    x: np.ndarray  # volume node coordinates (n_p,)
    y: np.ndarray
    dx_dxi: np.ndarray  # metric samples at volume nodes (n_p,)
    dx_deta: np.ndarray
    dy_dxi: np.ndarray
    dy_deta: np.ndarray
    jac: np.ndarray  # Jacobian determinant at volume nodes (n_p,)
    facet_x: tuple[np.ndarray, ...]  # per facet (n_f,)
    facet_y: tuple[np.ndarray, ...]
    facet_dx_dxi: tuple[np.ndarray, ...]
    facet_dx_deta: tuple[np.ndarray, ...]
    facet_dy_dxi: tuple[np.ndarray, ...]
    facet_dy_deta: tuple[np.ndarray, ...]
    facet_jac: tuple[np.ndarray, ...]  # facet surface Jacobians (n_f,)


def map_element(refop: refelem.ReferenceOperator, nodes: MappingNodes,
                element: int) -> ElementGeometry:
    """Evaluate the polynomial mapping and its exact metrics for one element."""
    ref_nodes = reference_lagrange_nodes(nodes.p_map)
    basis_l = refelem.evaluate_basis(ref_nodes, nodes.p_map)
    try:
        coeff = np.linalg.solve(basis_l.V, nodes.coords[element])
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise GeometryError("mapping-node basis is singular") from exc

    vol = refelem.evaluate_basis(refop.quad.volume_nodes, nodes.p_map)
    xy = vol.V @ coeff
    dxi = vol.V_xi @ coeff
    deta = vol.V_eta @ coeff
    jac = dxi[:, 0] * deta[:, 1] - deta[:, 0] * dxi[:, 1]
    if np.min(jac) <= 0.0:
        raise GeometryError(
            f"element {element}: nonpositive volume Jacobian (min {np.min(jac):.3e})"
        )

    fx, fy, fdx_dxi, fdx_deta, fdy_dxi, fdy_deta, fjac = [], [], [], [], [], [], []
    for facet in range(3):
        fb = refelem.evaluate_basis(refop.quad.facet_nodes(facet), nodes.p_map)
        fxy = fb.V @ coeff
        fdxi = fb.V_xi @ coeff
        fdeta = fb.V_eta @ coeff
        if facet == 0:
            surf = np.sqrt((fdxi[:, 0] - fdeta[:, 0]) ** 2
                           + (fdxi[:, 1] - fdeta[:, 1]) ** 2) / np.sqrt(2.0)
        elif facet == 1:
            surf = np.sqrt(fdeta[:, 0] ** 2 + fdeta[:, 1] ** 2)
        else:
            surf = np.sqrt(fdxi[:, 0] ** 2 + fdxi[:, 1] ** 2)
        if np.min(surf) <= 0.0:
            raise GeometryError(f"element {element}: degenerate facet {facet + 1}")
        fx.append(fxy[:, 0])
        fy.append(fxy[:, 1])
        fdx_dxi.append(fdxi[:, 0])
        fdx_deta.append(fdeta[:, 0])
        fdy_dxi.append(fdxi[:, 1])
        fdy_deta.append(fdeta[:, 1])
        fjac.append(surf)

    return ElementGeometry(
        x=xy[:, 0], y=xy[:, 1],
        dx_dxi=dxi[:, 0], dx_deta=deta[:, 0],
        dy_dxi=dxi[:, 1], dy_deta=deta[:, 1],
        jac=jac,
        facet_x=tuple(fx), facet_y=tuple(fy),
        facet_dx_dxi=tuple(fdx_dxi), facet_dx_deta=tuple(fdx_deta),
        facet_dy_dxi=tuple(fdy_dxi), facet_dy_deta=tuple(fdy_deta),
        facet_jac=tuple(fjac),
    )


@dataclass(frozen=True)
class PhysicalOperators:
    """Physical-space operator bundle for one element."""

    refop: refelem.ReferenceOperator
    geom: ElementGeometry
    H: np.ndarray  # diagonal norm (n_p,)
    B: tuple[np.ndarray, ...]  # per-facet diagonal weights (n_f,)
    N_x: tuple[np.ndarray, ...]  # per-facet diagonal unit normal components
    N_y: tuple[np.ndarray, ...]
    E_x: np.ndarray
    E_y: np.ndarray
    S_x: np.ndarray
    S_y: np.ndarray
    D_x: np.ndarray
    D_y: np.ndarray
    lam_xx: np.ndarray  # diffusivity samples at volume nodes (n_p,)
    lam_xy: np.ndarray
    lam_yy: np.ndarray
    D_gamma: tuple[np.ndarray, ...]  # normal-flux derivative per facet (n_f, n_p)
    D2: np.ndarray  # second-derivative operator (n_p, n_p)
    M: np.ndarray  # symmetric positive semidefinite stiffness (n_p, n_p)

    @property
    def n_p(self) -> int:
        return len(self.H)

    @property
    def n_f(self) -> int:
        return len(self.B[0])

    @property
    def lam_max(self) -> float:
        """Largest eigenvalue of the diffusivity tensor over the volume nodes."""
        mean = 0.5 * (self.lam_xx + self.lam_yy)
        rad = np.sqrt(0.25 * (self.lam_xx - self.lam_yy) ** 2 + self.lam_xy**2)
        return float(np.max(mean + rad))


def identity_diffusivity(x: np.ndarray, y: np.ndarray):
    one = np.ones_like(x)
    return one, np.zeros_like(x), one


def build_physical_operators(refop: refelem.ReferenceOperator,
                             geom: ElementGeometry,
                             diffusivity: DiffusivityField = identity_diffusivity,
                             ) -> PhysicalOperators:
    """Assemble all physical-space operators for a mapped element."""
    H = geom.jac * refop.H
    B = tuple(geom.facet_jac[f] * refop.B[f] for f in range(3))

    N_x, N_y = [], []
    for facet in range(3):
        n_xi, n_eta = refop.normals[facet]
        jf = geom.facet_jac[facet]
        nx = (geom.facet_dy_deta[facet] * n_xi - geom.facet_dy_dxi[facet] * n_eta) / jf
        ny = (-geom.facet_dx_deta[facet] * n_xi + geom.facet_dx_dxi[facet] * n_eta) / jf
        N_x.append(nx)
        N_y.append(ny)
    N_x, N_y = tuple(N_x), tuple(N_y)

    E_x = np.zeros((refop.n_p, refop.n_p))
    E_y = np.zeros_like(E_x)
    for facet in range(3):
        R = refop.R[facet]
        E_x += R.T @ ((B[facet] * N_x[facet])[:, None] * R)
        E_y += R.T @ ((B[facet] * N_y[facet])[:, None] * R)

    Q_xi, Q_eta = refop.Q_xi, refop.Q_eta
    y_eta = geom.dy_deta[:, None]
    y_xi = geom.dy_dxi[:, None]
    x_eta = geom.dx_deta[:, None]
    x_xi = geom.dx_dxi[:, None]
    S_x = 0.5 * (y_eta * Q_xi - Q_xi.T * y_eta.T) + 0.5 * (-y_xi * Q_eta + Q_eta.T * y_xi.T)
    S_y = 0.5 * (-x_eta * Q_xi + Q_xi.T * x_eta.T) + 0.5 * (x_xi * Q_eta - Q_eta.T * x_xi.T)

    D_x = (S_x + 0.5 * E_x) / H[:, None]
    D_y = (S_y + 0.5 * E_y) / H[:, None]

    lxx, lxy, lyy = diffusivity(geom.x, geom.y)
    if np.any(lxx <= 0) or np.any(lxx * lyy - lxy**2 <= 0):
        raise ValueError("diffusivity tensor is not SPD at some volume node")

    grad_x = lxx[:, None] * D_x + lxy[:, None] * D_y  # x-component of lambda grad
    grad_y = lxy[:, None] * D_x + lyy[:, None] * D_y
    D2 = D_x @ grad_x + D_y @ grad_y
    M = D_x.T @ (H[:, None] * grad_x) + D_y.T @ (H[:, None] * grad_y)

    D_gamma = []
    for facet in range(3):
        R = refop.R[facet]
        D_gamma.append(N_x[facet][:, None] * (R @ grad_x) + N_y[facet][:, None] * (R @ grad_y))

    return PhysicalOperators(
        refop=refop, geom=geom,
        H=H, B=B, N_x=N_x, N_y=N_y,
        E_x=E_x, E_y=E_y, S_x=S_x, S_y=S_y, D_x=D_x, D_y=D_y,
        lam_xx=lxx, lam_xy=lxy, lam_yy=lyy,
        D_gamma=tuple(D_gamma), D2=D2, M=M,
    )


def build_all_operators(refop: refelem.ReferenceOperator, msh: Mesh,
                        nodes: MappingNodes,
                        diffusivity: DiffusivityField = identity_diffusivity,
                        ) -> list[PhysicalOperators]:
    """Map every element of the mesh and build its physical operators."""
    return [
        build_physical_operators(refop, map_element(refop, nodes, k), diffusivity)
        for k in range(msh.n_e)
    ]
