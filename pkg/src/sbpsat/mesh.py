"""Triangulations of the rectangular domain with facet connectivity.

The domain is the box [0, 20] x [-5, 5].  Structured meshes split each cell
of an nx-by-ny grid into two triangles along the lower-left to upper-right
diagonal.  Boundary facets on x = 20 carry the Neumann tag ``"N"``; all
other boundary facets are Dirichlet ``"D"``; interior facets are ``"I"``.

Element-local facet numbering follows the reference element: for a triangle
with vertex indices (A, B, C) mapped onto the reference vertices, facet 0 is
the edge B-C (hypotenuse image), facet 1 is C-A and facet 2 is A-B.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import refelem

#: Domain box (x_min, x_max, y_min, y_max).
DOMAIN = (0.0, 20.0, -5.0, 5.0)

#: Local facet index -> pair of local vertex slots forming that edge.
LOCAL_FACET_VERTICES = ((1, 2), (2, 0), (0, 1))


class MeshValidityError(ValueError):
    """Raised for nonconforming meshes or invalid curved geometry."""


@dataclass(frozen=True)
class Facet:
    """One mesh facet: owner/neighbor incidence and boundary tag."""

    owner: int
    owner_facet: int
    neighbor: int  # -1 on the boundary
    neighbor_facet: int  # -1 on the boundary
    tag: str  # "I", "D" or "N"

    @property
    def is_interior(self) -> bool:
        return self.tag == "I"


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with facet table and boundary tags."""

    vertices: np.ndarray  # (n_v, 2)
    triangles: np.ndarray  # (n_e, 3), counter-clockwise
    facets: tuple[Facet, ...]
    facet_of: dict[tuple[int, int], int] = field(repr=False, default_factory=dict)

    @property
    def n_e(self) -> int:
        return len(self.triangles)

    @property
    def nominal_h(self) -> float:
        return 20.0 / np.sqrt(self.n_e)

    def element_vertices(self, k: int) -> np.ndarray:
        return self.vertices[self.triangles[k]]

    def facet_endpoints(self, fid: int) -> np.ndarray:
        """Straight endpoints of a facet (owner-side vertex order)."""
        f = self.facets[fid]
        a, b = LOCAL_FACET_VERTICES[f.owner_facet]
        tri = self.triangles[f.owner]
        return self.vertices[[tri[a], tri[b]]]

    def facet_length(self, fid: int) -> float:
        ends = self.facet_endpoints(fid)
        return float(np.linalg.norm(ends[1] - ends[0]))

    def facet_normal(self, fid: int) -> np.ndarray:
        """Owner-outward unit normal of the straight facet."""
        ends = self.facet_endpoints(fid)
        t = ends[1] - ends[0]
        n = np.array([t[1], -t[0]])
        return n / np.linalg.norm(n)

    def element_facets(self, k: int) -> list[int]:
        return [self.facet_of[(k, lf)] for lf in range(3)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "vertices": self.vertices.tolist(),
                "triangles": self.triangles.tolist(),
                "facet_table": [
                    [f.owner, f.owner_facet, f.neighbor, f.neighbor_facet]
                    for f in self.facets
                ],
                "tags": [f.tag for f in self.facets],
            }
        )

    @staticmethod
    def from_json(text: str) -> "Mesh":
        raw = json.loads(text)
        facets = tuple(
            Facet(o, of, n, nf, t)
            for (o, of, n, nf), t in zip(raw["facet_table"], raw["tags"])
        )
        return _finalize_mesh(
            np.asarray(raw["vertices"], dtype=float),
            np.asarray(raw["triangles"], dtype=int),
            facets,
        )


def _finalize_mesh(vertices, triangles, facets) -> Mesh:
    lookup = {}
    for fid, f in enumerate(facets):
        lookup[(f.owner, f.owner_facet)] = fid
        if f.neighbor >= 0:
            lookup[(f.neighbor, f.neighbor_facet)] = fid
    mesh = Mesh(vertices=vertices, triangles=triangles, facets=facets,
                facet_of=lookup)
    _validate_mesh(mesh)
    return mesh


def _validate_mesh(mesh: Mesh) -> None:
    v = mesh.vertices
    for k, tri in enumerate(mesh.triangles):
        a, b, c = v[tri]
        area2 = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        if area2 <= 0:
            raise MeshValidityError(f"triangle {k} is not counter-clockwise")
    for k in range(mesh.n_e):
        for lf in range(3):
            if (k, lf) not in mesh.facet_of:
                raise MeshValidityError(f"element {k} facet {lf} missing")


def generate_rect_mesh(nx: int, ny: int) -> Mesh:
    """Structured triangulation of the domain: 2*nx*ny elements."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    x0, x1, y0, y1 = DOMAIN
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    vid = lambda i, j: j * (nx + 1) + i  # noqa: E731
    vertices = np.array([[xs[i], ys[j]] for j in range(ny + 1) for i in range(nx + 1)])

    triangles = []
    for j in range(ny):
        for i in range(nx):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            # split along the v00 -> v11 diagonal
            triangles.append([v00, v10, v11])
            triangles.append([v00, v11, v01])
    triangles = np.asarray(triangles, dtype=int)

    edge_use: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for k, tri in enumerate(triangles):
        for lf, (a, b) in enumerate(LOCAL_FACET_VERTICES):
            key = tuple(sorted((tri[a], tri[b])))
            edge_use.setdefault(key, []).append((k, lf))

    facets = []
    for key, uses in sorted(edge_use.items()):
        if len(uses) == 2:
            (k0, lf0), (k1, lf1) = uses
            facets.append(Facet(k0, lf0, k1, lf1, "I"))
        else:
            (k0, lf0), = uses
            p, q = vertices[list(key)]
            tag = "N" if abs(p[0] - x1) < 1e-12 and abs(q[0] - x1) < 1e-12 else "D"
            facets.append(Facet(k0, lf0, -1, -1, tag))
    return _finalize_mesh(vertices, triangles, tuple(facets))


# ---------------------------------------------------------------------------
# Curved geometry: per-element Lagrange mapping nodes
# ---------------------------------------------------------------------------


def reference_lagrange_nodes(p_map: int) -> np.ndarray:
    """Reference-triangle Lagrange nodes (vertices, then edge midpoints)."""
    v = refelem.VERTICES
    if p_map == 1:
        return v.copy()
    if p_map == 2:
        mids = np.array([
            0.5 * (v[0] + v[1]),
            0.5 * (v[1] + v[2]),
            0.5 * (v[2] + v[0]),
        ])
        return np.vstack([v, mids])
    raise ValueError("mapping degree must be 1 or 2")


def perturb_coordinates(points: np.ndarray) -> np.ndarray:
    """Two-stage coordinate perturbation used to curve the mesh."""
    x = points[:, 0]
    y = points[:, 1]
    x_new = x + 1.25 * np.cos(np.pi * x / 20.0 - np.pi / 2.0) * np.cos(3.0 * np.pi * y / 10.0)
    y_new = y + 0.625 * np.sin(np.pi * x_new / 5.0 - 2.0 * np.pi) * np.cos(np.pi * y / 10.0)
    return np.column_stack([x_new, y_new])


@dataclass(frozen=True)
class MappingNodes:
    """Physical coordinates of the per-element Lagrange mapping nodes."""

    p_map: int
    coords: np.ndarray  # (n_e, n_s, 2)
    mode: str  # "affine" or "perturbed"

    @property
    def n_s(self) -> int:
        return self.coords.shape[1]


def _affine_images(mesh: Mesh, ref_nodes: np.ndarray) -> np.ndarray:
    """Affine images of reference nodes for every element (n_e, n_s, 2)."""
    xi = ref_nodes[:, 0]
    eta = ref_nodes[:, 1]
    bary = np.column_stack([-(xi + eta) / 2.0, (1.0 + xi) / 2.0, (1.0 + eta) / 2.0])
    out = np.empty((mesh.n_e, len(ref_nodes), 2))
    for k in range(mesh.n_e):
        out[k] = bary @ mesh.element_vertices(k)
    return out


def curve_mesh(mesh: Mesh, p_map: int, mode: str = "affine") -> MappingNodes:
    """Build per-element mapping nodes, optionally curving the mesh."""
    if mode not in ("affine", "perturbed"):
        raise ValueError(f"unknown curving mode {mode!r}")
    ref_nodes = reference_lagrange_nodes(p_map)
    coords = _affine_images(mesh, ref_nodes)
    if mode == "perturbed":
        flat = coords.reshape(-1, 2)
        coords = perturb_coordinates(flat).reshape(coords.shape)
    nodes = MappingNodes(p_map=p_map, coords=coords, mode=mode)
    _check_jacobians(nodes)
    return nodes


def _check_jacobians(nodes: MappingNodes) -> None:
    """Sample the mapping Jacobian determinant; reject nonpositive values."""
    ref_nodes = reference_lagrange_nodes(nodes.p_map)
    basis_l = refelem.evaluate_basis(ref_nodes, nodes.p_map)
    # dense symmetric sample of the closed reference triangle
    samples = []
    n = 6
    for i in range(n + 1):
        for j in range(n + 1 - i):
            samples.append([-1.0 + 2.0 * i / n, -1.0 + 2.0 * j / n])
    samples = np.asarray(samples)
    be = refelem.evaluate_basis(samples, nodes.p_map)
    inv_vl = np.linalg.inv(basis_l.V)
    for k in range(nodes.coords.shape[0]):
        coeff = inv_vl @ nodes.coords[k]
        dx = be.V_xi @ coeff
        dy = be.V_eta @ coeff
        jac = dx[:, 0] * dy[:, 1] - dy[:, 0] * dx[:, 1]
        if np.min(jac) <= 0.0:
            raise MeshValidityError(
                f"element {k}: mapping Jacobian nonpositive (min {np.min(jac):.3e})"
            )


# ---------------------------------------------------------------------------
# Facet-node matching across interior facets
# ---------------------------------------------------------------------------


def _facet_coords(nodes: MappingNodes, element: int, local_facet: int,
                  refop: refelem.ReferenceOperator) -> np.ndarray:
    """Physical coordinates of one element's facet quadrature nodes."""
    ref_nodes = reference_lagrange_nodes(nodes.p_map)
    basis_l = refelem.evaluate_basis(ref_nodes, nodes.p_map)
    coeff = np.linalg.solve(basis_l.V, nodes.coords[element])
    fpts = refop.quad.facet_nodes(local_facet)
    return refelem.evaluate_basis(fpts, nodes.p_map).V @ coeff


def match_facet_nodes(mesh: Mesh, nodes: MappingNodes,
                      refop: refelem.ReferenceOperator,
                      tol: float = 1e-10) -> dict[int, np.ndarray]:
    """Neighbor-side permutations aligning facet quadrature node order.

    For interior facet ``fid`` the returned permutation ``P`` satisfies
    ``owner_coords[i] == neighbor_coords[P[i]]`` to within ``tol``.
    """
    perms: dict[int, np.ndarray] = {}
    for fid, f in enumerate(mesh.facets):
        if not f.is_interior:
            continue
        own = _facet_coords(nodes, f.owner, f.owner_facet, refop)
        nbr = _facet_coords(nodes, f.neighbor, f.neighbor_facet, refop)
        perm = np.empty(len(own), dtype=int)
        used = set()
        for i, pt in enumerate(own):
            d = np.linalg.norm(nbr - pt, axis=1)
            j = int(np.argmin(d))
            if d[j] > tol or j in used:
                raise MeshValidityError(
                    f"facet {fid}: quadrature nodes of adjacent elements do "
                    f"not coincide (min distance {d[j]:.3e})"
                )
            used.add(j)
            perm[i] = j
        perms[fid] = perm
    return perms
