"""Reference-triangle quadrature data and summation-by-parts operators.

The reference element is the right triangle with vertices (-1,-1), (1,-1)
and (-1,1) (area 2).  Its three facets are numbered

* facet 1 -- the hypotenuse, parameterized as (xi, eta) = (-s, s),
* facet 2 -- the left edge xi = -1, parameterized as (-1, s),
* facet 3 -- the bottom edge eta = -1, parameterized as (s, -1),

with s in [-1, 1].  Facet quadratures are Legendre-Gauss rules with p+1
nodes (exact to degree 2p+1); the hypotenuse weights carry the sqrt(2)
arc-length factor.

Three operator families are supported, distinguished by how volume values
are extrapolated to facet quadrature nodes:

* ``omega`` -- all volume nodes interior, dense least-squares extrapolation,
* ``gamma`` -- p+1 volume nodes per facet, facet-wise interpolation,
* ``diage`` -- volume nodes collocated with facet quadrature nodes, so the
  extrapolation is a 0/1 selection and the boundary operators are diagonal.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.special import eval_jacobi, gammaln

FAMILIES = ("omega", "gamma", "diage")
MAX_DEGREE = 4

#: Reference-triangle vertices, counter-clockwise.
VERTICES = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])

#: Outward unit normals of facets 1..3.
FACET_NORMALS = np.array(
    [
        [1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)],
        [-1.0, 0.0],
        [0.0, -1.0],
    ]
)

#: Arc-length speed |d(xi,eta)/ds| of the facet parameterizations.
FACET_SPEEDS = np.array([np.sqrt(2.0), 1.0, 1.0])


def facet_point(facet: int, s: np.ndarray) -> np.ndarray:
    """Map facet parameter values ``s`` to reference coordinates.

    ``facet`` is 0-based (0 = hypotenuse, 1 = left edge, 2 = bottom edge).
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if facet == 0:
        return np.column_stack([-s, s])
    if facet == 1:
        return np.column_stack([np.full_like(s, -1.0), s])
    if facet == 2:
        return np.column_stack([s, np.full_like(s, -1.0)])
    raise ValueError(f"facet index must be 0, 1 or 2, got {facet}")


def facet_parameter(facet: int, points: np.ndarray) -> np.ndarray:
    """Inverse of :func:`facet_point` for points lying on the facet."""
    points = np.atleast_2d(points)
    if facet == 0:
        return points[:, 1]
    if facet == 1:
        return points[:, 1]
    if facet == 2:
        return points[:, 0]
    raise ValueError(f"facet index must be 0, 1 or 2, got {facet}")


def exact_volume_moment(a: int, b: int) -> float:
    """Exact integral of xi^a * eta^b over the reference triangle."""
    total = Fraction(0)
    for i in range(a + 1):
        for j in range(b + 1):
            coeff = (
                _binom(a, i)
                * _binom(b, j)
                * Fraction(2) ** (i + j)
                * Fraction(-1) ** (a - i + b - j)
            )
            # integral of x^i y^j over the unit triangle {x,y>=0, x+y<=1}
            total += coeff * Fraction(
                _factorial(i) * _factorial(j), _factorial(i + j + 2)
            )
    return float(4 * total)


def _binom(n: int, k: int) -> Fraction:
    return Fraction(_factorial(n), _factorial(k) * _factorial(n - k))


def _factorial(n: int) -> int:
    out = 1
    for m in range(2, n + 1):
        out *= m
    return out


# ---------------------------------------------------------------------------
# Orthonormal basis on the reference triangle
# ---------------------------------------------------------------------------


def _jacobi_norm(n: int, alpha: float, beta: float) -> float:
    """L2([-1,1], (1-x)^alpha (1+x)^beta) norm of the Jacobi polynomial."""
    log_gamma2 = (
        (alpha + beta + 1) * np.log(2.0)
        - np.log(2 * n + alpha + beta + 1)
        + gammaln(n + alpha + 1)
        + gammaln(n + beta + 1)
        - gammaln(n + alpha + beta + 1)
        - gammaln(n + 1)
    )
    return float(np.exp(0.5 * log_gamma2))


def jacobi_poly(x: np.ndarray, alpha: float, beta: float, n: int) -> np.ndarray:
    """Jacobi polynomial normalized to unit weighted L2 norm on [-1, 1]."""
    return eval_jacobi(n, alpha, beta, x) / _jacobi_norm(n, alpha, beta)


def grad_jacobi_poly(x: np.ndarray, alpha: float, beta: float, n: int) -> np.ndarray:
    """Derivative of :func:`jacobi_poly`."""
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.zeros_like(x)
    return np.sqrt(n * (n + alpha + beta + 1)) * jacobi_poly(
        x, alpha + 1, beta + 1, n - 1
    )


def _collapse(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed coordinates (a, b) of reference points (limit at eta=1)."""
    r = points[:, 0]
    s = points[:, 1]
    a = np.where(np.abs(1.0 - s) > 1e-14, 2.0 * (1.0 + r) / np.where(s == 1.0, 1.0, 1.0 - s) - 1.0, -1.0)
    return a, s.copy()


@dataclass(frozen=True)
class BasisEvaluation:
    """Vandermonde matrices of the orthonormal triangle basis."""

    degree: int
    V: np.ndarray
    V_xi: np.ndarray
    V_eta: np.ndarray

    @property
    def n_columns(self) -> int:
        return self.V.shape[1]


def basis_dimension(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def evaluate_basis(points: np.ndarray, degree: int) -> BasisEvaluation:
    """Evaluate the orthonormal basis and its gradient at reference points.

    Columns are ordered as m = j + (degree+1)*i + 1 - i*(i-1)/2 for the
    (i, j) mode pair, i.e. the natural double loop (i outer, j inner).
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tol = 1e-12
    inside = (
        (points[:, 0] >= -1.0 - tol)
        & (points[:, 1] >= -1.0 - tol)
        & (points[:, 0] + points[:, 1] <= tol)
    )
    if not np.all(inside):
        bad = points[~inside]
        raise ValueError(f"points outside the closed reference triangle: {bad}")

    a, b = _collapse(points)
    n_cols = basis_dimension(degree)
    V = np.zeros((len(points), n_cols))
    V_xi = np.zeros_like(V)
    V_eta = np.zeros_like(V)
    col = 0
    for i in range(degree + 1):
        fa = jacobi_poly(a, 0.0, 0.0, i)
        dfa = grad_jacobi_poly(a, 0.0, 0.0, i)
        for j in range(degree - i + 1):
            gb = jacobi_poly(b, 2.0 * i + 1.0, 0.0, j)
            dgb = grad_jacobi_poly(b, 2.0 * i + 1.0, 0.0, j)
            half = 0.5 * (1.0 - b)
            V[:, col] = np.sqrt(2.0) * fa * gb * (1.0 - b) ** i
            dr = dfa * gb
            if i > 0:
                dr = dr * half ** (i - 1)
            ds = dfa * (0.5 * (1.0 + a)) * gb
            if i > 0:
                ds = ds * half ** (i - 1)
            tmp = dgb * half**i
            if i > 0:
                tmp = tmp - 0.5 * i * gb * half ** (i - 1)
            ds = ds + fa * tmp
            scale = 2.0 ** (i + 0.5)
            V_xi[:, col] = scale * dr
            V_eta[:, col] = scale * ds
            col += 1
    return BasisEvaluation(degree=degree, V=V, V_xi=V_xi, V_eta=V_eta)


# ---------------------------------------------------------------------------
# Quadrature data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureData:
    """Validated volume/facet quadrature bundle for one family and degree."""

    family: str
    p: int
    volume_nodes: np.ndarray  # (n_p, 2)
    volume_weights: np.ndarray  # (n_p,)
    nodes_1d: np.ndarray  # (n_f,) Legendre-Gauss nodes on [-1, 1]
    weights_1d: np.ndarray  # (n_f,)
    collocation: np.ndarray | None = None  # (3, n_f) volume index per facet node

    @property
    def n_p(self) -> int:
        return len(self.volume_weights)

    @property
    def n_f(self) -> int:
        return len(self.weights_1d)

    def facet_nodes(self, facet: int) -> np.ndarray:
        return facet_point(facet, self.nodes_1d)

    def facet_weights(self, facet: int) -> np.ndarray:
        """Diagonal of the facet quadrature matrix (arc-length weights)."""
        return self.weights_1d * FACET_SPEEDS[facet]


class QuadratureError(ValueError):
    """Raised when quadrature data fails validation."""


def validate_quadrature(quad: QuadratureData, tol: float = 1e-12) -> None:
    """Check all quadrature invariants; raise :class:`QuadratureError` on failure."""
    if quad.family not in FAMILIES:
        raise QuadratureError(f"unknown family {quad.family!r}")
    if not 1 <= quad.p <= MAX_DEGREE:
        raise QuadratureError(f"degree {quad.p} outside supported range 1..{MAX_DEGREE}")
    if np.any(quad.volume_weights <= 0):
        raise QuadratureError("volume weights must be strictly positive")
    if np.any(quad.weights_1d <= 0):
        raise QuadratureError("facet weights must be strictly positive")
    if quad.n_f != quad.p + 1:
        raise QuadratureError("facet rule must have p+1 nodes")

    # Volume rule exact to degree 2p-1.
    for a in range(2 * quad.p):
        for b in range(2 * quad.p - a):
            exact = exact_volume_moment(a, b)
            approx = float(
                np.sum(
                    quad.volume_weights
                    * quad.volume_nodes[:, 0] ** a
                    * quad.volume_nodes[:, 1] ** b
                )
            )
            if abs(approx - exact) > tol * max(1.0, abs(exact)):
                raise QuadratureError(
                    f"volume rule misses moment xi^{a} eta^{b}: "
                    f"{approx} vs {exact}"
                )

    # Facet rules exact to degree 2p+1 along each facet (arc length measure).
    for facet in range(3):
        w = quad.facet_weights(facet)
        for d in range(2 * quad.p + 2):
            exact = FACET_SPEEDS[facet] * (0.0 if d % 2 else 2.0 / (d + 1))
            approx = float(np.sum(w * quad.nodes_1d**d))
            if abs(approx - exact) > tol * max(1.0, abs(exact)):
                raise QuadratureError(
                    f"facet {facet + 1} rule misses s^{d}: {approx} vs {exact}"
                )

    if quad.family == "diage":
        if quad.collocation is None:
            raise QuadratureError("diage data requires a collocation map")
        for facet in range(3):
            coords = quad.facet_nodes(facet)
            vol = quad.volume_nodes[quad.collocation[facet]]
            if np.max(np.abs(coords - vol)) > tol:
                raise QuadratureError(
                    f"facet {facet + 1} quadrature nodes not collocated "
                    "with mapped volume nodes"
                )


def _data_dir() -> Path:
    env = os.environ.get("SBPSAT_DATA_DIR")
    if env:
        return Path(env)
    return Path(__file__).parent / "data"


def load_quadrature(family: str, p: int, data_dir: str | Path | None = None) -> QuadratureData:
    """Load and validate quadrature data for ``family`` and degree ``p``."""
    directory = Path(data_dir) if data_dir is not None else _data_dir()
    path = directory / f"{family}_p{p}.json"
    if not path.exists():
        raise FileNotFoundError(f"no quadrature data file {path}")
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    colloc = None
    if raw.get("diag_e_collocation") is not None:
        colloc = np.full((3, len(raw["facet_quadrature"]["nodes_1d"])), -1, dtype=int)
        for facet, j, vol in raw["diag_e_collocation"]:
            colloc[facet - 1, j] = vol
        if np.any(colloc < 0):
            raise QuadratureError("incomplete collocation map")
    quad = QuadratureData(
        family=raw["family"],
        p=int(raw["p"]),
        volume_nodes=np.asarray(raw["volume_nodes"], dtype=float),
        volume_weights=np.asarray(raw["volume_weights"], dtype=float),
        nodes_1d=np.asarray(raw["facet_quadrature"]["nodes_1d"], dtype=float),
        weights_1d=np.asarray(raw["facet_quadrature"]["weights_1d"], dtype=float),
        collocation=colloc,
    )
    if quad.family != family or quad.p != p:
        raise QuadratureError(f"data file {path} does not match ({family}, p={p})")
    validate_quadrature(quad)
    return quad


# ---------------------------------------------------------------------------
# Extrapolation matrices
# ---------------------------------------------------------------------------


def _on_facet_volume_nodes(quad: QuadratureData, facet: int, tol: float = 1e-10) -> np.ndarray:
    """Indices of volume nodes lying on the given facet."""
    pts = quad.volume_nodes
    if facet == 0:
        mask = np.abs(pts[:, 0] + pts[:, 1]) <= tol
    elif facet == 1:
        mask = np.abs(pts[:, 0] + 1.0) <= tol
    else:
        mask = np.abs(pts[:, 1] + 1.0) <= tol
    return np.flatnonzero(mask)


def build_extrapolation(quad: QuadratureData) -> list[np.ndarray]:
    """Build the three facet extrapolation matrices for the family."""
    n_p, n_f = quad.n_p, quad.n_f
    if quad.family == "diage":
        mats = []
        for facet in range(3):
            R = np.zeros((n_f, n_p))
            for j, vol in enumerate(quad.collocation[facet]):
                R[j, vol] = 1.0
            mats.append(R)
        return mats

    if quad.family == "gamma":
        mats = []
        for facet in range(3):
            idx = _on_facet_volume_nodes(quad, facet)
            if len(idx) != quad.p + 1:
                raise QuadratureError(
                    f"facet {facet + 1} has {len(idx)} on-facet volume nodes, "
                    f"expected {quad.p + 1}"
                )
            s_vol = facet_parameter(facet, quad.volume_nodes[idx])
            s_quad = quad.nodes_1d
            R = np.zeros((n_f, n_p))
            # 1D Lagrange interpolation through the on-facet volume nodes.
            for col, i in enumerate(idx):
                num = np.ones_like(s_quad)
                den = 1.0
                for other, m in enumerate(idx):
                    if m == i:
                        continue
                    num = num * (s_quad - s_vol[other])
                    den = den * (s_vol[col] - s_vol[other])
                R[:, i] = num / den
            mats.append(R)
        return mats

    # omega: dense least-squares extrapolation through the modal basis
    vol = evaluate_basis(quad.volume_nodes, quad.p)
    V_omega = vol.V
    if np.linalg.matrix_rank(V_omega) < V_omega.shape[1]:
        raise QuadratureError("volume Vandermonde is rank deficient")
    pinv = np.linalg.pinv(V_omega)
    mats = []
    for facet in range(3):
        V_facet = evaluate_basis(quad.facet_nodes(facet), quad.p).V
        mats.append(V_facet @ pinv)
    return mats


# ---------------------------------------------------------------------------
# SBP operator construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceOperator:
    """Degree-p SBP operator bundle on the reference triangle."""

    family: str
    p: int
    quad: QuadratureData
    H: np.ndarray  # diagonal entries (n_p,)
    Q_xi: np.ndarray
    Q_eta: np.ndarray
    E_xi: np.ndarray
    E_eta: np.ndarray
    S_xi: np.ndarray
    S_eta: np.ndarray
    R: tuple[np.ndarray, np.ndarray, np.ndarray]
    B: tuple[np.ndarray, np.ndarray, np.ndarray]  # facet weight diagonals
    normals: np.ndarray  # (3, 2) reference facet unit normals

    @property
    def n_p(self) -> int:
        return len(self.H)

    @property
    def n_f(self) -> int:
        return len(self.B[0])

    @property
    def D_xi(self) -> np.ndarray:
        return self.Q_xi / self.H[:, None]

    @property
    def D_eta(self) -> np.ndarray:
        return self.Q_eta / self.H[:, None]


class OperatorConstructionError(RuntimeError):
    """Raised when quadrature data cannot support a degree-p operator."""


def _solve_skew(V: np.ndarray, W: np.ndarray, h_norm: float) -> np.ndarray:
    """Minimum-norm skew-symmetric solution of S V = W."""
    n_p = W.shape[0]
    n_cols = V.shape[1]
    pairs = [(i, j) for i in range(n_p) for j in range(i + 1, n_p)]
    A = np.zeros((n_p * n_cols, len(pairs)))
    for t, (i, j) in enumerate(pairs):
        # S_ij = x_t, S_ji = -x_t contribute to rows (i, :) and (j, :)
        A[i * n_cols : (i + 1) * n_cols, t] = V[j]
        A[j * n_cols : (j + 1) * n_cols, t] = -V[i]
    rhs = W.reshape(-1)
    x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    S = np.zeros((n_p, n_p))
    for t, (i, j) in enumerate(pairs):
        S[i, j] = x[t]
        S[j, i] = -x[t]
    residual = np.linalg.norm(S @ V - W)
    if residual > 1e-8 * h_norm:
        raise OperatorConstructionError(
            f"accuracy system residual {residual:.3e} exceeds 1e-8 * |H| = "
            f"{1e-8 * h_norm:.3e}; quadrature cannot support this degree"
        )
    return S


def build_sbp_operator(quad: QuadratureData) -> ReferenceOperator:
    """Construct the SBP operator bundle from validated quadrature data."""
    R = build_extrapolation(quad)
    B = tuple(quad.facet_weights(facet) for facet in range(3))
    n_p = quad.n_p

    E_xi = np.zeros((n_p, n_p))
    E_eta = np.zeros((n_p, n_p))
    for facet in range(3):
        BN_xi = B[facet] * FACET_NORMALS[facet, 0]
        BN_eta = B[facet] * FACET_NORMALS[facet, 1]
        E_xi += R[facet].T @ (BN_xi[:, None] * R[facet])
        E_eta += R[facet].T @ (BN_eta[:, None] * R[facet])

    basis = evaluate_basis(quad.volume_nodes, quad.p)
    H = quad.volume_weights
    h_norm = float(np.linalg.norm(H))
    S_xi = _solve_skew(basis.V, H[:, None] * basis.V_xi - 0.5 * E_xi @ basis.V, h_norm)
    S_eta = _solve_skew(basis.V, H[:, None] * basis.V_eta - 0.5 * E_eta @ basis.V, h_norm)

    return ReferenceOperator(
        family=quad.family,
        p=quad.p,
        quad=quad,
        H=H,
        Q_xi=S_xi + 0.5 * E_xi,
        Q_eta=S_eta + 0.5 * E_eta,
        E_xi=E_xi,
        E_eta=E_eta,
        S_xi=S_xi,
        S_eta=S_eta,
        R=tuple(R),
        B=B,
        normals=FACET_NORMALS.copy(),
    )


def load_operator(family: str, p: int, data_dir: str | Path | None = None) -> ReferenceOperator:
    """Convenience loader: quadrature file -> validated SBP operator."""
    return build_sbp_operator(load_quadrature(family, p, data_dir))


# ---------------------------------------------------------------------------
# Validation report
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    """Per-check pass/fail record with maximum residuals."""

    family: str
    p: int
    checks: dict[str, tuple[bool, float]] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(passed for passed, _ in self.checks.values())

    def add(self, name: str, residual: float, tol: float) -> None:
        self.checks[name] = (residual <= tol, float(residual))


def _monomial_samples(points: np.ndarray, degree: int):
    """Yield (samples, d/dxi, d/deta) for all monomials of total degree <= degree."""
    xi, eta = points[:, 0], points[:, 1]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            vals = xi**a * eta**b
            dxi = a * xi ** (a - 1) * eta**b if a else np.zeros_like(xi)
            deta = b * xi**a * eta ** (b - 1) if b else np.zeros_like(xi)
            yield (a, b), vals, dxi, deta


def validate_operator(op: ReferenceOperator) -> ValidationReport:
    """Execute all reference-operator checks and report residuals."""
    report = ValidationReport(family=op.family, p=op.p)
    quad = op.quad

    res = 0.0
    for a in range(2 * op.p):
        for b in range(2 * op.p - a):
            exact = exact_volume_moment(a, b)
            approx = float(
                np.sum(op.H * quad.volume_nodes[:, 0] ** a * quad.volume_nodes[:, 1] ** b)
            )
            res = max(res, abs(approx - exact) / max(1.0, abs(exact)))
    report.add("volume_quadrature_2p_minus_1", res, 1e-12)

    res = 0.0
    for facet in range(3):
        w = quad.facet_weights(facet)
        for d in range(2 * op.p + 2):
            exact = FACET_SPEEDS[facet] * (0.0 if d % 2 else 2.0 / (d + 1))
            approx = float(np.sum(w * quad.nodes_1d**d))
            res = max(res, abs(approx - exact) / max(1.0, abs(exact)))
    report.add("facet_quadrature_2p_plus_1", res, 1e-12)

    report.add("sbp_property_xi", float(np.max(np.abs(op.Q_xi + op.Q_xi.T - op.E_xi))), 1e-12)
    report.add("sbp_property_eta", float(np.max(np.abs(op.Q_eta + op.Q_eta.T - op.E_eta))), 1e-12)
    report.add("skew_xi", float(np.max(np.abs(op.S_xi + op.S_xi.T))), 1e-12)
    report.add("skew_eta", float(np.max(np.abs(op.S_eta + op.S_eta.T))), 1e-12)

    D_xi, D_eta = op.D_xi, op.D_eta
    res = 0.0
    for _, vals, dxi, deta in _monomial_samples(quad.volume_nodes, op.p):
        res = max(res, float(np.max(np.abs(D_xi @ vals - dxi))))
        res = max(res, float(np.max(np.abs(D_eta @ vals - deta))))
    report.add("derivative_exactness_degree_p", res, 1e-10)

    res = 0.0
    for facet in range(3):
        fpts = quad.facet_nodes(facet)
        for (a, b), vals, _, _ in _monomial_samples(quad.volume_nodes, op.p):
            exact = fpts[:, 0] ** a * fpts[:, 1] ** b
            res = max(res, float(np.max(np.abs(op.R[facet] @ vals - exact))))
    report.add("extrapolation_exactness_degree_p", res, 1e-10)

    res = 0.0
    for facet in range(3):
        ones = np.ones(op.n_p)
        res = max(res, float(np.max(np.abs(op.R[facet] @ ones - 1.0))))
    report.add("extrapolation_preserves_constants", res, 1e-12)

    E_xi = np.zeros_like(op.E_xi)
    E_eta = np.zeros_like(op.E_eta)
    for facet in range(3):
        BN_xi = op.B[facet] * op.normals[facet, 0]
        BN_eta = op.B[facet] * op.normals[facet, 1]
        E_xi += op.R[facet].T @ (BN_xi[:, None] * op.R[facet])
        E_eta += op.R[facet].T @ (BN_eta[:, None] * op.R[facet])
    report.add("surface_decomposition_xi", float(np.max(np.abs(E_xi - op.E_xi))), 1e-12)
    report.add("surface_decomposition_eta", float(np.max(np.abs(E_eta - op.E_eta))), 1e-12)

    if op.family == "diage":
        res = 0.0
        for facet in range(3):
            row_nnz = np.sum(op.R[facet] != 0.0, axis=1)
            res = max(res, float(np.max(np.abs(row_nnz - 1))))
            res = max(res, float(np.max(np.abs(op.R[facet].sum(axis=1) - 1.0))))
        report.add("selection_structure", res, 0.0)
        res = 0.0
        for a in range(3):
            for b in range(3):
                if a == b:
                    continue
                cross = op.R[a] @ np.diag(1.0 / op.H) @ op.R[b].T
                res = max(res, float(np.max(np.abs(cross))))
        report.add("distinct_facet_orthogonality", res, 0.0)

    return report
