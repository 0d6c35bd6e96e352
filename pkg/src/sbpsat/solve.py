"""Linear solvers and spectral analysis for the assembled systems.

The steady problem for a system ``du/dt = A u + b`` is ``A u = -b``.  For
norm-symmetric systems ``-H A`` is symmetric positive definite, so conjugate
gradients applies after symmetrizing by the diagonal norm; nonsymmetric
systems fall back to GMRES or a dense factorization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import GlobalSystem

DENSE_LIMIT = 2_000
SPECTRUM_LIMIT = 5_000
DENSE_TOL = 1e-12
ITERATIVE_TOL = 1e-10


class SolverError(RuntimeError):
    """Raised on breakdown or non-convergence; carries the residual history."""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = history or []


class SpectrumSizeError(ValueError):
    """Raised when a dense eigendecomposition would be too large."""


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one linear solve."""

    solution: np.ndarray
    solver: str  # "dense-LU" | "CG" | "GMRES"
    iterations: int
    residual: float  # final relative residual
    elapsed: float  # wall-clock seconds

    @property
    def converged(self) -> bool:
        return np.isfinite(self.residual)


@dataclass(frozen=True)
class SpectrumReport:
    """Eigenvalues and conditioning of a system matrix."""

    eigenvalues: np.ndarray  # complex, unsorted
    spectral_radius: float
    max_real: float
    condition_number: float  # 2-norm, via singular values

    def to_csv(self) -> str:
        lines = ["re,im"]
        for ev in self.eigenvalues:
            lines.append(f"{ev.real:.17e},{ev.imag:.17e}")
        return "\n".join(lines) + "\n"


def _relative_residual(A: sp.csr_matrix, x: np.ndarray, b: np.ndarray) -> float:
    scale = np.linalg.norm(b)
    if scale == 0.0:
        scale = 1.0
    return float(np.linalg.norm(A @ x + b) / scale)


def _solve_dense(system: GlobalSystem, tol: float) -> SolveReport:
    t0 = time.perf_counter()
    x = np.linalg.solve(system.A.toarray(), -system.b)
    elapsed = time.perf_counter() - t0
    res = _relative_residual(system.A, x, system.b)
    if res > tol:
        raise SolverError(
            f"dense solve residual {res:.3e} exceeds tolerance {tol:.3e}",
            [res])
    return SolveReport(solution=x, solver="dense-LU", iterations=0,
                       residual=res, elapsed=elapsed)


def _solve_cg(system: GlobalSystem, tol: float, maxiter: int) -> SolveReport:
    # -H A is symmetric positive definite; solve (-H A) x = H b with the
    # diagonal norm as preconditioner scaling
    H = system.H
    M = sp.diags(H)
    A_spd = (-M @ system.A).tocsr()
    A_spd = 0.5 * (A_spd + A_spd.T)  # remove round-off asymmetry
    rhs = H * system.b
    precond = sp.diags(1.0 / A_spd.diagonal())
    history: list[float] = []

    def callback(xk):
        history.append(_relative_residual(system.A, xk, system.b))

    t0 = time.perf_counter()
    x, info = spla.cg(A_spd, rhs, rtol=tol * 1e-2, atol=0.0,
                      maxiter=maxiter, M=precond, callback=callback)
    elapsed = time.perf_counter() - t0
    res = _relative_residual(system.A, x, system.b)
    if info != 0 or res > tol:
        raise SolverError(
            f"CG failed to converge (info={info}, residual={res:.3e})",
            history)
    return SolveReport(solution=x, solver="CG", iterations=len(history),
                       residual=res, elapsed=elapsed)


def _solve_gmres(system: GlobalSystem, tol: float, maxiter: int) -> SolveReport:
    # precondition by the diagonal norm so both sides see comparable scales
    H = system.H
    A_scaled = (sp.diags(H) @ system.A).tocsr()
    rhs = -H * system.b
    precond = sp.diags(1.0 / np.abs(A_scaled.diagonal()))
    history: list[float] = []

    def callback(rk):
        history.append(float(rk))

    t0 = time.perf_counter()
    x, info = spla.gmres(A_scaled, rhs, rtol=tol * 1e-2, atol=0.0,
                         restart=200, maxiter=maxiter, M=precond,
                         callback=callback, callback_type="pr_norm")
    elapsed = time.perf_counter() - t0
    res = _relative_residual(system.A, x, system.b)
    if info != 0 or res > tol:
        raise SolverError(
            f"GMRES failed to converge (info={info}, residual={res:.3e})",
            history)
    return SolveReport(solution=x, solver="GMRES", iterations=len(history),
                       residual=res, elapsed=elapsed)


def solve_linear(system: GlobalSystem, solver: str = "auto",
                 tol: float | None = None,
                 maxiter: int = 20_000) -> SolveReport:
    """Solve the steady system ``A x = -b``.

    ``solver`` is one of ``auto``, ``dense``, ``cg``, ``gmres``.  ``auto``
    uses a dense factorization for small systems, conjugate gradients for
    norm-symmetric systems and GMRES otherwise.
    """
    n = system.n
    if system.A.shape != (n, n) or len(system.b) != n:
        raise ValueError("system dimensions are inconsistent")
    if solver == "auto":
        if n < DENSE_LIMIT:
            solver = "dense"
        elif system.symmetric:
            solver = "cg"
        else:
            solver = "gmres"
    if solver == "dense":
        return _solve_dense(system, tol if tol is not None else DENSE_TOL)
    tol = tol if tol is not None else ITERATIVE_TOL
    if solver == "cg":
        return _solve_cg(system, tol, maxiter)
    if solver == "gmres":
        return _solve_gmres(system, tol, maxiter)
    raise ValueError(f"unknown solver '{solver}'")


def compute_spectrum(system: GlobalSystem, mode: str = "both") -> SpectrumReport:
    """Dense eigendecomposition and conditioning of the system matrix."""
    if mode not in ("eigen", "cond", "both"):
        raise ValueError(f"unknown spectrum mode '{mode}'")
    n = system.n
    if n > SPECTRUM_LIMIT:
        raise SpectrumSizeError(
            f"system has {n} unknowns; dense spectral analysis is limited to "
            f"{SPECTRUM_LIMIT}. Use a coarser mesh or lower degree.")
    A = system.A.toarray()
    eigenvalues = np.zeros(0, dtype=complex)
    rho = max_real = np.nan
    if mode in ("eigen", "both"):
        eigenvalues = np.linalg.eigvals(A)
        rho = float(np.max(np.abs(eigenvalues)))
        max_real = float(np.max(eigenvalues.real))
    cond = np.nan
    if mode in ("cond", "both"):
        sv = np.linalg.svd(A, compute_uv=False)
        cond = float(sv[0] / sv[-1])
    return SpectrumReport(eigenvalues=eigenvalues, spectral_radius=rho,
                          max_real=max_real, condition_number=cond)
