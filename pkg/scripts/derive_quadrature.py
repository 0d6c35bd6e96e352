#!/usr/bin/env python3
"""Derive the reference-triangle volume quadrature rules and freeze them as JSON.

Each operator family needs a symmetric volume rule of degree 2p-1 with a
prescribed node count and node placement:

* ``omega``  -- strictly interior nodes, n_p = 3, 6, 10, 15,
* ``gamma``  -- exactly p+1 volume nodes on each facet, n_p = 3, 7, 12, 18,
* ``diage``  -- edge nodes collocated with the p+1 Legendre-Gauss facet
  quadrature nodes on each edge, n_p = 6, 10, 15, 22.

Rules are assembled from symmetry orbits of the triangle group and the orbit
parameters/weights are solved from the moment equations by damped
Gauss-Newton (scipy least_squares) with deterministic random restarts.
The resulting data files are re-validated by constructing the full SBP
operator for every family/degree before anything is written.

Run from the repository root:  python3 scripts/derive_quadrature.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from sbpsat import refelem  # noqa: E402

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "sbpsat" / "data"

V = refelem.VERTICES  # (3, 2)


def bary_to_xy(bary: np.ndarray) -> np.ndarray:
    return np.atleast_2d(bary) @ V


_PERMS_3 = np.array([[0, 1, 2], [1, 2, 0], [2, 0, 1]])
_PERMS_6 = np.array([[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]])

_MOMENT_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _moment_table(degree: int):
    """Monomial exponents (a, b) with a+b <= degree and their exact integrals."""
    if degree not in _MOMENT_CACHE:
        exps = [(a, b) for a in range(degree + 1) for b in range(degree + 1 - a)]
        exact = np.array([refelem.exact_volume_moment(a, b) for a, b in exps])
        _MOMENT_CACHE[degree] = (np.array(exps), exact)
    return _MOMENT_CACHE[degree]


class Orbit:
    """A symmetry orbit contributing points(params) and one weight."""

    def __init__(self, kind: str, fixed_points: np.ndarray | None = None):
        self.kind = kind
        self.fixed_points = fixed_points
        self.n_params = {"centroid": 0, "vertex": 0, "midpoint": 0, "s21": 1,
                         "s111": 2, "edgepair": 1, "fixed": 0}[kind]

    def points(self, params: np.ndarray) -> np.ndarray:
        if self.kind == "fixed":
            return self.fixed_points
        if self.kind == "centroid":
            bary = np.array([[1 / 3, 1 / 3, 1 / 3]])
        elif self.kind == "vertex":
            bary = np.array([1.0, 0.0, 0.0])[_PERMS_3]
        elif self.kind == "midpoint":
            bary = np.array([0.5, 0.5, 0.0])[_PERMS_3]
        elif self.kind == "s21":
            a = params[0]
            bary = np.array([a, a, 1 - 2 * a])[_PERMS_3]
        elif self.kind == "s111":
            a, b = params
            bary = np.array([a, b, 1 - a - b])[_PERMS_6]
        elif self.kind == "edgepair":
            t = params[0]
            bary = np.array([t, 1 - t, 0.0])[_PERMS_6]
        return bary_to_xy(bary)

    def count(self) -> int:
        return len(self.points(np.full(self.n_params, 0.21)))


def assemble(orbits, x):
    """Split the unknown vector into per-orbit params + weights; build rule."""
    pts, wts = [], []
    i = 0
    params_list = []
    for orb in orbits:
        params = x[i : i + orb.n_params]
        i += orb.n_params
        params_list.append(params)
    for orb, params in zip(orbits, params_list):
        p = orb.points(params)
        w = x[i]
        i += 1
        pts.append(p)
        wts.append(np.full(len(p), w))
    return np.vstack(pts), np.concatenate(wts)


def moment_residuals(orbits, x, degree):
    pts, wts = assemble(orbits, x)
    exps, exact = _moment_table(degree)
    approx = (pts[:, 0][:, None] ** exps[:, 0]
              * pts[:, 1][:, None] ** exps[:, 1]).T @ wts
    return approx - exact


def solve_rule(orbits, degree, seed=0, tries=400, param_lo=0.01, param_hi=0.49,
               interior_orbits=(), report=""):
    """Find orbit parameters/weights matching all moments up to ``degree``."""
    rng = np.random.default_rng(seed)
    n_params = sum(o.n_params for o in orbits)
    n_w = len(orbits)
    best = None
    for trial in range(tries):
        x0 = np.concatenate([
            rng.uniform(param_lo, param_hi, n_params),
            rng.uniform(0.05, 0.6, n_w),
        ])
        sol = least_squares(
            lambda x: moment_residuals(orbits, x, degree),
            x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000,
        )
        r = np.max(np.abs(sol.fun))
        if r > 1e-13:
            continue
        pts, wts = assemble(orbits, sol.x)
        if np.min(wts) < 1e-4:
            continue
        # orbit-parameter validity
        i = 0
        ok = True
        for orb in orbits:
            params = sol.x[i : i + orb.n_params]
            i += orb.n_params
            if orb.kind == "s21" and not (0.003 < params[0] < 0.497):
                ok = False
            if orb.kind == "edgepair" and not (0.003 < params[0] < 0.497):
                ok = False
            if orb.kind == "s111":
                a, b = params
                if not (0.003 < a and 0.003 < b and a + b < 0.997):
                    ok = False
                if abs(a - b) < 1e-3 or abs(1 - a - 2 * b) < 1e-3 or abs(1 - b - 2 * a) < 1e-3:
                    ok = False  # degenerate into an s21 orbit
        if not ok:
            continue
        # interior-ness where demanded
        if interior_orbits:
            bad = False
            i = 0
            for k, orb in enumerate(orbits):
                params = sol.x[i : i + orb.n_params]
                i += orb.n_params
                if k in interior_orbits:
                    p = orb.points(params)
                    bary = np.column_stack([
                        -(p[:, 0] + p[:, 1]) / 2, (1 + p[:, 0]) / 2, (1 + p[:, 1]) / 2,
                    ])
                    if np.min(bary) < 5e-3:
                        bad = True
            if bad:
                continue
        # node distinctness
        pts_all, _ = assemble(orbits, sol.x)
        d = np.linalg.norm(pts_all[:, None] - pts_all[None, :], axis=-1)
        np.fill_diagonal(d, 1.0)
        if np.min(d) < 1e-3:
            continue
        best = sol.x
        print(f"  {report}: residual {r:.2e} after {trial + 1} tries")
        break
    if best is None:
        raise RuntimeError(f"no rule found for {report}")
    return assemble(orbits, best)


def solve_free_rule(fixed_pts, n_int, degree, seed=0, tries=3000, report=""):
    """Fixed boundary nodes, free interior nodes, fully free weights.

    Used when no fully symmetric rule exists with the prescribed node budget;
    the moment system is square (one equation per monomial) and solutions are
    found from random interior starts.
    """
    rng = np.random.default_rng(seed)
    n_fix = len(fixed_pts)
    exps, exact = _moment_table(degree)

    def split(x):
        ipts = x[: 2 * n_int].reshape(n_int, 2)
        return np.vstack([fixed_pts, ipts]), x[2 * n_int :]

    def resid(x):
        pts, wts = split(x)
        return (pts[:, 0][:, None] ** exps[:, 0]
                * pts[:, 1][:, None] ** exps[:, 1]).T @ wts - exact

    for trial in range(tries):
        ipts = rng.dirichlet([2.0, 2.0, 2.0], n_int) @ V
        x0 = np.concatenate([ipts.ravel(), rng.uniform(0.02, 0.4, n_fix + n_int)])
        sol = least_squares(resid, x0, method="lm", xtol=1e-15, ftol=1e-15,
                            max_nfev=4000)
        r = np.max(np.abs(sol.fun))
        if r > 1e-13:
            continue
        pts, wts = split(sol.x)
        if np.min(wts) < 1e-4:
            continue
        interior = pts[n_fix:]
        bary = np.column_stack([
            -(interior[:, 0] + interior[:, 1]) / 2,
            (1 + interior[:, 0]) / 2, (1 + interior[:, 1]) / 2,
        ])
        if np.min(bary) < 5e-3:
            continue
        d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        np.fill_diagonal(d, 1.0)
        if np.min(d) < 1e-3:
            continue
        print(f"  {report}: residual {r:.2e} after {trial + 1} tries")
        return pts, wts
    raise RuntimeError(f"no rule found for {report}")


def lg_edge_orbits(p):
    """Fixed orbits for diag-E edge nodes at Legendre-Gauss facet positions."""
    s, _ = np.polynomial.legendre.leggauss(p + 1)
    s = np.sort(s)
    orbits = []
    done = set()
    for v in s:
        key = round(abs(v), 14)
        if key in done:
            continue
        done.add(key)
        pts = []
        if abs(v) < 1e-14:
            for f in range(3):
                pts.append(refelem.facet_point(f, 0.0)[0])
        else:
            for f in range(3):
                pts.append(refelem.facet_point(f, v)[0])
                pts.append(refelem.facet_point(f, -v)[0])
        orbits.append(Orbit("fixed", np.array(pts)))
    return orbits


def make_rule(family, p):
    print(f"deriving {family} p={p} ...")
    target = 2 * p - 1
    if family == "omega":
        if p == 1:
            orbits = [Orbit("s21")]
            # the interior 3-point rule of degree 2 is unique: a = 1/6
            pts, wts = assemble(orbits, np.array([1 / 6, 2 / 3]))
        elif p == 2:
            orbits = [Orbit("s21"), Orbit("s21")]
            x = np.array([0.445948490915965, 0.091576213509771,
                          2 * 0.223381589678011, 2 * 0.109951743655322])
            pts, wts = assemble(orbits, x)
        elif p == 3:
            orbits = [Orbit("centroid"), Orbit("s21"), Orbit("s111")]
            pts, wts = solve_rule(orbits, target, seed=3, interior_orbits=(0, 1, 2),
                                  report="omega p3")
        else:
            orbits = [Orbit("s21"), Orbit("s21"), Orbit("s21"), Orbit("s111")]
            pts, wts = solve_rule(orbits, target, seed=4, interior_orbits=(0, 1, 2, 3),
                                  report="omega p4", tries=2000)
    elif family == "gamma":
        if p == 1:
            pts, wts = assemble([Orbit("vertex")], np.array([2 / 3]))
        elif p == 2:
            orbits = [Orbit("vertex"), Orbit("midpoint"), Orbit("centroid")]
            # weights are linear unknowns; solve the symmetric moment system
            A = []
            rhs = []
            for a in range(target + 1):
                for b in range(target + 1 - a):
                    row = []
                    for orb in orbits:
                        q = orb.points(np.empty(0))
                        row.append(np.sum(q[:, 0] ** a * q[:, 1] ** b))
                    A.append(row)
                    rhs.append(refelem.exact_volume_moment(a, b))
            w, *_ = np.linalg.lstsq(np.array(A), np.array(rhs), rcond=None)
            x = np.concatenate([w])
            pts, wts = assemble(orbits, x)
        elif p == 3:
            orbits = [Orbit("vertex"), Orbit("edgepair"), Orbit("s21")]
            pts, wts = solve_rule(orbits, target, seed=5, interior_orbits=(2,),
                                  report="gamma p3", tries=2000)
        else:
            try:
                orbits = [Orbit("vertex"), Orbit("midpoint"), Orbit("edgepair"),
                          Orbit("s111")]
                pts, wts = solve_rule(orbits, target, seed=6, interior_orbits=(3,),
                                      report="gamma p4 (s111 interior)", tries=3000)
            except RuntimeError:
                orbits = [Orbit("vertex"), Orbit("midpoint"), Orbit("edgepair"),
                          Orbit("s21"), Orbit("s21")]
                pts, wts = solve_rule(orbits, target, seed=7, interior_orbits=(3, 4),
                                      report="gamma p4 (2x s21 interior)", tries=3000)
    else:  # diage
        edge = lg_edge_orbits(p)
        if p == 1:
            pts, wts = assemble(edge, np.array([1 / 3]))
        elif p == 2:
            orbits = edge + [Orbit("centroid")]
            A, rhs = [], []
            for a in range(target + 1):
                for b in range(target + 1 - a):
                    row = [np.sum(o.points(np.empty(0))[:, 0] ** a
                                  * o.points(np.empty(0))[:, 1] ** b) for o in orbits]
                    A.append(row)
                    rhs.append(refelem.exact_volume_moment(a, b))
            w, *_ = np.linalg.lstsq(np.array(A), np.array(rhs), rcond=None)
            pts, wts = assemble(orbits, w)
        elif p == 3:
            # no fully symmetric 15-node rule fits this node budget; release
            # the mirror symmetry (interior nodes + weights free)
            edge_pts = np.vstack([o.fixed_points for o in edge])
            pts, wts = solve_free_rule(edge_pts, 3, target, seed=42,
                                       report="diage p3 (free interior)")
        else:
            try:
                orbits = edge + [Orbit("centroid"), Orbit("s21"), Orbit("s21")]
                pts, wts = solve_rule(orbits, target, seed=9,
                                      interior_orbits=(len(edge) + 1, len(edge) + 2),
                                      report="diage p4", tries=4000)
            except RuntimeError:
                edge_pts = np.vstack([o.fixed_points for o in edge])
                pts, wts = solve_free_rule(edge_pts, 7, target, seed=11,
                                           tries=6000,
                                           report="diage p4 (free interior)")
    return pts, wts


def collocation_map(pts, p):
    s, _ = np.polynomial.legendre.leggauss(p + 1)
    entries = []
    for f in range(3):
        for j, sv in enumerate(s):
            target = refelem.facet_point(f, sv)[0]
            d = np.linalg.norm(pts - target, axis=1)
            idx = int(np.argmin(d))
            if d[idx] > 1e-12:
                raise RuntimeError(f"no collocated volume node for facet {f+1} node {j}")
            entries.append([f + 1, j, idx])
    return entries


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    expected = {"omega": [3, 6, 10, 15], "gamma": [3, 7, 12, 18],
                "diage": [6, 10, 15, 22]}
    for family in ("omega", "gamma", "diage"):
        for p in (1, 2, 3, 4):
            path = OUT_DIR / f"{family}_p{p}.json"
            if path.exists():
                quad = refelem.load_quadrature(family, p)
                op = refelem.build_sbp_operator(quad)
                rep = refelem.validate_operator(op)
                assert rep.ok, f"{family} p={p} operator checks failed: {rep.checks}"
                print(f"  {path.name} already present: all operator checks pass")
                continue
            pts, wts = make_rule(family, p)
            assert len(wts) == expected[family][p - 1], (
                f"{family} p={p}: {len(wts)} nodes, expected {expected[family][p-1]}")
            s, w1d = np.polynomial.legendre.leggauss(p + 1)
            data = {
                "family": family,
                "p": p,
                "volume_nodes": [[float(a), float(b)] for a, b in pts],
                "volume_weights": [float(w) for w in wts],
                "facet_quadrature": {
                    "nodes_1d": [float(v) for v in s],
                    "weights_1d": [float(v) for v in w1d],
                },
                "diag_e_collocation": (collocation_map(pts, p)
                                       if family == "diage" else None),
            }
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(data, fh, indent=1)
            # full end-to-end validation: quadrature invariants + SBP build
            quad = refelem.load_quadrature(family, p)
            op = refelem.build_sbp_operator(quad)
            rep = refelem.validate_operator(op)
            assert rep.ok, f"{family} p={p} operator checks failed: {rep.checks}"
            print(f"  wrote {path.name}: n_p={quad.n_p}, all operator checks pass")


if __name__ == "__main__":
    main()
