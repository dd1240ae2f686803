"""Convex QP solver: operator-splitting ADMM with warm starts, primal
infeasibility certificates, and an exact active-set polish step.

Problems take the two-sided form

    minimize    1/2 x' P x + p' x
    subject to  lower <= A x <= upper

with equality rows encoded as lower == upper and one-sided rows via infinite
bounds. Constraint matrices are stored sparse; the trajectory subproblems are
block-banded and dense storage would dominate runtime.

A solver instance holds mutable workspace (iterates, scaling, factorization)
and is single-threaded; distinct instances may run concurrently on distinct
problems. Re-solving a problem that shares matrices with the previous one
(e.g. after ``update_bounds``) reuses the cached factorization and keeps the
dual iterate, which is what makes warm-started re-solves cheap.
"""

import enum
import json
from dataclasses import dataclass, replace

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 4000
DEFAULT_RHO = 0.1

_RHO_EQ_FACTOR = 1e3
_RHO_LOOSE = 1e-6
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_EPS_PINF = 1e-7
_EPS_DINF = 1e-7
_CHECK_INTERVAL = 25
_POLISH_DELTA = 1e-7
_POLISH_REFINE_STEPS = 3
# Iterations at which the slow paths get rescued: an exact active-set polish
# attempt (slow feasible solves) and a certificate LP (slow infeasibility
# detection). Both results are verified before being trusted.
_RESCUE_ITERS = (100, 250, 500, 1000, 2000, 3500)


class QPStatus(enum.Enum):
    SOLVED = "solved"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    ITERATION_LIMIT = "iteration_limit"


@dataclass
class QPResult:
    status: QPStatus
    x: np.ndarray | None
    iterations: int
    primal_residual: float
    dual_residual: float
    certificate: np.ndarray | None = None


@dataclass
class QuadraticProgram:
    """Objective matrix/vector plus two-sided linear constraints."""

    P: sp.csc_matrix
    p: np.ndarray
    A: sp.csc_matrix
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.P = sp.csc_matrix(self.P)
        self.A = sp.csc_matrix(self.A)
        self.p = np.asarray(self.p, dtype=float).reshape(-1)
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        d, m = self.d, self.m
        if self.P.shape != (d, d):
            raise ValueError("P must be square and match p")
        if self.A.shape[1] != d:
            raise ValueError("A column count must match variable dimension")
        if self.lower.size != m or self.upper.size != m:
            raise ValueError("bounds must match constraint row count")
        asym = abs(self.P - self.P.T)
        if asym.nnz and asym.max() > 1e-12:
            raise ValueError("P must be symmetric within 1e-12")
        if np.any(self.lower > self.upper):
            raise ValueError("lower must be <= upper elementwise")

    @property
    def d(self) -> int:
        return self.p.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.p @ x)

    def update_bounds(self, rows, lower, upper) -> "QuadraticProgram":
        """Copy of the program with only the named rows' bounds replaced.

        Matrices are shared with the original, so a solver that already
        factored this problem keeps its factorization.
        """
        rows = np.asarray(rows, dtype=int).reshape(-1)
        if rows.size and (rows.min() < 0 or rows.max() >= self.m):
            raise ValueError("row index out of range")
        new_lower = self.lower.copy()
        new_upper = self.upper.copy()
        new_lower[rows] = lower
        new_upper[rows] = upper
        if np.any(new_lower[rows] > new_upper[rows]):
            raise ValueError("lower must be <= upper elementwise")
        return replace(self, lower=new_lower, upper=new_upper)

    def dump_json(self, path) -> None:
        """Debug dump in coordinate-list form for triage."""
        Pc = self.P.tocoo()
        Ac = self.A.tocoo()
        payload = {
            "d": self.d,
            "m": self.m,
            "P": {"row": Pc.row.tolist(), "col": Pc.col.tolist(), "val": Pc.data.tolist()},
            "p": self.p.tolist(),
            "A": {"row": Ac.row.tolist(), "col": Ac.col.tolist(), "val": Ac.data.tolist()},
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }
        with open(path, "w") as f:
            json.dump(payload, f)


def verify_infeasibility_certificate(qp: QuadraticProgram, y: np.ndarray) -> tuple[float, float]:
    """Numeric check of a primal infeasibility certificate direction.

    Returns ``(norm_At_y, support_gap)``: a sound certificate has
    ``norm_At_y`` near zero and ``support_gap`` strictly negative.
    """
    y = np.asarray(y, dtype=float)
    aty = float(np.abs(qp.A.T @ y).max()) if qp.m else 0.0
    y_plus = np.maximum(y, 0.0)
    y_minus = np.minimum(y, 0.0)
    finite_u = np.isfinite(qp.upper)
    finite_l = np.isfinite(qp.lower)
    # Components pushing on an infinite bound void the certificate.
    if np.any(y_plus[~finite_u] > 0) or np.any(y_minus[~finite_l] < 0):
        return aty, np.inf
    support = float(qp.upper[finite_u] @ y_plus[finite_u] + qp.lower[finite_l] @ y_minus[finite_l])
    return aty, support


class ADMMSolver:
    """Operator-splitting solver with periodic residual checks.

    The instance retains its scaled iterates between calls, so solving a
    bounds-updated version of the same problem warm-starts the duals
    automatically.
    """

    def __init__(
        self,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
        rho: float = DEFAULT_RHO,
        sigma: float = 1e-6,
        alpha: float = 1.6,
        scaling_iters: int = 10,
        adaptive_rho: bool = True,
        polish: bool = True,
    ):
        if tol <= 0:
            raise ValueError("tol must be positive")
        self.tol = tol
        self.max_iter = max_iter
        self.rho = rho
        self.sigma = sigma
        self.alpha = alpha
        self.scaling_iters = scaling_iters
        self.adaptive_rho = adaptive_rho
        self.polish = polish
        self._structure_key = None
        self._x = self._y = self._z = None

    # -- setup ---------------------------------------------------------

    def _setup(self, qp: QuadraticProgram) -> None:
        # Same-shape problems inherit the previous dual iterate: duals of a
        # re-linearized subproblem are close to the old ones, and that is the
        # bulk of the warm-start payoff.
        inherited_y = None
        if self._structure_key is not None and self._structure_key[3] == qp.m and self._y is not None:
            inherited_y = self._unscale_y(self._y)
        self._qp = qp
        n, m = qp.d, qp.m
        self._n, self._m = n, m
        self._scale(qp)
        self._eq_rows = np.isfinite(qp.lower) & (qp.upper - qp.lower <= 1e-12)
        self._loose_rows = ~np.isfinite(qp.lower) & ~np.isfinite(qp.upper)
        self._rho_base = self.rho
        self._build_rho()
        self._factorize()
        self._structure_key = (id(qp.P), id(qp.A), n, m)
        self._x = np.zeros(n)
        self._y = self._rescale_y(inherited_y) if inherited_y is not None else np.zeros(m)
        self._z = np.zeros(m)

    def _scale(self, qp: QuadraticProgram) -> None:
        n, m = qp.d, qp.m
        # Equilibration depends only weakly on the matrix values; re-linearized
        # problems with the same sparsity pattern reuse the previous scaling.
        pattern = (n, m, qp.A.nnz, qp.P.nnz)
        cached = getattr(self, "_scale_pattern", None)
        if cached is not None and cached[0] == pattern and np.array_equal(
            cached[1], qp.A.indptr
        ):
            d, e = self._d_scale, self._e_scale
            Dd = sp.diags(d)
            Ee = sp.diags(e)
            Ps = (Dd @ qp.P @ Dd).tocsc()
            As = (Ee @ qp.A @ Dd).tocsc()
            q_s = d * qp.p
            c = self._c_scale
            self._Ps = (Ps * c).tocsc()
            self._As = As
            self._qs = q_s * c
            self._ls = e * qp.lower
            self._us = e * qp.upper
            return
        d = np.ones(n)
        e = np.ones(m)
        Ps = qp.P.copy()
        As = qp.A.copy()
        for _ in range(self.scaling_iters):
            p_col = _col_inf_norms(Ps)
            a_col = _col_inf_norms(As) if m else np.zeros(n)
            norm_x = np.maximum(p_col, a_col)
            norm_x[norm_x < 1e-8] = 1.0
            a_row = _row_inf_norms(As) if m else np.zeros(0)
            a_row[a_row < 1e-8] = 1.0
            dd = 1.0 / np.sqrt(norm_x)
            ee = 1.0 / np.sqrt(a_row)
            Dd = sp.diags(dd)
            Ee = sp.diags(ee)
            Ps = (Dd @ Ps @ Dd).tocsc()
            As = (Ee @ As @ Dd).tocsc()
            d *= dd
            e *= ee
        q_s = d * qp.p
        p_norm = _col_inf_norms(Ps)
        cost_scale = max(np.mean(p_norm) if n else 1.0, np.abs(q_s).max() if q_s.size else 0.0)
        c = 1.0 / max(cost_scale, 1e-8)
        c = float(np.clip(c, 1e-6, 1e6))
        self._Ps = (Ps * c).tocsc()
        self._As = As.tocsc()
        self._qs = q_s * c
        self._d_scale = d
        self._e_scale = e
        self._c_scale = c
        self._ls = e * qp.lower
        self._us = e * qp.upper
        self._scale_pattern = (pattern, qp.A.indptr.copy())

    def _build_rho(self) -> None:
        rho_vec = np.full(self._m, self._rho_base)
        rho_vec[self._eq_rows] = self._rho_base * _RHO_EQ_FACTOR
        rho_vec[self._loose_rows] = _RHO_LOOSE
        self._rho_vec = np.clip(rho_vec, _RHO_MIN, _RHO_MAX)

    def _factorize(self) -> None:
        n, m = self._n, self._m
        upper_left = self._Ps + self.sigma * sp.eye(n)
        if m == 0:
            K = upper_left.tocsc()
        else:
            K = sp.bmat(
                [[upper_left, self._As.T], [self._As, -sp.diags(1.0 / self._rho_vec)]],
                format="csc",
            )
        self._lu = spla.splu(K)

    # -- solve ---------------------------------------------------------

    def solve(
        self,
        qp: QuadraticProgram,
        warm_start: np.ndarray | None = None,
        warm_dual: np.ndarray | None = None,
    ) -> QPResult:
        """Solve the program, optionally warm-starting the primal iterate
        (and, via ``warm_dual``, the constraint multipliers).

        The dual iterate is otherwise retained from the previous call whenever
        the problem has the same row count as the previous one.
        """
        key = (id(qp.P), id(qp.A), qp.d, qp.m)
        if self._structure_key == key:
            # Bounds may have changed; refresh them and the rho vector if the
            # equality pattern moved.
            eq = np.isfinite(qp.lower) & (qp.upper - qp.lower <= 1e-12)
            loose = ~np.isfinite(qp.lower) & ~np.isfinite(qp.upper)
            self._qp = qp
            self._ls = self._e_scale * qp.lower
            self._us = self._e_scale * qp.upper
            if not (np.array_equal(eq, self._eq_rows) and np.array_equal(loose, self._loose_rows)):
                self._eq_rows = eq
                self._loose_rows = loose
                self._build_rho()
                self._factorize()
        else:
            self._setup(qp)

        if warm_start is not None:
            warm_start = np.asarray(warm_start, dtype=float).reshape(-1)
            if warm_start.size != self._n:
                raise ValueError("warm start dimension mismatch")
            self._x = warm_start / self._d_scale
            self._z = self._As @ self._x if self._m else np.zeros(0)
        if warm_dual is not None:
            warm_dual = np.asarray(warm_dual, dtype=float).reshape(-1)
            if warm_dual.size != self._m:
                raise ValueError("warm dual dimension mismatch")
            self._y = self._rescale_y(warm_dual)

        return self._run()

    def _run(self) -> QPResult:
        qp = self._qp
        n, m = self._n, self._m
        x, y, z = self._x, self._y, self._z
        rho_updates = 0
        last_rho_update = 0
        status = QPStatus.ITERATION_LIMIT
        certificate = None
        pri_res = dua_res = np.inf
        pri_at_rescue = None
        iterations = self.max_iter

        for k in range(1, self.max_iter + 1):
            rhs = np.concatenate([self.sigma * x - self._qs, z - y / self._rho_vec]) if m else (
                self.sigma * x - self._qs
            )
            sol = self._lu.solve(rhs)
            x_tilde = sol[:n]
            if m:
                nu = sol[n:]
                z_tilde = z + (nu - y) / self._rho_vec
                x_new = self.alpha * x_tilde + (1.0 - self.alpha) * x
                z_arg = self.alpha * z_tilde + (1.0 - self.alpha) * z + y / self._rho_vec
                z_new = np.clip(z_arg, self._ls, self._us)
                y_new = self._rho_vec * (z_arg - z_new)
            else:
                x_new = self.alpha * x_tilde + (1.0 - self.alpha) * x
                z_new, y_new = z, y
            delta_x = x_new - x
            delta_y = y_new - y
            x, y, z = x_new, y_new, z_new

            if k == 1 or k % _CHECK_INTERVAL == 0 or k == self.max_iter:
                pri_res, dua_res, pri_rel, dua_rel = self._residuals(x, y, z)
                if pri_res <= self.tol + self.tol * pri_rel and dua_res <= self.tol + self.tol * dua_rel:
                    status = QPStatus.SOLVED
                    iterations = k
                    break
                cert = self._primal_infeasibility(delta_y)
                if cert is not None:
                    status = QPStatus.PRIMAL_INFEASIBLE
                    certificate = cert
                    iterations = k
                    break
                if self._dual_infeasibility(delta_x):
                    # Unbounded below; surfaced as an iteration limit since the
                    # callers of this artifact only distinguish primal outcomes.
                    status = QPStatus.ITERATION_LIMIT
                    iterations = k
                    break
                if k in _RESCUE_ITERS or k == self.max_iter:
                    # Attempt the LP certificate only when the primal residual
                    # has stagnated above tolerance (the signature of an empty
                    # feasible set) or as a last resort at the iteration cap.
                    stagnant = (
                        pri_res > 10.0 * (self.tol + self.tol * pri_rel)
                        and pri_at_rescue is not None
                        and pri_res > 0.5 * pri_at_rescue
                    )
                    rescued = self._rescue(x, y, try_lp=stagnant or k == self.max_iter)
                    pri_at_rescue = pri_res
                    if rescued is not None:
                        kind, payload = rescued
                        iterations = k
                        if kind == "solved":
                            self._x, self._y, self._z = x, y, z
                            x_p, pri_p, dua_p = payload
                            return QPResult(QPStatus.SOLVED, x_p, k, pri_p, dua_p)
                        status = QPStatus.PRIMAL_INFEASIBLE
                        certificate = payload
                        break
                if (
                    self.adaptive_rho
                    and k >= 2 * _CHECK_INTERVAL
                    and rho_updates < 10
                    and k - last_rho_update >= 2 * _CHECK_INTERVAL
                ):
                    ratio = (pri_res / max(pri_rel, 1e-10)) / max(
                        dua_res / max(dua_rel, 1e-10), 1e-16
                    )
                    if ratio > 5.0 or ratio < 0.2:
                        self._rho_base = float(
                            np.clip(self._rho_base * np.sqrt(ratio), _RHO_MIN, _RHO_MAX)
                        )
                        self._build_rho()
                        self._factorize()
                        rho_updates += 1
                        last_rho_update = k

        self._x, self._y, self._z = x, y, z

        if status is QPStatus.SOLVED:
            x_u = self._d_scale * x
            if self.polish:
                polished = self._polish(x_u, self._unscale_y(y), pri_res, dua_res)
                if polished is not None:
                    x_u, pri_res, dua_res = polished
            return QPResult(status, x_u, iterations, pri_res, dua_res)
        if status is QPStatus.PRIMAL_INFEASIBLE:
            return QPResult(status, None, iterations, pri_res, dua_res, certificate=certificate)
        return QPResult(QPStatus.ITERATION_LIMIT, None, iterations, pri_res, dua_res)

    # -- diagnostics ---------------------------------------------------

    def _unscale_y(self, y: np.ndarray) -> np.ndarray:
        return self._e_scale * y / self._c_scale

    def _rescale_y(self, y_unscaled: np.ndarray) -> np.ndarray:
        return self._c_scale * y_unscaled / self._e_scale

    def last_dual(self) -> np.ndarray | None:
        """Unscaled dual iterate after the most recent solve."""
        if self._y is None:
            return None
        return self._unscale_y(self._y)

    def _residuals(self, x, y, z):
        qp = self._qp
        x_u = self._d_scale * x
        Px = qp.P @ x_u
        if self._m:
            y_u = self._unscale_y(y)
            z_u = z / self._e_scale
            Ax = qp.A @ x_u
            Aty = qp.A.T @ y_u
            pri_res = float(np.abs(Ax - z_u).max())
            pri_rel = float(max(np.abs(Ax).max(), np.abs(z_u).max()))
            dua = Px + qp.p + Aty
            dua_rel = float(max(np.abs(Px).max(), np.abs(Aty).max(), np.abs(qp.p).max(), 0.0))
        else:
            pri_res, pri_rel = 0.0, 0.0
            dua = Px + qp.p
            dua_rel = float(max(np.abs(Px).max(initial=0.0), np.abs(qp.p).max(initial=0.0)))
        dua_res = float(np.abs(dua).max(initial=0.0))
        return pri_res, dua_res, pri_rel, dua_rel

    def _primal_infeasibility(self, delta_y: np.ndarray) -> np.ndarray | None:
        if self._m == 0:
            return None
        v = self._unscale_y(delta_y)
        norm = np.abs(v).max(initial=0.0)
        if norm <= _EPS_PINF:
            return None
        v = self._mask_infinite_pushes(v / norm)
        if v is None:
            return None
        aty, support = verify_infeasibility_certificate(self._qp, v)
        if aty <= _EPS_PINF and support < -_EPS_PINF:
            return v
        return None

    def _mask_infinite_pushes(self, v: np.ndarray) -> np.ndarray | None:
        """Zero certificate dust on rows with infinite bounds; a component
        genuinely pushing on an infinite bound voids the direction."""
        qp = self._qp
        vp = np.maximum(v, 0.0)
        vm = np.minimum(v, 0.0)
        if np.any(~np.isfinite(qp.upper) & (vp > 1e-4)) or np.any(
            ~np.isfinite(qp.lower) & (vm < -1e-4)
        ):
            return None
        return np.where(np.isfinite(qp.upper), vp, 0.0) + np.where(
            np.isfinite(qp.lower), vm, 0.0
        )

    def _refine_certificate(self, v: np.ndarray) -> np.ndarray | None:
        """Snap a near-certificate direction onto the null space of A'
        restricted to its support, then verify it exactly."""
        qp = self._qp
        support = np.flatnonzero(np.abs(v) > 1e-9 * np.abs(v).max(initial=0.0))
        if support.size == 0 or support.size > 5000:
            return None
        B = qp.A[support].T.toarray()
        try:
            _, svals, Vt = np.linalg.svd(B, full_matrices=False)
        except np.linalg.LinAlgError:
            return None
        null_rows = Vt[svals <= max(svals.max(initial=0.0) * 1e-10, 1e-12)]
        if null_rows.size == 0:
            return None
        v_s = v[support]
        proj = null_rows.T @ (null_rows @ v_s)
        peak = np.abs(proj).max(initial=0.0)
        if peak < 0.1 * np.abs(v_s).max(initial=0.0):
            return None
        y = np.zeros(self._m)
        y[support] = proj / peak
        y = self._mask_infinite_pushes(y)
        if y is None:
            return None
        aty, sup = verify_infeasibility_certificate(qp, y)
        if aty <= _EPS_PINF and sup < -_EPS_PINF:
            return y
        return None

    def _rescue(self, x, y, try_lp: bool):
        """Escape hatches for slowly-converging runs.

        Feasible problems near the boundary can take thousands of first-order
        iterations; an exact polish from the current active-set guess often
        terminates them immediately. Infeasible problems may produce a noisy
        ray; the certificate linear program finds the separating direction
        outright. Either result is accepted only after exact verification, so
        a failed rescue just means more iterations.
        """
        if self._m == 0:
            return None
        x_u = self._d_scale * x
        y_u = self._unscale_y(y)
        polished = self._polish(x_u, y_u, self.tol, self.tol)
        if polished is not None:
            return "solved", polished
        if try_lp:
            cert = self._certificate_lp()
            if cert is not None:
                return "infeasible", cert
        return None

    def _certificate_lp(self) -> np.ndarray | None:
        """Direct search for a primal infeasibility certificate: minimize the
        support function over the sign-feasible null directions of A'."""
        qp = self._qp
        m = self._m
        finite_u = np.isfinite(qp.upper)
        finite_l = np.isfinite(qp.lower)
        cost = np.concatenate(
            [np.where(finite_u, qp.upper, 0.0), np.where(finite_l, -qp.lower, 0.0)]
        )
        upper_var = np.concatenate(
            [np.where(finite_u, np.inf, 0.0), np.where(finite_l, np.inf, 0.0)]
        )
        At = qp.A.T.tocsc()
        A_eq = sp.vstack(
            [sp.hstack([At, -At]), sp.csr_matrix(np.ones((1, 2 * m)))], format="csc"
        )
        b_eq = np.zeros(self._n + 1)
        b_eq[-1] = 1.0
        try:
            res = scipy.optimize.linprog(
                cost,
                A_eq=A_eq,
                b_eq=b_eq,
                bounds=list(zip(np.zeros(2 * m), upper_var)),
                method="highs",
            )
        except ValueError:
            return None
        if not res.success or res.fun >= -1e-9:
            return None
        y = res.x[:m] - res.x[m:]
        peak = np.abs(y).max(initial=0.0)
        if peak <= 0:
            return None
        y = self._mask_infinite_pushes(y / peak)
        if y is None:
            return None
        aty, sup = verify_infeasibility_certificate(qp, y)
        if aty <= _EPS_PINF and sup < -_EPS_PINF:
            return y
        # HiGHS solves to its own tolerance; snap onto the exact null space.
        return self._refine_certificate(y)

    def _dual_infeasibility(self, delta_x: np.ndarray) -> bool:
        v = self._d_scale * delta_x
        norm = np.abs(v).max(initial=0.0)
        if norm <= _EPS_DINF:
            return False
        v = v / norm
        qp = self._qp
        if qp.p @ v >= -_EPS_DINF:
            return False
        if np.abs(qp.P @ v).max(initial=0.0) > _EPS_DINF:
            return False
        if self._m:
            Av = qp.A @ v
            up_ok = np.where(np.isfinite(qp.upper), Av <= _EPS_DINF, True)
            lo_ok = np.where(np.isfinite(qp.lower), Av >= -_EPS_DINF, True)
            if not (np.all(up_ok) and np.all(lo_ok)):
                return False
        return True

    def _polish(self, x: np.ndarray, y: np.ndarray, pri_cap: float, dua_cap: float):
        """Exact KKT solve on the active set implied by the dual signs.

        The seed set is usually off by a handful of rows mid-run, so this
        iterates a small active-set correction: violated rows are added on
        their violated side, rows whose multiplier comes out with the wrong
        sign are dropped. Accepts only a sign-valid KKT point within the caps.
        """
        qp = self._qp
        m = self._m
        eq = self._eq_rows
        low = ~eq & (y < -1e-12)
        upp = ~eq & (y > 1e-12)
        pri_cap = max(pri_cap, 1e-9)
        dua_cap = max(dua_cap, 1e-9)
        finite_l = np.isfinite(qp.lower)
        finite_u = np.isfinite(qp.upper)
        seen: set[bytes] = set()
        for _ in range(6):
            key = low.tobytes() + upp.tobytes()
            if key in seen:
                return None
            seen.add(key)
            solved = self._kkt_solve(low, upp)
            if solved is None:
                return None
            x_p, y_p = solved
            Ax = qp.A @ x_p if m else np.zeros(0)
            viol_low = finite_l & (Ax < qp.lower - pri_cap)
            viol_upp = finite_u & (Ax > qp.upper + pri_cap)
            sign_tol = 1e-6 * (1.0 + np.abs(y_p).max(initial=0.0))
            bad_low = low & (y_p > sign_tol)
            bad_upp = upp & (y_p < -sign_tol)
            if not (viol_low.any() or viol_upp.any() or bad_low.any() or bad_upp.any()):
                pri_p = float(
                    max(
                        np.maximum(Ax - qp.upper, 0.0).max(initial=0.0),
                        np.maximum(qp.lower - Ax, 0.0).max(initial=0.0),
                    )
                )
                dua_p = float(
                    np.abs(qp.P @ x_p + qp.p + (qp.A.T @ y_p if m else 0.0)).max(initial=0.0)
                )
                if pri_p <= pri_cap and dua_p <= dua_cap:
                    return x_p, pri_p, dua_p
                return None
            low = (low & ~bad_low) | (viol_low & ~eq)
            upp = (upp & ~bad_upp) | (viol_upp & ~eq)
            upp &= ~low
        return None

    def _kkt_solve(self, low, upp):
        """Regularized equality-constrained solve on the given active rows,
        refined against the unregularized KKT system."""
        qp = self._qp
        n, m = self._n, self._m
        eq = self._eq_rows
        act = np.flatnonzero(eq | low | upp)
        b_act = np.where(eq | low, qp.lower, qp.upper)[act]
        A_act = qp.A[act]
        k = act.size
        K = sp.bmat(
            [
                [qp.P + _POLISH_DELTA * sp.eye(n), A_act.T if k else None],
                [A_act if k else None, -_POLISH_DELTA * sp.eye(k) if k else None],
            ],
            format="csc",
        ) if k else (qp.P + _POLISH_DELTA * sp.eye(n)).tocsc()
        rhs = np.concatenate([-qp.p, b_act]) if k else -qp.p
        try:
            lu = spla.splu(K)
        except RuntimeError:
            return None
        sol = lu.solve(rhs)
        if k:
            K_exact = sp.bmat([[qp.P, A_act.T], [A_act, None]], format="csc")
        else:
            K_exact = qp.P.tocsc()
        for _ in range(_POLISH_REFINE_STEPS):
            resid = rhs - K_exact @ sol
            if not np.all(np.isfinite(resid)):
                return None
            sol = sol + lu.solve(resid)
        x_p = sol[:n]
        if not np.all(np.isfinite(x_p)):
            return None
        y_p = np.zeros(m)
        if k:
            y_p[act] = sol[n:]
        return x_p, y_p


def solve(
    qp: QuadraticProgram,
    warm_start: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> QPResult:
    """One-shot convenience wrapper around a fresh solver instance."""
    return ADMMSolver(tol=tol, max_iter=max_iter).solve(qp, warm_start=warm_start)


def update_bounds(qp: QuadraticProgram, rows, lower, upper) -> QuadraticProgram:
    return qp.update_bounds(rows, lower, upper)


def _col_inf_norms(M: sp.spmatrix) -> np.ndarray:
    out = np.zeros(M.shape[1])
    Mc = abs(M.tocsc())
    if Mc.nnz:
        nz = Mc.max(axis=0).toarray().ravel()
        out[: nz.size] = nz
    return out


def _row_inf_norms(M: sp.spmatrix) -> np.ndarray:
    out = np.zeros(M.shape[0])
    Mr = abs(M.tocsr())
    if Mr.nnz:
        nz = Mr.max(axis=1).toarray().ravel()
        out[: nz.size] = nz
    return out
