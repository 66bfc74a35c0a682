"""HiGHS dual-simplex back end (scipy.optimize.linprog)."""

from typing import List

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ...core.backend_manager import BaseLpBackend, LpArrays
from ...core.models import BackendType, LpSolution, LpStatus

_STATUS: dict = {0: "optimal", 2: "infeasible", 3: "unbounded"}


class HighsBackend(BaseLpBackend):
    """Production back end: HiGHS dual simplex, deterministic for identical input."""

    def get_backend_name(self) -> BackendType:
        """Return the back end name."""
        return "highs"

    def get_capabilities(self) -> List[str]:
        """Return list of supported capabilities."""
        return ["sparse", "dual-simplex", "large-scale"]

    def solve(self, lp: LpArrays) -> LpSolution:
        """Solve with ``linprog(method="highs-ds")``."""
        c = lp.c if lp.sense == "minimize" else -lp.c

        le = lp.row_senses == "<="
        ge = lp.row_senses == ">="
        eq = lp.row_senses == "=="

        A_ub = b_ub = A_eq = b_eq = None
        if le.any() or ge.any():
            A_ub = sp.vstack([lp.A[le], -lp.A[ge]], format="csr")
            b_ub = np.concatenate([lp.rhs[le], -lp.rhs[ge]])
        if eq.any():
            A_eq = lp.A[eq]
            b_eq = lp.rhs[eq]

        bounds = np.column_stack([lp.lower, lp.upper])
        options = {
            "presolve": True,
            "primal_feasibility_tolerance": self.config.feasibility_tol,
            "dual_feasibility_tolerance": self.config.optimality_tol,
        }

        try:
            res = linprog(
                c,
                A_ub=A_ub,
                b_ub=b_ub,
                A_eq=A_eq,
                b_eq=b_eq,
                bounds=bounds,
                method="highs-ds",
                options=options,
            )
        except ValueError as e:
            self.logger.error(f"linprog rejected the problem: {e}", "highs")
            return LpSolution(status="error", backend="highs", message=str(e))

        status: LpStatus = _STATUS.get(res.status, "error")
        if status != "optimal":
            return LpSolution(
                status=status, backend="highs", iterations=int(res.nit or 0), message=res.message
            )

        x = np.asarray(res.x, dtype=float)
        return LpSolution(
            status="optimal",
            objective=float(lp.c @ x),
            x=x,
            backend="highs",
            iterations=int(res.nit or 0),
            message=res.message,
        )
