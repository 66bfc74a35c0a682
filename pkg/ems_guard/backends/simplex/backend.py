"""Dense two-phase tableau simplex with Bland's rule."""

from typing import List, Tuple

import numpy as np

from ...core.backend_manager import BaseLpBackend, LpArrays
from ...core.models import BackendType, LpSolution


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])


def _iterate(tab: np.ndarray, basis: np.ndarray, n_cols: int, tol: float,
             max_iter: int) -> Tuple[str, int]:
    """Run Bland's-rule pivots on ``tab`` (objective in the last row, rhs in the last column)."""
    m = tab.shape[0] - 1
    for it in range(max_iter):
        reduced = tab[-1, :n_cols]
        entering = np.flatnonzero(reduced < -tol)
        if entering.size == 0:
            return "optimal", it
        col = int(entering[0])

        column = tab[:m, col]
        candidates = np.flatnonzero(column > tol)
        if candidates.size == 0:
            return "unbounded", it
        ratios = tab[candidates, -1] / column[candidates]
        best = ratios.min()
        ties = candidates[ratios <= best + 1e-12]
        row = int(ties[np.argmin(basis[ties])])

        _pivot(tab, row, col)
        basis[row] = col
    return "error", max_iter


class SimplexBackend(BaseLpBackend):
    """Textbook back end for small problems; also the oracle the tests compare against."""

    def get_backend_name(self) -> BackendType:
        """Return the back end name."""
        return "simplex"

    def get_capabilities(self) -> List[str]:
        """Return list of supported capabilities."""
        return ["dense", "blands-rule", "two-phase"]

    def solve(self, lp: LpArrays) -> LpSolution:
        """Bring the LP to standard form, then run phase 1 and phase 2."""
        tol = self.config.optimality_tol
        max_iter = self.config.simplex_max_iterations
        n = lp.n_vars

        # x = offset + T y with y >= 0
        offset = np.zeros(n)
        columns: List[np.ndarray] = []
        bound_rows: List[Tuple[int, float]] = []
        for j in range(n):
            lo, up = lp.lower[j], lp.upper[j]
            unit = np.zeros(n)
            unit[j] = 1.0
            if np.isfinite(lo):
                offset[j] = lo
                columns.append(unit)
                if np.isfinite(up):
                    bound_rows.append((len(columns) - 1, up - lo))
            elif np.isfinite(up):
                offset[j] = up
                columns.append(-unit)
            else:
                columns.append(unit)
                columns.append(-unit)
        T = np.column_stack(columns) if columns else np.zeros((n, 0))
        n_y = T.shape[1]

        A = lp.A.toarray() if lp.n_rows else np.zeros((0, n))
        A_y = A @ T
        b = lp.rhs - A @ offset
        senses = list(lp.row_senses)

        for col, width in bound_rows:
            row = np.zeros(n_y)
            row[col] = 1.0
            A_y = np.vstack([A_y, row])
            b = np.append(b, width)
            senses.append("<=")

        m = len(b)
        slack_rows = [i for i, s in enumerate(senses) if s != "=="]
        S = np.zeros((m, len(slack_rows)))
        for k, i in enumerate(slack_rows):
            S[i, k] = 1.0 if senses[i] == "<=" else -1.0
        A_std = np.hstack([A_y, S])
        n_std = A_std.shape[1]

        negative = b < 0
        A_std[negative] *= -1.0
        b = np.where(negative, -b, b)

        # phase 1: one artificial per row
        tab = np.zeros((m + 1, n_std + m + 1))
        tab[:m, :n_std] = A_std
        tab[:m, n_std:n_std + m] = np.eye(m)
        tab[:m, -1] = b
        tab[-1, :n_std] = -A_std.sum(axis=0)
        tab[-1, -1] = -b.sum()
        basis = np.arange(n_std, n_std + m)

        status, it1 = _iterate(tab, basis, n_std + m, tol, max_iter)
        if status == "error":
            return LpSolution(status="error", backend="simplex", iterations=it1,
                              message="iteration limit in phase 1")
        infeasibility = -tab[-1, -1]
        if infeasibility > self.config.feasibility_tol * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpSolution(status="infeasible", backend="simplex", iterations=it1,
                              message=f"phase 1 residual {infeasibility:.3g}")

        # drive remaining artificials out; drop redundant rows
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] < n_std:
                continue
            nonzero = np.flatnonzero(np.abs(tab[r, :n_std]) > tol)
            if nonzero.size:
                col = int(nonzero[0])
                _pivot(tab, r, col)
                basis[r] = col
            else:
                keep[r] = False

        rows = np.append(np.flatnonzero(keep), m)
        tab = np.hstack([tab[rows][:, :n_std], tab[rows][:, -1:]])
        basis = basis[keep]

        # phase 2
        c_y = np.concatenate([(lp.c if lp.sense == "minimize" else -lp.c) @ T, np.zeros(n_std - n_y)])
        tab[-1, :] = 0.0
        tab[-1, :n_std] = c_y
        for r, var in enumerate(basis):
            tab[-1] -= c_y[var] * tab[r]

        status, it2 = _iterate(tab, basis, n_std, tol, max_iter)
        if status != "optimal":
            return LpSolution(status=status if status == "unbounded" else "error",
                              backend="simplex", iterations=it1 + it2)

        y = np.zeros(n_std)
        y[basis] = tab[:-1, -1]
        x = offset + T @ y[:n_y]
        return LpSolution(
            status="optimal",
            objective=float(lp.c @ x),
            x=x,
            backend="simplex",
            iterations=it1 + it2,
        )
