"""Linear-programming layer: problem builder, solve entry point, MPS export."""

import time
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, TextIO, Union

import numpy as np
import scipy.sparse as sp

from ..core.backend_manager import LpArrays, LpBackendManager
from ..core.config import Config, get_config
from ..core.exceptions import DimensionMismatchError
from ..core.logger import EmsGuardLogger, get_logger
from ..core.models import ConstraintSense, LpBasis, LpSolution, ObjectiveSense

Bound = Union[float, Sequence[float], np.ndarray]
MatrixLike = Union[np.ndarray, sp.spmatrix]


class _Block:
    __slots__ = ("name", "matrix", "sense", "rhs", "labels")

    def __init__(self, name: str, matrix: sp.csr_matrix, sense: ConstraintSense,
                 rhs: np.ndarray, labels: List[str]):
        self.name = name
        self.matrix = matrix
        self.sense = sense
        self.rhs = rhs
        self.labels = labels


class LinearProgram:
    """Incrementally built LP with named variable and constraint blocks."""

    def __init__(self, name: str = "lp", sense: ObjectiveSense = "minimize"):
        if sense not in ("minimize", "maximize"):
            raise ValueError(f"unknown objective sense '{sense}'")
        self.name = name
        self.sense: ObjectiveSense = sense
        self._lower: List[np.ndarray] = []
        self._upper: List[np.ndarray] = []
        self._cost: List[np.ndarray] = []
        self._var_blocks: Dict[str, np.ndarray] = {}
        self._blocks: List[_Block] = []
        self._n_vars = 0

    @property
    def n_vars(self) -> int:
        return self._n_vars

    @property
    def n_rows(self) -> int:
        return sum(block.matrix.shape[0] for block in self._blocks)

    def variables(self, name: str) -> np.ndarray:
        """Indices of a named variable block."""
        return self._var_blocks[name]

    def add_variables(self, name: str, count: int, lower: Bound = 0.0,
                      upper: Bound = np.inf, cost: Bound = 0.0) -> np.ndarray:
        """Declare ``count`` variables; returns their column indices."""
        if name in self._var_blocks:
            raise ValueError(f"variable block '{name}' already declared")
        lo = np.broadcast_to(np.asarray(lower, dtype=float), (count,)).copy()
        up = np.broadcast_to(np.asarray(upper, dtype=float), (count,)).copy()
        c = np.broadcast_to(np.asarray(cost, dtype=float), (count,)).copy()
        if np.any(lo > up):
            bad = int(np.flatnonzero(lo > up)[0])
            raise ValueError(f"{name}[{bad}]: lower bound {lo[bad]} exceeds upper bound {up[bad]}")

        index = np.arange(self._n_vars, self._n_vars + count)
        self._lower.append(lo)
        self._upper.append(up)
        self._cost.append(c)
        self._var_blocks[name] = index
        self._n_vars += count
        return index

    def add_constraint_block(self, name: str, matrix: MatrixLike, sense: ConstraintSense,
                             rhs: Bound, labels: Optional[Sequence[str]] = None,
                             columns: Optional[np.ndarray] = None) -> None:
        """Add rows ``matrix @ x[columns] (sense) rhs``; ``columns`` defaults to all variables."""
        if sense not in ("<=", "==", ">="):
            raise ValueError(f"unknown constraint sense '{sense}'")
        M = sp.csr_matrix(matrix, dtype=float)
        n_rows = M.shape[0]

        if columns is not None:
            columns = np.asarray(columns, dtype=int)
            if M.shape[1] != len(columns):
                raise DimensionMismatchError(f"constraint block '{name}' columns", len(columns), M.shape[1])
            if columns.size and (columns.min() < 0 or columns.max() >= self._n_vars):
                raise ValueError(f"constraint block '{name}' references undeclared variables")
            coo = M.tocoo()
            M = sp.csr_matrix((coo.data, (coo.row, columns[coo.col])), shape=(n_rows, self._n_vars))
        elif M.shape[1] != self._n_vars:
            raise DimensionMismatchError(f"constraint block '{name}'", self._n_vars, M.shape[1])

        b = np.broadcast_to(np.asarray(rhs, dtype=float), (n_rows,)).copy()
        row_labels = list(labels) if labels is not None else [f"{name}[{i}]" for i in range(n_rows)]
        if len(row_labels) != n_rows:
            raise DimensionMismatchError(f"labels of '{name}'", n_rows, len(row_labels))
        self._blocks.append(_Block(name, M, sense, b, row_labels))

    def add_constraint(self, name: str, coeffs: Dict[int, float], sense: ConstraintSense,
                       rhs: float) -> None:
        """Add a single row from a ``{column: coefficient}`` map."""
        cols = np.fromiter(coeffs.keys(), dtype=int, count=len(coeffs))
        vals = np.fromiter(coeffs.values(), dtype=float, count=len(coeffs))
        self.add_constraint_block(name, vals.reshape(1, -1), sense, rhs, labels=[name], columns=cols)

    def compile(self) -> LpArrays:
        """Assemble the matrix form handed to a back end."""
        n = self._n_vars
        blocks = []
        for block in self._blocks:
            M = block.matrix
            if M.shape[1] < n:
                M = sp.hstack([M, sp.csr_matrix((M.shape[0], n - M.shape[1]))], format="csr")
            blocks.append(M)

        A = sp.vstack(blocks, format="csr") if blocks else sp.csr_matrix((0, n))
        senses = np.array([b.sense for b in self._blocks for _ in range(b.matrix.shape[0])], dtype=object)
        rhs = np.concatenate([b.rhs for b in self._blocks]) if self._blocks else np.zeros(0)
        labels = [label for b in self._blocks for label in b.labels]

        return LpArrays(
            sense=self.sense,
            c=np.concatenate(self._cost) if self._cost else np.zeros(0),
            A=A,
            row_senses=senses,
            rhs=rhs,
            lower=np.concatenate(self._lower) if self._lower else np.zeros(0),
            upper=np.concatenate(self._upper) if self._upper else np.zeros(0),
            row_labels=labels,
        )

    def objective_value(self, x: np.ndarray) -> float:
        return float(np.concatenate(self._cost) @ x)

    def to_mps(self, stream: TextIO) -> None:
        """Write the LP in fixed MPS format. Maximization is written as a negated minimization."""
        arrays = self.compile()
        c = arrays.c if arrays.sense == "minimize" else -arrays.c
        kind = {"<=": "L", ">=": "G", "==": "E"}
        A = arrays.A.tocsc()

        def num(value: float) -> str:
            return f"{value:12.6g}"

        stream.write(f"NAME          {self.name[:8]}\n")
        if arrays.sense == "maximize":
            stream.write("* objective negated: original problem is a maximization\n")
        stream.write("ROWS\n N  COST\n")
        for i, sense in enumerate(arrays.row_senses):
            stream.write(f" {kind[sense]}  R{i:07d}\n")

        stream.write("COLUMNS\n")
        for j in range(arrays.n_vars):
            entries = []
            if c[j] != 0:
                entries.append(("COST", c[j]))
            start, end = A.indptr[j], A.indptr[j + 1]
            entries.extend((f"R{A.indices[p]:07d}", A.data[p]) for p in range(start, end))
            for row, value in entries:
                stream.write(f"    C{j:07d}  {row:<8}  {num(value)}\n")

        stream.write("RHS\n")
        for i, value in enumerate(arrays.rhs):
            if value != 0:
                stream.write(f"    RHS       R{i:07d}  {num(value)}\n")

        stream.write("BOUNDS\n")
        for j in range(arrays.n_vars):
            lo, up = arrays.lower[j], arrays.upper[j]
            name = f"C{j:07d}"
            if np.isfinite(lo) and np.isfinite(up) and lo == up:
                stream.write(f" FX BND       {name}  {num(lo)}\n")
                continue
            if not np.isfinite(lo) and not np.isfinite(up):
                stream.write(f" FR BND       {name}\n")
                continue
            if not np.isfinite(lo):
                stream.write(f" MI BND       {name}\n")
            elif lo != 0:
                stream.write(f" LO BND       {name}  {num(lo)}\n")
            if np.isfinite(up):
                stream.write(f" UP BND       {name}  {num(up)}\n")
        stream.write("ENDATA\n")


@lru_cache(maxsize=1)
def get_backend_manager() -> LpBackendManager:
    """Shared back end registry."""
    return LpBackendManager(get_config(), get_logger())


def solve(lp: LinearProgram, backend: Optional[str] = None, config: Optional[Config] = None,
          logger: Optional[EmsGuardLogger] = None) -> LpSolution:
    """Solve ``lp`` and attach row activity, binding flags and the active-set record."""
    config = config or get_config()
    logger = logger or get_logger()
    solver = get_backend_manager().get_backend(backend or config.lp_backend)

    arrays = lp.compile()
    start = time.perf_counter()
    solution = solver.solve(arrays)
    logger.solve_completed(lp.name, solution.status, time.perf_counter() - start, solver.backend_name)

    if not solution.is_optimal:
        return solution.model_copy(update={"row_labels": arrays.row_labels})

    x = solution.x
    activity = arrays.A @ x if arrays.n_rows else np.zeros(0)
    binding = np.abs(activity - arrays.rhs) <= config.binding_tol
    binding |= arrays.row_senses == "=="

    at_lower = np.flatnonzero(np.isfinite(arrays.lower) & (np.abs(x - arrays.lower) <= config.binding_tol))
    at_upper = np.flatnonzero(np.isfinite(arrays.upper) & (np.abs(x - arrays.upper) <= config.binding_tol))

    return solution.model_copy(
        update={
            "objective": lp.objective_value(x),
            "activity": activity,
            "binding": binding,
            "row_labels": arrays.row_labels,
            "basis": LpBasis(
                binding_rows=[int(i) for i in np.flatnonzero(binding)],
                at_lower=[int(j) for j in at_lower],
                at_upper=[int(j) for j in at_upper],
            ),
        }
    )
