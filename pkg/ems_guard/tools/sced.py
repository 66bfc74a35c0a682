"""Security-constrained economic dispatch over SE loads."""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..core.config import Config, get_config
from ..core.exceptions import DimensionMismatchError, NetworkValidationError
from ..core.logger import EmsGuardLogger, get_logger
from ..core.models import DispatchSolution, LpSolution, Network
from .lp import LinearProgram, solve
from .ptdf import PtdfMatrix


def check_loads(net: Network, loads: np.ndarray, what: str = "load vector") -> np.ndarray:
    """Validate a bus-order load vector and return it as float."""
    loads = np.asarray(loads, dtype=float)
    if loads.shape != (net.n_buses,):
        raise DimensionMismatchError(what, net.n_buses, loads.shape)
    if np.any(loads < -1e-9):
        bus = int(net.bus_ids[np.flatnonzero(loads < -1e-9)[0]])
        raise NetworkValidationError(f"{what}: negative load at bus {bus}")
    return np.maximum(loads, 0.0)


class DispatchModel:
    """SCED as a LinearProgram; flow-limit row blocks can be appended before solving."""

    def __init__(self, net: Network, ptdf: PtdfMatrix, loads: np.ndarray,
                 config: Optional[Config] = None, name: str = "sced"):
        self.net = net
        self.ptdf = ptdf
        self.config = config or get_config()
        self.loads = check_loads(net, loads)
        self._row_branch: Dict[str, int] = {}

        # equal-cost units are loaded in generator order
        rank = self.config.tie_break_epsilon * np.arange(net.n_generators)
        self.lp = LinearProgram(name, "minimize")
        self.p = self.lp.add_variables("p", net.n_generators, net.p_min, net.p_max, net.costs + rank)
        self.lp.add_constraint_block(
            "balance", np.ones((1, net.n_generators)), "==", self.loads.sum(), labels=["balance"]
        )
        self.add_flow_limits("flow", net.rated_branch_ids(), self.loads)

    def add_flow_limits(self, prefix: str, branch_ids: Sequence[int], loads: np.ndarray) -> None:
        """Add ``-R_k <= PTDF_k (C_g p - loads) <= R_k`` for each listed branch."""
        branch_ids = [int(k) for k in branch_ids]
        if not branch_ids:
            return
        rows = self.ptdf.rows(branch_ids)
        coeffs = (self.net.gen_incidence.T @ rows.T).T
        offset = rows @ loads
        rating = np.array([self.net.branch(k).rating for k in branch_ids])

        upper = [f"{prefix}_max[{k}]" for k in branch_ids]
        lower = [f"{prefix}_min[{k}]" for k in branch_ids]
        self.lp.add_constraint_block(f"{prefix}_max", coeffs, "<=", rating + offset, labels=upper)
        self.lp.add_constraint_block(f"{prefix}_min", coeffs, ">=", -rating + offset, labels=lower)
        for k, hi, lo in zip(branch_ids, upper, lower):
            self._row_branch[hi] = k
            self._row_branch[lo] = k

    def binding_branches(self, solution: LpSolution, prefix: str) -> List[int]:
        """Branches whose ``prefix`` rows bind at the optimum."""
        found = {
            self._row_branch[label]
            for label in solution.binding_labels()
            if label.startswith(f"{prefix}_") and label in self._row_branch
        }
        return sorted(found)

    def solve(self, backend: Optional[str] = None) -> LpSolution:
        return solve(self.lp, backend=backend, config=self.config)

    def to_dispatch(self, solution: LpSolution) -> DispatchSolution:
        """Wrap an LP outcome as a dispatch with control-room flows."""
        generator_ids = [int(g) for g in self.net.generator_ids]
        branch_ids = [int(k) for k in self.net.branch_ids]
        if not solution.is_optimal:
            return DispatchSolution(
                status=solution.status,
                generator_ids=generator_ids,
                branch_ids=branch_ids,
                message=solution.message or f"{self.lp.name} is {solution.status}",
            )
        p_g = solution.x[self.p]
        return DispatchSolution(
            status="optimal",
            generator_ids=generator_ids,
            p_g=p_g,
            total_cost=float(self.net.costs @ p_g),
            branch_ids=branch_ids,
            control_room_flows=self.ptdf.flows(self.net.bus_injections(p_g, self.loads)),
            binding_branches=self.binding_branches(solution, "flow"),
            basis=solution.basis,
            message=solution.message,
        )


def solve_sced(net: Network, ptdf: PtdfMatrix, loads: np.ndarray, backend: Optional[str] = None,
               config: Optional[Config] = None) -> DispatchSolution:
    """Cost-minimal dispatch for the given (possibly contaminated) loads."""
    model = DispatchModel(net, ptdf, loads, config)
    dispatch = model.to_dispatch(model.solve(backend))
    if not dispatch.is_optimal:
        get_logger().warning(f"SCED {dispatch.status}: {dispatch.message}", "sced")
    return dispatch


def physical_flows(net: Network, ptdf: PtdfMatrix, p_g: np.ndarray,
                   actual_loads: np.ndarray) -> np.ndarray:
    """Flows realized on the wires: the operator's dispatch against the true loads."""
    return ptdf.flows(net.bus_injections(np.asarray(p_g, dtype=float), actual_loads))


def merit_order_dispatch(net: Network, loads: np.ndarray) -> np.ndarray:
    """Unconstrained stack fill: cheapest units first, ties by generator order."""
    loads = check_loads(net, loads)
    p = net.p_min.copy()
    remaining = float(loads.sum() - p.sum())
    if remaining < -1e-9:
        raise NetworkValidationError("minimum generation exceeds total load")
    for g in np.lexsort((np.arange(net.n_generators), net.costs)):
        take = min(net.p_max[g] - p[g], remaining)
        p[g] += take
        remaining -= take
        if remaining <= 0:
            break
    if remaining > 1e-9:
        raise NetworkValidationError(f"load exceeds generation capacity by {remaining:.3f} MW")
    return p


def dispatch_table(net: Network, dispatch: DispatchSolution) -> pd.DataFrame:
    """One row per generator and per branch, plus a total-cost row."""
    records = []
    if dispatch.is_optimal:
        for g, gid in enumerate(dispatch.generator_ids):
            records.append({
                "element": "generator", "id": gid, "mw": float(dispatch.p_g[g]),
                "limit_mw": float(net.p_max[g]), "binding": bool(
                    np.isclose(dispatch.p_g[g], net.p_max[g]) or np.isclose(dispatch.p_g[g], net.p_min[g])
                ),
            })
        binding = set(dispatch.binding_branches)
        for k, bid in enumerate(dispatch.branch_ids):
            rating = float(net.ratings[k])
            records.append({
                "element": "branch", "id": bid, "mw": float(dispatch.control_room_flows[k]),
                "limit_mw": rating if np.isfinite(rating) else None, "binding": bid in binding,
            })
    records.append({
        "element": "total_cost", "id": None, "mw": dispatch.total_cost, "limit_mw": None, "binding": None,
    })
    return pd.DataFrame.from_records(records, columns=["element", "id", "mw", "limit_mw", "binding"])


def write_dispatch_report(net: Network, dispatch: DispatchSolution, path: Union[str, Path],
                          format: str = "csv", logger: Optional[EmsGuardLogger] = None) -> Path:
    """Write the dispatch as CSV (table) or JSON (full solution)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "json":
        document = json.loads(dispatch.model_dump_json())
        document["case"] = net.name
        path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    else:
        dispatch_table(net, dispatch).to_csv(path, index=False, float_format="%.6f")
    (logger or get_logger()).debug(f"dispatch report written to {path}", "sced")
    return path
