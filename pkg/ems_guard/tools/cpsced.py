"""Corrective dispatch: actual-load estimation, physical flow limits and the enhanced EMS loop."""

from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from ..core.config import Config, get_config
from ..core.exceptions import DetectionError
from ..core.logger import get_logger
from ..core.models import (
    ActualLoadEstimate,
    AssetSignature,
    CpscedSolution,
    DetectionReport,
    DispatchSolution,
    EmsAudit,
    EmsIteration,
    Network,
)
from .attacks import worst_case_attack
from .ptdf import PtdfMatrix
from .rtlrta import detect
from .sced import DispatchModel, check_loads, physical_flows, solve_sced


class EmsStep(NamedTuple):
    report: DetectionReport
    solution: CpscedSolution
    audit: EmsAudit


def _signature_map(signatures: Sequence[AssetSignature]) -> Dict[int, AssetSignature]:
    return {sig.branch_id: sig for sig in signatures}


def _primary_target(net: Network, ptdf: PtdfMatrix, D: np.ndarray, L: np.ndarray,
                    flagged: Sequence[int], npdsb_values: Mapping[int, int],
                    dispatch: Optional[DispatchSolution], config: Config) -> int:
    best = max(npdsb_values[k] for k in flagged)
    tied = sorted(k for k in flagged if npdsb_values[k] == best)
    if len(tied) == 1:
        return tied[0]

    # relative overflow under the current dispatch, forecast loads standing in for actual ones
    dispatch = dispatch or solve_sced(net, ptdf, L, config=config)
    if not dispatch.is_optimal:
        return tied[0]
    flows = physical_flows(net, ptdf, dispatch.p_g, D)
    overflow = {k: abs(flows[net.branch_position(k)]) / net.branch(k).rating - 1.0 for k in tied}
    return min(tied, key=lambda k: (-overflow[k], k))


def estimate_actual_loads(net: Network, ptdf: PtdfMatrix, D: np.ndarray, L: np.ndarray,
                          flagged: Sequence[int], npdsb_values: Mapping[int, int],
                          signatures: Sequence[AssetSignature], alpha_cap: Optional[float] = None,
                          dispatch: Optional[DispatchSolution] = None, backend: Optional[str] = None,
                          config: Optional[Config] = None) -> ActualLoadEstimate:
    """Undo the worst-case attack on the primary target at buses that deviate beyond its start point.

    Buses outside psi keep their SE value. The total is re-balanced back to the SE
    total over psi, within each bus's plausible band ``|D_a - L| <= alpha_cap * D``.
    """
    config = config or get_config()
    logger = get_logger()
    if not flagged:
        raise DetectionError("actual-load estimation needs at least one flagged asset")
    D = check_loads(net, D, "forecast loads")
    L = check_loads(net, L, "SE loads")
    by_id = _signature_map(signatures)
    missing = [k for k in flagged if k not in by_id or k not in npdsb_values]
    if missing:
        raise DetectionError("flagged assets without signature or NPDSB value", missing)

    primary = _primary_target(net, ptdf, D, L, flagged, npdsb_values, dispatch, config)
    sig = by_id[primary]
    cap = sig.alpha_cap if alpha_cap is None else alpha_cap

    deviation = L - D
    psi = np.flatnonzero(np.abs(deviation) > (sig.alpha_startpoint or 0.0) * D)
    worst = worst_case_attack(net, ptdf, D, primary, cap, sign=sig.direction_sign,
                              backend=backend, config=config)

    loads = L.copy()
    loads[psi] = np.maximum(L[psi] - worst.deviations[psi], 0.0)

    residual = float(L.sum() - loads.sum())
    applied = 0.0
    if psi.size and abs(residual) > config.flow_tol:
        if residual > 0:
            headroom = L[psi] + cap * D[psi] - loads[psi]
        else:
            headroom = loads[psi] - np.maximum(L[psi] - cap * D[psi], 0.0)
        headroom = np.maximum(headroom, 0.0)
        available = float(headroom.sum())
        if available > 0:
            applied = np.sign(residual) * min(abs(residual), available)
            loads[psi] += applied * headroom / available
    unbalanced = residual - applied
    if abs(unbalanced) > config.flow_tol:
        logger.warning(f"estimated loads left {unbalanced:.4f} MW unbalanced after re-balancing", "estimate")
    elif abs(applied) > config.flow_tol:
        logger.debug(f"re-balanced {applied:.4f} MW over {psi.size} buses", "estimate")

    return ActualLoadEstimate(
        loads=loads,
        psi=[int(b) for b in net.bus_ids[psi]],
        primary_target=primary,
        rebalanced_mw=float(applied),
        unbalanced_mw=float(unbalanced) if abs(unbalanced) > config.flow_tol else 0.0,
    )


def _conflicting_set(net: Network, ptdf: PtdfMatrix, L: np.ndarray, estimate: ActualLoadEstimate,
                     active: List[int], backend: Optional[str], config: Config) -> List[int]:
    """Deletion filter: a minimal subset of physical limits that keeps the model infeasible."""
    base = DispatchModel(net, ptdf, L, config, name="cpsced")
    if not base.solve(backend).is_optimal:
        return []
    kept = list(active)
    for k in list(active):
        trial = [b for b in kept if b != k]
        model = DispatchModel(net, ptdf, L, config, name="cpsced")
        model.add_flow_limits("plfsc", trial, estimate.loads)
        if not model.solve(backend).is_optimal:
            kept = trial
    return kept


def solve_cpsced(net: Network, ptdf: PtdfMatrix, L: np.ndarray, estimate: ActualLoadEstimate,
                 active: Sequence[int], backend: Optional[str] = None,
                 config: Optional[Config] = None) -> CpscedSolution:
    """SCED over the SE loads plus physical flow limits over the estimated actual loads."""
    config = config or get_config()
    logger = get_logger()
    L = check_loads(net, L, "SE loads")
    activated = sorted({int(k) for k in active})
    unrated = [k for k in activated if not net.branch(k).is_rated]
    if unrated:
        logger.warning(f"no physical limit for unrated branches {unrated}", "cpsced")
        activated = [k for k in activated if k not in unrated]

    model = DispatchModel(net, ptdf, L, config, name="cpsced")
    model.add_flow_limits("plfsc", activated, estimate.loads)
    solution = model.solve(backend)
    dispatch = model.to_dispatch(solution)

    if not dispatch.is_optimal:
        conflicting = _conflicting_set(net, ptdf, L, estimate, activated, backend, config)
        logger.warning(f"CPSCED {dispatch.status}; conflicting physical limits {conflicting}", "cpsced")
        return CpscedSolution(**dict(dispatch), activated_plfsc=activated, conflicting=conflicting)

    flows = physical_flows(net, ptdf, dispatch.p_g, estimate.loads)
    return CpscedSolution(
        **dict(dispatch),
        activated_plfsc=activated,
        binding_plfsc=model.binding_branches(solution, "plfsc"),
        physical_flows={k: float(flows[net.branch_position(k)]) for k in activated},
    )


def _violations(net: Network, flows: np.ndarray, tol: float) -> List[int]:
    over = net.rated_mask & (np.abs(flows) > net.ratings + tol)
    return [int(k) for k in net.branch_ids[over]]


def enhanced_ems_step(net: Network, ptdf: PtdfMatrix, D: np.ndarray, L: np.ndarray,
                      signatures: Sequence[AssetSignature], snapshot_id: str = "snapshot",
                      alpha_cap: Optional[float] = None, backend: Optional[str] = None,
                      config: Optional[Config] = None) -> EmsStep:
    """Detect, estimate actual loads, then add physical limits until no rated branch overflows."""
    config = config or get_config()
    logger = get_logger()
    D = check_loads(net, D, "forecast loads")
    L = check_loads(net, L, "SE loads")

    report = detect(snapshot_id, D, L, signatures)
    logger.detection_summary(report.snapshot_id, report.npdsb, report.flagged)
    sced = solve_sced(net, ptdf, L, backend=backend, config=config)

    if not report.flagged:
        audit = EmsAudit(
            snapshot_id=snapshot_id, report=report, sced_cost=sced.total_cost,
            cpsced_cost=sced.total_cost, status=sced.status,
        )
        return EmsStep(report, CpscedSolution(**dict(sced)), audit)

    estimate = estimate_actual_loads(net, ptdf, D, L, report.flagged, report.npdsb, signatures,
                                     alpha_cap, sced, backend, config)
    rated = set(net.rated_branch_ids())
    active = sorted(set(report.flagged) & rated)
    before = (physical_flows(net, ptdf, sced.p_g, estimate.loads) if sced.is_optimal
              else np.full(net.n_branches, np.nan))
    violating_before = _violations(net, before, config.flow_tol) if sced.is_optimal else []

    history: List[EmsIteration] = []
    solution: Optional[CpscedSolution] = None
    remaining: List[int] = []
    status = "uncorrectable"
    for iteration in range(1, max(1, len(rated)) + 1):
        solution = solve_cpsced(net, ptdf, L, estimate, active, backend, config)
        if not solution.is_optimal:
            history.append(EmsIteration(iteration=iteration, activated=list(active), binding=[],
                                        violations=[], total_cost=solution.total_cost,
                                        status=solution.status))
            status = solution.status
            break

        after = physical_flows(net, ptdf, solution.p_g, estimate.loads)
        violations = _violations(net, after, config.flow_tol)
        history.append(EmsIteration(iteration=iteration, activated=list(active),
                                    binding=solution.binding_plfsc, violations=violations,
                                    total_cost=solution.total_cost, status=solution.status))
        if not violations:
            status = "optimal"
            break
        new = [k for k in violations if k not in active]
        if not new:
            remaining = violations
            break
        logger.info(f"{snapshot_id}: activating physical limits on {new}", "ems")
        active = sorted(set(active) | set(new))
    else:
        remaining = violations

    if solution is None:
        raise DetectionError("enhanced EMS loop ran no CPSCED solve")
    solution = solution.model_copy(update={
        "iterations": len(history),
        "remaining_violations": remaining,
        "status": status,
    })
    if status == "uncorrectable":
        logger.error(f"{snapshot_id}: physical overflow remains on {remaining}", "ems")
    logger.stage_status("ems", "done" if status == "optimal" else "error",
                        f"{snapshot_id}: {len(history)} CPSCED solve(s), activated {active}")

    final = (physical_flows(net, ptdf, solution.p_g, estimate.loads) if solution.p_g.size
             else np.full(net.n_branches, np.nan))
    watched = sorted(set(active) | set(violating_before))
    audit = EmsAudit(
        snapshot_id=snapshot_id,
        report=report,
        psi_size=len(estimate.psi),
        primary_target=estimate.primary_target,
        iterations=history,
        sced_cost=sced.total_cost,
        cpsced_cost=solution.total_cost,
        status=status,
        physical_flows_before={k: float(before[net.branch_position(k)]) for k in watched},
        physical_flows_after={k: float(final[net.branch_position(k)]) for k in watched},
    )
    return EmsStep(report, solution, audit)
