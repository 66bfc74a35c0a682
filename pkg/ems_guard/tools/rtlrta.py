"""Real-time LR threat analysis: per-asset signatures, NPDSB indices and detection."""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.config import Config, get_config
from ..core.exceptions import DetectionError, DimensionMismatchError
from ..core.logger import EmsGuardLogger, get_logger
from ..core.models import AssetSignature, CalibrationRow, DetectionReport, Network
from .attacks import direction_sign, evaluate_attack, min_alpha, sensitive_buses, worst_case_attack
from .netcase import case_hash
from .ptdf import PtdfMatrix
from .sced import check_loads, solve_sced

Snapshot = Tuple[str, np.ndarray, np.ndarray]


def build_signature(net: Network, ptdf: PtdfMatrix, D: np.ndarray, target: int,
                    alpha_cap: Optional[float] = None, sign: Optional[int] = None,
                    backend: Optional[str] = None, config: Optional[Config] = None) -> AssetSignature:
    """Start-point alpha, reference signs and sensitive ordering of one asset (no threshold yet)."""
    config = config or get_config()
    cap = config.alpha_cap if alpha_cap is None else alpha_cap
    D = check_loads(net, D, "forecast loads")
    sign = sign if sign is not None else direction_sign(net, ptdf, D, target, backend, config)
    order = sensitive_buses(net, ptdf, D, target, config.sensitivity_eps)

    reference = np.zeros(net.n_buses, dtype=int)
    worst = worst_case_attack(net, ptdf, D, target, cap, sign=sign, backend=backend, config=config)
    reference[order] = np.sign(worst.deviations[order]).astype(int)

    alpha_start = min_alpha(net, ptdf, D, target, 0.0, cap, sign, backend, config)
    if alpha_start is None:
        status = "not_vulnerable"
    elif alpha_start < config.startpoint_floor:
        status = "congested"
    else:
        status = "vulnerable"

    return AssetSignature(
        branch_id=target,
        status=status,
        direction_sign=int(sign),
        alpha_cap=cap,
        alpha_startpoint=alpha_start,
        reference_signs=reference,
        sensitive_order=order,
        tnsb=int(order.size),
    )


def npdsb(sig: AssetSignature, D: np.ndarray, L: np.ndarray) -> int:
    """Number of proper deviations at the asset's sensitive buses."""
    D = np.asarray(D, dtype=float)
    L = np.asarray(L, dtype=float)
    if D.shape != L.shape or D.shape != sig.reference_signs.shape:
        raise DimensionMismatchError("snapshot", sig.reference_signs.size, L.size)
    idx = sig.sensitive_order
    deviation = L[idx] - D[idx]
    magnitude = (sig.alpha_startpoint or 0.0) * D[idx]
    proper = (np.sign(deviation) == sig.reference_signs[idx]) & (np.abs(deviation) + 1e-9 >= magnitude)
    return int(np.count_nonzero(proper & (sig.reference_signs[idx] != 0)))


def calibrate_threshold(net: Network, ptdf: PtdfMatrix, D: np.ndarray, target: int,
                        alpha_cap: Optional[float] = None, margin: Optional[float] = None,
                        override: Optional[int] = None, signature: Optional[AssetSignature] = None,
                        backend: Optional[str] = None, config: Optional[Config] = None,
                        logger: Optional[EmsGuardLogger] = None) -> AssetSignature:
    """Sweep the pinned-bus count upward to find the weakest attack that still overflows.

    The ``d`` sensitive buses with the smallest |PTDF| are pinned; coarse steps
    locate the edge and a binary search refines it. The threshold is the NPDSB of
    that weakest attack scaled down by ``margin``.
    """
    config = config or get_config()
    logger = logger or get_logger()
    margin = config.threshold_margin if margin is None else margin
    D = check_loads(net, D, "forecast loads")
    sig = signature or build_signature(net, ptdf, D, target, alpha_cap, None, backend, config)
    if sig.status != "vulnerable":
        logger.calibration_summary(target, sig.alpha_startpoint, sig.tnsb, None, None)
        if sig.status == "congested":
            logger.warning(f"line {target} already sits at its limit in the base dispatch", "calibrate")
        return sig

    rating = net.branch(target).rating
    rows: Dict[int, CalibrationRow] = {}

    def measure(d: int) -> CalibrationRow:
        if d not in rows:
            attack = worst_case_attack(net, ptdf, D, target, sig.alpha_cap, pinned=sig.sensitive_order[:d],
                                       sign=sig.direction_sign, backend=backend, config=config)
            impact = evaluate_attack(net, ptdf, D, attack.deviations, target, backend, config)
            physical = impact.physical_flow
            rows[d] = CalibrationRow(
                line=target,
                d=d,
                control_room_flow=impact.control_room_flow,
                physical_flow=physical,
                npdsb=npdsb(sig, D, D + attack.deviations),
                flow_limit=rating,
                overflows=bool(
                    np.isfinite(physical) and sig.direction_sign * physical > rating + config.flow_tol
                ),
            )
        return rows[d]

    step = max(1, config.calibration_step)
    coarse = list(range(0, sig.tnsb, step)) + [sig.tnsb]
    last_hit, first_miss = None, None
    for d in coarse:
        if measure(d).overflows:
            last_hit = d
        else:
            first_miss = d
            break

    if last_hit is None:
        logger.warning(f"line {target}: attack at alpha {sig.alpha_cap} does not overflow", "calibrate")
        return sig.model_copy(update={"status": "not_vulnerable", "calibration_rows": [rows[0]]})
    if first_miss is None:
        first_miss = last_hit + 1

    while first_miss - last_hit > 1:
        mid = (last_hit + first_miss) // 2
        if measure(mid).overflows:
            last_hit = mid
        else:
            first_miss = mid

    weakest = rows[last_hit]
    threshold = override if override is not None else max(1, math.floor(weakest.npdsb * margin))
    threshold = min(threshold, sig.tnsb)
    logger.calibration_summary(target, sig.alpha_startpoint, sig.tnsb, last_hit, threshold)
    return sig.model_copy(update={
        "threshold": int(threshold),
        "weakest_d": last_hit,
        "weakest_npdsb": weakest.npdsb,
        "calibration_rows": [rows[d] for d in sorted(rows)],
    })


def screen_vulnerable(net: Network, ptdf: PtdfMatrix, D: np.ndarray, alpha_cap: Optional[float] = None,
                      branches: Optional[Sequence[int]] = None, parallel: int = 1,
                      backend: Optional[str] = None, config: Optional[Config] = None) -> List[AssetSignature]:
    """Signatures for rated branches (all of them unless ``branches`` is given), in branch order.

    Branches whose alpha-cap attack cannot overflow are returned as ``not_vulnerable``
    without the start-point search.
    """
    config = config or get_config()
    logger = get_logger()
    cap = config.alpha_cap if alpha_cap is None else alpha_cap
    D = check_loads(net, D, "forecast loads")
    base = solve_sced(net, ptdf, D, backend=backend, config=config)
    if not base.is_optimal:
        raise DetectionError(f"base dispatch on forecast loads is {base.status}")

    candidates = [int(k) for k in (branches if branches is not None else net.rated_branch_ids())]

    def screen(target: int) -> AssetSignature:
        k = net.branch_position(target)
        sign = 1 if base.control_room_flows[k] >= 0 else -1
        worst = worst_case_attack(net, ptdf, D, target, cap, sign=sign, backend=backend, config=config)
        impact = evaluate_attack(net, ptdf, D, worst.deviations, target, backend, config)
        reached = sign * impact.physical_flow >= net.ratings[k] - config.flow_tol
        if np.isfinite(impact.physical_flow) and reached:
            return build_signature(net, ptdf, D, target, cap, sign, backend, config)
        order = sensitive_buses(net, ptdf, D, target, config.sensitivity_eps)
        reference = np.zeros(net.n_buses, dtype=int)
        reference[order] = np.sign(worst.deviations[order]).astype(int)
        return AssetSignature(branch_id=target, status="not_vulnerable", direction_sign=sign, alpha_cap=cap,
                              reference_signs=reference, sensitive_order=order, tnsb=int(order.size))

    logger.stage_status("screen", "running", f"{len(candidates)} rated branches at alpha {cap}")
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            signatures = list(pool.map(screen, candidates))
    else:
        signatures = [screen(k) for k in candidates]
    found = [s.branch_id for s in signatures if s.status == "vulnerable"]
    logger.stage_status("screen", "done", f"vulnerable: {found or 'none'}")
    return signatures


def detect(snapshot_id: str, D: np.ndarray, L: np.ndarray, signatures: Sequence[AssetSignature],
           pool: Optional[ThreadPoolExecutor] = None) -> DetectionReport:
    """NPDSB of every asset for one snapshot; flags assets at or above their threshold."""
    start = time.perf_counter()
    if pool is not None:
        values = list(pool.map(lambda sig: npdsb(sig, D, L), signatures))
    else:
        values = [npdsb(sig, D, L) for sig in signatures]

    indices = {sig.branch_id: value for sig, value in zip(signatures, values)}
    thresholds = {sig.branch_id: int(sig.threshold) for sig in signatures if sig.vulnerable}
    flagged = sorted(k for k, threshold in thresholds.items() if indices[k] >= threshold)
    return DetectionReport(
        snapshot_id=snapshot_id,
        npdsb=indices,
        thresholds=thresholds,
        flagged=flagged,
        elapsed_ms=(time.perf_counter() - start) * 1000.0,
    )


def scan(snapshots: Iterable[Snapshot], signatures: Sequence[AssetSignature],
         parallel: int = 1, logger: Optional[EmsGuardLogger] = None) -> List[DetectionReport]:
    """Detection reports for a stream of ``(snapshot_id, D, L)`` snapshots."""
    logger = logger or get_logger()
    reports = []
    pool = ThreadPoolExecutor(max_workers=parallel) if parallel > 1 else None
    try:
        for snapshot_id, D, L in snapshots:
            report = detect(snapshot_id, D, L, signatures, pool)
            logger.detection_summary(report.snapshot_id, report.npdsb, report.flagged)
            reports.append(report)
    finally:
        if pool is not None:
            pool.shutdown()
    return reports


class SignatureCache:
    """Calibrated signatures on disk, keyed by case hash and alpha cap."""

    VERSION = 1

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    @staticmethod
    def key(net: Network, alpha_cap: float) -> str:
        return f"{case_hash(net)}:{alpha_cap:.6f}"

    def _read(self) -> Dict:
        if not self.path.exists():
            return {"version": self.VERSION, "entries": {}}
        try:
            document = json.loads(self.path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            get_logger().warning(f"ignoring unreadable signature cache {self.path}", "cache")
            return {"version": self.VERSION, "entries": {}}
        if document.get("version") != self.VERSION:
            return {"version": self.VERSION, "entries": {}}
        return document

    def load(self, net: Network, alpha_cap: float) -> Optional[List[AssetSignature]]:
        entry = self._read()["entries"].get(self.key(net, alpha_cap))
        if entry is None:
            return None
        return [AssetSignature.model_validate(item) for item in entry]

    def store(self, net: Network, alpha_cap: float, signatures: Sequence[AssetSignature]) -> None:
        document = self._read()
        document["entries"][self.key(net, alpha_cap)] = [
            json.loads(sig.model_dump_json()) for sig in signatures
        ]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(document, indent=1, sort_keys=True) + "\n", encoding="utf-8")
