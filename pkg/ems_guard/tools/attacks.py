"""Load-redistribution attacks and bounded measurement noise.

All deviations are load deviations in bus order: the contaminated snapshot is
``L = D + deviations``. A worst-case attack on branch ``k`` maximizes
``sign * PTDF_k @ deviations`` where ``sign`` is the direction of the
pre-attack flow on ``k``. That masks the control-room flow on ``k``, so the
operator dispatches more flow over it than the wires can carry.
"""

import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from ..core.config import Config, get_config
from ..core.exceptions import AttackConfigurationError, CaseParseError
from ..core.logger import get_logger
from ..core.models import (
    AttackImpact,
    AttackVector,
    Network,
    NoiseFamily,
    NoiseVector,
    Scenario,
    ScenarioKind,
)
from .lp import LinearProgram, solve
from .ptdf import PtdfMatrix
from .sced import check_loads, physical_flows, solve_sced

SEED_STREAMS: Dict[str, int] = {"attack": 0, "gaussian": 1, "cauchy": 2, "ems": 3}


def derive_seed(master_seed: int, stream: Union[str, int], index: int) -> int:
    """Per-scenario seed from the master seed, a named stream and the scenario index."""
    key = SEED_STREAMS[stream] if isinstance(stream, str) else int(stream)
    sequence = np.random.SeedSequence(int(master_seed), spawn_key=(key, int(index)))
    return int(sequence.generate_state(1)[0])


def _check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise AttackConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    return float(alpha)


def sensitive_buses(net: Network, ptdf: PtdfMatrix, D: np.ndarray, target: int,
                    eps: Optional[float] = None) -> np.ndarray:
    """Load buses whose |PTDF| toward ``target`` exceeds ``eps``, by ascending |PTDF|."""
    eps = get_config().sensitivity_eps if eps is None else eps
    row = ptdf.row(target)
    D = np.asarray(D, dtype=float)
    candidates = np.flatnonzero((D > 0) & (np.abs(row) > eps) & ~net.zero_injection_mask)
    return candidates[np.argsort(np.abs(row[candidates]), kind="stable")]


def direction_sign(net: Network, ptdf: PtdfMatrix, D: np.ndarray, target: int,
                   backend: Optional[str] = None, config: Optional[Config] = None) -> int:
    """Sign of the target's flow in the base dispatch on forecast loads (+1 for zero flow)."""
    base = solve_sced(net, ptdf, D, backend=backend, config=config)
    if not base.is_optimal:
        raise AttackConfigurationError(f"base dispatch on forecast loads is {base.status}")
    flow = base.control_room_flows[net.branch_position(target)]
    return 1 if flow >= 0 else -1


def worst_case_attack(net: Network, ptdf: PtdfMatrix, D: np.ndarray, target: int, alpha: float,
                      pinned: Optional[Sequence[int]] = None, sign: Optional[int] = None,
                      backend: Optional[str] = None, config: Optional[Config] = None) -> AttackVector:
    """Stealthy deviation vector that maximally masks the flow on ``target``.

    ``pinned`` holds bus positions forced to zero deviation.
    """
    config = config or get_config()
    alpha = _check_alpha(alpha)
    D = check_loads(net, D, "forecast loads")
    if not net.branch(target).is_rated:
        raise AttackConfigurationError(f"branch {target} has no finite rating")
    sign = sign if sign is not None else direction_sign(net, ptdf, D, target, backend, config)
    pinned_set = {int(i) for i in (pinned if pinned is not None else [])}

    row = ptdf.row(target)
    free = np.array(
        [
            i
            for i in sensitive_buses(net, ptdf, D, target, config.sensitivity_eps)
            if int(i) not in pinned_set
        ],
        dtype=int,
    )
    deviations = np.zeros(net.n_buses)
    zeroed = sorted(int(net.bus_ids[i]) for i in pinned_set)

    if alpha == 0 or free.size == 0:
        if free.size == 0 and not pinned_set:
            get_logger().warning(f"branch {target} has no sensitive buses; attack is empty", "attacks")
        return AttackVector(target_branch=target, alpha=alpha, deviations=deviations,
                            zeroed_buses=zeroed, direction_sign=int(sign), gain_mw=0.0)

    bound = alpha * D[free]
    lp = LinearProgram(f"attack[{target}]", "maximize")
    x = lp.add_variables("dev", free.size, -bound, bound, sign * row[free])
    lp.add_constraint_block("net_zero", np.ones((1, free.size)), "==", 0.0, labels=["net_zero"], columns=x)
    solution = solve(lp, backend=backend, config=config)
    if not solution.is_optimal:
        # dev = 0 is always feasible, so this is a solver failure
        raise AttackConfigurationError(f"attack LP on branch {target} returned {solution.status}")

    deviations[free] = np.clip(solution.x[x], -bound, bound)
    return AttackVector(
        target_branch=target,
        alpha=alpha,
        deviations=deviations,
        zeroed_buses=zeroed,
        direction_sign=int(sign),
        gain_mw=float(sign * row @ deviations),
    )


def random_attack(net: Network, ptdf: PtdfMatrix, D: np.ndarray, target: int, alpha: float,
                  d: int, seed: int, sign: Optional[int] = None, backend: Optional[str] = None,
                  config: Optional[Config] = None) -> AttackVector:
    """Worst-case attack with ``d`` sensitive buses drawn at random and pinned to zero."""
    config = config or get_config()
    sensitive = sensitive_buses(net, ptdf, D, target, config.sensitivity_eps)
    if not 0 <= d <= sensitive.size:
        raise AttackConfigurationError(
            f"d={d} outside [0, {sensitive.size}] sensitive buses of branch {target}"
        )
    rng = np.random.default_rng(seed)
    pinned = np.sort(rng.choice(sensitive, size=d, replace=False)) if d else np.zeros(0, dtype=int)
    attack = worst_case_attack(net, ptdf, D, target, alpha, pinned=pinned, sign=sign,
                               backend=backend, config=config)
    return attack.model_copy(update={"seed": int(seed)})


def evaluate_attack(net: Network, ptdf: PtdfMatrix, D: np.ndarray, deviations: np.ndarray,
                    target: int, backend: Optional[str] = None,
                    config: Optional[Config] = None) -> AttackImpact:
    """Dispatch on ``D + deviations``, then measure the target's flow against the true loads ``D``."""
    D = np.asarray(D, dtype=float)
    L = check_loads(net, D + np.asarray(deviations, dtype=float), "contaminated loads")
    k = net.branch_position(target)
    rating = float(net.ratings[k])
    dispatch = solve_sced(net, ptdf, L, backend=backend, config=config)
    if not dispatch.is_optimal:
        return AttackImpact(target_branch=target, control_room_flow=np.nan, physical_flow=np.nan,
                            rating=rating, overflow_fraction=np.nan, sced_status=dispatch.status,
                            sced_cost=np.nan)

    physical = float(physical_flows(net, ptdf, dispatch.p_g, D)[k])
    return AttackImpact(
        target_branch=target,
        control_room_flow=float(dispatch.control_room_flows[k]),
        physical_flow=physical,
        rating=rating,
        overflow_fraction=abs(physical) / rating - 1.0,
        sced_status=dispatch.status,
        sced_cost=dispatch.total_cost,
    )


def min_alpha(net: Network, ptdf: PtdfMatrix, D: np.ndarray, target: int, overflow: float = 0.0,
              alpha_cap: Optional[float] = None, sign: Optional[int] = None,
              backend: Optional[str] = None, config: Optional[Config] = None) -> Optional[float]:
    """Smallest alpha whose worst-case attack drives the target to ``(1 + overflow) * rating``.

    Returns None when even ``alpha_cap`` is not enough (the asset is not vulnerable).
    The overflow grows linearly in alpha between dispatch breakpoints, so a
    false-position search converges in a handful of re-solves.
    """
    config = config or get_config()
    if overflow < 0:
        raise AttackConfigurationError("overflow fraction must be >= 0")
    cap = _check_alpha(config.alpha_cap if alpha_cap is None else alpha_cap)
    D = check_loads(net, D, "forecast loads")
    rating = net.branch(target).rating
    if not np.isfinite(rating):
        raise AttackConfigurationError(f"branch {target} has no finite rating")
    sign = sign if sign is not None else direction_sign(net, ptdf, D, target, backend, config)
    limit = (1.0 + overflow) * rating

    def excess(alpha: float) -> float:
        attack = worst_case_attack(net, ptdf, D, target, alpha, sign=sign, backend=backend, config=config)
        impact = evaluate_attack(net, ptdf, D, attack.deviations, target, backend, config)
        if not np.isfinite(impact.physical_flow):
            return -np.inf
        return sign * impact.physical_flow - limit

    lo, h_lo = 0.0, excess(0.0)
    if h_lo >= -config.flow_tol:
        return 0.0
    hi, h_hi = cap, excess(cap)
    if h_hi < 0:
        return None

    side = 0
    for _ in range(200):
        if np.isfinite(h_lo) and np.isfinite(h_hi) and h_hi != h_lo:
            alpha = lo - h_lo * (hi - lo) / (h_hi - h_lo)
            if not lo < alpha < hi:
                alpha = 0.5 * (lo + hi)
        else:
            alpha = 0.5 * (lo + hi)
        h = excess(alpha)
        if abs(h) <= config.flow_tol:
            return float(alpha)
        # Illinois step: halve the stale endpoint when the same side moves twice
        if h < 0:
            lo, h_lo = alpha, h
            if side == -1:
                h_hi *= 0.5
            side = -1
        else:
            hi, h_hi = alpha, h
            if side == 1:
                h_lo *= 0.5
            side = 1
        if hi - lo <= config.alpha_tol:
            break
    return float(hi)


def draw_truncated(rng: np.random.Generator, family: NoiseFamily, scale: np.ndarray,
                   bound: np.ndarray) -> np.ndarray:
    """Zero-centred draws rejected and redrawn until ``|x| <= bound`` elementwise."""
    scale = np.atleast_1d(np.asarray(scale, dtype=float))
    bound = np.broadcast_to(np.asarray(bound, dtype=float), scale.shape)
    out = np.zeros(scale.shape)
    pending = np.flatnonzero(scale > 0)
    while pending.size:
        if family == "gaussian":
            draws = rng.normal(0.0, scale[pending])
        elif family == "cauchy":
            draws = scale[pending] * rng.standard_cauchy(pending.size)
        else:
            raise AttackConfigurationError(f"unknown noise family '{family}'")
        accepted = np.abs(draws) <= bound[pending]
        out[pending[accepted]] = draws[accepted]
        pending = pending[~accepted]
    return out


def gen_noise(net: Network, D: np.ndarray, alpha: float, family: NoiseFamily, seed: int,
              config: Optional[Config] = None) -> NoiseVector:
    """Bounded, nearly net-zero noise with the same per-bus box as an attack."""
    config = config or get_config()
    alpha = _check_alpha(alpha)
    D = check_loads(net, D, "forecast loads")
    rng = np.random.default_rng(seed)

    bound = alpha * D
    bound[net.zero_injection_mask] = 0.0
    deviations = draw_truncated(rng, family, bound / config.noise_spread, bound)

    tolerance = config.noise_net_tol * D.sum()
    imbalance = deviations.sum()
    if abs(imbalance) > tolerance:
        excess = imbalance - np.sign(imbalance) * tolerance
        headroom = deviations + bound if excess > 0 else bound - deviations
        deviations -= excess * headroom / headroom.sum()
        deviations = np.clip(deviations, -bound, bound)

    return NoiseVector(family=family, alpha=alpha, deviations=deviations, seed=int(seed))


# ---------------------------------------------------------------------------
# Scenario files (JSON lines)
# ---------------------------------------------------------------------------


def to_scenario(net: Network, vector: Union[AttackVector, NoiseVector], scenario_id: int) -> Scenario:
    """Sparse JSON-lines record of an attack or noise vector."""
    nonzero = np.flatnonzero(vector.deviations)
    deviations = {int(net.bus_ids[i]): float(vector.deviations[i]) for i in nonzero}
    if isinstance(vector, AttackVector):
        return Scenario(scenario_id=scenario_id, kind="attack", seed=vector.seed,
                        target=vector.target_branch, alpha=vector.alpha, d=vector.d,
                        deviations=deviations)
    kind: ScenarioKind = vector.family
    return Scenario(scenario_id=scenario_id, kind=kind, seed=vector.seed, alpha=vector.alpha,
                    deviations=deviations)


def scenario_deviations(net: Network, scenario: Scenario) -> np.ndarray:
    """Dense bus-order deviations of a scenario record."""
    deviations = np.zeros(net.n_buses)
    for bus_id, value in scenario.deviations.items():
        deviations[net.bus_position(bus_id)] = value
    return deviations


def write_scenarios(path: Union[str, Path], scenarios: Iterable[Scenario]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as stream:
        for scenario in scenarios:
            stream.write(scenario.model_dump_json() + "\n")
    return path


def read_scenarios(path: Union[str, Path]) -> List[Scenario]:
    """Read a JSON-lines scenario file; blank lines are ignored."""
    scenarios: List[Scenario] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CaseParseError(f"cannot read scenario file {path}: {e.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            scenarios.append(Scenario.model_validate(json.loads(line)))
        except json.JSONDecodeError as e:
            raise CaseParseError(f"invalid JSON: {e.msg}", line=lineno) from None
        except ValidationError as e:
            first = e.errors()[0]
            raise CaseParseError(first["msg"], line=lineno,
                                 field=".".join(str(p) for p in first["loc"])) from None
    return scenarios
