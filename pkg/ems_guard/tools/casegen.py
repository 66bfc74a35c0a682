"""Synthetic two-area test grids for desk-scale experiments."""

from typing import Dict, List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np

from ..core.config import Config, get_config
from ..core.exceptions import NetworkValidationError
from ..core.logger import get_logger
from ..core.models import Branch, Bus, Generator, Network
from .attacks import evaluate_attack, worst_case_attack
from .ptdf import compute_ptdf
from .sced import solve_sced

# rating used while trying out a tie that must not bind yet
_TRIAL_RATING = 1e6
# binding tie rating as a share of its unconstrained base flow
_BINDING_SHARE = 0.8


class TwoAreaCase(NamedTuple):
    network: Network
    binding_tie: int
    targets: List[int]
    free_tie: int


def _area_edges(rng: np.random.Generator, area: np.ndarray) -> List[Tuple[int, int]]:
    """Ring over the area plus random chords."""
    n = len(area)
    edges = [(int(area[i]), int(area[(i + 1) % n])) for i in range(n)]
    seen: Set[Tuple[int, int]] = {tuple(sorted(e)) for e in edges}  # type: ignore[misc]
    chords = 0
    while chords < n // 3:
        a, b = (int(v) for v in rng.choice(area, 2, replace=False))
        pair = (min(a, b), max(a, b))
        if pair in seen:
            continue
        seen.add(pair)
        edges.append((a, b))
        chords += 1
    return edges


def two_area_case(n_buses: int = 120, seed: int = 2019,
                  alpha_targets: Sequence[float] = (0.05, 0.06),
                  alpha_cap: Optional[float] = None, config: Optional[Config] = None) -> TwoAreaCase:
    """Two meshed areas with equal load joined by four tie lines.

    Area A holds the cheap unit, area B the expensive one at the reference bus,
    so A exports over the ties. One tie is rated to bind in the base dispatch,
    one per entry of ``alpha_targets`` is rated so that its start-point alpha
    lands on that value, and the last tie stays unrated. Internal lines are
    unrated. Branch ids of the ties follow the internal lines.
    """
    config = config or get_config()
    logger = get_logger()
    cap = config.alpha_cap if alpha_cap is None else alpha_cap
    if n_buses < 12:
        raise NetworkValidationError("a two-area case needs at least 12 buses")
    if any(not 0 < a < cap for a in alpha_targets):
        raise NetworkValidationError(f"target alphas must lie in (0, {cap})")
    if len(alpha_targets) > 2:
        raise NetworkValidationError("at most two target ties are supported")

    rng = np.random.default_rng(seed)
    n_a = n_buses // 2
    bus_ids = np.arange(1, n_buses + 1)
    areas = [bus_ids[:n_a], bus_ids[n_a:]]
    gen_bus_a, reference = 1, n_a + 1

    zero: Set[int] = set()
    for area, gen_bus in zip(areas, (gen_bus_a, reference)):
        candidates = area[area != gen_bus]
        zero.update(int(b) for b in rng.choice(candidates, 2, replace=False))
    loads = rng.uniform(10.0, 30.0, n_buses)
    loads[np.isin(bus_ids, list(zero))] = 0.0
    loads[n_a:] *= loads[:n_a].sum() / loads[n_a:].sum()

    edges: List[Tuple[int, int, float]] = []
    for area in areas:
        edges.extend((a, b, float(rng.uniform(0.005, 0.015))) for a, b in _area_edges(rng, area))
    n_internal = len(edges)
    ends_a = rng.choice(areas[0], 4, replace=False)
    ends_b = rng.choice(areas[1], 4, replace=False)
    edges.extend((int(a), int(b), float(rng.uniform(0.08, 0.12))) for a, b in zip(ends_a, ends_b))
    ties = list(range(n_internal + 1, n_internal + 5))
    binding_tie, targets, free_tie = ties[0], ties[1:1 + len(alpha_targets)], ties[-1]

    buses = [
        Bus(id=int(b), load_mw=float(loads[i]), name=f"{'A' if i < n_a else 'B'}{b}")
        for i, b in enumerate(bus_ids)
    ]
    capacity = 3.0 * float(loads.sum())
    generators = [
        Generator(id=1, bus=gen_bus_a, p_min=0.0, p_max=capacity, cost=10.0),
        Generator(id=2, bus=reference, p_min=0.0, p_max=capacity, cost=40.0),
    ]

    def build(ratings: Dict[int, float]) -> Network:
        branches = [
            Branch(id=k, from_bus=a, to_bus=b, reactance=x, rating=ratings.get(k))
            for k, (a, b, x) in enumerate(edges, start=1)
        ]
        return Network(name=f"two_area_{n_buses}", buses=buses, branches=branches,
                       generators=generators, reference_bus=reference)

    D = loads.copy()
    net = build({})
    ptdf = compute_ptdf(net, config)

    base = solve_sced(net, ptdf, D, config=config)
    m = net.branch_position(binding_tie)
    ratings = {binding_tie: max(_BINDING_SHARE * abs(float(base.control_room_flows[m])), 1.0)}
    for _ in range(20):
        dispatch = solve_sced(build(ratings), ptdf, D, config=config)
        if dispatch.is_optimal and binding_tie in dispatch.binding_branches:
            break
        ratings[binding_tie] *= _BINDING_SHARE
    else:
        raise NetworkValidationError(f"could not make tie {binding_tie} bind")

    for target, alpha in zip(targets, alpha_targets):
        trial = build({**ratings, target: _TRIAL_RATING})
        k = trial.branch_position(target)
        dispatch = solve_sced(trial, ptdf, D, config=config)
        f0 = float(dispatch.control_room_flows[k])
        sign = 1 if f0 >= 0 else -1
        attack = worst_case_attack(trial, ptdf, D, target, cap, sign=sign, config=config)
        impact = evaluate_attack(trial, ptdf, D, attack.deviations, target, config=config)
        gain = sign * (impact.physical_flow - f0) / cap
        if not gain > 0:
            raise NetworkValidationError(f"tie {target} gains no flow under attack (seed {seed})")
        ratings[target] = abs(f0) + alpha * gain

    network = build(ratings)
    logger.debug(
        f"{network.name}: binding tie {binding_tie}, targets {targets}, free tie {free_tie}, "
        f"ratings {{{', '.join(f'{k}: {v:.2f}' for k, v in sorted(ratings.items()))}}}",
        "casegen",
    )
    return TwoAreaCase(network, binding_tie, targets, free_tie)
