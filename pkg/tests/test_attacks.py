"""Tests for worst-case and random LR attacks, noise generation and scenario files."""

import numpy as np
import pytest
from scipy.stats import truncnorm

from ems_guard.core.exceptions import AttackConfigurationError, CaseParseError
from ems_guard.tools.attacks import (
    derive_seed,
    direction_sign,
    draw_truncated,
    evaluate_attack,
    gen_noise,
    min_alpha,
    random_attack,
    read_scenarios,
    scenario_deviations,
    sensitive_buses,
    to_scenario,
    worst_case_attack,
    write_scenarios,
)
from ems_guard.core.models import Branch, Bus, Generator, Network
from ems_guard.tools.ptdf import compute_ptdf

TARGET = 1


def _greedy_gain(weights: np.ndarray, bounds: np.ndarray) -> float:
    """Best ``w @ x`` with ``|x| <= bounds`` and ``sum(x) == 0``: move load from low to high weights."""
    order = np.argsort(weights)
    up = bounds[order].astype(float).copy()
    down = bounds[order].astype(float).copy()
    w = weights[order]
    lo, hi = 0, len(w) - 1
    gain = 0.0
    while lo < hi and w[hi] > w[lo]:
        step = min(up[hi], down[lo])
        gain += step * (w[hi] - w[lo])
        up[hi] -= step
        down[lo] -= step
        if up[hi] <= 1e-12:
            hi -= 1
        if down[lo] <= 1e-12:
            lo += 1
    return gain


def _random_grid(seed: int) -> Network:
    """Connected random grid of 4 to 30 buses; bus 1 hosts the only unit."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 31))
    edges = [(int(rng.integers(1, b)), b) for b in range(2, n + 1)]
    for _ in range(int(rng.integers(0, n))):
        a, b = sorted(int(v) for v in rng.choice(np.arange(1, n + 1), 2, replace=False))
        if (a, b) not in edges:
            edges.append((a, b))
    loads = rng.uniform(5.0, 60.0, n)
    loads[0] = 0.0
    return Network(
        name=f"random{seed}",
        buses=[Bus(id=i + 1, load_mw=float(loads[i])) for i in range(n)],
        branches=[
            Branch(id=k + 1, from_bus=a, to_bus=b, reactance=float(rng.uniform(0.02, 0.3)), rating=500.0)
            for k, (a, b) in enumerate(edges)
        ],
        generators=[Generator(id=1, bus=1, p_max=float(loads.sum()) * 2, cost=10.0)],
        reference_bus=1,
    )


@pytest.fixture(scope="module")
def setup(case14):
    ptdf = compute_ptdf(case14)
    D = case14.forecast_loads
    return case14, ptdf, D


def test_zero_alpha_gives_empty_attack(setup):
    net, ptdf, D = setup
    attack = worst_case_attack(net, ptdf, D, TARGET, 0.0)
    assert not attack.deviations.any()
    assert attack.gain_mw == 0.0


@pytest.mark.parametrize("target", [1, 3, 7])
def test_worst_case_matches_greedy(setup, target):
    net, ptdf, D = setup
    sign = direction_sign(net, ptdf, D, target)
    attack = worst_case_attack(net, ptdf, D, target, 0.1, sign=sign)
    buses = sensitive_buses(net, ptdf, D, target)
    oracle = _greedy_gain(sign * ptdf.row(target)[buses], 0.1 * D[buses])
    assert attack.gain_mw == pytest.approx(oracle, rel=1e-6, abs=1e-6)


def test_backends_find_the_same_gain(setup):
    net, ptdf, D = setup
    highs = worst_case_attack(net, ptdf, D, TARGET, 0.08, backend="highs")
    simplex = worst_case_attack(net, ptdf, D, TARGET, 0.08, backend="simplex")
    assert highs.gain_mw == pytest.approx(simplex.gain_mw, abs=1e-6)


def test_gain_is_linear_in_alpha(setup):
    net, ptdf, D = setup
    small = worst_case_attack(net, ptdf, D, TARGET, 0.04)
    large = worst_case_attack(net, ptdf, D, TARGET, 0.08)
    assert large.gain_mw == pytest.approx(2.0 * small.gain_mw, rel=1e-6)


def test_stealth_constraints(setup):
    net, ptdf, D = setup
    alpha = 0.1
    attack = worst_case_attack(net, ptdf, D, TARGET, alpha)
    dev = attack.deviations
    assert dev.sum() == pytest.approx(0.0, abs=1e-6)
    assert np.all(np.abs(dev) <= alpha * D + 1e-9)
    assert not dev[net.zero_injection_mask].any()
    outside = np.ones(net.n_buses, dtype=bool)
    outside[sensitive_buses(net, ptdf, D, TARGET)] = False
    assert not dev[outside].any()
    assert net.is_zero_injection(7) and dev[net.bus_position(7)] == 0.0


def test_pinning_never_helps(setup):
    net, ptdf, D = setup
    order = sensitive_buses(net, ptdf, D, TARGET)
    gains = [
        worst_case_attack(net, ptdf, D, TARGET, 0.1, pinned=order[-d:] if d else None).gain_mw
        for d in range(order.size + 1)
    ]
    assert all(b <= a + 1e-9 for a, b in zip(gains, gains[1:]))
    assert gains[-1] == 0.0


def test_all_sensitive_buses_pinned(setup):
    net, ptdf, D = setup
    tnsb = sensitive_buses(net, ptdf, D, TARGET).size
    attack = random_attack(net, ptdf, D, TARGET, 0.1, tnsb, seed=3)
    assert not attack.deviations.any()
    assert attack.d == tnsb


def test_random_attack_is_seeded(setup):
    net, ptdf, D = setup
    first = random_attack(net, ptdf, D, TARGET, 0.1, 3, seed=11)
    again = random_attack(net, ptdf, D, TARGET, 0.1, 3, seed=11)
    assert first.zeroed_buses == again.zeroed_buses
    np.testing.assert_array_equal(first.deviations, again.deviations)
    assert first.seed == 11
    assert len(first.zeroed_buses) == 3
    for bus in first.zeroed_buses:
        assert first.deviations[net.bus_position(bus)] == 0.0


def test_random_attack_rejects_large_d(setup):
    net, ptdf, D = setup
    tnsb = sensitive_buses(net, ptdf, D, TARGET).size
    with pytest.raises(AttackConfigurationError, match="outside"):
        random_attack(net, ptdf, D, TARGET, 0.1, tnsb + 1, seed=1)


def test_alpha_out_of_range(setup):
    net, ptdf, D = setup
    with pytest.raises(AttackConfigurationError, match="alpha"):
        worst_case_attack(net, ptdf, D, TARGET, 1.5)


def test_unrated_target(two_area, two_area_ptdf):
    net = two_area.network
    with pytest.raises(AttackConfigurationError, match="no finite rating"):
        worst_case_attack(net, two_area_ptdf, net.forecast_loads, 1, 0.1)


def test_evaluate_without_deviation(setup):
    net, ptdf, D = setup
    impact = evaluate_attack(net, ptdf, D, np.zeros(net.n_buses), TARGET)
    assert impact.sced_status == "optimal"
    assert impact.physical_flow == pytest.approx(impact.control_room_flow)
    assert impact.rating == 120.0


def test_attack_raises_physical_flow(two_area, two_area_ptdf):
    net = two_area.network
    D = net.forecast_loads
    target = two_area.targets[0]
    before = evaluate_attack(net, two_area_ptdf, D, np.zeros(net.n_buses), target)
    attack = worst_case_attack(net, two_area_ptdf, D, target, 0.1)
    after = evaluate_attack(net, two_area_ptdf, D, attack.deviations, target)
    sign = attack.direction_sign
    assert sign * after.physical_flow > sign * before.physical_flow
    assert after.overflows


@pytest.mark.parametrize("index, expected", [(0, 0.05), (1, 0.06)])
def test_min_alpha_recovers_generated_start_points(two_area, two_area_ptdf, index, expected):
    net = two_area.network
    alpha = min_alpha(net, two_area_ptdf, net.forecast_loads, two_area.targets[index])
    assert alpha == pytest.approx(expected, abs=5e-3)


def test_min_alpha_none_when_cap_is_too_small(two_area, two_area_ptdf):
    net = two_area.network
    assert min_alpha(net, two_area_ptdf, net.forecast_loads, two_area.targets[0], alpha_cap=0.02) is None


def test_min_alpha_grows_with_overflow(two_area, two_area_ptdf):
    net = two_area.network
    D = net.forecast_loads
    target = two_area.targets[0]
    assert min_alpha(net, two_area_ptdf, D, target, 0.05) > min_alpha(net, two_area_ptdf, D, target, 0.0)


class TestNoise:
    @pytest.mark.parametrize("family", ["gaussian", "cauchy"])
    def test_box_and_balance(self, case14, family):
        D = case14.forecast_loads
        for seed in range(5):
            noise = gen_noise(case14, D, 0.1, family, seed)
            assert np.all(np.abs(noise.deviations) <= 0.1 * D + 1e-9)
            assert abs(noise.deviations.sum()) <= 0.001 * D.sum() + 1e-9
            assert not noise.deviations[case14.zero_injection_mask].any()

    def test_seeded(self, case14):
        D = case14.forecast_loads
        a = gen_noise(case14, D, 0.1, "gaussian", 42)
        b = gen_noise(case14, D, 0.1, "gaussian", 42)
        c = gen_noise(case14, D, 0.1, "gaussian", 43)
        np.testing.assert_array_equal(a.deviations, b.deviations)
        assert not np.array_equal(a.deviations, c.deviations)

    def test_truncated_gaussian_spread(self):
        rng = np.random.default_rng(5)
        n = 200_000
        draws = draw_truncated(rng, "gaussian", np.ones(n), np.full(n, 3.1))
        assert np.abs(draws).max() <= 3.1
        assert draws.std() == pytest.approx(truncnorm.std(-3.1, 3.1), abs=0.01)

    def test_truncated_cauchy_within_bound(self):
        rng = np.random.default_rng(5)
        draws = draw_truncated(rng, "cauchy", np.full(1000, 2.0), np.full(1000, 5.0))
        assert np.abs(draws).max() <= 5.0
        assert np.count_nonzero(draws) == 1000

    def test_unknown_family(self):
        with pytest.raises(AttackConfigurationError, match="unknown noise family"):
            rng = np.random.default_rng(0)
            draw_truncated(rng, "laplace", np.ones(2), np.ones(2))  # type: ignore[arg-type]


class TestSeeds:
    def test_deterministic(self):
        assert derive_seed(2019, "attack", 4) == derive_seed(2019, "attack", 4)

    def test_streams_and_indices_differ(self):
        seeds = {derive_seed(2019, stream, i) for stream in ("attack", "gaussian", "cauchy", "ems")
                 for i in range(50)}
        assert len(seeds) == 200

    def test_master_seed_matters(self):
        assert derive_seed(1, "gaussian", 0) != derive_seed(2, "gaussian", 0)


class TestScenarioFiles:
    def test_write_and_read(self, setup, tmp_path):
        net, ptdf, D = setup
        attack = random_attack(net, ptdf, D, TARGET, 0.1, 2, seed=9)
        noise = gen_noise(net, D, 0.1, "cauchy", 9)
        scenarios = [to_scenario(net, attack, 0), to_scenario(net, noise, 1)]
        path = write_scenarios(tmp_path / "s.jsonl", scenarios)
        loaded = read_scenarios(path)
        assert [s.kind for s in loaded] == ["attack", "cauchy"]
        assert loaded[0].target == TARGET and loaded[0].d == 2
        np.testing.assert_allclose(scenario_deviations(net, loaded[0]), attack.deviations)

    def test_corrupt_line_is_reported(self, setup, tmp_path):
        net, ptdf, D = setup
        noise = gen_noise(net, D, 0.1, "gaussian", 1)
        path = write_scenarios(tmp_path / "s.jsonl", [to_scenario(net, noise, 0)])
        with path.open("a") as stream:
            stream.write("\n{not json}\n")
        with pytest.raises(CaseParseError) as excinfo:
            read_scenarios(path)
        assert excinfo.value.line == 3


@pytest.mark.parametrize("seed", range(100))
def test_random_grids_match_greedy(seed):
    net = _random_grid(seed)
    ptdf = compute_ptdf(net)
    D = net.forecast_loads
    target = int(np.random.default_rng(seed).integers(1, len(net.branches) + 1))
    attack = worst_case_attack(net, ptdf, D, target, 0.1, sign=1)
    buses = sensitive_buses(net, ptdf, D, target)
    oracle = _greedy_gain(ptdf.row(target)[buses], 0.1 * D[buses])
    assert attack.gain_mw == pytest.approx(oracle, rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_random_grid_gain_is_linear(seed):
    net = _random_grid(1000 + seed)
    ptdf = compute_ptdf(net)
    D = net.forecast_loads
    target = int(np.random.default_rng(seed).integers(1, len(net.branches) + 1))
    small = worst_case_attack(net, ptdf, D, target, 0.03, sign=1)
    large = worst_case_attack(net, ptdf, D, target, 0.06, sign=1)
    assert large.gain_mw == pytest.approx(2.0 * small.gain_mw, rel=1e-7, abs=1e-9)
