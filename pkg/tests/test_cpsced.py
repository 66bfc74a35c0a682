"""Tests for actual-load estimation, CPSCED and the enhanced EMS loop."""

import numpy as np
import pytest

from ems_guard.core.exceptions import DetectionError
from ems_guard.core.models import ActualLoadEstimate
from ems_guard.tools.attacks import derive_seed, random_attack, worst_case_attack
from ems_guard.tools.cpsced import enhanced_ems_step, estimate_actual_loads, solve_cpsced
from ems_guard.tools.ptdf import compute_ptdf
from ems_guard.tools.rtlrta import detect
from ems_guard.tools.sced import physical_flows, solve_sced


@pytest.fixture(scope="module")
def grid(two_area, two_area_ptdf):
    net = two_area.network
    return net, two_area_ptdf, net.forecast_loads


@pytest.fixture(scope="module")
def attacked(grid, two_area_signatures):
    """Snapshot carrying the alpha-cap worst-case attack on the first target."""
    net, ptdf, D = grid
    sig = two_area_signatures[0]
    attack = worst_case_attack(net, ptdf, D, sig.branch_id, sig.alpha_cap, sign=sig.direction_sign)
    return sig, attack, D + attack.deviations


class TestEstimate:
    def test_no_deviation_keeps_se_loads(self, grid, two_area_signatures):
        net, ptdf, D = grid
        target = two_area_signatures[0].branch_id
        estimate = estimate_actual_loads(net, ptdf, D, D, [target], {target: 0}, two_area_signatures)
        assert estimate.psi == []
        np.testing.assert_array_equal(estimate.loads, D)

    def test_reconstructs_worst_case_attack(self, grid, two_area_signatures, attacked):
        net, ptdf, D = grid
        sig, attack, L = attacked
        estimate = estimate_actual_loads(net, ptdf, D, L, [sig.branch_id], {sig.branch_id: sig.tnsb},
                                         two_area_signatures)
        assert estimate.primary_target == sig.branch_id
        assert len(estimate.psi) >= sig.tnsb - 1
        # only a partially shifted marginal bus can escape psi
        assert np.abs(estimate.loads - D).sum() <= 2 * sig.alpha_startpoint * D.max() + 1e-6

    def test_total_is_preserved(self, grid, two_area_signatures, attacked):
        net, ptdf, D = grid
        sig, attack, L = attacked
        estimate = estimate_actual_loads(net, ptdf, D, L, [sig.branch_id], {sig.branch_id: sig.tnsb},
                                         two_area_signatures)
        assert estimate.unbalanced_mw == 0.0
        assert estimate.loads.sum() == pytest.approx(L.sum(), abs=1e-6)
        assert np.all(estimate.loads >= 0)

    def test_estimate_stays_in_plausible_band(self, grid, two_area_signatures):
        net, ptdf, D = grid
        sig = two_area_signatures[0]
        attack = random_attack(net, ptdf, D, sig.branch_id, 0.08, 10, seed=4, sign=sig.direction_sign)
        L = D + attack.deviations
        estimate = estimate_actual_loads(net, ptdf, D, L, [sig.branch_id], {sig.branch_id: sig.tnsb},
                                         two_area_signatures)
        assert np.all(np.abs(estimate.loads - L) <= sig.alpha_cap * D + 1e-6)

    def test_primary_target_prefers_higher_npdsb(self, grid, two_area_signatures, attacked):
        net, ptdf, D = grid
        sig, attack, L = attacked
        other = two_area_signatures[1].branch_id
        values = {sig.branch_id: 3, other: 40}
        estimate = estimate_actual_loads(net, ptdf, D, L, [sig.branch_id, other], values, two_area_signatures)
        assert estimate.primary_target == other

    def test_requires_flags(self, grid, two_area_signatures):
        net, ptdf, D = grid
        with pytest.raises(DetectionError):
            estimate_actual_loads(net, ptdf, D, D, [], {}, two_area_signatures)

    def test_requires_signature(self, grid, two_area, two_area_signatures):
        net, ptdf, D = grid
        with pytest.raises(DetectionError) as excinfo:
            estimate_actual_loads(net, ptdf, D, D, [two_area.binding_tie], {two_area.binding_tie: 5},
                                  two_area_signatures)
        assert excinfo.value.branches == [two_area.binding_tie]


class TestCpsced:
    def test_empty_set_equals_sced(self, grid):
        net, ptdf, D = grid
        estimate = ActualLoadEstimate(loads=D, primary_target=0)
        cpsced = solve_cpsced(net, ptdf, D, estimate, [])
        sced = solve_sced(net, ptdf, D)
        np.testing.assert_allclose(cpsced.p_g, sced.p_g, atol=1e-6)
        assert cpsced.total_cost == pytest.approx(sced.total_cost)

    def test_unrated_branches_are_skipped(self, grid):
        net, ptdf, D = grid
        estimate = ActualLoadEstimate(loads=D, primary_target=0)
        solution = solve_cpsced(net, ptdf, D, estimate, [1])
        assert solution.is_optimal
        assert solution.activated_plfsc == []

    def test_physical_limit_redispatches(self, two_bus):
        ptdf = compute_ptdf(two_bus)
        L = two_bus.forecast_loads
        estimate = ActualLoadEstimate(loads=np.array([0.0, 120.0]), primary_target=1)
        solution = solve_cpsced(two_bus, ptdf, L, estimate, [1])
        assert solution.binding_plfsc == [1]
        np.testing.assert_allclose(solution.p_g, [40.0, 60.0], atol=1e-6)
        assert solution.physical_flows[1] == pytest.approx(60.0)

    @pytest.mark.parametrize("true_load, binds", [(60.0, False), (80.0, False), (110.0, True), (120.0, True)])
    def test_cost_rises_only_when_a_physical_limit_binds(self, two_bus, true_load, binds):
        ptdf = compute_ptdf(two_bus)
        L = two_bus.forecast_loads
        sced = solve_sced(two_bus, ptdf, L)
        estimate = ActualLoadEstimate(loads=np.array([0.0, true_load]), primary_target=1)
        solution = solve_cpsced(two_bus, ptdf, L, estimate, [1])
        assert solution.is_optimal
        assert (solution.binding_plfsc == [1]) is binds
        if binds:
            assert solution.total_cost > sced.total_cost + 1e-6
        else:
            assert solution.total_cost == pytest.approx(sced.total_cost, abs=1e-6)

    def test_infeasible_reports_conflicting_limits(self, two_bus):
        ptdf = compute_ptdf(two_bus)
        L = two_bus.forecast_loads
        estimate = ActualLoadEstimate(loads=np.array([0.0, 300.0]), primary_target=1)
        solution = solve_cpsced(two_bus, ptdf, L, estimate, [1])
        assert solution.status == "infeasible"
        assert solution.conflicting == [1]


class TestEnhancedEms:
    def test_clean_snapshot_runs_plain_sced(self, grid, two_area_signatures):
        net, ptdf, D = grid
        report, solution, audit = enhanced_ems_step(net, ptdf, D, D, two_area_signatures, "clean")
        assert report.flagged == []
        assert audit.status == "optimal"
        assert audit.cpsced_cost == pytest.approx(solve_sced(net, ptdf, D).total_cost)
        assert solution.activated_plfsc == []

    def test_attack_is_corrected(self, grid, two_area_signatures, attacked):
        net, ptdf, D = grid
        sig, attack, L = attacked
        report, solution, audit = enhanced_ems_step(net, ptdf, D, L, two_area_signatures, "attacked")
        assert sig.branch_id in report.flagged
        assert audit.status == "optimal"
        assert sig.branch_id in solution.activated_plfsc
        assert solution.remaining_violations == []
        assert audit.cpsced_cost >= audit.sced_cost - 1e-6
        rating = net.branch(sig.branch_id).rating
        assert abs(audit.physical_flows_after[sig.branch_id]) <= rating + 1e-6
        assert audit.physical_flows_before[sig.branch_id] * sig.direction_sign > rating

    def test_true_flow_is_secured(self, grid, two_area_signatures, attacked):
        net, ptdf, D = grid
        sig, attack, L = attacked
        _, solution, _ = enhanced_ems_step(net, ptdf, D, L, two_area_signatures)
        k = net.branch_position(sig.branch_id)
        rating = net.branch(sig.branch_id).rating
        sced = solve_sced(net, ptdf, L)
        before = abs(physical_flows(net, ptdf, sced.p_g, D)[k])
        after = abs(physical_flows(net, ptdf, solution.p_g, D)[k])
        assert after < before
        assert after <= rating * 1.01

    def test_audit_iterations(self, grid, two_area_signatures, attacked):
        net, ptdf, D = grid
        sig, attack, L = attacked
        _, solution, audit = enhanced_ems_step(net, ptdf, D, L, two_area_signatures)
        assert len(audit.iterations) == solution.iterations >= 1
        assert audit.iterations[-1].violations == []
        assert audit.psi_size >= sig.tnsb - 1

    def test_flagged_random_attacks_end_secure(self, grid, two_area_signatures):
        """Every flagged random attack ends with all rated branches within rating under D_a."""
        net, ptdf, D = grid
        flagged = index = 0
        for sig in two_area_signatures:
            for share in (0.05, 0.13, 0.30):
                d = int(round(share * sig.tnsb))
                for _ in range(34):
                    index += 1
                    rng = np.random.default_rng(derive_seed(7, "attack", index))
                    alpha = sig.alpha_cap * rng.uniform(0.52, 1.0)
                    attack = random_attack(net, ptdf, D, sig.branch_id, alpha, d, int(rng.integers(2**31)),
                                           sign=sig.direction_sign)
                    L = D + attack.deviations
                    if not detect("suite", D, L, two_area_signatures).flagged:
                        continue
                    flagged += 1
                    _, solution, audit = enhanced_ems_step(net, ptdf, D, L, two_area_signatures)
                    assert audit.status == "optimal", (sig.branch_id, d, alpha, solution.conflicting)
                    assert solution.remaining_violations == []
                    estimate = estimate_actual_loads(net, ptdf, D, L, audit.report.flagged,
                                                     audit.report.npdsb, two_area_signatures)
                    flows = physical_flows(net, ptdf, solution.p_g, estimate.loads)
                    rated = net.rated_mask
                    assert np.all(np.abs(flows[rated]) <= net.ratings[rated] + 1e-6)
                    assert audit.cpsced_cost >= audit.sced_cost - 1e-6
        assert flagged >= 80
