"""Experiment harness: calibration tables, separation datasets and the corrective-dispatch battery."""

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ..core.config import Config, get_config
from ..core.exceptions import AttackConfigurationError, CaseParseError
from ..core.logger import EmsGuardLogger, get_logger
from ..core.models import AssetSignature, DetectionReport, ExperimentConfig, NoiseFamily, Scenario
from .attacks import (
    derive_seed,
    gen_noise,
    random_attack,
    read_scenarios,
    scenario_deviations,
    to_scenario,
    write_scenarios,
)
from .cpsced import enhanced_ems_step
from .netcase import load_case
from .ptdf import compute_ptdf
from .rtlrta import SignatureCache, calibrate_threshold, detect, screen_vulnerable
from .sced import physical_flows, solve_sced

T = TypeVar("T")
R = TypeVar("R")

EXIT_OK, EXIT_USAGE, EXIT_MODEL = 0, 1, 2


class CommandResult(NamedTuple):
    exit_code: int
    outputs: List[Path]
    summary: pd.DataFrame


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """Read an experiment JSON file."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise CaseParseError(f"cannot read experiment file {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise CaseParseError(f"invalid experiment JSON: {e.msg}", line=e.lineno) from None
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        raise CaseParseError(first["msg"], field=".".join(str(p) for p in first["loc"])) from None


class ExperimentRunner:
    """Loaded case, PTDF and calibrated signatures shared by the experiment commands."""

    def __init__(self, experiment: ExperimentConfig, config: Optional[Config] = None,
                 logger: Optional[EmsGuardLogger] = None, backend: Optional[str] = None):
        self.experiment = experiment
        self.config = config or get_config()
        self.logger = logger or get_logger()
        self.backend = backend

        self.net = load_case(experiment.case, self.logger)
        self.ptdf = compute_ptdf(self.net, self.config)
        self.D = self.net.forecast_loads
        self.output_dir = Path(experiment.output_dir)
        self._signatures: Optional[List[AssetSignature]] = None
        self.logger.stage_status(
            "case", "ready",
            f"{self.net.name}: {self.net.n_buses} buses, {self.net.n_branches} branches, "
            f"{len(self.net.rated_branch_ids())} rated",
        )

    # -- helpers ---------------------------------------------------------------

    def _map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """Apply ``fn`` in input order, fanned out over worker threads when configured."""
        if self.experiment.parallel > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.experiment.parallel) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def _write_table(self, frame: pd.DataFrame, stem: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        if self.experiment.format == "json":
            path = self.output_dir / f"{stem}.json"
            path.write_text(frame.to_json(orient="records", indent=2, double_precision=10) + "\n")
        else:
            path = self.output_dir / f"{stem}.csv"
            frame.to_csv(path, index=False, float_format="%.6f")
        self.logger.debug(f"wrote {path}", "output")
        return path

    def _show(self, frame: pd.DataFrame, title: str) -> None:
        if frame.empty:
            self.logger.info(f"{title}: no rows")
            return
        self.logger.console.print(f"\n[bold]{title}[/bold]")
        self.logger.console.print(frame.to_markdown(index=False, floatfmt=".4g"), markup=False)

    # -- signatures --------------------------------------------------------------

    def targets(self) -> List[int]:
        """Explicit targets, or every asset the screen marks vulnerable."""
        if self.experiment.targets != "auto-vulnerable":
            rated = set(self.net.rated_branch_ids())
            unknown = [k for k in self.experiment.targets if k not in rated]
            if unknown:
                raise AttackConfigurationError(f"targets {unknown} are not rated branches of {self.net.name}")
            return list(self.experiment.targets)
        screened = screen_vulnerable(self.net, self.ptdf, self.D, self.experiment.alpha_cap,
                                     parallel=self.experiment.parallel, backend=self.backend,
                                     config=self.config)
        return [sig.branch_id for sig in screened if sig.status == "vulnerable"]

    def signatures(self) -> List[AssetSignature]:
        """Calibrated signatures for the targets, read from or written to the cache file."""
        if self._signatures is not None:
            return self._signatures
        cap = self.experiment.alpha_cap
        cache = SignatureCache(self.output_dir / "signatures.json")
        targets = self.targets()
        cached = {sig.branch_id: sig for sig in (cache.load(self.net, cap) or [])}

        if all(k in cached for k in targets):
            self.logger.stage_status("calibrate", "skipped", f"using cached signatures for {targets}")
            signatures = [cached[k] for k in targets]
        else:
            self.logger.stage_status("calibrate", "running", f"targets {targets} at alpha {cap}")
            signatures = self._map(
                lambda k: calibrate_threshold(self.net, self.ptdf, self.D, k, cap, backend=self.backend,
                                              config=self.config, logger=self.logger),
                targets,
            )
            cached.update({sig.branch_id: sig for sig in signatures})
            cache.store(self.net, cap, [cached[k] for k in sorted(cached)])

        overrides = self.experiment.threshold_override
        signatures = [
            sig.model_copy(update={"threshold": min(overrides[sig.branch_id], sig.tnsb)})
            if sig.branch_id in overrides and sig.status == "vulnerable" else sig
            for sig in signatures
        ]
        self._signatures = signatures
        return signatures

    def _d_choices(self, sig: AssetSignature) -> List[int]:
        values = list(self.experiment.d_values)
        values += [int(round(f * sig.tnsb)) for f in self.experiment.d_fractions]
        return [min(v, sig.tnsb) for v in values] or [0]

    # -- calibrate ---------------------------------------------------------------

    def calibrate(self) -> CommandResult:
        rows: List[Dict[str, Any]] = []
        for sig in self.signatures():
            common = {"line": sig.branch_id, "status": sig.status, "alpha_startpoint": sig.alpha_startpoint,
                      "tnsb": sig.tnsb, "threshold": sig.threshold}
            if not sig.calibration_rows:
                rows.append({**common, "d": None, "control_room_flow": None, "physical_flow": None,
                             "npdsb": None, "flow_limit": self.net.branch(sig.branch_id).rating,
                             "overflows": None})
            for row in sig.calibration_rows:
                rows.append({**common, **row.model_dump(exclude={"line"})})
        columns = ["line", "status", "alpha_startpoint", "tnsb", "threshold", "d", "control_room_flow",
                   "physical_flow", "npdsb", "flow_limit", "overflows"]
        frame = pd.DataFrame.from_records(rows, columns=columns)
        path = self._write_table(frame, "calibration")

        summary = pd.DataFrame.from_records(
            [{"line": s.branch_id, "status": s.status, "alpha_startpoint": s.alpha_startpoint,
              "TNSB": s.tnsb, "weakest_d": s.weakest_d, "weakest_npdsb": s.weakest_npdsb,
              "threshold": s.threshold} for s in self.signatures()]
        )
        self._show(summary, "Thresholds")
        return CommandResult(EXIT_OK, [path, self.output_dir / "signatures.json"], summary)

    # -- separation ----------------------------------------------------------------

    def _asset_rows(self, scenario_id: int, kind: str, attacked: Optional[int], alpha: float, d: int,
                    L: np.ndarray, report: DetectionReport) -> List[Dict[str, Any]]:
        """One row per vulnerable asset: its NPDSB and its physical flow after dispatching on ``L``."""
        dispatch = solve_sced(self.net, self.ptdf, L, backend=self.backend, config=self.config)
        flows = (physical_flows(self.net, self.ptdf, dispatch.p_g, self.D) if dispatch.is_optimal
                 else np.full(self.net.n_branches, np.nan))
        rows = []
        for sig in self.signatures():
            if not sig.vulnerable:
                continue
            k = self.net.branch_position(sig.branch_id)
            rating = float(self.net.ratings[k])
            rows.append({
                "scenario_id": scenario_id, "kind": kind, "attacked": attacked, "target": sig.branch_id,
                "alpha": alpha, "d": d, "npdsb": report.npdsb[sig.branch_id], "threshold": sig.threshold,
                "physical_flow": float(flows[k]), "rating": rating,
                "overflow_fraction": abs(float(flows[k])) / rating - 1.0,
                "flagged": sig.branch_id in report.flagged,
            })
        return rows

    def _attack_rows(
        self, job: Tuple[int, AssetSignature, int, int]
    ) -> Tuple[Scenario, List[Dict[str, Any]]]:
        scenario_id, sig, index, d = job
        exp = self.experiment
        seed = derive_seed(exp.master_seed, "attack", index)
        rng = np.random.default_rng(seed)
        alpha = exp.alpha_cap * rng.uniform(exp.attack_alpha_low, 1.0)
        attack = random_attack(self.net, self.ptdf, self.D, sig.branch_id, alpha, d,
                               int(rng.integers(0, 2**32 - 1)), sign=sig.direction_sign,
                               backend=self.backend, config=self.config)
        attack = attack.model_copy(update={"seed": seed})
        L = self.D + attack.deviations
        report = detect(f"attack-{scenario_id}", self.D, L, self.signatures())
        rows = self._asset_rows(scenario_id, "attack", sig.branch_id, alpha, d, L, report)
        return to_scenario(self.net, attack, scenario_id), rows

    def _noise_rows(self, job: Tuple[int, NoiseFamily, int]) -> Tuple[Scenario, List[Dict[str, Any]]]:
        scenario_id, family, index = job
        exp = self.experiment
        noise = gen_noise(self.net, self.D, exp.alpha_cap, family,
                          derive_seed(exp.master_seed, family, index), self.config)
        L = self.D + noise.deviations
        report = detect(f"{family}-{scenario_id}", self.D, L, self.signatures())
        rows = self._asset_rows(scenario_id, family, None, exp.alpha_cap, 0, L, report)
        return to_scenario(self.net, noise, scenario_id), rows

    def separation(self) -> CommandResult:
        exp = self.experiment
        vulnerable = [sig for sig in self.signatures() if sig.vulnerable]
        attack_jobs = []
        for t, sig in enumerate(vulnerable):
            choices = self._d_choices(sig)
            for i in range(exp.n_attacks):
                index = t * exp.n_attacks + i
                attack_jobs.append((len(attack_jobs), sig, index, choices[i % len(choices)]))
        noise_jobs: List[Tuple[int, NoiseFamily, int]] = []
        for family, count in (("gaussian", exp.n_gaussian), ("cauchy", exp.n_cauchy)):
            offset = len(attack_jobs) + len(noise_jobs)
            noise_jobs.extend((offset + j, family, j) for j in range(count))
        if not vulnerable:
            noise_jobs = []
            self.logger.warning("no vulnerable assets; separation dataset is empty", "separation")

        self.logger.stage_status(
            "separation", "running", f"{len(attack_jobs)} attacks, {len(noise_jobs)} noise vectors"
        )
        results = self._map(self._attack_rows, attack_jobs) + self._map(self._noise_rows, noise_jobs)
        columns = ["scenario_id", "kind", "attacked", "target", "alpha", "d", "npdsb", "threshold",
                   "physical_flow", "rating", "overflow_fraction", "flagged"]
        frame = pd.DataFrame.from_records([row for _, rows in results for row in rows], columns=columns)
        outputs = [self._write_table(frame, "separation")]
        outputs.append(write_scenarios(self.output_dir / "scenarios.jsonl", [s for s, _ in results]))

        # effectiveness is judged on the asset each attack was aimed at
        attacks = frame[(frame["kind"] == "attack") & (frame["attacked"] == frame["target"])]
        effective = attacks[attacks["overflow_fraction"] >= exp.overflow_filter]
        noise = frame[frame["kind"] != "attack"]
        summary = pd.DataFrame.from_records([{
            "attacks": len(attacks),
            "effective_attacks": len(effective),
            "false_negatives": int((~effective["flagged"].astype(bool)).sum()),
            "noise_vectors": int(noise["scenario_id"].nunique()),
            "false_positives": int(noise.loc[noise["flagged"].astype(bool), "scenario_id"].nunique()),
        }])
        self._show(summary, "Attack/noise separation")
        return CommandResult(EXIT_OK, outputs, summary)

    # -- ems -----------------------------------------------------------------

    def _battery(self) -> List[Scenario]:
        """One alpha-cap attack per (target, d) pair, seeded from the master seed."""
        scenarios = []
        for sig in self.signatures():
            if not sig.vulnerable:
                continue
            for d in self._d_choices(sig):
                seed = derive_seed(self.experiment.master_seed, "ems", len(scenarios))
                attack = random_attack(self.net, self.ptdf, self.D, sig.branch_id, self.experiment.alpha_cap,
                                       d, seed, sign=sig.direction_sign, backend=self.backend,
                                       config=self.config)
                scenarios.append(to_scenario(self.net, attack, len(scenarios)))
        return scenarios

    def _ems_row(self, scenario: Scenario) -> Tuple[Dict[str, Any], str]:
        deviations = scenario_deviations(self.net, scenario)
        L = self.D + deviations
        snapshot_id = f"{scenario.kind}-{scenario.scenario_id}"
        report, solution, audit = enhanced_ems_step(self.net, self.ptdf, self.D, L, self.signatures(),
                                                    snapshot_id, self.experiment.alpha_cap,
                                                    self.backend, self.config)
        target = scenario.target
        before = after = None
        if target is not None:
            k = self.net.branch_position(target)
            sced = solve_sced(self.net, self.ptdf, L, backend=self.backend, config=self.config)
            if sced.is_optimal:
                before = float(physical_flows(self.net, self.ptdf, sced.p_g, self.D)[k])
            if solution.p_g.size:
                after = float(physical_flows(self.net, self.ptdf, solution.p_g, self.D)[k])
        row = {
            "scenario_id": scenario.scenario_id,
            "kind": scenario.kind,
            "target": target,
            "d": scenario.d,
            "flagged": " ".join(map(str, report.flagged)),
            "primary_target": audit.primary_target,
            "psi_size": audit.psi_size,
            "activated": " ".join(map(str, solution.activated_plfsc)),
            "binding": " ".join(map(str, solution.binding_plfsc)),
            "iterations": solution.iterations,
            "sced_cost": audit.sced_cost,
            "cpsced_cost": audit.cpsced_cost,
            "target_flow_before": before,
            "target_flow_after": after,
            "rating": self.net.branch(target).rating if target is not None else None,
            "status": audit.status,
        }
        return row, audit.model_dump_json(exclude={"report": {"elapsed_ms"}})

    def ems(self) -> CommandResult:
        if self.experiment.snapshots:
            scenarios = read_scenarios(self.experiment.snapshots)
            for scenario in scenarios:
                for bus_id in scenario.deviations:
                    self.net.bus_position(bus_id)
        else:
            scenarios = self._battery()
        self.logger.stage_status("ems", "running", f"{len(scenarios)} snapshot(s)")

        results = self._map(self._ems_row, scenarios)
        frame = pd.DataFrame.from_records([row for row, _ in results])
        outputs = [self._write_table(frame, "ems")]
        self.output_dir.mkdir(parents=True, exist_ok=True)
        audit_path = self.output_dir / "ems_audit.jsonl"
        audit_path.write_text("".join(audit + "\n" for _, audit in results), encoding="utf-8")
        outputs.append(audit_path)

        if not frame.empty:
            self._show(frame[["scenario_id", "target", "d", "activated", "binding", "sced_cost",
                              "cpsced_cost", "target_flow_before", "target_flow_after", "status"]],
                       "Corrective dispatch")
        failed = [] if frame.empty else frame.loc[frame["status"] != "optimal", "scenario_id"].tolist()
        if failed:
            self.logger.error(f"snapshots without a secure dispatch: {failed}", "ems")
            return CommandResult(EXIT_MODEL, outputs, frame)
        return CommandResult(EXIT_OK, outputs, frame)


def cmd_calibrate(experiment: ExperimentConfig, config: Optional[Config] = None,
                  backend: Optional[str] = None) -> CommandResult:
    """Calibrate thresholds for the experiment's targets and write the sweep table."""
    return ExperimentRunner(experiment, config, backend=backend).calibrate()


def cmd_separation(experiment: ExperimentConfig, config: Optional[Config] = None,
                   backend: Optional[str] = None) -> CommandResult:
    """Generate the attack/noise suite and write the NPDSB-versus-flow dataset."""
    return ExperimentRunner(experiment, config, backend=backend).separation()


def cmd_ems(experiment: ExperimentConfig, config: Optional[Config] = None,
            backend: Optional[str] = None) -> CommandResult:
    """Run the enhanced EMS on a snapshot file, or on the seeded attack battery."""
    return ExperimentRunner(experiment, config, backend=backend).ems()
