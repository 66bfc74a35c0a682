"""Data models for ems-guard."""

import math
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import numpy as np
import scipy.sparse as sp
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PlainSerializer,
    PlainValidator,
    PrivateAttr,
    field_validator,
    model_validator,
)

from .exceptions import NetworkValidationError


def _as_float_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=float)


def _as_int_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=int)


def _as_bool_array(value: Any) -> np.ndarray:
    return np.asarray(value, dtype=bool)


def _to_list(value: np.ndarray) -> list:
    return np.asarray(value).tolist()


FloatArray = Annotated[
    np.ndarray, PlainValidator(_as_float_array), PlainSerializer(_to_list, return_type=list)
]
IntArray = Annotated[
    np.ndarray, PlainValidator(_as_int_array), PlainSerializer(_to_list, return_type=list)
]
BoolArray = Annotated[
    np.ndarray, PlainValidator(_as_bool_array), PlainSerializer(_to_list, return_type=list)
]

# Literal types
LpStatus = Literal["optimal", "infeasible", "unbounded", "error"]
ObjectiveSense = Literal["minimize", "maximize"]
ConstraintSense = Literal["<=", "==", ">="]
NoiseFamily = Literal["gaussian", "cauchy"]
AssetStatus = Literal["vulnerable", "not_vulnerable", "congested"]
DispatchStatus = Literal["optimal", "infeasible", "unbounded", "error", "uncorrectable"]
ScenarioKind = Literal["attack", "gaussian", "cauchy"]


# ---------------------------------------------------------------------------
# Grid model
# ---------------------------------------------------------------------------


class Bus(BaseModel):
    """A network bus with its forecast load."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(description="Bus number as used in the case file")
    load_mw: float = Field(default=0.0, ge=0, description="Forecast load D_i (MW)")
    name: Optional[str] = Field(default=None, description="Optional bus label")


class Branch(BaseModel):
    """A transmission line or transformer in the DC model."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="null")

    id: int = Field(description="Branch index k (1-based row of the source table)")
    from_bus: int = Field(description="From-bus id")
    to_bus: int = Field(description="To-bus id")
    reactance: float = Field(gt=0, description="Series reactance (p.u.)")
    rating: float = Field(
        default=math.inf,
        gt=0,
        description="Continuous thermal rating (MW); +inf means unconstrained",
    )

    @field_validator("rating", mode="before")
    @classmethod
    def _unlimited_rating(cls, value: Any) -> Any:
        """Missing or zero ratings mean unlimited, as in MATPOWER."""
        if value is None or value == 0:
            return math.inf
        return value

    @model_validator(mode="after")
    def _distinct_ends(self) -> "Branch":
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.id} connects bus {self.from_bus} to itself")
        return self

    @property
    def is_rated(self) -> bool:
        """Whether the branch carries a finite flow limit."""
        return math.isfinite(self.rating)


class Generator(BaseModel):
    """A dispatchable unit with a linear cost."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(description="Generator index (1-based row of the source table)")
    bus: int = Field(description="Bus id the unit is connected to")
    p_min: float = Field(default=0.0, ge=0, description="Minimum output (MW)")
    p_max: float = Field(ge=0, description="Maximum output (MW)")
    cost: float = Field(ge=0, allow_inf_nan=False, description="Linear production cost ($/MWh)")

    @model_validator(mode="after")
    def _ordered_limits(self) -> "Generator":
        if self.p_min > self.p_max:
            raise ValueError(f"generator {self.id}: p_min {self.p_min} > p_max {self.p_max}")
        return self


class Network(BaseModel):
    """Immutable grid model with cached index arrays."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="null")

    name: str = Field(default="case", description="Case name")
    base_mva: float = Field(default=100.0, gt=0, description="System MVA base")
    buses: List[Bus] = Field(min_length=1)
    branches: List[Branch] = Field(default_factory=list)
    generators: List[Generator] = Field(default_factory=list)
    reference_bus: int = Field(description="Reference (slack) bus id")

    _arrays: Dict[str, Any] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check_references(self) -> "Network":
        bus_ids = [bus.id for bus in self.buses]
        if len(set(bus_ids)) != len(bus_ids):
            dupes = sorted({b for b in bus_ids if bus_ids.count(b) > 1})
            raise ValueError(f"duplicate bus id(s): {dupes}")
        branch_ids = [br.id for br in self.branches]
        if len(set(branch_ids)) != len(branch_ids):
            raise ValueError("duplicate branch ids")
        gen_ids = [gen.id for gen in self.generators]
        if len(set(gen_ids)) != len(gen_ids):
            raise ValueError("duplicate generator ids")

        known = set(bus_ids)
        if self.reference_bus not in known:
            raise ValueError(f"reference bus {self.reference_bus} is not a bus of the case")
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise ValueError(f"branch {br.id} references an unknown bus")
        for gen in self.generators:
            if gen.bus not in known:
                raise ValueError(f"generator {gen.id} references unknown bus {gen.bus}")
        return self

    def model_post_init(self, __context: Any) -> None:
        bus_ids = np.array([bus.id for bus in self.buses], dtype=int)
        bus_index = {int(b): i for i, b in enumerate(bus_ids)}
        n_bus = len(bus_ids)

        loads = np.array([bus.load_mw for bus in self.buses], dtype=float)
        from_idx = np.array([bus_index[br.from_bus] for br in self.branches], dtype=int)
        to_idx = np.array([bus_index[br.to_bus] for br in self.branches], dtype=int)
        rating = np.array([br.rating for br in self.branches], dtype=float)
        gen_bus = np.array([bus_index[g.bus] for g in self.generators], dtype=int)
        n_gen = len(self.generators)

        gen_incidence = sp.csr_matrix(
            (np.ones(n_gen), (gen_bus, np.arange(n_gen))), shape=(n_bus, n_gen)
        )
        has_gen = np.zeros(n_bus, dtype=bool)
        has_gen[gen_bus] = True

        self._arrays = {
            "bus_ids": bus_ids,
            "bus_index": bus_index,
            "ref_index": bus_index[self.reference_bus],
            "loads": loads,
            "branch_ids": np.array([br.id for br in self.branches], dtype=int),
            "branch_index": {br.id: k for k, br in enumerate(self.branches)},
            "from_idx": from_idx,
            "to_idx": to_idx,
            "reactance": np.array([br.reactance for br in self.branches], dtype=float),
            "rating": rating,
            "rated_mask": np.isfinite(rating),
            "gen_ids": np.array([g.id for g in self.generators], dtype=int),
            "gen_bus": gen_bus,
            "p_min": np.array([g.p_min for g in self.generators], dtype=float),
            "p_max": np.array([g.p_max for g in self.generators], dtype=float),
            "cost": np.array([g.cost for g in self.generators], dtype=float),
            "gen_incidence": gen_incidence,
            "zero_injection": (loads == 0) & ~has_gen,
        }
        for value in self._arrays.values():
            if isinstance(value, np.ndarray):
                value.setflags(write=False)

    # -- sizes ---------------------------------------------------------------

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    # -- cached arrays ---------------------------------------------------------

    @property
    def bus_ids(self) -> np.ndarray:
        return self._arrays["bus_ids"]

    @property
    def ref_index(self) -> int:
        """Position of the reference bus in bus order."""
        return self._arrays["ref_index"]

    @property
    def forecast_loads(self) -> np.ndarray:
        """Forecast load vector D in bus order (copy)."""
        return self._arrays["loads"].copy()

    @property
    def branch_ids(self) -> np.ndarray:
        return self._arrays["branch_ids"]

    @property
    def from_idx(self) -> np.ndarray:
        return self._arrays["from_idx"]

    @property
    def to_idx(self) -> np.ndarray:
        return self._arrays["to_idx"]

    @property
    def reactance(self) -> np.ndarray:
        return self._arrays["reactance"]

    @property
    def ratings(self) -> np.ndarray:
        return self._arrays["rating"]

    @property
    def rated_mask(self) -> np.ndarray:
        return self._arrays["rated_mask"]

    @property
    def generator_ids(self) -> np.ndarray:
        return self._arrays["gen_ids"]

    @property
    def gen_bus_idx(self) -> np.ndarray:
        return self._arrays["gen_bus"]

    @property
    def p_min(self) -> np.ndarray:
        return self._arrays["p_min"]

    @property
    def p_max(self) -> np.ndarray:
        return self._arrays["p_max"]

    @property
    def costs(self) -> np.ndarray:
        return self._arrays["cost"]

    @property
    def gen_incidence(self) -> sp.csr_matrix:
        """Bus-by-generator connection matrix C_g."""
        return self._arrays["gen_incidence"]

    @property
    def zero_injection_mask(self) -> np.ndarray:
        """True at buses with no load and no generator."""
        return self._arrays["zero_injection"]

    # -- lookups ---------------------------------------------------------------

    def bus_position(self, bus_id: int) -> int:
        """Position of a bus id in bus order."""
        try:
            return self._arrays["bus_index"][int(bus_id)]
        except KeyError:
            raise NetworkValidationError(f"unknown bus id {bus_id}") from None

    def branch_position(self, branch_id: int) -> int:
        """Position of a branch id in branch order."""
        try:
            return self._arrays["branch_index"][int(branch_id)]
        except KeyError:
            raise NetworkValidationError(f"unknown branch id {branch_id}") from None

    def branch(self, branch_id: int) -> Branch:
        return self.branches[self.branch_position(branch_id)]

    def is_zero_injection(self, bus_id: int) -> bool:
        return bool(self.zero_injection_mask[self.bus_position(bus_id)])

    def rated_branch_ids(self) -> List[int]:
        return [int(b) for b in self.branch_ids[self.rated_mask]]

    def bus_injections(self, p_g: np.ndarray, loads: np.ndarray) -> np.ndarray:
        """Net injection per bus: generation at the bus minus load."""
        return self.gen_incidence @ p_g - loads


# ---------------------------------------------------------------------------
# LP results
# ---------------------------------------------------------------------------


BackendType = Literal["highs", "simplex"]


class BackendStatus(BaseModel):
    """Status of an LP solver back end."""

    backend: BackendType = Field(description="Back end name")
    status: Literal["ready", "error"] = Field(description="Back end status")
    error_message: Optional[str] = Field(default=None, description="Error message if any")
    capabilities: List[str] = Field(default_factory=list, description="Supported features")


class LpBasis(BaseModel):
    """Active-set record of an LP optimum, kept so reruns can be compared."""

    binding_rows: List[int] = Field(default_factory=list)
    at_lower: List[int] = Field(default_factory=list)
    at_upper: List[int] = Field(default_factory=list)


class LpSolution(BaseModel):
    """Solver outcome for a LinearProgram."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: LpStatus
    objective: float = math.nan
    x: FloatArray = Field(default_factory=lambda: np.zeros(0))
    activity: FloatArray = Field(default_factory=lambda: np.zeros(0))
    binding: BoolArray = Field(default_factory=lambda: np.zeros(0, dtype=bool))
    row_labels: List[str] = Field(default_factory=list)
    basis: LpBasis = Field(default_factory=LpBasis)
    backend: str = ""
    iterations: int = 0
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"

    def binding_labels(self) -> List[str]:
        """Labels of the binding rows."""
        return [label for label, flag in zip(self.row_labels, self.binding) if flag]


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


class DispatchSolution(BaseModel):
    """SCED outcome: generator set-points, cost and control-room flows."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: DispatchStatus
    generator_ids: List[int] = Field(default_factory=list)
    p_g: FloatArray = Field(default_factory=lambda: np.zeros(0))
    total_cost: float = math.nan
    branch_ids: List[int] = Field(default_factory=list)
    control_room_flows: FloatArray = Field(default_factory=lambda: np.zeros(0))
    binding_branches: List[int] = Field(default_factory=list)
    basis: LpBasis = Field(default_factory=LpBasis)
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


class CpscedSolution(DispatchSolution):
    """Dispatch with physical line-flow security constraints (PLFSCs)."""

    activated_plfsc: List[int] = Field(default_factory=list)
    binding_plfsc: List[int] = Field(default_factory=list)
    physical_flows: Dict[int, float] = Field(
        default_factory=dict, description="Physical flow under estimated actual loads, per activated branch"
    )
    iterations: int = 0
    conflicting: List[int] = Field(default_factory=list)
    remaining_violations: List[int] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# Attacks and noise
# ---------------------------------------------------------------------------


class AttackVector(BaseModel):
    """Load-redistribution attack: per-bus load deviations in bus order."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    target_branch: int
    alpha: float = Field(ge=0, le=1)
    deviations: FloatArray
    zeroed_buses: List[int] = Field(default_factory=list, description="Pinned bus ids (eta)")
    direction_sign: Literal[1, -1] = 1
    gain_mw: float = Field(default=0.0, description="Flow masked on the target (MW)")
    seed: Optional[int] = None

    @property
    def d(self) -> int:
        return len(self.zeroed_buses)


class NoiseVector(BaseModel):
    """Bounded measurement-noise deviations in bus order."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    family: NoiseFamily
    alpha: float = Field(ge=0, le=1)
    deviations: FloatArray
    seed: Optional[int] = None


class AttackImpact(BaseModel):
    """Two-stage evaluation of a load snapshot on one branch."""

    target_branch: int
    control_room_flow: float
    physical_flow: float
    rating: float
    overflow_fraction: float = Field(description="|physical flow| / rating - 1")
    sced_status: DispatchStatus
    sced_cost: float

    @property
    def overflows(self) -> bool:
        return self.overflow_fraction > 0


class Scenario(BaseModel):
    """One serialized attack or noise scenario (JSON lines record)."""

    scenario_id: int = 0
    kind: ScenarioKind
    seed: Optional[int] = None
    target: Optional[int] = None
    alpha: float
    d: int = 0
    deviations: Dict[int, float] = Field(description="Sparse map bus id -> MW deviation")


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------


class CalibrationRow(BaseModel):
    """One step of the threshold-calibration sweep."""

    line: int
    d: int
    control_room_flow: float
    physical_flow: float
    npdsb: int
    flow_limit: float
    overflows: bool


class AssetSignature(BaseModel):
    """Per-asset detection signature built from the worst-case attack."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    branch_id: int
    status: AssetStatus
    direction_sign: Literal[1, -1] = 1
    alpha_cap: float
    alpha_startpoint: Optional[float] = None
    reference_signs: IntArray = Field(description="Expected deviation sign per bus, bus order")
    sensitive_order: IntArray = Field(description="Sensitive bus positions by ascending |PTDF|")
    tnsb: int = Field(ge=0)
    threshold: Optional[int] = None
    weakest_d: Optional[int] = None
    weakest_npdsb: Optional[int] = None
    calibration_rows: List[CalibrationRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def _threshold_within_tnsb(self) -> "AssetSignature":
        if self.threshold is not None and self.threshold > self.tnsb:
            raise ValueError(f"threshold {self.threshold} exceeds TNSB {self.tnsb}")
        return self

    @property
    def vulnerable(self) -> bool:
        return self.status == "vulnerable" and self.threshold is not None


class DetectionReport(BaseModel):
    """Per-snapshot NPDSB values and flagged assets."""

    snapshot_id: str
    npdsb: Dict[int, int] = Field(default_factory=dict)
    thresholds: Dict[int, int] = Field(default_factory=dict)
    flagged: List[int] = Field(default_factory=list)
    elapsed_ms: float = 0.0


# ---------------------------------------------------------------------------
# Corrective dispatch
# ---------------------------------------------------------------------------


class ActualLoadEstimate(BaseModel):
    """Estimated actual loads D^a reconstructed from a flagged snapshot."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    loads: FloatArray
    psi: List[int] = Field(default_factory=list, description="Bus ids with reconstructed load")
    primary_target: int
    rebalanced_mw: float = 0.0
    unbalanced_mw: float = 0.0


class EmsIteration(BaseModel):
    """One CPSCED solve inside the enhanced-EMS loop."""

    iteration: int
    activated: List[int]
    binding: List[int]
    violations: List[int]
    total_cost: float
    status: DispatchStatus


class EmsAudit(BaseModel):
    """Audit record of one enhanced-EMS step."""

    snapshot_id: str
    report: DetectionReport
    psi_size: int = 0
    primary_target: Optional[int] = None
    iterations: List[EmsIteration] = Field(default_factory=list)
    sced_cost: float
    cpsced_cost: float
    status: DispatchStatus
    physical_flows_before: Dict[int, float] = Field(default_factory=dict)
    physical_flows_after: Dict[int, float] = Field(default_factory=dict)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


class ExperimentConfig(BaseModel):
    """Experiment file: which case, which assets, how many scenarios."""

    case: str = Field(description="Path to a .m or .json case file")
    alpha_cap: float = Field(default=0.10, gt=0, le=1, description="Load shift factor ceiling")
    targets: Union[Literal["auto-vulnerable"], List[int]] = Field(
        default="auto-vulnerable", description="Branch ids or 'auto-vulnerable'"
    )
    n_attacks: int = Field(default=200, ge=0, description="Random attacks per target")
    n_gaussian: int = Field(default=300, ge=0, description="Gaussian noise vectors")
    n_cauchy: int = Field(default=150, ge=0, description="Cauchy noise vectors")
    d_values: List[int] = Field(default_factory=list, description="Pinned-bus counts")
    d_fractions: List[float] = Field(
        default_factory=list, description="Pinned-bus counts as fractions of TNSB"
    )
    master_seed: int = Field(default=20190, ge=0)
    output_dir: str = Field(default="results")
    parallel: int = Field(default=1, ge=1)
    format: Literal["csv", "json"] = "csv"
    attack_alpha_low: float = Field(
        default=0.52, ge=0, le=1, description="Lower multiplier of the random alpha draw"
    )
    overflow_filter: float = Field(
        default=0.05, ge=0, description="Overflow fraction an attack must reach to count"
    )
    threshold_override: Dict[int, int] = Field(default_factory=dict)
    snapshots: Optional[str] = Field(default=None, description="JSON lines scenario file for ems")

    @field_validator("d_fractions")
    @classmethod
    def _fractions_in_range(cls, values: List[float]) -> List[float]:
        for value in values:
            if not 0 <= value <= 1:
                raise ValueError("d_fractions must lie in [0, 1]")
        return values

    @field_validator("d_values")
    @classmethod
    def _non_negative_d(cls, values: List[int]) -> List[int]:
        if any(v < 0 for v in values):
            raise ValueError("d_values must be >= 0")
        return values
