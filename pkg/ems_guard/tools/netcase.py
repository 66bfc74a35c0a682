"""Case ingestion: MATPOWER-subset ``.m`` files and the native JSON schema."""

import hashlib
import io
import json
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from pydantic import ValidationError
from scipy.sparse.csgraph import connected_components

from ..core.exceptions import CaseParseError, NetworkValidationError
from ..core.logger import EmsGuardLogger, get_logger
from ..core.models import Branch, Bus, Generator, Network

CaseFormat = Literal["matpower-m", "native-json"]
Source = Union[bytes, str, io.IOBase]

SCHEMA_VERSION = 1

# MATPOWER column positions (0-based)
BUS_I, BUS_TYPE, PD = 0, 1, 2
F_BUS, T_BUS, BR_X, RATE_A, BR_STATUS = 0, 1, 3, 5, 10
GEN_BUS, GEN_STATUS, PMAX, PMIN = 0, 7, 8, 9
MODEL, NCOST, COST = 0, 3, 4
REF_TYPE, ISOLATED_TYPE = 3, 4

_BLOCK_START = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([\[{])(.*)$")
_SCALAR = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^;\[{]+);")
_FUNCTION = re.compile(r"^\s*function\s+\w+\s*=\s*(\w+)")


class _Table:
    """Numeric rows of one ``mpc.<name> = [...]`` block with their source lines."""

    def __init__(self, name: str):
        self.name = name
        self.rows: List[List[float]] = []
        self.lines: List[int] = []

    def require_columns(self, count: int) -> None:
        for row, line in zip(self.rows, self.lines):
            if len(row) < count:
                raise CaseParseError(
                    f"expected at least {count} columns, found {len(row)}",
                    line=line,
                    field=f"mpc.{self.name}",
                )


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _scan_matpower(text: str) -> Tuple[Optional[str], Dict[str, float], Dict[str, _Table]]:
    name: Optional[str] = None
    scalars: Dict[str, float] = {}
    tables: Dict[str, _Table] = {}
    current: Optional[_Table] = None
    skipping_cell = False

    def consume(chunk: str, lineno: int) -> None:
        for row_text in chunk.split(";"):
            fields = row_text.replace(",", " ").split()
            if not fields:
                continue
            try:
                current.rows.append([float(v) for v in fields])  # type: ignore[union-attr]
            except ValueError:
                raise CaseParseError(
                    f"non-numeric value in row '{row_text.strip()}'",
                    line=lineno,
                    field=f"mpc.{current.name}",  # type: ignore[union-attr]
                ) from None
            current.lines.append(lineno)  # type: ignore[union-attr]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0]
        if skipping_cell:
            skipping_cell = "}" not in line
            continue
        if current is not None:
            if "]" in line:
                consume(line.split("]", 1)[0], lineno)
                current = None
            else:
                consume(line, lineno)
            continue

        match = _FUNCTION.match(line)
        if match:
            name = match.group(1)
            continue
        match = _BLOCK_START.match(line)
        if match:
            key, bracket, rest = match.groups()
            if bracket == "{":
                skipping_cell = "}" not in rest
                continue
            current = tables.setdefault(key, _Table(key))
            if "]" in rest:
                consume(rest.split("]", 1)[0], lineno)
                current = None
            else:
                consume(rest, lineno)
            continue
        match = _SCALAR.match(line)
        if match:
            try:
                scalars[match.group(1)] = float(match.group(2).strip().strip("'\""))
            except ValueError:
                pass  # version strings and other text scalars

    if current is not None:
        raise CaseParseError("unterminated matrix block", field=f"mpc.{current.name}")
    return name, scalars, tables


def _linear_cost(row: List[float], p_min: float, p_max: float, line: int,
                 logger: EmsGuardLogger) -> float:
    model = int(row[MODEL])
    n = int(row[NCOST])
    coeffs = row[COST:COST + (2 * n if model == 1 else n)]
    if model == 2:
        if len(coeffs) < n:
            raise CaseParseError(f"NCOST={n} but only {len(coeffs)} coefficients", line, "mpc.gencost")
        linear = coeffs[-2] if n >= 2 else 0.0
        quadratic = coeffs[-3] if n >= 3 else 0.0
        if n > 3 and any(coeffs[:-3]):
            raise CaseParseError("polynomial costs above degree 2 are not supported", line, "mpc.gencost")
        if quadratic:
            midpoint = 0.5 * (p_min + p_max)
            linearized = linear + 2.0 * quadratic * midpoint
            logger.info(
                f"gencost line {line}: quadratic term {quadratic:g} linearized at "
                f"{midpoint:g} MW -> {linearized:g} $/MWh",
                "netcase",
            )
            return linearized
        return linear
    if model == 1:
        if len(coeffs) < 2 * n or n < 2:
            raise CaseParseError("piecewise-linear cost needs at least two points", line, "mpc.gencost")
        p = coeffs[0::2]
        f = coeffs[1::2]
        slope = (f[-1] - f[0]) / (p[-1] - p[0]) if p[-1] != p[0] else 0.0
        logger.warning(f"gencost line {line}: piecewise cost replaced by average slope {slope:g}", "netcase")
        return slope
    raise CaseParseError(f"unknown cost MODEL {model}", line, "mpc.gencost")


def _network_from_matpower(text: str, logger: EmsGuardLogger) -> Network:
    case_name, scalars, tables = _scan_matpower(text)
    for key in ("bus", "branch", "gen"):
        if key not in tables or not tables[key].rows:
            raise CaseParseError(f"missing or empty mpc.{key} block", field=f"mpc.{key}")

    bus_t, branch_t, gen_t = tables["bus"], tables["branch"], tables["gen"]
    bus_t.require_columns(3)
    branch_t.require_columns(4)
    gen_t.require_columns(10)

    buses: List[Dict[str, Any]] = []
    reference: List[int] = []
    isolated = set()
    for row, line in zip(bus_t.rows, bus_t.lines):
        bus_id, bus_type, demand = int(row[BUS_I]), int(row[BUS_TYPE]), row[PD]
        if demand < 0:
            raise CaseParseError(f"negative demand {demand:g} MW at bus {bus_id}", line, "mpc.bus.PD")
        if bus_type == ISOLATED_TYPE:
            isolated.add(bus_id)
            continue
        if bus_type == REF_TYPE:
            reference.append(bus_id)
        buses.append({"id": bus_id, "load_mw": demand})
    if len(reference) != 1:
        raise CaseParseError(f"expected exactly one reference bus (type 3), found {len(reference)}",
                             field="mpc.bus.TYPE")
    if isolated:
        logger.warning(f"dropped {len(isolated)} isolated bus(es) (type 4)", "netcase")

    branches: List[Dict[str, Any]] = []
    dropped = 0
    for k, (row, line) in enumerate(zip(branch_t.rows, branch_t.lines), start=1):
        status = row[BR_STATUS] if len(row) > BR_STATUS else 1.0
        if status <= 0 or int(row[F_BUS]) in isolated or int(row[T_BUS]) in isolated:
            dropped += 1
            continue
        if row[BR_X] <= 0:
            raise CaseParseError(
                f"branch {k} has non-positive reactance {row[BR_X]:g}", line, "mpc.branch.BR_X"
            )
        rating = row[RATE_A] if len(row) > RATE_A else 0.0
        branches.append({
            "id": k,
            "from_bus": int(row[F_BUS]),
            "to_bus": int(row[T_BUS]),
            "reactance": row[BR_X],
            "rating": rating if rating > 0 else None,
        })
    if dropped:
        logger.info(f"skipped {dropped} out-of-service branch(es)", "netcase")

    cost_t = tables.get("gencost")
    if cost_t is None or len(cost_t.rows) < len(gen_t.rows):
        raise CaseParseError("mpc.gencost must provide one row per generator", field="mpc.gencost")
    cost_t.require_columns(4)

    generators: List[Dict[str, Any]] = []
    for g, (row, line, cost_row, cost_line) in enumerate(
        zip(gen_t.rows, gen_t.lines, cost_t.rows, cost_t.lines), start=1
    ):
        if row[GEN_STATUS] <= 0 or int(row[GEN_BUS]) in isolated:
            continue
        p_max, p_min = row[PMAX], row[PMIN]
        if p_min < 0:
            logger.warning(f"generator {g}: negative PMIN {p_min:g} raised to 0", "netcase")
            p_min = 0.0
        p_max = max(p_max, p_min)
        cost = _linear_cost(cost_row, p_min, p_max, cost_line, logger)
        if cost < 0:
            raise CaseParseError(f"generator {g} has negative linear cost {cost:g}", cost_line, "mpc.gencost")
        generators.append({"id": g, "bus": int(row[GEN_BUS]), "p_min": p_min, "p_max": p_max, "cost": cost})

    document = {
        "name": case_name or "case",
        "base_mva": scalars.get("baseMVA", 100.0),
        "buses": buses,
        "branches": branches,
        "generators": generators,
        "reference_bus": reference[0],
    }
    return _build(document)


def _build(document: Dict[str, Any]) -> Network:
    try:
        return Network.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise CaseParseError(details, field=".".join(str(p) for p in first["loc"]) or None) from None


def _network_from_json(text: str) -> Network:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseParseError(e.msg, line=e.lineno) from None
    if not isinstance(document, dict):
        raise CaseParseError("case document must be a JSON object")
    schema = document.pop("schema", None)
    if schema != SCHEMA_VERSION:
        raise CaseParseError(f"unsupported schema version {schema!r}", field="schema")
    return _build(document)


def validate_network(net: Network) -> Network:
    """Check connectivity and generation adequacy."""
    n = net.n_buses
    adjacency = sp.csr_matrix(
        (np.ones(net.n_branches), (net.from_idx, net.to_idx)), shape=(n, n)
    )
    n_islands, labels = connected_components(adjacency, directed=False)
    if n_islands > 1:
        sizes = np.bincount(labels)
        raise NetworkValidationError(
            f"network is not connected: {n_islands} islands of sizes {sorted(sizes.tolist(), reverse=True)}"
        )

    capacity = float(net.p_max.sum())
    demand = float(net.forecast_loads.sum())
    if capacity < demand:
        raise NetworkValidationError(
            f"total generation capacity {capacity:.2f} MW is below total load {demand:.2f} MW"
        )
    return net


def parse_case(source: Source, format: CaseFormat, logger: Optional[EmsGuardLogger] = None) -> Network:
    """Parse and validate a case; loads in the demand column become the forecast D."""
    logger = logger or get_logger()
    text = _read_text(source)
    if format == "matpower-m":
        net = _network_from_matpower(text, logger)
    elif format == "native-json":
        net = _network_from_json(text)
    else:
        raise CaseParseError(f"unknown case format '{format}'")

    validate_network(net)
    logger.debug(
        f"{net.name}: {net.n_buses} buses, {net.n_branches} branches "
        f"({len(net.rated_branch_ids())} rated), {net.n_generators} generators",
        "netcase",
    )
    return net


def load_case(path: Union[str, Path], logger: Optional[EmsGuardLogger] = None) -> Network:
    """Read a case file, picking the format from its suffix."""
    path = Path(path)
    formats: Dict[str, CaseFormat] = {".m": "matpower-m", ".json": "native-json"}
    if path.suffix.lower() not in formats:
        raise CaseParseError(f"cannot infer case format from '{path.name}' (expected .m or .json)")
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CaseParseError(f"cannot read {path}: {e.strerror}") from None
    return parse_case(data, formats[path.suffix.lower()], logger)


def dump_case(net: Network) -> Dict[str, Any]:
    """Native JSON document for a network."""
    return {
        "schema": SCHEMA_VERSION,
        "name": net.name,
        "base_mva": net.base_mva,
        "reference_bus": net.reference_bus,
        "buses": [bus.model_dump(exclude_none=True) for bus in net.buses],
        "branches": [
            {
                "id": br.id,
                "from_bus": br.from_bus,
                "to_bus": br.to_bus,
                "reactance": br.reactance,
                "rating": br.rating if br.is_rated else None,
            }
            for br in net.branches
        ],
        "generators": [gen.model_dump() for gen in net.generators],
    }


def case_hash(net: Network) -> str:
    """Stable content hash of a network (signature cache key)."""
    canonical = json.dumps(dump_case(net), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
