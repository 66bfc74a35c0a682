"""DC power-transfer distribution factors."""

from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve

from ..core.config import Config, get_config
from ..core.exceptions import DimensionMismatchError, NetworkValidationError, NumericalError
from ..core.logger import get_logger
from ..core.models import Network


class PtdfMatrix:
    """Branch-by-bus sensitivity matrix; the reference-bus column is zero.

    Values are read-only. Storage is a dense ndarray for ordinary cases and a
    CSR matrix for very large ones; ``row`` and ``flows`` hide the difference.
    """

    def __init__(self, values: Union[np.ndarray, sp.csr_matrix], branch_ids: np.ndarray,
                 bus_ids: np.ndarray, reference_index: int):
        if values.shape != (len(branch_ids), len(bus_ids)):
            raise DimensionMismatchError("PTDF shape", (len(branch_ids), len(bus_ids)), values.shape)
        if isinstance(values, np.ndarray):
            values.setflags(write=False)
        self._values = values
        self.branch_ids = np.asarray(branch_ids, dtype=int)
        self.bus_ids = np.asarray(bus_ids, dtype=int)
        self.reference_index = int(reference_index)
        self._branch_pos = {int(b): k for k, b in enumerate(self.branch_ids)}
        self._row_cache: dict = {}

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self._values.shape

    @property
    def values(self) -> Union[np.ndarray, sp.csr_matrix]:
        return self._values

    def position(self, branch_id: int) -> int:
        try:
            return self._branch_pos[int(branch_id)]
        except KeyError:
            raise NetworkValidationError(f"branch {branch_id} is not in the PTDF") from None

    def row(self, branch_id: int) -> np.ndarray:
        """Dense sensitivity row of one branch, bus order."""
        k = self.position(branch_id)
        if not self.is_sparse:
            return self._values[k]
        cached = self._row_cache.get(k)
        if cached is None:
            cached = self._values.getrow(k).toarray().ravel()
            cached.setflags(write=False)
            self._row_cache[k] = cached
        return cached

    def rows(self, branch_ids: Sequence[int]) -> np.ndarray:
        positions = [self.position(b) for b in branch_ids]
        if not self.is_sparse:
            return self._values[positions]
        return self._values[positions].toarray()

    def flows(self, injections: np.ndarray) -> np.ndarray:
        """Branch flows (MW) for a bus injection vector."""
        injections = np.asarray(injections, dtype=float)
        if injections.shape != (len(self.bus_ids),):
            raise DimensionMismatchError("injection vector", len(self.bus_ids), injections.shape)
        return np.asarray(self._values @ injections).ravel()

    def dense(self) -> np.ndarray:
        return self._values.toarray() if self.is_sparse else np.asarray(self._values)

    def to_frame(self) -> pd.DataFrame:
        """Labelled copy: branch ids as index, bus ids as columns."""
        return pd.DataFrame(self.dense(), index=pd.Index(self.branch_ids, name="branch"),
                            columns=pd.Index(self.bus_ids, name="bus"))


def _susceptance(net: Network) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Branch-flow matrix Bf and nodal susceptance Bbus of the DC model."""
    nl, nb = net.n_branches, net.n_buses
    rows = np.arange(nl)
    incidence = sp.csr_matrix(
        (np.r_[np.ones(nl), -np.ones(nl)], (np.r_[rows, rows], np.r_[net.from_idx, net.to_idx])),
        shape=(nl, nb),
    )
    Bf = sp.diags(1.0 / net.reactance) @ incidence
    Bbus = (incidence.T @ Bf).tocsr()
    return Bf.tocsr(), Bbus


def compute_ptdf(net: Network, config: Optional[Config] = None) -> PtdfMatrix:
    """Factor the reference-reduced susceptance matrix once and back-solve the branch rows."""
    config = config or get_config()
    logger = get_logger()
    nb, nl = net.n_buses, net.n_branches
    if nb == 1 or nl == 0:
        return PtdfMatrix(np.zeros((nl, nb)), net.branch_ids, net.bus_ids, net.ref_index)

    Bf, Bbus = _susceptance(net)
    noref = np.flatnonzero(np.arange(nb) != net.ref_index)
    reduced = Bbus[noref][:, noref].tocsc()
    try:
        lu = splu(reduced)
    except RuntimeError as e:
        raise NumericalError(f"reduced susceptance matrix is singular: {e}") from None
    Bf_noref = Bf[:, noref].tocsc()
    cutoff = config.ptdf_zero_cutoff

    if nb <= config.dense_bus_limit:
        solved = lu.solve(Bf_noref.T.toarray())
        values = np.zeros((nl, nb))
        values[:, noref] = solved.T
        if not np.all(np.isfinite(values)):
            raise NumericalError("non-finite PTDF entries; the network is numerically singular")
        values[np.abs(values) < cutoff] = 0.0
        logger.debug(f"dense PTDF {nl}x{nb}", "ptdf")
        return PtdfMatrix(values, net.branch_ids, net.bus_ids, net.ref_index)

    blocks = []
    for start in range(0, nl, config.ptdf_chunk_size):
        stop = min(start + config.ptdf_chunk_size, nl)
        solved = lu.solve(Bf_noref[start:stop].T.toarray()).T
        if not np.all(np.isfinite(solved)):
            raise NumericalError("non-finite PTDF entries; the network is numerically singular")
        solved[np.abs(solved) < cutoff] = 0.0
        coo = sp.coo_matrix(solved)
        blocks.append(sp.csr_matrix((coo.data, (coo.row, noref[coo.col])), shape=(stop - start, nb)))
    values = sp.vstack(blocks, format="csr")
    logger.debug(f"sparse PTDF {nl}x{nb}, {values.nnz} nonzeros", "ptdf")
    return PtdfMatrix(values, net.branch_ids, net.bus_ids, net.ref_index)


def dc_power_flow(net: Network, injections: np.ndarray) -> np.ndarray:
    """Branch flows from a direct reduced-susceptance solve (injections must balance)."""
    injections = np.asarray(injections, dtype=float)
    if injections.shape != (net.n_buses,):
        raise DimensionMismatchError("injection vector", net.n_buses, injections.shape)
    if net.n_buses == 1 or net.n_branches == 0:
        return np.zeros(net.n_branches)
    Bf, Bbus = _susceptance(net)
    noref = np.flatnonzero(np.arange(net.n_buses) != net.ref_index)
    theta = np.zeros(net.n_buses)
    theta[noref] = spsolve(Bbus[noref][:, noref].tocsc(), injections[noref])
    return Bf @ theta
