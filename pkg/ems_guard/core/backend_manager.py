"""LP back end manager: solver registry behind a common contract."""

from abc import ABC, abstractmethod
from typing import Dict, List, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from .config import Config
from .exceptions import EmsGuardError
from .logger import EmsGuardLogger
from .models import BackendStatus, BackendType, LpSolution, ObjectiveSense


class LpArrays(NamedTuple):
    """Compiled LP in matrix form: ``sense c'x`` s.t. ``A x (<=|==|>=) rhs``, ``lower <= x <= upper``."""

    sense: ObjectiveSense
    c: np.ndarray
    A: sp.csr_matrix
    row_senses: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    row_labels: List[str]

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]


class BaseLpBackend(ABC):
    """Base class for all LP solver back ends."""

    def __init__(self, config: Config, logger: EmsGuardLogger):
        self.config = config
        self.logger = logger
        self.backend_name = self.get_backend_name()

    @abstractmethod
    def get_backend_name(self) -> BackendType:
        """Return the back end name."""

    @abstractmethod
    def get_capabilities(self) -> List[str]:
        """Return list of supported capabilities."""

    @abstractmethod
    def solve(self, lp: LpArrays) -> LpSolution:
        """Solve a compiled LP. Returns status, x, objective; activity is filled by the caller."""

    def validate_configuration(self) -> BackendStatus:
        """Validate back end configuration and return status."""
        return BackendStatus(
            backend=self.get_backend_name(),
            status="ready",
            capabilities=self.get_capabilities(),
        )


class LpBackendManager:
    """Manages the available LP solver back ends."""

    def __init__(self, config: Config, logger: EmsGuardLogger):
        self.config = config
        self.logger = logger
        self.backends: Dict[BackendType, BaseLpBackend] = {}
        self.backend_statuses: Dict[BackendType, BackendStatus] = {}

        self._initialize_backends()

    def _initialize_backends(self):
        """Initialize all known back ends."""
        self.logger.debug("🔄 Initializing LP back ends...")

        for backend_name in ("highs", "simplex"):
            try:
                backend = self._create_backend(backend_name)
                if backend:
                    self.backends[backend_name] = backend
                    status = backend.validate_configuration()
                    self.backend_statuses[backend_name] = status
                    self.logger.debug(
                        f"{backend_name}: {status.status} ({', '.join(status.capabilities)})"
                    )
            except Exception as e:
                self.backend_statuses[backend_name] = BackendStatus(
                    backend=backend_name, status="error", error_message=str(e)
                )
                self.logger.stage_status(backend_name, "error", f"Initialization failed: {str(e)}")

    def _create_backend(self, backend_name: BackendType) -> Optional[BaseLpBackend]:
        """Create a back end instance."""
        if backend_name == "highs":
            from ..backends.highs.backend import HighsBackend
            return HighsBackend(self.config, self.logger)
        elif backend_name == "simplex":
            from ..backends.simplex.backend import SimplexBackend
            return SimplexBackend(self.config, self.logger)
        else:
            return None

    def get_backend(self, backend_name: Optional[str] = None) -> BaseLpBackend:
        """Get a ready back end; defaults to the configured one."""
        name = (backend_name or self.config.lp_backend).lower()
        backend = self.backends.get(name)  # type: ignore[arg-type]
        if backend is None or not self.is_backend_ready(name):
            status = self.backend_statuses.get(name)  # type: ignore[arg-type]
            detail = f": {status.error_message}" if status and status.error_message else ""
            ready = ", ".join(self.get_ready_backends()) or "none"
            raise EmsGuardError(f"LP back end '{name}' is not available{detail} (ready: {ready})")
        return backend

    def get_ready_backends(self) -> List[BackendType]:
        """Get list of ready back ends."""
        return [
            name for name, status in self.backend_statuses.items()
            if status.status == "ready"
        ]

    def get_all_statuses(self) -> Dict[BackendType, BackendStatus]:
        """Get all back end statuses."""
        return self.backend_statuses.copy()

    def is_backend_ready(self, backend_name: str) -> bool:
        """Check if a back end is ready for use."""
        status = self.backend_statuses.get(backend_name)  # type: ignore[arg-type]
        return status is not None and status.status == "ready"
