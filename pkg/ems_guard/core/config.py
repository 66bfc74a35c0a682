"""Configuration management for ems-guard."""

import os
from functools import lru_cache
from pathlib import Path
from typing import Dict, List

from dotenv import load_dotenv

LP_BACKENDS = ("highs", "simplex")


class Config:
    """Numerical and runtime settings, read from ``EMS_GUARD_*`` environment variables."""

    def __init__(self) -> None:
        # Load environment variables from .env file if it exists
        env_file = Path(".env")
        if env_file.exists():
            load_dotenv(env_file)

        self.log_level = os.environ.get("EMS_GUARD_LOG_LEVEL", "INFO")

        # LP layer
        self.lp_backend = os.environ.get("EMS_GUARD_LP_BACKEND", "highs").lower()
        self.feasibility_tol = float(os.environ.get("EMS_GUARD_FEASIBILITY_TOL", "1e-7"))
        self.optimality_tol = float(os.environ.get("EMS_GUARD_OPTIMALITY_TOL", "1e-9"))
        self.binding_tol = float(os.environ.get("EMS_GUARD_BINDING_TOL", "1e-7"))
        self.simplex_max_iterations = int(os.environ.get("EMS_GUARD_SIMPLEX_MAX_ITER", "50000"))

        # Network / PTDF
        self.ptdf_zero_cutoff = float(os.environ.get("EMS_GUARD_PTDF_ZERO_CUTOFF", "1e-9"))
        self.dense_bus_limit = int(os.environ.get("EMS_GUARD_DENSE_BUS_LIMIT", "5000"))
        self.ptdf_chunk_size = int(os.environ.get("EMS_GUARD_PTDF_CHUNK_SIZE", "256"))

        # Dispatch
        self.flow_tol = float(os.environ.get("EMS_GUARD_FLOW_TOL", "1e-6"))
        self.tie_break_epsilon = float(os.environ.get("EMS_GUARD_TIE_BREAK_EPSILON", "1e-6"))

        # Attack and noise generation
        self.alpha_cap = float(os.environ.get("EMS_GUARD_ALPHA_CAP", "0.10"))
        self.alpha_tol = float(os.environ.get("EMS_GUARD_ALPHA_TOL", "1e-6"))
        self.alpha_draw_low = float(os.environ.get("EMS_GUARD_ALPHA_DRAW_LOW", "0.52"))
        self.noise_spread = float(os.environ.get("EMS_GUARD_NOISE_SPREAD", "3.1"))
        self.noise_net_tol = float(os.environ.get("EMS_GUARD_NOISE_NET_TOL", "0.001"))

        # Detection
        self.sensitivity_eps = float(os.environ.get("EMS_GUARD_SENSITIVITY_EPS", "1e-4"))
        self.threshold_margin = float(os.environ.get("EMS_GUARD_THRESHOLD_MARGIN", "0.98"))
        self.calibration_step = int(os.environ.get("EMS_GUARD_CALIBRATION_STEP", "50"))
        self.startpoint_floor = float(os.environ.get("EMS_GUARD_STARTPOINT_FLOOR", "0.005"))

        # Performance settings
        self.max_workers = int(os.environ.get("EMS_GUARD_MAX_WORKERS", "4"))

    def validate(self) -> Dict[str, List[str]]:
        """Return invalid settings grouped by area; empty when everything is usable."""
        problems: Dict[str, List[str]] = {}

        if self.lp_backend not in LP_BACKENDS:
            problems.setdefault("lp", []).append(
                f"lp_backend must be one of {', '.join(LP_BACKENDS)}"
            )
        for name in ("feasibility_tol", "optimality_tol", "binding_tol", "flow_tol"):
            if getattr(self, name) <= 0:
                problems.setdefault("tolerances", []).append(f"{name} must be > 0")
        if not 0 < self.alpha_cap <= 1:
            problems.setdefault("attacks", []).append("alpha_cap must lie in (0, 1]")
        if not 0 <= self.alpha_draw_low <= 1:
            problems.setdefault("attacks", []).append("alpha_draw_low must lie in [0, 1]")
        if self.noise_spread <= 0:
            problems.setdefault("attacks", []).append("noise_spread must be > 0")
        if not 0 < self.threshold_margin <= 1:
            problems.setdefault("detection", []).append("threshold_margin must lie in (0, 1]")
        if self.calibration_step < 1:
            problems.setdefault("detection", []).append("calibration_step must be >= 1")
        if self.max_workers < 1:
            problems.setdefault("performance", []).append("max_workers must be >= 1")

        return problems

    def to_dict(self) -> Dict:
        """Convert config to dictionary for logging."""
        return {
            "log_level": self.log_level,
            "lp_backend": self.lp_backend,
            "alpha_cap": self.alpha_cap,
            "tolerances": {
                "feasibility": self.feasibility_tol,
                "optimality": self.optimality_tol,
                "binding": self.binding_tol,
                "flow_mw": self.flow_tol,
                "ptdf_zero": self.ptdf_zero_cutoff,
            },
            "detection": {
                "sensitivity_eps": self.sensitivity_eps,
                "threshold_margin": self.threshold_margin,
                "calibration_step": self.calibration_step,
                "startpoint_floor": self.startpoint_floor,
            },
            "noise": {
                "spread": self.noise_spread,
                "net_tol": self.noise_net_tol,
            },
            "max_workers": self.max_workers,
        }


@lru_cache(maxsize=1)
def get_config() -> Config:
    """Process-wide configuration, read once."""
    return Config()
