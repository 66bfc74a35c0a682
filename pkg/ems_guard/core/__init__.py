"""Core functionality for ems-guard."""

from .config import Config, get_config
from .models import *
from .logger import get_logger, setup_logger
from .backend_manager import LpBackendManager

__all__ = ["Config", "get_config", "setup_logger", "get_logger", "LpBackendManager"]
