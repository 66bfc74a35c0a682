"""
ems-guard - Load-Redistribution Attack Detection and Corrective Dispatch

Detects load-redistribution false data injection attacks against the real-time
dispatch pipeline and re-dispatches so that physical line flows stay within
their thermal ratings.
"""

__version__ = "1.0.0"
__author__ = "EMS Guard Team"

from .tools.netcase import load_case, parse_case
from .tools.ptdf import compute_ptdf

__all__ = ["load_case", "parse_case", "compute_ptdf"]
