"""HiGHS back end for ems-guard."""

from .backend import HighsBackend

__all__ = ["HighsBackend"]
