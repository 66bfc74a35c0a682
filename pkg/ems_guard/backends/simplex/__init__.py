"""Tableau simplex back end for ems-guard."""

from .backend import SimplexBackend

__all__ = ["SimplexBackend"]
