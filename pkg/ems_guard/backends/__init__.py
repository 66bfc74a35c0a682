"""LP solver back ends for ems-guard."""

__all__ = []
