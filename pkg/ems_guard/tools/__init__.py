"""Grid, dispatch, attack and detection tools for ems-guard."""

__all__ = [
    "attacks",
    "casegen",
    "cpsced",
    "experiments",
    "lp",
    "netcase",
    "ptdf",
    "rtlrta",
    "sced",
]
