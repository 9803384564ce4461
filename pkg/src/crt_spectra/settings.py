"""Runtime limits shared by the modules."""

from __future__ import annotations

import os

_DEFAULT_CELL_BUDGET = 2**27


def cell_budget() -> int:
    """Maximum number of cells any single request may materialize.

    Override with the CRT_SPECTRA_BUDGET environment variable.
    """
    raw = os.environ.get("CRT_SPECTRA_BUDGET", "")
    if raw.strip():
        return int(raw)
    return _DEFAULT_CELL_BUDGET
