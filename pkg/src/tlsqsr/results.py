"""Tabular scan results shared by the ensemble and spectral layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ScanResult:
    """Observables tabulated against one control parameter.

    ``columns`` preserves insertion order, which is the CSV column order;
    the first column is the control parameter.  ``meta`` carries provenance
    (seed, config hash) and ``report`` any derived findings such as peaks.
    """

    control: str
    columns: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.control not in self.columns:
            raise ValueError(f"control column {self.control!r} missing")
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"ragged columns: {lengths}")
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}

    def __len__(self) -> int:
        return len(self.columns[self.control])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def x(self) -> np.ndarray:
        return self.columns[self.control]

    @property
    def names(self) -> list[str]:
        return list(self.columns)


def rows_to_columns(rows: list[dict]) -> dict[str, np.ndarray]:
    """Column-wise view of a list of equally keyed row dicts."""
    if not rows:
        return {}
    keys = list(rows[0])
    return {k: np.array([r.get(k, np.nan) for r in rows], dtype=float) for k in keys}
