"""Parsers for the experiment CLI's CSV artifacts.

Every renderer input passes through here.  Each file starts with a ``# {...}``
line holding the resolved config it was produced under, followed by a column
header and 17-significant-digit float rows.  The render layer consumes the
returned frames verbatim — any column it plots is exactly what this module
read from disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import pandas as pd

ATLAS_REQUIRED = ("theta", "psi_avg", "p_psi_given_theta", "level", "rt_at_xetig", "max_rt")
CURVES_REQUIRED = ("t", "mean", "q25", "q75")
LEVELS = ("none", "mild", "extreme")


class SchemaError(ValueError):
    """The input file does not match the documented CSV schema."""


@dataclass
class TableFile:
    """One parsed artifact: the embedded config line plus the data frame."""

    config: dict
    frame: pd.DataFrame


def _read(path, required) -> TableFile:
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror or exc}") from exc
    config = {}
    has_header = first.startswith("#")
    if first.startswith("# "):
        try:
            config = json.loads(first[2:])
        except json.JSONDecodeError:
            config = {}
    try:
        frame = pd.read_csv(path, skiprows=1 if has_header else 0, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: empty file") from exc
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing required columns {missing}")
    if len(frame) == 0:
        raise SchemaError(f"{path}: no data rows")
    return TableFile(config, frame)


def load_atlas(path) -> TableFile:
    """Parse a ``diagnose`` atlas.

    The task-parameter axis column is ``psi`` when the setting has a scalar
    task parameter and ``psi_avg`` (the per-task mean of ``psi_1..psi_k``)
    otherwise; both kinds carry ``psi_avg``.
    """
    table = _read(path, ATLAS_REQUIRED)
    bad = set(table.frame["level"].unique()) - set(LEVELS)
    if bad:
        raise SchemaError(f"{path}: unknown threat levels {sorted(bad)}")
    return table


def load_curves(path) -> TableFile:
    """Parse a ``run`` curves file; the ``bound_line`` column is optional."""
    return _read(path, CURVES_REQUIRED)
