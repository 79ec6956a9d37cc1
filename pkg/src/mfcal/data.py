"""Datasets for multi-fidelity calibration.

Holds field observations plus simulator run tables for each fidelity level,
all with inputs scaled to the unit cube and responses standardized with one
pooled transform.  The joint response vector is ordered field rows first,
then simulator levels from highest fidelity down to lowest; everything
downstream (covariance assembly, likelihood, prediction) relies on that
fixed ordering.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BoundsError,
    DegenerateDataError,
    DimensionError,
    OutOfRangeError,
)


def scale_inputs(raw, bounds):
    """Map raw inputs column-wise onto [0, 1] via (v - min) / (max - min).

    Parameters
    ----------
    raw : array-like, shape (n, d)
    bounds : array-like, shape (d, 2)
        Per-column (min, max).  Every raw value must lie inside its bounds.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if raw.shape[1] != bounds.shape[0]:
        raise DimensionError(
            f"raw has {raw.shape[1]} columns but bounds declares {bounds.shape[0]}"
        )
    lo, hi = bounds[:, 0], bounds[:, 1]
    bad = np.nonzero(~(lo < hi))[0]
    if bad.size:
        raise BoundsError(f"column {bad[0]}: min {lo[bad[0]]} must be < max {hi[bad[0]]}")
    below = raw < lo
    above = raw > hi
    if below.any() or above.any():
        rows, cols = np.nonzero(below | above)
        r, c = int(rows[0]), int(cols[0])
        raise OutOfRangeError(
            f"value {raw[r, c]} at row {r}, column {c} outside bounds "
            f"({lo[c]}, {hi[c]})"
        )
    return (raw - lo) / (hi - lo)


def unscale_inputs(scaled, bounds):
    """Inverse of :func:`scale_inputs`."""
    scaled = np.atleast_2d(np.asarray(scaled, dtype=float))
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    lo, hi = bounds[:, 0], bounds[:, 1]
    return scaled * (hi - lo) + lo


@dataclass(frozen=True)
class StandardizationTransform:
    """Affine map (y - center) / scale and its inverse."""

    center: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise DegenerateDataError(f"scale must be positive, got {self.scale}")

    @classmethod
    def fit(cls, values) -> "StandardizationTransform":
        """Fit center/scale so the pooled values get mean 0, variance 1 (n-1)."""
        values = np.asarray(values, dtype=float).ravel()
        if values.size < 2:
            raise DegenerateDataError("need at least 2 responses to standardize")
        center = float(values.mean())
        scale = float(values.std(ddof=1))
        if scale == 0.0:
            raise DegenerateDataError("responses have zero spread")
        return cls(center=center, scale=scale)

    def apply(self, y):
        return (np.asarray(y, dtype=float) - self.center) / self.scale

    def invert(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.center


def _readonly(a):
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def _check_unit(name, a):
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise OutOfRangeError(f"{name} has entries outside [0, 1] after scaling")


@dataclass(frozen=True)
class SimulatorRuns:
    """Runs from one fidelity level: inputs already on the unit cube.

    x        design variables, shape (n, p)
    t_shared calibration inputs common to all levels, shape (n, m_shared)
    t_own    calibration inputs specific to this level, shape (n, m_own)
    y        standardized responses, shape (n,)
    """

    x: np.ndarray
    t_shared: np.ndarray
    t_own: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        n = self.y.shape[0]
        for name in ("x", "t_shared", "t_own"):
            a = getattr(self, name)
            if a.ndim != 2 or a.shape[0] != n:
                raise DimensionError(f"{name} must be 2-d with {n} rows, got {a.shape}")
            _check_unit(name, a)
        for name in ("x", "t_shared", "t_own", "y"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def m_own(self) -> int:
        return self.t_own.shape[1]


@dataclass(frozen=True)
class FieldObservations:
    """Field measurements: design inputs on the unit cube, standardized y."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise DimensionError(f"field x shape {self.x.shape} does not match y")
        _check_unit("field x", self.x)
        object.__setattr__(self, "x", _readonly(self.x))
        object.__setattr__(self, "y", _readonly(self.y))

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class MultiFidelityDataSet:
    """Field observations plus one or more simulator levels, low to high.

    ``levels[0]`` is the lowest-fidelity simulator (the one emulated
    directly); each later entry is the next level up.  A two-level dataset
    has ``levels = (low, high)``.  The joint response vector stacks field
    rows first, then levels from highest fidelity down to lowest, so for
    two levels the order is (field, high, low).

    Instances are immutable after construction and safe to share across
    concurrent readers.
    """

    field: FieldObservations
    levels: tuple
    transform: StandardizationTransform
    x_bounds: np.ndarray  # (p, 2) raw bounds for the design variables

    def __post_init__(self):
        if self.field.n < 1:
            raise DimensionError("need at least one field observation")
        if not self.levels:
            raise DimensionError("need at least one simulator level")
        if self.levels[0].n < 1:
            raise DimensionError("lowest-fidelity level needs at least one run")
        p = self.field.x.shape[1]
        m_shared = self.levels[0].t_shared.shape[1]
        for k, lvl in enumerate(self.levels, start=1):
            if lvl.x.shape[1] != p:
                raise DimensionError(f"level {k} has p={lvl.x.shape[1]}, field has p={p}")
            if lvl.t_shared.shape[1] != m_shared:
                raise DimensionError(
                    f"level {k} has m_shared={lvl.t_shared.shape[1]}, expected {m_shared}"
                )
        object.__setattr__(self, "levels", tuple(self.levels))
        bounds = np.asarray(self.x_bounds, dtype=float).reshape(-1, 2)
        if bounds.shape[0] != p:
            raise DimensionError(f"x_bounds declares {bounds.shape[0]} columns, p={p}")
        object.__setattr__(self, "x_bounds", _readonly(bounds))

    # ---- shape bookkeeping -------------------------------------------------

    @property
    def p(self) -> int:
        return self.field.x.shape[1]

    @property
    def m_shared(self) -> int:
        return self.levels[0].t_shared.shape[1]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_field(self) -> int:
        return self.field.n

    @property
    def low(self) -> SimulatorRuns:
        return self.levels[0]

    @property
    def high(self):
        """Highest level above the base emulator, or None for one level."""
        return self.levels[-1] if self.n_levels >= 2 else None

    @property
    def n_total(self) -> int:
        return self.n_field + sum(lvl.n for lvl in self.levels)

    def joint_levels(self):
        """Yield (level_number, runs) in joint-vector order (high to low)."""
        for k in range(self.n_levels, 0, -1):
            yield k, self.levels[k - 1]

    def block_slices(self) -> dict:
        """Row ranges of each block within the joint vector."""
        out = {"field": slice(0, self.n_field)}
        start = self.n_field
        for k, lvl in self.joint_levels():
            out[f"level{k}"] = slice(start, start + lvl.n)
            start += lvl.n
        return out

    def delta_rows(self, k: int) -> int:
        """Number of leading joint rows reached by discrepancy level k.

        The between-level discrepancy introduced at level k (2 <= k <= K)
        enters the field rows and every simulator level at or above k; those
        rows form a contiguous prefix of the joint vector.
        """
        if not 2 <= k <= self.n_levels:
            raise DimensionError(f"discrepancy level {k} outside 2..{self.n_levels}")
        return self.n_field + sum(lvl.n for lvl in self.levels[k - 1 :])

    def joint_response_vector(self) -> np.ndarray:
        """Standardized responses stacked as (field, level K, ..., level 1)."""
        parts = [self.field.y]
        parts.extend(lvl.y for _, lvl in self.joint_levels())
        return np.concatenate(parts)

    # ---- constructors and derived datasets ----------------------------------

    @classmethod
    def from_raw(
        cls,
        field_x,
        field_y,
        level_runs,
        x_bounds=None,
        t_shared_bounds=None,
        t_own_bounds=None,
    ) -> "MultiFidelityDataSet":
        """Build a dataset from raw-scale tables.

        Parameters
        ----------
        field_x, field_y : arrays, shapes (n_f, p) and (n_f,)
        level_runs : sequence of (x, t_shared, t_own, y), lowest level first
        x_bounds, t_shared_bounds : per-column (min, max); default unit bounds
        t_own_bounds : sequence of per-column bounds, one entry per level

        Inputs are scaled to [0, 1] with the given bounds and all responses
        are pooled into a single standardization transform.
        """
        field_x = np.atleast_2d(np.asarray(field_x, dtype=float))
        field_y = np.asarray(field_y, dtype=float).ravel()
        p = field_x.shape[1]
        if x_bounds is None:
            x_bounds = np.tile([0.0, 1.0], (p, 1))
        field_x_s = scale_inputs(field_x, x_bounds)

        scaled_levels = []
        for idx, (x, t_shared, t_own, y) in enumerate(level_runs):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            t_shared = _as_2d(t_shared, x.shape[0])
            t_own = _as_2d(t_own, x.shape[0])
            y = np.asarray(y, dtype=float).ravel()
            ts_bounds = t_shared_bounds
            if ts_bounds is None:
                ts_bounds = np.tile([0.0, 1.0], (t_shared.shape[1], 1))
            to_bounds = None if t_own_bounds is None else t_own_bounds[idx]
            if to_bounds is None:
                to_bounds = np.tile([0.0, 1.0], (t_own.shape[1], 1))
            scaled_levels.append(
                (
                    scale_inputs(x, x_bounds),
                    scale_inputs(t_shared, ts_bounds) if t_shared.shape[1] else t_shared,
                    scale_inputs(t_own, to_bounds) if t_own.shape[1] else t_own,
                    y,
                )
            )

        pooled = np.concatenate([field_y] + [y for *_, y in scaled_levels])
        transform = StandardizationTransform.fit(pooled)

        field = FieldObservations(x=field_x_s, y=transform.apply(field_y))
        levels = tuple(
            SimulatorRuns(x=x, t_shared=ts, t_own=to, y=transform.apply(y))
            for x, ts, to, y in scaled_levels
        )
        return cls(
            field=field,
            levels=levels,
            transform=transform,
            x_bounds=np.asarray(x_bounds, dtype=float).reshape(-1, 2),
        )

    def drop_field(self, index: int) -> "MultiFidelityDataSet":
        """Dataset with one field observation removed (transform reused)."""
        if not 0 <= index < self.n_field:
            raise DimensionError(f"field index {index} outside 0..{self.n_field - 1}")
        keep = np.arange(self.n_field) != index
        field = FieldObservations(x=self.field.x[keep], y=self.field.y[keep])
        return MultiFidelityDataSet(
            field=field,
            levels=self.levels,
            transform=self.transform,
            x_bounds=self.x_bounds,
        )


def _as_2d(a, n_rows):
    """Coerce a possibly-empty calibration block to shape (n_rows, m)."""
    if a is None:
        return np.empty((n_rows, 0))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(n_rows, -1) if a.size else a.reshape(n_rows, 0)
    return a


# ---- CSV interface ----------------------------------------------------------


def _read_csv_columns(path, columns):
    """Read the named columns from a CSV file with a strict header check."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise DimensionError(f"{path}: empty file, header row required")
        missing = [c for c in columns if c not in header]
        if missing:
            raise DimensionError(f"{path}: missing column '{missing[0]}'")
        extra = [c for c in header if c not in columns]
        if extra:
            raise DimensionError(f"{path}: unexpected column '{extra[0]}'")
        rows = list(reader)
    out = {}
    for c in columns:
        try:
            out[c] = np.array([float(r[c]) for r in rows], dtype=float)
        except (TypeError, ValueError) as exc:
            raise DimensionError(f"{path}: non-numeric value in column '{c}'") from exc
    return out


def load_dataset(data_config: dict, base_dir=".") -> MultiFidelityDataSet:
    """Load a dataset from the CSV tables named in a validated data config.

    The config declares the column layout (x, shared and level-specific
    calibration columns, response column), per-column bounds, and the
    declared sizes p / m_shared / m_low / m_high, which are checked against
    the column lists.  ``high_csv`` is optional: with it the dataset is the
    two-level model, without it the single-level special case.
    """
    base = Path(base_dir)
    x_cols = list(data_config["x_columns"])
    tf_cols = list(data_config.get("t_shared_columns", []))
    tl_cols = list(data_config.get("t_low_columns", []))
    th_cols = list(data_config.get("t_high_columns", []))
    y_col = data_config.get("y_column", "y")
    bounds_map = data_config.get("bounds", {})

    declared = {
        "p": len(x_cols),
        "m_shared": len(tf_cols),
        "m_low": len(tl_cols),
        "m_high": len(th_cols),
    }
    for key, got in declared.items():
        want = data_config.get(key)
        if want is not None and int(want) != got:
            raise DimensionError(
                f"declared {key}={want} but the column list has {got} entries"
            )

    def bounds_for(cols):
        out = []
        for c in cols:
            b = bounds_map.get(c, (0.0, 1.0))
            out.append((float(b[0]), float(b[1])))
        return np.array(out, dtype=float).reshape(-1, 2)

    def stack(got, names, n_rows):
        if not names:
            return np.empty((n_rows, 0))
        return np.column_stack([got[c] for c in names])

    def table(path, t_own_cols, with_t=True):
        cols = x_cols + (tf_cols + t_own_cols if with_t else []) + [y_col]
        got = _read_csv_columns(base / path, cols)
        n = got[y_col].shape[0]
        x = stack(got, x_cols, n)
        t_shared = stack(got, tf_cols if with_t else [], n)
        t_own = stack(got, t_own_cols if with_t else [], n)
        return x, t_shared, t_own, got[y_col]

    fx, _, _, fy = table(data_config["field_csv"], [], with_t=False)
    level_runs = [table(data_config["low_csv"], tl_cols)]
    t_own_bounds = [bounds_for(tl_cols)]
    if data_config.get("high_csv"):
        level_runs.append(table(data_config["high_csv"], th_cols))
        t_own_bounds.append(bounds_for(th_cols))

    return MultiFidelityDataSet.from_raw(
        fx,
        fy,
        level_runs,
        x_bounds=bounds_for(x_cols),
        t_shared_bounds=bounds_for(tf_cols),
        t_own_bounds=t_own_bounds,
    )
