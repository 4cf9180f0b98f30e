"""Loading, validating and aligning building sensor time series.

All quantities are kept in SI units internally (W, s, J). A :class:`Dataset`
wraps a pandas frame indexed by tz-aware timestamps plus the site metadata.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import pandas as pd

from .errors import (
    AlignmentError,
    ConfigError,
    DuplicateTimestampError,
    EmptyDatasetError,
    GapError,
    RowError,
    SchemaError,
)

NUMERIC_COLUMNS = (
    "total_power_w",
    "hvac_power_w",
    "light_power_w",
    "plug_power_w",
    "occupancy_pct",
    "solar_wm2",
    "ext_temp_c",
    "indoor_temp_c",
    "indoor_lux",
)
CANONICAL_COLUMNS = ("timestamp",) + NUMERIC_COLUMNS
REQUIRED_COLUMNS = (
    "timestamp",
    "total_power_w",
    "occupancy_pct",
    "solar_wm2",
    "ext_temp_c",
    "indoor_temp_c",
    "indoor_lux",
)
END_USE_COLUMNS = ("hvac_power_w", "light_power_w", "plug_power_w")
# Optional observed control settings, used for modal default controls.
CONTROL_COLUMNS = ("light_setting", "hvac_setting")

GAP_POLICIES = ("drop-window", "hold-last", "fail")

_OFFSET_RE = re.compile(r"(Z|[+-]\d{2}(:?\d{2})?)$")


@dataclass(frozen=True)
class SensorRecord:
    timestamp: pd.Timestamp
    total_power: float
    occupancy: float
    solar: float
    ext_temp: float
    indoor_temp: float
    indoor_lux: float
    hvac_power: float | None = None
    light_power: float | None = None
    plug_power: float | None = None
    filled: bool = False
    light_setting: str | None = None
    hvac_setting: str | None = None


@dataclass(frozen=True)
class SiteMetadata:
    site_name: str
    floor_area_m2: float
    sampling_interval_s: float
    timezone: str = "UTC"
    holidays: frozenset = frozenset()
    z_l_w: float = 0.0
    z_h_w: float = math.inf

    def __post_init__(self):
        if not self.floor_area_m2 > 0:
            raise ConfigError(f"floor_area_m2 must be > 0, got {self.floor_area_m2}")
        if not self.sampling_interval_s > 0:
            raise ConfigError(
                f"sampling_interval_s must be > 0, got {self.sampling_interval_s}"
            )
        object.__setattr__(self, "holidays", frozenset(self.holidays))

    @classmethod
    def from_dict(cls, data: Mapping) -> "SiteMetadata":
        missing = [k for k in ("site_name", "floor_area_m2", "sampling_interval_s") if k not in data]
        if missing:
            raise SchemaError(f"metadata missing key(s): {', '.join(missing)}", column=missing[0])
        z_h = data.get("z_h_w")
        return cls(
            site_name=str(data["site_name"]),
            floor_area_m2=float(data["floor_area_m2"]),
            sampling_interval_s=float(data["sampling_interval_s"]),
            timezone=data.get("timezone", "UTC"),
            holidays=frozenset(date.fromisoformat(d) for d in data.get("holidays", [])),
            z_l_w=float(data.get("z_l_w", 0.0)),
            z_h_w=math.inf if z_h is None else float(z_h),
        )

    @classmethod
    def from_json(cls, path) -> "SiteMetadata":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "site_name": self.site_name,
            "floor_area_m2": self.floor_area_m2,
            "sampling_interval_s": self.sampling_interval_s,
            "timezone": self.timezone,
            "holidays": sorted(d.isoformat() for d in self.holidays),
            "z_l_w": self.z_l_w,
            "z_h_w": None if math.isinf(self.z_h_w) else self.z_h_w,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Time-ordered sensor samples of one site.

    ``frame`` is indexed by a tz-aware ``DatetimeIndex`` and holds the numeric
    canonical columns (end-use columns may be absent), an optional ``filled``
    flag column and optional control-setting columns.
    """

    frame: pd.DataFrame
    meta: SiteMetadata
    clamped: int = 0
    gaps: tuple = field(default=())

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def dt(self) -> float:
        return self.meta.sampling_interval_s

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return self.frame.index

    @property
    def power(self) -> np.ndarray:
        return self.frame["total_power_w"].to_numpy(dtype=float)

    def has_column(self, name: str) -> bool:
        return name in self.frame.columns

    @property
    def records(self) -> Iterator[SensorRecord]:
        cols = self.frame.columns

        def opt(row, name):
            if name not in cols:
                return None
            v = row[name]
            if isinstance(v, float) and math.isnan(v):
                return None
            return v

        for ts, row in self.frame.iterrows():
            yield SensorRecord(
                timestamp=ts,
                total_power=float(row["total_power_w"]),
                occupancy=float(row["occupancy_pct"]),
                solar=float(row["solar_wm2"]),
                ext_temp=float(row["ext_temp_c"]),
                indoor_temp=float(row["indoor_temp_c"]),
                indoor_lux=float(row["indoor_lux"]),
                hvac_power=opt(row, "hvac_power_w"),
                light_power=opt(row, "light_power_w"),
                plug_power=opt(row, "plug_power_w"),
                filled=bool(row["filled"]) if "filled" in cols else False,
                light_setting=opt(row, "light_setting"),
                hvac_setting=opt(row, "hvac_setting"),
            )

    def equals(self, other: "Dataset") -> bool:
        return self.meta == other.meta and self.frame.equals(other.frame)

    def contiguous_runs(self) -> np.ndarray:
        """Run id per record; a new run starts after every timestamp gap."""
        ns = self.frame.index.asi8
        step = _interval_ns(self.dt)
        breaks = np.diff(ns) != step
        return np.concatenate([[0], np.cumsum(breaks)])


def _interval_ns(dt_s: float) -> int:
    return int(round(dt_s * 1e9))


def _line(i: int) -> int:
    # header is line 1
    return i + 2


def _parse_timestamps(raw: pd.Series, tz: str) -> pd.DatetimeIndex:
    for i, s in enumerate(raw):
        if not _OFFSET_RE.search(s.strip()):
            raise RowError(
                f"line {_line(i)}: timestamp {s!r} lacks an explicit UTC offset", line=_line(i)
            )
    parsed = pd.to_datetime(raw.str.strip(), utc=True, errors="coerce", format="ISO8601")
    bad = np.flatnonzero(parsed.isna().to_numpy())
    if bad.size:
        i = int(bad[0])
        raise RowError(f"line {_line(i)}: unparseable timestamp {raw.iloc[i]!r}", line=_line(i))
    return pd.DatetimeIndex(parsed).tz_convert(tz)


def _validate_frame(frame: pd.DataFrame, lines: np.ndarray, closure_tolerance: float) -> None:
    checks = [
        ("total_power_w", frame["total_power_w"] < 0, "total_power_w must be >= 0"),
        ("occupancy_pct", (frame["occupancy_pct"] < 0) | (frame["occupancy_pct"] > 100),
         "occupancy_pct must lie in [0, 100]"),
        ("solar_wm2", frame["solar_wm2"] < 0, "solar_wm2 must be >= 0"),
        ("indoor_lux", frame["indoor_lux"] < 0, "indoor_lux must be >= 0"),
    ]
    for _, mask, msg in checks:
        bad = np.flatnonzero(mask.to_numpy())
        if bad.size:
            ln = int(lines[bad[0]])
            raise RowError(f"line {ln}: {msg}", line=ln)

    if all(c in frame.columns for c in END_USE_COLUMNS):
        parts = frame[list(END_USE_COLUMNS)]
        complete = parts.notna().all(axis=1).to_numpy()
        total = frame["total_power_w"].to_numpy()
        resid = np.abs(total - parts.sum(axis=1).to_numpy())
        bad = np.flatnonzero(complete & (resid > closure_tolerance * total + 1e-9))
        if bad.size:
            ln = int(lines[bad[0]])
            raise RowError(
                f"line {ln}: end-use powers do not sum to total within "
                f"{closure_tolerance:.0%}",
                line=ln,
            )


def frame_from_table(
    table: pd.DataFrame,
    meta: SiteMetadata,
    closure_tolerance: float = 0.05,
) -> Dataset:
    """Build a validated, sorted Dataset from a string-valued canonical table."""
    if len(table) == 0:
        raise EmptyDatasetError("empty dataset")

    index = _parse_timestamps(table["timestamp"].astype(str), meta.timezone)
    lines = np.arange(len(table)) + 2

    data = {}
    for col in NUMERIC_COLUMNS:
        if col not in table.columns:
            continue
        raw = table[col].astype(str).str.strip()
        values = pd.to_numeric(raw.where(raw != "", None), errors="coerce")
        unparsed = values.isna().to_numpy() & (raw != "").to_numpy()
        empty_required = (raw == "").to_numpy() & (col in REQUIRED_COLUMNS)
        bad = np.flatnonzero(unparsed | empty_required)
        if bad.size:
            i = int(bad[0])
            raise RowError(
                f"line {_line(i)}: cannot parse {col}={table[col].iloc[i]!r}", line=_line(i)
            )
        data[col] = values.to_numpy(dtype=float)
    if "filled" in table.columns:
        data["filled"] = table["filled"].astype(str).str.strip().isin(["1", "true", "True"]).to_numpy()
    for col in CONTROL_COLUMNS:
        if col in table.columns:
            vals = table[col].astype(str).str.strip()
            data[col] = vals.where(vals != "", None).to_numpy(dtype=object)

    frame = pd.DataFrame(data, index=index)
    frame.index.name = "timestamp"
    _validate_frame(frame, lines, closure_tolerance)

    order = np.argsort(frame.index.asi8, kind="stable")
    frame = frame.iloc[order]
    lines = lines[order]

    ns = frame.index.asi8
    dup = np.flatnonzero(np.diff(ns) == 0)
    if dup.size:
        ln = int(lines[dup[0] + 1])
        raise DuplicateTimestampError(
            f"line {ln}: duplicate timestamp {frame.index[dup[0]].isoformat()}", line=ln
        )
    step = _interval_ns(meta.sampling_interval_s)
    misaligned = np.flatnonzero(np.diff(ns) % step != 0)
    if misaligned.size:
        j = int(misaligned[0])
        raise AlignmentError(
            f"gap between {frame.index[j].isoformat()} and {frame.index[j + 1].isoformat()} "
            f"is not a multiple of {meta.sampling_interval_s:g} s"
        )
    return Dataset(frame=frame, meta=meta)


def load_csv(
    path,
    metadata: SiteMetadata,
    column_map: Mapping[str, str] | None = None,
    closure_tolerance: float = 0.05,
) -> Dataset:
    """Read a sensor CSV into a :class:`Dataset`.

    ``column_map`` maps canonical column names to the names used in the file.
    Rows are sorted by timestamp; timestamps must carry an explicit offset and
    are converted to ``metadata.timezone``.
    """
    table = pd.read_csv(path, dtype=str, keep_default_na=False)
    column_map = dict(column_map or {})
    for canonical, src in column_map.items():
        if src not in table.columns:
            raise SchemaError(f"missing required column {src!r}", column=src)
    table = table.drop(columns=[c for c in column_map if c in table.columns and c not in column_map.values()])
    table = table.rename(columns={v: k for k, v in column_map.items()})
    for col in REQUIRED_COLUMNS:
        if col not in table.columns:
            src = (column_map or {}).get(col, col)
            raise SchemaError(f"missing required column {src!r}", column=src)
    return frame_from_table(table, metadata, closure_tolerance)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6g}"


def write_csv(dataset: Dataset, path) -> None:
    """Write the canonical CSV (floats at 6 significant digits)."""
    frame = dataset.frame
    cols = [c for c in NUMERIC_COLUMNS if c in frame.columns]
    extra = [c for c in CONTROL_COLUMNS if c in frame.columns]
    has_filled = "filled" in frame.columns
    out = pd.DataFrame(index=range(len(frame)))
    out["timestamp"] = [ts.isoformat() for ts in frame.index]
    for c in cols:
        out[c] = [_fmt(v) for v in frame[c].to_numpy(dtype=float)]
    for c in extra:
        out[c] = ["" if v is None else str(v) for v in frame[c]]
    if has_filled:
        out["filled"] = np.where(frame["filled"].to_numpy(dtype=bool), "1", "0")
    out.to_csv(path, index=False)


def clamp_power(dataset: Dataset) -> Dataset:
    """Map total power below z_l to z_l and above z_h to z_h."""
    z_l, z_h = dataset.meta.z_l_w, dataset.meta.z_h_w
    if z_l < 0 or z_l > z_h:
        raise ConfigError(f"invalid power bounds z_l={z_l}, z_h={z_h}")
    p = dataset.power
    clipped = np.clip(p, z_l, z_h)
    n = int(np.count_nonzero(clipped != p))
    frame = dataset.frame.copy()
    frame["total_power_w"] = clipped
    return replace(dataset, frame=frame, clamped=n)


def find_gaps(dataset: Dataset) -> list[tuple[pd.Timestamp, int]]:
    """Return ``(first missing timestamp, missing interval count)`` per gap."""
    ns = dataset.frame.index.asi8
    step = _interval_ns(dataset.dt)
    diffs = np.diff(ns)
    out = []
    for j in np.flatnonzero(diffs > step):
        missing = int(diffs[j] // step) - 1
        start = dataset.frame.index[j] + pd.Timedelta(step, unit="ns")
        out.append((start, missing))
    return out


def fill_gaps(dataset: Dataset, policy: str = "drop-window", max_gap: int = 5) -> Dataset:
    if policy not in GAP_POLICIES:
        raise ConfigError(f"unknown gap policy {policy!r}; expected one of {GAP_POLICIES}")
    gaps = find_gaps(dataset)
    if not gaps:
        return dataset
    if policy == "fail":
        start, n = gaps[0]
        raise GapError(f"gap of {n} interval(s) at {start.isoformat()}", start=start, span=n)
    if policy == "drop-window":
        # Windowed computations only use contiguous runs, so recording suffices.
        return replace(dataset, gaps=tuple(gaps))

    for start, n in gaps:
        if n > max_gap:
            raise GapError(
                f"gap of {n} interval(s) at {start.isoformat()} exceeds hold-last max {max_gap}",
                start=start,
                span=n,
            )
    frame = dataset.frame.copy()
    if "filled" not in frame.columns:
        frame["filled"] = False
    step = pd.Timedelta(_interval_ns(dataset.dt), unit="ns")
    full = pd.date_range(frame.index[0], frame.index[-1], freq=step, name="timestamp")
    new = frame.reindex(full)
    inserted = ~full.isin(frame.index)
    prev = np.maximum.accumulate(np.where(~inserted, np.arange(len(full)), 0))
    new = frame.iloc[np.searchsorted(frame.index.asi8, full.asi8[prev])].copy()
    new.index = full
    new["filled"] = new["filled"].to_numpy(dtype=bool) | inserted
    return replace(dataset, frame=new)


def dataset_from_columns(
    timestamps: pd.DatetimeIndex,
    columns: Mapping[str, np.ndarray],
    meta: SiteMetadata,
) -> Dataset:
    """Wrap already-validated in-memory columns (used by the generator)."""
    frame = pd.DataFrame(dict(columns), index=timestamps)
    frame.index.name = "timestamp"
    return Dataset(frame=frame, meta=meta)
