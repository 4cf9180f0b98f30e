"""Discretisation of raw conditions into reference states.

A :class:`BinSchema` is plain data (JSON round-trippable). The bundled
``bins.json`` holds the default five-dimension classification: day type,
hour-of-day, occupancy, solar irradiance and outdoor temperature.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple

import numpy as np
import pandas as pd

from .errors import ConfigError, SchemaCoverageError, SchemaError

DIMENSIONS = ("wd", "hr", "occ", "sol", "temp")


class ReferenceState(NamedTuple):
    wd: int
    hr: int
    occ: int
    sol: int
    temp: int

    def key(self) -> str:
        return ",".join(str(i) for i in self)

    @classmethod
    def parse(cls, text: str) -> "ReferenceState":
        parts = [p.strip() for p in str(text).strip("() ").split(",")]
        if len(parts) != 5:
            raise ConfigError(f"state must have 5 comma-separated indices, got {text!r}")
        try:
            return cls(*(int(p) for p in parts))
        except ValueError:
            raise ConfigError(f"state indices must be integers, got {text!r}") from None


@dataclass(frozen=True)
class ControlSetting:
    light: str
    hvac: str

    def to_dict(self) -> dict:
        return {"light": self.light, "hvac": self.hvac}


@dataclass(frozen=True)
class Bins:
    """Numeric bins cut at ``edges``.

    ``closed="right"`` gives ``(-inf, e0], (e0, e1], ..., (e_last, inf)``; with
    ``e0 = 0`` on a non-negative quantity the first bin is the singleton {0}.
    ``closed="left"`` gives ``(-inf, e0), [e0, e1), ..., [e_last, inf)``.
    """

    edges: tuple
    closed: str = "right"

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size == 0 or np.any(np.diff(e) <= 0) or not np.all(np.isfinite(e)):
            raise ConfigError(f"bin edges must be finite and strictly increasing: {self.edges}")
        if self.closed not in ("left", "right"):
            raise ConfigError(f"closed must be 'left' or 'right', got {self.closed!r}")
        object.__setattr__(self, "edges", tuple(float(x) for x in e))

    @property
    def n_bins(self) -> int:
        return len(self.edges) + 1

    def index(self, values) -> np.ndarray:
        side = "left" if self.closed == "right" else "right"
        return np.searchsorted(self.edges, values, side=side)

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "closed": self.closed}


@dataclass(frozen=True)
class BinSchema:
    """Five-dimension classification of reference conditions.

    ``hour_starts`` lists each hour bin's start (local hours); bin ``i`` spans
    ``[hour_starts[i], hour_starts[i+1])`` cyclically, so the first bin may wrap
    midnight. ``workdays`` holds ISO weekday numbers (Mon=0) that count as
    working days unless the date is a holiday.
    """

    hour_starts: tuple
    occ: Bins
    sol: Bins
    temp: Bins
    workdays: frozenset = frozenset({0, 1, 2, 3, 4})
    name: str = "custom"

    def __post_init__(self):
        starts = [float(h) for h in self.hour_starts]
        if not starts or any(not 0 <= h < 24 for h in starts):
            raise ConfigError(f"hour starts must lie in [0, 24): {self.hour_starts}")
        # rotate so the sequence starts at its minimum; it must then increase
        k = int(np.argmin(starts))
        rotated = starts[k:] + starts[:k]
        if any(b <= a for a, b in zip(rotated, rotated[1:])):
            raise ConfigError(f"hour bins overlap or repeat: {self.hour_starts}")
        object.__setattr__(self, "hour_starts", tuple(starts))
        object.__setattr__(self, "workdays", frozenset(int(d) for d in self.workdays))

    @property
    def shape(self) -> tuple:
        return (2, len(self.hour_starts), self.occ.n_bins, self.sol.n_bins, self.temp.n_bins)

    def hour_index(self, hours) -> np.ndarray:
        """Bin index for fractional local hours in [0, 24)."""
        hours = np.asarray(hours, dtype=float)
        starts = np.asarray(self.hour_starts)
        order = np.argsort(starts)
        sorted_starts = starts[order]
        pos = np.searchsorted(sorted_starts, hours, side="right") - 1
        # hours before the earliest start belong to the bin starting latest
        pos = np.where(pos < 0, len(starts) - 1, pos)
        return order[pos]

    def is_valid(self, state: ReferenceState) -> bool:
        return all(0 <= int(i) < n for i, n in zip(state, self.shape))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "workdays": sorted(self.workdays),
            "hour_starts": list(self.hour_starts),
            "occ": self.occ.to_dict(),
            "sol": self.sol.to_dict(),
            "temp": self.temp.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BinSchema":
        try:
            return cls(
                hour_starts=tuple(data["hour_starts"]),
                occ=Bins(tuple(data["occ"]["edges"]), data["occ"].get("closed", "right")),
                sol=Bins(tuple(data["sol"]["edges"]), data["sol"].get("closed", "right")),
                temp=Bins(tuple(data["temp"]["edges"]), data["temp"].get("closed", "right")),
                workdays=frozenset(data.get("workdays", (0, 1, 2, 3, 4))),
                name=data.get("name", "custom"),
            )
        except KeyError as exc:
            raise SchemaError(f"bin schema missing key {exc.args[0]!r}", column=exc.args[0]) from None

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "BinSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_schema() -> BinSchema:
    """The bundled day/hour/occupancy/solar/temperature classification."""
    text = resources.files("drcap").joinpath("data/bins.json").read_text()
    return BinSchema.from_dict(json.loads(text))


def _classify(ts: pd.DatetimeIndex, occ, sol, temp, schema: BinSchema, holidays) -> np.ndarray:
    occ = np.asarray(occ, dtype=float)
    sol = np.asarray(sol, dtype=float)
    temp = np.asarray(temp, dtype=float)
    for name, arr in (("occupancy", occ), ("solar", sol), ("ext_temp", temp)):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise SchemaCoverageError(f"record {int(bad[0])}: {name} value {arr[bad[0]]} is not in any bin")

    weekday = ts.dayofweek.to_numpy()
    wd = np.isin(weekday, list(schema.workdays))
    if holidays:
        dates = pd.Index(ts.date)
        wd &= ~dates.isin(list(holidays))
    hours = ts.hour.to_numpy() + ts.minute.to_numpy() / 60.0 + ts.second.to_numpy() / 3600.0
    return np.column_stack(
        [
            wd.astype(np.int64),
            schema.hour_index(hours),
            schema.occ.index(occ),
            schema.sol.index(sol),
            schema.temp.index(temp),
        ]
    ).astype(np.int64)


def classify_record(record, schema: BinSchema, holidays=frozenset()) -> ReferenceState:
    """Reference state of a single :class:`~drcap.ingest.SensorRecord`.

    The timestamp is taken in its own (local) timezone.
    """
    ts = pd.DatetimeIndex([pd.Timestamp(record.timestamp)])
    row = _classify(ts, [record.occupancy], [record.solar], [record.ext_temp], schema, holidays)[0]
    return ReferenceState(*(int(i) for i in row))


def classify_series(dataset, schema: BinSchema) -> np.ndarray:
    """State labels for every record of ``dataset`` as an ``(n, 5)`` int array."""
    frame = dataset.frame
    if len(frame) == 0:
        return np.empty((0, 5), dtype=np.int64)
    return _classify(
        frame.index,
        frame["occupancy_pct"].to_numpy(),
        frame["solar_wm2"].to_numpy(),
        frame["ext_temp_c"].to_numpy(),
        schema,
        dataset.meta.holidays,
    )


def state_keys(labels: np.ndarray) -> list[ReferenceState]:
    return [ReferenceState(*(int(i) for i in row)) for row in labels]
