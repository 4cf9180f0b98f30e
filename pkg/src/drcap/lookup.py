"""Conditional consumption statistics per reference state.

Each entry keeps exact central-moment sums so that tables built on disjoint
parts of a dataset can be merged without revisiting raw samples.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .binning import BinSchema, ControlSetting, ReferenceState, classify_series
from .errors import ConfigError, EmptyDatasetError, StateNotFoundError

log = logging.getLogger(__name__)

_END_USES = (("hvac_power_w", "hvac_w"), ("light_power_w", "light_w"), ("plug_power_w", "plug_w"))


@dataclass(frozen=True)
class LookupEntry:
    state: ReferenceState
    n: int
    mu_w: float
    sigma_w: float
    control: ControlSetting | None = None
    hvac_w: float | None = None
    light_w: float | None = None
    plug_w: float | None = None
    skew: float | None = None
    exkurt: float | None = None
    mixed_control: bool = False
    n_excluded: int = 0

    @property
    def m2(self) -> float:
        return self.sigma_w ** 2 * (self.n - 1) if self.n > 1 else 0.0

    @property
    def degenerate(self) -> bool:
        return self.sigma_w == 0.0

    def _central_sums(self):
        m2 = self.m2
        if m2 == 0.0 or self.skew is None:
            return m2, 0.0, 0.0
        n = self.n
        # skew = sqrt(n) M3 / M2^1.5 and exkurt = n M4 / M2^2 - 3 (biased moments)
        m3 = self.skew * m2 ** 1.5 / math.sqrt(n)
        m4 = (self.exkurt + 3.0) * m2 ** 2 / n
        return m2, m3, m4

    def to_dict(self) -> dict:
        return {
            "control": None if self.control is None else self.control.to_dict(),
            "n": self.n,
            "mu_w": self.mu_w,
            "sigma_w": self.sigma_w,
            "hvac_w": self.hvac_w,
            "light_w": self.light_w,
            "plug_w": self.plug_w,
            "skew": self.skew,
            "exkurt": self.exkurt,
            "mixed_control": self.mixed_control,
            "n_excluded": self.n_excluded,
        }

    @classmethod
    def from_dict(cls, key: str, d: Mapping) -> "LookupEntry":
        ctl = d.get("control")
        return cls(
            state=ReferenceState.parse(key),
            n=int(d["n"]),
            mu_w=float(d["mu_w"]),
            sigma_w=float(d["sigma_w"]),
            control=None if ctl is None else ControlSetting(str(ctl["light"]), str(ctl["hvac"])),
            hvac_w=d.get("hvac_w"),
            light_w=d.get("light_w"),
            plug_w=d.get("plug_w"),
            skew=d.get("skew"),
            exkurt=d.get("exkurt"),
            mixed_control=bool(d.get("mixed_control", False)),
            n_excluded=int(d.get("n_excluded", 0)),
        )


@dataclass(frozen=True)
class LookupTable:
    schema: BinSchema
    entries: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    omitted: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, state) -> bool:
        return ReferenceState(*state) in self.entries

    def to_dict(self) -> dict:
        return {
            "schema_ref": self.schema.to_dict(),
            "provenance": self.provenance,
            "entries": {s.key(): e.to_dict() for s, e in sorted(self.entries.items())},
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=False)
            fh.write("\n")

    @classmethod
    def from_dict(cls, data: Mapping) -> "LookupTable":
        schema = BinSchema.from_dict(data["schema_ref"])
        entries = {}
        for key, d in data.get("entries", {}).items():
            e = LookupEntry.from_dict(key, d)
            if not schema.is_valid(e.state):
                raise ConfigError(f"table entry {key} is not a valid state for the schema")
            entries[e.state] = e
        return cls(schema, entries, dict(data.get("provenance", {})))

    @classmethod
    def load(cls, path) -> "LookupTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _moments(x: np.ndarray):
    n = x.size
    mu = float(np.mean(x))
    d = x - mu
    m2 = float(np.dot(d, d))
    sigma = math.sqrt(m2 / (n - 1)) if n > 1 else 0.0
    if m2 == 0.0:
        return mu, sigma, None, None
    m3 = float(np.sum(d ** 3))
    m4 = float(np.sum(d ** 4))
    skew = math.sqrt(n) * m3 / m2 ** 1.5
    exkurt = n * m4 / m2 ** 2 - 3.0
    return mu, sigma, skew, exkurt


def _resolve_control(default_controls, state):
    if default_controls is None:
        return None
    if callable(default_controls):
        return default_controls(state)
    return default_controls.get(state)


def build_table(
    dataset,
    schema: BinSchema,
    default_controls: Callable | Mapping | None = None,
    min_samples: int = 30,
    labels: np.ndarray | None = None,
) -> LookupTable:
    """Per-state mean, unbiased standard deviation and end-use means of total power.

    When the dataset carries observed ``light_setting``/``hvac_setting``
    columns the modal setting becomes the state's default control and samples
    under any other setting are excluded (the entry is flagged as mixed).
    Otherwise ``default_controls`` (a mapping or a callable on the state)
    supplies it. States with fewer than ``min_samples`` samples are omitted
    and listed in ``table.omitted``.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("empty dataset")
    if min_samples < 2:
        raise ConfigError(f"min_samples must be >= 2, got {min_samples}")
    if labels is None:
        labels = classify_series(dataset, schema)

    frame = dataset.frame
    power = dataset.power
    observed = all(c in frame.columns for c in ("light_setting", "hvac_setting"))
    if observed:
        settings = np.array(
            [f"{a}\x1f{b}" for a, b in zip(frame["light_setting"], frame["hvac_setting"])],
            dtype=object,
        )
    end_uses = [(col, attr, frame[col].to_numpy(dtype=float))
                for col, attr in _END_USES if col in frame.columns]

    # stable sort keeps timestamp order inside every cell
    codes = np.ravel_multi_index(labels.T, schema.shape)
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    bounds = np.flatnonzero(np.diff(sorted_codes)) + 1
    groups = np.split(order, bounds)

    entries, omitted = {}, {}
    for idx in groups:
        state = ReferenceState(*(int(i) for i in labels[idx[0]]))
        control, mixed, excluded = _resolve_control(default_controls, state), False, 0
        if observed:
            counts = Counter(settings[idx])
            # ties broken by first appearance in time
            mode = max(counts, key=lambda k: (counts[k], -int(np.argmax(settings[idx] == k))))
            keep = settings[idx] == mode
            mixed = len(counts) > 1
            excluded = int(np.count_nonzero(~keep))
            idx = idx[keep]
            light, hvac = mode.split("\x1f")
            control = ControlSetting(light, hvac)
        if idx.size < min_samples:
            omitted[state] = int(idx.size)
            continue
        mu, sigma, skew, exkurt = _moments(power[idx])
        extras = {}
        for _, attr, values in end_uses:
            v = values[idx]
            extras[attr] = float(np.mean(v)) if np.all(np.isfinite(v)) else None
        entries[state] = LookupEntry(
            state=state, n=int(idx.size), mu_w=mu, sigma_w=sigma, control=control,
            skew=skew, exkurt=exkurt, mixed_control=mixed, n_excluded=excluded, **extras,
        )
        if mixed:
            log.warning("state %s has mixed controls; %d minority samples excluded", state, excluded)

    if not entries:
        log.warning("no state reached min_samples=%d; table is empty", min_samples)
    ts = dataset.timestamps
    provenance = {
        "site_name": dataset.meta.site_name,
        "start": ts[0].isoformat(),
        "end": ts[-1].isoformat(),
        "sampling_interval_s": dataset.dt,
        "floor_area_m2": dataset.meta.floor_area_m2,
        "n_records": len(dataset),
        "min_samples": min_samples,
    }
    return LookupTable(schema, dict(sorted(entries.items())), provenance, omitted)


def neighbours(table: LookupTable, state, limit: int = 5) -> list[ReferenceState]:
    """Present states differing from ``state`` in exactly one coordinate."""
    state = tuple(state)
    out = [s for s in table.entries
           if sum(a != b for a, b in zip(s, state)) == 1]
    return sorted(out)[:limit]


def query(table: LookupTable, state) -> LookupEntry:
    state = ReferenceState(*state)
    try:
        return table.entries[state]
    except KeyError:
        raise StateNotFoundError(state, neighbours(table, state)) from None


def _pool(a: LookupEntry, b: LookupEntry) -> LookupEntry:
    n = a.n + b.n
    delta = b.mu_w - a.mu_w
    mu = (a.n * a.mu_w + b.n * b.mu_w) / n
    m2a, m3a, m4a = a._central_sums()
    m2b, m3b, m4b = b._central_sums()
    # Chan/Pebay pairwise update of central moment sums
    m2 = m2a + m2b + delta ** 2 * a.n * b.n / n
    m3 = (m3a + m3b + delta ** 3 * a.n * b.n * (a.n - b.n) / n ** 2
          + 3.0 * delta * (a.n * m2b - b.n * m2a) / n)
    m4 = (m4a + m4b
          + delta ** 4 * a.n * b.n * (a.n ** 2 - a.n * b.n + b.n ** 2) / n ** 3
          + 6.0 * delta ** 2 * (a.n ** 2 * m2b + b.n ** 2 * m2a) / n ** 2
          + 4.0 * delta * (a.n * m3b - b.n * m3a) / n)
    sigma = math.sqrt(m2 / (n - 1))
    skew = exkurt = None
    if m2 > 0:
        skew = math.sqrt(n) * m3 / m2 ** 1.5
        exkurt = n * m4 / m2 ** 2 - 3.0

    def wmean(x, y):
        if x is None or y is None:
            return None
        return (a.n * x + b.n * y) / n

    control = a.control if a.n >= b.n else b.control
    return LookupEntry(
        state=a.state, n=n, mu_w=mu, sigma_w=sigma, control=control,
        hvac_w=wmean(a.hvac_w, b.hvac_w), light_w=wmean(a.light_w, b.light_w),
        plug_w=wmean(a.plug_w, b.plug_w), skew=skew, exkurt=exkurt,
        mixed_control=a.mixed_control or b.mixed_control or a.control != b.control,
        n_excluded=a.n_excluded + b.n_excluded,
    )


def merge(a: LookupTable, b: LookupTable) -> LookupTable:
    """Pool two tables built on disjoint samples of the same site."""
    if a.schema != b.schema:
        raise ConfigError("cannot merge tables built with different bin schemas")
    dt_a = a.provenance.get("sampling_interval_s")
    dt_b = b.provenance.get("sampling_interval_s")
    if dt_a is not None and dt_b is not None and dt_a != dt_b:
        raise ConfigError(f"sampling intervals differ: {dt_a} s vs {dt_b} s")
    entries = {}
    for state in sorted(set(a.entries) | set(b.entries)):
        ea, eb = a.entries.get(state), b.entries.get(state)
        if ea is None or eb is None:
            entries[state] = ea or eb
        else:
            # order the operands so the result does not depend on argument order
            first, second = sorted((ea, eb), key=lambda e: (e.n, e.mu_w, e.sigma_w))
            entries[state] = _pool(first, second)
    prov = dict(a.provenance or b.provenance)
    if a.provenance and b.provenance:
        prov["start"] = min(a.provenance["start"], b.provenance["start"])
        prov["end"] = max(a.provenance["end"], b.provenance["end"])
        prov["n_records"] = a.provenance.get("n_records", 0) + b.provenance.get("n_records", 0)
    return replace(a, entries=entries, provenance=prov, omitted={})


@dataclass(frozen=True)
class GaussianityDiagnostic:
    state: ReferenceState
    n: int
    skew: float | None
    exkurt: float | None
    degenerate: bool
    flagged: bool


def gaussianity_report(table: LookupTable, max_skew: float = 1.0, max_exkurt: float = 2.0):
    """Flag states whose samples look non-Gaussian or have zero spread."""
    if not table.entries:
        raise EmptyDatasetError("gaussianity report needs a non-empty table")
    out = []
    for state, e in table.entries.items():
        degenerate = e.skew is None
        flagged = degenerate or abs(e.skew) > max_skew or abs(e.exkurt) > max_exkurt
        out.append(GaussianityDiagnostic(state, e.n, e.skew, e.exkurt, degenerate, flagged))
    return out
