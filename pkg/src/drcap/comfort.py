"""Occupant comfort constraints and the choice of DR controls.

Candidates are enumerated per end use; the cheapest one whose delivered
comfort meets the occupancy state's minimum utility is selected. Curtailment
is the power saved relative to default operation, integrated over the DR
period.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

import numpy as np

from .errors import ConfigError, InfeasibleControlError, InsufficientDataError, SchemaError

END_USES = ("hvac", "light")

# Piecewise-linear stand-ins anchored on the comfort table's extreme points.
DEFAULT_THERMAL = ((26.0, 0.9), (30.0, 0.1))
DEFAULT_VISUAL = ((0.0, 0.1), (600.0, 0.9))


@dataclass(frozen=True)
class UtilityFunction:
    kind: str
    breakpoints: tuple

    def __post_init__(self):
        if self.kind not in ("thermal", "visual"):
            raise ConfigError(f"utility kind must be thermal or visual, got {self.kind!r}")
        pts = sorted((float(x), float(u)) for x, u in self.breakpoints)
        if not pts:
            raise ConfigError("utility function needs at least one breakpoint")
        xs = [x for x, _ in pts]
        if len(set(xs)) != len(xs):
            raise ConfigError(f"duplicate utility breakpoint inputs: {xs}")
        if any(not 0.0 <= u <= 1.0 for _, u in pts):
            raise ConfigError("utility values must lie in [0, 1]")
        object.__setattr__(self, "breakpoints", tuple(pts))

    @property
    def units(self) -> str:
        return "degC" if self.kind == "thermal" else "lux"

    def __call__(self, condition: float) -> float:
        xs, us = zip(*self.breakpoints)
        return float(np.interp(condition, xs, us))


def utility_eval(fn: UtilityFunction, condition: float) -> float:
    return fn(condition)


@dataclass(frozen=True)
class ControlCandidate:
    end_use: str
    label: str
    power_w: float
    delivered: float

    def __post_init__(self):
        if self.power_w < 0:
            raise ConfigError(f"candidate {self.label!r} has negative power")


@dataclass(frozen=True)
class OccupancyComfort:
    u_min_thermal: float
    u_min_visual: float
    temp_c: float | None
    lux: float | None
    hvac: tuple
    light: tuple

    def u_min(self, end_use: str) -> float:
        return self.u_min_thermal if end_use == "hvac" else self.u_min_visual

    def candidates(self, end_use: str) -> tuple:
        return self.hvac if end_use == "hvac" else self.light


@dataclass(frozen=True)
class ComfortTable:
    site: str
    occ_states: tuple
    thermal: UtilityFunction = field(default_factory=lambda: UtilityFunction("thermal", DEFAULT_THERMAL))
    visual: UtilityFunction = field(default_factory=lambda: UtilityFunction("visual", DEFAULT_VISUAL))
    context: dict = field(default_factory=dict)
    default_power_w: dict = field(default_factory=dict)

    def __post_init__(self):
        for attr in ("u_min_thermal", "u_min_visual"):
            vals = [getattr(o, attr) for o in self.occ_states]
            if any(not 0 <= v <= 1 for v in vals):
                raise ConfigError(f"{self.site}: {attr} values must lie in [0, 1]")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ConfigError(f"{self.site}: {attr} must be non-decreasing in occupancy")

    def utility(self, end_use: str) -> UtilityFunction:
        return self.thermal if end_use == "hvac" else self.visual

    def with_u_min(self, thermal=None, visual=None) -> "ComfortTable":
        """Copy with replaced minimum-utility sequences."""
        states = []
        for i, o in enumerate(self.occ_states):
            states.append(OccupancyComfort(
                o.u_min_thermal if thermal is None else float(thermal[i]),
                o.u_min_visual if visual is None else float(visual[i]),
                o.temp_c, o.lux, o.hvac, o.light,
            ))
        return ComfortTable(self.site, tuple(states), self.thermal, self.visual,
                            self.context, self.default_power_w)

    @classmethod
    def from_dict(cls, site: str, d: Mapping) -> "ComfortTable":
        try:
            states = []
            for o in d["occ_states"]:
                hv = tuple(ControlCandidate("hvac", str(c["label"]), float(c["power_w"]),
                                            float(c["delivered_temp_c"]))
                           for c in o.get("hvac_candidates", []))
                li = tuple(ControlCandidate("light", str(c["label"]), float(c["power_w"]),
                                            float(c["delivered_lux"]))
                           for c in o.get("light_candidates", []))
                states.append(OccupancyComfort(float(o["u_min_thermal"]), float(o["u_min_visual"]),
                                               o.get("temp_c"), o.get("lux"), hv, li))
        except KeyError as exc:
            raise SchemaError(f"comfort table {site!r} missing key {exc.args[0]!r}",
                              column=exc.args[0]) from None
        util = d.get("utilities", {})
        return cls(
            site=site,
            occ_states=tuple(states),
            thermal=UtilityFunction("thermal", util.get("thermal", DEFAULT_THERMAL)),
            visual=UtilityFunction("visual", util.get("visual", DEFAULT_VISUAL)),
            context=dict(d.get("context", {})),
            default_power_w={k: float(v) for k, v in d.get("default_power_w", {}).items()},
        )


def load_comfort(path=None) -> dict[str, ComfortTable]:
    """Comfort tables keyed by site; the bundled table when ``path`` is None."""
    if path is None:
        data = json.loads(resources.files("drcap").joinpath("data/comfort.json").read_text())
    else:
        with open(path) as fh:
            data = json.load(fh)
    sites = data.get("sites", data)
    return {name: ComfortTable.from_dict(name, d) for name, d in sites.items()}


def select_optimal_control(comfort: ComfortTable, occ_state: int, end_use: str) -> ControlCandidate:
    """Cheapest candidate meeting the occupancy state's minimum utility.

    Ties on power go to the candidate declared first.
    """
    if end_use not in END_USES:
        raise ConfigError(f"end use must be one of {END_USES}, got {end_use!r}")
    try:
        occ = comfort.occ_states[occ_state]
    except IndexError:
        raise ConfigError(f"{comfort.site}: no comfort row for occupancy state {occ_state}") from None
    cands = occ.candidates(end_use)
    if not cands:
        raise ConfigError(f"{comfort.site}: no {end_use} candidates for occupancy state {occ_state}")
    u_min = occ.u_min(end_use)
    fn = comfort.utility(end_use)
    feasible = [(c.power_w, i, c) for i, c in enumerate(cands) if fn(c.delivered) >= u_min]
    if not feasible:
        raise InfeasibleControlError(
            f"{comfort.site}: no {end_use} candidate reaches u_min={u_min} "
            f"at occupancy state {occ_state}",
            u_min=u_min,
        )
    return min(feasible)[2]


@dataclass(frozen=True)
class Curtailment:
    """Deterministic energy reduction over one DR period."""

    total_j: float
    breakdown_j: dict
    default_w: dict
    optimal: dict
    sources: dict
    context_match: bool


def _default_power(entry, comfort: ComfortTable, end_use: str, source: str):
    attr = {"hvac": "hvac_w", "light": "light_w"}[end_use]
    from_table = None if entry is None else getattr(entry, attr)
    from_comfort = comfort.default_power_w.get(end_use)
    if source in ("auto", "table") and from_table is not None:
        return from_table, "table"
    if source in ("auto", "comfort") and from_comfort is not None:
        return from_comfort, "comfort"
    raise InsufficientDataError(
        f"no default {end_use} power for source={source!r}: lookup entry lacks "
        f"{attr} and comfort table has no override"
    )


def delta_z(table, comfort: ComfortTable, state, alpha_s: float, source: str = "auto") -> Curtailment:
    """Energy saved by switching every controllable end use to its optimal control.

    ``source`` picks where default (non-DR) end-use power comes from: lookup
    table end-use means, the comfort table's ``default_power_w`` overrides, or
    ``auto`` (table first). Plug loads are not controllable and contribute 0.
    """
    if not alpha_s > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha_s}")
    if source not in ("auto", "table", "comfort"):
        raise ConfigError(f"unknown default-power source {source!r}")
    state = tuple(int(i) for i in state)
    entry = None
    if table is not None:
        from .lookup import query
        entry = query(table, state)

    breakdown, defaults, optimal, sources = {}, {}, {}, {}
    for end_use in END_USES:
        p_def, src = _default_power(entry, comfort, end_use, source)
        best = select_optimal_control(comfort, state[2], end_use)
        breakdown[end_use] = max(0.0, p_def - best.power_w) * alpha_s
        defaults[end_use] = p_def
        optimal[end_use] = best
        sources[end_use] = src
    breakdown["plug"] = 0.0

    ctx = comfort.context
    match = all(ctx.get(k) is None or ctx[k] == state[i]
                for i, k in ((0, "wd"), (1, "hr"), (3, "sol"), (4, "temp")))
    return Curtailment(sum(breakdown.values()), breakdown, defaults, optimal, sources, match)
