"""Brute-force verification of the clearing probability.

Synthetic datasets with known per-state ground truth, and direct sampling of
DR periods. Random streams are keyed by ``(seed, stream, block)`` through
Philox so results do not depend on how blocks are spread over threads.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .binning import BinSchema, ControlSetting, classify_series, default_schema
from .capacity import J_PER_KWH, aggregate_std, clearing_probability, standard_normal_from_uniform
from .errors import ConfigError
from .ingest import Dataset, SiteMetadata, dataset_from_columns

MIN_TRIALS = 10_000
_TINY = 2.0 ** -54


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


def open_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    u[u == 0.0] = _TINY
    return u


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class StateTruth:
    mu_w: float
    sigma_w: float
    split: tuple = (0.5, 0.2, 0.3)  # hvac, light, plug fractions of total
    control: ControlSetting | None = None

    def __post_init__(self):
        if self.sigma_w < 0 or self.mu_w < 0:
            raise ConfigError("mu and sigma must be non-negative")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ConfigError(f"end-use split must be 3 non-negative fractions summing to 1: {self.split}")


@dataclass(frozen=True)
class DailyProfile:
    """Hourly (24 values) occupancy %, solar W/m2 and outdoor temperature degC."""

    occupancy: tuple
    solar: tuple
    ext_temp: tuple
    indoor_temp: float = 24.0
    indoor_lux: float = 500.0

    def __post_init__(self):
        for name in ("occupancy", "solar", "ext_temp"):
            if len(getattr(self, name)) != 24:
                raise ConfigError(f"profile {name} needs 24 hourly values")


def flat_profile(occupancy=0.0, solar=0.0, ext_temp=25.0) -> DailyProfile:
    return DailyProfile((occupancy,) * 24, (solar,) * 24, (ext_temp,) * 24)


@dataclass(frozen=True)
class SyntheticSpec:
    truths: Mapping
    default: StateTruth = StateTruth(800.0, 100.0)
    weekday: DailyProfile = field(default_factory=flat_profile)
    weekend: DailyProfile = field(default_factory=flat_profile)
    dt_s: float = 60.0
    duration_s: float = 7 * 86400.0
    start: str = "2024-01-01T00:00:00+08:00"
    seed: int = 0
    noise: str = "gaussian"
    site_name: str = "synthetic"
    floor_area_m2: float = 824.5
    timezone: str = "Asia/Singapore"
    holidays: frozenset = frozenset()

    def __post_init__(self):
        if not self.dt_s > 0 or not self.duration_s > 0:
            raise ConfigError("dt and duration must be positive")
        n = self.duration_s / self.dt_s
        if abs(n - round(n)) > 1e-9:
            raise ConfigError("duration must be a multiple of dt")
        if self.noise not in ("gaussian", "exponential"):
            raise ConfigError(f"unknown noise model {self.noise!r}")
        object.__setattr__(self, "truths", {tuple(k): v for k, v in self.truths.items()})

    @property
    def metadata(self) -> SiteMetadata:
        return SiteMetadata(self.site_name, self.floor_area_m2, self.dt_s, self.timezone, self.holidays)


def generate_dataset(spec: SyntheticSpec, schema: BinSchema | None = None) -> Dataset:
    """Sample a dataset whose per-state power statistics follow ``spec.truths``.

    Conditions follow the hourly profiles (weekend profile on non-working
    days); each record's state picks its ground truth, falling back to
    ``spec.default``. Total power is clipped at 0.
    """
    schema = schema or default_schema()
    n = int(round(spec.duration_s / spec.dt_s))
    start = pd.Timestamp(spec.start).tz_convert(spec.timezone)
    ts = start + pd.to_timedelta(np.arange(n) * spec.dt_s, unit="s")
    ts = pd.DatetimeIndex(ts, name="timestamp")

    workday = np.isin(ts.dayofweek, list(schema.workdays))
    if spec.holidays:
        workday &= ~pd.Index(ts.date).isin(list(spec.holidays))
    hour = ts.hour.to_numpy()
    cols = {}
    for name in ("occupancy", "solar", "ext_temp"):
        wk = np.asarray(getattr(spec.weekday, name), dtype=float)
        we = np.asarray(getattr(spec.weekend, name), dtype=float)
        cols[name] = np.where(workday, wk[hour], we[hour])

    frame = {
        "occupancy_pct": cols["occupancy"],
        "solar_wm2": cols["solar"],
        "ext_temp_c": cols["ext_temp"],
        "indoor_temp_c": np.where(workday, spec.weekday.indoor_temp, spec.weekend.indoor_temp),
        "indoor_lux": np.where(workday, spec.weekday.indoor_lux, spec.weekend.indoor_lux),
    }
    probe = dataset_from_columns(ts, frame, spec.metadata)
    labels = classify_series(probe, schema)
    codes = np.ravel_multi_index(labels.T, schema.shape)

    truth_of = {int(np.ravel_multi_index(k, schema.shape)): t for k, t in spec.truths.items()}
    mu = np.full(n, spec.default.mu_w)
    sigma = np.full(n, spec.default.sigma_w)
    split = np.tile(np.asarray(spec.default.split, dtype=float), (n, 1))
    light_set = np.full(n, None if spec.default.control is None else spec.default.control.light, dtype=object)
    hvac_set = np.full(n, None if spec.default.control is None else spec.default.control.hvac, dtype=object)
    for code, t in truth_of.items():
        m = codes == code
        mu[m], sigma[m], split[m] = t.mu_w, t.sigma_w, t.split
        if t.control is not None:
            light_set[m], hvac_set[m] = t.control.light, t.control.hvac

    u = open_uniform(stream(spec.seed, 0), n)
    if spec.noise == "gaussian":
        z = standard_normal_from_uniform(u)
    else:
        z = -np.log(u) - 1.0  # unit-variance, zero-mean exponential noise
    power = np.maximum(mu + sigma * z, 0.0)

    frame["total_power_w"] = power
    frame["hvac_power_w"] = power * split[:, 0]
    frame["light_power_w"] = power * split[:, 1]
    frame["plug_power_w"] = power * split[:, 2]
    if any(v is not None for v in light_set):
        frame["light_setting"] = light_set
        frame["hvac_setting"] = hvac_set
    order = ["total_power_w", "hvac_power_w", "light_power_w", "plug_power_w", "occupancy_pct",
             "solar_wm2", "ext_temp_c", "indoor_temp_c", "indoor_lux"]
    order += [c for c in ("light_setting", "hvac_setting") if c in frame]
    return dataset_from_columns(ts, {c: frame[c] for c in order}, spec.metadata)


AFTERNOON_STATE = (1, 4, 2, 2, 3)


def afternoon_site_spec(days: int = 28, dt_s: float = 60.0, seed: int = 0, **kw) -> SyntheticSpec:
    """A site whose working-day afternoons sit in state (1, 4, 2, 2, 3).

    Those samples have mean 1.2 kW and standard deviation 0.2 kW, with light
    ON and HVAC at 23 degC by default; other conditions use a generic state.
    """
    occ = [0] * 7 + [20] * 3 + [60] * 4 + [40] * 4 + [10] * 3 + [0] * 3
    sol = [0] * 7 + [150] * 3 + [500] * 4 + [300] * 4 + [50] * 3 + [0] * 3
    temp = [25] * 7 + [26] * 3 + [29] * 4 + [28] * 4 + [26] * 3 + [25] * 3
    weekday = DailyProfile(tuple(occ), tuple(sol), tuple(temp))
    weekend = DailyProfile((0,) * 24, tuple(sol), tuple(temp))
    truths = {AFTERNOON_STATE: StateTruth(1200.0, 200.0, (0.55, 0.15, 0.30), ControlSetting("ON", "23"))}
    params = dict(
        truths=truths,
        default=StateTruth(700.0, 120.0, (0.4, 0.2, 0.4), ControlSetting("ON", "25")),
        weekday=weekday,
        weekend=weekend,
        dt_s=dt_s,
        duration_s=days * 86400.0,
        start="2024-01-01T00:00:00+08:00",
        seed=seed,
    )
    params.update(kw)
    return SyntheticSpec(**params)


# --------------------------------------------------------------------------
# clearing simulation


@dataclass(frozen=True)
class SimulationResult:
    trials: int
    successes: int
    p_hat: float
    se: float
    f_analytic: float
    z: float


def z_score(p_hat: float, f: float, trials: int) -> float:
    """Standardised discrepancy between an empirical and an analytic probability.

    The binomial standard error uses whichever of ``p_hat`` and ``f`` is
    further from 0/1, so cells where the sample saw no successes still get a
    finite score.
    """
    var = max(p_hat * (1.0 - p_hat), f * (1.0 - f)) / trials
    if var == 0.0:
        return 0.0 if p_hat == f else math.copysign(math.inf, p_hat - f)
    return (p_hat - f) / math.sqrt(var)


def _block_size(k: int) -> int:
    return max(1, min(65536, (1 << 22) // k))


def _count_block(seed, stream_id, block, size, k, mu, sigma, dt, zbar, dz, beta, bounds):
    rng = stream(seed, stream_id, block)
    z = standard_normal_from_uniform(open_uniform(rng, (size, k)))
    power = mu + sigma * z
    if bounds is not None:
        np.clip(power, bounds[0], bounds[1], out=power)
    energy = power.sum(axis=1) * dt
    return int(np.count_nonzero(zbar - (energy - dz) <= beta))


def simulate_clearing(
    mu: float,
    sigma: float,
    dt: float,
    alpha: float,
    dz: float,
    beta: float,
    trials: int,
    seed: int,
    *,
    stream_id: int = 0,
    baseline_mu: float | None = None,
    bounds: tuple | None = None,
    workers: int = 1,
) -> SimulationResult:
    """Empirical probability that a DR event with reduction ``dz`` clears ``beta``.

    Each trial draws ``alpha/dt`` i.i.d. power samples, sums them to the
    period energy and counts success when ``baseline - (energy - dz) <= beta``.
    The baseline energy uses ``baseline_mu`` (defaults to the true ``mu``).
    """
    if trials < MIN_TRIALS:
        raise ConfigError(f"trials must be >= {MIN_TRIALS}, got {trials}")
    k = alpha / dt
    if not (k >= 1 and abs(k - round(k)) < 1e-9):
        raise ConfigError(f"alpha/dt must be a positive integer, got {alpha}/{dt}")
    k = int(round(k))
    zbar = (mu if baseline_mu is None else baseline_mu) * alpha

    size = _block_size(k)
    n_blocks = -(-trials // size)
    jobs = [(b, min(size, trials - b * size)) for b in range(n_blocks)]

    def run(job):
        b, m = job
        return _count_block(seed, stream_id, b, m, k, mu, sigma, dt, zbar, dz, beta, bounds)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            successes = sum(pool.map(run, jobs))
    else:
        successes = sum(map(run, jobs))

    p_hat = successes / trials
    se = math.sqrt(p_hat * (1.0 - p_hat) / trials)
    f = clearing_probability(dz, beta, aggregate_std(sigma, alpha, dt)).probability
    return SimulationResult(trials, successes, p_hat, se, f, z_score(p_hat, f, trials))


# --------------------------------------------------------------------------
# grid harness


@dataclass(frozen=True)
class GridCell:
    dz: float
    sigma: float
    alpha: float
    beta: float
    dt: float
    mu: float = 10_000.0

    def to_dict(self) -> dict:
        return {"delta_z_j": self.dz, "sigma_w": self.sigma, "alpha_s": self.alpha,
                "beta_j": self.beta, "dt_s": self.dt, "mu_w": self.mu}


def default_grid(alpha: float = 3600.0, dt: float = 900.0) -> list[GridCell]:
    """3 x 3 x 3 grid over delta_z, aggregate std S and beta (kWh scale)."""
    cells = []
    for dz_kwh in (0.5, 1.0, 2.0):
        for s_kwh in (0.2, 0.5, 1.0):
            sigma = s_kwh * J_PER_KWH / math.sqrt(alpha * dt)
            dz = dz_kwh * J_PER_KWH
            for beta in (0.0, dz / 2, dz):
                cells.append(GridCell(dz, sigma, alpha, beta, dt))
    return cells


@dataclass
class VerificationReport:
    cells: list
    passed: bool
    max_abs_z: float
    frac_within_2: float
    trials: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "cells": self.cells,
            "summary": {
                "verdict": "PASS" if self.passed else "FAIL",
                "n_cells": len(self.cells),
                "max_abs_z": self.max_abs_z,
                "frac_within_2": self.frac_within_2,
                "trials": self.trials,
                "seed": self.seed,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def grid_verify(
    grid: Sequence[GridCell],
    trials: int,
    seed: int,
    workers: int = 1,
    analytic: Callable[[GridCell], float] | None = None,
) -> VerificationReport:
    """Compare simulated clearing frequencies with the closed form on every cell.

    PASS requires every |z| <= 4 and at least 95% of cells with |z| <= 2.
    ``analytic`` overrides the closed form (used to check that the harness
    catches a wrong formula).
    """
    cells = []
    for i, c in enumerate(grid):
        r = simulate_clearing(c.mu, c.sigma, c.dt, c.alpha, c.dz, c.beta, trials, seed,
                              stream_id=i, workers=workers)
        f = r.f_analytic if analytic is None else float(analytic(c))
        z = z_score(r.p_hat, f, trials)
        cells.append({"params": c.to_dict(), "p_hat": r.p_hat, "se": r.se,
                      "f_analytic": f, "z": z})
    zs = np.abs([c["z"] for c in cells])
    max_z = float(zs.max()) if zs.size else 0.0
    frac = float(np.mean(zs <= 2.0)) if zs.size else 1.0
    passed = bool(zs.size) and max_z <= 4.0 and frac >= 0.95
    return VerificationReport(cells, passed, max_z, frac, trials, seed)
