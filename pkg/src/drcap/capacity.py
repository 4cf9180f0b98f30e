"""Clearing probability and DR capacity under Gaussian period-energy noise.

Energies are in joules, powers in watts, times in seconds. The aggregate
standard deviation ``S`` is the standard deviation of the period energy.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, InsufficientDataError

J_PER_KWH = 3.6e6
J_PER_WH = 3.6e3

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation to the normal quantile (rel. error ~1.2e-9),
# polished below by Halley steps on the exact erfc-based CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def q_function(x):
    """Standard normal upper tail ``Q(x) = 1 - Phi(x)``.

    Accepts a scalar or an array.
    """
    if np.ndim(x) == 0:
        x = float(x)
        if not math.isfinite(x):
            raise DomainError(f"q_function needs a finite argument, got {x}")
        return 0.5 * math.erfc(x / _SQRT2)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("q_function needs finite arguments")
    return 0.5 * special.erfc(x / _SQRT2)


def _horner(coef, t):
    acc = coef[0]
    for c in coef[1:]:
        acc = acc * t + c
    return acc


def _phi_inv_initial(p: np.ndarray) -> np.ndarray:
    x = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        x[mid] = _horner(_A, r) * q / (_horner(_B, r) * r + 1.0)
    if np.any(lo):
        q = np.sqrt(-2.0 * np.log(p[lo]))
        x[lo] = _horner(_C, q) / (_horner(_D, q) * q + 1.0)
    if np.any(hi):
        q = np.sqrt(-2.0 * np.log1p(-p[hi]))
        x[hi] = -_horner(_C, q) / (_horner(_D, q) * q + 1.0)
    return x


def _inv_q_array(eps: np.ndarray, steps: int = 2) -> np.ndarray:
    # Solve Phi(y) = eps, then Q^{-1}(eps) = -y.
    y = _phi_inv_initial(eps)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            e = 0.5 * special.erfc(-y / _SQRT2) - eps
            u = e * _SQRT2PI * np.exp(0.5 * y * y)
            step = u / (1.0 + 0.5 * y * u)
            y = np.where(np.isfinite(step), y - step, y)
    return -y


def inv_q(eps):
    """Inverse of :func:`q_function` on the open interval (0, 1)."""
    arr = np.asarray(eps, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError(f"inv_q needs 0 < eps < 1, got {eps}")
    if arr.ndim == 0:
        return float(_inv_q_array(arr.reshape(1))[0])
    return _inv_q_array(arr)


def standard_normal_from_uniform(u: np.ndarray) -> np.ndarray:
    """Inverse-CDF transform of uniforms in (0, 1); no domain check."""
    return _inv_q_array(u, steps=1)


def aggregate_std(
    sigma_w: float,
    alpha_s: float,
    dt_s: float,
    mode: str = "iid-scaling",
    dataset=None,
    labels: np.ndarray | None = None,
    state=None,
    min_windows: int = 10,
    stride: int = 1,
) -> float:
    """Standard deviation of the energy over a DR period, in joules.

    ``iid-scaling`` treats the ``alpha/dt`` power samples in a period as
    i.i.d., giving ``sigma * sqrt(alpha * dt)``. ``window-empirical`` measures
    the spread of energy sums over sliding windows of ``alpha/dt`` consecutive,
    gap-free samples that all fall in ``state``.
    """
    if not (alpha_s > 0 and dt_s > 0):
        raise DomainError(f"alpha and dt must be positive, got alpha={alpha_s}, dt={dt_s}")
    if mode == "iid-scaling":
        if sigma_w < 0:
            raise DomainError(f"sigma must be >= 0, got {sigma_w}")
        return float(sigma_w) * math.sqrt(alpha_s * dt_s)
    if mode != "window-empirical":
        raise DomainError(f"unknown aggregate_std mode {mode!r}")
    if dataset is None or labels is None or state is None:
        raise InsufficientDataError("window-empirical mode needs dataset, labels and state")

    k = alpha_s / dt_s
    if abs(k - round(k)) > 1e-9:
        raise DomainError(f"alpha ({alpha_s} s) is not a multiple of dt ({dt_s} s)")
    k = int(round(k))
    in_state = np.all(np.asarray(labels) == np.asarray(tuple(state)), axis=1)
    runs = dataset.contiguous_runs()
    energy = dataset.power * dt_s

    sums = []
    # segments: maximal stretches that are in-state and gap-free
    seg_id = np.concatenate([[0], np.cumsum((np.diff(runs) != 0) | (np.diff(in_state.astype(int)) != 0))])
    for sid in np.unique(seg_id[in_state]):
        seg = energy[seg_id == sid]
        if seg.size < k:
            continue
        c = np.concatenate([[0.0], np.cumsum(seg)])
        sums.append((c[k:] - c[:-k])[::stride])
    total = np.concatenate(sums) if sums else np.empty(0)
    if total.size < min_windows:
        raise InsufficientDataError(
            f"only {total.size} complete window(s) of {k} samples in state {tuple(state)}; "
            f"need {min_windows}"
        )
    return float(np.std(total, ddof=1))


@dataclass(frozen=True)
class Clearing:
    probability: float
    overcommitted: bool


def clearing_probability(delta_z: float, beta: float, s: float) -> Clearing:
    """Probability that the realised reduction reaches ``beta``.

    ``f = Q((delta_z - beta) / s)``; requests above ``delta_z`` are flagged as
    over-committed (f >= 0.5). With ``s == 0`` the outcome is deterministic.
    """
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    if s < 0 or delta_z < 0:
        raise DomainError(f"delta_z and S must be >= 0, got delta_z={delta_z}, S={s}")
    over = beta > delta_z
    if s == 0:
        return Clearing(0.0 if beta < delta_z else 1.0, over)
    return Clearing(q_function((delta_z - beta) / s), over)


@dataclass(frozen=True)
class Capacity:
    raw_j: float
    clamped_j: float
    feasible: bool

    @property
    def raw_kwh(self) -> float:
        return self.raw_j / J_PER_KWH

    @property
    def kwh(self) -> float:
        return self.clamped_j / J_PER_KWH


def capacity(delta_z: float, s: float, eps: float) -> Capacity:
    """Largest pre-agreed reduction whose clearing probability stays at ``eps``."""
    x = inv_q(eps)
    raw = delta_z if s == 0 else delta_z - s * x
    return Capacity(raw, max(0.0, raw), raw > 0)


@dataclass(frozen=True)
class CapacityQuery:
    state: tuple
    alpha_s: float
    delta_z_j: float
    sigma_w: float
    dt_s: float
    floor_area_m2: float | None = None
    aggregate_std_j: float | None = None

    def __post_init__(self):
        if not (self.alpha_s > 0 and self.dt_s > 0):
            raise DomainError("alpha and dt must be positive")
        if self.sigma_w < 0 or self.delta_z_j < 0:
            raise DomainError("sigma and delta_z must be non-negative")
        if self.floor_area_m2 is not None and not self.floor_area_m2 > 0:
            raise DomainError("floor area must be positive")

    @property
    def s_j(self) -> float:
        if self.aggregate_std_j is not None:
            return self.aggregate_std_j
        return aggregate_std(self.sigma_w, self.alpha_s, self.dt_s)


@dataclass(frozen=True)
class CurvePoint:
    eps: float
    capacity: Capacity
    per_m2_wh: float | None


@dataclass(frozen=True)
class CapacityCurve:
    query: CapacityQuery
    points: list = field(default_factory=list)

    @property
    def aggregate_std_j(self) -> float:
        return self.query.s_j

    @property
    def overcommit_threshold_j(self) -> float:
        # any beta above delta_z clears with probability >= 0.5
        return self.query.delta_z_j

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epsilon", "capacity_j", "capacity_kwh", "capacity_raw_kwh",
                        "capacity_per_m2_wh", "feasible"])
            for p in self.points:
                c = p.capacity
                w.writerow([
                    f"{p.eps:.6g}",
                    f"{c.clamped_j:.6f}",
                    f"{c.kwh:.9f}",
                    f"{c.raw_kwh:.9f}",
                    "" if p.per_m2_wh is None else f"{p.per_m2_wh:.6f}",
                    str(c.feasible).lower(),
                ])


def default_eps_grid() -> np.ndarray:
    return np.round(np.arange(1, 100) * 0.01, 10)


def tradeoff_curve(query: CapacityQuery, eps_grid) -> CapacityCurve:
    grid = [float(e) for e in eps_grid]
    if not grid:
        raise DomainError("epsilon grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("epsilon grid must be strictly ascending")
    s = query.s_j
    points = []
    for eps in grid:
        cap = capacity(query.delta_z_j, s, eps)
        per_m2 = None
        if query.floor_area_m2 is not None:
            per_m2 = cap.clamped_j / J_PER_WH / query.floor_area_m2
        points.append(CurvePoint(eps, cap, per_m2))
    return CapacityCurve(query, points)


@dataclass
class PeriodResult:
    alpha_s: float
    delta_z_j: float | None = None
    aggregate_std_j: float | None = None
    capacity: Capacity | None = None
    unit_capacity_wh_per_m2: float | None = None
    error: str | None = None

    @property
    def feasible(self) -> bool:
        return self.capacity is not None and self.capacity.feasible


@dataclass
class PeriodComparison:
    eps: float
    rows: list
    best_alpha_s: float | None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha_s", "delta_z_kwh", "aggregate_std_kwh", "capacity_kwh",
                        "unit_capacity_wh_per_m2", "feasible", "best", "error"])
            for r in self.rows:
                ok = r.capacity is not None
                w.writerow([
                    f"{r.alpha_s:g}",
                    f"{r.delta_z_j / J_PER_KWH:.9f}" if ok else "",
                    f"{r.aggregate_std_j / J_PER_KWH:.9f}" if ok else "",
                    f"{r.capacity.raw_kwh:.9f}" if ok else "",
                    f"{r.unit_capacity_wh_per_m2:.6f}" if ok else "",
                    str(r.feasible).lower(),
                    str(r.alpha_s == self.best_alpha_s).lower(),
                    r.error or "",
                ])


def compare_periods(delta_z_fn, std_fn, alphas, eps: float, floor_area_m2: float) -> PeriodComparison:
    """Unit capacity ``C_alpha(eps) / floor_area`` for each DR period.

    ``delta_z_fn(alpha)`` and ``std_fn(alpha)`` return joules. A failure for
    one period is recorded in its row and does not stop the others. The best
    period maximises the unit capacity (raw, so infeasible rows rank lowest).
    """
    alphas = list(alphas)
    if not alphas:
        raise DomainError("no DR periods given")
    inv_q(eps)  # validate once up front
    rows = []
    for alpha in alphas:
        row = PeriodResult(float(alpha))
        try:
            row.delta_z_j = float(delta_z_fn(alpha))
            row.aggregate_std_j = float(std_fn(alpha))
            row.capacity = capacity(row.delta_z_j, row.aggregate_std_j, eps)
            row.unit_capacity_wh_per_m2 = row.capacity.raw_j / J_PER_WH / floor_area_m2
        except Exception as exc:  # recorded per row
            row.error = f"{type(exc).__name__}: {exc}"
            row.capacity = None
        rows.append(row)
    scored = [r for r in rows if r.capacity is not None]
    best = max(scored, key=lambda r: r.unit_capacity_wh_per_m2).alpha_s if scored else None
    return PeriodComparison(eps, rows, best)
