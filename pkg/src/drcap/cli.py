"""Command-line entry point: ``drcap <command> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data/validation error,
3 verification FAIL, 4 build-table produced an empty table.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .binning import BinSchema, ControlSetting, ReferenceState, classify_series, default_schema
from .capacity import (
    J_PER_KWH,
    J_PER_WH,
    CapacityQuery,
    aggregate_std,
    capacity,
    compare_periods,
    tradeoff_curve,
)
from .comfort import delta_z, load_comfort
from .errors import ConfigError, DRCapError
from .ingest import SiteMetadata, clamp_power, fill_gaps, load_csv, write_csv
from .lookup import LookupTable, build_table, gaussianity_report, query
from .oracle import (
    GridCell,
    StateTruth,
    DailyProfile,
    SyntheticSpec,
    default_grid,
    generate_dataset,
    grid_verify,
    afternoon_site_spec,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FAIL, EXIT_EMPTY = 0, 1, 2, 3, 4

log = logging.getLogger("drcap")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_epsilons(text: str) -> list[float]:
    """``lo:hi:step`` (inclusive) or a comma list."""
    if ":" in text:
        try:
            lo, hi, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise ConfigError(f"bad epsilon range {text!r}; expected lo:hi:step") from None
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad epsilon range {text!r}")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        grid = [round(lo + i * step, 12) for i in range(n)]
    else:
        grid = [float(x) for x in text.split(",")]
    if any(not 0 < e < 1 for e in grid):
        raise ConfigError("epsilon values must lie in (0, 1)")
    return grid


def _alphas(text: str) -> list[float]:
    vals = [float(x) for x in text.split(",") if x.strip()]
    if not vals or any(a <= 0 for a in vals):
        raise ConfigError("alpha values must be positive seconds")
    return vals


def _load_dataset(args, meta: SiteMetadata):
    ds = load_csv(args.input, meta)
    ds = clamp_power(ds)
    if ds.clamped:
        log.info("clamped %d sample(s) to [%g, %g] W", ds.clamped, meta.z_l_w, meta.z_h_w)
    return fill_gaps(ds, args.gap_policy)


# --------------------------------------------------------------------------


def cmd_gen_synth(args) -> int:
    if args.spec:
        spec = _spec_from_json(json.loads(Path(args.spec).read_text()))
    else:
        spec = afternoon_site_spec(days=args.days, dt_s=args.dt, seed=args.seed)
    ds = generate_dataset(spec)
    write_csv(ds, args.out_csv)
    spec.metadata.to_json(args.out_meta)
    print(f"wrote {len(ds)} records to {args.out_csv}")
    return EXIT_OK


def _truth(d) -> StateTruth:
    ctl = d.get("control")
    return StateTruth(float(d["mu_w"]), float(d["sigma_w"]), tuple(d.get("split", (0.5, 0.2, 0.3))),
                      None if ctl is None else ControlSetting(str(ctl["light"]), str(ctl["hvac"])))


def _spec_from_json(d) -> SyntheticSpec:
    kw = {k: d[k] for k in ("dt_s", "duration_s", "start", "seed", "noise", "site_name",
                            "floor_area_m2", "timezone") if k in d}
    if "holidays" in d:
        from datetime import date
        kw["holidays"] = frozenset(date.fromisoformat(x) for x in d["holidays"])
    for name in ("weekday", "weekend"):
        if name in d:
            p = d[name]
            kw[name] = DailyProfile(tuple(p["occupancy"]), tuple(p["solar"]), tuple(p["ext_temp"]))
    if "default" in d:
        kw["default"] = _truth(d["default"])
    truths = {tuple(ReferenceState.parse(k)): _truth(v) for k, v in d.get("truths", {}).items()}
    return SyntheticSpec(truths=truths, **kw)


def cmd_build_table(args) -> int:
    meta = SiteMetadata.from_json(args.metadata)
    schema = BinSchema.from_json(args.schema) if args.schema else default_schema()
    ds = _load_dataset(args, meta)
    table = build_table(ds, schema, min_samples=args.min_samples)
    table.save(args.out)
    for state, n in sorted(table.omitted.items()):
        print(f"omitted {state.key()} n={n}")
    if not table.entries:
        print(f"warning: no state reached min_samples={args.min_samples}; empty table written",
              file=sys.stderr)
        return EXIT_EMPTY
    flags = {d.state: d for d in gaussianity_report(table)}
    print("state n mu_w sigma_w skew exkurt flag")
    for state, e in table.entries.items():
        d = flags[state]
        skew = "nan" if d.skew is None else f"{d.skew:.3f}"
        kurt = "nan" if d.exkurt is None else f"{d.exkurt:.3f}"
        print(f"{state.key()} {e.n} {e.mu_w:.3f} {e.sigma_w:.3f} {skew} {kurt} "
              f"{'FLAG' if d.flagged else 'ok'}")
    print(f"wrote {len(table)} entries to {args.out}")
    return EXIT_OK


def _comfort_for(args, table: LookupTable):
    sites = load_comfort(args.comfort)
    name = args.site or table.provenance.get("site_name")
    if name in sites:
        return sites[name]
    if len(sites) == 1:
        return next(iter(sites.values()))
    raise ConfigError(f"choose a comfort site with --site (available: {', '.join(sorted(sites))})")


class _Context:
    """Inputs shared by capacity, curve and compare."""

    def __init__(self, args):
        self.table = LookupTable.load(args.table)
        self.comfort = _comfort_for(args, self.table)
        self.state = ReferenceState.parse(args.state)
        self.entry = query(self.table, self.state)
        prov = self.table.provenance
        self.dt = float(args.dt or prov.get("sampling_interval_s") or 1.0)
        self.floor_area = args.floor_area or prov.get("floor_area_m2")
        self.source = args.delta_source
        self.s_mode = args.s_mode
        self._window = None
        if self.s_mode == "window-empirical":
            if not (args.input and args.metadata):
                raise ConfigError("window-empirical S needs --input and --metadata")
            meta = SiteMetadata.from_json(args.metadata)
            ds = _load_dataset(args, meta)
            self._window = (ds, classify_series(ds, self.table.schema))

    def delta_z(self, alpha):
        return delta_z(self.table, self.comfort, self.state, alpha, source=self.source)

    def std(self, alpha):
        if self._window is None:
            return aggregate_std(self.entry.sigma_w, alpha, self.dt)
        ds, labels = self._window
        return aggregate_std(self.entry.sigma_w, alpha, self.dt, "window-empirical",
                             dataset=ds, labels=labels, state=self.state)


def _print_capacity_header(ctx: _Context, alpha, dz, s):
    print(f"state={ctx.state.key()} alpha_s={alpha:g} dt_s={ctx.dt:g} site={ctx.comfort.site}")
    print(f"mu_w={ctx.entry.mu_w:.6f} sigma_w={ctx.entry.sigma_w:.6f} n={ctx.entry.n}")
    for eu in ("hvac", "light"):
        print(f"delta_z_{eu}_kwh={dz.breakdown_j[eu] / J_PER_KWH:.9f} "
              f"default_w={dz.default_w[eu]:g} optimal={dz.optimal[eu].label} "
              f"optimal_w={dz.optimal[eu].power_w:g} source={dz.sources[eu]}")
    print(f"delta_z_plug_kwh={0.0:.9f}")
    print(f"delta_z_kwh={dz.total_j / J_PER_KWH:.9f}")
    print(f"aggregate_std_kwh={s / J_PER_KWH:.9f} s_mode={ctx.s_mode}")
    if not dz.context_match:
        print("warning: comfort table was built for a different reference context", file=sys.stderr)


def _curve(ctx: _Context, alpha, grid, out):
    dz = ctx.delta_z(alpha)
    s = ctx.std(alpha)
    _print_capacity_header(ctx, alpha, dz, s)
    q = CapacityQuery(tuple(ctx.state), alpha, dz.total_j, ctx.entry.sigma_w, ctx.dt,
                      ctx.floor_area, aggregate_std_j=s)
    curve = tradeoff_curve(q, grid)
    curve.to_csv(out)
    print(f"wrote {len(curve.points)} rows to {out}")
    return EXIT_OK


def cmd_capacity(args) -> int:
    ctx = _Context(args)
    alpha = args.alpha
    if args.epsilons:
        if not args.out:
            raise ConfigError("--epsilons needs --out")
        return _curve(ctx, alpha, parse_epsilons(args.epsilons), args.out)
    eps = args.epsilon
    if not 0 < eps < 1:
        raise ConfigError("epsilon must lie in (0, 1)")
    dz = ctx.delta_z(alpha)
    s = ctx.std(alpha)
    _print_capacity_header(ctx, alpha, dz, s)
    cap = capacity(dz.total_j, s, eps)
    print(f"epsilon={eps:g}")
    print(f"capacity_raw_kwh={cap.raw_kwh:.9f}")
    print(f"capacity_kwh={cap.kwh:.9f}")
    if ctx.floor_area:
        print(f"capacity_per_m2_wh={cap.clamped_j / J_PER_WH / ctx.floor_area:.6f}")
    print(f"feasible={str(cap.feasible).lower()}")
    return EXIT_OK


def cmd_curve(args) -> int:
    ctx = _Context(args)
    return _curve(ctx, args.alpha, parse_epsilons(args.epsilons), args.out)


def cmd_compare(args) -> int:
    ctx = _Context(args)
    if not ctx.floor_area:
        raise ConfigError("compare needs a floor area (--floor-area or table provenance)")
    cmp = compare_periods(lambda a: ctx.delta_z(a).total_j, ctx.std, _alphas(args.alphas),
                          args.epsilon, ctx.floor_area)
    cmp.to_csv(args.out)
    for r in cmp.rows:
        mark = "  <- best" if r.alpha_s == cmp.best_alpha_s else ""
        if r.capacity is None:
            print(f"alpha_s={r.alpha_s:g} error={r.error}")
        else:
            print(f"alpha_s={r.alpha_s:g} capacity_kwh={r.capacity.raw_kwh:.9f} "
                  f"unit_wh_per_m2={r.unit_capacity_wh_per_m2:.6f} "
                  f"feasible={str(r.feasible).lower()}{mark}")
    print(f"wrote {len(cmp.rows)} rows to {args.out}")
    return EXIT_OK


def _grid_from_args(args) -> list[GridCell]:
    if args.grid:
        data = json.loads(Path(args.grid).read_text())
        return [GridCell(float(c["delta_z_j"]), float(c["sigma_w"]), float(c["alpha_s"]),
                         float(c["beta_j"]), float(c["dt_s"]), float(c.get("mu_w", 10_000.0)))
                for c in data]
    if args.delta_z_kwh is not None:
        if args.s_kwh is None or args.beta_kwh is None:
            raise ConfigError("single-cell simulation needs --delta-z-kwh, --s-kwh and --beta-kwh")
        sigma = args.s_kwh * J_PER_KWH / math.sqrt(args.alpha * args.dt)
        return [GridCell(args.delta_z_kwh * J_PER_KWH, sigma, args.alpha,
                         args.beta_kwh * J_PER_KWH, args.dt)]
    return default_grid(args.alpha, args.dt)


def cmd_simulate(args) -> int:
    grid = _grid_from_args(args)
    report = grid_verify(grid, args.trials, args.seed, workers=args.workers)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict}: {len(grid)} cell(s), max|z|={report.max_abs_z:.3f}, "
          f"within 2 SE: {report.frac_within_2:.1%}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


# --------------------------------------------------------------------------


def _add_context_args(p, eps_required=False):
    p.add_argument("--table", required=True, help="lookup table JSON")
    p.add_argument("--comfort", help="comfort table JSON (default: bundled table)")
    p.add_argument("--site", help="comfort site name")
    p.add_argument("--state", required=True, help="reference state w,h,o,s,t")
    p.add_argument("--dt", type=float, help="sampling interval in s (default: from table)")
    p.add_argument("--floor-area", type=float, help="floor area in m2 (default: from table)")
    p.add_argument("--delta-source", choices=("auto", "table", "comfort"), default="auto",
                   help="where default end-use power comes from")
    p.add_argument("--s-mode", choices=("iid-scaling", "window-empirical"), default="iid-scaling")
    p.add_argument("--input", help="sensor CSV (window-empirical S only)")
    p.add_argument("--metadata", help="metadata JSON (window-empirical S only)")
    p.add_argument("--gap-policy", choices=("drop-window", "hold-last", "fail"), default="drop-window")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drcap", description="Demand-response capacity estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="write a synthetic sensor CSV and metadata")
    p.add_argument("--spec", help="synthetic spec JSON")
    p.add_argument("--days", type=int, default=28)
    p.add_argument("--dt", type=float, default=60.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-meta", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("build-table", help="build the per-state lookup table")
    p.add_argument("--input", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--schema", help="bin schema JSON (default: bundled)")
    p.add_argument("--min-samples", type=int, default=30)
    p.add_argument("--gap-policy", choices=("drop-window", "hold-last", "fail"), default="drop-window")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_table)

    p = sub.add_parser("capacity", help="DR capacity at one epsilon (or a curve)")
    _add_context_args(p)
    p.add_argument("--alpha", type=float, default=3600.0, help="DR period in s")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--epsilons", help="lo:hi:step grid; writes a curve CSV to --out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("curve", help="capacity/uncertainty trade-off curve CSV")
    _add_context_args(p)
    p.add_argument("--alpha", type=float, default=3600.0)
    p.add_argument("--epsilons", default="0.01:0.99:0.01")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("compare", help="unit capacity across DR periods")
    _add_context_args(p)
    p.add_argument("--alphas", required=True, help="comma list of DR periods in s")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="Monte Carlo check of the clearing probability")
    p.add_argument("--grid", help="JSON list of cells")
    p.add_argument("--delta-z-kwh", type=float)
    p.add_argument("--s-kwh", type=float)
    p.add_argument("--beta-kwh", type=float)
    p.add_argument("--alpha", type=float, default=3600.0)
    p.add_argument("--dt", type=float, default=900.0)
    p.add_argument("--trials", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=20240101)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DRCapError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
