"""Command-line front end.

Subcommands:

* ``solve``      clear one scenario and write the outcome bundle
* ``horizon``    synthesize and clear a run of days, with a settlement ledger
* ``verify``     audit a previously written outcome bundle
* ``synth``      materialize a scenario whose profiles are given as stats
* ``aggregate``  roll a horizon directory up into monthly/yearly summaries

Exit codes: 0 success, 1 infeasible dispatch, 2 failed verification,
3 unusable input (missing file, bad JSON, invalid scenario).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .market import (
    InfeasibleError, MarketOutcome, StandaloneProfits, clear_market,
    standalone_profits, storages,
)
from .scenario import (
    Scenario, ScenarioError, load_scenario, scenario_to_dict,
    synthesize_scenario,
)
from .sharing import (
    SharingInfeasibleError, SharingOutcome, solve_sharing,
)
from .verify import verify_all

DEFAULT_TOL = 1e-6

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_VERIFY = 2
EXIT_USAGE = 3

# settlement ledger columns, one row per (day, entity)
LEDGER_FIELDS = [
    "day", "entity", "j_su", "j_su_energy", "j_su_peak", "j_su_reserve",
    "j_energy", "j_reserve", "j_peak", "j_total",
    "reserve_share", "peak_share", "alpha", "improvement",
]

# calendar used by `aggregate` to bucket day numbers (non-leap year)
MONTH_LENGTHS = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]


def _write_json(path: Path, data: dict) -> None:
    """Write atomically with a stable byte layout, so reruns are diffable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _solve_bundle(scenario: Scenario, tol: float):
    su = standalone_profits(scenario, tol=tol)
    out = clear_market(scenario, tol=tol)
    sh = solve_sharing(scenario, out, su, tol=tol)
    return su, out, sh


def _bundle_dict(su: StandaloneProfits, out: MarketOutcome,
                 sh: SharingOutcome, emit_duals: bool) -> dict:
    return {
        "market": out.to_dict(include_duals=emit_duals),
        "standalone": su.to_dict(),
        "sharing": sh.to_dict(),
    }


def _ledger_rows(day: int, su: StandaloneProfits,
                 sh: SharingOutcome) -> list[dict]:
    rows = []
    for u in sh.entity_ids:
        alone = su.by_entity[u]
        rows.append({
            "day": day, "entity": u,
            "j_su": alone.total, "j_su_energy": alone.energy,
            "j_su_peak": alone.peak, "j_su_reserve": alone.reserve,
            "j_energy": sh.j_energy[u], "j_reserve": sh.j_reserve[u],
            "j_peak": sh.j_peak[u], "j_total": sh.j_total(u),
            "reserve_share": sh.reserve_share[u],
            "peak_share": sh.peak_share[u],
            "alpha": sh.alpha, "improvement": sh.improvement(u),
        })
    return rows


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _cmd_solve(args) -> int:
    scenario = load_scenario(args.scenario)
    try:
        su, out, sh = _solve_bundle(scenario, args.tol)
    except (InfeasibleError, SharingInfeasibleError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _write_json(Path(args.out), _bundle_dict(su, out, sh, args.emit_duals))
    print(f"objective {out.objective:.6f}  peak {out.peak:.4f} kW  "
          f"reserve {out.reserve:.4f} kW  alpha {sh.alpha:.6f}")
    print(f"wrote {args.out}")
    if args.verify:
        report = verify_all(scenario, out, sh, tol=args.tol)
        print(report.format_table())
        if not report.ok:
            return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario)
    bundle = _read_json(Path(args.outcome))
    market_data = bundle.get("market", bundle)
    if not market_data.get("duals"):
        print("outcome has no duals; re-run solve with --emit-duals",
              file=sys.stderr)
        return EXIT_USAGE
    outcome = MarketOutcome.from_dict(market_data)
    sharing = None
    if "sharing" in bundle:
        sharing = SharingOutcome.from_dict(bundle["sharing"])
    report = verify_all(scenario, outcome, sharing, tol=args.tol)
    print(report.format_table())
    return EXIT_OK if report.ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    spec = _read_json(Path(args.stats))
    scenario = synthesize_scenario(spec, args.seed,
                                   base_dir=Path(args.stats).parent)
    _write_json(Path(args.out), scenario_to_dict(scenario))
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# horizon
# ---------------------------------------------------------------------------

def _day_seed(seed: int, day: int) -> int:
    return int(np.random.SeedSequence((seed, day)).generate_state(1)[0])


def _reset_storage(scenario: Scenario, soc_frac: float) -> Scenario:
    """Start and end every day at the same state of charge, so consecutive
    days chain without carrying state between solves."""
    entities = []
    for e in scenario.entities:
        devices = []
        for d in e.devices:
            if d.kind == "sto":
                level = d.cap_max * soc_frac
                d = replace(d, soc_init=level, soc_final=level)
            devices.append(d)
        entities.append(replace(e, devices=devices))
    return replace(scenario, entities=entities)


def _run_day(task: tuple) -> dict:
    (template, day, seed, soc_frac, tol, out_dir, emit_duals) = task
    day_dir = Path(out_dir) / f"day_{day:03d}"
    result = {"day": day, "status": "ok", "rows": [], "message": ""}
    try:
        scenario = synthesize_scenario(template, _day_seed(seed, day))
        scenario = _reset_storage(scenario, soc_frac)
        su, out, sh = _solve_bundle(scenario, tol)
        report = verify_all(scenario, out, sh, tol=tol)
        _write_json(day_dir / "scenario.json", scenario_to_dict(scenario))
        _write_json(day_dir / "outcome.json",
                    _bundle_dict(su, out, sh, emit_duals))
        _write_json(day_dir / "verify.json", report.to_dict())
        result["rows"] = _ledger_rows(day, su, sh)
        if not report.ok:
            result["status"] = "verify_failed"
            result["message"] = "audit failed; see verify.json"
    except (InfeasibleError, SharingInfeasibleError) as exc:
        result["status"] = "infeasible"
        result["message"] = str(exc)
        _write_json(day_dir / "error.json", {"error": str(exc)})
    except Exception as exc:  # a bad day must not sink the rest of the run
        result["status"] = "error"
        result["message"] = f"{type(exc).__name__}: {exc}"
        _write_json(day_dir / "error.json", {"error": result["message"]})
    return result


def _cmd_horizon(args) -> int:
    template = _read_json(Path(args.scenario))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(template, day, args.seed, args.soc_frac, args.tol,
              str(out_dir), args.emit_duals)
             for day in range(1, args.days + 1)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_day, tasks))
    else:
        results = [_run_day(t) for t in tasks]
    results.sort(key=lambda r: r["day"])

    rows = [row for r in results for row in r["rows"]]
    with open(out_dir / "ledger.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LEDGER_FIELDS)
        writer.writeheader()
        writer.writerows(rows)

    bad = [r for r in results if r["status"] != "ok"]
    for r in bad:
        print(f"day {r['day']:3d}: {r['status']} {r['message']}",
              file=sys.stderr)
    print(f"{len(results) - len(bad)}/{len(results)} days cleared; "
          f"ledger: {out_dir / 'ledger.csv'}")
    if any(r["status"] in ("infeasible", "error") for r in results):
        return EXIT_INFEASIBLE
    if any(r["status"] == "verify_failed" for r in results):
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# aggregate
# ---------------------------------------------------------------------------

def _month_of(day: int) -> int:
    """1-based month for a 1-based day number; runs past a year wrap."""
    pos = (day - 1) % sum(MONTH_LENGTHS)
    for month, length in enumerate(MONTH_LENGTHS, start=1):
        if pos < length:
            return month
        pos -= length
    raise AssertionError("unreachable")


def _day_costs(day_dir: Path) -> dict:
    """Fees actually paid during one day, from the stored dispatch."""
    scenario = load_scenario(day_dir / "scenario.json")
    bundle = _read_json(day_dir / "outcome.json")
    primal = bundle["market"]["primal"]
    dt = scenario.grid.delta_hours
    periods = scenario.grid.periods
    storage_cost = 0.0
    operator_fee = 0.0
    for e in scenario.entities:
        for t in range(periods):
            operator_fee += scenario.tariffs.operator_fee * (
                primal[f"e_com/{e.id}/{t}"] + primal[f"i_com/{e.id}/{t}"])
        for d in storages(e):
            for t in range(periods):
                storage_cost += d.usage_fee * dt * (
                    d.p_charge * d.eff_charge
                    * primal[f"a_cha/{e.id}/{d.id}/{t}"]
                    + d.p_discharge / d.eff_discharge
                    * primal[f"a_dis/{e.id}/{d.id}/{t}"])
    return {
        "storage_usage_cost": storage_cost,
        "operator_fee_revenue": operator_fee,
        "peak_cost": scenario.tariffs.price_peak * bundle["market"]["peak"],
        "reserve_income": (scenario.tariffs.price_reserve
                           * bundle["market"]["reserve_symmetric"]),
        "welfare": bundle["market"]["objective"],
    }


def _cmd_aggregate(args) -> int:
    in_dir = Path(args.in_dir)
    ledger_path = in_dir / "ledger.csv"
    with open(ledger_path, newline="") as fh:
        rows = [{k: (v if k == "entity" else float(v))
                 for k, v in row.items()}
                for row in csv.DictReader(fh)]
    if not rows:
        print("ledger is empty", file=sys.stderr)
        return EXIT_USAGE
    entities = sorted({r["entity"] for r in rows})
    days = sorted({int(r["day"]) for r in rows})

    monthly: dict[int, dict] = {}
    yearly = {"gain": {u: 0.0 for u in entities},
              "j_total": {u: 0.0 for u in entities},
              "j_su": {u: 0.0 for u in entities}}
    daily_gain_percent: dict[str, list] = {u: [] for u in entities}
    for day in days:
        month = _month_of(day)
        bucket = monthly.setdefault(month, {
            "month": month, "days": 0,
            "gain": {u: 0.0 for u in entities},
            "storage_usage_cost": 0.0, "operator_fee_revenue": 0.0,
            "peak_cost": 0.0, "reserve_income": 0.0, "welfare": 0.0,
        })
        bucket["days"] += 1
        for r in (r for r in rows if int(r["day"]) == day):
            u = r["entity"]
            gain = r["j_total"] - r["j_su"]
            bucket["gain"][u] += gain
            yearly["gain"][u] += gain
            yearly["j_total"][u] += r["j_total"]
            yearly["j_su"][u] += r["j_su"]
            if abs(r["j_su"]) > 1e-9:
                daily_gain_percent[u].append(100.0 * gain / abs(r["j_su"]))
            else:
                daily_gain_percent[u].append(None)
        day_dir = in_dir / f"day_{day:03d}"
        if (day_dir / "outcome.json").exists():
            for key, value in _day_costs(day_dir).items():
                bucket[key] += value

    summary = {
        "days": len(days),
        "entities": entities,
        "yearly": yearly,
        "monthly": [monthly[m] for m in sorted(monthly)],
        "daily_gain_percent": daily_gain_percent,
    }
    _write_json(Path(args.out), summary)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="commarket",
        description="community market clearing, profit sharing, and audits")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="clear one scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out", required=True, help="outcome bundle to write")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--emit-duals", action="store_true",
                   help="include every named dual in the outcome file")
    p.add_argument("--verify", action="store_true",
                   help="audit the fresh outcome before exiting")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("verify", help="audit a stored outcome bundle")
    p.add_argument("--outcome", required=True, help="outcome bundle JSON")
    p.add_argument("--scenario", required=True,
                   help="the scenario the outcome was solved from")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("synth", help="draw profiles for a stats template")
    p.add_argument("--stats", required=True,
                   help="scenario JSON whose profiles may be stats blocks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser(
        "horizon",
        help="synthesize and clear many days; write ledger and audits")
    p.add_argument("--scenario", required=True,
                   help="scenario template (profiles may be stats blocks)")
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes for independent days")
    p.add_argument("--soc-frac", type=float, default=0.5,
                   help="daily start/end state of charge as a fraction "
                        "of capacity")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--emit-duals", action="store_true")
    p.set_defaults(func=_cmd_horizon)

    p = sub.add_parser("aggregate",
                       help="summarize a horizon directory by month and year")
    p.add_argument("--in", dest="in_dir", required=True,
                   help="horizon output directory")
    p.add_argument("--out", required=True, help="summary JSON to write")
    p.set_defaults(func=_cmd_aggregate)
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"cannot read input: {exc!r}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
