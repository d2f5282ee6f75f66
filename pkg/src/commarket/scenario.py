"""Scenario model: time grid, tariffs, entities and their devices.

Covers JSON (de)serialization with optional CSV-backed profile columns,
validation that collects every problem in one pass, and synthesis of
profiles from summary statistics.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, ClassVar

import numpy as np
from scipy.optimize import fsolve
from scipy.stats import norm


class ScenarioError(Exception):
    """Base class for scenario problems."""


class ScenarioFormatError(ScenarioError):
    """The file could not be parsed into a scenario at all."""


class ScenarioValidationError(ScenarioError):
    """The scenario parsed but its contents are inconsistent."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid scenario:\n" + "\n".join(f"- {e}" for e in errors))


@dataclass
class TimeGrid:
    periods: int
    delta_hours: float


@dataclass
class Tariffs:
    price_import: list[float]
    price_export: list[float]
    price_peak: float
    price_reserve: float
    operator_fee: float


@dataclass
class NonFlexibleLoad:
    kind: ClassVar[str] = "nfl"
    id: str
    consumption: list[float]


@dataclass
class SheddableLoad:
    kind: ClassVar[str] = "she"
    id: str
    consumption: list[float]
    shed_cost: float


@dataclass
class NonSteerableGen:
    kind: ClassVar[str] = "nst"
    id: str
    production: list[float]


@dataclass
class SteerableGen:
    kind: ClassVar[str] = "ste"
    id: str
    production: list[float]
    gen_cost: float


@dataclass
class Storage:
    kind: ClassVar[str] = "sto"
    id: str
    cap_max: float
    cap_min: float
    p_charge: float
    p_discharge: float
    eff_charge: float
    eff_discharge: float
    usage_fee: float
    soc_init: float
    soc_final: float


DeviceSpec = (NonFlexibleLoad | SheddableLoad | NonSteerableGen
              | SteerableGen | Storage)

_DEVICE_KINDS = {cls.kind: cls for cls in
                 (NonFlexibleLoad, SheddableLoad, NonSteerableGen,
                  SteerableGen, Storage)}


@dataclass
class EntitySpec:
    id: str
    devices: list[DeviceSpec] = field(default_factory=list)
    export_cap: list[float] | None = None  # kW per period; None = unlimited
    import_cap: list[float] | None = None


@dataclass
class Scenario:
    grid: TimeGrid
    tariffs: Tariffs
    entities: list[EntitySpec]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _as_series(value: Any, periods: int, where: str,
               csv_cache: dict, base_dir: Path | None,
               default_column: str) -> list[float]:
    """A profile may be a list, a scalar to broadcast, or a CSV reference."""
    if isinstance(value, dict):
        if "csv" not in value:
            raise ScenarioFormatError(f"{where}: profile object needs a 'csv' key")
        if base_dir is None:
            raise ScenarioFormatError(f"{where}: CSV reference outside a file load")
        path = base_dir / value["csv"]
        column = value.get("column", default_column)
        table = csv_cache.get(path)
        if table is None:
            table = _read_csv_table(path)
            csv_cache[path] = table
        if column not in table:
            raise ScenarioFormatError(f"{where}: column {column!r} not in {path}")
        return table[column]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)] * periods
    if isinstance(value, list):
        return [float(v) for v in value]
    raise ScenarioFormatError(f"{where}: expected number, list, or CSV reference")


def _read_csv_table(path: Path) -> dict[str, list[float]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            columns: dict[str, list[float]] = {name: [] for name in header}
            for row in reader:
                for name, cell in zip(header, row):
                    columns[name].append(float(cell))
    except (OSError, ValueError, StopIteration) as exc:
        raise ScenarioFormatError(f"cannot read CSV {path}: {exc}") from exc
    return columns


def _as_cap(value: Any, periods: int, where: str) -> list[float] | None:
    if value is None:
        return None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)] * periods
    if isinstance(value, list):
        return [float(v) for v in value]
    raise ScenarioFormatError(f"{where}: cap must be null, a number, or a list")


def scenario_from_dict(data: dict, base_dir: Path | None = None) -> Scenario:
    csv_cache: dict[Path, dict[str, list[float]]] = {}
    try:
        grid = TimeGrid(periods=int(data["time"]["periods"]),
                        delta_hours=float(data["time"]["delta_hours"]))
        traw = data["tariffs"]
        tariffs = Tariffs(
            price_import=_as_series(traw["import"], grid.periods,
                                    "tariffs.import", csv_cache, base_dir,
                                    "tariffs/import"),
            price_export=_as_series(traw["export"], grid.periods,
                                    "tariffs.export", csv_cache, base_dir,
                                    "tariffs/export"),
            price_peak=float(traw["peak"]),
            price_reserve=float(traw["reserve"]),
            operator_fee=float(traw["operator_fee"]),
        )
        entities = []
        for e_idx, eraw in enumerate(data["entities"]):
            eid = str(eraw["id"])
            devices = []
            for d_idx, draw in enumerate(eraw.get("devices", [])):
                devices.append(_device_from_dict(
                    draw, eid, d_idx, grid.periods, csv_cache, base_dir))
            entities.append(EntitySpec(
                id=eid,
                devices=devices,
                export_cap=_as_cap(eraw.get("export_cap"), grid.periods,
                                   f"entities[{e_idx}].export_cap"),
                import_cap=_as_cap(eraw.get("import_cap"), grid.periods,
                                   f"entities[{e_idx}].import_cap"),
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc!r}") from exc
    return Scenario(grid=grid, tariffs=tariffs, entities=entities)


def _device_from_dict(draw: dict, entity_id: str, d_idx: int, periods: int,
                      csv_cache: dict, base_dir: Path | None) -> DeviceSpec:
    kind = draw.get("kind")
    if kind not in _DEVICE_KINDS:
        raise ScenarioFormatError(
            f"entity {entity_id!r} device {d_idx}: unknown kind {kind!r} "
            f"(expected one of {sorted(_DEVICE_KINDS)})")
    did = str(draw.get("id", f"{kind}{d_idx}"))
    where = f"entity {entity_id!r} device {did!r}"
    column = f"{entity_id}/{did}"

    def series(key: str) -> list[float]:
        return _as_series(draw[key], periods, f"{where}.{key}", csv_cache,
                          base_dir, column)

    if kind == "nfl":
        return NonFlexibleLoad(id=did, consumption=series("consumption"))
    if kind == "she":
        return SheddableLoad(id=did, consumption=series("consumption"),
                             shed_cost=float(draw["shed_cost"]))
    if kind == "nst":
        return NonSteerableGen(id=did, production=series("production"))
    if kind == "ste":
        return SteerableGen(id=did, production=series("production"),
                            gen_cost=float(draw["gen_cost"]))
    return Storage(
        id=did,
        cap_max=float(draw["cap_max"]), cap_min=float(draw["cap_min"]),
        p_charge=float(draw["p_charge"]), p_discharge=float(draw["p_discharge"]),
        eff_charge=float(draw["eff_charge"]),
        eff_discharge=float(draw["eff_discharge"]),
        usage_fee=float(draw["usage_fee"]),
        soc_init=float(draw["soc_init"]), soc_final=float(draw["soc_final"]),
    )


def scenario_to_dict(s: Scenario) -> dict:
    def device(d: DeviceSpec) -> dict:
        out: dict[str, Any] = {"kind": d.kind, "id": d.id}
        for key in ("consumption", "production", "shed_cost", "gen_cost",
                    "cap_max", "cap_min", "p_charge", "p_discharge",
                    "eff_charge", "eff_discharge", "usage_fee",
                    "soc_init", "soc_final"):
            if hasattr(d, key):
                out[key] = getattr(d, key)
        return out

    return {
        "time": {"periods": s.grid.periods, "delta_hours": s.grid.delta_hours},
        "tariffs": {
            "import": s.tariffs.price_import,
            "export": s.tariffs.price_export,
            "peak": s.tariffs.price_peak,
            "reserve": s.tariffs.price_reserve,
            "operator_fee": s.tariffs.operator_fee,
        },
        "entities": [
            {
                "id": e.id,
                "export_cap": e.export_cap,
                "import_cap": e.import_cap,
                "devices": [device(d) for d in e.devices],
            }
            for e in s.entities
        ],
    }


def load_scenario(path: str | Path) -> Scenario:
    """Load, parse, and validate a scenario file."""
    path = Path(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioFormatError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{path} is not valid JSON: {exc}") from exc
    scenario = scenario_from_dict(data, base_dir=path.parent)
    errors = validate_scenario(scenario)
    if errors:
        raise ScenarioValidationError(errors)
    return scenario


def write_scenario(s: Scenario, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(s), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_scenario(s: Scenario) -> list[str]:
    """Return every problem found, not just the first."""
    errors: list[str] = []
    T = s.grid.periods
    if T < 1:
        errors.append("time.periods must be at least 1")
    if not s.grid.delta_hours > 0:
        errors.append("time.delta_hours must be positive")

    t = s.tariffs
    for name, series in (("import", t.price_import), ("export", t.price_export)):
        if len(series) != T:
            errors.append(f"tariffs.{name} has {len(series)} values, expected {T}")
        if any(v < 0 for v in series):
            errors.append(f"tariffs.{name} has negative prices")
    for name, val in (("peak", t.price_peak), ("reserve", t.price_reserve),
                      ("operator_fee", t.operator_fee)):
        if val < 0:
            errors.append(f"tariffs.{name} must be nonnegative")
    if (len(t.price_import) == len(t.price_export)
            and any(i <= e for i, e in zip(t.price_import, t.price_export))):
        warnings.warn("import price is not strictly above export price in "
                      "every period; arbitrage against the grid is possible",
                      stacklevel=2)

    seen_entities: set[str] = set()
    for e in s.entities:
        if not e.id or "/" in e.id:
            errors.append(f"entity id {e.id!r} must be nonempty without '/'")
        if e.id in seen_entities:
            errors.append(f"duplicate entity id {e.id!r}")
        seen_entities.add(e.id)
        for cap_name, cap in (("export_cap", e.export_cap),
                              ("import_cap", e.import_cap)):
            if cap is None:
                continue
            if len(cap) != T:
                errors.append(f"{e.id}.{cap_name} has {len(cap)} values, expected {T}")
            if any(v < 0 for v in cap):
                errors.append(f"{e.id}.{cap_name} has negative values")
        seen_devices: set[str] = set()
        for d in e.devices:
            where = f"{e.id}/{d.id}"
            if not d.id or "/" in d.id:
                errors.append(f"device id {d.id!r} in {e.id!r} must be nonempty without '/'")
            if d.id in seen_devices:
                errors.append(f"duplicate device id {d.id!r} in entity {e.id!r}")
            seen_devices.add(d.id)
            errors.extend(_validate_device(d, where, T, s.grid.delta_hours))
    return errors


def _validate_device(d: DeviceSpec, where: str, T: int, delta: float) -> list[str]:
    errors = []
    for key in ("consumption", "production"):
        profile = getattr(d, key, None)
        if profile is None:
            continue
        if len(profile) != T:
            errors.append(f"{where}.{key} has {len(profile)} values, expected {T}")
        if any(v < 0 for v in profile):
            errors.append(f"{where}.{key} has negative values")
    if isinstance(d, SheddableLoad) and d.shed_cost < 0:
        errors.append(f"{where}.shed_cost must be nonnegative")
    if isinstance(d, SteerableGen) and d.gen_cost < 0:
        errors.append(f"{where}.gen_cost must be nonnegative")
    if isinstance(d, Storage):
        if not 0 <= d.cap_min <= d.cap_max:
            errors.append(f"{where}: needs 0 <= cap_min <= cap_max")
        for key in ("soc_init", "soc_final"):
            v = getattr(d, key)
            if not d.cap_min <= v <= d.cap_max:
                errors.append(f"{where}.{key}={v} outside [cap_min, cap_max]")
        for key in ("p_charge", "p_discharge", "usage_fee"):
            if getattr(d, key) < 0:
                errors.append(f"{where}.{key} must be nonnegative")
        for key in ("eff_charge", "eff_discharge"):
            v = getattr(d, key)
            if not 0 < v <= 1:
                errors.append(f"{where}.{key}={v} must be in (0, 1]")
        if 0 < d.eff_charge <= 1 and 0 < d.eff_discharge <= 1:
            up = d.soc_init + T * delta * d.p_charge * d.eff_charge
            down = d.soc_init - T * delta * d.p_discharge / d.eff_discharge
            if not down - 1e-9 <= d.soc_final <= up + 1e-9:
                errors.append(
                    f"{where}: soc_final={d.soc_final} unreachable from "
                    f"soc_init={d.soc_init} within {T} periods")
    return errors


# ---------------------------------------------------------------------------
# profile synthesis
# ---------------------------------------------------------------------------

def synth_profiles(seed: int, stats: dict, periods: int,
                   delta_hours: float) -> np.ndarray:
    """Draw a profile matching summary stats after clipping to [min, max].

    The pre-clip normal parameters are chosen so the *clipped* distribution
    hits the requested mean and standard deviation, then a stratified
    inverse-CDF draw keeps the sample moments tight for modest lengths
    (within 10% on the mean and 20% on the std from ~96 points up).
    Deterministic for a fixed (seed, stats, periods).
    """
    lo, hi = float(stats["min"]), float(stats["max"])
    avg, std = float(stats["avg"]), float(stats["std"])
    if hi < lo or not lo <= avg <= hi:
        raise ValueError(f"inconsistent stats: min={lo} avg={avg} max={hi}")
    rng = np.random.default_rng(seed)
    if std <= 0 or hi == lo:
        return np.full(periods, float(np.clip(avg, lo, hi)))
    params = _clipped_normal_params(lo, hi, avg, std)
    if params is None:
        draws = rng.normal(avg, std, periods)  # fallback: plain draw-and-clip
    else:
        mu, sigma = params
        u = (np.arange(periods) + rng.random(periods)) / periods
        draws = norm.ppf(u, loc=mu, scale=sigma)
        rng.shuffle(draws)
    return np.clip(draws, lo, hi)


def _clipped_moments(mu: float, sigma: float, lo: float, hi: float):
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    fa, fb = norm.pdf(a), norm.pdf(b)
    Fa, Fb = norm.cdf(a), norm.cdf(b)
    pm = Fb - Fa
    mean = lo * Fa + hi * (1.0 - Fb) + mu * pm - sigma * (fb - fa)
    second = (lo ** 2 * Fa + hi ** 2 * (1.0 - Fb)
              + (mu ** 2 + sigma ** 2) * pm
              + 2 * mu * sigma * (fa - fb)
              + sigma ** 2 * (a * fa - b * fb))
    var = max(second - mean ** 2, 0.0)
    return mean, np.sqrt(var)


def _clipped_normal_params(lo, hi, avg, std):
    span = hi - lo
    if std > 0.5 * span:  # a clipped distribution cannot be wider than this
        return None

    def residual(p):
        mu, sigma = p[0], abs(p[1]) + 1e-12
        mean, dev = _clipped_moments(mu, sigma, lo, hi)
        return [mean - avg, dev - std]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # fsolve chatters when it stalls
        sol, _, ok, _ = fsolve(residual, [avg, std], full_output=True)
    if ok != 1:
        return None
    res = residual(sol)
    scale = max(1.0, abs(avg), std)
    if max(abs(res[0]), abs(res[1])) > 1e-6 * scale:
        return None
    return float(sol[0]), float(abs(sol[1]) + 1e-12)


def synthesize_scenario(spec: dict, seed: int,
                        base_dir: Path | None = None) -> Scenario:
    """Materialize a scenario whose profile entries may be stats blocks.

    A profile given as ``{"stats": {"min":..,"max":..,"avg":..,"std":..}}``
    is replaced by a synthetic series; each stats block gets its own child
    seed derived from (seed, position) so series are independent but the
    whole document is reproducible.
    """
    spec = json.loads(json.dumps(spec))  # deep copy, leaves input intact
    periods = int(spec["time"]["periods"])
    delta = float(spec["time"]["delta_hours"])
    counter = 0
    for entity in spec.get("entities", []):
        for device in entity.get("devices", []):
            for key in ("consumption", "production"):
                value = device.get(key)
                if isinstance(value, dict) and "stats" in value:
                    child = int(np.random.SeedSequence(
                        (seed, counter)).generate_state(1)[0])
                    device[key] = synth_profiles(
                        child, value["stats"], periods, delta).tolist()
                    counter += 1
    scenario = scenario_from_dict(spec, base_dir=base_dir)
    errors = validate_scenario(scenario)
    if errors:
        raise ScenarioValidationError(errors)
    return scenario
