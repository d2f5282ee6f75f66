"""Day-ahead community market clearing.

Builds the welfare-maximizing dispatch LP over all entities, solves it, and
exposes the outcome: flows, device setpoints, and the prices that fall out
of the duals (per-entity balance dual = that entity's internal energy
price; community balance dual = the common trade price).

Naming scheme (the cross-module contract; periods are 0-based):

    variables   e_gri/u/t  i_gri/u/t    grid export/import energy [kWh]
                e_com/u/t  i_com/u/t    community export/import [kWh]
                a_she/u/d/t a_ste/u/d/t  shed / steer fractions
                a_cha/u/d/t a_dis/u/d/t  storage charge/discharge fractions
                soc/u/d/t                state of charge [kWh] (free)
                r_up/u/d/t r_dn/u/d/t    storage reserve headroom [kW]
                r_sym                    community symmetric reserve [kW]
                peak                     community peak net import [kW]
    rows        bal/u/t       entity energy balance (==)
                combal/t      community trade balance (==)
                peak_def/t    peak measurement (<=)
                cap_exp/u/t cap_imp/u/t  grid connection caps (<=, only
                                         when the cap is finite)
                cap_she|cap_ste|cap_cha|cap_dis/u/d/t  fraction <= 1
                soc_max|soc_min/u/d/t    SOC band (<=)
                soc_dyn/u/d/t soc_end/u/d  SOC dynamics and end pin (==)
                res_up_soc|res_up_pow|res_dn_soc|res_dn_pow/u/d/t
                res_up/t res_dn/t        community reserve coverage (<=)
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .lp import DEFAULT_TOL, LinearProgram, LpSolution, solve
from .scenario import (
    EntitySpec, NonFlexibleLoad, NonSteerableGen, Scenario, SheddableLoad,
    SteerableGen, Storage,
)


class InfeasibleError(Exception):
    """The dispatch problem has no usable optimum."""


def sheddable_loads(entity: EntitySpec) -> list[SheddableLoad]:
    return [d for d in entity.devices if isinstance(d, SheddableLoad)]


def steerable_gens(entity: EntitySpec) -> list[SteerableGen]:
    return [d for d in entity.devices if isinstance(d, SteerableGen)]


def storages(entity: EntitySpec) -> list[Storage]:
    return [d for d in entity.devices if isinstance(d, Storage)]


def nonflexible_loads(entity: EntitySpec) -> list[NonFlexibleLoad]:
    return [d for d in entity.devices if isinstance(d, NonFlexibleLoad)]


def nonsteerable_gens(entity: EntitySpec) -> list[NonSteerableGen]:
    return [d for d in entity.devices if isinstance(d, NonSteerableGen)]


@dataclass(frozen=True)
class LowerIndex:
    """Lightweight map from scenario structure to LP name space."""
    periods: int
    delta_hours: float
    entity_ids: tuple[str, ...]
    pinned_community: bool = False

    def balance_row(self, u: str, t: int) -> str:
        return f"bal/{u}/{t}"

    def community_row(self, t: int) -> str:
        return f"combal/{t}"


def build_lower_level(scenario: Scenario) -> tuple[LinearProgram, LowerIndex]:
    """The community-wide clearing LP."""
    return _build(scenario, scenario.entities, pin_community=False)


def build_individual(scenario: Scenario,
                     entity_id: str) -> tuple[LinearProgram, LowerIndex]:
    """The standalone problem of one entity.

    Identical structure to the community problem restricted to the entity,
    except community trading is forbidden: e_com/i_com stay as variables but
    are pinned to zero, and the reserve and peak terms become the entity's
    own.
    """
    matches = [e for e in scenario.entities if e.id == entity_id]
    if not matches:
        raise KeyError(f"no entity {entity_id!r} in scenario")
    return _build(scenario, matches, pin_community=True)


def _build(scenario: Scenario, entities: list[EntitySpec],
           pin_community: bool) -> tuple[LinearProgram, LowerIndex]:
    T = scenario.grid.periods
    dt = scenario.grid.delta_hours
    tf = scenario.tariffs
    lp = LinearProgram()

    lp.add_variable("r_sym", objective=tf.price_reserve)
    lp.add_variable("peak", objective=-tf.price_peak)
    for e in entities:
        u = e.id
        for t in range(T):
            lp.add_variable(f"e_gri/{u}/{t}", objective=tf.price_export[t])
            lp.add_variable(f"i_gri/{u}/{t}", objective=-tf.price_import[t])
            lp.add_variable(f"e_com/{u}/{t}", objective=-tf.operator_fee)
            lp.add_variable(f"i_com/{u}/{t}", objective=-tf.operator_fee)
        for d in sheddable_loads(e):
            for t in range(T):
                lp.add_variable(f"a_she/{u}/{d.id}/{t}",
                                objective=-d.shed_cost * d.consumption[t] * dt)
        for d in steerable_gens(e):
            for t in range(T):
                lp.add_variable(f"a_ste/{u}/{d.id}/{t}",
                                objective=-d.gen_cost * d.production[t] * dt)
        for d in storages(e):
            for t in range(T):
                lp.add_variable(f"a_cha/{u}/{d.id}/{t}",
                                objective=-d.usage_fee * dt * d.p_charge * d.eff_charge)
                lp.add_variable(f"a_dis/{u}/{d.id}/{t}",
                                objective=-d.usage_fee * dt * d.p_discharge / d.eff_discharge)
                lp.add_variable(f"soc/{u}/{d.id}/{t}", free=True)
                lp.add_variable(f"r_up/{u}/{d.id}/{t}")
                lp.add_variable(f"r_dn/{u}/{d.id}/{t}")

    for e in entities:
        u = e.id
        for t in range(T):
            coeffs: dict[str, float] = {
                f"e_gri/{u}/{t}": 1.0, f"i_gri/{u}/{t}": -1.0,
                f"e_com/{u}/{t}": 1.0, f"i_com/{u}/{t}": -1.0,
            }
            rhs = 0.0
            for d in nonsteerable_gens(e):
                rhs += dt * d.production[t]
            for d in nonflexible_loads(e):
                rhs -= dt * d.consumption[t]
            for d in sheddable_loads(e):
                rhs -= dt * d.consumption[t]
                coeffs[f"a_she/{u}/{d.id}/{t}"] = -dt * d.consumption[t]
            for d in steerable_gens(e):
                coeffs[f"a_ste/{u}/{d.id}/{t}"] = -dt * d.production[t]
            for d in storages(e):
                coeffs[f"a_cha/{u}/{d.id}/{t}"] = dt * d.p_charge
                coeffs[f"a_dis/{u}/{d.id}/{t}"] = -dt * d.p_discharge
            lp.add_constraint(f"bal/{u}/{t}", coeffs, "eq", rhs)

            if e.export_cap is not None:
                lp.add_constraint(
                    f"cap_exp/{u}/{t}",
                    {f"e_gri/{u}/{t}": 1.0 / dt, f"i_gri/{u}/{t}": -1.0 / dt},
                    "le", e.export_cap[t])
            if e.import_cap is not None:
                lp.add_constraint(
                    f"cap_imp/{u}/{t}",
                    {f"i_gri/{u}/{t}": 1.0 / dt, f"e_gri/{u}/{t}": -1.0 / dt},
                    "le", e.import_cap[t])
            if pin_community:
                lp.add_constraint(f"pin_ecom/{u}/{t}",
                                  {f"e_com/{u}/{t}": 1.0}, "eq", 0.0)
                lp.add_constraint(f"pin_icom/{u}/{t}",
                                  {f"i_com/{u}/{t}": 1.0}, "eq", 0.0)

        for d in sheddable_loads(e):
            for t in range(T):
                lp.add_constraint(f"cap_she/{u}/{d.id}/{t}",
                                  {f"a_she/{u}/{d.id}/{t}": 1.0}, "le", 1.0)
        for d in steerable_gens(e):
            for t in range(T):
                lp.add_constraint(f"cap_ste/{u}/{d.id}/{t}",
                                  {f"a_ste/{u}/{d.id}/{t}": 1.0}, "le", 1.0)
        for d in storages(e):
            sid = d.id
            for t in range(T):
                lp.add_constraint(f"cap_cha/{u}/{sid}/{t}",
                                  {f"a_cha/{u}/{sid}/{t}": 1.0}, "le", 1.0)
                lp.add_constraint(f"cap_dis/{u}/{sid}/{t}",
                                  {f"a_dis/{u}/{sid}/{t}": 1.0}, "le", 1.0)
                lp.add_constraint(f"soc_max/{u}/{sid}/{t}",
                                  {f"soc/{u}/{sid}/{t}": 1.0}, "le", d.cap_max)
                lp.add_constraint(f"soc_min/{u}/{sid}/{t}",
                                  {f"soc/{u}/{sid}/{t}": -1.0}, "le", -d.cap_min)
                dyn = {
                    f"soc/{u}/{sid}/{t}": 1.0,
                    f"a_cha/{u}/{sid}/{t}": -dt * d.p_charge * d.eff_charge,
                    f"a_dis/{u}/{sid}/{t}": dt * d.p_discharge / d.eff_discharge,
                }
                if t > 0:
                    dyn[f"soc/{u}/{sid}/{t - 1}"] = -1.0
                lp.add_constraint(f"soc_dyn/{u}/{sid}/{t}", dyn, "eq",
                                  d.soc_init if t == 0 else 0.0)
                # reserve headroom: limited by usable energy and by the
                # power still free after the scheduled (dis)charge
                lp.add_constraint(
                    f"res_up_soc/{u}/{sid}/{t}",
                    {f"r_up/{u}/{sid}/{t}": 1.0,
                     f"soc/{u}/{sid}/{t}": -d.eff_discharge / dt},
                    "le", -d.cap_min * d.eff_discharge / dt)
                lp.add_constraint(
                    f"res_up_pow/{u}/{sid}/{t}",
                    {f"r_up/{u}/{sid}/{t}": 1.0,
                     f"a_dis/{u}/{sid}/{t}": d.p_discharge},
                    "le", d.p_discharge)
                lp.add_constraint(
                    f"res_dn_soc/{u}/{sid}/{t}",
                    {f"r_dn/{u}/{sid}/{t}": 1.0,
                     f"soc/{u}/{sid}/{t}": 1.0 / (d.eff_charge * dt)},
                    "le", d.cap_max / (d.eff_charge * dt))
                lp.add_constraint(
                    f"res_dn_pow/{u}/{sid}/{t}",
                    {f"r_dn/{u}/{sid}/{t}": 1.0,
                     f"a_cha/{u}/{sid}/{t}": d.p_charge},
                    "le", d.p_charge)
            lp.add_constraint(f"soc_end/{u}/{sid}",
                              {f"soc/{u}/{sid}/{T - 1}": 1.0}, "eq",
                              d.soc_final)

    for t in range(T):
        lp.add_constraint(
            f"combal/{t}",
            {name: coef for e in entities
             for name, coef in ((f"i_com/{e.id}/{t}", 1.0),
                                (f"e_com/{e.id}/{t}", -1.0))},
            "eq", 0.0)
        peak_coeffs: dict[str, float] = {"peak": -1.0}
        for e in entities:
            peak_coeffs[f"i_gri/{e.id}/{t}"] = 1.0 / dt
            peak_coeffs[f"e_gri/{e.id}/{t}"] = -1.0 / dt
        lp.add_constraint(f"peak_def/{t}", peak_coeffs, "le", 0.0)

        up: dict[str, float] = {"r_sym": 1.0}
        dn: dict[str, float] = {"r_sym": 1.0}
        up_rhs = 0.0
        for e in entities:
            u = e.id
            for d in storages(e):
                up[f"r_up/{u}/{d.id}/{t}"] = -1.0
                dn[f"r_dn/{u}/{d.id}/{t}"] = -1.0
            for d in steerable_gens(e):
                up[f"a_ste/{u}/{d.id}/{t}"] = d.production[t]
                dn[f"a_ste/{u}/{d.id}/{t}"] = -d.production[t]
                up_rhs += d.production[t]
            for d in sheddable_loads(e):
                up[f"a_she/{u}/{d.id}/{t}"] = d.consumption[t]
                dn[f"a_she/{u}/{d.id}/{t}"] = -d.consumption[t]
                up_rhs += d.consumption[t]
        lp.add_constraint(f"res_up/{t}", up, "le", up_rhs)
        lp.add_constraint(f"res_dn/{t}", dn, "le", 0.0)

    index = LowerIndex(periods=T, delta_hours=dt,
                       entity_ids=tuple(e.id for e in entities),
                       pinned_community=pin_community)
    return lp, index


# ---------------------------------------------------------------------------
# outcomes
# ---------------------------------------------------------------------------

@dataclass
class MarketOutcome:
    """Cleared dispatch plus every named dual.

    ``primal`` and ``duals`` are keyed by the naming scheme in the module
    docstring; rows omitted from the LP (unlimited grid caps) appear in
    ``duals`` with an exact 0.0.
    """
    status: str
    objective: float
    periods: int
    delta_hours: float
    entity_ids: tuple[str, ...]
    primal: dict[str, float] = field(default_factory=dict)
    duals: dict[str, float] = field(default_factory=dict)

    def community_price(self, u: str, t: int) -> float:
        return self.duals[f"bal/{u}/{t}"]

    def internal_price(self, t: int) -> float:
        return self.duals[f"combal/{t}"]

    @property
    def peak(self) -> float:
        return self.primal["peak"]

    @property
    def reserve(self) -> float:
        return self.primal["r_sym"]

    def to_dict(self, include_duals: bool = True) -> dict:
        out = {
            "status": self.status,
            "objective": self.objective,
            "periods": self.periods,
            "delta_hours": self.delta_hours,
            "entity_ids": list(self.entity_ids),
            "peak": self.peak,
            "reserve_symmetric": self.reserve,
            "prices": {
                "community": {f"{u}/{t}": self.community_price(u, t)
                              for u in self.entity_ids
                              for t in range(self.periods)},
                "internal": {str(t): self.internal_price(t)
                             for t in range(self.periods)},
            },
            "primal": dict(self.primal),
        }
        if include_duals:
            out["duals"] = dict(self.duals)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MarketOutcome":
        return cls(
            status=data["status"],
            objective=float(data["objective"]),
            periods=int(data["periods"]),
            delta_hours=float(data["delta_hours"]),
            entity_ids=tuple(data["entity_ids"]),
            primal={k: float(v) for k, v in data["primal"].items()},
            duals={k: float(v) for k, v in data.get("duals", {}).items()},
        )


def _outcome_from_solution(scenario: Scenario, index: LowerIndex,
                           sol: LpSolution) -> MarketOutcome:
    duals = dict(sol.duals)
    for e in scenario.entities:
        if e.id not in index.entity_ids:
            continue
        for t in range(index.periods):
            if e.export_cap is None:
                duals[f"cap_exp/{e.id}/{t}"] = 0.0
            if e.import_cap is None:
                duals[f"cap_imp/{e.id}/{t}"] = 0.0
    return MarketOutcome(
        status=sol.status,
        objective=sol.objective,
        periods=index.periods,
        delta_hours=index.delta_hours,
        entity_ids=index.entity_ids,
        primal=dict(sol.primal),
        duals=duals,
    )


def clear_market(scenario: Scenario, tol: float = DEFAULT_TOL,
                 method: str = "auto") -> MarketOutcome:
    """Solve the community problem; prices are read off the duals."""
    lp, index = build_lower_level(scenario)
    sol = solve(lp, tol=tol, method=method)
    if sol.status != "optimal":
        raise InfeasibleError(f"community dispatch is {sol.status}")
    return _outcome_from_solution(scenario, index, sol)


@dataclass
class ProfitSplit:
    energy: float
    peak: float
    reserve: float

    @property
    def total(self) -> float:
        return self.energy + self.peak + self.reserve

    def to_dict(self) -> dict:
        return {"energy": self.energy, "peak": self.peak,
                "reserve": self.reserve, "total": self.total}

    @classmethod
    def from_dict(cls, data: dict) -> "ProfitSplit":
        return cls(energy=float(data["energy"]), peak=float(data["peak"]),
                   reserve=float(data["reserve"]))


@dataclass
class StandaloneProfits:
    """What each entity would earn operating alone (no community trades)."""
    by_entity: dict[str, ProfitSplit]

    def total(self, u: str) -> float:
        return self.by_entity[u].total

    def to_dict(self) -> dict:
        return {u: p.to_dict() for u, p in self.by_entity.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "StandaloneProfits":
        return cls({u: ProfitSplit.from_dict(p) for u, p in data.items()})


def standalone_profits(scenario: Scenario, tol: float = DEFAULT_TOL,
                       method: str = "auto") -> StandaloneProfits:
    tf = scenario.tariffs
    out: dict[str, ProfitSplit] = {}
    for e in scenario.entities:
        lp, _ = build_individual(scenario, e.id)
        sol = solve(lp, tol=tol, method=method)
        if sol.status != "optimal":
            raise InfeasibleError(
                f"standalone problem for entity {e.id!r} is {sol.status}")
        reserve = tf.price_reserve * sol.primal["r_sym"]
        peak = -tf.price_peak * sol.primal["peak"]
        out[e.id] = ProfitSplit(energy=sol.objective - reserve - peak,
                                peak=peak, reserve=reserve)
    return StandaloneProfits(out)
