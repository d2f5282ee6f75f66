"""Division of the community profit among entities.

The cleared dispatch fixes total welfare, the reserve band, and the peak;
what remains is to split the reserve income and the peak bill. The split
maximizes the minimum improvement over standalone operation (alpha), so
membership is worthwhile for everyone whenever the community as a whole
gains.

The optimal split is rarely unique. After alpha is fixed, the remaining
degrees of freedom are resolved deterministically: walking entities in
declaration order, each entity's reserve share is maximized and pinned,
then each entity's peak share is maximized and pinned. Every step re-solves
the same LP with the accumulated pins, so all constraints hold exactly at
every step and the result is reproducible bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import DEFAULT_TOL, LinearProgram, solve
from .market import (
    MarketOutcome, ProfitSplit, StandaloneProfits, sheddable_loads,
    steerable_gens, storages,
)
from .scenario import EntitySpec, Scenario


class SharingInfeasibleError(Exception):
    """No split satisfies the participation constraints.

    ``diagnostics`` carries, per entity, the shortfall between its
    stand-alone profit and the best profit any split could hand it
    (all the reserve income it can absorb, none of the peak bill),
    plus the reserve band and the per-entity share caps.
    """

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def _entity(scenario: Scenario, entity_id: str) -> EntitySpec:
    for e in scenario.entities:
        if e.id == entity_id:
            return e
    raise KeyError(f"no entity {entity_id!r} in scenario")


def energy_profit(scenario: Scenario, outcome: MarketOutcome,
                  entity_id: str) -> float:
    """Entity profit from energy alone, settled at the cleared prices.

    Grid trades settle at the grid tariffs, community trades at the
    entity's balance price; shedding, steering, and storage-usage costs are
    subtracted. Reserve income and the peak bill are allocated separately.
    """
    e = _entity(scenario, entity_id)
    tf = scenario.tariffs
    dt = outcome.delta_hours
    u = e.id
    total = 0.0
    for t in range(outcome.periods):
        pi = outcome.community_price(u, t)
        total += tf.price_export[t] * outcome.primal[f"e_gri/{u}/{t}"]
        total -= tf.price_import[t] * outcome.primal[f"i_gri/{u}/{t}"]
        total += pi * (outcome.primal[f"e_com/{u}/{t}"]
                       - outcome.primal[f"i_com/{u}/{t}"])
        for d in sheddable_loads(e):
            total -= (d.shed_cost * d.consumption[t] * dt
                      * outcome.primal[f"a_she/{u}/{d.id}/{t}"])
        for d in steerable_gens(e):
            total -= (d.gen_cost * d.production[t] * dt
                      * outcome.primal[f"a_ste/{u}/{d.id}/{t}"])
        for d in storages(e):
            total -= d.usage_fee * dt * (
                d.p_charge * d.eff_charge
                * outcome.primal[f"a_cha/{u}/{d.id}/{t}"]
                + d.p_discharge / d.eff_discharge
                * outcome.primal[f"a_dis/{u}/{d.id}/{t}"])
    return total


def reserve_contributions(scenario: Scenario, outcome: MarketOutcome,
                          entity_id: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-period upward/downward reserve the entity's dispatch leaves free."""
    e = _entity(scenario, entity_id)
    u = e.id
    T = outcome.periods
    up = np.zeros(T)
    dn = np.zeros(T)
    for t in range(T):
        for d in storages(e):
            up[t] += outcome.primal[f"r_up/{u}/{d.id}/{t}"]
            dn[t] += outcome.primal[f"r_dn/{u}/{d.id}/{t}"]
        for d in steerable_gens(e):
            a = outcome.primal[f"a_ste/{u}/{d.id}/{t}"]
            up[t] += d.production[t] * (1.0 - a)
            dn[t] += d.production[t] * a
        for d in sheddable_loads(e):
            a = outcome.primal[f"a_she/{u}/{d.id}/{t}"]
            up[t] += d.consumption[t] * (1.0 - a)
            dn[t] += d.consumption[t] * a
    return up, dn


@dataclass
class SharingOutcome:
    """The agreed split, plus everything needed to audit it offline."""
    alpha: float
    entity_ids: tuple[str, ...]
    j_energy: dict[str, float] = field(default_factory=dict)
    j_reserve: dict[str, float] = field(default_factory=dict)
    j_peak: dict[str, float] = field(default_factory=dict)
    reserve_share: dict[str, float] = field(default_factory=dict)
    peak_share: dict[str, float] = field(default_factory=dict)
    reserve_up: dict[str, list[float]] = field(default_factory=dict)
    reserve_down: dict[str, list[float]] = field(default_factory=dict)
    standalone: dict[str, ProfitSplit] = field(default_factory=dict)

    def j_total(self, u: str) -> float:
        return self.j_energy[u] + self.j_reserve[u] + self.j_peak[u]

    def improvement(self, u: str) -> float:
        return self.j_total(u) - self.standalone[u].total

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "entity_ids": list(self.entity_ids),
            "entities": {
                u: {
                    "j_energy": self.j_energy[u],
                    "j_reserve": self.j_reserve[u],
                    "j_peak": self.j_peak[u],
                    "j_total": self.j_total(u),
                    "reserve_share": self.reserve_share[u],
                    "peak_share": self.peak_share[u],
                    "reserve_up": self.reserve_up[u],
                    "reserve_down": self.reserve_down[u],
                    "standalone": self.standalone[u].to_dict(),
                }
                for u in self.entity_ids
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SharingOutcome":
        ids = tuple(data["entity_ids"])
        ent = data["entities"]
        return cls(
            alpha=float(data["alpha"]),
            entity_ids=ids,
            j_energy={u: float(ent[u]["j_energy"]) for u in ids},
            j_reserve={u: float(ent[u]["j_reserve"]) for u in ids},
            j_peak={u: float(ent[u]["j_peak"]) for u in ids},
            reserve_share={u: float(ent[u]["reserve_share"]) for u in ids},
            peak_share={u: float(ent[u]["peak_share"]) for u in ids},
            reserve_up={u: [float(v) for v in ent[u]["reserve_up"]] for u in ids},
            reserve_down={u: [float(v) for v in ent[u]["reserve_down"]] for u in ids},
            standalone={u: ProfitSplit.from_dict(ent[u]["standalone"]) for u in ids},
        )


def _build_upper(outcome: MarketOutcome, gap: dict[str, float],
                 r_inc: dict[str, np.ndarray], r_dec: dict[str, np.ndarray],
                 price_reserve: float, price_peak: float,
                 objective_var: str, pins: list[tuple[str, float]]) -> LinearProgram:
    lp = LinearProgram()
    T = outcome.periods
    ids = outcome.entity_ids
    lp.add_variable("alpha", objective=1.0 if objective_var == "alpha" else 0.0)
    for u in ids:
        lp.add_variable(f"r_share/{u}",
                        objective=1.0 if objective_var == f"r_share/{u}" else 0.0)
        lp.add_variable(f"p_share/{u}",
                        objective=1.0 if objective_var == f"p_share/{u}" else 0.0)
        for t in range(T):
            lp.add_variable(f"r_inc/{u}/{t}")
            lp.add_variable(f"r_dec/{u}/{t}")

    for u in ids:
        for t in range(T):
            lp.add_constraint(f"def_up/{u}/{t}", {f"r_inc/{u}/{t}": 1.0},
                              "eq", float(r_inc[u][t]))
            lp.add_constraint(f"def_dn/{u}/{t}", {f"r_dec/{u}/{t}": 1.0},
                              "eq", float(r_dec[u][t]))
            lp.add_constraint(
                f"half/{u}/{t}",
                {f"r_share/{u}": 1.0, f"r_inc/{u}/{t}": -0.5,
                 f"r_dec/{u}/{t}": -0.5},
                "le", 0.0)
        # improvement of entity u must be at least alpha
        lp.add_constraint(
            f"pareto/{u}",
            {"alpha": 1.0, f"r_share/{u}": -price_reserve,
             f"p_share/{u}": price_peak},
            "le", gap[u])
    lp.add_constraint("pool_reserve", {f"r_share/{u}": 1.0 for u in ids},
                      "eq", outcome.reserve)
    lp.add_constraint("pool_peak", {f"p_share/{u}": 1.0 for u in ids},
                      "eq", outcome.peak)
    for k, (var, value) in enumerate(pins):
        lp.add_constraint(f"pin/{k}/{var}", {var: 1.0}, "eq", value)
    return lp


def solve_sharing(scenario: Scenario, outcome: MarketOutcome,
                  standalone: StandaloneProfits, tol: float = DEFAULT_TOL,
                  method: str = "auto") -> SharingOutcome:
    """Split reserve income and the peak bill; maximize the worst improvement."""
    ids = outcome.entity_ids
    tf = scenario.tariffs
    result = SharingOutcome(alpha=0.0, entity_ids=ids)
    if not ids:
        return result

    r_inc: dict[str, np.ndarray] = {}
    r_dec: dict[str, np.ndarray] = {}
    gap: dict[str, float] = {}
    for u in ids:
        result.j_energy[u] = energy_profit(scenario, outcome, u)
        up, dn = reserve_contributions(scenario, outcome, u)
        r_inc[u], r_dec[u] = up, dn
        result.reserve_up[u] = up.tolist()
        result.reserve_down[u] = dn.tolist()
        result.standalone[u] = standalone.by_entity[u]
        gap[u] = result.j_energy[u] - standalone.total(u)

    def _solve(objective_var: str, pins: list[tuple[str, float]]):
        lp = _build_upper(outcome, gap, r_inc, r_dec, tf.price_reserve,
                          tf.price_peak, objective_var, pins)
        return solve(lp, tol=tol, method=method)

    pins: list[tuple[str, float]] = []
    sol = _solve("alpha", pins)
    if sol.status != "optimal":
        caps = {u: float(np.min((r_inc[u] + r_dec[u]) / 2.0)) for u in ids}
        shortfall = {u: -(gap[u] + tf.price_reserve
                          * min(outcome.reserve, caps[u])) for u in ids}
        band_excess = outcome.reserve - sum(caps.values())
        if max(shortfall.values()) > 0.0:
            worst = max(shortfall, key=lambda u: shortfall[u])
            detail = (f"entity {worst!r} stays {shortfall[worst]:.6g} below "
                      "its stand-alone profit even with the best-case "
                      "reserve income and none of the peak bill")
        else:
            detail = (f"the reserve band {outcome.reserve:.6g} kW exceeds "
                      "the combined per-entity share caps by "
                      f"{band_excess:.6g} kW")
        raise SharingInfeasibleError(
            f"profit sharing is {sol.status}: {detail}",
            diagnostics={"reserve_band": outcome.reserve, "entity_caps": caps,
                         "shortfall": shortfall, "band_excess": band_excess})
    result.alpha = sol.objective
    pins.append(("alpha", sol.objective))
    for prefix in ("r_share", "p_share"):
        for u in ids:
            sol = _solve(f"{prefix}/{u}", pins)
            if sol.status != "optimal":
                raise SharingInfeasibleError(
                    f"tie-break stage for {prefix}/{u} is {sol.status}",
                    diagnostics={"stage": f"{prefix}/{u}"})
            pins.append((f"{prefix}/{u}", sol.primal[f"{prefix}/{u}"]))

    for u in ids:
        result.reserve_share[u] = sol.primal[f"r_share/{u}"]
        result.peak_share[u] = sol.primal[f"p_share/{u}"]
        result.j_reserve[u] = tf.price_reserve * result.reserve_share[u]
        result.j_peak[u] = -tf.price_peak * result.peak_share[u]
    return result
