"""Offline verification of cleared outcomes.

Every check here recomputes what it needs from the scenario data plus the
reported primal/dual values. None of it goes through the LP builder, so a
builder bug cannot vouch for itself: the dual constraint system, the dual
objective, and all settlement identities are written out independently,
row family by row family.

Checks report one of four statuses: "pass", "fail", "warn" (suspicious but
legal, e.g. simultaneous charge/discharge), or "skipped" (the check's
activation condition never occurred in this outcome).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .market import (
    MarketOutcome, nonflexible_loads, nonsteerable_gens, sheddable_loads,
    steerable_gens, storages,
)
from .scenario import Scenario
from .sharing import SharingOutcome

DEFAULT_TOL = 1e-6

# flows/fractions below this level do not activate conditional price checks
ACTIVITY = 1e-4

PASS, FAIL, WARN, SKIPPED = "pass", "fail", "warn", "skipped"


@dataclass
class CheckResult:
    name: str
    status: str
    max_residual: float = 0.0
    locations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status,
                "max_residual": self.max_residual,
                "locations": list(self.locations)}


@dataclass
class VerificationReport:
    checks: list[CheckResult]

    @property
    def ok(self) -> bool:
        return all(c.status != FAIL for c in self.checks)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "checks": [c.to_dict() for c in self.checks]}

    def format_table(self) -> str:
        width = max(len(c.name) for c in self.checks)
        lines = [f"{'check':<{width}}  status   max residual  detail"]
        for c in self.checks:
            detail = ""
            if c.locations:
                shown = ", ".join(c.locations[:3])
                more = len(c.locations) - 3
                detail = shown + (f" (+{more} more)" if more > 0 else "")
            lines.append(f"{c.name:<{width}}  {c.status:<7}  "
                         f"{c.max_residual:12.3e}  {detail}")
        return "\n".join(lines)


class _Tally:
    """Accumulates violations for one check."""

    def __init__(self, tol: float):
        self.tol = tol
        self.max_residual = 0.0
        self.locations: list[str] = []
        self.activated = False

    def equal(self, lhs: float, rhs: float, where: str, *scale_terms: float):
        self.activated = True
        resid = abs(lhs - rhs)
        self._record(resid, self._scaled(scale_terms), where)

    def at_least(self, lhs: float, rhs: float, where: str, *scale_terms: float):
        """lhs >= rhs up to scaled tolerance."""
        self.activated = True
        self._record(rhs - lhs, self._scaled(scale_terms), where)

    def _scaled(self, terms) -> float:
        scale = 1.0
        for v in terms:
            scale = max(scale, abs(v))
        return self.tol * scale

    def _record(self, resid: float, threshold: float, where: str):
        if resid > threshold:
            self.locations.append(where)
            self.max_residual = max(self.max_residual, resid)

    def result(self, name: str, skipped_without_activation: bool = False) -> CheckResult:
        if skipped_without_activation and not self.activated:
            return CheckResult(name, SKIPPED)
        status = FAIL if self.locations else PASS
        return CheckResult(name, status, self.max_residual, self.locations)


def _check_scope(scenario: Scenario, outcome: MarketOutcome) -> None:
    ids = tuple(e.id for e in scenario.entities)
    if ids != outcome.entity_ids:
        raise ValueError(
            f"outcome entities {outcome.entity_ids} do not match the "
            f"scenario entities {ids}")


# ---------------------------------------------------------------------------
# the dual constraint system, one row family at a time
# ---------------------------------------------------------------------------

def _dual_rows(scenario: Scenario, outcome: MarketOutcome):
    """Yield (variable name, lhs, rhs, primal value, is_equality).

    lhs is the dual-weighted column of the variable, rhs its objective
    coefficient; optimality requires lhs >= rhs for nonnegative variables
    (with equality where the variable is active) and lhs == rhs for the
    free state-of-charge variables.
    """
    T = outcome.periods
    dt = outcome.delta_hours
    tf = scenario.tariffs
    p = outcome.primal
    y = outcome.duals
    for e in scenario.entities:
        u = e.id
        for t in range(T):
            pi = y[f"bal/{u}/{t}"]
            mu = y[f"combal/{t}"]
            phi_peak = y[f"peak_def/{t}"]
            cap_e = y[f"cap_exp/{u}/{t}"]
            cap_i = y[f"cap_imp/{u}/{t}"]
            yield (f"e_gri/{u}/{t}",
                   pi - phi_peak / dt + (cap_e - cap_i) / dt,
                   tf.price_export[t], p[f"e_gri/{u}/{t}"], False)
            yield (f"i_gri/{u}/{t}",
                   -pi + phi_peak / dt + (cap_i - cap_e) / dt,
                   -tf.price_import[t], p[f"i_gri/{u}/{t}"], False)
            yield (f"e_com/{u}/{t}", pi - mu, -tf.operator_fee,
                   p[f"e_com/{u}/{t}"], False)
            yield (f"i_com/{u}/{t}", -pi + mu, -tf.operator_fee,
                   p[f"i_com/{u}/{t}"], False)
            rho_up = y[f"res_up/{t}"]
            rho_dn = y[f"res_dn/{t}"]
            for d in sheddable_loads(e):
                c = d.consumption[t]
                yield (f"a_she/{u}/{d.id}/{t}",
                       y[f"cap_she/{u}/{d.id}/{t}"] - pi * dt * c
                       + c * (rho_up - rho_dn),
                       -d.shed_cost * c * dt,
                       p[f"a_she/{u}/{d.id}/{t}"], False)
            for d in steerable_gens(e):
                g = d.production[t]
                yield (f"a_ste/{u}/{d.id}/{t}",
                       y[f"cap_ste/{u}/{d.id}/{t}"] - pi * dt * g
                       + g * (rho_up - rho_dn),
                       -d.gen_cost * g * dt,
                       p[f"a_ste/{u}/{d.id}/{t}"], False)
            for d in storages(e):
                sid = d.id
                sigma = y[f"soc_dyn/{u}/{sid}/{t}"]
                yield (f"a_cha/{u}/{sid}/{t}",
                       y[f"cap_cha/{u}/{sid}/{t}"]
                       + dt * d.p_charge * pi
                       - dt * d.p_charge * d.eff_charge * sigma
                       + d.p_charge * y[f"res_dn_pow/{u}/{sid}/{t}"],
                       -d.usage_fee * dt * d.p_charge * d.eff_charge,
                       p[f"a_cha/{u}/{sid}/{t}"], False)
                yield (f"a_dis/{u}/{sid}/{t}",
                       y[f"cap_dis/{u}/{sid}/{t}"]
                       - dt * d.p_discharge * pi
                       + dt * d.p_discharge / d.eff_discharge * sigma
                       + d.p_discharge * y[f"res_up_pow/{u}/{sid}/{t}"],
                       -d.usage_fee * dt * d.p_discharge / d.eff_discharge,
                       p[f"a_dis/{u}/{sid}/{t}"], False)
                soc_col = (y[f"soc_max/{u}/{sid}/{t}"]
                           - y[f"soc_min/{u}/{sid}/{t}"]
                           + sigma
                           - y[f"res_up_soc/{u}/{sid}/{t}"] * d.eff_discharge / dt
                           + y[f"res_dn_soc/{u}/{sid}/{t}"] / (d.eff_charge * dt))
                if t + 1 < T:
                    soc_col -= y[f"soc_dyn/{u}/{sid}/{t + 1}"]
                else:
                    soc_col += y[f"soc_end/{u}/{sid}"]
                yield (f"soc/{u}/{sid}/{t}", soc_col, 0.0,
                       p[f"soc/{u}/{sid}/{t}"], True)
                yield (f"r_up/{u}/{sid}/{t}",
                       y[f"res_up_soc/{u}/{sid}/{t}"]
                       + y[f"res_up_pow/{u}/{sid}/{t}"] - rho_up,
                       0.0, p[f"r_up/{u}/{sid}/{t}"], False)
                yield (f"r_dn/{u}/{sid}/{t}",
                       y[f"res_dn_soc/{u}/{sid}/{t}"]
                       + y[f"res_dn_pow/{u}/{sid}/{t}"] - rho_dn,
                       0.0, p[f"r_dn/{u}/{sid}/{t}"], False)
    yield ("r_sym",
           sum(y[f"res_up/{t}"] + y[f"res_dn/{t}"] for t in range(T)),
           tf.price_reserve, p["r_sym"], False)
    yield ("peak",
           -sum(y[f"peak_def/{t}"] for t in range(T)),
           -tf.price_peak, p["peak"], False)


def _inequality_rows(scenario: Scenario, outcome: MarketOutcome):
    """Yield (row name, slack, dual) for every <= row, slacks recomputed."""
    T = outcome.periods
    dt = outcome.delta_hours
    p = outcome.primal
    y = outcome.duals
    for e in scenario.entities:
        u = e.id
        for t in range(T):
            net_exp = (p[f"e_gri/{u}/{t}"] - p[f"i_gri/{u}/{t}"]) / dt
            if e.export_cap is not None:
                yield (f"cap_exp/{u}/{t}", e.export_cap[t] - net_exp,
                       y[f"cap_exp/{u}/{t}"])
            if e.import_cap is not None:
                yield (f"cap_imp/{u}/{t}", e.import_cap[t] + net_exp,
                       y[f"cap_imp/{u}/{t}"])
            for d in sheddable_loads(e):
                yield (f"cap_she/{u}/{d.id}/{t}",
                       1.0 - p[f"a_she/{u}/{d.id}/{t}"],
                       y[f"cap_she/{u}/{d.id}/{t}"])
            for d in steerable_gens(e):
                yield (f"cap_ste/{u}/{d.id}/{t}",
                       1.0 - p[f"a_ste/{u}/{d.id}/{t}"],
                       y[f"cap_ste/{u}/{d.id}/{t}"])
            for d in storages(e):
                sid = d.id
                soc = p[f"soc/{u}/{sid}/{t}"]
                a_cha = p[f"a_cha/{u}/{sid}/{t}"]
                a_dis = p[f"a_dis/{u}/{sid}/{t}"]
                yield (f"cap_cha/{u}/{sid}/{t}", 1.0 - a_cha,
                       y[f"cap_cha/{u}/{sid}/{t}"])
                yield (f"cap_dis/{u}/{sid}/{t}", 1.0 - a_dis,
                       y[f"cap_dis/{u}/{sid}/{t}"])
                yield (f"soc_max/{u}/{sid}/{t}", d.cap_max - soc,
                       y[f"soc_max/{u}/{sid}/{t}"])
                yield (f"soc_min/{u}/{sid}/{t}", soc - d.cap_min,
                       y[f"soc_min/{u}/{sid}/{t}"])
                yield (f"res_up_soc/{u}/{sid}/{t}",
                       (soc - d.cap_min) * d.eff_discharge / dt
                       - p[f"r_up/{u}/{sid}/{t}"],
                       y[f"res_up_soc/{u}/{sid}/{t}"])
                yield (f"res_up_pow/{u}/{sid}/{t}",
                       d.p_discharge * (1.0 - a_dis) - p[f"r_up/{u}/{sid}/{t}"],
                       y[f"res_up_pow/{u}/{sid}/{t}"])
                yield (f"res_dn_soc/{u}/{sid}/{t}",
                       (d.cap_max - soc) / (d.eff_charge * dt)
                       - p[f"r_dn/{u}/{sid}/{t}"],
                       y[f"res_dn_soc/{u}/{sid}/{t}"])
                yield (f"res_dn_pow/{u}/{sid}/{t}",
                       d.p_charge * (1.0 - a_cha) - p[f"r_dn/{u}/{sid}/{t}"],
                       y[f"res_dn_pow/{u}/{sid}/{t}"])
    for t in range(T):
        net_import = sum((p[f"i_gri/{e.id}/{t}"] - p[f"e_gri/{e.id}/{t}"]) / dt
                         for e in scenario.entities)
        yield (f"peak_def/{t}", p["peak"] - net_import, y[f"peak_def/{t}"])
        up_room = 0.0
        dn_room = 0.0
        for e in scenario.entities:
            u = e.id
            for d in storages(e):
                up_room += p[f"r_up/{u}/{d.id}/{t}"]
                dn_room += p[f"r_dn/{u}/{d.id}/{t}"]
            for d in steerable_gens(e):
                a = p[f"a_ste/{u}/{d.id}/{t}"]
                up_room += d.production[t] * (1.0 - a)
                dn_room += d.production[t] * a
            for d in sheddable_loads(e):
                a = p[f"a_she/{u}/{d.id}/{t}"]
                up_room += d.consumption[t] * (1.0 - a)
                dn_room += d.consumption[t] * a
        yield (f"res_up/{t}", up_room - p["r_sym"], y[f"res_up/{t}"])
        yield (f"res_dn/{t}", dn_room - p["r_sym"], y[f"res_dn/{t}"])


def _equality_rows(scenario: Scenario, outcome: MarketOutcome):
    """Yield (row name, residual, magnitude) for every equality row."""
    T = outcome.periods
    dt = outcome.delta_hours
    p = outcome.primal
    for e in scenario.entities:
        u = e.id
        for t in range(T):
            act = (p[f"e_gri/{u}/{t}"] - p[f"i_gri/{u}/{t}"]
                   + p[f"e_com/{u}/{t}"] - p[f"i_com/{u}/{t}"])
            rhs = dt * (sum(d.production[t] for d in nonsteerable_gens(e))
                        - sum(d.consumption[t] for d in nonflexible_loads(e))
                        - sum(d.consumption[t] for d in sheddable_loads(e)))
            for d in sheddable_loads(e):
                act -= dt * d.consumption[t] * p[f"a_she/{u}/{d.id}/{t}"]
            for d in steerable_gens(e):
                act -= dt * d.production[t] * p[f"a_ste/{u}/{d.id}/{t}"]
            for d in storages(e):
                act += dt * (d.p_charge * p[f"a_cha/{u}/{d.id}/{t}"]
                             - d.p_discharge * p[f"a_dis/{u}/{d.id}/{t}"])
            yield f"bal/{u}/{t}", act - rhs, max(abs(act), abs(rhs))
        for d in storages(e):
            sid = d.id
            for t in range(T):
                act = (p[f"soc/{u}/{sid}/{t}"]
                       - dt * d.p_charge * d.eff_charge
                       * p[f"a_cha/{u}/{sid}/{t}"]
                       + dt * d.p_discharge / d.eff_discharge
                       * p[f"a_dis/{u}/{sid}/{t}"])
                rhs = d.soc_init if t == 0 else 0.0
                if t > 0:
                    act -= p[f"soc/{u}/{sid}/{t - 1}"]
                yield f"soc_dyn/{u}/{sid}/{t}", act - rhs, max(abs(act), abs(rhs))
            yield (f"soc_end/{u}/{sid}",
                   p[f"soc/{u}/{sid}/{T - 1}"] - d.soc_final, d.soc_final)
    for t in range(T):
        act = sum(p[f"i_com/{e.id}/{t}"] - p[f"e_com/{e.id}/{t}"]
                  for e in scenario.entities)
        yield f"combal/{t}", act, act


def _energy_profit(scenario: Scenario, outcome: MarketOutcome, u: str) -> float:
    """The checker's own settlement arithmetic (kept free of sharing.py)."""
    e = next(x for x in scenario.entities if x.id == u)
    tf = scenario.tariffs
    dt = outcome.delta_hours
    p = outcome.primal
    total = 0.0
    for t in range(outcome.periods):
        pi = outcome.duals[f"bal/{u}/{t}"]
        total += (tf.price_export[t] * p[f"e_gri/{u}/{t}"]
                  - tf.price_import[t] * p[f"i_gri/{u}/{t}"]
                  + pi * (p[f"e_com/{u}/{t}"] - p[f"i_com/{u}/{t}"]))
        for d in sheddable_loads(e):
            total -= (d.shed_cost * d.consumption[t] * dt
                      * p[f"a_she/{u}/{d.id}/{t}"])
        for d in steerable_gens(e):
            total -= (d.gen_cost * d.production[t] * dt
                      * p[f"a_ste/{u}/{d.id}/{t}"])
        for d in storages(e):
            total -= d.usage_fee * dt * (
                d.p_charge * d.eff_charge * p[f"a_cha/{u}/{d.id}/{t}"]
                + d.p_discharge / d.eff_discharge * p[f"a_dis/{u}/{d.id}/{t}"])
    return total


# ---------------------------------------------------------------------------
# the seven checks
# ---------------------------------------------------------------------------

def check_dual_feasibility(scenario: Scenario, outcome: MarketOutcome,
                           tol: float = DEFAULT_TOL) -> CheckResult:
    """Every dual constraint holds, and inequality duals are nonnegative."""
    tally = _Tally(tol)
    for name, lhs, rhs, _x, is_equality in _dual_rows(scenario, outcome):
        if is_equality:
            tally.equal(lhs, rhs, name, lhs, rhs)
        else:
            tally.at_least(lhs, rhs, name, lhs, rhs)
    for name, _slack, dual in _inequality_rows(scenario, outcome):
        tally.at_least(dual, 0.0, f"sign:{name}", dual)
    return tally.result("dual_feasibility")


def check_strong_duality(scenario: Scenario, outcome: MarketOutcome,
                         tol: float = DEFAULT_TOL) -> CheckResult:
    """Dual objective written out term by term must equal the optimum."""
    T = outcome.periods
    dt = outcome.delta_hours
    y = outcome.duals
    dual_obj = 0.0
    for e in scenario.entities:
        u = e.id
        for t in range(T):
            fixed = (sum(d.production[t] for d in nonsteerable_gens(e))
                     - sum(d.consumption[t] for d in nonflexible_loads(e))
                     - sum(d.consumption[t] for d in sheddable_loads(e)))
            dual_obj += y[f"bal/{u}/{t}"] * dt * fixed
            for d in sheddable_loads(e):
                dual_obj += y[f"cap_she/{u}/{d.id}/{t}"]
            for d in steerable_gens(e):
                dual_obj += y[f"cap_ste/{u}/{d.id}/{t}"]
            if e.export_cap is not None:
                dual_obj += y[f"cap_exp/{u}/{t}"] * e.export_cap[t]
            if e.import_cap is not None:
                dual_obj += y[f"cap_imp/{u}/{t}"] * e.import_cap[t]
            for d in storages(e):
                sid = d.id
                dual_obj += y[f"cap_cha/{u}/{sid}/{t}"]
                dual_obj += y[f"cap_dis/{u}/{sid}/{t}"]
                dual_obj += (y[f"soc_max/{u}/{sid}/{t}"] * d.cap_max
                             - y[f"soc_min/{u}/{sid}/{t}"] * d.cap_min)
                dual_obj += (
                    -y[f"res_up_soc/{u}/{sid}/{t}"] * d.cap_min
                    * d.eff_discharge / dt
                    + y[f"res_up_pow/{u}/{sid}/{t}"] * d.p_discharge
                    + y[f"res_dn_soc/{u}/{sid}/{t}"] * d.cap_max
                    / (d.eff_charge * dt)
                    + y[f"res_dn_pow/{u}/{sid}/{t}"] * d.p_charge)
        for d in storages(e):
            dual_obj += y[f"soc_dyn/{u}/{d.id}/0"] * d.soc_init
            dual_obj += y[f"soc_end/{u}/{d.id}"] * d.soc_final
    for t in range(T):
        flex = sum(d.production[t] for e in scenario.entities
                   for d in steerable_gens(e))
        flex += sum(d.consumption[t] for e in scenario.entities
                    for d in sheddable_loads(e))
        dual_obj += y[f"res_up/{t}"] * flex
    tally = _Tally(tol)
    tally.equal(dual_obj, outcome.objective, "dual objective",
                dual_obj, outcome.objective)
    return tally.result("strong_duality")


def check_complementary_slackness(scenario: Scenario, outcome: MarketOutcome,
                                  tol: float = DEFAULT_TOL) -> CheckResult:
    """dual * slack == 0 on rows, primal * surplus == 0 on columns.

    Also flags negative inequality slacks and nonzero equality residuals
    (a primal violation makes the products meaningless), so this check
    subsumes primal feasibility of the reported dispatch.
    """
    tally = _Tally(tol)
    for name, residual, magnitude in _equality_rows(scenario, outcome):
        tally.equal(residual, 0.0, f"residual:{name}", magnitude)
    for name, slack, dual in _inequality_rows(scenario, outcome):
        tally.at_least(slack, 0.0, f"violated:{name}", slack)
        tally.equal(dual * slack, 0.0, name, dual, slack)
    for name, lhs, rhs, x, is_equality in _dual_rows(scenario, outcome):
        if not is_equality:
            tally.equal(x * (lhs - rhs), 0.0, f"col:{name}", x, lhs, rhs)
    return tally.result("complementary_slackness")


def check_cost_identity(scenario: Scenario, outcome: MarketOutcome,
                        tol: float = DEFAULT_TOL) -> CheckResult:
    """Settlements add up: community trades settle at the common price
    plus/minus the operator fee, and entity energy profits plus reserve
    income minus the peak bill reproduce the cleared welfare."""
    tally = _Tally(tol)
    T = outcome.periods
    p = outcome.primal
    fee = scenario.tariffs.operator_fee
    for e in scenario.entities:
        u = e.id
        for t in range(T):
            pi = outcome.duals[f"bal/{u}/{t}"]
            mu = outcome.duals[f"combal/{t}"]
            exp = p[f"e_com/{u}/{t}"]
            imp = p[f"i_com/{u}/{t}"]
            tally.equal(pi * (exp - imp), mu * (exp - imp) - fee * (exp + imp),
                        f"settle:{u}/{t}", pi, mu, exp, imp)
    total = sum(_energy_profit(scenario, outcome, e.id)
                for e in scenario.entities)
    total += scenario.tariffs.price_reserve * p["r_sym"]
    total -= scenario.tariffs.price_peak * p["peak"]
    tally.equal(total, outcome.objective, "sum of entity profits",
                total, outcome.objective)
    return tally.result("cost_identity")


def check_flow_exclusivity(scenario: Scenario, outcome: MarketOutcome,
                           tol: float = DEFAULT_TOL) -> CheckResult:
    """Counter-directed flows must not both be active.

    Simultaneous grid import/export is a hard failure when the prices
    differ (it burns money), as is simultaneous community trade when the
    operator fee is nonzero. Simultaneous charge/discharge only warns: it
    can appear legitimately when reserve provision pays for the detour.
    """
    p = outcome.primal
    tf = scenario.tariffs
    warns: list[str] = []
    fails: list[str] = []
    worst = 0.0
    for e in scenario.entities:
        u = e.id
        for t in range(outcome.periods):
            both = min(p[f"e_gri/{u}/{t}"], p[f"i_gri/{u}/{t}"])
            if both > ACTIVITY:
                if abs(tf.price_import[t] - tf.price_export[t]) > tol:
                    fails.append(f"grid:{u}/{t}")
                else:
                    warns.append(f"grid:{u}/{t}")
                worst = max(worst, both)
            both = min(p[f"e_com/{u}/{t}"], p[f"i_com/{u}/{t}"])
            if both > ACTIVITY:
                if tf.operator_fee > tol:
                    fails.append(f"community:{u}/{t}")
                else:
                    warns.append(f"community:{u}/{t}")
                worst = max(worst, both)
            for d in storages(e):
                both = min(p[f"a_cha/{u}/{d.id}/{t}"],
                           p[f"a_dis/{u}/{d.id}/{t}"])
                if both > ACTIVITY:
                    warns.append(f"storage:{u}/{d.id}/{t}")
                    worst = max(worst, both)
    if fails:
        return CheckResult("flow_exclusivity", FAIL, worst, fails + warns)
    if warns:
        return CheckResult("flow_exclusivity", WARN, worst, warns)
    return CheckResult("flow_exclusivity", PASS)


def check_price_relations(scenario: Scenario, outcome: MarketOutcome,
                          tol: float = DEFAULT_TOL) -> CheckResult:
    """Structural price relations, checked only where they provably apply.

    (a) an entity actively trading with the community pays/receives the
        common price plus/minus the operator fee;
    (b) across a charge/discharge pair with slack SOC band and idle reserve
        coupling, prices chain through the efficiencies and usage fee;
    (c) an entity actively importing (exporting) from the grid sees the
        grid tariff adjusted by the peak and connection-cap duals.

    If no site in the outcome activates any relation, the whole check is
    "skipped" rather than vacuously green.
    """
    tally = _Tally(tol)
    T = outcome.periods
    dt = outcome.delta_hours
    tf = scenario.tariffs
    p = outcome.primal
    y = outcome.duals
    for e in scenario.entities:
        u = e.id
        for t in range(T):
            pi = y[f"bal/{u}/{t}"]
            mu = y[f"combal/{t}"]
            if p[f"e_com/{u}/{t}"] > ACTIVITY:
                tally.equal(pi, mu - tf.operator_fee, f"fee:e_com/{u}/{t}",
                            pi, mu)
            if p[f"i_com/{u}/{t}"] > ACTIVITY:
                tally.equal(pi, mu + tf.operator_fee, f"fee:i_com/{u}/{t}",
                            pi, mu)
            if p[f"i_gri/{u}/{t}"] > ACTIVITY:
                tally.equal(pi,
                            tf.price_import[t]
                            + (y[f"peak_def/{t}"] + y[f"cap_imp/{u}/{t}"]
                               - y[f"cap_exp/{u}/{t}"]) / dt,
                            f"grid:i_gri/{u}/{t}", pi)
            if p[f"e_gri/{u}/{t}"] > ACTIVITY:
                tally.equal(pi,
                            tf.price_export[t]
                            + (y[f"peak_def/{t}"] + y[f"cap_imp/{u}/{t}"]
                               - y[f"cap_exp/{u}/{t}"]) / dt,
                            f"grid:e_gri/{u}/{t}", pi)
        for d in storages(e):
            _chain_checks(tally, outcome, u, d, tol)
    return tally.result("price_relations", skipped_without_activation=True)


def _chain_checks(tally: _Tally, outcome: MarketOutcome, u: str, d,
                  tol: float) -> None:
    """Relation (b): price at discharge time vs price at charge time."""
    T = outcome.periods
    p = outcome.primal
    y = outcome.duals
    sid = d.id

    def quiet(t: int) -> bool:
        return all(abs(y[f"{row}/{u}/{sid}/{t}"]) <= tol for row in
                   ("soc_max", "soc_min", "res_up_soc", "res_dn_soc"))

    for t1 in range(T):
        if (p[f"a_cha/{u}/{sid}/{t1}"] <= ACTIVITY
                or abs(y[f"cap_cha/{u}/{sid}/{t1}"]) > tol
                or abs(y[f"res_dn_pow/{u}/{sid}/{t1}"]) > tol):
            continue
        for t2 in range(t1 + 1, T):
            if (p[f"a_dis/{u}/{sid}/{t2}"] > ACTIVITY
                    and abs(y[f"cap_dis/{u}/{sid}/{t2}"]) <= tol
                    and abs(y[f"res_up_pow/{u}/{sid}/{t2}"]) <= tol
                    and all(quiet(tau) for tau in range(t1, t2))):
                pi1 = y[f"bal/{u}/{t1}"]
                pi2 = y[f"bal/{u}/{t2}"]
                want = (pi1 / (d.eff_charge * d.eff_discharge)
                        + 2.0 * d.usage_fee / d.eff_discharge)
                tally.equal(pi2, want, f"chain:{u}/{sid}/{t1}->{t2}",
                            pi1, pi2)


def check_sharing(scenario: Scenario, outcome: MarketOutcome,
                  sharing: SharingOutcome,
                  tol: float = DEFAULT_TOL) -> CheckResult:
    """The split is a valid Pareto-superior division of the cleared profit."""
    tally = _Tally(tol)
    ids = sharing.entity_ids
    if tuple(outcome.entity_ids) != ids:
        raise ValueError("sharing outcome does not match market outcome")
    if not ids:
        return CheckResult("sharing", PASS)
    tf = scenario.tariffs
    tally.at_least(sharing.alpha, 0.0, "alpha")
    tally.equal(sum(sharing.reserve_share[u] for u in ids),
                outcome.reserve, "reserve pool", outcome.reserve)
    tally.equal(sum(sharing.peak_share[u] for u in ids),
                outcome.peak, "peak pool", outcome.peak)
    total = sum(sharing.j_total(u) for u in ids)
    tally.equal(total, outcome.objective, "profit total",
                total, outcome.objective)
    improvements = []
    for u in ids:
        recomputed = _energy_profit(scenario, outcome, u)
        tally.equal(sharing.j_energy[u], recomputed, f"j_energy:{u}",
                    recomputed)
        tally.equal(sharing.j_reserve[u],
                    tf.price_reserve * sharing.reserve_share[u],
                    f"j_reserve:{u}", sharing.j_reserve[u])
        tally.equal(sharing.j_peak[u],
                    -tf.price_peak * sharing.peak_share[u],
                    f"j_peak:{u}", sharing.j_peak[u])
        improvement = sharing.improvement(u)
        improvements.append(improvement)
        tally.at_least(improvement, sharing.alpha, f"pareto:{u}",
                       improvement, sharing.alpha)
        entity = next(x for x in scenario.entities if x.id == u)
        for t in range(outcome.periods):
            up = 0.0
            dn = 0.0
            for d in storages(entity):
                up += outcome.primal[f"r_up/{u}/{d.id}/{t}"]
                dn += outcome.primal[f"r_dn/{u}/{d.id}/{t}"]
            for d in steerable_gens(entity):
                a = outcome.primal[f"a_ste/{u}/{d.id}/{t}"]
                up += d.production[t] * (1.0 - a)
                dn += d.production[t] * a
            for d in sheddable_loads(entity):
                a = outcome.primal[f"a_she/{u}/{d.id}/{t}"]
                up += d.consumption[t] * (1.0 - a)
                dn += d.consumption[t] * a
            tally.equal(sharing.reserve_up[u][t], up, f"up:{u}/{t}", up)
            tally.equal(sharing.reserve_down[u][t], dn, f"dn:{u}/{t}", dn)
            tally.at_least((up + dn) / 2.0, sharing.reserve_share[u],
                           f"half:{u}/{t}", up, dn)
    tally.equal(min(improvements), sharing.alpha, "alpha is the worst case",
                sharing.alpha)
    return tally.result("sharing")


def verify_all(scenario: Scenario, outcome: MarketOutcome,
               sharing: SharingOutcome | None = None,
               tol: float = DEFAULT_TOL) -> VerificationReport:
    """Run the whole battery; sharing checks only when a split is supplied."""
    _check_scope(scenario, outcome)
    checks = [
        check_dual_feasibility(scenario, outcome, tol),
        check_strong_duality(scenario, outcome, tol),
        check_complementary_slackness(scenario, outcome, tol),
        check_cost_identity(scenario, outcome, tol),
        check_flow_exclusivity(scenario, outcome, tol),
        check_price_relations(scenario, outcome, tol),
    ]
    if sharing is not None:
        checks.append(check_sharing(scenario, outcome, sharing, tol))
    return VerificationReport(checks)
