"""Profit-sharing tests on the hand-solved scenarios."""
from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from commarket.market import clear_market, standalone_profits
from commarket.scenario import scenario_from_dict
from commarket.sharing import (
    SharingInfeasibleError, SharingOutcome, energy_profit,
    reserve_contributions, solve_sharing,
)

from conftest import fixture_scenario


def _pipeline(scenario, method="auto"):
    su = standalone_profits(scenario, method=method)
    out = clear_market(scenario, method=method)
    sh = solve_sharing(scenario, out, su, method=method)
    return su, out, sh


def test_trade_surplus_goes_to_the_load(two_entity_trade):
    # no reserve, no peak at the optimum: profits equal energy profits, and
    # the producer is indifferent (sells at the grid price either way), so
    # alpha = 0 and the whole gain sits with the importer
    su, out, sh = _pipeline(two_entity_trade)
    assert_allclose(sh.alpha, 0.0, atol=1e-9)
    assert_allclose(sh.j_total("e1"), -0.165, atol=1e-9)
    assert_allclose(sh.j_total("e2"), 0.175, atol=1e-9)
    assert_allclose(sum(sh.j_total(u) for u in sh.entity_ids),
                    out.objective, atol=1e-9)
    assert_allclose(sh.improvement("e1"), 0.735, atol=1e-9)
    assert_allclose(sh.improvement("e2"), 0.0, atol=1e-9)


def test_peak_bill_lands_on_the_producer(peak_import):
    # at alpha* = 0.45 the consumer's participation constraint binds exactly
    # (its energy bill already ate its improvement), so the 3 kW peak bill
    # must fall entirely on the producer; the split is unique here
    su, out, sh = _pipeline(peak_import)
    assert_allclose(sh.alpha, 0.45, atol=1e-9)
    assert_allclose(sh.peak_share["e1"], 0.0, atol=1e-9)
    assert_allclose(sh.peak_share["e2"], 3.0, atol=1e-9)
    assert_allclose(sh.j_energy["e1"], -1.95, atol=1e-9)
    assert_allclose(sh.j_total("e1"), -1.95, atol=1e-9)
    assert_allclose(sh.j_total("e2"), 0.95, atol=1e-9)


def test_storage_shift_sharing(storage_shift):
    su, out, sh = _pipeline(storage_shift)
    assert_allclose(sh.alpha, 0.0, atol=1e-9)
    assert_allclose(sh.j_total("e1"), -0.5056140350877, atol=1e-9)
    assert_allclose(sh.j_total("e2"), 0.175, atol=1e-9)
    assert_allclose(sh.j_total("e3"), 0.0, atol=2e-9)
    assert_allclose(sum(sh.j_total(u) for u in sh.entity_ids),
                    out.objective, atol=1e-9)


def test_two_period_peak_sharing(two_period_peak):
    # alpha is pinned by the storage entity; the declaration-order rule then
    # hands the whole peak bill to e1, whose slack allows it
    su, out, sh = _pipeline(two_period_peak)
    z = 2.435 / 1.855
    assert_allclose(out.primal["i_gri/e3/0"], z, atol=1e-9)
    assert_allclose(out.primal["i_gri/e1/1"], z, atol=1e-9)
    assert_allclose(sh.alpha, sh.improvement("e3"), atol=1e-9)
    assert_allclose(sh.peak_share["e1"], z, atol=1e-9)
    assert_allclose(sh.peak_share["e2"], 0.0, atol=1e-9)
    assert_allclose(sh.peak_share["e3"], 0.0, atol=1e-9)


def test_reserve_market_sharing(reserve_market):
    # the reserve band is 5 kW; e1 has no flexibility so its share is zero,
    # then e2 is maxed at its half-rule cap (2 kW) and e3 takes the rest
    su, out, sh = _pipeline(reserve_market)
    assert_allclose(out.reserve, 5.0, atol=1e-9)
    assert_allclose(sh.alpha, 0.55, atol=1e-9)
    assert_allclose(sh.reserve_share["e1"], 0.0, atol=1e-9)
    assert_allclose(sh.reserve_share["e2"], 2.0, atol=1e-9)
    assert_allclose(sh.reserve_share["e3"], 3.0, atol=1e-9)
    assert_allclose(sh.j_reserve["e2"], 0.4, atol=1e-9)
    assert_allclose(sh.j_reserve["e3"], 0.6, atol=1e-9)
    for u in sh.entity_ids:
        assert sh.improvement(u) >= 0.55 - 1e-9


def test_reserve_contributions_formula(reserve_market):
    out = clear_market(reserve_market)
    # e2 runs at full output: all 5 kW are downward headroom
    up, dn = reserve_contributions(reserve_market, out, "e2")
    assert_allclose(out.primal["a_ste/e2/gen/0"], 1.0, atol=1e-9)
    assert_allclose(up[0], 0.0, atol=1e-9)
    assert_allclose(dn[0], 5.0, atol=1e-9)
    # e3 runs at half: 5 kW each way
    up, dn = reserve_contributions(reserve_market, out, "e3")
    assert_allclose(up[0], 5.0, atol=1e-9)
    assert_allclose(dn[0], 5.0, atol=1e-9)


def test_energy_profit_matches_objective_decomposition(shedding):
    su, out, sh = _pipeline(shedding)
    total = sum(energy_profit(shedding, out, u) for u in out.entity_ids)
    # no reserve income and no peak at the optimum in this scenario
    assert_allclose(total, out.objective, atol=1e-9)
    assert_allclose(sh.j_total("e2") - su.total("e2"), 0.09, atol=1e-9)


def test_small_cap_storage_sharing():
    s = fixture_scenario("storage_shift_small_cap")
    su, out, sh = _pipeline(s)
    # peak pool 1.1 kW; alpha pinned at 0 by e2; declaration order sends the
    # whole bill to e1 (its improvement stays >= 0), leaving e3 untouched
    assert_allclose(sh.alpha, 0.0, atol=1e-9)
    assert_allclose(out.peak, 1.1, atol=1e-9)
    assert_allclose(sh.peak_share["e1"], 1.1, atol=1e-9)
    assert_allclose(sh.j_total("e3"), 0.2497777777778, atol=1e-9)


def test_empty_community_sharing():
    s = scenario_from_dict({
        "time": {"periods": 1, "delta_hours": 1.0},
        "tariffs": {"import": 0.15, "export": 0.035, "peak": 0.15,
                    "reserve": 0.0, "operator_fee": 0.01},
        "entities": [],
    })
    su, out, sh = _pipeline(s)
    assert sh.alpha == 0.0
    assert sh.entity_ids == ()


def test_sharing_round_trip(peak_import):
    _, _, sh = _pipeline(peak_import)
    again = SharingOutcome.from_dict(sh.to_dict())
    assert again == sh


@pytest.mark.parametrize("method", ["simplex", "highs"])
def test_sharing_backends_agree(peak_import, method):
    _, _, sh = _pipeline(peak_import, method=method)
    assert_allclose(sh.alpha, 0.45, atol=1e-8)
    assert_allclose(sh.peak_share["e2"], 3.0, atol=1e-8)


def test_sharing_infeasible_reports_shortfall():
    # The clearing credits the whole down-reserve room to the partially shed
    # load, leaving the storage's r_dn at zero (degenerate optimum).  The
    # storage owner's half-rule cap then sits at half its stand-alone band,
    # its reserve income cannot be restored, and no split reaches alpha >= 0.
    # The error must carry the per-entity shortfall, not just a status.
    s = scenario_from_dict({
        "time": {"periods": 1, "delta_hours": 0.25},
        "tariffs": {"import": 0.1195, "export": 0.0537, "peak": 0.2522,
                    "reserve": 0.1843, "operator_fee": 0.0001},
        "entities": [
            {"id": "e1", "export_cap": 28.18, "import_cap": 21.22,
             "devices": [{"kind": "nfl", "id": "d0",
                          "consumption": [4.983]}]},
            {"id": "e2", "export_cap": None, "import_cap": None,
             "devices": [{"kind": "sto", "id": "d0", "cap_max": 4.348,
                          "cap_min": 0.0, "p_charge": 2.032,
                          "p_discharge": 1.778, "eff_charge": 0.925,
                          "eff_discharge": 0.925, "usage_fee": 0.0334,
                          "soc_init": 0.502, "soc_final": 0.502}]},
            {"id": "e3", "export_cap": None, "import_cap": None,
             "devices": [{"kind": "nfl", "id": "d0",
                          "consumption": [5.666]},
                         {"kind": "she", "id": "d1",
                          "consumption": [5.408], "shed_cost": 0.2628}]},
            {"id": "e4", "export_cap": None, "import_cap": 15.73,
             "devices": []},
        ],
    })
    su = standalone_profits(s)
    out = clear_market(s)
    with pytest.raises(SharingInfeasibleError) as exc:
        solve_sharing(s, out, su)
    assert "stand-alone" in str(exc.value)
    diag = exc.value.diagnostics
    assert diag["shortfall"]["e2"] == pytest.approx(0.1638, abs=1e-3)
    assert diag["reserve_band"] == pytest.approx(1.778, abs=1e-6)
    assert diag["entity_caps"]["e2"] == pytest.approx(0.889, abs=1e-3)
