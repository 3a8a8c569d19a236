"""End-to-end campaign flows over the bundled scenarios.

Each test runs a scenario through the real event loop and checks the
outcome the scenario was written to demonstrate, plus the invariant suite.
Worlds are cached per scenario so several tests can share one run.
"""
from __future__ import annotations

from importlib import resources

import pytest

from leasim.report import build_report, report_digest, verify_world
from leasim.runner import run_scenario
from leasim.scenario import load_scenario

_worlds: dict[str, object] = {}


def world_for(name: str):
    if name not in _worlds:
        path = resources.files("leasim") / "scenarios" / f"{name}.yaml"
        _worlds[name] = run_scenario(load_scenario(str(path)))
    return _worlds[name]


def report_for(name: str) -> dict:
    return build_report(world_for(name))


def only_campaign(world):
    campaigns = world.all_campaigns()
    assert len(campaigns) == 1
    return campaigns[0]


def slot_statuses(campaign) -> list[str]:
    return [s.status for s in sorted(campaign.slots.values(), key=lambda s: s.index)]


ALL_SCENARIOS = [
    "baseline", "replay", "cut1_forged_view", "cut2_owner_skip",
    "cut3_response", "cut45_all", "cut45_single_path", "collusion_social",
    "collusion_voting", "eclipse", "revert", "crash_payment", "distributed",
]


class TestBaseline:
    def test_all_slots_confirm_and_settle(self):
        campaign = only_campaign(world_for("baseline"))
        assert campaign.status == "terminated"
        assert slot_statuses(campaign) == ["confirmed"] * 3
        assert all(s.settlement_tx for s in campaign.slots.values())

    def test_phase_lengths_exact(self):
        campaign = only_campaign(world_for("baseline"))
        marks = campaign.phase_marks
        assert marks["service_end"] - marks["service_start"] == pytest.approx(
            3 * 4.288, abs=1e-9)
        assert marks["payment_end"] - marks["payment_start"] == pytest.approx(
            3 * 4.935, abs=1e-9)

    def test_money_flow(self):
        world = world_for("baseline")
        chain = world.node.chain
        # prices 2 + 2.5 + 3, fee 5% of each, deposit returned in full
        assert chain.balance("owner:o1") == 2_000_000
        assert chain.balance("owner:o2") == 2_500_000
        assert chain.balance("owner:o3") == 3_000_000
        assert chain.balance("maintainer") == 375_000
        assert chain.balance("renter:r1") == 1_000_000_000 - 7_875_000

    def test_all_verdicts_fair(self):
        verdicts = report_for("baseline")["verdicts"]
        assert all(v["verdict"] == "fair" for v in verdicts["owners"].values())
        assert all(v["verdict"] == "fair" for v in verdicts["renters"].values())
        assert verdicts["maintainer"]["verdict"] == "fair"

    def test_service_state_matches_claims(self):
        world = world_for("baseline")
        assert world.services["social"].items["item1"].counters == {"upvote": 3}


class TestReplayLoad:
    def test_forty_slots_exact_phases(self):
        campaign = only_campaign(world_for("replay"))
        marks = campaign.phase_marks
        assert slot_statuses(campaign) == ["confirmed"] * 40
        assert marks["service_end"] - marks["service_start"] == pytest.approx(
            40 * 4.288, abs=1e-9)
        assert marks["payment_end"] - marks["payment_start"] == pytest.approx(
            40 * 4.935, abs=1e-9)


class TestForgedFunding:
    def test_honest_owners_skip_eclipsed_owner_performs(self):
        campaign = only_campaign(world_for("cut1_forged_view"))
        assert slot_statuses(campaign) == [
            "skipped_inconsistent", "skipped_inconsistent", "confirmed"]

    def test_nothing_lands_on_real_chain(self):
        report = report_for("cut1_forged_view")
        c = report["campaigns"][0]
        assert not c["funding"]["landed"]
        assert c["landed"]["owner_rewards"] == 0
        assert c["intended"]["owner_rewards"] == 3_000_000
        # no real money moved anywhere
        assert all(b["delta"] == 0 for b in report["parties"].values())

    def test_verdicts_split_intended_vs_landed(self):
        verdicts = report_for("cut1_forged_view")["verdicts"]
        assert verdicts["owners"]["o3"]["verdict"] == "harmed"
        assert verdicts["owners"]["o1"]["verdict"] == "fair"
        assert verdicts["renters"]["r1"]["verdict"] == "advantaged"
        assert verdicts["maintainer"]["verdict"] == "harmed"

    def test_effect_delivered_without_payment(self):
        world = world_for("cut1_forged_view")
        assert world.services["social"].items["item1"].counters == {"upvote": 1}


class TestOwnerChainCut:
    def test_skip_and_substitute(self):
        campaign = only_campaign(world_for("cut2_owner_skip"))
        slots = sorted(campaign.slots.values(), key=lambda s: s.index)
        assert slots[0].status == "skipped_unreachable"
        assert slots[0].substituted_by == slots[3].slot_id
        assert slots[3].owner_id == "o4"
        assert [s.status for s in slots[1:]] == ["confirmed"] * 3

    def test_self_cut_is_fair(self):
        verdicts = report_for("cut2_owner_skip")["verdicts"]
        assert all(v["verdict"] == "fair" for v in verdicts["owners"].values())
        assert verdicts["renters"]["r1"]["verdict"] == "fair"


class TestServiceResponseCut:
    def test_timeout_burns_deposit_share(self):
        campaign = only_campaign(world_for("cut3_response"))
        timed_out = [s for s in campaign.slots.values() if s.status == "timeout"]
        assert len(timed_out) == 1 and timed_out[0].owner_id == "o2"
        assert campaign.deposit_ledger["burned"] == timed_out[0].deposit_share
        world = world_for("cut3_response")
        assert world.node.chain.burned_total() == 250_000

    def test_owner_self_harm_renter_harmed(self):
        verdicts = report_for("cut3_response")["verdicts"]
        assert verdicts["owners"]["o2"]["verdict"] == "fair"
        assert any("self" in e for e in verdicts["owners"]["o2"]["evidence"])
        assert verdicts["renters"]["r1"]["verdict"] == "harmed"


class TestSettlementSuppression:
    def test_all_paths_cut_nothing_lands(self):
        report = report_for("cut45_all")
        c = report["campaigns"][0]
        assert c["intended"]["owner_rewards"] == 7_500_000
        assert c["landed"]["owner_rewards"] == 0
        verdicts = report["verdicts"]
        assert all(v["verdict"] == "harmed" for v in verdicts["owners"].values())
        assert verdicts["renters"]["r1"]["verdict"] == "harmed"
        assert verdicts["maintainer"]["verdict"] == "harmed"

    def test_single_surviving_path_suffices(self):
        report = report_for("cut45_single_path")
        c = report["campaigns"][0]
        assert c["landed"] == c["intended"]
        assert len(report["drops"]) == 6  # both copies of all three settlements
        verdicts = report["verdicts"]
        assert all(v["verdict"] == "fair" for v in verdicts["owners"].values())
        assert verdicts["renters"]["r1"]["verdict"] == "fair"


class TestCollusionAsymmetry:
    def test_social_ghosts_detected_and_substituted(self):
        campaign = only_campaign(world_for("collusion_social"))
        slots = sorted(campaign.slots.values(), key=lambda s: s.index)
        assert [s.status for s in slots[:2]] == ["failed", "failed"]
        assert all(s.settlement_tx is None for s in slots[:2])
        assert [s.status for s in slots[2:]] == ["confirmed"] * 3
        # three real public effects, ghosts contributed none
        world = world_for("collusion_social")
        assert world.services["social"].items["item1"].counters == {"upvote": 3}

    def test_social_ghost_owners_unpaid(self):
        world = world_for("collusion_social")
        assert world.node.chain.balance("owner:og1") == 0
        assert world.node.chain.balance("owner:og2") == 0

    def test_voting_coercion_paid_but_flagged(self):
        report = report_for("collusion_voting")
        c = report["campaigns"][0]
        assert [s["status"] for s in c["slots"]] == ["confirmed"] * 3
        assert c["landed"]["owner_rewards"] == c["intended"]["owner_rewards"]
        assert c["flags"]["claim_mismatches"] == [c["slots"][0]["slot_id"]]
        world = world_for("collusion_voting")
        assert world.services["ballots"].tallies() == {"north": 2, "south": 0}
        verdicts = report["verdicts"]
        assert verdicts["owners"]["ov1"]["verdict"] == "fair"
        assert verdicts["renters"]["r1"]["verdict"] == "fair"


class TestEclipse:
    def test_stale_view_excluded_before_work(self):
        campaign = only_campaign(world_for("eclipse"))
        slots = sorted(campaign.slots.values(), key=lambda s: s.index)
        eclipsed = [s for s in slots if s.owner_id == "o2"]
        assert eclipsed[0].status == "skipped_inconsistent"
        assert eclipsed[0].substituted_by is not None
        truth = report_for("eclipse")["campaigns"][0]["slots"]
        assert not any(s["ground_truth"]["performed"]
                       for s in truth if s["owner_id"] == "o2")


class TestRevertWindow:
    def test_reverted_slot_unpaid_deposit_refunded(self):
        campaign = only_campaign(world_for("revert"))
        reverted = [s for s in campaign.slots.values() if s.status == "reverted"]
        assert len(reverted) == 1 and reverted[0].owner_id == "o2"
        assert reverted[0].settlement_tx is None
        assert campaign.deposit_ledger["burned"] == 0
        world = world_for("revert")
        assert world.node.chain.balance("owner:o2") == 0
        # the public effect is gone
        assert not world.services["social"].public_effect_exists(
            "ben", "item1", "upvote")

    def test_griefer_judged_fair(self):
        verdicts = report_for("revert")["verdicts"]
        assert verdicts["owners"]["o2"]["verdict"] == "fair"
        assert verdicts["renters"]["r1"]["verdict"] == "fair"


class TestCrashRecovery:
    def test_settled_before_kill_stands(self):
        campaign = only_campaign(world_for("crash_payment"))
        slots = sorted(campaign.slots.values(), key=lambda s: s.index)
        assert slots[0].settlement_tx is not None
        world = world_for("crash_payment")
        assert world.node.chain.has_tx(slots[0].settlement_tx)

    def test_unsettled_confirmed_slots_burn(self):
        campaign = only_campaign(world_for("crash_payment"))
        slots = sorted(campaign.slots.values(), key=lambda s: s.index)
        assert [s.settlement_tx for s in slots[1:]] == [None, None]
        assert campaign.deposit_ledger["burned"] == sum(
            s.deposit_share for s in slots[1:])

    def test_share_recovered_via_mesh(self):
        world = world_for("crash_payment")
        log = world.sim.log.text()
        assert "share_recovered" in log
        assert "campaign_terminated" in log

    def test_harm_attributed_to_host(self):
        verdicts = report_for("crash_payment")["verdicts"]
        assert verdicts["owners"]["o2"]["verdict"] == "harmed"
        assert verdicts["owners"]["o3"]["verdict"] == "harmed"
        assert verdicts["renters"]["r1"]["verdict"] == "harmed"
        assert verdicts["owners"]["o1"]["verdict"] == "fair"


class TestDistributed:
    def test_remote_owners_reach_primary_via_gossip(self):
        world = world_for("distributed")
        campaign = only_campaign(world)
        assert slot_statuses(campaign) == ["confirmed"] * 3
        assert "gossip_owner" in world.sim.log.text()
        # records enrolled at b became selectable at a
        assert {"o1", "o2", "o3"} <= set(world.groups["a"].enclave.owners)


class TestP2P:
    def test_cpu_flood_collapses_to_one_binding(self):
        world = world_for("p2p")
        assert world.p2p["registry"].accepted_count("cpu:flood") == 1

    def test_campaign_fulfilled_breadth_first(self):
        world = world_for("p2p")
        campaign = world.p2p["campaigns"][0]
        assert campaign["fulfilled"] == ["iface:n1", "iface:n2"]
        assert campaign["remainder_refund"] == 0
        assert [s["status"] for s in campaign["slots"]] == ["confirmed", "confirmed"]


class TestInvariantsEverywhere:
    @pytest.mark.parametrize("name", ALL_SCENARIOS)
    def test_verify_suite_green(self, name):
        failures = [(check, why) for check, ok, why in
                    verify_world(world_for(name)) if not ok]
        assert not failures

    @pytest.mark.parametrize("name", ALL_SCENARIOS)
    def test_deposit_ledger_closes(self, name):
        for campaign in world_for(name).all_campaigns():
            led = campaign.deposit_ledger
            if led:
                assert led["quoted"] == (led["returned"] + led["burned"]
                                         + led["terminal_refund"])

    def test_rerun_is_bit_identical(self):
        path = resources.files("leasim") / "scenarios" / "cut3_response.yaml"
        digests = set()
        for _ in range(2):
            world = run_scenario(load_scenario(str(path)))
            digests.add((world.sim.log.digest(),
                         report_digest(build_report(world))))
        assert len(digests) == 1
