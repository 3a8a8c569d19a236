"""Run reports: ground truth, money closure, and fairness verdicts.

The report separates what enclaves intended (settlements issued, deposit
ledger closed bit-exact) from what actually landed on the real chain, because
the interesting attacks live exactly in that gap. Verdicts are per party:
fair, harmed, or advantaged, with harm taking precedence over advantage and
self-inflicted losses counting as fair.
"""
from __future__ import annotations

import hashlib
import json

from .attestation import contains_secret
from .coins import fmt
from .ledger import BURN_ADDRESS
from .runner import World

VERDICTS = ("fair", "harmed", "advantaged")


def _landed(world: World, tx_id: str | None) -> bool:
    return tx_id is not None and world.node.chain.has_tx(tx_id)


def _owner_username(world: World, owner_id: str, service_id: str) -> str | None:
    owner = world.owners.get(owner_id)
    if owner is None:
        return None
    cred = owner.credentials.get(service_id)
    return cred[0] if cred else None


def _ground_truth(world: World, slot) -> dict:
    """What the service itself says happened, independent of any enclave."""
    backend = world.services.get(slot.service_id)
    username = _owner_username(world, slot.owner_id, slot.service_id)
    if backend is None or username is None:
        return {"performed": False, "public_effect": False}
    if hasattr(backend, "public_effect_exists"):  # social
        item = backend.items.get(slot.action_target)
        performed = item is not None and any(
            user == username and kind == slot.action_kind
            for user, kind in item.private_log
        )
        effect = backend.public_effect_exists(username, slot.action_target,
                                              slot.action_kind)
        return {"performed": performed, "public_effect": effect}
    performed = username in backend.votes or username in backend.shadow_votes
    return {"performed": performed, "public_effect": backend.counted(username)}


def _slot_entry(world: World, campaign, slot) -> dict:
    truth = _ground_truth(world, slot)
    return {
        "slot_id": slot.slot_id,
        "index": slot.index,
        "owner_id": slot.owner_id,
        "service_id": slot.service_id,
        "action": f"{slot.action_kind}:{slot.action_target}",
        "status": slot.status,
        "detail": slot.detail,
        "reward": slot.reward,
        "deposit_share": slot.deposit_share,
        "fee": slot.fee,
        "effect_claimed": slot.effect_claimed,
        "ground_truth": truth,
        "substituted_by": slot.substituted_by,
        "settlement": {
            "intended": slot.settlement_tx is not None,
            "tx_id": slot.settlement_tx,
            "landed": _landed(world, slot.settlement_tx),
        },
        "burns": _slot_burns(slot),
    }


def _slot_burns(slot) -> bool:
    from .interface_enclave import InterfaceEnclave

    return InterfaceEnclave._burns(slot)


def _campaign_entry(world: World, campaign) -> dict:
    from .interface_enclave import InterfaceEnclave

    slots = [
        _slot_entry(world, campaign, s)
        for s in sorted(campaign.slots.values(), key=lambda s: s.index)
    ]

    terminal = campaign.terminal_tx
    burn_out = refund_out = 0
    if terminal is not None:
        for note, kind in terminal.outputs:
            if kind == "burn":
                burn_out += note.value
            elif kind == "refund":
                refund_out += note.value

    intended = {
        "owner_rewards": sum(s.reward for s in campaign.slots.values()
                             if s.settlement_tx is not None),
        "deposit_returned": sum(s.deposit_share for s in campaign.slots.values()
                                if s.settlement_tx is not None),
        "fees": sum(s.fee for s in campaign.slots.values()
                    if s.settlement_tx is not None),
        "burned": sum(s.deposit_share for s in campaign.slots.values()
                      if InterfaceEnclave._burns(s)),
        "terminal_refund": refund_out,
    }
    landed = {
        "owner_rewards": sum(s.reward for s in campaign.slots.values()
                             if _landed(world, s.settlement_tx)),
        "deposit_returned": sum(s.deposit_share for s in campaign.slots.values()
                                if _landed(world, s.settlement_tx)),
        "fees": sum(s.fee for s in campaign.slots.values()
                    if _landed(world, s.settlement_tx)),
        "burned": burn_out if terminal is not None and _landed(world, terminal.tx_id)
        else 0,
        "terminal_refund": refund_out if terminal is not None
        and _landed(world, terminal.tx_id) else 0,
    }
    mismatches = [
        s["slot_id"] for s in slots
        if s["status"] == "confirmed" and s["effect_claimed"]
        and not s["ground_truth"]["public_effect"]
    ]
    try:
        collusive = world.spec.service(campaign.service_id).collusion
    except Exception:
        collusive = False
    funding_tx = campaign.funding_tx
    return {
        "campaign_id": campaign.campaign_id,
        "renter_id": campaign.renter_id,
        "service_id": campaign.service_id,
        "action": f"{campaign.action_kind}:{campaign.action_target}",
        "count": campaign.count,
        "status": campaign.status,
        "quote": {
            "funds": campaign.quoted_funds,
            "deposit": campaign.quoted_deposit,
            "fee_allowance": campaign.fee_allowance,
            "total": campaign.total,
        },
        "funding": {
            "tx_id": funding_tx.tx_id if funding_tx is not None else None,
            "landed": _landed(world, funding_tx.tx_id)
            if funding_tx is not None else False,
        },
        "phases": {k: round(v, 9) for k, v in sorted(campaign.phase_marks.items())},
        "flags": {
            "claim_mismatches": mismatches,
            "collusive_service": collusive,
        },
        "slots": slots,
        "deposit_ledger": dict(campaign.deposit_ledger),
        "intended": intended,
        "landed": landed,
        "terminal": {
            "tx_id": terminal.tx_id if terminal is not None else None,
            "landed": _landed(world, terminal.tx_id) if terminal is not None else False,
            "burn": burn_out,
            "refund": refund_out,
        },
    }


def _party_balances(world: World) -> dict[str, dict[str, int]]:
    chain = world.node.chain
    start = {f"renter:{r.renter_id}": r.balance for r in world.spec.renters}
    parties = dict.fromkeys(start, 0) | {
        f"owner:{o.owner_id}": 0 for o in world.spec.owners
    }
    parties[world.spec.maintainer_address] = 0
    out = {}
    for address in sorted(parties):
        s = start.get(address, 0)
        e = chain.balance(address)
        out[address] = {"start": s, "end": e, "delta": e - s}
    return out


def _drop_summary(world: World) -> list[dict]:
    out = []
    for msg, rule_id, owner in world.sim.dropped:
        out.append({
            "rule": rule_id, "by": owner, "kind": msg.kind,
            "cut_point": msg.cut_point, "campaign_id": msg.campaign_id,
            "owner_id": msg.owner_id, "src": msg.src, "dst": msg.dst,
            "at": round(msg.send_time, 9),
        })
    return out


# ----------------------------------------------------------------------
# verdicts


def _suppressors_for(world: World, *, campaign_id=None, owner_id=None,
                     kinds=()) -> set[str]:
    """Rule owners whose drops touched the given scope."""
    found = set()
    for msg, _rule, rule_owner in world.sim.dropped:
        if kinds and msg.kind not in kinds:
            continue
        if campaign_id is not None and msg.campaign_id not in (None, campaign_id):
            continue
        if owner_id is not None and msg.owner_id != owner_id:
            continue
        found.add(rule_owner)
    return found


def _judge_owner(world: World, owner_id: str, campaigns: list[dict]) -> dict:
    evidence = []
    harmed = advantaged = False
    self_harm = False
    actor_id = f"owner:{owner_id}"
    for campaign in campaigns:
        for slot in campaign["slots"]:
            if slot["owner_id"] != owner_id:
                continue
            truth = slot["ground_truth"]
            paid = slot["settlement"]["landed"]
            if truth["public_effect"] and not paid:
                suppressors = _suppressors_for(
                    world, campaign_id=campaign["campaign_id"], owner_id=owner_id,
                ) | _suppressors_for(
                    world, campaign_id=campaign["campaign_id"],
                    kinds=("tx_broadcast", "tx_copy", "svc_confirm"),
                )
                if suppressors and suppressors <= {actor_id}:
                    self_harm = True
                    evidence.append(
                        f"{slot['slot_id']}: account acted, unpaid; "
                        f"losses self-inflicted"
                    )
                else:
                    harmed = True
                    if not campaign["funding"]["landed"]:
                        by = f"renter:{campaign['renter_id']} (forged funding)"
                    else:
                        by = ",".join(sorted(suppressors)) or "host"
                    evidence.append(
                        f"{slot['slot_id']}: account acted ({slot['action']}), "
                        f"reward {fmt(slot['reward'])} never landed (by {by})"
                    )
            elif paid and not truth["performed"]:
                advantaged = True
                evidence.append(
                    f"{slot['slot_id']}: paid {fmt(slot['reward'])} "
                    f"without the account acting"
                )
            elif paid:
                evidence.append(f"{slot['slot_id']}: acted and paid in full")
    verdict = "harmed" if harmed else "advantaged" if advantaged else "fair"
    if verdict == "fair" and self_harm:
        evidence.append("self_harm: suppression rules belonged to this owner")
    return {"verdict": verdict, "evidence": evidence}


def _judge_renter(world: World, renter_id: str, campaigns: list[dict]) -> dict:
    evidence = []
    harmed = advantaged = False
    self_harm = False
    actor_id = f"renter:{renter_id}"
    for campaign in campaigns:
        if campaign["renter_id"] != renter_id:
            continue
        effects = sum(1 for s in campaign["slots"]
                      if s["ground_truth"]["public_effect"])
        funding_landed = campaign["funding"]["landed"]
        if effects and not funding_landed:
            advantaged = True
            evidence.append(
                f"{campaign['campaign_id']}: {effects} public effects delivered, "
                f"funding never landed on the real chain"
            )
        if funding_landed:
            intended_back = (campaign["intended"]["deposit_returned"]
                            + campaign["intended"]["terminal_refund"])
            landed_back = (campaign["landed"]["deposit_returned"]
                           + campaign["landed"]["terminal_refund"])
            if landed_back < intended_back:
                suppressors = _suppressors_for(
                    world, campaign_id=campaign["campaign_id"],
                ) | _suppressors_for(world, kinds=("tx_broadcast",))
                if suppressors and suppressors <= {actor_id}:
                    self_harm = True
                    evidence.append(
                        f"{campaign['campaign_id']}: refund shortfall "
                        f"{fmt(intended_back - landed_back)} self-inflicted"
                    )
                else:
                    harmed = True
                    by = ",".join(sorted(suppressors)) or "host"
                    evidence.append(
                        f"{campaign['campaign_id']}: {fmt(intended_back - landed_back)} "
                        f"of intended returns never landed (by {by})"
                    )
            mismatches = campaign["flags"]["claim_mismatches"]
            if mismatches:
                evidence.append(
                    f"{campaign['campaign_id']}: {len(mismatches)} confirmed "
                    f"slot(s) claim effects the service never applied "
                    f"({', '.join(mismatches)}); undetectable at confirmation"
                )
            burned = campaign["deposit_ledger"].get("burned", 0)
            if burned:
                burn_slots = [s["slot_id"] for s in campaign["slots"] if s["burns"]]
                suppressors = _suppressors_for(
                    world, campaign_id=campaign["campaign_id"],
                )
                if suppressors and suppressors <= {actor_id}:
                    self_harm = True
                    evidence.append(
                        f"{campaign['campaign_id']}: deposit burn {fmt(burned)} "
                        f"({', '.join(burn_slots)}) traced to own rules"
                    )
                else:
                    harmed = True
                    by = ",".join(sorted(suppressors)) or "host"
                    evidence.append(
                        f"{campaign['campaign_id']}: deposit {fmt(burned)} burned "
                        f"({', '.join(burn_slots)}) (by {by})"
                    )
    verdict = "harmed" if harmed else "advantaged" if advantaged else "fair"
    if verdict == "fair" and self_harm:
        evidence.append("self_harm: losses trace to this renter's own rules")
    return {"verdict": verdict, "evidence": evidence}


def _judge_maintainer(world: World, campaigns: list[dict]) -> dict:
    evidence = []
    harmed = False
    for campaign in campaigns:
        missing = campaign["intended"]["fees"] - campaign["landed"]["fees"]
        if missing > 0:
            harmed = True
            evidence.append(
                f"{campaign['campaign_id']}: fees {fmt(missing)} never landed"
            )
        elif campaign["intended"]["fees"]:
            evidence.append(
                f"{campaign['campaign_id']}: fees {fmt(campaign['landed']['fees'])} "
                f"landed in full"
            )
    return {"verdict": "harmed" if harmed else "fair", "evidence": evidence}


# ----------------------------------------------------------------------


def build_report(world: World) -> dict:
    chain = world.node.chain
    campaigns = [_campaign_entry(world, c)
                 for c in sorted(world.all_campaigns(),
                                 key=lambda c: c.campaign_id)]
    balances = _party_balances(world)
    burned = chain.burned_total()
    final_total = sum(
        note.value for note, _h in chain._note_index.values()
        if chain.is_unspent(note.note_id)
    )
    verdicts = {
        "owners": {
            o.owner_id: _judge_owner(world, o.owner_id, campaigns)
            for o in world.spec.owners
        },
        "renters": {
            r.renter_id: _judge_renter(world, r.renter_id, campaigns)
            for r in world.spec.renters
        },
        "maintainer": _judge_maintainer(world, campaigns),
    }
    report = {
        "scenario": world.spec.name,
        "seed": world.spec.seed,
        "mode": world.spec.topology.mode,
        "sim": {
            "ended_at": round(world.sim.now, 9),
            "chain_height": chain.height,
            "events": len(world.sim.log.lines),
            "event_digest": world.sim.log.digest(),
        },
        "campaigns": campaigns,
        "parties": balances,
        "conservation": {
            "issuance": chain.issuance,
            "unspent_total": final_total,
            "burn_address": chain.balance(BURN_ADDRESS),
            "ok": final_total == chain.issuance,
        },
        "drops": _drop_summary(world),
        "verdicts": verdicts,
    }
    if world.p2p:
        report["p2p"] = {
            "registrations": world.p2p["registrations"],
            "campaigns": world.p2p["campaigns"],
            "bindings": {
                cpu: world.p2p["registry"].accepted_count(cpu)
                for cpu in sorted({r["cpu"] for r in world.p2p["registrations"]})
            },
        }
    return report


def canonical_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, separators=(",", ":"))


def report_digest(report: dict) -> str:
    return hashlib.sha256(canonical_json(report).encode()).hexdigest()


def render_report(report: dict) -> str:
    lines = [
        f"scenario {report['scenario']} seed={report['seed']} mode={report['mode']}",
        f"  virtual end t={report['sim']['ended_at']} "
        f"chain height={report['sim']['chain_height']} "
        f"events={report['sim']['events']}",
    ]
    for campaign in report["campaigns"]:
        q = campaign["quote"]
        lines.append(
            f"campaign {campaign['campaign_id']} [{campaign['status']}] "
            f"{campaign['action']} x{campaign['count']} "
            f"funds={fmt(q['funds'])} deposit={fmt(q['deposit'])} "
            f"fee={fmt(q['fee_allowance'])}"
        )
        for mark, t in campaign["phases"].items():
            lines.append(f"  phase {mark} t={t}")
        for slot in campaign["slots"]:
            s = slot["settlement"]
            settle = ("landed" if s["landed"] else
                      "intended" if s["intended"] else "none")
            truth = slot["ground_truth"]
            lines.append(
                f"  slot {slot['slot_id']} owner={slot['owner_id']} "
                f"status={slot['status']} reward={fmt(slot['reward'])} "
                f"performed={str(truth['performed']).lower()} "
                f"effect={str(truth['public_effect']).lower()} "
                f"settle={settle}{' BURNS' if slot['burns'] else ''}"
            )
        ledger_ = campaign["deposit_ledger"]
        if ledger_:
            lines.append(
                f"  deposits quoted={fmt(ledger_['quoted'])} "
                f"returned={fmt(ledger_['returned'])} "
                f"burned={fmt(ledger_['burned'])} "
                f"residue={fmt(ledger_['terminal_refund'])}"
            )
        flags = campaign["flags"]
        if flags["collusive_service"] or flags["claim_mismatches"]:
            lines.append(
                f"  flags collusive_service="
                f"{str(flags['collusive_service']).lower()} "
                f"claim_mismatches={flags['claim_mismatches']}"
            )
        for side in ("intended", "landed"):
            d = campaign[side]
            lines.append(
                f"  {side} rewards={fmt(d['owner_rewards'])} "
                f"deposit_back={fmt(d['deposit_returned'])} fees={fmt(d['fees'])} "
                f"burn={fmt(d['burned'])} refund={fmt(d['terminal_refund'])}"
            )
    lines.append("parties:")
    for address, bal in report["parties"].items():
        lines.append(
            f"  {address} start={fmt(bal['start'])} end={fmt(bal['end'])} "
            f"delta={fmt(bal['delta'])}"
        )
    cons = report["conservation"]
    lines.append(
        f"conservation issuance={fmt(cons['issuance'])} "
        f"unspent={fmt(cons['unspent_total'])} "
        f"burned={fmt(cons['burn_address'])} ok={str(cons['ok']).lower()}"
    )
    if report["drops"]:
        lines.append(f"drops ({len(report['drops'])}):")
        for drop in report["drops"][:50]:
            lines.append(
                f"  t={drop['at']} {drop['kind']} cut={drop['cut_point']} "
                f"by={drop['by']} {drop['src']}->{drop['dst']}"
            )
    lines.append("verdicts:")
    for owner_id, v in report["verdicts"]["owners"].items():
        lines.append(f"  owner {owner_id}: {v['verdict']}")
        for e in v["evidence"]:
            lines.append(f"    - {e}")
    for renter_id, v in report["verdicts"]["renters"].items():
        lines.append(f"  renter {renter_id}: {v['verdict']}")
        for e in v["evidence"]:
            lines.append(f"    - {e}")
    m = report["verdicts"]["maintainer"]
    lines.append(f"  maintainer: {m['verdict']}")
    for e in m["evidence"]:
        lines.append(f"    - {e}")
    if "p2p" in report:
        lines.append("p2p:")
        for cpu, count in report["p2p"]["bindings"].items():
            lines.append(f"  cpu {cpu}: {count} accepted binding(s)")
        for campaign in report["p2p"]["campaigns"]:
            if "error" in campaign:
                lines.append(f"  campaign {campaign['service']}: {campaign['error']}")
            else:
                lines.append(
                    f"  campaign {campaign['service']} x{campaign['count']}: "
                    f"{len(campaign['fulfilled'])} fulfilled, "
                    f"{campaign['remainder_refund']} refunded"
                )
    lines.append(f"report digest {report_digest(report)}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# verification suite


def verify_world(world: World) -> list[tuple[str, bool, str]]:
    """Independent invariant checks over a finished run."""
    checks: list[tuple[str, bool, str]] = []
    chain = world.node.chain

    ok, why = chain.verify_full()
    checks.append(("chain_integrity", ok, why))

    unspent = sum(
        note.value for note, _h in chain._note_index.values()
        if chain.is_unspent(note.note_id)
    )
    checks.append((
        "value_conservation",
        unspent == chain.issuance,
        f"unspent {fmt(unspent)} vs issuance {fmt(chain.issuance)}",
    ))

    burn_spent = any(
        chain._note_index[note_id][0].owner_address == BURN_ADDRESS
        for note_id in chain._spent
        if note_id in chain._note_index
    )
    burned_notes = chain.balance(BURN_ADDRESS)
    checks.append((
        "burn_unspendable", not burn_spent,
        f"burn address holds {fmt(burned_notes)}",
    ))

    for campaign in world.all_campaigns():
        ledger_ = campaign.deposit_ledger
        if not ledger_:
            continue
        closes = (ledger_["quoted"]
                  == ledger_["returned"] + ledger_["burned"]
                  + ledger_["terminal_refund"])
        checks.append((
            f"deposit_closure:{campaign.campaign_id}", closes,
            f"quoted {fmt(ledger_['quoted'])} = returned {fmt(ledger_['returned'])} "
            f"+ burned {fmt(ledger_['burned'])} "
            f"+ residue {fmt(ledger_['terminal_refund'])}",
        ))

    atomic_ok, atomic_why = _check_atomic_settlements(world)
    checks.append(("settlement_atomicity", atomic_ok, atomic_why))

    linear_ok, linear_why = _check_linear_share_chains(world)
    checks.append(("linear_share_chains", linear_ok, linear_why))

    taint_ok, taint_why = _check_secret_taint(world)
    checks.append(("no_unsessioned_secrets", taint_ok, taint_why))

    return checks


def _check_atomic_settlements(world: World) -> tuple[bool, str]:
    count = 0
    for height in range(world.node.chain.height + 1):
        for tx in world.node.chain.blocks[height].txs:
            if not tx.memo.startswith("settle:"):
                continue
            count += 1
            kinds = sorted(kind for _note, kind in tx.outputs)
            want = {"reward", "deposit_return", "fee"}
            if not want <= set(kinds):
                return False, f"{tx.tx_id[:12]} missing outputs {kinds}"
    return True, f"{count} settlement txs each carry reward+deposit+fee"


def _check_linear_share_chains(world: World) -> tuple[bool, str]:
    checked = 0
    for group in world.groups.values():
        for enc in group.payment_encs:
            for share in enc.shares.values():
                prev_out = None
                for tx in share.issued:
                    if prev_out is not None and prev_out not in tx.inputs:
                        return False, (
                            f"share {share.address} breaks the chain at "
                            f"{tx.tx_id[:12]}"
                        )
                    change = [n for n, kind in tx.outputs
                              if n.owner_address == share.address]
                    prev_out = change[0].note_id if change else None
                    checked += 1
    return True, f"{checked} settlement txs form linear per-share chains"


def _check_secret_taint(world: World) -> tuple[bool, str]:
    scanned = 0
    for msg in world.sim.delivered + [m for m, _r, _o in world.sim.dropped]:
        scanned += 1
        opaque = msg.session is not None and msg.session.established
        if not opaque and contains_secret(msg.payload):
            return False, f"secret in cleartext {msg.kind} {msg.src}->{msg.dst}"
    return True, f"{scanned} messages scanned, secrets only on attested channels"
