"""Deterministic virtual-time message bus with host-scoped interception.

The event loop is the only mutator: a heap keyed by (time, sequence) drives
actor callbacks, and every random draw flows through the simulation's single
seeded source. Identical (scenario, seed) pairs therefore produce bit-identical
event logs and reports.

Host powers are exactly drop, delay and kill, plus eclipse feeds (serving a
chosen fork to one owner's chain queries). The interception surface never
exposes payloads of attested sessions: rules match on message metadata only.
Cut points 1-5 name the five protocol messages an adversary can sever:

    1 renter latest-block   2 owner latest-block     3 service response
    4 return-deposit copy to renter                  5 reward-tx copy to owner

Every drop is logged with the single rule (and owning adversary) that caused
it, which is what fairness verdicts later cite as evidence.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field

CUT_RENTER_CHAIN = 1
CUT_OWNER_CHAIN = 2
CUT_SERVICE_RESPONSE = 3
CUT_DEPOSIT_COPY = 4
CUT_REWARD_COPY = 5

CUT_POINTS = (
    CUT_RENTER_CHAIN,
    CUT_OWNER_CHAIN,
    CUT_SERVICE_RESPONSE,
    CUT_DEPOSIT_COPY,
    CUT_REWARD_COPY,
)


@dataclass(frozen=True)
class Session:
    """Attested channel marker: payloads are opaque to the host."""

    session_id: str
    peer_a: str
    peer_b: str
    established: bool = True


@dataclass
class Message:
    msg_id: int
    src: str
    dst: str
    kind: str
    payload: dict
    send_time: float
    session: Session | None = None
    cut_point: int | None = None
    campaign_id: str | None = None
    owner_id: str | None = None
    step: int | None = None


@dataclass
class DropRule:
    rule_id: str
    owner: str  # adversary actor this rule belongs to (verdict attribution)
    cut_point: int | None = None
    kind: str | None = None
    src: str | None = None
    dst: str | None = None
    campaign_id: str | None = None
    owner_id: str | None = None
    step: int | None = None
    from_time: float = 0.0
    until_time: float | None = None
    active: bool = True

    def matches(self, msg: Message, now: float) -> bool:
        if not self.active or now < self.from_time:
            return False
        if self.until_time is not None and now > self.until_time:
            return False
        for want, got in (
            (self.cut_point, msg.cut_point),
            (self.kind, msg.kind),
            (self.src, msg.src),
            (self.dst, msg.dst),
            (self.campaign_id, msg.campaign_id),
            (self.owner_id, msg.owner_id),
            (self.step, msg.step),
        ):
            if want is not None and want != got:
                return False
        return True


@dataclass
class DelayRule:
    rule_id: str
    owner: str
    extra: float
    cut_point: int | None = None
    kind: str | None = None
    dst: str | None = None

    def matches(self, msg: Message) -> bool:
        for want, got in (
            (self.cut_point, msg.cut_point),
            (self.kind, msg.kind),
            (self.dst, msg.dst),
        ):
            if want is not None and want != got:
                return False
        return True


class EventLog:
    """Append-only event log; one line per event, stable field order."""

    def __init__(self) -> None:
        self.lines: list[str] = []

    def emit(self, time: float, actor: str, kind: str, **ids) -> None:
        parts = [f"t={time:.6f}", f"actor={actor}", f"kind={kind}"]
        parts.extend(f"{key}={value}" for key, value in ids.items())
        self.lines.append(" ".join(parts))

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()


class HostControl:
    """The infrastructure maintainer's entire power surface.

    Only drop/delay/kill/eclipse: no payload inspection, no enclave state
    mutation. Anything else the host "does" in a scenario must be expressed
    through these.
    """

    def __init__(self, sim: Simulation) -> None:
        self._sim = sim
        self.drop_rules: list[DropRule] = []
        self.delay_rules: list[DelayRule] = []
        self.killed: dict[str, tuple[float, str]] = {}  # actor_id -> (time, rule_id)
        self.eclipse_feeds: dict[str, object] = {}  # owner_id -> chain supplier
        self._rule_seq = 0

    def _next_rule_id(self, prefix: str) -> str:
        self._rule_seq += 1
        return f"{prefix}{self._rule_seq}"

    def set_cut(self, cut_point: int | None = None, *, owner: str = "host", **scope) -> DropRule:
        rule = DropRule(
            rule_id=self._next_rule_id("cut"), owner=owner, cut_point=cut_point, **scope
        )
        self.drop_rules.append(rule)
        self._sim.log.emit(
            self._sim.now, owner, "rule_set", rule=rule.rule_id,
            cut=cut_point if cut_point is not None else "-", match=rule.kind or "-",
        )
        return rule

    def clear_cut(self, rule: DropRule) -> None:
        rule.active = False
        self._sim.log.emit(self._sim.now, rule.owner, "rule_cleared", rule=rule.rule_id)

    def add_delay(self, extra: float, *, owner: str = "host", **scope) -> DelayRule:
        rule = DelayRule(
            rule_id=self._next_rule_id("delay"), owner=owner, extra=extra, **scope
        )
        self.delay_rules.append(rule)
        self._sim.log.emit(
            self._sim.now, owner, "rule_set", rule=rule.rule_id, delay=f"{extra:.6f}"
        )
        return rule

    def kill_enclave(self, actor_id: str, at_time: float, *, owner: str = "host") -> str:
        rule_id = self._next_rule_id("kill")

        def do_kill() -> None:
            if actor_id not in self.killed:
                self.killed[actor_id] = (self._sim.now, rule_id)
                self._sim.log.emit(self._sim.now, owner, "kill", target=actor_id, rule=rule_id)

        self._sim.schedule_at(at_time, do_kill)
        return rule_id

    def set_eclipse(self, owner_id: str, feed, *, owner: str = "host") -> str:
        rule_id = self._next_rule_id("eclipse")
        self.eclipse_feeds[owner_id] = feed
        self._sim.log.emit(self._sim.now, owner, "eclipse_set", target=owner_id, rule=rule_id)
        return rule_id

    def is_killed(self, actor_id: str) -> bool:
        return actor_id in self.killed


class Simulation:
    """Discrete-event core: virtual clock, actor registry, network delivery."""

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0.0
        self.log = EventLog()
        self.actors: dict[str, object] = {}
        self.net = HostControl(self)
        self._queue: list[tuple[float, int, object]] = []
        self._seq = 0
        self._msg_seq = 0
        self.dropped: list[tuple[Message, str, str]] = []  # (msg, rule_id, rule_owner)
        self.delivered: list[Message] = []

    # -- scheduling --------------------------------------------------------

    def schedule(self, delay: float, fn) -> None:
        self.schedule_at(self.now + delay, fn)

    def schedule_at(self, when: float, fn) -> None:
        if when < self.now:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        heapq.heappush(self._queue, (when, self._seq, fn))

    def schedule_for(self, actor_id: str, delay: float, fn) -> None:
        """Timer owned by an actor: silently skipped if the actor was killed."""

        def guarded() -> None:
            if not self.net.is_killed(actor_id):
                fn()

        self.schedule(delay, guarded)

    def run(self, until: float | None = None) -> None:
        while self._queue:
            when, _, fn = self._queue[0]
            if until is not None and when > until:
                break
            heapq.heappop(self._queue)
            self.now = when
            fn()

    # -- actors and messages ----------------------------------------------

    def register(self, actor_id: str, actor: object) -> None:
        if actor_id in self.actors:
            raise ValueError(f"duplicate actor id {actor_id}")
        self.actors[actor_id] = actor

    def send(
        self,
        src: str,
        dst: str,
        kind: str,
        payload: dict,
        *,
        latency: float = 0.0,
        session: Session | None = None,
        cut_point: int | None = None,
        campaign_id: str | None = None,
        owner_id: str | None = None,
        step: int | None = None,
    ) -> Message:
        """Schedule delivery unless a drop rule fires; drops are attributed."""
        self._msg_seq += 1
        msg = Message(
            msg_id=self._msg_seq,
            src=src,
            dst=dst,
            kind=kind,
            payload=payload,
            send_time=self.now,
            session=session,
            cut_point=cut_point,
            campaign_id=campaign_id,
            owner_id=owner_id,
            step=step,
        )
        ids = dict(msg=msg.msg_id, src=src, dst=dst)
        if cut_point is not None:
            ids["cut"] = cut_point
        if campaign_id is not None:
            ids["campaign"] = campaign_id
        if owner_id is not None:
            ids["owner"] = owner_id
        if self.net.is_killed(src):
            rule_id = self.net.killed[src][1]
            self.log.emit(self.now, src, f"send_blocked:{kind}", rule=rule_id, **ids)
            return msg
        for rule in self.net.drop_rules:
            if rule.matches(msg, self.now):
                self.dropped.append((msg, rule.rule_id, rule.owner))
                self.log.emit(
                    self.now, src, f"drop:{kind}", rule=rule.rule_id, by=rule.owner, **ids
                )
                return msg
        total_latency = latency
        for delay_rule in self.net.delay_rules:
            if delay_rule.matches(msg):
                total_latency += delay_rule.extra
        self.log.emit(self.now, src, f"send:{kind}", **ids)
        self.schedule(total_latency, lambda: self._deliver(msg))
        return msg

    def _deliver(self, msg: Message) -> None:
        if self.net.is_killed(msg.dst):
            rule_id = self.net.killed[msg.dst][1]
            self.log.emit(
                self.now, msg.dst, f"drop_dead:{msg.kind}", msg=msg.msg_id, rule=rule_id
            )
            self.dropped.append((msg, rule_id, "host"))
            return
        actor = self.actors.get(msg.dst)
        if actor is None:
            self.log.emit(self.now, msg.dst, f"drop_unknown:{msg.kind}", msg=msg.msg_id)
            return
        self.log.emit(self.now, msg.dst, f"recv:{msg.kind}", msg=msg.msg_id, src=msg.src)
        self.delivered.append(msg)
        actor.receive(msg, self)

    def host_visible_payload(self, msg: Message) -> dict | None:
        """What the host's interception could read: None for attested traffic."""
        if msg.session is not None and msg.session.established:
            return None
        return msg.payload
