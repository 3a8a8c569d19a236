"""Multi-enclave topologies: record gossip and P2P owner registration.

The gossip core is deliberately pure: a round is a function of (topology,
states) so convergence can be checked against graph-distance oracles without
running a simulation. The simulation runner layers message delivery on top.
"""
from __future__ import annotations

from dataclasses import dataclass, field

GOSSIP_BATCH = 64

MODES = ("centralized", "distributed", "p2p")


class TopologyError(Exception):
    pass


class NoCompliantNodes(Exception):
    pass


@dataclass
class Topology:
    mode: str
    nodes: dict[str, str]  # node_id -> kind (interface|service|payment|p2p)
    edges: frozenset[frozenset[str]]

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise TopologyError(f"unknown mode {self.mode!r}")
        for edge in self.edges:
            if len(edge) != 2 or not edge <= set(self.nodes):
                raise TopologyError(f"bad edge {sorted(edge)}")

    @classmethod
    def build(cls, mode: str, nodes: dict[str, str],
              edges: list[tuple[str, str]]) -> Topology:
        return cls(mode, dict(nodes),
                   frozenset(frozenset(pair) for pair in edges))

    def neighbors(self, node: str) -> list[str]:
        return sorted(
            other for edge in self.edges if node in edge
            for other in edge if other != node
        )

    def interface_nodes(self) -> list[str]:
        want = "p2p" if self.mode == "p2p" else "interface"
        return sorted(n for n, kind in self.nodes.items() if kind == want)

    def reachable_from(self, start: str) -> set[str]:
        seen = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for other in self.neighbors(node):
                if other not in seen:
                    seen.add(other)
                    frontier.append(other)
        return seen


@dataclass
class GossipState:
    """Per-node known records; `fresh` holds ids learned since the last round."""

    known: dict[str, dict[str, object]] = field(default_factory=dict)
    fresh: dict[str, list[str]] = field(default_factory=dict)

    def node(self, node_id: str) -> dict[str, object]:
        self.fresh.setdefault(node_id, [])
        return self.known.setdefault(node_id, {})

    def enroll(self, node_id: str, record_id: str, record: object) -> None:
        store = self.node(node_id)
        if record_id not in store:
            store[record_id] = record
            self.fresh[node_id].append(record_id)

    def knows(self, node_id: str, record_id: str) -> bool:
        return record_id in self.known.get(node_id, {})


def gossip_round(topology: Topology, state: GossipState,
                 batch_size: int = GOSSIP_BATCH) -> list[tuple[str, str, list[str]]]:
    """One synchronous round; returns the (src, dst, batch) messages sent.

    Every node sends everything it learned since the previous round to all
    interface neighbors, chunked into batches. Knowledge only grows.
    """
    sends: list[tuple[str, str, list[str]]] = []
    outgoing = {node: list(ids) for node, ids in state.fresh.items() if ids}
    for node in state.fresh:
        state.fresh[node] = []
    members = set(topology.interface_nodes())
    for node in sorted(outgoing):
        if node not in members:
            continue
        batches = [
            outgoing[node][i:i + batch_size]
            for i in range(0, len(outgoing[node]), batch_size)
        ]
        for neighbor in topology.neighbors(node):
            if neighbor not in members:
                continue
            for batch in batches:
                sends.append((node, neighbor, list(batch)))
    for src, dst, batch in sends:
        store = state.node(dst)
        for record_id in batch:
            if record_id not in store:
                store[record_id] = state.known[src][record_id]
                state.fresh[dst].append(record_id)
    return sends


def rounds_until_quiet(topology: Topology, state: GossipState,
                       limit: int = 1000) -> int:
    """Run rounds until no messages flow; returns the number of active rounds."""
    for done in range(limit):
        if not gossip_round(topology, state):
            return done
    raise TopologyError("gossip did not converge")


# ----------------------------------------------------------------------
# P2P mode: one owner per CPU, campaign flooding


@dataclass(frozen=True)
class CpuIdentity:
    cpu_id: str


@dataclass(frozen=True)
class CpuBinding:
    cpu_id: str
    owner_id: str
    node_id: str
    time: float

    def precedes(self, other: CpuBinding) -> bool:
        return (self.time, self.node_id, self.owner_id) < \
            (other.time, other.node_id, other.owner_id)


class P2PRegistry:
    """Network-wide owner-per-CPU bindings, converged by gossiping claims.

    Conflicting claims for one CPU resolve deterministically to the earliest
    (time, node, owner) triple, so flooding ghosts from one CPU wins exactly
    one registration no matter where the claims enter.
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        self.state = GossipState()
        for node in topology.interface_nodes():
            self.state.node(node)

    def register(self, node_id: str, owner_id: str, cpu: CpuIdentity,
                 now: float) -> bool:
        claim = CpuBinding(cpu.cpu_id, owner_id, node_id, now)
        store = self.state.node(node_id)
        existing = store.get(cpu.cpu_id)
        if existing is not None:
            if existing.owner_id == owner_id and existing.node_id == node_id:
                return True  # idempotent re-registration
            if existing.precedes(claim):
                return False  # CpuAlreadyBound in this node's view
        store[cpu.cpu_id] = claim if existing is None or claim.precedes(existing) \
            else existing
        if cpu.cpu_id not in self.state.fresh[node_id]:
            self.state.fresh[node_id].append(cpu.cpu_id)
        return store[cpu.cpu_id].owner_id == owner_id

    def converge(self) -> None:
        """Gossip claims to a fixpoint, merging conflicts to the earliest."""
        for _ in range(len(self.topology.nodes) + 1):
            sends = []
            for node in sorted(self.state.known):
                store = self.state.known[node]
                for neighbor in self.topology.neighbors(node):
                    sends.append((neighbor, dict(store)))
            changed = False
            for dst, payload in sends:
                store = self.state.node(dst)
                for cpu_id, claim in payload.items():
                    current = store.get(cpu_id)
                    if current is None or claim.precedes(current):
                        store[cpu_id] = claim
                        changed = True
            if not changed:
                return

    def bound_owner(self, node_id: str, cpu_id: str) -> str | None:
        claim = self.state.known.get(node_id, {}).get(cpu_id)
        return claim.owner_id if claim else None

    def accepted_count(self, cpu_id: str) -> int:
        owners = {
            claim.owner_id
            for store in self.state.known.values()
            for cid, claim in store.items() if cid == cpu_id
        }
        return len(owners)


def p2p_broadcast_campaign(topology: Topology, entry_node: str,
                           count: int, compliant: dict[str, bool]) -> dict:
    """Flood a campaign from the entry node; compliant nodes fulfill locally.

    Returns fulfillment in flood (breadth-first) order plus the unmet
    remainder that goes back to the renter. Duplicate floods are deduped by
    construction of the visit set.
    """
    if not any(compliant.get(n) for n in topology.interface_nodes()):
        raise NoCompliantNodes("no node holds a compliant delegated credential")
    visited = [entry_node]
    seen = {entry_node}
    i = 0
    while i < len(visited):
        for neighbor in topology.neighbors(visited[i]):
            if neighbor not in seen:
                seen.add(neighbor)
                visited.append(neighbor)
        i += 1
    fulfilled = [n for n in visited if compliant.get(n)][:count]
    return {
        "fulfilled": fulfilled,
        "remainder": count - len(fulfilled),
        "reached": visited,
    }
