"""Mock attestation and enlistment mesh.

Attestation is digest equality against a genuine measurement set taken from
scenario config. Sessions established this way are opaque to the host (it may
still drop or delay the packets). Payment enclaves escrow a backup spend key
with the interface enclave; the escrow is usable only once the enclave has
been observed dead, and a swept share is marked so a resurrected enclave can
never race the recovery.

Secrets (credentials, keys) are taint-tagged with the Secret wrapper; the
invariant that no secret crosses a non-attested channel is asserted by
scanning delivered message payloads in tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from leasim.simnet import Message, Session, Simulation


class AttestationError(Exception):
    pass


class MeasurementMismatch(AttestationError):
    pass


class Unreachable(AttestationError):
    pass


class NotEnlisted(AttestationError):
    pass


class RecoveryRefused(AttestationError):
    pass


@dataclass(frozen=True)
class Measurement:
    digest: str  # equal digests <=> identical enclave code


@dataclass(frozen=True)
class EnclaveIdentity:
    enclave_id: str
    kind: str  # interface | service | payment
    measurement: Measurement
    public_key: str
    host_id: str


@dataclass(frozen=True)
class Secret:
    """Taint tag for credential/key material."""

    label: str
    value: str

    def __repr__(self) -> str:  # never leak material into logs
        return f"Secret({self.label})"


def contains_secret(obj) -> bool:
    if isinstance(obj, Secret):
        return True
    if isinstance(obj, dict):
        return any(contains_secret(v) for v in obj.values())
    if isinstance(obj, (list, tuple, set, frozenset)):
        return any(contains_secret(v) for v in obj)
    return False


@dataclass
class EnlistRecord:
    enclave: EnclaveIdentity
    public_key: str


@dataclass
class EscrowReceipt:
    payment_id: str
    interface_id: str
    key_handle: str  # address whose notes the escrowed key can spend
    used: bool = False


class AttestationMesh:
    """Registry of genuine measurements, enlistments and key escrows."""

    def __init__(self, genuine: set[Measurement]):
        self.genuine = set(genuine)
        self._session_seq = 0
        self.enlisted: dict[str, dict[str, EnlistRecord]] = {}  # interface -> enclave -> rec
        self.escrows: dict[tuple[str, str], EscrowReceipt] = {}

    # -- attestation -------------------------------------------------------

    def attest(self, sim: Simulation, caller_id: str, expected: Measurement,
               target: EnclaveIdentity) -> Session:
        """Measurement-gated session setup; host may only sever the handshake."""
        if sim.net.is_killed(target.enclave_id) or self._handshake_cut(sim, caller_id, target):
            sim.log.emit(sim.now, caller_id, "attest_unreachable", target=target.enclave_id)
            raise Unreachable(target.enclave_id)
        if target.measurement != expected:
            # no session, no secrets sent
            sim.log.emit(sim.now, caller_id, "attest_mismatch", target=target.enclave_id)
            raise MeasurementMismatch(target.enclave_id)
        self._session_seq += 1
        session = Session(
            session_id=f"sess{self._session_seq}", peer_a=caller_id, peer_b=target.enclave_id
        )
        sim.log.emit(
            sim.now, caller_id, "attested", target=target.enclave_id, session=session.session_id
        )
        return session

    def _handshake_cut(self, sim: Simulation, caller_id: str, target: EnclaveIdentity) -> bool:
        probe = Message(
            msg_id=0, src=caller_id, dst=target.enclave_id, kind="attest_handshake",
            payload={}, send_time=sim.now,
        )
        return any(rule.matches(probe, sim.now) for rule in sim.net.drop_rules)

    # -- enlistment --------------------------------------------------------

    def enlist(self, sim: Simulation, interface: EnclaveIdentity,
               other: EnclaveIdentity) -> EnlistRecord:
        """Mutual attestation, then key exchange; idempotent per enclave_id."""
        registry = self.enlisted.setdefault(interface.enclave_id, {})
        if other.enclave_id in registry:
            return registry[other.enclave_id]
        for side in (other, interface):
            if side.measurement not in self.genuine:
                sim.log.emit(
                    sim.now, interface.enclave_id, "attest_mismatch", target=side.enclave_id
                )
                raise MeasurementMismatch(side.enclave_id)
        self.attest(sim, interface.enclave_id, other.measurement, other)
        self.attest(sim, other.enclave_id, interface.measurement, interface)
        record = EnlistRecord(enclave=other, public_key=other.public_key)
        registry[other.enclave_id] = record
        sim.log.emit(sim.now, interface.enclave_id, "enlisted", enclave=other.enclave_id)
        return record

    def is_enlisted(self, interface_id: str, enclave_id: str) -> bool:
        return enclave_id in self.enlisted.get(interface_id, {})

    # -- key escrow / crash recovery --------------------------------------

    def backup_keys(self, sim: Simulation, payment: EnclaveIdentity,
                    interface: EnclaveIdentity, key_handle: str) -> EscrowReceipt:
        if not self.is_enlisted(interface.enclave_id, payment.enclave_id):
            raise NotEnlisted(payment.enclave_id)
        receipt = EscrowReceipt(
            payment_id=payment.enclave_id,
            interface_id=interface.enclave_id,
            key_handle=key_handle,
        )
        self.escrows[(interface.enclave_id, payment.enclave_id)] = receipt
        sim.log.emit(
            sim.now, interface.enclave_id, "keys_escrowed", payment=payment.enclave_id
        )
        return receipt

    def authorize_recovery(self, sim: Simulation, interface_id: str,
                           payment_id: str) -> EscrowReceipt:
        """Release the escrowed key, only for an enclave observed dead."""
        receipt = self.escrows.get((interface_id, payment_id))
        if receipt is None:
            raise NotEnlisted(payment_id)
        if not sim.net.is_killed(payment_id):
            raise RecoveryRefused(f"{payment_id} is alive")
        if receipt.used:
            raise RecoveryRefused(f"escrow for {payment_id} already swept")
        receipt.used = True
        sim.log.emit(sim.now, interface_id, "recovery_authorized", payment=payment_id)
        return receipt
