"""Deterministic contract state machines executed at block application.

Two contracts live on the chain: the access policy (roles, role bearers
and an append-only audit log) and the data store (sealed physiological
records with digest, latest-record and 24-hour aggregate queries). Every
call, granted or denied, appends exactly one audit event, and replaying
the transaction log from genesis reproduces the full state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .encoding import ByteReader, pack_bytes, pack_f64, pack_str, pack_u8, pack_u64
from .ledger import Block, Chain, Transaction
from .physio import SleepSample, StressState

ACCESS_POLICY_CONTRACT = hashlib.sha256(b"access-policy").digest()
DATA_STORE_CONTRACT = hashlib.sha256(b"data-store").digest()

# permission atoms a role may hold
PERMISSIONS = ("retrieve", "averages")

DAY_SECONDS = 24 * 3600


class AccessDeniedError(PermissionError):
    """Caller lacks the permission for the requested read."""


class EmptyStoreError(LookupError):
    """No records have been stored yet."""


@dataclass(frozen=True)
class PhysiologicalRecord:
    """The plaintext payload stored (sealed) on chain per detection cycle."""

    timestamp: int
    sample: SleepSample
    detected: StressState
    predicted: str  # next-day stress code, e.g. "L/N", "ML", "MH"

    def encode(self) -> bytes:
        body = pack_u64(self.timestamp)
        for value in self.sample.as_tuple():
            body += pack_f64(value)
        body += pack_u8(int(self.detected))
        body += pack_str(self.predicted)
        return body

    @staticmethod
    def decode(data: bytes) -> "PhysiologicalRecord":
        reader = ByteReader(data)
        timestamp = reader.u64()
        values = [reader.f64() for _ in range(8)]
        detected = StressState(reader.u8())
        predicted = reader.str_field()
        reader.expect_end()
        return PhysiologicalRecord(
            timestamp=timestamp,
            sample=SleepSample.from_values(values),
            detected=detected,
            predicted=predicted,
        )

    def digest(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()


@dataclass(frozen=True)
class StoredRecord:
    """On-chain form: sealed payload plus the plaintext digest."""

    timestamp: int
    sealed_payload: bytes
    digest: bytes


@dataclass(frozen=True)
class AuditEvent:
    """One contract call outcome; totally ordered by (height, index)."""

    height: int
    index: int
    action: str
    actor: bytes
    subject: str
    outcome: str  # granted | denied | rejected

    def csv_row(self) -> str:
        return (
            f"{self.height},{self.index},{self.action},{self.actor.hex()},"
            f"{self.subject},{self.outcome}"
        )


AUDIT_CSV_HEADER = "height,index,action,actor,subject,outcome"


def export_audit_csv(events: Sequence[AuditEvent]) -> str:
    return "\n".join([AUDIT_CSV_HEADER] + [e.csv_row() for e in events])


@dataclass
class AccessPolicyState:
    owner: bytes | None = None
    roles: dict[str, frozenset[str]] = field(default_factory=dict)
    bearers: dict[bytes, str] = field(default_factory=dict)


@dataclass
class DataStoreState:
    edge_key: bytes | None = None
    records: list[StoredRecord] = field(default_factory=list)

    @property
    def latest(self) -> StoredRecord:
        if not self.records:
            raise EmptyStoreError("no records stored")
        return self.records[-1]


@dataclass(frozen=True)
class AverageReport:
    """Per-feature means and the modal stress over the trailing window."""

    means: tuple[float, ...]
    modal_state: StressState
    count: int
    window_start: int
    window_end: int

    def encode(self) -> bytes:
        body = b"".join(pack_f64(m) for m in self.means)
        body += pack_u8(int(self.modal_state))
        body += pack_u64(self.count)
        body += pack_u64(self.window_start)
        body += pack_u64(self.window_end)
        return body

    @staticmethod
    def decode(data: bytes) -> "AverageReport":
        reader = ByteReader(data)
        means = tuple(reader.f64() for _ in range(8))
        modal = StressState(reader.u8())
        count = reader.u64()
        start = reader.u64()
        end = reader.u64()
        reader.expect_end()
        return AverageReport(means, modal, count, start, end)


def encode_call(selector: str, args: Sequence[bytes] = ()) -> bytes:
    """Canonical contract call payload: selector plus raw argument list."""
    body = pack_str(selector) + pack_u8(len(args))
    for arg in args:
        body += pack_bytes(arg)
    return body


def decode_call(payload: bytes) -> tuple[str, list[bytes]]:
    reader = ByteReader(payload)
    selector = reader.str_field()
    args = [reader.bytes_field() for _ in range(reader.u8())]
    reader.expect_end()
    return selector, args


def check_access(
    policy: AccessPolicyState, store: DataStoreState, caller: bytes, action: str
) -> bool:
    """Pure permission check; no state is touched.

    The owner may do anything; the registered edge key may upload; other
    callers need a role whose permission set includes the action.
    """
    if policy.owner is not None and caller == policy.owner:
        return True
    if action == "upload":
        return store.edge_key is not None and caller == store.edge_key
    role = policy.bearers.get(caller)
    if role is None:
        return False
    return action in policy.roles.get(role, frozenset())


class ContractEngine:
    """Applies contract-call transactions in block order.

    State is a pure function of the chain: replaying every block from
    genesis reproduces the policy, the store and the audit log exactly.
    """

    def __init__(self) -> None:
        self.policy = AccessPolicyState()
        self.store = DataStoreState()
        self.audit: list[AuditEvent] = []
        self._averages_cache: dict[int, AverageReport] = {}

    # -- block/tx application -------------------------------------------

    def apply_block(self, block: Block, height: int) -> list[AuditEvent]:
        events = []
        for index, tx in enumerate(block.transactions):
            events.append(self.apply_transaction(tx, height, index))
        return events

    def apply_transaction(self, tx: Transaction, height: int, index: int) -> AuditEvent:
        selector, args = decode_call(tx.payload)
        if tx.recipient == ACCESS_POLICY_CONTRACT:
            event = self._apply_policy(tx.sender, selector, args, height, index)
        elif tx.recipient == DATA_STORE_CONTRACT:
            event = self._apply_store(tx.sender, selector, args, height, index)
        else:
            event = AuditEvent(height, index, selector, tx.sender, "unknown-contract", "denied")
        self.audit.append(event)
        return event

    def _event(self, height, index, action, actor, subject, outcome) -> AuditEvent:
        return AuditEvent(height, index, action, actor, subject, outcome)

    def _apply_policy(
        self, sender: bytes, selector: str, args: list[bytes], height: int, index: int
    ) -> AuditEvent:
        ev = lambda subject, outcome: self._event(height, index, selector, sender, subject, outcome)
        if selector == "deploy":
            if self.policy.owner is not None:
                return ev("already-deployed", "denied")
            self.policy.owner = sender
            return ev(sender.hex()[:16], "granted")
        if self.policy.owner is None:
            return ev("not-deployed", "denied")
        if selector == "audit-denial":
            # owner-recorded protocol abort; holds the audit trail for
            # failures that never reach a contract function
            stage = args[0].decode("utf-8") if args else "unknown"
            subject = args[1].hex()[:16] if len(args) > 1 else "-"
            if sender != self.policy.owner:
                return ev(stage, "denied")
            return ev(f"{stage}:{subject}", "denied")
        if sender != self.policy.owner:
            return ev("not-owner", "denied")
        if selector == "add-role":
            name = args[0].decode("utf-8")
            perms = frozenset(a.decode("utf-8") for a in args[1:])
            if not perms.issubset(PERMISSIONS):
                return ev(name, "rejected")
            if name in self.policy.roles:
                return ev(name, "rejected")
            self.policy.roles[name] = perms
            return ev(name, "granted")
        if selector == "remove-role":
            name = args[0].decode("utf-8")
            if name not in self.policy.roles:
                return ev(name, "rejected")
            del self.policy.roles[name]
            self.policy.bearers = {
                k: r for k, r in self.policy.bearers.items() if r != name
            }
            return ev(name, "granted")
        if selector == "add-bearer":
            key = args[0]
            role = args[1].decode("utf-8")
            if role not in self.policy.roles:
                return ev(role, "rejected")
            self.policy.bearers[key] = role
            return ev(f"{key.hex()[:16]}:{role}", "granted")
        if selector == "remove-bearer":
            key = args[0]
            if key not in self.policy.bearers:
                return ev(key.hex()[:16], "rejected")
            del self.policy.bearers[key]
            return ev(key.hex()[:16], "granted")
        return ev(selector, "denied")

    def _apply_store(
        self, sender: bytes, selector: str, args: list[bytes], height: int, index: int
    ) -> AuditEvent:
        ev = lambda subject, outcome: self._event(height, index, selector, sender, subject, outcome)
        if selector == "deploy":
            if self.store.edge_key is not None:
                return ev("already-deployed", "denied")
            if self.policy.owner is None or sender != self.policy.owner:
                return ev("not-owner", "denied")
            self.store.edge_key = args[0]
            return ev(args[0].hex()[:16], "granted")
        if self.store.edge_key is None:
            return ev("not-deployed", "denied")
        if selector == "create-record":
            if not check_access(self.policy, self.store, sender, "upload"):
                return ev("unauthorized", "denied")
            reader = ByteReader(args[0])
            timestamp = reader.u64()
            sealed = args[1]
            digest = args[2]
            if self.store.records and timestamp <= self.store.records[-1].timestamp:
                return ev(f"ts={timestamp}", "rejected")
            self.store.records.append(StoredRecord(timestamp, sealed, digest))
            self._averages_cache.clear()
            return ev(f"ts={timestamp}", "granted")
        if selector == "retrieve-latest":
            allowed = check_access(self.policy, self.store, sender, "retrieve")
            return ev("latest", "granted" if allowed else "denied")
        if selector == "average-values":
            allowed = check_access(self.policy, self.store, sender, "averages")
            return ev("averages", "granted" if allowed else "denied")
        return ev(selector, "denied")

    # -- read surface (used by the gateway after the audited call) ------

    def retrieve_latest(self, caller: bytes) -> StoredRecord:
        if not check_access(self.policy, self.store, caller, "retrieve"):
            raise AccessDeniedError("retrieve not allowed for this key")
        return self.store.latest

    def records_in_window(self, window_seconds: int = DAY_SECONDS) -> list[StoredRecord]:
        if not self.store.records:
            return []
        end = self.store.records[-1].timestamp
        start = end - window_seconds
        return [r for r in self.store.records if r.timestamp >= start]

    def average_values(
        self,
        caller: bytes,
        opener: Callable[[bytes], bytes],
        window_seconds: int = DAY_SECONDS,
    ) -> AverageReport:
        """Mean of the 8 features and the modal stress over the window.

        The window trails the newest record; sealed payloads are opened
        with the supplied ``opener`` (the admin gateway holds the key,
        the contract state itself stays sealed). Modal ties resolve to
        the higher stress state.
        """
        if not check_access(self.policy, self.store, caller, "averages"):
            raise AccessDeniedError("averages not allowed for this key")
        if not self.store.records:
            raise EmptyStoreError("no records stored")
        cached = self._averages_cache.get(window_seconds)
        if cached is not None:
            return cached
        records = self.records_in_window(window_seconds)
        decoded = [PhysiologicalRecord.decode(opener(r.sealed_payload)) for r in records]
        features = [rec.sample.as_tuple() for rec in decoded]
        means = tuple(
            sum(row[i] for row in features) / len(features) for i in range(8)
        )
        counts: dict[StressState, int] = {}
        for rec in decoded:
            counts[rec.detected] = counts.get(rec.detected, 0) + 1
        best = max(counts.items(), key=lambda kv: (kv[1], int(kv[0])))[0]
        report = AverageReport(
            means=means,
            modal_state=best,
            count=len(decoded),
            window_start=decoded[0].timestamp,
            window_end=decoded[-1].timestamp,
        )
        self._averages_cache[window_seconds] = report
        return report


def rebuild_engine(chain: Chain) -> ContractEngine:
    """Replay the whole chain through a fresh engine (event sourcing)."""
    engine = ContractEngine()
    for height, block in enumerate(chain.blocks):
        engine.apply_block(block, height)
    return engine
