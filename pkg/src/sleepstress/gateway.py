"""Three-party protocol gateway: edge client, admin node, requesters.

Messages travel an in-process ordered bus; every body is signed by its
sender over the plaintext and sealed to its recipient (sign-then-encrypt).
The admin node validates, mines and applies contract transactions, and
re-encrypts retrieved data to the requester. The module also carries the
four-scenario threat harness and the transaction-time benchmark.
"""

from __future__ import annotations

import hashlib
import time
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from . import contracts, crypto, ledger
from .contracts import (
    ACCESS_POLICY_CONTRACT,
    DATA_STORE_CONTRACT,
    AverageReport,
    ContractEngine,
    PhysiologicalRecord,
    encode_call,
)
from .crypto import KeyPair, SealedEnvelope
from .encoding import ByteReader, pack_bytes, pack_str, pack_u64
from .ledger import Chain, Transaction, make_transaction, mine
from .physio import SleepSample, StressState

MESSAGE_KINDS = (
    "upload-request",
    "upload-ack",
    "data-tx",
    "receipt",
    "access-request",
    "data-response",
    "denial",
)


class ProtocolError(RuntimeError):
    """A flow aborted; ``stage`` names the failed step."""

    def __init__(self, stage: str, detail: str):
        self.stage = stage
        super().__init__(f"{stage}: {detail}")


@dataclass(frozen=True)
class ProtocolMessage:
    kind: str
    sender: bytes  # key id
    signature: bytes  # detached, over the plaintext body
    envelope: SealedEnvelope  # body sealed to the recipient

    def to_wire(self) -> bytes:
        return (
            pack_str(self.kind)
            + pack_bytes(self.sender)
            + pack_bytes(self.signature)
            + pack_bytes(self.envelope.to_bytes())
        )

    @staticmethod
    def from_wire(data: bytes) -> "ProtocolMessage":
        reader = ByteReader(data)
        msg = ProtocolMessage(
            kind=reader.str_field(),
            sender=reader.bytes_field(),
            signature=reader.bytes_field(),
            envelope=SealedEnvelope.from_bytes(reader.bytes_field()),
        )
        reader.expect_end()
        return msg


class MessageBus:
    """Ordered in-process transport with per-sender FIFO delivery.

    With ``capture`` enabled every wire encoding is recorded, which is
    what the eavesdropper scenario inspects.
    """

    def __init__(self, capture: bool = False):
        self._queues: dict[bytes, deque[ProtocolMessage]] = {}
        self.capture: list[bytes] | None = [] if capture else None

    def send(self, recipient: bytes, message: ProtocolMessage) -> None:
        wire = message.to_wire()
        if self.capture is not None:
            self.capture.append(wire)
        self._queues.setdefault(recipient, deque()).append(
            ProtocolMessage.from_wire(wire)
        )

    def recv(self, recipient: bytes) -> ProtocolMessage:
        queue = self._queues.get(recipient)
        if not queue:
            raise ProtocolError("transport", "no message waiting")
        return queue.popleft()

    def dump_capture(self, path: str) -> None:
        if self.capture is None:
            raise ValueError("bus was not capturing")
        with open(path, "wb") as fh:
            for wire in self.capture:
                fh.write(pack_bytes(wire))


@dataclass
class NodeRegistry:
    """Keys of every party plus the routing table of public keys."""

    admin: KeyPair
    edge: KeyPair
    requesters: dict[str, KeyPair]

    def public_keys(self) -> dict[bytes, bytes]:
        table = {
            self.admin.key_id: self.admin.public_bytes,
            self.edge.key_id: self.edge.public_bytes,
        }
        for pair in self.requesters.values():
            table[pair.key_id] = pair.public_bytes
        return table


class _Party:
    """Shared signed+sealed messaging behaviour of every node."""

    def __init__(self, keys: KeyPair, bus: MessageBus, publics: dict[bytes, bytes]):
        self.keys = keys
        self.bus = bus
        self.publics = publics

    def send(self, kind: str, recipient_id: bytes, body: bytes) -> None:
        message = ProtocolMessage(
            kind=kind,
            sender=self.keys.key_id,
            signature=crypto.sign(self.keys.private_bytes, body),
            envelope=crypto.seal(self.publics[recipient_id], body),
        )
        self.bus.send(recipient_id, message)

    def open_and_verify(self, message: ProtocolMessage) -> bytes:
        """Unseal the body and verify the sender's signature over it."""
        body = crypto.open_envelope(self.keys.private_bytes, message.envelope)
        public = self.publics.get(message.sender)
        if public is None:
            raise ProtocolError("signature", "unknown sender")
        if not crypto.verify(public, body, message.signature):
            raise ProtocolError("signature", "bad message signature")
        return body


class EdgeClient(_Party):
    """The user's edge device: uploads sealed, signed record transactions.

    ``seal_payloads`` is a negative-control hook for the cloud-inspection
    scenario; it must stay True in real use.
    """

    def __init__(self, keys, bus, publics, admin_id: bytes, seal_payloads: bool = True):
        super().__init__(keys, bus, publics)
        self.admin_id = admin_id
        self.seal_payloads = seal_payloads

    def record_payload(self, record: PhysiologicalRecord) -> tuple[bytes, bytes, bytes]:
        """(call args) for create-record: timestamp, sealed payload, digest."""
        plaintext = record.encode()
        if self.seal_payloads:
            payload = crypto.seal(self.publics[self.admin_id], plaintext).to_bytes()
        else:
            payload = plaintext
        return pack_u64(record.timestamp), payload, record.digest()


class RequesterClient(_Party):
    pass


class AdminNode(_Party):
    """Gateway node: verifies, checks access, mines and answers.

    ``verify_signatures`` is the negative-control hook for the
    impersonation scenario.
    """

    def __init__(
        self,
        keys: KeyPair,
        bus: MessageBus,
        publics: dict[bytes, bytes],
        chain: Chain,
        engine: ContractEngine,
        verify_signatures: bool = True,
    ):
        super().__init__(keys, bus, publics)
        self.chain = chain
        self.engine = engine
        self.verify_signatures = verify_signatures
        self.clock = 1_000_000  # logical block timestamp source

    def _next_timestamp(self) -> int:
        self.clock += 1
        return self.clock

    def submit(self, tx: Transaction) -> tuple[contracts.AuditEvent, ledger.Block]:
        """Mine a single-transaction block, append it, apply the contract."""
        block = mine(
            [tx],
            self.chain.tip().block_hash(),
            self.chain.target_bits,
            timestamp=self._next_timestamp(),
        )
        self.chain.append(block)
        events = self.engine.apply_block(block, self.chain.height)
        return events[0], block

    def my_tx(self, recipient: bytes, payload: bytes) -> Transaction:
        return make_transaction(
            self.keys,
            recipient,
            payload,
            sequence=self.chain.next_sequence(self.keys.key_id),
            timestamp=self._next_timestamp(),
        )

    def record_denial(self, stage: str, subject: bytes) -> None:
        call = encode_call("audit-denial", [stage.encode("utf-8"), subject])
        self.submit(self.my_tx(ACCESS_POLICY_CONTRACT, call))

    def _open_checked(self, message: ProtocolMessage) -> bytes:
        body = crypto.open_envelope(self.keys.private_bytes, message.envelope)
        if self.verify_signatures:
            public = self.publics.get(message.sender)
            if public is None or not crypto.verify(public, body, message.signature):
                raise ProtocolError("signature", "bad message signature")
        return body

    def open_record(self, stored: contracts.StoredRecord) -> bytes:
        """Unseal an on-chain record payload and check its digest."""
        plaintext = crypto.open_envelope(
            self.keys.private_bytes, SealedEnvelope.from_bytes(stored.sealed_payload)
        )
        if hashlib.sha256(plaintext).digest() != stored.digest:
            raise ProtocolError("integrity", "stored digest mismatch")
        return plaintext

    # -- inbound handlers ------------------------------------------------

    def handle_upload_request(self, message: ProtocolMessage) -> None:
        try:
            body = self._open_checked(message)
        except (ProtocolError, crypto.DecryptionError):
            self.record_denial("upload-signature", message.sender)
            self.send("denial", message.sender, pack_str("signature"))
            return
        reader = ByteReader(body)
        digest = reader.bytes_field()
        reader.u64()  # announced record timestamp
        reader.expect_end()
        if not contracts.check_access(
            self.engine.policy, self.engine.store, message.sender, "upload"
        ):
            self.record_denial("upload-access", message.sender)
            self.send("denial", message.sender, pack_str("access"))
            return
        self.send("upload-ack", message.sender, pack_bytes(digest))

    def handle_data_tx(self, message: ProtocolMessage) -> None:
        try:
            body = self._open_checked(message)
        except (ProtocolError, crypto.DecryptionError):
            self.record_denial("data-signature", message.sender)
            self.send("denial", message.sender, pack_str("signature"))
            return
        tx_reader = ByteReader(body)
        tx = Transaction.from_reader(tx_reader)
        tx_reader.expect_end()
        try:
            event, block = self.submit(tx)
        except ValueError as exc:
            self.record_denial("data-invalid", message.sender)
            self.send("denial", message.sender, pack_str(f"invalid: {exc}"))
            return
        if event.outcome != "granted":
            self.send("denial", message.sender, pack_str(event.outcome))
            return
        receipt = (
            pack_bytes(block.block_hash())
            + pack_u64(self.chain.height)
            + pack_bytes(tx.tx_hash())
        )
        self.send("receipt", message.sender, receipt)

    def handle_access_request(self, message: ProtocolMessage) -> None:
        try:
            body = self._open_checked(message)
        except (ProtocolError, crypto.DecryptionError):
            self.record_denial("access-signature", message.sender)
            self.send("denial", message.sender, pack_str("signature"))
            return
        tx_reader = ByteReader(body)
        tx = Transaction.from_reader(tx_reader)
        tx_reader.expect_end()
        selector, _ = contracts.decode_call(tx.payload)
        try:
            event, _ = self.submit(tx)
        except ValueError as exc:
            self.record_denial("access-invalid", message.sender)
            self.send("denial", message.sender, pack_str(f"invalid: {exc}"))
            return
        if event.outcome != "granted":
            self.send("denial", message.sender, pack_str("access"))
            return
        try:
            if selector == "retrieve-latest":
                stored = self.engine.store.latest
                response = pack_str("latest") + pack_bytes(self.open_record(stored))
            else:
                report = self.engine.average_values(
                    tx.sender, lambda sealed: self.open_record_bytes(sealed)
                )
                response = pack_str("averages") + pack_bytes(report.encode())
        except contracts.EmptyStoreError:
            self.send("denial", message.sender, pack_str("empty-store"))
            return
        self.send("data-response", message.sender, response)

    def open_record_bytes(self, sealed_payload: bytes) -> bytes:
        return crypto.open_envelope(
            self.keys.private_bytes, SealedEnvelope.from_bytes(sealed_payload)
        )


@dataclass
class Deployment:
    """A complete simulated installation of the system."""

    registry: NodeRegistry
    bus: MessageBus
    chain: Chain
    engine: ContractEngine
    admin: AdminNode
    edge: EdgeClient
    requesters: dict[str, RequesterClient]


def build_deployment(
    seed: int = 0,
    target_bits: int = 8,
    capture: bool = False,
    admin_verify_signatures: bool = True,
    chain_check_signatures: bool = True,
    edge_seal_payloads: bool = True,
    family_permissions: Sequence[str] = ("retrieve", "averages"),
) -> Deployment:
    """Deploy contracts and bind the Family role on a fresh private chain.

    Two requesters exist: ``family`` (bound to the Family role) and
    ``outsider`` (a known node with no role, used by the threat suite).
    """
    registry = NodeRegistry(
        admin=crypto.keygen(seed * 1000 + 1),
        edge=crypto.keygen(seed * 1000 + 2),
        requesters={
            "family": crypto.keygen(seed * 1000 + 3),
            "outsider": crypto.keygen(seed * 1000 + 4),
        },
    )
    publics = registry.public_keys()
    bus = MessageBus(capture=capture)
    chain = Chain(
        registry=publics,
        target_bits=target_bits,
        check_signatures=chain_check_signatures,
    )
    engine = ContractEngine()
    admin = AdminNode(
        registry.admin, bus, publics, chain, engine,
        verify_signatures=admin_verify_signatures,
    )
    edge = EdgeClient(
        registry.edge, bus, publics, registry.admin.key_id,
        seal_payloads=edge_seal_payloads,
    )
    requesters = {
        name: RequesterClient(pair, bus, publics)
        for name, pair in registry.requesters.items()
    }

    admin.submit(admin.my_tx(ACCESS_POLICY_CONTRACT, encode_call("deploy")))
    admin.submit(
        admin.my_tx(
            DATA_STORE_CONTRACT, encode_call("deploy", [registry.edge.key_id])
        )
    )
    admin.submit(
        admin.my_tx(
            ACCESS_POLICY_CONTRACT,
            encode_call(
                "add-role",
                [b"Family"] + [p.encode("utf-8") for p in family_permissions],
            ),
        )
    )
    admin.submit(
        admin.my_tx(
            ACCESS_POLICY_CONTRACT,
            encode_call(
                "add-bearer", [registry.requesters["family"].key_id, b"Family"]
            ),
        )
    )
    return Deployment(registry, bus, chain, engine, admin, edge, requesters)


@dataclass(frozen=True)
class Receipt:
    block_hash: bytes
    height: int
    tx_hash: bytes


def upload_flow(
    deployment: Deployment,
    record: PhysiologicalRecord,
    keys: KeyPair | None = None,
) -> Receipt:
    """Run the full upload protocol for one record.

    Signed, sealed request; admin verification and access check; signed,
    sealed data transaction; contract execution; receipt. Raises
    :class:`ProtocolError` naming the stage on any abort. ``keys``
    overrides the edge identity (the impersonation scenario uses it).
    """
    edge = deployment.edge
    admin = deployment.admin
    keys = keys or edge.keys

    request = pack_bytes(record.digest()) + pack_u64(record.timestamp)
    message = ProtocolMessage(
        kind="upload-request",
        sender=edge.keys.key_id,
        signature=crypto.sign(keys.private_bytes, request),
        envelope=crypto.seal(edge.publics[edge.admin_id], request),
    )
    deployment.bus.send(edge.admin_id, message)
    admin.handle_upload_request(deployment.bus.recv(admin.keys.key_id))
    reply = deployment.bus.recv(edge.keys.key_id)
    if reply.kind == "denial":
        reason = ByteReader(
            crypto.open_envelope(edge.keys.private_bytes, reply.envelope)
        ).str_field()
        raise ProtocolError("access" if reason == "access" else "signature", reason)
    edge.open_and_verify(reply)

    ts_arg, payload, digest = edge.record_payload(record)
    call = encode_call("create-record", [ts_arg, payload, digest])
    tx = Transaction(
        sender=edge.keys.key_id,
        recipient=DATA_STORE_CONTRACT,
        payload=call,
        sequence=deployment.chain.next_sequence(edge.keys.key_id),
        timestamp=record.timestamp,
    )
    tx = replace(tx, signature=crypto.sign(keys.private_bytes, tx.signing_bytes()))
    body = tx.canonical_bytes()
    message = ProtocolMessage(
        kind="data-tx",
        sender=edge.keys.key_id,
        signature=crypto.sign(keys.private_bytes, body),
        envelope=crypto.seal(edge.publics[edge.admin_id], body),
    )
    deployment.bus.send(edge.admin_id, message)
    admin.handle_data_tx(deployment.bus.recv(admin.keys.key_id))
    reply = deployment.bus.recv(edge.keys.key_id)
    if reply.kind == "denial":
        reason = ByteReader(
            crypto.open_envelope(edge.keys.private_bytes, reply.envelope)
        ).str_field()
        raise ProtocolError("data-tx", reason)
    body = edge.open_and_verify(reply)
    reader = ByteReader(body)
    receipt = Receipt(
        block_hash=reader.bytes_field(),
        height=reader.u64(),
        tx_hash=reader.bytes_field(),
    )
    reader.expect_end()
    return receipt


@dataclass(frozen=True)
class Denial:
    reason: str


def retrieve_flow(
    deployment: Deployment, requester_name: str, query: str = "latest"
) -> bytes | AverageReport | Denial:
    """Run the data access protocol for one requester.

    Returns the record plaintext bytes for ``latest``, an
    :class:`AverageReport` for ``averages``, or a :class:`Denial`.
    """
    if query not in ("latest", "averages"):
        raise ValueError("query must be 'latest' or 'averages'")
    requester = deployment.requesters[requester_name]
    admin = deployment.admin
    selector = "retrieve-latest" if query == "latest" else "average-values"
    tx = make_transaction(
        requester.keys,
        DATA_STORE_CONTRACT,
        encode_call(selector),
        sequence=deployment.chain.next_sequence(requester.keys.key_id),
        timestamp=admin.clock + 1,
    )
    requester.send("access-request", admin.keys.key_id, tx.canonical_bytes())
    admin.handle_access_request(deployment.bus.recv(admin.keys.key_id))
    reply = deployment.bus.recv(requester.keys.key_id)
    if reply.kind == "denial":
        reason = ByteReader(
            crypto.open_envelope(requester.keys.private_bytes, reply.envelope)
        ).str_field()
        return Denial(reason)
    body = requester.open_and_verify(reply)
    reader = ByteReader(body)
    got = reader.str_field()
    payload = reader.bytes_field()
    reader.expect_end()
    if got == "latest":
        return payload
    return AverageReport.decode(payload)


def _sample_record(timestamp: int, seed: int) -> PhysiologicalRecord:
    from .physio import DEFAULT_TABLE, classify_crisp, synth_dataset

    ds = synth_dataset(1, seed=seed)
    sample, label = ds.rows[0]
    return PhysiologicalRecord(
        timestamp=timestamp, sample=sample, detected=label, predicted="L/N"
    )


@dataclass(frozen=True)
class ThreatResult:
    number: int
    name: str
    passed: bool
    detail: str


def _plaintext_leaked(haystack: bytes, record: PhysiologicalRecord) -> bool:
    """True when the record plaintext or any raw feature value appears."""
    from .encoding import pack_f64

    plaintext = record.encode()
    if plaintext in haystack:
        return True
    return any(pack_f64(v) in haystack for v in record.sample.as_tuple())


def threat_suite(
    seed: int = 0,
    target_bits: int = 4,
    disable_signature_check: bool = False,
    store_plaintext: bool = False,
) -> list[ThreatResult]:
    """Run the four attack scenarios against a fresh deployment.

    The two flags are deliberate negative controls: each one makes its
    corresponding scenario fail, demonstrating the defence is what blocks
    the attack.
    """
    results: list[ThreatResult] = []

    # Threat 1: impersonated upload with a forged signature
    deployment = build_deployment(
        seed=seed,
        target_bits=target_bits,
        admin_verify_signatures=not disable_signature_check,
        chain_check_signatures=not disable_signature_check,
    )
    adversary = crypto.keygen(seed * 1000 + 99)
    record = _sample_record(timestamp=10_000, seed=seed + 1)
    before = len(deployment.engine.store.records)
    try:
        upload_flow(deployment, record, keys=adversary)
        uploaded = True
    except ProtocolError:
        uploaded = False
    after = len(deployment.engine.store.records)
    blocked = not uploaded and after == before
    results.append(
        ThreatResult(
            1,
            "impersonated upload",
            blocked,
            "forged signature rejected, nothing stored"
            if blocked
            else "forged record reached the chain",
        )
    )

    # Threat 2: unauthorized retrieval by a role-less key
    deployment = build_deployment(seed=seed, target_bits=target_bits)
    upload_flow(deployment, record)
    outcome = retrieve_flow(deployment, "outsider", "latest")
    denied = isinstance(outcome, Denial)
    audited = any(
        e.outcome == "denied" and e.actor == deployment.registry.requesters["outsider"].key_id
        for e in deployment.engine.audit
    )
    results.append(
        ThreatResult(
            2,
            "unauthorized retrieval",
            denied and audited,
            "denied and audited" if denied and audited else "data escaped the policy",
        )
    )

    # Threat 3: eavesdropping on the transport
    deployment = build_deployment(seed=seed, target_bits=target_bits, capture=True)
    upload_flow(deployment, record)
    retrieved = retrieve_flow(deployment, "family", "latest")
    assert isinstance(retrieved, bytes)
    eavesdropper = crypto.keygen(seed * 1000 + 98)
    decrypted_any = False
    captured = deployment.bus.capture or []
    for wire in captured:
        message = ProtocolMessage.from_wire(wire)
        try:
            crypto.open_envelope(eavesdropper.private_bytes, message.envelope)
            decrypted_any = True
        except crypto.DecryptionError:
            pass
    leak = _plaintext_leaked(b"".join(captured), record)
    passed = not decrypted_any and not leak
    results.append(
        ThreatResult(
            3,
            "eavesdropping",
            passed,
            "all captured bodies stayed sealed"
            if passed
            else "plaintext recoverable from the wire",
        )
    )

    # Threat 4: inspection of the stored chain
    deployment = build_deployment(
        seed=seed, target_bits=target_bits, edge_seal_payloads=not store_plaintext
    )
    upload_flow(deployment, record)
    chain_bytes = b"".join(block.encode() for block in deployment.chain.blocks)
    leak = _plaintext_leaked(chain_bytes, record)
    results.append(
        ThreatResult(
            4,
            "cloud storage inspection",
            not leak,
            "chain holds only sealed payloads and digests"
            if not leak
            else "plaintext features readable from chain bytes",
        )
    )
    return results


@dataclass(frozen=True)
class TimingRow:
    function: str
    trials: int
    min_s: float
    max_s: float
    mean_s: float


@dataclass(frozen=True)
class TimingReport:
    target_bits: int
    rows: tuple[TimingRow, ...]

    def to_dict(self) -> dict:
        return {
            "target_bits": self.target_bits,
            "rows": [
                {
                    "function": r.function,
                    "trials": r.trials,
                    "min_s": r.min_s,
                    "max_s": r.max_s,
                    "mean_s": r.mean_s,
                }
                for r in self.rows
            ],
        }


def tt_metrics(n_trials: int = 10, target_bits: int = 12, seed: int = 0) -> TimingReport:
    """Wall-clock submission-to-receipt times per contract function.

    Measures contract deployment, add-role, add-bearer and create-record
    over ``n_trials`` each, reporting min, max and mean seconds.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")

    def timed(name: str, fn: Callable[[int], None]) -> TimingRow:
        times = []
        for trial in range(n_trials):
            start = time.perf_counter()
            fn(trial)
            times.append(time.perf_counter() - start)
        return TimingRow(
            function=name,
            trials=n_trials,
            min_s=min(times),
            max_s=max(times),
            mean_s=sum(times) / len(times),
        )

    rows = []
    deploy_keys = crypto.keygen(seed * 1000 + 77)

    def do_deploy(trial: int) -> None:
        publics = {deploy_keys.key_id: deploy_keys.public_bytes}
        chain = Chain(registry=publics, target_bits=target_bits)
        engine = ContractEngine()
        admin = AdminNode(deploy_keys, MessageBus(), publics, chain, engine)
        admin.submit(admin.my_tx(ACCESS_POLICY_CONTRACT, encode_call("deploy")))

    rows.append(timed("contract-deployment", do_deploy))

    deployment = build_deployment(seed=seed, target_bits=target_bits)
    admin = deployment.admin

    def do_add_role(trial: int) -> None:
        admin.submit(
            admin.my_tx(
                ACCESS_POLICY_CONTRACT,
                encode_call("add-role", [f"role-{trial}".encode(), b"retrieve"]),
            )
        )

    rows.append(timed("add-role", do_add_role))

    def do_add_bearer(trial: int) -> None:
        key = crypto.keygen(seed * 1_000_000 + trial)
        admin.submit(
            admin.my_tx(
                ACCESS_POLICY_CONTRACT,
                encode_call("add-bearer", [key.key_id, f"role-{trial}".encode()]),
            )
        )

    rows.append(timed("add-bearer", do_add_bearer))

    base_ts = 1_000
    records = [
        _sample_record(timestamp=base_ts + 900 * i, seed=seed + 10 + i)
        for i in range(n_trials)
    ]

    def do_create_record(trial: int) -> None:
        upload_flow(deployment, records[trial])

    rows.append(timed("create-record", do_create_record))
    return TimingReport(target_bits=target_bits, rows=tuple(rows))
