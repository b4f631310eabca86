import pytest

from sleepstress import crypto
from sleepstress.contracts import PhysiologicalRecord
from sleepstress.gateway import (
    AverageReport,
    Denial,
    ProtocolError,
    ProtocolMessage,
    build_deployment,
    retrieve_flow,
    threat_suite,
    tt_metrics,
    upload_flow,
)
from sleepstress.physio import StressState, synth_dataset


def record_at(ts, seed=3, predicted="L/N"):
    from sleepstress.physio import classify_crisp

    sample, label = synth_dataset(1, seed=seed).rows[0]
    return PhysiologicalRecord(
        timestamp=ts, sample=sample, detected=label, predicted=predicted
    )


@pytest.fixture
def deployment():
    return build_deployment(seed=8, target_bits=0)


class TestUploadFlow:
    def test_receipt_points_at_record_transaction(self, deployment):
        record = record_at(10_000)
        receipt = upload_flow(deployment, record)
        block = deployment.chain.block_at(receipt.height)
        assert block.block_hash() == receipt.block_hash
        tx_hashes = [tx.tx_hash() for tx in block.transactions]
        assert receipt.tx_hash in tx_hashes
        assert deployment.engine.store.latest.digest == record.digest()

    def test_forged_signature_aborts_with_nothing_stored(self, deployment):
        adversary = crypto.keygen(seed=501)
        before = len(deployment.engine.store.records)
        with pytest.raises(ProtocolError) as err:
            upload_flow(deployment, record_at(10_000), keys=adversary)
        assert err.value.stage == "signature"
        assert len(deployment.engine.store.records) == before
        # the abort is audited on chain
        assert any(e.action == "audit-denial" for e in deployment.engine.audit)

    def test_key_without_upload_rights_aborts_at_access(self, deployment):
        # a registered node that is not the bound edge device
        outsider = deployment.requesters["outsider"]
        deployment.edge.keys = outsider.keys
        with pytest.raises(ProtocolError) as err:
            upload_flow(deployment, record_at(10_000))
        assert err.value.stage == "access"

    def test_k_records_yield_k_chain_records_in_order(self, deployment):
        k = 8
        height_before = deployment.chain.height
        for i in range(k):
            upload_flow(deployment, record_at(10_000 + i * 900, seed=20 + i))
        records = deployment.engine.store.records
        assert len(records) == k
        assert [r.timestamp for r in records] == [10_000 + i * 900 for i in range(k)]
        create_events = [
            e for e in deployment.engine.audit
            if e.action == "create-record" and e.outcome == "granted"
        ]
        assert len(create_events) == k
        assert deployment.chain.height == height_before + k


class TestRetrieveFlow:
    def test_round_trip_byte_identity(self, deployment):
        record = record_at(10_000)
        upload_flow(deployment, record)
        plaintext = retrieve_flow(deployment, "family", "latest")
        assert plaintext == record.encode()
        assert PhysiologicalRecord.decode(plaintext) == record

    def test_averages_report(self, deployment):
        for i in range(3):
            upload_flow(deployment, record_at(10_000 + i * 900, seed=30 + i))
        report = retrieve_flow(deployment, "family", "averages")
        assert isinstance(report, AverageReport)
        assert report.count == 3

    def test_unbound_key_denied_and_audited(self, deployment):
        upload_flow(deployment, record_at(10_000))
        outcome = retrieve_flow(deployment, "outsider", "latest")
        assert isinstance(outcome, Denial)
        outsider_id = deployment.registry.requesters["outsider"].key_id
        assert any(
            e.actor == outsider_id and e.outcome == "denied"
            for e in deployment.engine.audit
        )

    def test_empty_store_denial(self, deployment):
        outcome = retrieve_flow(deployment, "family", "latest")
        assert isinstance(outcome, Denial)
        assert outcome.reason == "empty-store"

    def test_rejects_unknown_query(self, deployment):
        with pytest.raises(ValueError):
            retrieve_flow(deployment, "family", "everything")


class TestWireHygiene:
    def test_no_plaintext_or_private_keys_on_the_wire(self):
        deployment = build_deployment(seed=9, target_bits=0, capture=True)
        record = record_at(10_000)
        upload_flow(deployment, record)
        retrieved = retrieve_flow(deployment, "family", "latest")
        assert retrieved == record.encode()
        wire = b"".join(deployment.bus.capture)
        assert record.encode() not in wire
        for pair in (
            deployment.registry.admin,
            deployment.registry.edge,
            *deployment.registry.requesters.values(),
        ):
            assert pair.private_bytes not in wire
            assert pair.private_bytes[1:33] not in wire
            assert pair.private_bytes[33:] not in wire

    def test_eavesdropper_cannot_open_any_body(self):
        deployment = build_deployment(seed=10, target_bits=0, capture=True)
        upload_flow(deployment, record_at(10_000))
        retrieve_flow(deployment, "family", "latest")
        adversary = crypto.keygen(seed=601)
        for wire in deployment.bus.capture:
            message = ProtocolMessage.from_wire(wire)
            with pytest.raises(crypto.DecryptionError):
                crypto.open_envelope(adversary.private_bytes, message.envelope)

    def test_message_wire_roundtrip(self, deployment):
        body = b"wire body"
        admin = deployment.registry.admin
        message = ProtocolMessage(
            kind="receipt",
            sender=admin.key_id,
            signature=crypto.sign(admin.private_bytes, body),
            envelope=crypto.seal(admin.public_bytes, body),
        )
        assert ProtocolMessage.from_wire(message.to_wire()) == message

    def test_capture_dump(self, tmp_path):
        deployment = build_deployment(seed=11, target_bits=0, capture=True)
        upload_flow(deployment, record_at(10_000))
        path = tmp_path / "wire.bin"
        deployment.bus.dump_capture(str(path))
        assert path.stat().st_size > 0


class TestThreatSuite:
    def test_stock_deployment_passes_all_four(self):
        results = threat_suite(seed=12)
        assert [r.passed for r in results] == [True, True, True, True]
        assert [r.number for r in results] == [1, 2, 3, 4]

    def test_disabling_signature_check_fails_threat_one(self):
        results = threat_suite(seed=12, disable_signature_check=True)
        assert results[0].passed is False
        # the other defences stand on their own
        assert results[1].passed and results[2].passed and results[3].passed

    def test_storing_plaintext_fails_threat_four(self):
        results = threat_suite(seed=12, store_plaintext=True)
        assert results[3].passed is False
        assert results[0].passed and results[1].passed and results[2].passed


class TestTimingReport:
    def test_shape_and_order_statistics(self):
        report = tt_metrics(n_trials=3, target_bits=4, seed=13)
        assert [row.function for row in report.rows] == [
            "contract-deployment", "add-role", "add-bearer", "create-record",
        ]
        for row in report.rows:
            assert row.trials == 3
            assert row.min_s <= row.mean_s <= row.max_s

    def test_higher_difficulty_is_slower(self):
        fast = tt_metrics(n_trials=3, target_bits=4, seed=14)
        slow = tt_metrics(n_trials=3, target_bits=14, seed=14)
        for a, b in zip(fast.rows, slow.rows):
            assert b.mean_s > a.mean_s

    def test_rejects_zero_trials(self):
        with pytest.raises(ValueError):
            tt_metrics(n_trials=0)
