"""Permissioned proof-of-work ledger: transactions, Merkle trees, blocks.

Every structure hashes over its canonical encoding, so identical content
produces identical block hashes on any platform. The chain is
single-writer (append holds a lock) with concurrent reads; senders must
be pre-registered, and their transaction sequence numbers strictly
increase to block replays.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from . import crypto
from .encoding import ByteReader, pack_bytes, pack_u32, pack_u64

HASH_SIZE = 32
GENESIS_PREV_HASH = b"\x00" * HASH_SIZE
EMPTY_MERKLE_ROOT = b"\x00" * HASH_SIZE
BLOCK_VERSION = 1
MAX_TARGET_BITS = 255
DEFAULT_TARGET_BITS = 12  # ~4096 expected hashes; desk-scale difficulty


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class MiningError(RuntimeError):
    """Nonce space exhausted without meeting the target."""


@dataclass(frozen=True)
class Transaction:
    """Signed ledger entry carrying an opaque (sealed) payload.

    ``fee`` is carried for structural fidelity but has no economics on a
    single-owner permissioned chain.
    """

    sender: bytes  # 32-byte key id
    recipient: bytes  # 32-byte contract id
    payload: bytes
    sequence: int
    timestamp: int
    fee: int = 0
    signature: bytes = b""

    def signing_bytes(self) -> bytes:
        return (
            pack_bytes(self.sender)
            + pack_bytes(self.recipient)
            + pack_bytes(self.payload)
            + pack_u64(self.sequence)
            + pack_u64(self.timestamp)
            + pack_u64(self.fee)
        )

    def canonical_bytes(self) -> bytes:
        return self.signing_bytes() + pack_bytes(self.signature)

    def tx_hash(self) -> bytes:
        return sha256(self.canonical_bytes())

    @staticmethod
    def from_reader(reader: ByteReader) -> "Transaction":
        sender = reader.bytes_field()
        recipient = reader.bytes_field()
        payload = reader.bytes_field()
        sequence = reader.u64()
        timestamp = reader.u64()
        fee = reader.u64()
        signature = reader.bytes_field()
        return Transaction(sender, recipient, payload, sequence, timestamp, fee, signature)


def make_transaction(
    keypair: crypto.KeyPair,
    recipient: bytes,
    payload: bytes,
    sequence: int,
    timestamp: int,
    fee: int = 0,
) -> Transaction:
    tx = Transaction(keypair.key_id, recipient, payload, sequence, timestamp, fee)
    return replace(tx, signature=crypto.sign(keypair.private_bytes, tx.signing_bytes()))


def merkle_root(transactions: Sequence[Transaction]) -> bytes:
    """Root of the transaction hash tree.

    Leaves are SHA-256 of the canonical transaction bytes; odd levels
    duplicate their last node. A single leaf is its own root.
    """
    if not transactions:
        raise ValueError("merkle root of an empty transaction list")
    level = [tx.tx_hash() for tx in transactions]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def merkle_proof(transactions: Sequence[Transaction], index: int) -> list[tuple[bytes, bool]]:
    """Inclusion path for the transaction at ``index``.

    Each step is (sibling hash, sibling_is_left).
    """
    if not 0 <= index < len(transactions):
        raise IndexError("transaction index out of range")
    level = [tx.tx_hash() for tx in transactions]
    path: list[tuple[bytes, bool]] = []
    pos = index
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        sibling = pos ^ 1
        path.append((level[sibling], sibling < pos))
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        pos //= 2
    return path


def verify_proof(root: bytes, leaf: bytes, path: Iterable[tuple[bytes, bool]]) -> bool:
    acc = leaf
    for sibling, sibling_is_left in path:
        acc = sha256(sibling + acc) if sibling_is_left else sha256(acc + sibling)
    return acc == root


def target_from_bits(target_bits: int) -> int:
    """Numeric target: a header hash must fall strictly below it.

    ``target_bits`` is the required count of leading zero bits; 0 accepts
    any hash.
    """
    if not 0 <= target_bits <= MAX_TARGET_BITS:
        raise ValueError("target_bits out of range")
    return 1 << (256 - target_bits)


def meets_target(block_hash: bytes, target_bits: int) -> bool:
    return int.from_bytes(block_hash, "big") < target_from_bits(target_bits)


@dataclass(frozen=True)
class BlockHeader:
    version: int
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int
    target_bits: int
    nonce: int

    def header_bytes(self) -> bytes:
        return (
            pack_u32(self.version)
            + self.prev_hash
            + self.merkle_root
            + pack_u64(self.timestamp)
            + pack_u32(self.target_bits)
            + pack_u64(self.nonce)
        )

    def block_hash(self) -> bytes:
        return sha256(self.header_bytes())


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]

    def block_hash(self) -> bytes:
        return self.header.block_hash()

    def encode(self) -> bytes:
        body = self.header.header_bytes() + pack_u32(len(self.transactions))
        for tx in self.transactions:
            body += pack_bytes(tx.canonical_bytes())
        return body

    @staticmethod
    def decode(data: bytes) -> "Block":
        reader = ByteReader(data)
        header = BlockHeader(
            version=reader.u32(),
            prev_hash=reader.raw(HASH_SIZE),
            merkle_root=reader.raw(HASH_SIZE),
            timestamp=reader.u64(),
            target_bits=reader.u32(),
            nonce=reader.u64(),
        )
        count = reader.u32()
        txs = []
        for _ in range(count):
            tx_reader = ByteReader(reader.bytes_field())
            txs.append(Transaction.from_reader(tx_reader))
            tx_reader.expect_end()
        reader.expect_end()
        return Block(header=header, transactions=tuple(txs))


def genesis_block(timestamp: int = 0, target_bits: int = DEFAULT_TARGET_BITS) -> Block:
    header = BlockHeader(
        version=BLOCK_VERSION,
        prev_hash=GENESIS_PREV_HASH,
        merkle_root=EMPTY_MERKLE_ROOT,
        timestamp=timestamp,
        target_bits=target_bits,
        nonce=0,
    )
    return Block(header=header, transactions=())


def mine(
    transactions: Sequence[Transaction],
    prev_hash: bytes,
    target_bits: int,
    timestamp: int,
    version: int = BLOCK_VERSION,
) -> Block:
    """First block, scanning nonces from 0, whose header hash meets the target.

    Deterministic given the inputs.
    """
    if not transactions:
        raise ValueError("cannot mine an empty block")
    root = merkle_root(transactions)
    target = target_from_bits(target_bits)
    prefix = (
        pack_u32(version)
        + prev_hash
        + root
        + pack_u64(timestamp)
        + pack_u32(target_bits)
    )
    for nonce in range(1 << 64):
        digest = sha256(prefix + pack_u64(nonce))
        if int.from_bytes(digest, "big") < target:
            header = BlockHeader(version, prev_hash, root, timestamp, target_bits, nonce)
            return Block(header=header, transactions=tuple(transactions))
    raise MiningError("nonce space exhausted")


@dataclass(frozen=True)
class BlockViolation:
    kind: str  # linkage | pow | merkle | tx-signature | tx-sequence | tx-sender | structure
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


def _validate_against(
    block: Block,
    prev_block: Block | None,
    last_sequences: dict[bytes, int],
    registry: dict[bytes, bytes],
    check_signatures: bool = True,
) -> list[BlockViolation]:
    """Violations of one block given its predecessor and sequence state."""
    violations: list[BlockViolation] = []
    header = block.header
    if prev_block is None:
        if header.prev_hash != GENESIS_PREV_HASH:
            violations.append(BlockViolation("linkage", "genesis prev_hash must be zero"))
        if block.transactions:
            violations.append(BlockViolation("structure", "genesis carries transactions"))
        return violations
    if header.prev_hash != prev_block.block_hash():
        violations.append(BlockViolation("linkage", "prev_hash does not match predecessor"))
    if not meets_target(header.block_hash(), header.target_bits):
        violations.append(BlockViolation("pow", "header hash does not meet target"))
    if not block.transactions:
        violations.append(BlockViolation("structure", "non-genesis block without transactions"))
    elif header.merkle_root != merkle_root(block.transactions):
        violations.append(BlockViolation("merkle", "merkle root mismatch"))
    for i, tx in enumerate(block.transactions):
        public = registry.get(tx.sender)
        if public is None:
            violations.append(BlockViolation("tx-sender", f"tx {i}: sender not registered"))
            continue
        if check_signatures and not crypto.verify(public, tx.signing_bytes(), tx.signature):
            violations.append(BlockViolation("tx-signature", f"tx {i}: bad signature"))
        last = last_sequences.get(tx.sender, -1)
        if tx.sequence <= last:
            violations.append(
                BlockViolation("tx-sequence", f"tx {i}: sequence {tx.sequence} not above {last}")
            )
        else:
            last_sequences[tx.sender] = tx.sequence
    return violations


class Chain:
    """Append-only block list starting at genesis.

    ``registry`` maps sender key ids to public key containers; only
    registered senders can land transactions. ``check_signatures`` exists
    as a negative-control hook for the threat harness and must stay True
    in real use.
    """

    def __init__(
        self,
        registry: dict[bytes, bytes] | None = None,
        genesis_timestamp: int = 0,
        target_bits: int = DEFAULT_TARGET_BITS,
        check_signatures: bool = True,
    ):
        self.registry = dict(registry or {})
        self.target_bits = target_bits
        self.check_signatures = check_signatures
        self.blocks: list[Block] = [genesis_block(genesis_timestamp, target_bits)]
        self.by_hash: dict[bytes, int] = {self.blocks[0].block_hash(): 0}
        self._last_sequences: dict[bytes, int] = {}
        self._lock = threading.Lock()

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def tip(self) -> Block:
        return self.blocks[-1]

    def block_at(self, height: int) -> Block:
        return self.blocks[height]

    def register(self, key_id: bytes, public_bytes: bytes) -> None:
        self.registry[key_id] = public_bytes

    def next_sequence(self, sender: bytes) -> int:
        return self._last_sequences.get(sender, -1) + 1

    def validate_block(self, block: Block) -> list[BlockViolation]:
        """Violations of ``block`` as a candidate successor of the tip."""
        return _validate_against(
            block,
            self.tip(),
            dict(self._last_sequences),
            self.registry,
            self.check_signatures,
        )

    def append(self, block: Block) -> None:
        """Single mutation path; rejects blocks with any violation."""
        with self._lock:
            violations = _validate_against(
                block,
                self.tip(),
                self._last_sequences,
                self.registry,
                self.check_signatures,
            )
            if violations:
                raise ValueError("; ".join(str(v) for v in violations))
            self.blocks.append(block)
            self.by_hash[block.block_hash()] = self.height


@dataclass(frozen=True)
class ChainAudit:
    ok: bool
    bad_height: int | None = None
    violations: tuple[BlockViolation, ...] = ()


def verify_chain(chain: Chain) -> ChainAudit:
    """Re-validate every link from genesis; reports the earliest bad height."""
    sequences: dict[bytes, int] = {}
    prev: Block | None = None
    for height, block in enumerate(chain.blocks):
        violations = _validate_against(
            block, prev, sequences, chain.registry, chain.check_signatures
        )
        if violations:
            return ChainAudit(ok=False, bad_height=height, violations=tuple(violations))
        prev = block
    return ChainAudit(ok=True)


def adjust_target(recent_blocks: Sequence[Block], desired_interval: float) -> int:
    """Retarget from observed block spacing, one doubling/halving at most.

    Slower blocks scale the target up (fewer required zero bits, easier);
    the response is monotone in the observed mean interval.
    """
    if len(recent_blocks) < 2:
        raise ValueError("need at least 2 blocks to observe an interval")
    if desired_interval <= 0:
        raise ValueError("desired_interval must be positive")
    times = [b.header.timestamp for b in recent_blocks]
    intervals = [t2 - t1 for t1, t2 in zip(times, times[1:])]
    observed = sum(intervals) / len(intervals)
    bits = recent_blocks[-1].header.target_bits
    if observed <= 0:
        return min(MAX_TARGET_BITS, bits + 1)
    ratio = min(2.0, max(0.5, observed / desired_interval))
    delta = math.floor(math.log2(ratio) + 0.5)  # round half up, clamped by the ratio
    return max(0, min(MAX_TARGET_BITS, bits - delta))


def save_chain(chain: Chain, path: str) -> None:
    """Append-only file of length-prefixed canonical blocks."""
    with open(path, "wb") as fh:
        for block in chain.blocks:
            fh.write(pack_bytes(block.encode()))


def load_chain(
    path: str,
    registry: dict[bytes, bytes] | None = None,
    check_signatures: bool = True,
) -> Chain:
    """Rebuild a chain from disk, re-validating every block on the way in."""
    with open(path, "rb") as fh:
        data = fh.read()
    reader = ByteReader(data)
    blocks: list[Block] = []
    while not reader.at_end():
        blocks.append(Block.decode(reader.bytes_field()))
    if not blocks:
        raise ValueError("chain file is empty")
    genesis = blocks[0]
    chain = Chain(
        registry=registry,
        genesis_timestamp=genesis.header.timestamp,
        target_bits=genesis.header.target_bits,
        check_signatures=check_signatures,
    )
    if chain.blocks[0].block_hash() != genesis.block_hash():
        raise ValueError("genesis block does not match expected layout")
    for height, block in enumerate(blocks[1:], start=1):
        try:
            chain.append(block)
        except ValueError as exc:
            raise ValueError(f"chain invalid at height {height}: {exc}") from None
    return chain


def export_chain(chain: Chain, miner_label: str = "-") -> str:
    """Human-readable explorer dump: height, hash, tx count, miner."""
    lines = [f"{'height':>6}  {'hash':<64}  {'txs':>4}  miner"]
    for height, block in enumerate(chain.blocks):
        lines.append(
            f"{height:>6}  {block.block_hash().hex():<64}  "
            f"{len(block.transactions):>4}  {miner_label}"
        )
    return "\n".join(lines)
