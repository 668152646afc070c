"""Blocks, hashing and the dual-linked management/primary chain pair.

Every transaction block carries ``config_ref``, the hash of the configuration
block it was produced under, so a verifier can rebuild both chains and check
each transaction block against the configuration that governed it.
"""

from __future__ import annotations

import bisect
import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .consensus import quorum_size

HEADER_SIZE_MB = 0.001
GENESIS_PREV = bytes(32)
GENESIS_PROPOSER = -1
REQUIRED_KEYS = ("block_interval", "block_size_limit", "validator_set")


class ChainError(ValueError):
    pass


class BrokenLink(ChainError):
    pass


class BadHeight(ChainError):
    pass


class BadHash(ChainError):
    pass


class InsufficientProof(ChainError):
    pass


class ForeignAttestor(ChainError):
    pass


class UnknownConfigRef(ChainError):
    pass


class OversizedBlock(ChainError):
    pass


class InvalidConfiguration(ChainError):
    pass


def hash_block(preimage: bytes) -> bytes:
    return hashlib.sha256(preimage).digest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


class Configuration(Mapping):
    """Immutable parameter set applied to the primary chain."""

    def __init__(self, params: Mapping | None = None, **kwargs):
        data = dict(params or {}, **kwargs)
        missing = [k for k in REQUIRED_KEYS if k not in data]
        if missing:
            raise InvalidConfiguration(f"missing keys: {missing}")
        if not data["block_size_limit"] > 0 or not data["block_interval"] > 0:
            raise InvalidConfiguration("block_size_limit and block_interval must be positive")
        vs = tuple(int(v) for v in data["validator_set"])
        if not vs:
            raise InvalidConfiguration("validator_set must be non-empty")
        data["validator_set"] = vs
        self._data = {k: data[k] for k in sorted(data)}
        self._bytes = _canonical({k: (list(v) if isinstance(v, tuple) else v) for k, v in self._data.items()})

    def __getitem__(self, key):
        return self._data[key]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __eq__(self, other):
        if isinstance(other, Configuration):
            return self._bytes == other._bytes
        return NotImplemented

    def __hash__(self):
        return hash(self._bytes)

    def __repr__(self):
        return f"Configuration({self._data!r})"

    @property
    def block_size_limit(self) -> float:
        return float(self._data["block_size_limit"])

    @property
    def block_interval(self) -> float:
        return float(self._data["block_interval"])

    @property
    def validator_set(self) -> tuple[int, ...]:
        return self._data["validator_set"]

    def canonical_bytes(self) -> bytes:
        return self._bytes

    def to_json(self) -> dict:
        return json.loads(self._bytes)

    def with_updates(self, **kwargs) -> "Configuration":
        return Configuration(dict(self._data, **kwargs))


def config_block_preimage(prev_hash: bytes, proposer: int, config: Configuration, height: int) -> bytes:
    return b"|".join([b"cb", prev_hash.hex().encode(), str(proposer).encode(),
                      config.canonical_bytes(), str(height).encode()])


def tx_block_preimage(prev_hash: bytes, config_ref: bytes, proposer: int, tx_root: bytes,
                      size: float, height: int, proposed_at: float = 0.0) -> bytes:
    return b"|".join([b"tb", prev_hash.hex().encode(), config_ref.hex().encode(), str(proposer).encode(),
                      tx_root.hex().encode(), repr(float(size)).encode(), str(height).encode(),
                      repr(float(proposed_at)).encode()])


@dataclass(frozen=True)
class ConfigurationBlock:
    hash: bytes
    prev_hash: bytes
    proposer: int
    config: Configuration
    height: int
    proof: tuple[tuple[int, bytes], ...] = ()
    commit_time: float = 0.0

    @classmethod
    def create(cls, prev: "ConfigurationBlock | None", proposer: int, config: Configuration) -> "ConfigurationBlock":
        prev_hash = GENESIS_PREV if prev is None else prev.hash
        height = 0 if prev is None else prev.height + 1
        h = hash_block(config_block_preimage(prev_hash, proposer, config, height))
        return cls(h, prev_hash, proposer, config, height)

    def recompute_hash(self) -> bytes:
        return hash_block(config_block_preimage(self.prev_hash, self.proposer, self.config, self.height))

    def signed(self, attestors: Iterable[int], commit_time: float) -> "ConfigurationBlock":
        return replace(self, proof=tuple((int(a), self.hash) for a in attestors), commit_time=float(commit_time))


class Transaction(NamedTuple):
    id: int
    size: float
    arrival_time: float


class TxBatch:
    """Compact transaction list: parallel id/arrival arrays with a shared size.

    Iterating yields :class:`Transaction` records.
    """

    __slots__ = ("ids", "arrivals", "tx_size")

    def __init__(self, ids: np.ndarray, arrivals: np.ndarray, tx_size: float):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.arrivals = np.asarray(arrivals, dtype=np.float64)
        self.tx_size = float(tx_size)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Transaction]:
        for i, a in zip(self.ids.tolist(), self.arrivals.tolist()):
            yield Transaction(i, self.tx_size, a)

    @property
    def total_size(self) -> float:
        return self.tx_size * len(self.ids)

    def digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(repr(self.tx_size).encode())
        h.update(self.ids.astype(">i8").tobytes())
        h.update(self.arrivals.astype(">f8").tobytes())
        return h.digest()


EMPTY_BATCH = TxBatch(np.empty(0, np.int64), np.empty(0), 0.0)


@dataclass(frozen=True, eq=False)
class TransactionBlock:
    hash: bytes
    prev_hash: bytes
    config_ref: bytes
    proposer: int
    tx_root: bytes
    size: float
    height: int
    proposed_at: float = 0.0
    commit_time: float = 0.0
    transactions: TxBatch | None = field(default=None, repr=False)

    @classmethod
    def create(cls, prev: "TransactionBlock | None", config_ref: bytes, proposer: int,
               transactions: TxBatch = EMPTY_BATCH, header_size: float = HEADER_SIZE_MB,
               proposed_at: float = 0.0) -> "TransactionBlock":
        prev_hash = GENESIS_PREV if prev is None else prev.hash
        height = 0 if prev is None else prev.height + 1
        size = header_size + transactions.total_size
        root = transactions.digest()
        h = hash_block(tx_block_preimage(prev_hash, config_ref, proposer, root, size, height, proposed_at))
        return cls(h, prev_hash, config_ref, proposer, root, size, height, float(proposed_at), 0.0, transactions)

    def recompute_hash(self) -> bytes:
        return hash_block(tx_block_preimage(self.prev_hash, self.config_ref, self.proposer,
                                            self.tx_root, self.size, self.height, self.proposed_at))

    def committed(self, commit_time: float) -> "TransactionBlock":
        return replace(self, commit_time=float(commit_time))


class ChainPair:
    """The management chain of configuration blocks and the primary chain it governs."""

    def __init__(self, initial_config: Configuration, management_validators: Iterable[int]):
        self.management_validators = frozenset(int(v) for v in management_validators)
        genesis_cb = ConfigurationBlock.create(None, GENESIS_PROPOSER, initial_config)
        self.management_chain: list[ConfigurationBlock] = [genesis_cb]
        self._cb_by_hash: dict[bytes, ConfigurationBlock] = {genesis_cb.hash: genesis_cb}
        genesis_tb = TransactionBlock.create(None, genesis_cb.hash, GENESIS_PROPOSER)
        self.primary_chain: list[TransactionBlock] = [genesis_tb]

    @classmethod
    def from_blocks(cls, management_chain: list[ConfigurationBlock], primary_chain: list[TransactionBlock],
                    management_validators: Iterable[int]) -> "ChainPair":
        """Wrap existing block lists without validation (used when loading exports)."""
        self = cls.__new__(cls)
        self.management_validators = frozenset(int(v) for v in management_validators)
        self.management_chain = list(management_chain)
        self._cb_by_hash = {cb.hash: cb for cb in self.management_chain}
        self.primary_chain = list(primary_chain)
        return self

    @property
    def quorum(self) -> int:
        return quorum_size(len(self.management_validators))

    def latest_config(self) -> ConfigurationBlock:
        return self.management_chain[-1]

    def config_block(self, digest: bytes) -> ConfigurationBlock | None:
        return self._cb_by_hash.get(digest)

    def check_config_block(self, cb: ConfigurationBlock, require_proof: bool = True) -> None:
        tip = self.management_chain[-1]
        if cb.prev_hash != tip.hash:
            raise BrokenLink(f"CB {cb.height}: prev_hash does not match tip")
        if cb.height != tip.height + 1:
            raise BadHeight(f"CB height {cb.height}, expected {tip.height + 1}")
        if cb.recompute_hash() != cb.hash:
            raise BadHash(f"CB {cb.height}: hash does not match contents")
        if require_proof:
            check_proof(cb, self.management_validators)

    def append_config_block(self, cb: ConfigurationBlock) -> "ChainPair":
        self.check_config_block(cb)
        self.management_chain.append(cb)
        self._cb_by_hash[cb.hash] = cb
        return self

    def append_tx_block(self, b: TransactionBlock) -> "ChainPair":
        tip = self.primary_chain[-1]
        ref = self._cb_by_hash.get(b.config_ref)
        if ref is None:
            raise UnknownConfigRef(f"TB {b.height}: config_ref {b.config_ref.hex()[:12]} unknown")
        if b.size > ref.config.block_size_limit:
            raise OversizedBlock(f"TB {b.height}: {b.size} MB exceeds {ref.config.block_size_limit} MB")
        if b.prev_hash != tip.hash:
            raise BrokenLink(f"TB {b.height}: prev_hash does not match tip")
        if b.height != tip.height + 1:
            raise BadHeight(f"TB height {b.height}, expected {tip.height + 1}")
        self.primary_chain.append(b)
        return self


def check_proof(cb: ConfigurationBlock, validators: frozenset) -> None:
    signers = [a for a, _ in cb.proof]
    if any(a not in validators for a in signers):
        raise ForeignAttestor(f"CB {cb.height}: attestor outside the management set")
    distinct = {a for a, d in cb.proof if d == cb.hash}
    if len(distinct) < quorum_size(len(validators)):
        raise InsufficientProof(f"CB {cb.height}: {len(distinct)} attestations, need {quorum_size(len(validators))}")


def proof_is_valid(cb: ConfigurationBlock, validators: frozenset) -> bool:
    try:
        check_proof(cb, validators)
    except ChainError:
        return False
    return cb.recompute_hash() == cb.hash


@dataclass(frozen=True)
class Violation:
    chain: str
    height: int
    kind: str
    detail: str

    def __str__(self):
        return f"{self.chain}[{self.height}] {self.kind}: {self.detail}"


@dataclass(frozen=True)
class VerificationReport:
    violations: tuple[Violation, ...]
    management_blocks: int
    primary_blocks: int

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_chains(chain: ChainPair, management_validators: Iterable[int] | None = None,
                  max_activation_lag: float = 60.0) -> VerificationReport:
    """Rebuild both chains block by block and report every violation found.

    When its round started (``proposed_at``) a transaction block may lag
    behind the newest configuration block by up to ``max_activation_lag``
    seconds, since configuration blocks take time to propagate.  It must never
    reference a configuration block committed after that instant, nor an older
    one than its predecessor did.
    """
    validators = chain.management_validators if management_validators is None else frozenset(management_validators)
    out: list[Violation] = []
    mc, pc = chain.management_chain, chain.primary_chain

    by_hash: dict[bytes, ConfigurationBlock] = {}
    for i, cb in enumerate(mc):
        if cb.height != i:
            out.append(Violation("management", i, "height", f"block at index {i} has height {cb.height}"))
        if cb.recompute_hash() != cb.hash:
            out.append(Violation("management", i, "hash", "hash does not match block contents"))
        expected_prev = GENESIS_PREV if i == 0 else mc[i - 1].hash
        if cb.prev_hash != expected_prev:
            out.append(Violation("management", i, "link", "prev_hash does not match predecessor"))
        if i > 0:
            try:
                check_proof(cb, validators)
            except ChainError as e:
                out.append(Violation("management", i, "proof", str(e)))
            if cb.commit_time < mc[i - 1].commit_time:
                out.append(Violation("management", i, "order", "commit time precedes predecessor"))
        by_hash[cb.hash] = cb

    commit_times = [cb.commit_time for cb in mc]
    prev_ref_height = 0
    for i, b in enumerate(pc):
        if b.height != i:
            out.append(Violation("primary", i, "height", f"block at index {i} has height {b.height}"))
        if b.transactions is not None and b.transactions.digest() != b.tx_root:
            out.append(Violation("primary", i, "hash", "transaction payload does not match tx_root"))
        if b.recompute_hash() != b.hash:
            out.append(Violation("primary", i, "hash", "hash does not match block contents"))
        expected_prev = GENESIS_PREV if i == 0 else pc[i - 1].hash
        if b.prev_hash != expected_prev:
            out.append(Violation("primary", i, "link", "prev_hash does not match predecessor"))
        ref = by_hash.get(b.config_ref)
        if ref is None:
            out.append(Violation("primary", i, "config_ref", "references unknown configuration block"))
            continue
        if b.size > ref.config.block_size_limit + 1e-12:
            out.append(Violation("primary", i, "size", f"{b.size} MB over limit {ref.config.block_size_limit}"))
        if i == 0:
            if ref.height != 0:
                out.append(Violation("primary", i, "config_ref", "genesis must reference genesis configuration"))
            continue
        if b.proposed_at > b.commit_time:
            out.append(Violation("primary", i, "order", "proposed after its commit time"))
        if ref.commit_time > b.proposed_at:
            out.append(Violation("primary", i, "config_ref", "references a configuration committed later"))
        if ref.height < prev_ref_height:
            out.append(Violation("primary", i, "config_ref", "configuration regressed"))
        due = bisect.bisect_right(commit_times, b.proposed_at - max_activation_lag) - 1
        if due > ref.height:
            out.append(Violation("primary", i, "config_ref",
                                 f"stale: CB {due} was committed over {max_activation_lag}s earlier"))
        if b.commit_time < pc[i - 1].commit_time:
            out.append(Violation("primary", i, "order", "commit time precedes predecessor"))
        prev_ref_height = ref.height
    return VerificationReport(tuple(out), len(mc), len(pc))
