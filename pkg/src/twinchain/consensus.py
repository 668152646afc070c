"""PBFT round timing shared by both chains, and proposer rotation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .engine import RandomStream, sample_normal_array
from .net import Topology, transfer_matrix


def fault_tolerance(n: int) -> int:
    if n < 1:
        raise ValueError("validator count must be at least 1")
    return (n - 1) // 3


def quorum_size(n: int) -> int:
    return 2 * fault_tolerance(n) + 1


@dataclass(frozen=True)
class QuorumParams:
    n: int

    @property
    def f(self) -> int:
        return fault_tolerance(self.n)

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1


def digest_to_int(h: bytes | int) -> int:
    """Low 64 bits of a digest, read big-endian."""
    if isinstance(h, int):
        return h & 0xFFFFFFFFFFFFFFFF
    return int.from_bytes(bytes(h)[-8:], "big")


def select_proposer(h_l: bytes | int, fc: int, n: int) -> int:
    """Index of the proposer: ``(h_l + fc) mod n`` with ``h_l`` reduced to 64 bits."""
    if n < 1:
        raise ValueError("validator count must be at least 1")
    if fc < 0:
        raise ValueError("failed-cycle count must be non-negative")
    return (digest_to_int(h_l) + fc) % n


class Phase(str, enum.Enum):
    PROPOSAL_SENT = "ProposalSent"
    PREPARING = "Preparing"
    COMMITTING = "Committing"
    COMMITTED = "Committed"
    FAILED = "Failed"


@dataclass
class RoundState:
    chain_tag: str
    proposer: int
    validators: list[int]
    block_digest: bytes = b""
    phase: Phase = Phase.PROPOSAL_SENT
    cycle: int = 0
    votes: dict[str, dict[int, float]] = field(default_factory=dict)


@dataclass(frozen=True)
class RoundOutcome:
    committed: bool
    proposer_commit_time: float
    commit_time_per_node: dict[int, float]
    proof: tuple[int, ...]
    proposal_arrival: np.ndarray
    t_proc: np.ndarray
    accepted: np.ndarray
    prepared: np.ndarray
    committed_at: np.ndarray
    adopted: np.ndarray

    def exit_times(self) -> np.ndarray:
        """Per-validator round end: own commit, or adoption for rejecting nodes."""
        return np.where(np.isfinite(self.committed_at), self.committed_at, self.adopted)


@dataclass
class TimingModel:
    """Link model used to sample consensus message delays between validators."""

    topology: Topology
    stream: RandomStream
    vote_size: float = 0.001
    processing_delay: float = 0.0


def run_round(state: RoundState, start: float, block_size: float, timing: TimingModel,
              accept: Callable[[int, float], bool], *, ready_at: Sequence[float] | None = None,
              online: Sequence[bool] | None = None, deadline: float = np.inf,
              latency: np.ndarray | None = None) -> RoundOutcome:
    """Run one propose/prepare/commit round on the timing model.

    The proposer ships the full block to every validator; a validator starts
    processing at ``max(arrival, ready_at)`` and ``accept(index, t)`` decides
    its vote.  The round commits when the proposer holds a quorum of commit
    votes strictly before ``deadline``; the proof is the first quorum of
    commit votes to reach the proposer (ties by validator index).
    """
    validators = state.validators
    n = len(validators)
    p = validators.index(state.proposer)
    q = quorum_size(n)
    if latency is None:
        latency = timing.topology.latency_matrix(validators)
    t = timing.topology
    bw = sample_normal_array(timing.stream, t.bandwidth_mean, t.bandwidth_std, n)
    arrival = start + (block_size / bw + latency[p])
    arrival[p] = start
    if online is not None:
        arrival = np.where(np.asarray(online, dtype=bool), arrival, np.inf)
    t_proc = arrival + timing.processing_delay
    t_proc[p] = start
    if ready_at is not None:
        t_proc = np.maximum(t_proc, np.asarray(ready_at, dtype=np.float64))
    tp = t_proc.tolist()
    acc = np.array([math.isfinite(x) and bool(accept(i, x)) for i, x in enumerate(tp)], dtype=bool)
    state.phase = Phase.PREPARING
    prep_d = transfer_matrix(timing.vote_size, latency, timing.stream, t.bandwidth_mean, t.bandwidth_std)
    comm_d = transfer_matrix(timing.vote_size, latency, timing.stream, t.bandwidth_mean, t.bandwidth_std)
    prepared, committed_at, adopted = kernels.round_times(t_proc, acc, prep_d, comm_d, q)
    proposer_commit = float(committed_at[p])
    ok = proposer_commit < deadline
    proof: tuple[int, ...] = ()
    per_node: dict[int, float] = {}
    if ok:
        votes_at_p = np.where(acc, prepared + comm_d[:, p], np.inf)
        votes_at_p[p] = prepared[p]
        order = np.argsort(votes_at_p, kind="stable").tolist()
        proof = tuple(validators[i] for i in order[:q])
        vp, ca = votes_at_p.tolist(), committed_at.tolist()
        state.votes["commit"] = {validators[i]: vp[i] for i in order if vp[i] != math.inf}
        per_node = {validators[i]: ca[i] for i in range(n) if ca[i] != math.inf}
        state.phase = Phase.COMMITTED
    else:
        state.phase = Phase.FAILED
    state.votes["prepare"] = {validators[i]: tp[i] for i in np.flatnonzero(acc).tolist()}
    return RoundOutcome(ok, proposer_commit, per_node, proof, arrival, t_proc, acc,
                        prepared, committed_at, adopted)
