"""Peer-to-peer topology, geography-derived latency and message timing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable

import numpy as np

from .engine import EventKind, RandomStream, SimEvent, Simulator, sample_normal, sample_normal_array

EARTH_RADIUS_KM = 6371.0
DEFAULT_BASE_LATENCY_S = 0.005
DEFAULT_SIGNAL_SPEED_KM_S = 200000.0


class TopologyInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class GeoLocation:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0 or not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"coordinates out of range: {self.latitude}, {self.longitude}")


@dataclass(frozen=True)
class Link:
    endpoints: frozenset
    bandwidth_mean: float
    bandwidth_std: float
    latency: float


@dataclass(frozen=True)
class NetMessage:
    src: int
    dst: int
    size: float
    payload: Any

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError(f"message size must be positive, got {self.size}")


def haversine_km(a: GeoLocation, b: GeoLocation) -> float:
    p1, p2 = math.radians(a.latitude), math.radians(b.latitude)
    dphi = p2 - p1
    dlmb = math.radians(b.longitude - a.longitude)
    h = math.sin(dphi / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def link_latency(distance_km: float, base_latency: float = DEFAULT_BASE_LATENCY_S,
                 signal_speed: float = DEFAULT_SIGNAL_SPEED_KM_S) -> float:
    if distance_km < 0:
        raise ValueError("distance must be non-negative")
    return base_latency + distance_km / signal_speed


@dataclass
class Topology:
    nodes: list[int]
    locations: dict[int, GeoLocation]
    adjacency: dict[int, tuple[int, ...]]
    links: dict[frozenset, Link] = field(default_factory=dict)
    bandwidth_mean: float = 10.0
    bandwidth_std: float = 0.5
    base_latency: float = DEFAULT_BASE_LATENCY_S
    signal_speed: float = DEFAULT_SIGNAL_SPEED_KM_S
    _latency_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def peers(self, node: int) -> tuple[int, ...]:
        return self.adjacency[node]

    def link(self, a: int, b: int) -> Link:
        """Return the link between ``a`` and ``b``, creating a direct one if absent."""
        key = frozenset((a, b))
        lk = self.links.get(key)
        if lk is None:
            d = haversine_km(self.locations[a], self.locations[b])
            lk = Link(key, self.bandwidth_mean, self.bandwidth_std,
                      link_latency(d, self.base_latency, self.signal_speed))
            self.links[key] = lk
        return lk

    def latency_matrix(self, members: list[int]) -> np.ndarray:
        key = tuple(members)
        cached = self._latency_cache.get(key)
        if cached is not None:
            return cached
        n = len(members)
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = out[j, i] = self.link(members[i], members[j]).latency
        out.setflags(write=False)
        self._latency_cache[key] = out
        return out

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        seen = {self.nodes[0]}
        stack = [self.nodes[0]]
        while stack:
            u = stack.pop()
            for v in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(self.nodes)

    def dump(self) -> str:
        lines = ["node_id\tlat\tlon\tpeers"]
        for n in self.nodes:
            loc = self.locations[n]
            lines.append(f"{n}\t{loc.latitude!r}\t{loc.longitude!r}\t{','.join(map(str, self.adjacency[n]))}")
        return "\n".join(lines) + "\n"


def _circulant_edges(n: int, d: int) -> list[tuple[int, int]]:
    edges = []
    for i in range(n):
        for k in range(1, d // 2 + 1):
            j = (i + k) % n
            edges.append((min(i, j), max(i, j)))
    if d % 2:
        for i in range(n // 2):
            edges.append((i, i + n // 2))
    return edges


def _random_regular(n: int, d: int, gen: np.random.Generator, swaps: int) -> list[set[int]]:
    """Degree-preserving double-edge-swap chain started from a circulant graph."""
    edges = _circulant_edges(n, d)
    adj = [set() for _ in range(n)]
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    m = len(edges)
    if m < 2:
        return adj
    for _ in range(swaps):
        i, j = gen.integers(0, m, size=2)
        if i == j:
            continue
        a, b = edges[i]
        c, e = edges[j]
        if gen.random() < 0.5:
            c, e = e, c
        # (a,b),(c,e) -> (a,c),(b,e)
        if len({a, b, c, e}) < 4 or c in adj[a] or e in adj[b]:
            continue
        adj[a].discard(b); adj[b].discard(a)
        adj[c].discard(e); adj[e].discard(c)
        adj[a].add(c); adj[c].add(a)
        adj[b].add(e); adj[e].add(b)
        edges[i] = (min(a, c), max(a, c))
        edges[j] = (min(b, e), max(b, e))
    return adj


def build_topology(node_count: int, peers_per_node: int, geo_stream: RandomStream,
                   topo_stream: RandomStream, *, bandwidth_mean: float = 10.0,
                   bandwidth_std: float = 0.5, base_latency: float = DEFAULT_BASE_LATENCY_S,
                   signal_speed: float = DEFAULT_SIGNAL_SPEED_KM_S, retries: int = 50) -> Topology:
    """Random ``peers_per_node``-regular connected overlay with random node locations.

    Node ids are ``0 .. node_count - 1``. Latitudes are drawn from [-60, 60] and
    longitudes from [-180, 180].
    """
    if not node_count > peers_per_node >= 1:
        raise TopologyInfeasible(f"need node_count > peers_per_node >= 1 (got {node_count}, {peers_per_node})")
    if (node_count * peers_per_node) % 2:
        raise TopologyInfeasible(f"no {peers_per_node}-regular graph on {node_count} nodes")
    nodes = list(range(node_count))
    lat = geo_stream.gen.uniform(-60.0, 60.0, node_count)
    lon = geo_stream.gen.uniform(-180.0, 180.0, node_count)
    locations = {i: GeoLocation(float(lat[i]), float(lon[i])) for i in nodes}
    swaps = 10 * node_count * peers_per_node
    for _ in range(retries):
        adj = _random_regular(node_count, peers_per_node, topo_stream.gen, swaps)
        topo = Topology(nodes, locations, {i: tuple(sorted(adj[i])) for i in nodes},
                        bandwidth_mean=bandwidth_mean, bandwidth_std=bandwidth_std,
                        base_latency=base_latency, signal_speed=signal_speed)
        if topo.is_connected():
            for i in nodes:
                for j in topo.adjacency[i]:
                    if i < j:
                        topo.link(i, j)
            return topo
    raise TopologyInfeasible(f"no connected graph after {retries} attempts")


def transfer_time(msg: NetMessage, link: Link, bw_stream: RandomStream, floor: float | None = None) -> float:
    bw = sample_normal(bw_stream, link.bandwidth_mean, link.bandwidth_std, floor)
    return msg.size / bw + link.latency


def transfer_matrix(size: float, latency: np.ndarray, bw_stream: RandomStream,
                    mean: float, std: float, floor: float | None = None) -> np.ndarray:
    """Per-message transfer times for every ordered pair; the diagonal is zero."""
    bw = sample_normal_array(bw_stream, mean, std, latency.shape, floor)
    out = size / bw + latency
    np.fill_diagonal(out, 0.0)
    return out


class Network:
    """Schedules point-to-point messages on a simulator and dispatches deliveries."""

    def __init__(self, sim: Simulator, topology: Topology, bw_stream: RandomStream):
        self.sim = sim
        self.topology = topology
        self.bw_stream = bw_stream
        self._receivers: dict[int, Callable[[NetMessage], None]] = {}
        self.sent = 0
        sim.on(EventKind.MESSAGE_DELIVERY, self._deliver)

    def attach(self, node: int, receiver: Callable[[NetMessage], None]) -> None:
        self._receivers[node] = receiver

    def send(self, msg: NetMessage, at: float | None = None) -> float:
        start = self.sim.clock if at is None else at
        arrival = start + transfer_time(msg, self.topology.link(msg.src, msg.dst), self.bw_stream)
        self.sim.schedule(SimEvent(arrival, EventKind.MESSAGE_DELIVERY, msg.dst, msg))
        self.sent += 1
        return arrival

    def _deliver(self, event: SimEvent) -> None:
        receiver = self._receivers.get(event.target)
        if receiver is not None:
            receiver(event.payload)


def gossip(net: Network, origin: int, payload_id: Hashable, size: float) -> dict[int, float]:
    """Flood ``payload_id`` from ``origin`` over the overlay.

    Returns a map node -> first-arrival time that fills in as the simulator
    runs. Each node forwards once, on first receipt, to every peer except the
    one it heard from; duplicates are dropped.
    """
    first: dict[int, float] = {origin: net.sim.clock}
    topo = net.topology

    def make_receiver(node, previous):
        def receive(msg: NetMessage):
            if not (isinstance(msg.payload, tuple) and msg.payload[0] == "gossip" and msg.payload[1] == payload_id):
                if previous is not None:
                    previous(msg)
                return
            if node in first:
                return
            first[node] = net.sim.clock
            for p in topo.peers(node):
                if p != msg.src:
                    net.send(NetMessage(node, p, size, msg.payload))
        return receive

    for node in topo.nodes:
        net.attach(node, make_receiver(node, net._receivers.get(node)))
    for p in topo.peers(origin):
        net.send(NetMessage(origin, p, size, ("gossip", payload_id)))
    return first
