"""Scenario parameters and the flat ``key: value`` scenario file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml


class ScenarioError(ValueError):
    pass


class ParseError(ScenarioError):
    pass


class UnknownKey(ScenarioError):
    pass


class InvalidValue(ScenarioError):
    pass


TWIN_POLICIES = ("constant", "changing")


@dataclass(frozen=True)
class Scenario:
    primary_nodes: int = 32
    peers_per_node: int = 16
    mgmt_nodes: int = 16
    bandwidth_mean_mbps: float = 10.0
    bandwidth_std_mbps: float = 0.5
    base_latency_s: float = 0.005
    signal_speed_km_s: float = 200000.0
    tx_block_size_limit_mb: float = 1.0
    block_interval_s: float = 0.1
    config_block_size_mb: float = 0.25
    cbi_mean_s: float = 30.0
    cbi_std_s: float = 5.0
    duration_s: float = 3600.0
    cycle_timeout_s: float = 5.0
    primary_round_timeout_s: float = 1.0
    vote_size_mb: float = 0.001
    tx_rate_per_s: float = 500.0
    tx_size_mb: float = 0.002
    offline_mgmt_nodes: int | tuple[int, ...] = 0
    twin_policy: str = "constant"
    seed: int = 0

    def __post_init__(self):
        validate(self)
        for name in _POSITIVE | _NON_NEGATIVE:
            object.__setattr__(self, name, float(getattr(self, name)))

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if isinstance(self.offline_mgmt_nodes, tuple):
            d["offline_mgmt_nodes"] = list(self.offline_mgmt_nodes)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


FIELD_TYPES = {f.name: f.type for f in fields(Scenario)}
_INT_FIELDS = {"primary_nodes", "peers_per_node", "mgmt_nodes", "seed"}
_POSITIVE = {"bandwidth_mean_mbps", "signal_speed_km_s", "tx_block_size_limit_mb", "block_interval_s",
             "config_block_size_mb", "cbi_mean_s", "cycle_timeout_s", "primary_round_timeout_s",
             "vote_size_mb", "tx_size_mb"}
_NON_NEGATIVE = {"bandwidth_std_mbps", "base_latency_s", "cbi_std_s", "duration_s", "tx_rate_per_s"}


def validate(s: Scenario) -> None:
    for name in _INT_FIELDS:
        v = getattr(s, name)
        if isinstance(v, bool) or not isinstance(v, int):
            raise InvalidValue(f"{name} must be an integer, got {v!r}")
    for name in _POSITIVE | _NON_NEGATIVE:
        v = getattr(s, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InvalidValue(f"{name} must be a number, got {v!r}")
        if name in _POSITIVE and not v > 0:
            raise InvalidValue(f"{name} must be positive, got {v}")
        if name in _NON_NEGATIVE and v < 0:
            raise InvalidValue(f"{name} must be non-negative, got {v}")
    if s.primary_nodes < 2 or s.mgmt_nodes < 1:
        raise InvalidValue("need at least 2 primary nodes and 1 management node")
    if s.mgmt_nodes > s.primary_nodes:
        raise InvalidValue("mgmt_nodes cannot exceed primary_nodes")
    if not 1 <= s.peers_per_node < s.primary_nodes:
        raise InvalidValue("peers_per_node must be in [1, primary_nodes)")
    if s.twin_policy not in TWIN_POLICIES:
        raise InvalidValue(f"twin_policy must be one of {TWIN_POLICIES}")
    off = s.offline_mgmt_nodes
    if isinstance(off, bool):
        raise InvalidValue("offline_mgmt_nodes must be a count or a list of node ids")
    if isinstance(off, int):
        if not 0 <= off <= s.mgmt_nodes:
            raise InvalidValue("offline_mgmt_nodes count out of range")
    elif isinstance(off, tuple):
        if any(not isinstance(x, int) or not 0 <= x < s.primary_nodes for x in off):
            raise InvalidValue("offline_mgmt_nodes ids must be primary node ids")
    else:
        raise InvalidValue("offline_mgmt_nodes must be a count or a list of node ids")


def coerce_value(name: str, value):
    """Convert a raw parsed or command-line value to the field's type."""
    if name not in FIELD_TYPES:
        raise UnknownKey(name)
    try:
        if name == "offline_mgmt_nodes":
            if isinstance(value, (list, tuple)):
                return tuple(int(v) for v in value)
            if isinstance(value, str) and ("," in value or value.startswith("[")):
                return tuple(int(v) for v in value.strip("[]").split(",") if v.strip())
            return int(value)
        if name == "twin_policy":
            return str(value)
        if name in _INT_FIELDS:
            if isinstance(value, float) and not value.is_integer():
                raise InvalidValue(f"{name} must be an integer")
            return int(value)
        return float(value)
    except (TypeError, ValueError) as e:
        if isinstance(e, ScenarioError):
            raise
        raise InvalidValue(f"{name}: cannot interpret {value!r}") from e


def scenario_from_mapping(data: dict, base: Scenario | None = None) -> Scenario:
    base = base or Scenario()
    changes = {}
    for k, v in data.items():
        if k not in FIELD_TYPES:
            raise UnknownKey(f"unknown scenario key {k!r}")
        changes[k] = coerce_value(k, v)
    return base.replace(**changes)


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ParseError(f"{path}: {e}") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected flat key: value pairs")
    for k, v in data.items():
        if isinstance(v, dict):
            raise ParseError(f"{path}: nested value for {k!r}")
    return scenario_from_mapping(data)


def dump_scenario(s: Scenario) -> str:
    return "".join(f"{k}: {json.dumps(v)}\n" for k, v in s.to_dict().items())
