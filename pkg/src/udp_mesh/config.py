from enum import StrEnum
from pathlib import Path
from typing import Annotated, Any, List, Literal, Optional, Sequence, Tuple, Type, TypeVar

import yaml
from pydantic import AfterValidator, BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .wire import MAX_NAME_LEN

DEFAULT_PORT = 4950
DEFAULT_PRIORITY = 128
SCHEMA_VERSION = 1

M = TypeVar("M", bound=BaseModel)


def _check_name(value: str) -> str:
    if not value:
        raise ValueError("name must not be empty")
    if len(value.encode("utf-8")) > MAX_NAME_LEN:
        raise ValueError(f"name exceeds {MAX_NAME_LEN} bytes")
    return value


NodeName = Annotated[str, AfterValidator(_check_name)]


class LivenessConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    heartbeat_period: float = Field(1.0, gt=0)
    offline_timeout: float = Field(5.0, gt=0)

    @model_validator(mode="after")
    def _timeout_covers_two_periods(self):
        if self.offline_timeout < 2 * self.heartbeat_period:
            raise ValueError("offline_timeout must be at least 2 x heartbeat_period")
        return self


class ReliableConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    window: int = Field(3, ge=1)
    retransmit_initial: float = Field(0.2, gt=0)
    retransmit_max: float = Field(3.2, gt=0)
    reassembly_timeout: float = Field(10.0, gt=0)
    completed_retention: float = Field(60.0, gt=0)

    @model_validator(mode="after")
    def _backoff_bounds(self):
        if self.retransmit_initial > self.retransmit_max:
            raise ValueError("retransmit_initial must not exceed retransmit_max")
        return self

    @property
    def tick_interval(self) -> float:
        return self.retransmit_initial / 4


class DeliveryMode(StrEnum):
    RELIABLE = "reliable"
    BROADCAST = "broadcast"


class TopicConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: NodeName
    priority: int = Field(DEFAULT_PRIORITY, ge=0, le=255)
    mode: DeliveryMode = DeliveryMode.RELIABLE
    dest: Optional[str] = None

    @model_validator(mode="after")
    def _reliable_needs_dest(self):
        if self.mode == DeliveryMode.RELIABLE and not self.dest:
            raise ValueError("reliable topics need a dest")
        return self


class NodeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION
    name: NodeName
    bind_host: str = "0.0.0.0"
    port: int = Field(DEFAULT_PORT, ge=0, le=65535)
    broadcast_address: Optional[str] = "255.255.255.255"
    broadcast_port: Optional[int] = Field(None, ge=1, le=65535)
    static_peers: List[str] = Field(default_factory=list)
    topics: List[TopicConfig] = Field(default_factory=list)
    liveness: LivenessConfig = Field(default_factory=LivenessConfig)
    reliable: ReliableConfig = Field(default_factory=ReliableConfig)
    prioritization: bool = True
    control_socket: str = "/tmp/udpmesh-control.sock"
    bus_socket: str = "/tmp/udpmesh-bus.sock"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"

    @field_validator("static_peers")
    @classmethod
    def _peer_addresses(cls, peers: List[str]) -> List[str]:
        for peer in peers:
            parse_address(peer)
        return peers

    def static_peer_addresses(self) -> List[Tuple[str, int]]:
        return [parse_address(peer) for peer in self.static_peers]


def parse_address(text: str) -> Tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"address {text!r} is not host:port")
    return host, int(port)


def _line_of(root: Optional[yaml.Node], loc: Sequence[Any]) -> Optional[int]:
    """Walk the YAML node tree along a pydantic error location."""
    if root is None:
        return None
    node = root
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                if key.value == str(part):
                    node = value
                    break
            else:
                break
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
        else:
            break
    return node.start_mark.line + 1


def load_yaml_model(path: str | Path, model: Type[M], error_cls: Type[Exception] = ConfigError) -> M:
    """
    Load a YAML file into a pydantic model.

    Args:
        path: File to read
        model: Pydantic model class to validate against
        error_cls: ConfigError or InvalidScenario; both take (message, location, line)

    Returns:
        The validated model instance
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise error_cls(f"cannot read {path}: {exc.strerror}") from None

    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise error_cls(f"malformed YAML in {path}", None, mark.line + 1 if mark else None) from None

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise error_cls(f"{path} must contain a mapping", None, 1)

    try:
        return model.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = first["loc"]
        location = ".".join(str(part) for part in loc) or None
        raise error_cls(first["msg"], location, _line_of(root, loc)) from None


def load_node_config(path: str | Path) -> NodeConfig:
    return load_yaml_model(path, NodeConfig, ConfigError)
