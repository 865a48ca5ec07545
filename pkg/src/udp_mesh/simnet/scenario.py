from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config import LivenessConfig, NodeName, ReliableConfig, TopicConfig, load_yaml_model
from ..errors import InvalidScenario
from ..wire import node_id_for
from .network import LinkModel


class NodeSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: NodeName
    topics: List[TopicConfig] = Field(default_factory=list)


class LinkSpec(LinkModel):
    a: str
    b: str
    symmetric: bool = True


class GeneratorSpec(BaseModel):
    """Publishes `payload_bytes` random bytes on `topic` at `rate_hz`."""

    model_config = ConfigDict(extra="forbid")

    node: str
    topic: str
    rate_hz: float = Field(gt=0)
    payload_bytes: int = Field(ge=0)
    start: float = Field(0.0, ge=0)
    stop: Optional[float] = None
    dest: Optional[str] = None


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    name: str = "scenario"
    seed: int = 0
    duration: float = Field(0.0, ge=0)
    nodes: List[NodeSpec] = Field(default_factory=list)
    links: List[LinkSpec] = Field(default_factory=list)
    default_link: Optional[LinkModel] = None
    generators: List[GeneratorSpec] = Field(default_factory=list)
    liveness: LivenessConfig = Field(default_factory=LivenessConfig)
    reliable: ReliableConfig = Field(default_factory=ReliableConfig)
    prioritization: bool = True

    @model_validator(mode="after")
    def _references_resolve(self):
        names = [node.name for node in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")
        if len({node_id_for(name) for name in names}) != len(names):
            raise ValueError("node names collide on node id")
        known = set(names)
        for index, link in enumerate(self.links):
            for end in (link.a, link.b):
                if end not in known:
                    raise ValueError(f"links.{index}: endpoint {end!r} is not a node")
        topics = {node.name: {topic.name for topic in node.topics} for node in self.nodes}
        for index, generator in enumerate(self.generators):
            if generator.node not in known:
                raise ValueError(f"generators.{index}: node {generator.node!r} is not a node")
            if generator.topic not in topics[generator.node]:
                raise ValueError(f"generators.{index}: topic {generator.topic!r} is not configured on {generator.node!r}")
        return self


def load_scenario(path: str | Path) -> Scenario:
    return load_yaml_model(path, Scenario, InvalidScenario)
