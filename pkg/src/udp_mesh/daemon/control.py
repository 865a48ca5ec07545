"""
Control plane served over the daemon's Unix socket.
"""
from dataclasses import asdict
from typing import List, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from ..bench import DEFAULT_PAYLOAD_SIZE
from ..config import TopicConfig
from ..errors import DuplicateTopicName, MeshError, NotFound, PeerOffline, UnknownPeer, UnknownTopic

NOT_FOUND = (UnknownTopic, UnknownPeer, NotFound)
CONFLICT = (PeerOffline, DuplicateTopicName)


class PriorityRequest(BaseModel):
    topic: str
    priority: int = Field(ge=0, le=255)


class BenchRequest(BaseModel):
    dest: str
    total_bytes: int = Field(ge=0)
    payload_size: int = Field(DEFAULT_PAYLOAD_SIZE, gt=0)
    timeout: Optional[float] = Field(None, gt=0)


def _http_error(exc: MeshError) -> HTTPException:
    if isinstance(exc, NOT_FOUND):
        status_code = 404
    elif isinstance(exc, CONFLICT):
        status_code = 409
    else:
        status_code = 400
    return HTTPException(
        status_code=status_code,
        detail={"error": type(exc).__name__, "message": str(exc)},
    )


def create_app(runtime) -> FastAPI:
    app = FastAPI(title="udp_mesh control")

    @app.get("/status")
    def status():
        return {
            "name": runtime.config.name,
            "peers": [asdict(peer) for peer in runtime.status()],
        }

    @app.get("/stats")
    def stats():
        return runtime.stats()

    @app.get("/topics")
    def topics():
        return [topic.model_dump(mode="json") for topic in runtime.topics()]

    @app.put("/topics")
    def replace_topics(configs: List[TopicConfig]):
        try:
            runtime.set_topics(configs)
        except MeshError as exc:
            raise _http_error(exc)
        return [topic.model_dump(mode="json") for topic in runtime.topics()]

    @app.post("/priority")
    def set_priority(request: PriorityRequest):
        try:
            topic = runtime.set_priority(request.topic, request.priority)
        except MeshError as exc:
            raise _http_error(exc)
        return topic.model_dump(mode="json")

    @app.post("/bench")
    def bench(request: BenchRequest):
        kwargs = {"timeout": request.timeout} if request.timeout else {}
        try:
            report = runtime.bench(request.dest, request.total_bytes, request.payload_size, **kwargs)
        except MeshError as exc:
            raise _http_error(exc)
        return report.as_dict()

    return app
