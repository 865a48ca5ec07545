"""
Local pub/sub bus over a Unix stream socket.

Every frame is a big-endian u32 body length followed by the body; the body
starts with an op byte:

    PUBLISH    topic, dest (empty for the topic default), payload
    SUBSCRIBE  topic
    RESULT     ok flag (u8), UTF-8 text
    DELIVERY   source name, topic, arrival time (f64), payload

Strings are u8-length-prefixed UTF-8. Payloads run to the end of the body.
"""
import logging
import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from enum import IntEnum
from typing import BinaryIO, Iterator, List, Optional, Tuple, Union

from ..errors import BusError, MeshError
from ..topics import InboundDelivery

log = logging.getLogger(__name__)

LENGTH = struct.Struct("!I")
ARRIVAL = struct.Struct("!d")
MAX_FRAME = 64 * 1024 * 1024


class BusOp(IntEnum):
    PUBLISH = 1
    SUBSCRIBE = 2
    RESULT = 3
    DELIVERY = 4


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes
    dest: Optional[str] = None


@dataclass(frozen=True)
class Subscribe:
    topic: str


@dataclass(frozen=True)
class Result:
    ok: bool
    text: str = ""


Frame = Union[Publish, Subscribe, Result, InboundDelivery]


def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > 255:
        raise BusError(f"string of {len(raw)} bytes does not fit a bus frame")
    return bytes([len(raw)]) + raw


def _unpack_str(body: bytes, offset: int) -> Tuple[str, int]:
    if offset >= len(body):
        raise BusError("frame truncated")
    end = offset + 1 + body[offset]
    if end > len(body):
        raise BusError("frame truncated")
    return _text(body[offset + 1:end]), end


def _text(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        raise BusError("string is not valid UTF-8") from None


def encode_frame(frame: Frame) -> bytes:
    if isinstance(frame, Publish):
        body = bytes([BusOp.PUBLISH]) + _pack_str(frame.topic) + _pack_str(frame.dest or "") + frame.payload
    elif isinstance(frame, Subscribe):
        body = bytes([BusOp.SUBSCRIBE]) + _pack_str(frame.topic)
    elif isinstance(frame, Result):
        body = bytes([BusOp.RESULT, 1 if frame.ok else 0]) + frame.text.encode("utf-8")
    elif isinstance(frame, InboundDelivery):
        body = (
            bytes([BusOp.DELIVERY])
            + _pack_str(frame.source_name)
            + _pack_str(frame.topic)
            + ARRIVAL.pack(frame.arrival_time)
            + frame.payload
        )
    else:
        raise TypeError(f"not a bus frame: {frame!r}")
    return LENGTH.pack(len(body)) + body


def decode_body(body: bytes) -> Frame:
    if not body:
        raise BusError("empty frame")
    try:
        op = BusOp(body[0])
    except ValueError:
        raise BusError(f"unknown bus op {body[0]}") from None

    if op == BusOp.PUBLISH:
        topic, offset = _unpack_str(body, 1)
        dest, offset = _unpack_str(body, offset)
        return Publish(topic, body[offset:], dest or None)
    if op == BusOp.SUBSCRIBE:
        topic, _ = _unpack_str(body, 1)
        return Subscribe(topic)
    if op == BusOp.RESULT:
        if len(body) < 2:
            raise BusError("frame truncated")
        return Result(body[1] == 1, _text(body[2:]))
    source, offset = _unpack_str(body, 1)
    topic, offset = _unpack_str(body, offset)
    if offset + ARRIVAL.size > len(body):
        raise BusError("frame truncated")
    (arrival,) = ARRIVAL.unpack_from(body, offset)
    return InboundDelivery(source, topic, body[offset + ARRIVAL.size:], arrival)


def read_frame(stream: BinaryIO) -> Optional[Frame]:
    """Read one frame; None on a clean end of stream."""
    header = stream.read(LENGTH.size)
    if not header:
        return None
    if len(header) < LENGTH.size:
        raise BusError("frame truncated")
    (length,) = LENGTH.unpack(header)
    if length > MAX_FRAME:
        raise BusError(f"frame of {length} bytes exceeds {MAX_FRAME}")
    body = stream.read(length)
    if len(body) < length:
        raise BusError("frame truncated")
    return decode_body(body)


class _BusHandler(socketserver.StreamRequestHandler):
    server: "LocalBusServer"

    def setup(self) -> None:
        super().setup()
        self._write_lock = threading.Lock()
        self._subscriptions = []

    def _send(self, frame: Frame) -> None:
        with self._write_lock:
            self.wfile.write(encode_frame(frame))
            self.wfile.flush()

    def _sink(self, delivery: InboundDelivery) -> None:
        try:
            self._send(delivery)
        except OSError:
            log.debug("bus subscriber gone topic=%s", delivery.topic)

    def handle(self) -> None:
        runtime = self.server.runtime
        while True:
            try:
                frame = read_frame(self.rfile)
            except BusError as exc:
                self._send(Result(False, str(exc)))
                return
            if frame is None:
                return
            if isinstance(frame, Publish):
                try:
                    outcome = runtime.publish(frame.topic, frame.payload, frame.dest)
                except MeshError as exc:
                    self._send(Result(False, f"{type(exc).__name__}: {exc}"))
                else:
                    self._send(Result(True, _describe(outcome)))
            elif isinstance(frame, Subscribe):
                runtime.subscribe(frame.topic, self._sink)
                self._subscriptions.append(frame.topic)
                self._send(Result(True, f"topic={frame.topic}"))
            else:
                self._send(Result(False, "unexpected frame"))

    def finish(self) -> None:
        for topic in self._subscriptions:
            self.server.runtime.unsubscribe(topic, self._sink)
        try:
            super().finish()
        except OSError:
            pass


def _describe(outcome) -> str:
    if isinstance(outcome, int):
        return f"message_id={outcome}"
    ids = ",".join(str(mid) for mid in outcome.message_ids)
    return f"path={outcome.path.value} message_ids={ids}" if ids else f"path={outcome.path.value}"


class LocalBusServer(socketserver.ThreadingUnixStreamServer):
    daemon_threads = True

    def __init__(self, path: str, runtime):
        if os.path.exists(path):
            os.unlink(path)
        self.path = path
        self.runtime = runtime
        super().__init__(path, _BusHandler)

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="udpmesh-bus", daemon=True)
        thread.start()
        return thread

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if os.path.exists(self.path):
            os.unlink(self.path)


class BusClient:
    """Reader/writer adapter for applications on the same host."""

    def __init__(self, path: str, timeout: Optional[float] = None):
        self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self.sock.settimeout(timeout)
        self.sock.connect(path)
        self._rfile = self.sock.makefile("rb")
        self._backlog: List[InboundDelivery] = []

    def _request(self, frame: Frame) -> str:
        self.sock.sendall(encode_frame(frame))
        reply = read_frame(self._rfile)
        while isinstance(reply, InboundDelivery):
            self._backlog.append(reply)
            reply = read_frame(self._rfile)
        if reply is None:
            raise BusError("daemon closed the bus connection")
        if not isinstance(reply, Result):
            raise BusError(f"unexpected reply {type(reply).__name__}")
        if not reply.ok:
            raise BusError(reply.text)
        return reply.text

    def publish(self, topic: str, payload: bytes, dest: Optional[str] = None) -> str:
        return self._request(Publish(topic, payload, dest))

    def subscribe(self, topic: str) -> str:
        return self._request(Subscribe(topic))

    def deliveries(self) -> Iterator[InboundDelivery]:
        while self._backlog:
            yield self._backlog.pop(0)
        while True:
            frame = read_frame(self._rfile)
            if frame is None:
                return
            if isinstance(frame, InboundDelivery):
                yield frame

    def close(self) -> None:
        self._rfile.close()
        self.sock.close()

    def __enter__(self) -> "BusClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
