"""
Operator executables: `udpmeshd` runs a node, `umesh` talks to one or runs
simnet. Every line printed is key=value so output stays machine-parseable.
"""
import sys
from pathlib import Path
from typing import Optional

import httpx
import typer

from .bench import DEFAULT_PAYLOAD_SIZE, run_sim_bench
from .config import load_node_config
from .errors import MeshError
from .simnet.runner import run_scenario, summary_lines, write_run_stats
from .simnet.scenario import load_scenario

DEFAULT_CONTROL = "/tmp/udpmesh-control.sock"
DEFAULT_BUS = "/tmp/udpmesh-bus.sock"

app = typer.Typer(help="udp_mesh client and simulator", no_args_is_help=True)
daemon_app = typer.Typer(help="udp_mesh node daemon")

ControlOption = typer.Option(DEFAULT_CONTROL, "--control", envvar="UDPMESH_CONTROL", help="Control socket path")
BusOption = typer.Option(DEFAULT_BUS, "--bus", envvar="UDPMESH_BUS", help="Local bus socket path")


def _fail(exc: Exception) -> None:
    typer.echo(f"error={type(exc).__name__} message={exc}", err=True)
    raise typer.Exit(code=1)


def _control(path: str) -> httpx.Client:
    return httpx.Client(transport=httpx.HTTPTransport(uds=path), base_url="http://udpmesh", timeout=None)


def _request(path: str, method: str, url: str, **kwargs) -> dict:
    try:
        with _control(path) as client:
            response = client.request(method, url, **kwargs)
    except httpx.TransportError as exc:
        _fail(exc)
    if response.status_code >= 400:
        detail = response.json().get("detail", {})
        if isinstance(detail, dict):
            typer.echo(f"error={detail.get('error', response.status_code)} message={detail.get('message', '')}", err=True)
        else:
            typer.echo(f"error={response.status_code} message={detail}", err=True)
        raise typer.Exit(code=1)
    return response.json()


def _key_values(values: dict) -> str:
    return " ".join(f"{key}={value}" for key, value in values.items())


@app.command()
def pub(
    topic: str,
    file: Optional[Path] = typer.Option(None, "--file", help="Payload file; stdin when omitted"),
    dest: Optional[str] = typer.Option(None, "--dest", help="Send reliably to this peer"),
    bus: str = BusOption,
):
    """Publish one message on TOPIC."""
    from .daemon.local_bus import BusClient

    payload = file.read_bytes() if file else sys.stdin.buffer.read()
    try:
        with BusClient(bus) as client:
            result = client.publish(topic, payload, dest)
    except (MeshError, OSError) as exc:
        _fail(exc)
    typer.echo(f"topic={topic} bytes={len(payload)} {result}")


@app.command()
def sub(
    topic: str,
    count: int = typer.Option(0, "--count", help="Exit after this many messages; 0 runs forever"),
    bus: str = BusOption,
):
    """Print every message delivered on TOPIC."""
    from .daemon.local_bus import BusClient

    try:
        with BusClient(bus) as client:
            client.subscribe(topic)
            received = 0
            for delivery in client.deliveries():
                typer.echo(
                    f"source={delivery.source_name} topic={delivery.topic} arrival={delivery.arrival_time:.6f} "
                    f"bytes={len(delivery.payload)} payload_hex={delivery.payload.hex()}"
                )
                received += 1
                if count and received >= count:
                    break
    except (MeshError, OSError) as exc:
        _fail(exc)


@app.command()
def status(control: str = ControlOption):
    """Show the peer table."""
    body = _request(control, "GET", "/status")
    typer.echo(f"node={body['name']} peers={len(body['peers'])}")
    for peer in body["peers"]:
        typer.echo(f"peer {_key_values(peer)}")


@app.command("set-priority")
def set_priority(topic: str, priority: int = typer.Argument(..., min=0, max=255), control: str = ControlOption):
    """Change a topic's priority; lower numbers go first."""
    body = _request(control, "POST", "/priority", json={"topic": topic, "priority": priority})
    typer.echo(f"topic={body['name']} priority={body['priority']}")


@app.command()
def bench(
    dest: str = typer.Option("bench-rx", "--dest", help="Receiving peer"),
    total_bytes: int = typer.Option(100_000_000, "--bytes", min=0),
    payload: int = typer.Option(DEFAULT_PAYLOAD_SIZE, "--payload", min=1),
    simulate: bool = typer.Option(False, "--simulate", help="Run over simnet instead of a daemon"),
    latency: float = typer.Option(0.025, "--latency", help="Simulated one-way latency, seconds"),
    bandwidth: float = typer.Option(1e9, "--bandwidth", help="Simulated link rate, bits/s"),
    loss: float = typer.Option(0.0, "--loss", min=0.0, max=1.0),
    window: int = typer.Option(3, "--window", min=1),
    seed: int = typer.Option(0, "--seed"),
    control: str = ControlOption,
):
    """Measure payload throughput to DEST."""
    if simulate:
        report = run_sim_bench(total_bytes, payload, latency, bandwidth, loss, window, seed)
        typer.echo(report.format())
        return
    body = _request(control, "POST", "/bench", json={"dest": dest, "total_bytes": total_bytes, "payload_size": payload})
    line = _key_values({key: body[key] for key in ("dest", "total_bytes", "payload_size", "delivered_bytes")})
    typer.echo(
        f"{line} duration={body['duration']:.6f} throughput_bps={body['throughput_bps']:.0f} "
        f"retransmits={body['retransmits']} partial={str(body['partial']).lower()}"
        + (f" note={body['note']}" if body["note"] else "")
    )


@app.command()
def sim(
    scenario: Path = typer.Option(..., "--scenario", help="Scenario YAML file"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Overrides the scenario seed"),
    out: Optional[Path] = typer.Option(None, "--out", help="Directory for the CSV outputs"),
):
    """Run a scenario on simnet and print its summary."""
    try:
        loaded = load_scenario(scenario)
    except MeshError as exc:
        _fail(exc)
    stats = run_scenario(loaded, seed)
    for line in summary_lines(stats, loaded):
        typer.echo(line)
    if out is not None:
        for path in write_run_stats(stats, out):
            typer.echo(f"wrote={path}")


@daemon_app.command()
def daemon(config: Path = typer.Option(..., "--config", help="Node config YAML file")):
    """Run a mesh node on real UDP sockets."""
    from .daemon import serve

    try:
        node_config = load_node_config(config)
        code = serve(node_config)
    except MeshError as exc:
        _fail(exc)
    raise typer.Exit(code=code)


def main() -> None:
    app()


def daemon_main() -> None:
    daemon_app()
