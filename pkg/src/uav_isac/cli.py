"""Command-line front end.

A thin client over the HTTP service: commands build a request, send it to a
server (the in-process app by default, a remote one with --server), and
write the returned file bodies under --out. The config file is a single
JSON document mixing scenario fields with manifest fields (seed, schemes,
out, runs, antennas, slot, grid, region, profile); explicit flags win over
file values.
"""

from __future__ import annotations

import json
import os
import sys

import click
import httpx

from .experiments import split_config_document


def make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def load_config(path: str | None):
    if not path:
        return {}, {}
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise click.ClickException(f"{path} is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise click.ClickException(f"{path} must contain a JSON object")
    return split_config_document(doc)


def write_files(files: dict, out_dir: str) -> list:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, body in sorted(files.items()):
        dest = os.path.join(out_dir, name)
        with open(dest, "wb") as fh:
            fh.write(body.encode("utf-8"))
        written.append(dest)
    return written


def _parse_list(text, cast):
    return [cast(tok) for tok in str(text).split(",") if tok != ""]


def _merge(flag, file_value, default):
    if flag is not None:
        return flag
    if file_value is not None:
        return file_value
    return default


def _post(client, path, payload):
    resp = client.post(path, json=payload)
    if resp.status_code != 200:
        raise click.ClickException(f"{path} failed ({resp.status_code}): {resp.text}")
    return resp.json()


common_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="JSON scenario/manifest file."),
    click.option("--seed", type=int, default=None, help="64-bit RNG seed."),
    click.option("--out", "out_dir", type=click.Path(), default=None,
                 help="Output directory (created if missing)."),
    click.option("--schemes", default=None, help="Comma-separated scheme list."),
    click.option("--profile", default=None, type=click.Choice(["default", "fast"]),
                 help="Stopping-rule profile."),
    click.option("--server", default=None, help="Base URL of a running service; "
                 "defaults to solving in-process."),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


def build_payload(config_path, seed, schemes, profile):
    scenario_doc, manifest_doc = load_config(config_path)
    payload = {}
    if scenario_doc:
        payload["scenario"] = scenario_doc
    schemes = _merge(schemes, manifest_doc.get("schemes"), None)
    if schemes is not None:
        payload["schemes"] = _parse_list(schemes, str) if isinstance(schemes, str) else schemes
    payload["seed"] = _merge(seed, manifest_doc.get("seed"), 0)
    payload["profile"] = _merge(profile, manifest_doc.get("profile"), "default")
    return payload, manifest_doc


@click.group()
def main():
    """Secure UAV ISAC planner: joint beamforming/trajectory experiments."""


@main.command()
@with_common
def run(config_path, seed, out_dir, schemes, profile, server):
    """Optimize the selected schemes; write trajectory/power/trace CSVs."""
    payload, manifest_doc = build_payload(config_path, seed, schemes, profile)
    out_dir = _merge(out_dir, manifest_doc.get("out"), "out")
    with make_client(server) as client:
        data = _post(client, "/run", payload)
    for dest in write_files(data["files"], out_dir):
        click.echo(dest)
    if data["status"] != "ok":
        click.echo(f"status: {data['status']}", err=True)
        sys.exit(1)


@main.command()
@with_common
@click.option("--slot", type=int, default=None, help="1-based slot index.")
@click.option("--grid", default=None, help="nx,ny,xmin,xmax,ymin,ymax")
def beampattern(config_path, seed, out_dir, schemes, profile, server, slot, grid):
    """Ground-plane beampattern-gain map at one time slot."""
    payload, manifest_doc = build_payload(config_path, seed, schemes, profile)
    payload["slot"] = _merge(slot, manifest_doc.get("slot"), 10)
    grid = _merge(grid, manifest_doc.get("grid"), None)
    if grid is not None:
        payload["grid"] = _parse_list(grid, float) if isinstance(grid, str) else list(grid)
    out_dir = _merge(out_dir, manifest_doc.get("out"), "out")
    with make_client(server) as client:
        data = _post(client, "/beampattern", payload)
    for dest in write_files(data["files"], out_dir):
        click.echo(dest)


@main.command("sweep-antennas")
@with_common
@click.option("--runs", type=int, default=None, help="Monte Carlo draws.")
@click.option("--antennas", default=None, help="Comma-separated antenna counts.")
@click.option("--region", default=None, help="xmin,xmax,ymin,ymax node region.")
@click.option("--workers", type=int, default=None, help="Parallel worker processes.")
def sweep_antennas(config_path, seed, out_dir, schemes, profile, server,
                   runs, antennas, region, workers):
    """Average secrecy rate versus antenna count over random node draws."""
    payload, manifest_doc = build_payload(config_path, seed, schemes, profile)
    payload["runs"] = _merge(runs, manifest_doc.get("runs"), 20)
    ant = _merge(antennas, manifest_doc.get("antennas"), None)
    if ant is not None:
        payload["antennas"] = _parse_list(ant, int) if isinstance(ant, str) else list(ant)
    reg = _merge(region, manifest_doc.get("region"), None)
    if reg is not None:
        payload["region"] = _parse_list(reg, float) if isinstance(reg, str) else list(reg)
    payload["workers"] = _merge(workers, None, 1)
    out_dir = _merge(out_dir, manifest_doc.get("out"), "out")
    with make_client(server) as client:
        data = _post(client, "/sweep-antennas", payload)
    for dest in write_files(data["files"], out_dir):
        click.echo(dest)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
