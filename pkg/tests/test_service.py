import json
import os

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from uav_isac.cli import main
from uav_isac.service import app

TINY = {
    "rho_init": [300.0, 460.0],
    "rho_final": [300.0, 540.0],
    "T_total": 4.0,
    "slot_len_ts": 0.5,
    "N_slots": 8,
    "M_antennas": 2,
}


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def test_health(client):
    data = client.get("/health").json()
    assert data["status"] == "ok"


def test_run_endpoint_small(client):
    resp = client.post(
        "/run",
        json={"scenario": TINY, "schemes": ["straight_flight_bf"], "profile": "fast"},
    )
    assert resp.status_code == 200
    data = resp.json()
    assert data["status"] == "ok"
    assert set(data["files"]) == {"trajectory.csv", "power.csv", "trace.csv", "summary.json"}
    assert data["files"]["trajectory.csv"].startswith("scheme,slot,x,y\r\n")
    summary = json.loads(data["files"]["summary.json"])
    assert summary["schemes"]["straight_flight_bf"]["feasible"] is True


def test_run_endpoint_empty_schemes(client):
    resp = client.post("/run", json={"scenario": TINY, "schemes": []})
    assert resp.status_code == 200
    assert set(resp.json()["files"]) == {"summary.json"}


def test_run_endpoint_rejects_bad_scenario(client):
    bad = dict(TINY, v_max=0.1)
    resp = client.post("/run", json={"scenario": bad, "schemes": ["straight_flight_bf"]})
    assert resp.status_code == 422


def test_run_endpoint_rejects_unknown_scheme(client):
    resp = client.post("/run", json={"scenario": TINY, "schemes": ["zigzag"]})
    assert resp.status_code == 422


def test_run_endpoint_reports_infeasible_scenario(client):
    # sensing floor far beyond the array ceiling: every slot is infeasible
    bad = dict(TINY, gamma_t=1.0)
    resp = client.post(
        "/run", json={"scenario": bad, "schemes": ["straight_flight_bf"], "profile": "fast"}
    )
    assert resp.status_code == 200
    data = resp.json()
    assert data["status"] == "infeasible"
    assert set(data["files"]) == {"summary.json"}
    summary = json.loads(data["files"]["summary.json"])
    entry = summary["schemes"]["straight_flight_bf"]
    assert entry["status"] == "infeasible"
    assert entry["infeasible_slots"] == list(range(TINY["N_slots"]))


def test_beampattern_endpoint(client):
    resp = client.post(
        "/beampattern",
        json={
            "scenario": TINY,
            "schemes": ["straight_flight_bf"],
            "profile": "fast",
            "slot": 4,
            "grid": [2, 2, 250, 350, 450, 550],
        },
    )
    assert resp.status_code == 200
    body = resp.json()["files"]["beampattern.csv"]
    assert body.startswith("scheme,kind,x,y,gain\r\n")
    assert ",user," in body and ",target," in body and ",eve," in body


def test_beampattern_slot_out_of_range(client):
    resp = client.post(
        "/beampattern",
        json={"scenario": TINY, "schemes": ["straight_flight_bf"], "slot": 40},
    )
    assert resp.status_code == 422


def test_sweep_endpoint_deterministic(client):
    req = {
        "scenario": TINY,
        "schemes": ["straight_flight_bf"],
        "profile": "fast",
        "antennas": [2],
        "runs": 2,
        "seed": 11,
    }
    a = client.post("/sweep-antennas", json=req)
    b = client.post("/sweep-antennas", json=req)
    assert a.status_code == b.status_code == 200
    assert a.json()["files"] == b.json()["files"]


def test_cli_run_writes_files(tmp_path):
    config = tmp_path / "scenario.json"
    config.write_text(json.dumps({**TINY, "schemes": ["straight_flight_bf"], "profile": "fast"}))
    out_dir = tmp_path / "out"
    runner = CliRunner()
    result = runner.invoke(
        main, ["run", "--config", str(config), "--out", str(out_dir), "--seed", "3"]
    )
    assert result.exit_code == 0, result.output
    names = sorted(os.listdir(out_dir))
    assert names == ["power.csv", "summary.json", "trace.csv", "trajectory.csv"]
    body = (out_dir / "trajectory.csv").read_bytes()
    assert body.startswith(b"scheme,slot,x,y\r\n")


def test_cli_beampattern_grid_flag(tmp_path):
    config = tmp_path / "scenario.json"
    config.write_text(json.dumps(TINY))
    out_dir = tmp_path / "bp"
    runner = CliRunner()
    result = runner.invoke(
        main,
        [
            "beampattern", "--config", str(config), "--out", str(out_dir),
            "--schemes", "straight_flight_bf", "--profile", "fast",
            "--slot", "2", "--grid", "2,2,250,350,450,550",
        ],
    )
    assert result.exit_code == 0, result.output
    assert (out_dir / "beampattern.csv").exists()


def test_cli_seed_repeat_byte_identical(tmp_path):
    config = tmp_path / "scenario.json"
    config.write_text(json.dumps({**TINY, "profile": "fast"}))
    runner = CliRunner()
    bodies = []
    for sub in ("a", "b"):
        out_dir = tmp_path / sub
        result = runner.invoke(
            main,
            [
                "sweep-antennas", "--config", str(config), "--out", str(out_dir),
                "--schemes", "straight_flight_bf", "--antennas", "2",
                "--runs", "2", "--seed", "77",
            ],
        )
        assert result.exit_code == 0, result.output
        bodies.append((out_dir / "sweep_raw.csv").read_bytes())
    assert bodies[0] == bodies[1]
