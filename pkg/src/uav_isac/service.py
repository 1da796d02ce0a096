"""HTTP service exposing the experiment harness.

Stateless: every endpoint takes the full scenario + manifest in the request
and returns rendered CSV bodies plus a summary document; clients (the CLI
included) decide where files land on disk.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .baselines import SCHEMES
from .experiments import (
    DEFAULT_ANTENNAS,
    DEFAULT_GRID,
    DEFAULT_REGION,
    RunManifest,
    render_beampattern,
    render_run_files,
    run_schemes,
    run_sweep,
)
from .geometry import ConfigError, ScenarioConfig


class ScenarioModel(BaseModel):
    rho_init: list[float] = [300.0, 400.0]
    rho_final: list[float] = [300.0, 600.0]
    s_user: list[float] = [250.0, 520.0]
    s_target: list[float] = [250.0, 480.0]
    s_eve: list[float] = [350.0, 500.0]
    altitude_D: float = 200.0
    T_total: float = 12.0
    slot_len_ts: float = 0.5
    N_slots: int = 24
    v_max: float = 25.0
    M_antennas: int = 4
    gamma_t: float = 1e-6
    gamma_e: float = 1e-6
    P_max: float = 1.0
    beta0: float = 1e-3
    sigma2: float = 1e-12
    antenna_spacing_ratio: float = 0.5

    def to_config(self) -> ScenarioConfig:
        return ScenarioConfig.from_dict(self.model_dump())


class RunRequest(BaseModel):
    scenario: ScenarioModel = Field(default_factory=ScenarioModel)
    schemes: list[str] = list(SCHEMES)
    seed: int = 0
    profile: str = "default"


class BeampatternRequest(RunRequest):
    slot: int = 10
    grid: list[float] = list(DEFAULT_GRID)


class SweepRequest(RunRequest):
    runs: int = 20
    antennas: list[int] = list(DEFAULT_ANTENNAS)
    region: list[float] = list(DEFAULT_REGION)
    workers: int = 1


class FilesResponse(BaseModel):
    status: str
    files: dict[str, str]


app = FastAPI(title="uav-isac planner", version=__version__)


def _manifest(req: RunRequest, **extra) -> RunManifest:
    try:
        return RunManifest(
            scenario=req.scenario.to_config(),
            schemes=tuple(req.schemes),
            seed=req.seed,
            profile=req.profile,
            **extra,
        )
    except ConfigError as err:
        raise HTTPException(status_code=422, detail=str(err)) from err


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/run", response_model=FilesResponse)
def run_endpoint(req: RunRequest):
    manifest = _manifest(req)
    results = run_schemes(manifest)
    files = render_run_files(results, manifest)
    status = "ok" if any(r.status == "ok" for r in results.values()) or not results else "infeasible"
    return FilesResponse(status=status, files=files)


@app.post("/beampattern", response_model=FilesResponse)
def beampattern_endpoint(req: BeampatternRequest):
    manifest = _manifest(req, slot=req.slot, grid=tuple(req.grid))
    results = run_schemes(manifest)
    try:
        files = render_beampattern(results, manifest)
    except ConfigError as err:
        raise HTTPException(status_code=422, detail=str(err)) from err
    return FilesResponse(status="ok", files=files)


@app.post("/sweep-antennas", response_model=FilesResponse)
def sweep_endpoint(req: SweepRequest):
    manifest = _manifest(
        req, runs=req.runs, antennas=tuple(req.antennas), region=tuple(req.region)
    )
    files, _ = run_sweep(manifest, workers=req.workers)
    return FilesResponse(status="ok", files=files)
