"""Experiment harness: scheme runs, beampattern maps, antenna sweeps.

Everything here is pure in-memory computation returning rendered CSV bodies
and a JSON-ready summary; writing to disk is the caller's job (the CLI and
the HTTP service share these entry points). All CSV output is RFC-4180
style (CRLF, header row first) with a fixed float format, so identical
inputs give byte-identical bodies.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import SCHEMES, SchemeResult, dominance_warnings, run_all, run_scheme
from .beamforming import BeamStop
from .driver import AoStop
from .geometry import ConfigError, ScenarioConfig, steering_vector
from .metrics import array_gain, quad_form
from .trajectory_opt import TrajStop, TrustRegion

DEFAULT_REGION = (200.0, 400.0, 400.0, 600.0)
DEFAULT_ANTENNAS = (2, 4, 6, 8)
DEFAULT_GRID = (41, 41, 200.0, 400.0, 400.0, 600.0)

MANIFEST_KEYS = {
    "schemes", "seed", "out", "runs", "antennas", "region", "slot", "grid", "profile",
}


@dataclass
class RunManifest:
    """Everything one invocation needs beyond the scenario itself."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    schemes: tuple = SCHEMES
    seed: int = 0
    runs: int = 20
    antennas: tuple = DEFAULT_ANTENNAS
    region: tuple = DEFAULT_REGION
    slot: int = 10  # 1-based slot index for beampattern maps
    grid: tuple = DEFAULT_GRID
    profile: str = "default"

    def __post_init__(self):
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ConfigError(f"unknown schemes {unknown}; expected from {SCHEMES}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must fit in 64 bits")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.profile not in ("default", "fast"):
            raise ConfigError("profile must be 'default' or 'fast'")
        x0, x1, y0, y1 = self.region
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("region bounds are degenerate")

    def stop(self) -> AoStop:
        if self.profile == "fast":
            # sweep profile: same algorithm, coarser stopping thresholds
            return AoStop(
                eps=3e-3,
                max_rounds=10,
                beam=BeamStop(eps_obj=3e-4, max_iter=15),
                traj=TrajStop(trust=TrustRegion(), eps_obj=3e-4, max_steps=100),
            )
        return AoStop()


def split_config_document(doc: dict):
    """A config file mixes scenario fields with manifest fields; split them."""
    manifest = {k: v for k, v in doc.items() if k in MANIFEST_KEYS}
    scenario = {k: v for k, v in doc.items() if k not in MANIFEST_KEYS}
    return scenario, manifest


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def _scheme_summary(res: SchemeResult) -> dict:
    out = {
        "status": res.status,
        "avg_secrecy_rate": res.avg_rate_clamped,
        "avg_secrecy_rate_unclamped": res.avg_rate_unclamped,
        "rounds": len(res.rate_trace),
        "wall_time_s": res.wall_time,
        "infeasible_slots": list(map(int, res.infeasible_slots)),
    }
    if res.branch:
        out["branch"] = res.branch
    if res.feasibility is not None:
        out["residuals"] = {
            k: v for k, v in res.feasibility.summary().items() if k.endswith("_residual")
        }
        out["feasible"] = bool(res.feasibility.ok)
    if "sensing_shortfall_slots" in res.diagnostics:
        out["sensing_shortfall_slots"] = list(
            map(int, res.diagnostics["sensing_shortfall_slots"])
        )
    return out


def run_schemes(manifest: RunManifest) -> dict:
    """Execute the selected schemes on the manifest's scenario."""
    return run_all(manifest.scenario, manifest.schemes, manifest.stop())


def render_run_files(results: dict, manifest: RunManifest):
    """Render trajectory/power/trace CSV bodies plus the summary document.
    Infeasible schemes appear in the summary only."""
    traj_rows, power_rows, trace_rows = [], [], []
    for name in manifest.schemes:
        res = results[name]
        if res.status != "ok":
            continue
        for n in range(res.traj.n_slots):
            x, y = res.traj.positions[n]
            traj_rows.append((name, n + 1, x, y))
        pb, ps = res.plan.powers()
        for n in range(res.traj.n_slots):
            power_rows.append((name, n + 1, float(pb[n]), float(ps[n])))
        for rnd, rate in enumerate(res.rate_trace, start=1):
            trace_rows.append((name, rnd, rate))

    summary = {
        "scenario": manifest.scenario.to_dict(),
        "seed": manifest.seed,
        "schemes": {name: _scheme_summary(results[name]) for name in manifest.schemes},
        "dominance_warnings": dominance_warnings(results),
    }
    files = {}
    if traj_rows:
        files["trajectory.csv"] = render_csv(("scheme", "slot", "x", "y"), traj_rows)
        files["power.csv"] = render_csv(
            ("scheme", "slot", "info_power", "sense_power"), power_rows
        )
        files["trace.csv"] = render_csv(("scheme", "round", "avg_secrecy_rate"), trace_rows)
    files["summary.json"] = summary_json(summary)
    return files


def render_beampattern(results: dict, manifest: RunManifest):
    """Ground-plane gain map of B[slot] + A_s[slot] for each scheme, plus
    marker rows evaluating the gain exactly at the three ground nodes."""
    cfg = manifest.scenario
    if not (1 <= manifest.slot <= cfg.N_slots):
        raise ConfigError(f"slot must be in 1..{cfg.N_slots}")
    nx, ny, x0, x1, y0, y1 = manifest.grid
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ConfigError("beampattern grid must have at least one point per axis")
    xs = np.linspace(x0, x1, nx) if nx > 1 else np.array([x0])
    ys = np.linspace(y0, y1, ny) if ny > 1 else np.array([y0])

    rows = []
    for name in manifest.schemes:
        res = results[name]
        if res.status != "ok":
            continue
        k = manifest.slot - 1
        rho = res.traj.positions[k]
        E = res.plan.info_outer[k] + res.plan.sense_cov[k]
        for y in ys:
            for x in xs:
                phi = steering_vector(rho, (x, y), cfg.altitude_D, cfg.M_antennas)
                rows.append((name, "grid", float(x), float(y), quad_form(phi, E)))
        for kind, point in (("user", cfg.s_user), ("target", cfg.s_target), ("eve", cfg.s_eve)):
            rows.append(
                (name, kind, float(point[0]), float(point[1]), array_gain(E, rho, point, cfg))
            )
    return {"beampattern.csv": render_csv(("scheme", "kind", "x", "y", "gain"), rows)}


def draw_nodes(rng: np.random.Generator, region, min_separation: float = 1.0):
    """Uniform node placement in the region, rejecting draws where any two
    nodes fall within min_separation of each other."""
    x0, x1, y0, y1 = region
    while True:
        pts = np.column_stack(
            [rng.uniform(x0, x1, size=3), rng.uniform(y0, y1, size=3)]
        )
        d01 = np.linalg.norm(pts[0] - pts[1])
        d02 = np.linalg.norm(pts[0] - pts[2])
        d12 = np.linalg.norm(pts[1] - pts[2])
        if min(d01, d02, d12) >= min_separation:
            return pts  # rows: user, target, eve


def run_stream_seed(seed: int, run_index: int) -> int:
    """Independent per-run stream: seed XOR run index (order-free)."""
    return int(np.uint64(seed) ^ np.uint64(run_index))


def _sweep_one(args):
    base_doc, schemes, antennas, region, seed, run_idx, profile = args
    rng = np.random.default_rng(run_stream_seed(seed, run_idx))
    nodes = draw_nodes(rng, region)
    rows = []
    for m in antennas:
        scenario = ScenarioConfig.from_dict(
            {
                **base_doc,
                "s_user": nodes[0].tolist(),
                "s_target": nodes[1].tolist(),
                "s_eve": nodes[2].tolist(),
                "M_antennas": int(m),
            }
        )
        manifest = RunManifest(
            scenario=scenario, schemes=tuple(schemes), seed=seed, profile=profile
        )
        stop = manifest.stop()
        for scheme in schemes:
            res = run_scheme(scheme, scenario, stop)
            rate = res.avg_rate_clamped if res.status == "ok" else math.nan
            rows.append((int(m), scheme, run_idx, res.status, rate))
    return rows


def run_sweep(manifest: RunManifest, workers: int = 1):
    """Monte Carlo antenna sweep: per draw, sample the three ground nodes,
    then run every scheme at every antenna count on that draw."""
    base_doc = manifest.scenario.to_dict()
    for key in ("s_user", "s_target", "s_eve"):
        base_doc.pop(key)
    base_doc.pop("M_antennas")
    tasks = [
        (
            base_doc,
            list(manifest.schemes),
            list(manifest.antennas),
            manifest.region,
            manifest.seed,
            r,
            manifest.profile,
        )
        for r in range(manifest.runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_run = list(pool.map(_sweep_one, tasks))
    else:
        per_run = [_sweep_one(t) for t in tasks]

    raw_rows = []
    for run_idx, rows in enumerate(per_run):
        for m, scheme, _idx, status, rate in rows:
            raw_rows.append(
                (m, scheme, run_idx, run_stream_seed(manifest.seed, run_idx), status, rate)
            )

    agg_rows = []
    for m in manifest.antennas:
        for scheme in manifest.schemes:
            vals = np.array(
                [
                    r[5]
                    for r in raw_rows
                    if r[0] == m and r[1] == scheme and not math.isnan(r[5])
                ]
            )
            if vals.size:
                agg_rows.append(
                    (int(m), scheme, float(vals.mean()), float(vals.std()), int(vals.size))
                )
            else:
                agg_rows.append((int(m), scheme, math.nan, math.nan, 0))

    files = {
        "sweep.csv": render_csv(
            ("antennas", "scheme", "mean_rate", "std_rate", "runs"), agg_rows
        ),
        "sweep_raw.csv": render_csv(
            ("antennas", "scheme", "run", "stream_seed", "status", "rate"), raw_rows
        ),
    }
    return files, agg_rows
