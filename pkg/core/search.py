"""Surrogate-driven random search for cross-sections with target eigenfrequencies

Every candidate is a fresh draw from the dataset generator distribution; the
surrogate scores candidates in batches and the incumbent only changes on a
strictly lower MSE. Found polygons are checked against the analytical oracle.
"""
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, field_validator, model_validator

from core.dataset import DatasetSpec, Manifest, polygon_spec, sample_parameters
from core.errors import (
    DegenerateGeometryError,
    FormatError,
    LabelMismatchError,
    ParameterError,
)
from core.geometry import Polygon, PolygonSpec, generate_polygon, section_properties, write_polygon_csv
from core.mechanics import FREQUENCY_LABELS, BeamSpec, oracle_labels
from core.raster import RasterConfig
from core.seeding import SEED_MASK, derive_seed, make_rng

logger = logging.getLogger(__name__)

CAMPAIGN_FILE = "campaign.json"
RESULTS_FILE = "results.csv"
TIMING_FILE = "timing.csv"
TRACES_FILE = "traces.csv"
POLYGON_DIR = "polygons"


class SearchSpace(BaseModel):
    """Candidate distribution; mirrors the generator settings of a dataset"""
    model_config = {"frozen": True}

    n_vertices_range: Tuple[int, int] = (3, 30)
    avg_radius_range: Tuple[float, float] = (24.0, 63.0)
    irregularity: float = 0.4
    spikiness: float = 0.1

    @model_validator(mode="after")
    def _within_generator_bounds(self) -> "SearchSpace":
        lo, hi = self.n_vertices_range
        if not 3 <= lo <= hi:
            raise ValueError(f"n_vertices_range must satisfy 3 <= lo <= hi, got {self.n_vertices_range}")
        r_lo, r_hi = self.avg_radius_range
        if not 0 < r_lo <= r_hi:
            raise ValueError(f"avg_radius_range must satisfy 0 < lo <= hi, got {self.avg_radius_range}")
        for name in ("irregularity", "spikiness"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        return self

    def check_window(self, raster: RasterConfig) -> None:
        """Generator radii reach 2 * avg_radius; the largest must stay inside the raster window"""
        reach = 2 * self.avg_radius_range[1]
        if reach >= raster.world_half_width:
            raise ParameterError(
                f"avg_radius_range upper bound {self.avg_radius_range[1]} mm reaches {reach} mm, "
                f"outside the model window +/-{raster.world_half_width} mm"
            )

    @classmethod
    def from_dataset(cls, spec: DatasetSpec) -> "SearchSpace":
        return cls(
            n_vertices_range=spec.n_vertices_range,
            avg_radius_range=spec.avg_radius_range,
            irregularity=spec.irregularity,
            spikiness=spec.spikiness,
        )


class TargetSpec(BaseModel):
    model_config = {"frozen": True}

    target: Tuple[float, float, float]
    budget: int = 10000
    restarts: int = 10
    seed: int = 0
    sample_id: Optional[int] = None

    @field_validator("target")
    @classmethod
    def _positive_ascending(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if not all(np.isfinite(v) and v > 0 for v in value):
            raise ValueError(f"target frequencies must be positive, got {value}")
        if not value[0] <= value[1] <= value[2]:
            raise ValueError(f"target frequencies must be ascending, got {value}")
        return value

    @model_validator(mode="after")
    def _counts(self) -> "TargetSpec":
        if self.budget < 1 or self.restarts < 1:
            raise ValueError("budget and restarts must be >= 1")
        if not 0 <= self.seed <= SEED_MASK:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return self


class CampaignConfig(BaseModel):
    model_config = {"frozen": True}

    batch_size: int = 256
    trace_every: int = 100
    n_jobs: int = 1
    export_polygons: bool = True

    @model_validator(mode="after")
    def _positive(self) -> "CampaignConfig":
        if self.batch_size < 1 or self.trace_every < 1:
            raise ValueError("batch_size and trace_every must be >= 1")
        return self


@dataclass
class SearchResult:
    target: Tuple[float, float, float]
    restart: int
    polygon: Polygon
    polygon_spec: PolygonSpec
    predicted: Tuple[float, float, float]
    mse: float
    trace: List[Tuple[int, float]]
    steps: int
    skipped: int
    wall_time: float = 0.0


@dataclass
class VerificationReport:
    target: Tuple[float, float, float]
    oracle: Tuple[float, float, float]
    abs_errors: Tuple[float, float, float]
    cumulative_deviation: float
    mape: float

    @classmethod
    def from_frequencies(cls, target: Sequence[float], oracle: Sequence[float]) -> "VerificationReport":
        t = np.asarray(target, dtype=np.float64)
        o = np.asarray(oracle, dtype=np.float64)
        errors = np.abs(t - o)
        return cls(
            target=tuple(t.tolist()),
            oracle=tuple(o.tolist()),
            abs_errors=tuple(errors.tolist()),
            cumulative_deviation=float(errors.sum()),
            mape=float(100.0 * np.mean(errors / t)),
        )


@dataclass
class CampaignReport:
    results: List[SearchResult]
    reports: List[VerificationReport]
    aggregates: Dict[str, float] = field(default_factory=dict)


def restart_seed(target: TargetSpec, restart: int) -> int:
    return derive_seed(target.seed, restart)


def draw_candidate(space: SearchSpace, seed: int) -> PolygonSpec:
    """Candidate generator parameters, a pure function of the seed"""
    n_vertices, avg_radius = sample_parameters(space, seed)
    return polygon_spec(space, n_vertices, avg_radius, seed)


def _check_surrogate(model) -> None:
    if tuple(model.label_names) != FREQUENCY_LABELS:
        raise LabelMismatchError(f"search needs a surrogate for {list(FREQUENCY_LABELS)}, got {list(model.label_names)}")


def random_search(target: TargetSpec, model, space: SearchSpace, restart: int = 0,
                  batch_size: int = 256, trace_every: int = 100) -> SearchResult:
    """Best-of-budget random search scored by the surrogate's MSE in Hz^2"""
    _check_surrogate(model)
    started = time.perf_counter()
    raster = getattr(model, "raster", None)
    if raster is not None:
        space.check_window(raster)
    run_seed = restart_seed(target, restart)
    goal = np.asarray(target.target, dtype=np.float64)

    best: Optional[Tuple[float, PolygonSpec, Polygon, np.ndarray]] = None
    trace: List[Tuple[int, float]] = []
    skipped = 0

    for start in range(0, target.budget, batch_size):
        steps = range(start, min(start + batch_size, target.budget))
        candidates: List[Tuple[int, PolygonSpec, Polygon]] = []
        for step in steps:
            spec = draw_candidate(space, derive_seed(run_seed, step))
            try:
                poly = generate_polygon(spec)
                section_properties(poly)
            except DegenerateGeometryError as e:
                logger.debug(f"Candidate {step} skipped: {e}")
                skipped += 1
                continue
            candidates.append((step, spec, poly))

        scores: Dict[int, Tuple[float, np.ndarray]] = {}
        if candidates:
            predicted = np.asarray(model.predict_polygons([poly for _, _, poly in candidates]))
            mse = np.mean((predicted - goal) ** 2, axis=1)
            scores = {step: (float(mse[i]), predicted[i]) for i, (step, _, _) in enumerate(candidates)}

        by_step = {step: (spec, poly) for step, spec, poly in candidates}
        for step in steps:
            if step in scores and (best is None or scores[step][0] < best[0]):
                spec, poly = by_step[step]
                best = (scores[step][0], spec, poly, scores[step][1])
            if best is not None and (step % trace_every == 0 or step == target.budget - 1):
                trace.append((step, best[0]))

    if skipped:
        logger.warning(f"{skipped} of {target.budget} candidates skipped (restart {restart})")
    if best is None:
        raise DegenerateGeometryError(f"no valid candidate in {target.budget} evaluations")

    mse, spec, poly, predicted = best
    return SearchResult(
        target=target.target,
        restart=restart,
        polygon=poly,
        polygon_spec=spec,
        predicted=tuple(float(v) for v in predicted),
        mse=mse,
        trace=trace,
        steps=target.budget,
        skipped=skipped,
        wall_time=time.perf_counter() - started,
    )


def verify(result: SearchResult, beam: BeamSpec) -> VerificationReport:
    """Oracle frequencies of the found polygon against the target"""
    oracle = oracle_labels([result.polygon], beam, FREQUENCY_LABELS)[0]
    return VerificationReport.from_frequencies(result.target, oracle)


def sample_targets(manifest: Manifest, count: int, seed: int = 0, budget: int = 10000,
                   restarts: int = 10) -> List[TargetSpec]:
    """Target triples taken only from test-split samples"""
    missing = [name for name in FREQUENCY_LABELS if name not in manifest.label_names]
    if missing:
        raise FormatError(f"manifest has no {missing} labels to draw targets from")
    rows = manifest.rows("test")
    if count < 1 or count > len(rows):
        raise ParameterError(f"cannot draw {count} targets from a test split of {len(rows)}")
    picked = rows.iloc[np.sort(make_rng(seed).choice(len(rows), size=count, replace=False))]
    targets = []
    for _, row in picked.iterrows():
        freqs = tuple(float(row[name]) for name in FREQUENCY_LABELS)
        if not all(np.isfinite(freqs)):
            raise FormatError(f"sample {int(row['id'])} has non-finite frequency labels")
        sample_id = int(row["id"])
        targets.append(TargetSpec(target=freqs, budget=budget, restarts=restarts,
                                  seed=derive_seed(seed, sample_id), sample_id=sample_id))
    return targets


def _run_one(target: TargetSpec, index: int, restart: int, model, space: SearchSpace, beam: BeamSpec,
             config: CampaignConfig) -> Tuple[int, int, SearchResult, VerificationReport]:
    result = random_search(target, model, space, restart, config.batch_size, config.trace_every)
    return index, restart, result, verify(result, beam)


def _result_row(index: int, result: SearchResult, report: VerificationReport) -> Dict[str, Any]:
    row: Dict[str, Any] = {"target_index": index, "restart": result.restart}
    for i in range(3):
        row[f"target_f{i + 1}_hz"] = result.target[i]
    row.update({
        "seed": result.polygon_spec.seed,
        "n_vertices": result.polygon_spec.n_vertices,
        "avg_radius_mm": result.polygon_spec.avg_radius,
    })
    for i in range(3):
        row[f"pred_f{i + 1}_hz"] = result.predicted[i]
    for i in range(3):
        row[f"oracle_f{i + 1}_hz"] = report.oracle[i]
    row.update({
        "surrogate_mse": result.mse,
        "mape": report.mape,
        "cumulative_hz": report.cumulative_deviation,
        "steps": result.steps,
        "skipped": result.skipped,
    })
    return row


def run_campaign(targets: Sequence[TargetSpec], model, out_dir: Union[str, Path], space: SearchSpace,
                 beam: BeamSpec, config: CampaignConfig = CampaignConfig()) -> CampaignReport:
    """All restarts of all targets, verified and written as a report directory"""
    if not targets:
        raise ParameterError("campaign needs at least one target")
    _check_surrogate(model)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Campaign over {len(targets)} targets, {sum(t.restarts for t in targets)} runs")

    jobs = [(i, r) for i, t in enumerate(targets) for r in range(t.restarts)]
    outcomes = Parallel(n_jobs=config.n_jobs)(
        delayed(_run_one)(targets[i], i, r, model, space, beam, config) for i, r in jobs
    )
    outcomes = sorted(outcomes, key=lambda o: (o[0], o[1]))
    results = [o[2] for o in outcomes]
    reports = [o[3] for o in outcomes]

    rows = [_result_row(i, res, rep) for i, _, res, rep in outcomes]
    pd.DataFrame(rows).to_csv(out_dir / RESULTS_FILE, index=False, lineterminator="\n")
    pd.DataFrame(
        [{"target_index": i, "restart": r, "wall_time_s": res.wall_time} for i, r, res, _ in outcomes]
    ).to_csv(out_dir / TIMING_FILE, index=False, lineterminator="\n")
    pd.DataFrame(
        [{"target_index": i, "restart": r, "step": step, "best_mse": value}
         for i, r, res, _ in outcomes for step, value in res.trace],
        columns=["target_index", "restart", "step", "best_mse"],
    ).to_csv(out_dir / TRACES_FILE, index=False, lineterminator="\n")

    if config.export_polygons:
        for i, r, res, _ in outcomes:
            write_polygon_csv(res.polygon, out_dir / POLYGON_DIR / f"target_{i}_restart_{r}.csv")

    mapes = np.array([rep.mape for rep in reports])
    aggregates = {
        "runs": len(reports),
        "mean_mape": float(mapes.mean()),
        "median_mape": float(np.median(mapes)),
        "mean_cumulative_hz": float(np.mean([rep.cumulative_deviation for rep in reports])),
        "mean_surrogate_mse": float(np.mean([res.mse for res in results])),
    }
    campaign = {
        "targets": [t.model_dump(mode="json") for t in targets],
        "space": space.model_dump(mode="json"),
        "beam": beam.model_dump(mode="json"),
        "config": config.model_dump(mode="json", exclude={"n_jobs"}),
        "aggregates": aggregates,
    }
    (out_dir / CAMPAIGN_FILE).write_text(json.dumps(campaign, indent=2, sort_keys=True) + "\n")
    logger.info(f"Campaign finished: mean MAPE {aggregates['mean_mape']:.3f}%")
    return CampaignReport(results=results, reports=reports, aggregates=aggregates)
