"""Experiment harnesses producing plot-ready tables

data_efficiency   test MAPE against training-set size over several seeds
resolution        test MAPE against image size, same polygons
analytical_compare per-sample analytical vs model error against dataset labels
throughput        batched prediction speed (reported, never asserted)
"""
import logging
import time
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, field_validator

from core.dataset import DEFAULT_RATIOS, Manifest, split_counts
from core.errors import ParameterError
from core.raster import ALLOWED_SIZES, RasterConfig, rasterize, stack_images
from core.seeding import derive_seed, make_rng
from models.network import ArchitectureConfig, TrainConfig, build, evaluate, train
from models.oracle import OracleSurrogate

logger = logging.getLogger(__name__)


class ExperimentKind(str, Enum):
    DATA_EFFICIENCY = "data_efficiency"
    RESOLUTION = "resolution"
    ANALYTICAL_COMPARE = "analytical_compare"
    THROUGHPUT = "throughput"


class ExperimentConfig(BaseModel):
    model_config = {"frozen": True}

    kind: ExperimentKind = ExperimentKind.DATA_EFFICIENCY
    sizes: Tuple[int, ...] = (80, 250, 1000, 5000)
    seeds: Tuple[int, ...] = (0, 1, 2, 3)
    img_sizes: Tuple[int, ...] = (32, 64)
    batch_sizes: Tuple[int, ...] = (1, 10, 100)
    split: str = "test"

    @field_validator("sizes", "seeds", "batch_sizes")
    @classmethod
    def _non_empty(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(v < 0 for v in value):
            raise ValueError("experiment ladders must be non-empty and non-negative")
        return value

    @field_validator("img_sizes")
    @classmethod
    def _known_sizes(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        bad = [v for v in value if v not in ALLOWED_SIZES]
        if not value or bad:
            raise ValueError(f"img_sizes must be drawn from {ALLOWED_SIZES}, got {value}")
        return value


def _train_and_score(manifest: Manifest, arch: ArchitectureConfig, cfg: TrainConfig, seed: int) -> Dict[str, float]:
    model = build(arch, manifest.label_names, seed=seed)
    model, history = train(model, manifest, cfg.model_copy(update={"seed": seed}))
    metrics = evaluate(model, manifest, "test")
    return {"test_mape": metrics.mape, "test_mse": metrics.mse, "epochs": len(history)}


def ladder_subset(manifest: Manifest, size: int, seed: int) -> Manifest:
    """0.64*size train and 0.16*size val drawn from train+val; test split untouched"""
    n_train, n_val, _ = split_counts(size, DEFAULT_RATIOS)
    pool = sorted(manifest.ids("train") + manifest.ids("val"))
    if n_train + n_val > len(pool):
        raise ParameterError(f"size {size} needs {n_train + n_val} train/val samples, dataset has {len(pool)}")
    if n_val == 0:
        raise ParameterError(f"size {size} leaves no validation samples")
    order = make_rng(derive_seed(seed, size)).permutation(len(pool))
    assignment = {pool[i]: "train" for i in order[:n_train]}
    assignment.update({pool[i]: "val" for i in order[n_train:n_train + n_val]})
    assignment.update({i: "test" for i in manifest.ids("test")})
    return manifest.subset(list(assignment)).with_splits(assignment)


def summarize(runs: pd.DataFrame, key: str) -> pd.DataFrame:
    grouped = runs.groupby(key)["test_mape"]
    return pd.DataFrame({
        key: grouped.median().index,
        "median_mape": grouped.median().to_numpy(),
        "mean_mape": grouped.mean().to_numpy(),
        "min_mape": grouped.min().to_numpy(),
        "max_mape": grouped.max().to_numpy(),
        "runs": grouped.count().to_numpy(),
    })


def data_efficiency(manifest: Manifest, arch: ArchitectureConfig, cfg: TrainConfig,
                    sizes: Sequence[int], seeds: Sequence[int]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """One row per (size, seed), plus per-size aggregates over seeds"""
    rows: List[Dict] = []
    for size in sizes:
        for seed in seeds:
            subset = ladder_subset(manifest, size, seed)
            logger.info(f"Data efficiency: size {size}, seed {seed}")
            rows.append({
                "size": size, "seed": seed,
                "n_train": len(subset.rows("train")), "n_val": len(subset.rows("val")),
                **_train_and_score(subset, arch, cfg, seed),
            })
    runs = pd.DataFrame(rows)
    return runs, summarize(runs, "size")


def resolution(manifest: Manifest, arch: ArchitectureConfig, cfg: TrainConfig,
               img_sizes: Sequence[int], seeds: Sequence[int]) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Same polygons re-rasterized at each image size"""
    rows: List[Dict] = []
    for img_size in img_sizes:
        for seed in seeds:
            logger.info(f"Resolution: {img_size}px, seed {seed}")
            sized = arch.model_copy(update={"img_size": img_size})
            rows.append({"img_size": img_size, "seed": seed, **_train_and_score(manifest, sized, cfg, seed)})
    runs = pd.DataFrame(rows)
    return runs, summarize(runs, "img_size")


def analytical_compare(manifest: Manifest, model, split: str = "test") -> pd.DataFrame:
    """Per-sample, per-label percent error of the closed-form oracle and of the model"""
    truth = manifest.labels(split)
    analytical = OracleSurrogate(manifest.spec.beam, manifest.label_names).predict_manifest(manifest, split)
    predicted = model.predict_manifest(manifest, split)
    ids = manifest.ids(split)
    rows = []
    for j, name in enumerate(manifest.label_names):
        for i, sample_id in enumerate(ids):
            y = truth[i, j]
            rows.append({
                "id": sample_id,
                "label": name,
                "truth": y,
                "analytical": analytical[i, j],
                "model": predicted[i, j],
                "analytical_pct_error": 100.0 * abs(analytical[i, j] - y) / abs(y),
                "model_pct_error": 100.0 * abs(predicted[i, j] - y) / abs(y),
            })
    return pd.DataFrame(rows)


def throughput(model, manifest: Manifest, batch_sizes: Sequence[int], split: str = "test") -> pd.DataFrame:
    """Images per second through predict for each batch size"""
    raster = model.raster or RasterConfig()
    images = stack_images(rasterize(poly, raster) for poly in manifest.polygons(split))
    rows = []
    for batch_size in batch_sizes:
        if batch_size < 1:
            raise ParameterError("batch sizes must be >= 1")
        started = time.perf_counter()
        for start in range(0, len(images), batch_size):
            model.predict(images[start:start + batch_size])
        elapsed = time.perf_counter() - started
        rows.append({
            "batch_size": batch_size,
            "images": len(images),
            "seconds": elapsed,
            "images_per_s": len(images) / elapsed if elapsed > 0 else np.inf,
        })
        logger.info(f"Throughput at batch {batch_size}: {rows[-1]['images_per_s']:.1f} images/s")
    return pd.DataFrame(rows)
