"""Labeled cross-section datasets: generation, manifests, splits, scaling, ingestion

A dataset directory holds `manifest.csv` (one row per sample), the
`dataset.json` sidecar (full DatasetSpec plus a generation summary) and
`images/beam_<id>.pgm`. Every sample is a pure function of (dataset seed,
index), so generation can run on any number of workers.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, field_validator, model_validator
from sklearn.preprocessing import StandardScaler

from core.errors import (
    DegenerateGeometryError,
    FormatError,
    OutOfFrameError,
    ParameterError,
)
from core.geometry import Polygon, PolygonSpec, generate_polygon, section_properties
from core.mechanics import ALL_LABELS, BeamSpec, label_vector, validate_label_set
from core.raster import RasterConfig, rasterize, read_pgm, stack_images, write_pgm
from core.seeding import SEED_MASK, derive_seed, make_rng

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.csv"
SIDECAR_FILE = "dataset.json"
IMAGE_DIR = "images"
SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.64, 0.16, 0.20)
ORACLE_SOURCE = "oracle"
PENDING_SOURCE = "pending"
MANIFEST_COLUMNS = [
    "id", "seed", "n_vertices", "avg_radius_mm", "image_path",
    *ALL_LABELS,
    "label_source", "split",
]


class DatasetSpec(BaseModel):
    """Everything that fixes the bytes of a generated dataset"""
    model_config = {"frozen": True}

    size: int
    n_vertices_range: Tuple[int, int] = (3, 30)
    avg_radius_range: Tuple[float, float] = (24.0, 63.0)
    irregularity: float = 0.4
    spikiness: float = 0.1
    beam: BeamSpec = BeamSpec()
    raster: RasterConfig = RasterConfig()
    label_set: Tuple[str, ...] = ALL_LABELS
    twist_deg: float = 0.0
    taper_factor: float = 1.0
    oracle_labels: bool = True
    split_ratios: Tuple[float, float, float] = DEFAULT_RATIOS
    retry_budget: int = 8
    seed: int = 0

    @field_validator("size")
    @classmethod
    def _positive_size(cls, value: int) -> int:
        if value <= 0:
            raise ValueError(f"size must be positive, got {value}")
        return value

    @field_validator("irregularity", "spikiness")
    @classmethod
    def _unit_interval(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("irregularity and spikiness must lie in [0, 1]")
        return value

    @field_validator("label_set")
    @classmethod
    def _known_labels(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        return validate_label_set(value)

    @field_validator("split_ratios")
    @classmethod
    def _ratios(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        check_ratios(value)
        return value

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, value: int) -> int:
        if not 0 <= value <= SEED_MASK:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return value

    @model_validator(mode="after")
    def _ranges(self) -> "DatasetSpec":
        lo, hi = self.n_vertices_range
        if not 3 <= lo <= hi:
            raise ValueError(f"n_vertices_range must satisfy 3 <= lo <= hi, got {self.n_vertices_range}")
        r_lo, r_hi = self.avg_radius_range
        if not 0 < r_lo <= r_hi:
            raise ValueError(f"avg_radius_range must satisfy 0 < lo <= hi, got {self.avg_radius_range}")
        if 2 * r_hi >= self.raster.world_half_width:
            raise ValueError(
                f"avg_radius_range upper bound {r_hi} mm can leave the +/-{self.raster.world_half_width} mm window"
            )
        if self.retry_budget < 1:
            raise ValueError("retry_budget must be >= 1")
        return self

    @property
    def is_linear_extrusion(self) -> bool:
        return self.twist_deg == 0.0 and self.taper_factor == 1.0


# twisted and tapered presets carry metadata only and need imported labels
DATASET_PRESETS: Dict[str, Dict[str, Any]] = {
    "slender": dict(size=17501, spikiness=0.1, beam=dict(tip_load=(2000.0, 0.0))),
    "twisted": dict(size=17501, spikiness=0.15, twist_deg=30.0, oracle_labels=False),
    "linear": dict(size=5001, spikiness=0.15),
    "ta50": dict(size=5001, spikiness=0.15, taper_factor=0.5, oracle_labels=False),
    "tw15": dict(size=5001, spikiness=0.15, twist_deg=15.0, oracle_labels=False),
    "tw15ta50": dict(size=5001, spikiness=0.15, twist_deg=15.0, taper_factor=0.5, oracle_labels=False),
    "tw30ta50": dict(size=5001, spikiness=0.15, twist_deg=30.0, taper_factor=0.5, oracle_labels=False),
}


def preset_spec(name: str, **overrides) -> DatasetSpec:
    if name not in DATASET_PRESETS:
        raise ParameterError(f"unknown dataset preset '{name}'; choose from {sorted(DATASET_PRESETS)}")
    return DatasetSpec(**{**DATASET_PRESETS[name], **overrides})


def check_ratios(ratios: Sequence[float]) -> Tuple[float, float, float]:
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ParameterError(f"split ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must sum to 1, got {sum(ratios)}")
    return tuple(float(r) for r in ratios)


@dataclass
class SampleRecord:
    """One generated sample before it becomes a manifest row"""
    id: int
    base_seed: int
    seed: int
    n_vertices: int
    avg_radius_mm: float
    retries: int
    image_path: Optional[str] = None
    labels: Dict[str, float] = field(default_factory=dict)
    failed: bool = False


class GeometryRetryPolicy:
    """Deterministic retry schedule: polygon seed = base seed + attempt"""

    def __init__(self, max_attempts: int = 8):
        self.max_attempts = max_attempts

    def attempt_seeds(self, base_seed: int) -> Iterator[Tuple[int, int]]:
        for attempt in range(self.max_attempts):
            yield attempt, (base_seed + attempt) & SEED_MASK


def sample_parameters(spec, base_seed: int) -> Tuple[int, float]:
    """Vertex count and average radius drawn from spec.n_vertices_range and spec.avg_radius_range"""
    rng = make_rng(base_seed)
    lo, hi = spec.n_vertices_range
    n_vertices = int(rng.integers(lo, hi + 1))
    avg_radius = float(rng.uniform(*spec.avg_radius_range))
    return n_vertices, avg_radius


def polygon_spec(spec, n_vertices: int, avg_radius: float, seed: int) -> PolygonSpec:
    return PolygonSpec(
        n_vertices=n_vertices,
        avg_radius=avg_radius,
        irregularity=spec.irregularity,
        spikiness=spec.spikiness,
        seed=seed,
    )


def _build_sample(spec: DatasetSpec, index: int, out_dir: Path) -> SampleRecord:
    base_seed = derive_seed(spec.seed, index)
    n_vertices, avg_radius = sample_parameters(spec, base_seed)
    policy = GeometryRetryPolicy(spec.retry_budget)

    for attempt, seed in policy.attempt_seeds(base_seed):
        try:
            poly = generate_polygon(polygon_spec(spec, n_vertices, avg_radius, seed))
            section_properties(poly)
            image = rasterize(poly, spec.raster)
            labels = label_vector(poly, spec.beam, spec.label_set) if spec.oracle_labels else None
        except (DegenerateGeometryError, OutOfFrameError) as e:
            logger.warning(f"Sample {index} attempt {attempt} rejected: {e}")
            continue

        rel_path = f"{IMAGE_DIR}/beam_{index}.pgm"
        write_pgm(image, out_dir / rel_path)
        record = SampleRecord(
            id=index, base_seed=base_seed, seed=seed, n_vertices=n_vertices,
            avg_radius_mm=avg_radius, retries=attempt, image_path=rel_path,
        )
        if labels is not None:
            record.labels = dict(zip(spec.label_set, labels.tolist()))
        return record

    logger.error(f"Sample {index} failed after {spec.retry_budget} attempts")
    return SampleRecord(
        id=index, base_seed=base_seed, seed=base_seed, n_vertices=n_vertices,
        avg_radius_mm=avg_radius, retries=spec.retry_budget, failed=True,
    )


class LabelScaler:
    """Per-label standardization fitted on training rows only"""

    def __init__(self, label_names: Sequence[str], scaler: StandardScaler):
        self.label_names = tuple(label_names)
        self._scaler = scaler

    @classmethod
    def fit(cls, labels: np.ndarray, label_names: Sequence[str]) -> "LabelScaler":
        labels = np.asarray(labels, dtype=np.float64)
        if labels.ndim != 2 or labels.shape[0] == 0:
            raise ParameterError("cannot fit a label scaler on an empty split")
        variances = labels.var(axis=0)
        flat = [name for name, var in zip(label_names, variances) if not var > 0]
        if flat:
            raise ParameterError(f"zero-variance labels cannot be standardized: {flat}")
        return cls(label_names, StandardScaler().fit(labels))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LabelScaler":
        mean = np.asarray(data["mean"], dtype=np.float64)
        std = np.asarray(data["std"], dtype=np.float64)
        if mean.shape != std.shape or np.any(std <= 0):
            raise FormatError("label scaler needs matching mean/std with std > 0")
        scaler = StandardScaler()
        scaler.mean_ = mean
        scaler.scale_ = std
        scaler.var_ = std ** 2
        scaler.n_features_in_ = len(mean)
        scaler.n_samples_seen_ = int(data.get("n_samples", 0))
        return cls(data["label_names"], scaler)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label_names": list(self.label_names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "n_samples": int(self._scaler.n_samples_seen_),
        }

    @property
    def mean(self) -> np.ndarray:
        return self._scaler.mean_

    @property
    def std(self) -> np.ndarray:
        return self._scaler.scale_

    def apply(self, labels: np.ndarray) -> np.ndarray:
        return self._scaler.transform(np.atleast_2d(labels))

    def invert(self, scaled: np.ndarray) -> np.ndarray:
        return self._scaler.inverse_transform(np.atleast_2d(scaled))


class Manifest:
    """Manifest table plus the dataset spec and directory it belongs to"""

    def __init__(self, table: pd.DataFrame, spec: DatasetSpec, root: Union[str, Path],
                 generation: Optional[Dict[str, Any]] = None):
        missing = [c for c in MANIFEST_COLUMNS if c not in table.columns]
        if missing:
            raise FormatError(f"manifest is missing columns {missing}")
        if table["id"].duplicated().any():
            raise FormatError("manifest ids must be unique")
        self.table = table[MANIFEST_COLUMNS].sort_values("id").reset_index(drop=True)
        self.spec = spec
        self.root = Path(root)
        self.generation = generation or {}

    def __len__(self) -> int:
        return len(self.table)

    @property
    def label_names(self) -> Tuple[str, ...]:
        return self.spec.label_set

    def rows(self, split: Optional[str] = None) -> pd.DataFrame:
        if split is None:
            return self.table
        if split not in SPLITS:
            raise ParameterError(f"unknown split '{split}'")
        return self.table[self.table["split"] == split]

    def ids(self, split: Optional[str] = None) -> List[int]:
        return self.rows(split)["id"].astype(int).tolist()

    def subset(self, ids: Sequence[int]) -> "Manifest":
        keep = self.table["id"].isin(list(ids))
        return Manifest(self.table[keep].copy(), self.spec, self.root, self.generation)

    def with_splits(self, assignment: Dict[int, str]) -> "Manifest":
        table = self.table.copy()
        table["split"] = table["id"].map(assignment)
        return Manifest(table, self.spec, self.root, self.generation)

    def labels(self, split: Optional[str] = None) -> np.ndarray:
        rows = self.rows(split)
        values = rows[list(self.label_names)].to_numpy(dtype=np.float64)
        bad = ~np.isfinite(values)
        if bad.any():
            row_idx, col_idx = np.nonzero(bad)
            raise FormatError(
                f"non-finite {self.label_names[col_idx[0]]} for sample id {int(rows['id'].iloc[row_idx[0]])}"
                f" ({int(bad.sum())} values); import external labels first"
            )
        return values

    def polygon(self, row: pd.Series) -> Polygon:
        """Regenerate a sample polygon from its recorded seed"""
        return generate_polygon(polygon_spec(self.spec, int(row["n_vertices"]), float(row["avg_radius_mm"]),
                                             int(row["seed"])))

    def polygons(self, split: Optional[str] = None) -> List[Polygon]:
        return [self.polygon(row) for _, row in self.rows(split).iterrows()]

    def images(self, split: Optional[str] = None, raster: Optional[RasterConfig] = None) -> np.ndarray:
        """(N, 1, H, W) float32 images; re-rasterized when raster differs from the dataset's"""
        rows = self.rows(split)
        if len(rows) == 0:
            raise ParameterError(f"split '{split}' is empty")
        if raster is None or raster == self.spec.raster:
            return stack_images(read_pgm(self.root / path) for path in rows["image_path"])
        return stack_images(rasterize(self.polygon(row), raster) for _, row in rows.iterrows())

    def save(self, root: Optional[Union[str, Path]] = None) -> Path:
        root = Path(root) if root is not None else self.root
        root.mkdir(parents=True, exist_ok=True)
        self.table.to_csv(root / MANIFEST_FILE, index=False, lineterminator="\n")
        sidecar = {"spec": self.spec.model_dump(mode="json"), "generation": self.generation}
        (root / SIDECAR_FILE).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        logger.info(f"Manifest with {len(self)} samples written to {root}")
        return root

    @classmethod
    def load(cls, root: Union[str, Path]) -> "Manifest":
        root = Path(root)
        manifest_path, sidecar_path = root / MANIFEST_FILE, root / SIDECAR_FILE
        for path in (manifest_path, sidecar_path):
            if not path.exists():
                raise FileNotFoundError(f"dataset file not found: {path}")
        sidecar = json.loads(sidecar_path.read_text())
        spec = DatasetSpec(**sidecar["spec"])
        table = pd.read_csv(manifest_path, keep_default_na=False, na_values=[""], float_precision="round_trip")
        table["label_source"] = table["label_source"].astype(str)
        table["split"] = table["split"].astype(str)
        bad_splits = sorted(set(table["split"]) - set(SPLITS))
        if bad_splits:
            raise FormatError(f"{manifest_path}: unknown split tags {bad_splits}")
        missing_images = [p for p in table["image_path"] if not (root / p).exists()]
        if missing_images:
            raise FormatError(f"{manifest_path}: {len(missing_images)} images missing, e.g. {missing_images[0]}")
        return cls(table, spec, root, sidecar.get("generation"))


def split_counts(n: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    """Floor each share, then hand out the remainder by largest fractional part."""
    ratios = check_ratios(ratios)
    exact = [r * n for r in ratios]
    counts = [int(math.floor(x + 1e-9)) for x in exact]
    fractions = [x - c for x, c in zip(exact, counts)]
    for i in sorted(range(3), key=lambda i: (-fractions[i], i))[: n - sum(counts)]:
        counts[i] += 1
    if n > 0 and counts[0] == 0:
        donor = max(range(1, 3), key=lambda i: counts[i])
        counts[donor] -= 1
        counts[0] += 1
    return tuple(counts)


def split_dataset(manifest: Manifest, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> Manifest:
    """Seeded shuffle of ids into train/val/test"""
    ids = sorted(manifest.ids())
    counts = split_counts(len(ids), ratios)
    order = make_rng(seed).permutation(len(ids))
    assignment: Dict[int, str] = {}
    start = 0
    for name, count in zip(SPLITS, counts):
        for pos in order[start:start + count]:
            assignment[ids[pos]] = name
        start += count
    logger.info(f"Split {len(ids)} samples as {dict(zip(SPLITS, counts))}")
    return manifest.with_splits(assignment)


class DatasetGenerator:
    """Polygon -> image -> oracle labels -> manifest row, for every index"""

    def __init__(self, spec: DatasetSpec, n_jobs: int = 1):
        self.spec = spec
        self.n_jobs = n_jobs
        logger.info(f"DatasetGenerator initialized for {spec.size} samples (seed {spec.seed})")

    def _row(self, record: SampleRecord, source: str) -> Dict[str, Any]:
        row = {
            "id": record.id,
            "seed": record.seed,
            "n_vertices": record.n_vertices,
            "avg_radius_mm": record.avg_radius_mm,
            "image_path": record.image_path,
            "label_source": source,
            "split": "",
        }
        row.update({name: record.labels.get(name, np.nan) for name in ALL_LABELS})
        return row

    def generate(self, out_dir: Union[str, Path]) -> Manifest:
        spec = self.spec
        if spec.oracle_labels and not spec.is_linear_extrusion:
            raise ParameterError(
                f"oracle labels only exist for linear extrusions (twist_deg={spec.twist_deg}, "
                f"taper_factor={spec.taper_factor}); set oracle_labels: false and use import_external_labels"
            )
        out_dir = Path(out_dir)
        (out_dir / IMAGE_DIR).mkdir(parents=True, exist_ok=True)

        records = Parallel(n_jobs=self.n_jobs)(
            delayed(_build_sample)(spec, i, out_dir) for i in range(spec.size)
        )
        records = sorted(records, key=lambda r: r.id)
        good = [r for r in records if not r.failed]
        failed = [r.id for r in records if r.failed]
        if not good:
            raise DegenerateGeometryError(f"all {spec.size} samples failed geometry checks")

        source = ORACLE_SOURCE if spec.oracle_labels else PENDING_SOURCE
        table = pd.DataFrame([self._row(r, source) for r in good], columns=MANIFEST_COLUMNS)
        generation = {
            "requested": spec.size,
            "generated": len(good),
            "failed_ids": failed,
            "retries": {str(r.id): r.retries for r in good if r.retries},
        }
        manifest = split_dataset(Manifest(table, spec, out_dir, generation), spec.split_ratios, spec.seed)
        manifest.save()
        if failed:
            logger.warning(f"{len(failed)} of {spec.size} samples failed and were skipped")
        logger.info(f"Ingested {len(good)} samples into {out_dir}")
        return manifest


def generate_dataset(spec: DatasetSpec, out_dir: Union[str, Path], n_jobs: int = 1) -> Manifest:
    return DatasetGenerator(spec, n_jobs=n_jobs).generate(out_dir)


def fit_label_scaler(manifest: Manifest, split: str = "train") -> LabelScaler:
    return LabelScaler.fit(manifest.labels(split), manifest.label_names)


def import_external_labels(manifest: Manifest, csv_path: Union[str, Path],
                           source: Optional[str] = None) -> Manifest:
    """Merge externally computed labels (e.g. FEA results) keyed by sample id"""
    csv_path = Path(csv_path)
    external = pd.read_csv(csv_path)
    if "id" not in external.columns:
        raise FormatError(f"{csv_path}: missing 'id' column")
    columns = [c for c in external.columns if c != "id"]
    unknown = [c for c in columns if c not in ALL_LABELS]
    if unknown or not columns:
        raise FormatError(f"{csv_path}: label columns must be a non-empty subset of {list(ALL_LABELS)}, got {columns}")

    values = external[columns].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad_rows = np.nonzero(~np.isfinite(values).all(axis=1))[0]
    if len(bad_rows):
        # +2: header line and 1-based numbering
        raise FormatError(f"{csv_path}: non-finite label value on row {int(bad_rows[0]) + 2}")

    raw_ids = pd.to_numeric(external["id"], errors="coerce").to_numpy(dtype=np.float64)
    bad_ids = np.nonzero(~np.isfinite(raw_ids) | (raw_ids != np.round(raw_ids)))[0]
    if len(bad_ids):
        raise FormatError(f"{csv_path}: id on row {int(bad_ids[0]) + 2} is not an integer")
    ext_ids = pd.Series(raw_ids.astype(np.int64))
    if ext_ids.duplicated().any():
        raise FormatError(f"{csv_path}: duplicate ids {sorted(ext_ids[ext_ids.duplicated()].unique().tolist())}")
    known = set(manifest.ids())
    unknown_ids = sorted(set(ext_ids) - known)
    if unknown_ids:
        raise FormatError(f"{csv_path}: unknown sample ids {unknown_ids}")
    missing_ids = sorted(known - set(ext_ids))
    if missing_ids:
        raise FormatError(f"{csv_path}: missing labels for sample ids {missing_ids}")

    table = manifest.table.copy()
    lookup = pd.DataFrame(values, columns=columns, index=ext_ids.to_numpy())
    for column in columns:
        table[column] = table["id"].map(lookup[column])
    table["label_source"] = source or f"external:{csv_path.name}"

    label_set = tuple(name for name in ALL_LABELS if name in set(manifest.label_names) | set(columns))
    spec = manifest.spec.model_copy(update={"label_set": label_set})
    logger.info(f"Imported {len(columns)} label columns for {len(ext_ids)} samples from {csv_path}")
    return Manifest(table, spec, manifest.root, manifest.generation)
