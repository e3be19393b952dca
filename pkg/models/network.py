"""Surrogate CNN architectures, training, prediction and checkpoints

Networks are trained on standardized labels; every number leaving this module
(predictions, metrics) is back in original label units.
"""
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, field_validator, model_validator

from core.dataset import LabelScaler, Manifest, fit_label_scaler
from core.errors import FormatError, LabelMismatchError, NumericFault, ParameterError, ShapeError, StateError
from core.geometry import Polygon
from core.mechanics import FREQUENCY_LABELS, validate_label_set
from core.raster import ALLOWED_SIZES, RasterConfig, rasterize, stack_images
from core.seeding import make_rng
from models.layers import BatchNorm2d, Conv2d, Flatten, LayerStack, Linear, MaxPool2x2, Mode, ReLU
from models.metrics import Metrics, compute_metrics
from models.optim import AdamState, adam_step, mse_loss

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
HEADER_SUFFIX = ".ckpt.json"
BLOB_SUFFIX = ".ckpt.bin"
HISTORY_COLUMNS = ["epoch", "train_mse", "val_mse"]


class ArchitectureKind(str, Enum):
    CONVNET_EXTENDED = "convnet_extended"
    CONVNET = "convnet"
    FULLY_CONNECTED = "fully_connected"


class ArchitectureConfig(BaseModel):
    model_config = {"frozen": True}

    kind: ArchitectureKind = ArchitectureKind.CONVNET_EXTENDED
    img_size: int = 64
    number_of_labels: int = 3

    @field_validator("img_size")
    @classmethod
    def _divisible_by_four(cls, value: int) -> int:
        if value < 4 or value % 4:
            raise ValueError(f"img_size must be a positive multiple of 4, got {value}")
        return value

    @field_validator("number_of_labels")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("number_of_labels must be >= 1")
        return value


class TrainConfig(BaseModel):
    model_config = {"frozen": True}

    lr: float = 1e-4
    batch_size: int = 100
    max_epochs: int = 60
    patience: int = 10
    seed: int = 0

    @model_validator(mode="after")
    def _positive(self) -> "TrainConfig":
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        return self


# eigenfrequency-only label sets train at a tenth of the default rate
EIGENFREQUENCY_LR = 1e-5


def train_config_for(label_names: Sequence[str], **overrides) -> TrainConfig:
    if "lr" not in overrides and set(label_names) <= set(FREQUENCY_LABELS):
        overrides["lr"] = EIGENFREQUENCY_LR
    return TrainConfig(**overrides)


def _conv_block(in_ch: int, out_ch: int, rng, dtype, pool: bool = False) -> List:
    layers = [Conv2d(in_ch, out_ch, rng, dtype=dtype), BatchNorm2d(out_ch, dtype=dtype), ReLU()]
    if pool:
        layers.append(MaxPool2x2())
    return layers


def build_stack(arch: ArchitectureConfig, seed: int = 0, dtype=np.float32) -> LayerStack:
    rng = make_rng(seed)
    size = arch.img_size
    layers: List = []
    if arch.kind is ArchitectureKind.FULLY_CONNECTED:
        widths = [size * size, 1024, 512, 256]
        layers.append(Flatten())
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            layers += [Linear(w_in, w_out, rng, dtype=dtype), ReLU()]
        layers.append(Linear(widths[-1], arch.number_of_labels, rng, dtype=dtype))
        return LayerStack(layers, (1, size, size))

    if arch.kind is ArchitectureKind.CONVNET_EXTENDED:
        layers += _conv_block(1, 32, rng, dtype) + _conv_block(32, 32, rng, dtype) + _conv_block(32, 32, rng, dtype)
    else:
        layers += _conv_block(1, 32, rng, dtype)
    layers += _conv_block(32, 64, rng, dtype, pool=True) + _conv_block(64, 32, rng, dtype, pool=True)
    flat = 32 * (size // 4) * (size // 4)
    layers += [Flatten(), Linear(flat, 1024, rng, dtype=dtype), ReLU(), Linear(1024, arch.number_of_labels, rng, dtype=dtype)]
    return LayerStack(layers, (1, size, size))


class SurrogateModel:
    """Layer stack plus the label scaling and raster it was trained with"""

    def __init__(self, arch: ArchitectureConfig, stack: LayerStack, label_names: Sequence[str],
                 scaler: Optional[LabelScaler] = None, raster: Optional[RasterConfig] = None,
                 train_seed: Optional[int] = None):
        label_names = validate_label_set(label_names)
        if len(label_names) != arch.number_of_labels:
            raise ParameterError(f"{len(label_names)} label names for {arch.number_of_labels} outputs")
        self.arch = arch
        self.stack = stack
        self.label_names = label_names
        self.scaler = scaler
        self.raster = raster
        self.train_seed = train_seed
        self.adam_state: Optional[AdamState] = None

    def _require_scaler(self) -> LabelScaler:
        if self.scaler is None:
            raise StateError("model has no label scaler; train it or load a checkpoint first")
        return self.scaler

    def predict(self, images: np.ndarray) -> np.ndarray:
        """(N, 1, H, W) or (H, W) images -> (N, L) labels in original units"""
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 2:
            images = images[None, None]
        expected = (1, self.arch.img_size, self.arch.img_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ShapeError(f"expected images of shape (N, {expected}), got {images.shape}")
        scaled = self.stack.forward(images, Mode.EVAL)
        return self._require_scaler().invert(scaled.astype(np.float64))

    def predict_polygons(self, polygons: Sequence[Polygon]) -> np.ndarray:
        if self.raster is None:
            raise StateError("model has no raster configuration for polygon input")
        return self.predict(stack_images(rasterize(poly, self.raster) for poly in polygons))

    def predict_manifest(self, manifest: Manifest, split: Optional[str] = None) -> np.ndarray:
        return self.predict(manifest.images(split, self.raster))

    def zero_output_layer(self) -> None:
        head = self.stack.layers[-1]
        head.weight[...] = 0
        head.bias[...] = 0


def build(arch: ArchitectureConfig, label_names: Optional[Sequence[str]] = None, seed: int = 0) -> SurrogateModel:
    if label_names is None:
        label_names = FREQUENCY_LABELS
    model = SurrogateModel(arch, build_stack(arch, seed), label_names, train_seed=seed)
    if arch.img_size in ALLOWED_SIZES:
        model.raster = RasterConfig(img_size=arch.img_size)
    logger.info(f"Built {arch.kind.value} for {arch.img_size}px images with {arch.number_of_labels} outputs")
    return model


def _check_labels(model: SurrogateModel, manifest: Manifest) -> None:
    if tuple(model.label_names) != tuple(manifest.label_names):
        raise LabelMismatchError(
            f"model labels {list(model.label_names)} do not match manifest labels {list(manifest.label_names)}"
        )


def fit_arrays(model: SurrogateModel, x_train: np.ndarray, y_train: np.ndarray,
               x_val: np.ndarray, y_val: np.ndarray, cfg: TrainConfig) -> pd.DataFrame:
    """Minibatch Adam on standardized labels with early stopping on validation MSE"""
    if len(x_train) == 0 or len(x_val) == 0:
        raise ParameterError("training needs non-empty train and val splits")
    scaler = model.scaler
    if scaler is None:
        scaler = model.scaler = LabelScaler.fit(y_train, model.label_names)
    x_train = np.asarray(x_train, dtype=np.float32)
    x_val = np.asarray(x_val, dtype=np.float32)
    t_train = scaler.apply(y_train).astype(np.float32)
    t_val = scaler.apply(y_val).astype(np.float32)

    stack = model.stack
    params = stack.parameters()
    state = AdamState(lr=cfg.lr)
    rng = make_rng(cfg.seed)
    n = len(x_train)

    best_val = np.inf
    best_arrays = {k: v.copy() for k, v in stack.state_arrays().items()}
    stale = 0
    history: List[Dict[str, float]] = []

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for batch, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                out = stack.forward(x_train[idx], Mode.TRAIN)
                loss, grad = mse_loss(out, t_train[idx])
                if not np.isfinite(loss):
                    raise NumericFault("non-finite loss")
                stack.backward(grad)
                adam_step(params, stack.gradients(), state)
            except NumericFault as e:
                logger.error(f"Training diverged at epoch {epoch}, batch {batch} (lr={cfg.lr}): {e}")
                raise NumericFault(f"epoch {epoch}, batch {batch}, lr {cfg.lr}: {e}") from e
            total += loss * len(idx)

        val_mse, _ = mse_loss(stack.forward(x_val, Mode.EVAL), t_val)
        history.append({"epoch": epoch, "train_mse": total / n, "val_mse": val_mse})
        logger.debug(f"Epoch {epoch}: train_mse={total / n:.6g} val_mse={val_mse:.6g}")

        if val_mse < best_val:
            best_val, stale = val_mse, 0
            best_arrays = {k: v.copy() for k, v in stack.state_arrays().items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info(f"Early stop after epoch {epoch}; best val_mse {best_val:.6g}")
                break

    for name, array in stack.state_arrays().items():
        np.copyto(array, best_arrays[name])
    model.adam_state = state
    model.train_seed = cfg.seed
    return pd.DataFrame(history, columns=HISTORY_COLUMNS)


def train(model: SurrogateModel, manifest: Manifest, cfg: TrainConfig) -> Tuple[SurrogateModel, pd.DataFrame]:
    """Train on the manifest's train split, early-stopping on its val split"""
    _check_labels(model, manifest)
    for split in ("train", "val"):
        if len(manifest.rows(split)) == 0:
            raise ParameterError(f"manifest split '{split}' is empty")
    base = manifest.spec.raster
    model.raster = RasterConfig(img_size=model.arch.img_size, world_half_width=base.world_half_width,
                                supersample=base.supersample)
    if model.scaler is None:
        model.scaler = fit_label_scaler(manifest, "train")

    logger.info(f"Training {model.arch.kind.value} on {len(manifest.rows('train'))} samples (lr={cfg.lr})")
    history = fit_arrays(
        model,
        manifest.images("train", model.raster), manifest.labels("train"),
        manifest.images("val", model.raster), manifest.labels("val"),
        cfg,
    )
    return model, history


def predict(model: SurrogateModel, image: np.ndarray) -> np.ndarray:
    return model.predict(image)


def predictions_frame(model, manifest: Manifest, split: str) -> pd.DataFrame:
    """Per-sample truth and prediction columns for one split"""
    _check_labels(model, manifest)
    y_true = manifest.labels(split)
    y_pred = model.predict_manifest(manifest, split)
    frame = pd.DataFrame({"id": manifest.ids(split)})
    for j, name in enumerate(model.label_names):
        frame[f"true_{name}"] = y_true[:, j]
        frame[f"pred_{name}"] = y_pred[:, j]
    return frame


def evaluate(model, manifest: Manifest, split: str = "test") -> Metrics:
    """Metrics in original label units; works for any model exposing predict_manifest"""
    _check_labels(model, manifest)
    if len(manifest.rows(split)) == 0:
        raise ParameterError(f"manifest split '{split}' is empty")
    metrics = compute_metrics(manifest.labels(split), model.predict_manifest(manifest, split), model.label_names)
    logger.info(f"Evaluated on {split}: MAPE {metrics.mape:.3f}%")
    return metrics


def write_history(history: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history.to_csv(path, index=False, lineterminator="\n")
    return path


def _checkpoint_paths(path: Union[str, Path]) -> Tuple[Path, Path]:
    name = str(path)
    for suffix in (HEADER_SUFFIX, BLOB_SUFFIX):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return Path(name + HEADER_SUFFIX), Path(name + BLOB_SUFFIX)


def save_checkpoint(model: SurrogateModel, path: Union[str, Path], include_optimizer: bool = True) -> Path:
    """Header JSON plus a little-endian float32 blob in declared layer order"""
    header_path, blob_path = _checkpoint_paths(path)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    arrays = model.stack.state_arrays()
    chunks = [a.astype("<f4").ravel() for a in arrays.values()]

    adam = None
    state = model.adam_state if include_optimizer else None
    if state is not None and state.step > 0:
        names = list(model.stack.parameters())
        adam = {"step": state.step, "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
                "eps": state.eps, "names": names}
        chunks += [state.m[n].astype("<f4").ravel() for n in names]
        chunks += [state.v[n].astype("<f4").ravel() for n in names]

    header = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": model.arch.model_dump(mode="json"),
        "label_names": list(model.label_names),
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "raster": model.raster.model_dump(mode="json") if model.raster is not None else None,
        "train_seed": model.train_seed,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "adam": adam,
    }
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    blob_path.write_bytes(np.concatenate(chunks).tobytes())
    logger.info(f"Checkpoint written to {header_path}")
    return header_path


def load_checkpoint(path: Union[str, Path]) -> SurrogateModel:
    header_path, blob_path = _checkpoint_paths(path)
    for p in (header_path, blob_path):
        if not p.exists():
            raise FileNotFoundError(f"checkpoint file not found: {p}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{header_path}: invalid JSON header: {e}") from e
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{header_path}: unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")

    arch = ArchitectureConfig(**header["architecture"])
    model = SurrogateModel(
        arch,
        build_stack(arch),
        header["label_names"],
        scaler=LabelScaler.from_dict(header["scaler"]) if header.get("scaler") else None,
        raster=RasterConfig(**header["raster"]) if header.get("raster") else None,
        train_seed=header.get("train_seed"),
    )

    arrays = model.stack.state_arrays()
    declared = [(a["name"], tuple(a["shape"])) for a in header["arrays"]]
    if declared != [(k, v.shape) for k, v in arrays.items()]:
        raise FormatError(f"{header_path}: array layout does not match a {arch.kind.value} network")

    adam = header.get("adam")
    param_shapes = [p.shape for p in model.stack.parameters().values()]
    expected = sum(int(np.prod(s)) for _, s in declared)
    if adam is not None:
        expected += 2 * sum(int(np.prod(s)) for s in param_shapes)

    blob = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    if blob.size != expected:
        raise FormatError(f"{blob_path}: blob holds {blob.size} floats, header declares {expected}")

    offset = 0

    def take(shape) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        chunk = blob[offset:offset + count].reshape(shape)
        offset += count
        return chunk

    for name, array in arrays.items():
        np.copyto(array, take(array.shape))
    if adam is not None:
        state = AdamState(lr=adam["lr"], beta1=adam["beta1"], beta2=adam["beta2"], eps=adam["eps"], step=adam["step"])
        params = model.stack.parameters()
        for name in adam["names"]:
            state.m[name] = take(params[name].shape).astype(np.float32)
        for name in adam["names"]:
            state.v[name] = take(params[name].shape).astype(np.float32)
        model.adam_state = state
    logger.info(f"Checkpoint loaded from {header_path}")
    return model
