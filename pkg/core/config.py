"""Run configuration: one YAML/JSON document parsed into pydantic sections"""
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import yaml
from pydantic import BaseModel, model_validator

from core.dataset import DatasetSpec, preset_spec
from core.errors import FormatError, ParameterError
from core.experiments import ExperimentConfig
from core.mechanics import ALL_LABELS, FREQUENCY_LABELS, BeamSpec
from core.search import CampaignConfig, SearchSpace, TargetSpec
from core.seeding import derive_seed
from models.network import ArchitectureConfig, TrainConfig, train_config_for

logger = logging.getLogger(__name__)

# Config file location
BEAM_CONFIG = os.getenv(
    "BEAM_CONFIG",
    "config.yaml"
)


class SearchSection(BaseModel):
    """Targets either listed explicitly or drawn from a dataset's test split"""
    model_config = {"frozen": True}

    space: Optional[SearchSpace] = None
    campaign: CampaignConfig = CampaignConfig()
    targets: List[TargetSpec] = []
    n_targets: int = 10
    budget: int = 10000
    restarts: int = 10
    seed: int = 0


class RunConfig(BaseModel):
    model_config = {"frozen": True}

    preset: Optional[str] = None
    dataset: Optional[DatasetSpec] = None
    architecture: ArchitectureConfig = ArchitectureConfig()
    train: TrainConfig = TrainConfig()
    search: SearchSection = SearchSection()
    experiment: ExperimentConfig = ExperimentConfig()
    n_jobs: int = 1
    # set when the document fixes train.lr itself
    pinned_lr: bool = False

    @model_validator(mode="before")
    @classmethod
    def _resolve_sections(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        preset = data.get("preset")
        if preset is not None:
            data["dataset"] = preset_spec(preset, **(data.get("dataset") or {}))
        dataset = data.get("dataset")
        label_set = FREQUENCY_LABELS
        if isinstance(dataset, DatasetSpec):
            label_set = dataset.label_set
        elif isinstance(dataset, dict):
            label_set = dataset.get("label_set", ALL_LABELS)
        train = data.get("train")
        data.setdefault("pinned_lr", isinstance(train, TrainConfig) or "lr" in (train or {}))
        if train is None or isinstance(train, dict):
            data["train"] = train_config_for(label_set, **(train or {}))
        arch = data.get("architecture")
        if arch is None or isinstance(arch, dict):
            data["architecture"] = {"number_of_labels": len(label_set), **(arch or {})}
        return data

    @property
    def beam(self) -> BeamSpec:
        return self.dataset.beam if self.dataset is not None else BeamSpec()

    def train_config(self, label_names: Sequence[str]) -> TrainConfig:
        """Training settings for a manifest; an unpinned lr follows its label set"""
        if self.pinned_lr:
            return self.train
        return train_config_for(label_names, **self.train.model_dump(exclude={"lr"}))

    def require_dataset(self) -> DatasetSpec:
        if self.dataset is None:
            raise ParameterError("configuration has no dataset section or preset")
        return self.dataset

    def search_space(self) -> SearchSpace:
        if self.search.space is not None:
            return self.search.space
        if self.dataset is not None:
            return SearchSpace.from_dataset(self.dataset)
        return SearchSpace()


def read_document(path: Union[str, Path]) -> Dict[str, Any]:
    """YAML or JSON (a YAML subset) mapping from a file"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise FormatError(f"{path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise FormatError(f"{path}: top level must be a mapping")
    return data


def load_config(path: Optional[Union[str, Path]] = None, seed: Optional[int] = None) -> RunConfig:
    path = Path(path or BEAM_CONFIG)
    config = RunConfig(**read_document(path))
    logger.info(f"Configuration loaded from {path}")
    return override_seed(config, seed) if seed is not None else config


def override_seed(config: RunConfig, seed: int) -> RunConfig:
    """Replace every seed in the configuration"""
    update: Dict[str, Any] = {
        "train": config.train.model_copy(update={"seed": seed}),
        "search": config.search.model_copy(update={
            "seed": seed,
            "targets": [t.model_copy(update={"seed": derive_seed(seed, i)}) for i, t in enumerate(config.search.targets)],
        }),
        "experiment": config.experiment.model_copy(
            update={"seeds": tuple(seed + i for i in range(len(config.experiment.seeds)))}
        ),
    }
    if config.dataset is not None:
        update["dataset"] = config.dataset.model_copy(update={"seed": seed})
    return config.model_copy(update=update)
