"""Analytical labels wrapped in the surrogate interface

Used wherever a trained network would be: evaluation wiring checks and
closed-loop searches. It predicts from polygons, never from pixels.
"""
import logging
from typing import Optional, Sequence

import numpy as np

from core.dataset import Manifest
from core.errors import StateError
from core.geometry import Polygon
from core.mechanics import FREQUENCY_LABELS, BeamSpec, oracle_labels, validate_label_set

logger = logging.getLogger(__name__)


class OracleSurrogate:
    def __init__(self, beam: BeamSpec, label_names: Sequence[str] = FREQUENCY_LABELS):
        self.beam = beam
        self.label_names = validate_label_set(label_names)
        logger.info(f"OracleSurrogate initialized for {list(self.label_names)}")

    def predict(self, images: np.ndarray) -> np.ndarray:
        raise StateError("the oracle surrogate predicts from polygons; use predict_polygons")

    def predict_polygons(self, polygons: Sequence[Polygon]) -> np.ndarray:
        return oracle_labels(polygons, self.beam, self.label_names)

    def predict_manifest(self, manifest: Manifest, split: Optional[str] = None) -> np.ndarray:
        return self.predict_polygons(manifest.polygons(split))
