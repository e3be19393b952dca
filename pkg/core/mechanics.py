"""Euler-Bernoulli ground truth for linearly extruded cantilevers

Geometry arrives in mm; everything here runs in SI. Axis convention: i_x
(integral of y^2 dA) resists bending along y, so the load component along the
principal x-axis pairs with i_yp and the component along y_p with i_xp.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, field_validator

from core.errors import ParameterError
from core.geometry import Polygon, PrincipalSection, principal_axes, section_properties

logger = logging.getLogger(__name__)

MM_TO_M = 1e-3
MM2_TO_M2 = 1e-6
MM4_TO_M4 = 1e-12


class LabelName(str, Enum):
    """Label columns in their fixed order"""
    AREA = "area_mm2"
    VOLUME = "volume_mm3"
    MAX_DEFLECTION = "max_deflection_mm"
    F1 = "f1_hz"
    F2 = "f2_hz"
    F3 = "f3_hz"


ALL_LABELS: Tuple[str, ...] = tuple(label.value for label in LabelName)
FREQUENCY_LABELS: Tuple[str, ...] = (LabelName.F1.value, LabelName.F2.value, LabelName.F3.value)


class BendingAxis(str, Enum):
    """Principal direction a mode deflects along"""
    X_P = "x_p"  # stiffness i_yp
    Y_P = "y_p"  # stiffness i_xp


class Material(BaseModel):
    model_config = {"frozen": True}

    youngs_modulus: float = 70e9
    density: float = 2700.0

    @field_validator("youngs_modulus", "density")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("material constants must be positive")
        return value


class BeamSpec(BaseModel):
    """Cantilever length (m), material and transverse tip load (N)"""
    model_config = {"frozen": True}

    length: float = 1.0
    material: Material = Material()
    tip_load: Tuple[float, float] = (1750.0, 0.0)

    @field_validator("length")
    @classmethod
    def _positive_length(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("length must be positive")
        return value

    @field_validator("tip_load")
    @classmethod
    def _finite_load(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("tip load must be finite")
        return value


@dataclass(frozen=True)
class CharacteristicRoots:
    beta: Tuple[float, ...]


@dataclass(frozen=True)
class Deflection:
    magnitude: float
    components: Tuple[float, float]  # along x_p, y_p


@dataclass(frozen=True)
class ModalResult:
    frequencies: Tuple[float, float, float]
    axis_tags: Tuple[BendingAxis, BendingAxis, BendingAxis]


def characteristic(beta: float) -> float:
    return math.cosh(beta) * math.cos(beta) + 1.0


@lru_cache(maxsize=32)
def beta_roots(k: int) -> CharacteristicRoots:
    """First k positive roots of cosh(b) cos(b) + 1 = 0 by bisection.

    Root n lies in [(n-1) pi, n pi]; bisection runs on cos(b) + 1/cosh(b),
    which has the same roots and stays well scaled.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")

    def g(b: float) -> float:
        return math.cos(b) + 1.0 / math.cosh(b)

    roots: List[float] = []
    for n in range(1, k + 1):
        lo, hi = (n - 1) * math.pi, n * math.pi
        g_lo = g(lo)
        while True:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            g_mid = g(mid)
            if g_mid == 0.0:
                lo = hi = mid
                break
            if (g_mid > 0) == (g_lo > 0):
                lo, g_lo = mid, g_mid
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    return CharacteristicRoots(beta=tuple(roots))


def tip_deflection(beam: BeamSpec, sec: PrincipalSection) -> Deflection:
    """Tip deflection F L^3 / (3 E I) resolved in the principal frame (m)"""
    fx, fy = beam.tip_load
    if fx == 0.0 and fy == 0.0:
        return Deflection(magnitude=0.0, components=(0.0, 0.0))

    c, s = math.cos(sec.theta_p), math.sin(sec.theta_p)
    f1 = fx * c + fy * s
    f2 = -fx * s + fy * c

    e = beam.material.youngs_modulus
    l3 = beam.length ** 3
    d1 = f1 * l3 / (3 * e * sec.i_yp * MM4_TO_M4)
    d2 = f2 * l3 / (3 * e * sec.i_xp * MM4_TO_M4)
    return Deflection(magnitude=math.hypot(d1, d2), components=(d1, d2))


def eigenfrequencies(beam: BeamSpec, sec: PrincipalSection, area: float) -> ModalResult:
    """Lowest three bending frequencies (Hz) over both principal planes"""
    lam = beam.material.density * area * MM2_TO_M2
    betas = beta_roots(3).beta
    e = beam.material.youngs_modulus

    candidates = []
    for beta in betas:
        for inertia, axis in ((sec.i_xp, BendingAxis.Y_P), (sec.i_yp, BendingAxis.X_P)):
            omega_scale = math.sqrt(e * inertia * MM4_TO_M4 / lam)
            freq = beta ** 2 / (2 * math.pi * beam.length ** 2) * omega_scale
            candidates.append((freq, axis))

    order = np.argsort([f for f, _ in candidates], kind="stable")[:3]
    picked = [candidates[i] for i in order]
    return ModalResult(
        frequencies=tuple(f for f, _ in picked),
        axis_tags=tuple(a for _, a in picked),
    )


def validate_label_set(label_set: Sequence[str]) -> Tuple[str, ...]:
    """Known, non-empty, duplicate-free labels returned in canonical order."""
    unknown = [name for name in label_set if name not in ALL_LABELS]
    if unknown:
        raise ParameterError(f"unknown labels {unknown}; choose from {list(ALL_LABELS)}")
    if not label_set or len(set(label_set)) != len(label_set):
        raise ParameterError("label set must be non-empty without duplicates")
    return tuple(name for name in ALL_LABELS if name in label_set)


def label_vector(poly: Polygon, beam: BeamSpec, label_set: Sequence[str] = ALL_LABELS) -> np.ndarray:
    """Oracle labels for one cross-section, in canonical label order"""
    names = validate_label_set(label_set)
    props = section_properties(poly)
    sec = principal_axes(props)

    values = {
        LabelName.AREA.value: props.area,
        LabelName.VOLUME.value: props.area * beam.length / MM_TO_M,
    }
    if LabelName.MAX_DEFLECTION.value in names:
        values[LabelName.MAX_DEFLECTION.value] = tip_deflection(beam, sec).magnitude / MM_TO_M
    if any(name in FREQUENCY_LABELS for name in names):
        modal = eigenfrequencies(beam, sec, props.area)
        values.update(zip(FREQUENCY_LABELS, modal.frequencies))
    return np.array([values[name] for name in names], dtype=np.float64)


def oracle_labels(polygons: Sequence[Polygon], beam: BeamSpec,
                  label_set: Sequence[str] = ALL_LABELS) -> np.ndarray:
    """(N, len(label_set)) oracle labels for a batch of cross-sections"""
    names = validate_label_set(label_set)
    if not polygons:
        return np.zeros((0, len(names)), dtype=np.float64)
    return np.stack([label_vector(poly, beam, names) for poly in polygons])
