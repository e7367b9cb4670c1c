"""
Data models for wavelet sub-bands and scan orders.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict

import numpy as np

from utils.errors import DimensionError

if TYPE_CHECKING:
    from services.numerics import Tensor


class SubBandKind(Enum):
    """Wavelet sub-band kinds.

    LH is the horizontal high-pass (vertical-edge detail), HL the vertical
    high-pass (horizontal-edge detail).
    """
    LL = "ll"
    LH = "lh"
    HL = "hl"
    HH = "hh"


class ScanMode(Enum):
    """How the SSM branch turns feature maps into sequences."""
    AFSM = "afsm"          # per-sub-band frequency-adaptive orders
    CROSS2D = "cross2d"    # four-direction raster scan of the undecomposed map


@dataclass
class SubBands:
    """One DWT level: four half-resolution tensors."""
    ll: 'Tensor'
    lh: 'Tensor'
    hl: 'Tensor'
    hh: 'Tensor'
    level: int = 1

    def __post_init__(self):
        shapes = {tuple(band.shape) for band in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise DimensionError(f"sub-bands must share one shape, got {sorted(shapes)}")
        if self.level < 1:
            raise DimensionError(f"level must be positive, got {self.level}")

    @property
    def shape(self):
        return self.ll.shape

    def get(self, kind: SubBandKind) -> 'Tensor':
        return getattr(self, kind.value)

    def as_dict(self) -> Dict[SubBandKind, 'Tensor']:
        return {kind: self.get(kind) for kind in SubBandKind}


@dataclass
class ScanOrder:
    """A traversal of an h x w grid: ``indices[t]`` is the row-major position visited at step t."""
    indices: np.ndarray
    h: int
    w: int
    name: str = field(default="custom")

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise DimensionError(f"scan extents must be positive, got {self.h}x{self.w}")
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.shape != (self.h * self.w,):
            raise DimensionError(
                f"scan order over {self.h}x{self.w} needs {self.h * self.w} indices, got {self.indices.shape}"
            )
        if not self.is_bijection():
            raise DimensionError(f"scan order over {self.h}x{self.w} must visit every position exactly once")

    @property
    def length(self) -> int:
        return self.h * self.w

    def is_bijection(self) -> bool:
        seen = np.zeros(self.length, dtype=bool)
        in_range = (self.indices >= 0) & (self.indices < self.length)
        if not in_range.all():
            return False
        seen[self.indices] = True
        return bool(seen.all())

    def reversed(self) -> 'ScanOrder':
        return ScanOrder(self.indices[::-1].copy(), self.h, self.w, name=f"{self.name}_reversed")
