"""
Adaptive frequency scanning: per-sub-band traversal orders.

Approximation and directional bands (LL, LH, HL) are read as horizontal
and vertical rasters; the diagonal band (HH) along anti-diagonals. Each
order is also run reversed, and per-direction outputs are mapped back to
the grid and averaged.
"""

import logging
from typing import List, Sequence

import numpy as np

from models.frequency import ScanOrder, SubBandKind
from services import numerics as nx
from services.numerics import Tensor
from utils.errors import DimensionError

logger = logging.getLogger(__name__)


def _check_extents(h: int, w: int) -> None:
    if h < 1 or w < 1:
        raise DimensionError(f"scan extents must be positive, got {h}x{w}")


def horizontal_order(h: int, w: int) -> ScanOrder:
    _check_extents(h, w)
    return ScanOrder(np.arange(h * w), h, w, name="horizontal")


def vertical_order(h: int, w: int) -> ScanOrder:
    _check_extents(h, w)
    return ScanOrder(np.arange(h * w).reshape(h, w).T.ravel(), h, w, name="vertical")


def antidiagonal_order(h: int, w: int) -> ScanOrder:
    """Positions grouped by i + j ascending, row index ascending within a diagonal."""
    _check_extents(h, w)
    rows, cols = np.divmod(np.arange(h * w), w)
    return ScanOrder(np.lexsort((rows, rows + cols)), h, w, name="antidiagonal")


def scan_orders(kind: SubBandKind, h: int, w: int) -> List[ScanOrder]:
    """The two base traversal patterns assigned to a sub-band kind."""
    if kind is SubBandKind.HH:
        forward = antidiagonal_order(h, w)
        return [forward, forward.reversed()]
    return [horizontal_order(h, w), vertical_order(h, w)]


def _with_reversals(orders: Sequence[ScanOrder]) -> List[ScanOrder]:
    result: List[ScanOrder] = []
    seen = set()
    for order in list(orders) + [o.reversed() for o in orders]:
        key = order.indices.tobytes()
        if key not in seen:
            seen.add(key)
            result.append(order)
    return result


def directional_orders(kind: SubBandKind, h: int, w: int) -> List[ScanOrder]:
    """Base orders plus their reversals, without repeats.

    LL/LH/HL get four passes. For HH the reversal of the anti-diagonal
    pass is already a base order, so two distinct passes remain; a
    repeated pass through the same core would not change the mean.
    """
    return _with_reversals(scan_orders(kind, h, w))


def cross2d_orders(h: int, w: int) -> List[ScanOrder]:
    """Four-direction raster scan of an undecomposed map."""
    return _with_reversals([horizontal_order(h, w), vertical_order(h, w)])


def invert_order(order: ScanOrder) -> ScanOrder:
    """result[order.indices[t]] = t."""
    inverse = np.empty_like(order.indices)
    inverse[order.indices] = np.arange(order.length)
    return ScanOrder(inverse, order.h, order.w, name=f"{order.name}_inverse")


def apply_order(x: Tensor, order: ScanOrder) -> Tensor:
    """[N, C, H, W] -> [N, C, H*W] with out[..., t] = x at position order.indices[t]."""
    if x.ndim != 4 or x.shape[2:] != (order.h, order.w):
        raise DimensionError(f"order over {order.h}x{order.w} cannot scan tensor of shape {list(x.shape)}")
    n, c = x.shape[:2]
    return nx.take(nx.reshape(x, (n, c, order.length)), order.indices, axis=2)


def restore_order(sequence: Tensor, order: ScanOrder) -> Tensor:
    """Inverse of ``apply_order``: [N, C, L] back to [N, C, H, W]."""
    if sequence.ndim != 3 or sequence.shape[2] != order.length:
        raise DimensionError(f"sequence of shape {list(sequence.shape)} does not match order length {order.length}")
    n, c = sequence.shape[:2]
    grid = nx.take(sequence, invert_order(order).indices, axis=2)
    return nx.reshape(grid, (n, c, order.h, order.w))


def apply_orders(x: Tensor, orders: Sequence[ScanOrder]) -> Tensor:
    """Scan with every order and stack passes on the batch axis: [K*N, C, L]."""
    return nx.concat([apply_order(x, order) for order in orders], axis=0)


def restore_orders(sequences: Tensor, orders: Sequence[ScanOrder]) -> List[Tensor]:
    """Split a [K*N, C, L] batch of passes and map each back to the grid."""
    k = len(orders)
    if sequences.shape[0] % k:
        raise DimensionError(f"batch of {sequences.shape[0]} sequences does not split into {k} passes")
    n = sequences.shape[0] // k
    return [restore_order(sequences[i * n:(i + 1) * n], order) for i, order in enumerate(orders)]


def merge_directional(outputs: Sequence[Tensor]) -> Tensor:
    """Element-wise mean, summed in list order."""
    outputs = list(outputs)
    if not outputs:
        raise DimensionError("merge_directional needs at least one output")
    shapes = {o.shape for o in outputs}
    if len(shapes) != 1:
        raise DimensionError(f"directional outputs disagree in shape: {sorted(shapes)}")
    total = outputs[0]
    for output in outputs[1:]:
        total = nx.add(total, output)
    return nx.scale(total, 1.0 / len(outputs)) if len(outputs) > 1 else total
