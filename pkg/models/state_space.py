"""
Data model for selective state-space parameters.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

if TYPE_CHECKING:
    from services.numerics import Tensor

ArrayLike = Union[np.ndarray, 'Tensor']


@dataclass
class SSMParams:
    """State-space quantities for one batch of sequences.

    Layouts (N batch, L length, D channels, S state size):
        A: [D, S], strictly negative (diagonal state matrix per channel)
        B, C: [N, L, S], produced per timestep
        D: [D], skip coefficient
        delta: [N, L, D], positive step sizes
    """
    A: ArrayLike
    B: ArrayLike
    C: ArrayLike
    D: ArrayLike
    delta: ArrayLike

    @property
    def d_inner(self) -> int:
        return self.A.shape[0]

    @property
    def d_state(self) -> int:
        return self.A.shape[1]
