"""
Architectural blocks: dual-branch feature extraction, prior-guided
channel attention, the high-frequency enhancement U-Net, and the
FA-Block that composes them.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from models.frequency import ScanMode, SubBandKind, SubBands
from models.restoration import GlobalBranch, ModelConfig
from services import afsm
from services import numerics as nx
from services.layers import Conv2d, DepthwiseConv2d, GroupedConv2d, Linear, Module
from services.numerics import Tensor
from services.ssm import SelectiveSSMCore
from services.wavelet import dwt2, high_bands, iwt2
from utils.errors import DimensionError

logger = logging.getLogger(__name__)

PRIOR_CHANNELS = 3 * ModelConfig.IMAGE_CHANNELS


class CNNBranch(Module):
    """Local detail path: 3x3 conv, relu, 3x3 conv."""

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.conv1 = Conv2d(channels, hidden, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(hidden, channels, 3, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(nx.relu(self.conv1(x)))

    def flops(self, h: int, w: int) -> int:
        return self.conv1.flops(h, w) + self.conv2.flops(h, w)


class FrequencyMamba(Module):
    """Global path: gated selective SSM over frequency-adaptive scans.

    Input and output projections act per pixel and are shared by all
    sub-band kinds; each kind owns its SSM core. In AFSM mode the
    projected map is split by ``dwt2`` and each band is scanned along
    its kind's directional orders; in cross2d mode the undecomposed map
    is scanned in four raster directions by one core.
    """

    def __init__(self, channels: int, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.channels = channels
        self.d_inner = config.expand * channels
        self.scan_mode = config.scan_mode
        self.in_proj = Linear(channels, 2 * self.d_inner, rng, bias=False, dtype=dtype)
        keys = [kind.value for kind in SubBandKind] if self.scan_mode is ScanMode.AFSM else [ScanMode.CROSS2D.value]
        self.cores: Dict[str, SelectiveSSMCore] = {
            key: SelectiveSSMCore(self.d_inner, config.d_state, config.dt_rank, config.conv_width, rng, dtype=dtype)
            for key in keys
        }
        self.out_proj = Linear(self.d_inner, channels, rng, bias=False, dtype=dtype)

    def _scan(self, core: SelectiveSSMCore, grid: Tensor, orders: List) -> Tensor:
        sequences = afsm.apply_orders(grid, orders)
        return afsm.merge_directional(afsm.restore_orders(core(sequences), orders))

    def mix(self, xe: Tensor) -> Tensor:
        """Sequence mixing of the expanded map [N, E, H, W]."""
        h, w = xe.shape[2:]
        if self.scan_mode is ScanMode.CROSS2D:
            return self._scan(self.cores[ScanMode.CROSS2D.value], xe, afsm.cross2d_orders(h, w))
        bands = dwt2(xe)
        mixed = {}
        for kind in SubBandKind:
            band = bands.get(kind)
            orders = afsm.directional_orders(kind, *band.shape[2:])
            mixed[kind.value] = self._scan(self.cores[kind.value], band, orders)
        return iwt2(SubBands(**mixed))

    def forward(self, x: Tensor) -> Tensor:
        e = self.d_inner
        xz = self.in_proj(nx.transpose(x, (0, 2, 3, 1)))
        mixed = self.mix(nx.transpose(xz[..., :e], (0, 3, 1, 2)))
        gated = nx.mul(nx.transpose(mixed, (0, 2, 3, 1)), nx.silu(xz[..., e:]))
        return nx.transpose(self.out_proj(gated), (0, 3, 1, 2))

    def flops(self, h: int, w: int) -> int:
        pixels = h * w
        total = (self.in_proj.flops_per_token() + self.out_proj.flops_per_token() + self.d_inner) * pixels
        if self.scan_mode is ScanMode.CROSS2D:
            passes = len(afsm.cross2d_orders(h, w))
            return total + passes * pixels * self.cores[ScanMode.CROSS2D.value].flops_per_token()
        for kind in SubBandKind:
            passes = len(afsm.directional_orders(kind, h // 2, w // 2))
            total += passes * (pixels // 4) * self.cores[kind.value].flops_per_token()
        return total


class AttentionBranch(Module):
    """Global path of the transformer variant: single-head softmax
    self-attention over all pixels of the map, quadratic in h * w."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.channels = channels
        self.qkv = Linear(channels, 3 * channels, rng, bias=False, dtype=dtype)
        self.out_proj = Linear(channels, channels, rng, bias=False, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        tokens = nx.reshape(nx.transpose(x, (0, 2, 3, 1)), (n, h * w, c))
        qkv = self.qkv(tokens)
        q, k, v = qkv[..., :c], qkv[..., c:2 * c], qkv[..., 2 * c:]
        scores = nx.scale(nx.matmul(q, nx.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(c))
        mixed = self.out_proj(nx.matmul(nx.softmax(scores, axis=-1), v))
        return nx.transpose(nx.reshape(mixed, (n, h, w, c)), (0, 3, 1, 2))

    def flops(self, h: int, w: int) -> int:
        tokens = h * w
        projections = (self.qkv.flops_per_token() + self.out_proj.flops_per_token()) * tokens
        return projections + 4 * tokens * tokens * self.channels


class DFEB(Module):
    """Dual-branch feature extraction: cnn(x) + global(x).

    The global path is FrequencyMamba or, with ``global_branch =
    attention``, pixel self-attention; ``use_mamba = false`` drops it.
    """

    def __init__(self, channels: int, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.cnn = CNNBranch(channels, config.cnn_hidden, rng, dtype=dtype)
        self.mamba: Optional[FrequencyMamba] = None
        self.attention: Optional[AttentionBranch] = None
        if config.use_mamba and config.global_branch is GlobalBranch.ATTENTION:
            self.attention = AttentionBranch(channels, rng, dtype=dtype)
        elif config.use_mamba:
            self.mamba = FrequencyMamba(channels, config, rng, dtype=dtype)

    @property
    def global_path(self) -> Optional[Module]:
        return self.mamba if self.mamba is not None else self.attention

    def branches(self, x: Tensor) -> Tuple[Tensor, Optional[Tensor]]:
        local = self.cnn(x)
        path = self.global_path
        global_ = path(x) if path is not None else None
        if global_ is not None and global_.shape != local.shape:
            raise DimensionError(f"branch outputs disagree: {list(local.shape)} vs {list(global_.shape)}")
        return local, global_

    def forward(self, x: Tensor) -> Tensor:
        local, global_ = self.branches(x)
        return local if global_ is None else nx.add(local, global_)

    def flops(self, h: int, w: int) -> int:
        path = self.global_path
        return self.cnn.flops(h, w) + (path.flops(h, w) if path is not None else 0)


def match_resolution(prior: Tensor, h: int, w: int) -> Tensor:
    """Average-pool the prior down to h x w."""
    ph, pw = prior.shape[2:]
    if (ph, pw) == (h, w):
        return prior
    if ph % h or pw % w or ph // h != pw // w:
        raise DimensionError(f"prior of extent {ph}x{pw} cannot be pooled to {h}x{w}")
    return nx.avg_pool2d(prior, ph // h)


class PriorGuidedBlock(Module):
    """Channel attention of high bands, keyed by the enhanced prior.

    Queries and values come from the high bands of the input's DWT,
    keys from the prior. Attention is the row-softmax of K Q^T over the
    3C channels; the residual M V is added to the high bands, the
    bands are inverse-transformed and projected by a 1x1 conv.
    """

    def __init__(self, channels: int, rng: np.random.Generator, prior_channels: int = PRIOR_CHANNELS,
                 dtype=np.float32):
        wide = 3 * channels
        self.channels = channels
        self.q_point = GroupedConv2d(wide, wide, 1, 3, rng, dtype=dtype)
        self.q_depth = DepthwiseConv2d(wide, 3, rng, dtype=dtype)
        self.v_point = GroupedConv2d(wide, wide, 1, 3, rng, dtype=dtype)
        self.v_depth = DepthwiseConv2d(wide, 3, rng, dtype=dtype)
        self.k_point = Conv2d(prior_channels, wide, 1, rng, dtype=dtype)
        self.k_depth = DepthwiseConv2d(wide, 3, rng, dtype=dtype)
        self.proj = Conv2d(channels, channels, 1, rng, dtype=dtype)

    def attention(self, x_out: Tensor, prior: Tensor) -> Tuple[Tensor, Tensor, SubBands]:
        """Returns (attention matrix [N, 3C, 3C], residual [N, 3C, h, w], DWT of x_out)."""
        if x_out.shape[1] != self.channels:
            raise DimensionError(f"prior-guided block expects {self.channels} channels, got {x_out.shape[1]}")
        bands = dwt2(x_out)
        x_hf = high_bands(bands)
        n, wide, h, w = x_hf.shape
        q = self.q_depth(self.q_point(x_hf))
        v = self.v_depth(self.v_point(x_hf))
        k = self.k_depth(self.k_point(match_resolution(prior, h, w)))
        flat = (n, wide, h * w)
        q, k, v = (nx.reshape(t, flat) for t in (q, k, v))
        weights = nx.softmax(nx.matmul(k, nx.transpose(q, (0, 2, 1))), axis=-1)
        residual = nx.reshape(nx.matmul(weights, v), (n, wide, h, w))
        return weights, residual, bands

    def fuse(self, x_out: Tensor, prior: Tensor) -> SubBands:
        """Low band unchanged, high bands plus the attention residual."""
        _, residual, bands = self.attention(x_out, prior)
        c = self.channels
        high = nx.add(residual, high_bands(bands))
        return SubBands(ll=bands.ll, lh=high[:, 0:c], hl=high[:, c:2 * c], hh=high[:, 2 * c:])

    def forward(self, x_out: Tensor, prior: Tensor) -> Tensor:
        return self.proj(iwt2(self.fuse(x_out, prior)))

    def flops(self, h: int, w: int) -> int:
        bh, bw = h // 2, w // 2
        wide = 3 * self.channels
        generators = sum(m.flops(bh, bw) for m in (self.q_point, self.q_depth, self.v_point,
                                                  self.v_depth, self.k_point, self.k_depth))
        return generators + 4 * wide * wide * bh * bw + self.proj.flops(h, w)


class HFEM(Module):
    """U-Net refinement of the stacked (LH, HL, HH) image bands.

    Two stride-2 encoder stages, a bottleneck, and two decoder stages of
    nearest upsampling plus conv, each fused with the matching encoder
    output. Extents must be divisible by 4.
    """

    def __init__(self, channels: int, width: int, rng: np.random.Generator, identity_skip: bool = True,
                 dtype=np.float32):
        self.identity_skip = identity_skip
        self.enc = Conv2d(channels, width, 3, rng, dtype=dtype)
        self.down1 = Conv2d(width, 2 * width, 3, rng, stride=2, dtype=dtype)
        self.down2 = Conv2d(2 * width, 4 * width, 3, rng, stride=2, dtype=dtype)
        self.bottleneck = Conv2d(4 * width, 4 * width, 3, rng, dtype=dtype)
        self.up2 = Conv2d(4 * width, 2 * width, 3, rng, dtype=dtype)
        self.fuse2 = Conv2d(4 * width, 2 * width, 3, rng, dtype=dtype)
        self.up1 = Conv2d(2 * width, width, 3, rng, dtype=dtype)
        self.fuse1 = Conv2d(2 * width, width, 3, rng, dtype=dtype)
        self.out = Conv2d(width, channels, 3, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        if h % 4 or w % 4:
            raise DimensionError(f"HFEM input extents must be divisible by 4, got {h}x{w}")
        e1 = nx.relu(self.enc(x))
        e2 = nx.relu(self.down1(e1))
        e3 = nx.relu(self.down2(e2))
        b = nx.relu(self.bottleneck(e3))
        d2 = nx.relu(self.up2(nx.upsample_nearest2d(b, 2)))
        d2 = nx.relu(self.fuse2(nx.concat([d2, e2], axis=1)))
        d1 = nx.relu(self.up1(nx.upsample_nearest2d(d2, 2)))
        d1 = nx.relu(self.fuse1(nx.concat([d1, e1], axis=1)))
        out = self.out(d1)
        return nx.add(out, x) if self.identity_skip else out

    def flops(self, h: int, w: int) -> int:
        return (self.enc.flops(h, w) + self.down1.flops(h, w) + self.down2.flops(h // 2, w // 2)
                + self.bottleneck.flops(h // 4, w // 4) + self.up2.flops(h // 2, w // 2)
                + self.fuse2.flops(h // 2, w // 2) + self.up1.flops(h, w) + self.fuse1.flops(h, w)
                + self.out.flops(h, w))


class FABlock(Module):
    """x + PGB(DFEB(x), prior); x + DFEB(x) when the prior path is disabled."""

    def __init__(self, channels: int, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.dfeb = DFEB(channels, config, rng, dtype=dtype)
        self.pgb = PriorGuidedBlock(channels, rng, dtype=dtype) if config.use_pgb else None

    def forward(self, x: Tensor, prior: Tensor) -> Tensor:
        y = self.dfeb(x)
        if self.pgb is not None:
            y = self.pgb(y, prior)
        return nx.add(x, y)

    def flops(self, h: int, w: int) -> int:
        return self.dfeb.flops(h, w) + (self.pgb.flops(h, w) if self.pgb is not None else 0)
