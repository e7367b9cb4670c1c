"""
Selective state-space sequence kernel.

Recurrence per batch element n, channel d and state index s:

    h[t] = exp(delta[t] * A) * h[t-1] + delta[t] * B[t] * u[t]
    y[t] = sum_s C[t] * h[t] + D * u[t]

with ``h[-1] = 0``. The scan kernels are compiled with numba when it is
installed; otherwise an equivalent numpy loop over time is used.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.special import softmax as _softmax

from models.state_space import SSMParams
from services import numerics as nx
from services.layers import CausalConv1d, Linear, Module
from services.numerics import Parameter, Tensor
from utils.errors import DimensionError, NumericError

logger = logging.getLogger(__name__)

DT_MIN = 1e-3
DT_MAX = 1e-1
DT_FLOOR = 1e-4


def _scan_forward_numpy(u, delta, A, B, C, Dskip):
    n_batch, d_inner, length = u.shape
    h = np.zeros((n_batch, d_inner, A.shape[1]), dtype=u.dtype)
    y = np.empty_like(u)
    for t in range(length):
        dt = delta[:, t, :, None]
        h = np.exp(dt * A) * h + dt * B[:, t, None, :] * u[:, :, t, None]
        y[:, :, t] = np.einsum('nds,ns->nd', h, C[:, t]) + Dskip * u[:, :, t]
    return y


def _scan_forward_states_numpy(u, delta, A, B, C, Dskip):
    n_batch, d_inner, length = u.shape
    states = np.empty((n_batch, d_inner, length, A.shape[1]), dtype=u.dtype)
    h = np.zeros((n_batch, d_inner, A.shape[1]), dtype=u.dtype)
    y = np.empty_like(u)
    for t in range(length):
        dt = delta[:, t, :, None]
        h = np.exp(dt * A) * h + dt * B[:, t, None, :] * u[:, :, t, None]
        states[:, :, t] = h
        y[:, :, t] = np.einsum('nds,ns->nd', h, C[:, t]) + Dskip * u[:, :, t]
    return y, states


def _scan_backward_numpy(u, delta, A, B, C, Dskip, states, gy):
    n_batch, d_inner, length = u.shape
    gu = gy * Dskip[None, :, None]
    gdelta = np.zeros_like(delta)
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    gC = np.einsum('ndt,ndts->nts', gy, states)
    gD = np.einsum('ndt,ndt->d', gy, u)
    dh = np.zeros((n_batch, d_inner, A.shape[1]), dtype=u.dtype)
    for t in range(length - 1, -1, -1):
        dt = delta[:, t, :, None]
        decay = np.exp(dt * A)
        h_prev = states[:, :, t - 1] if t > 0 else np.zeros_like(dh)
        dh = dh + gy[:, :, t, None] * C[:, t, None, :]
        da = dh * h_prev * decay
        x = u[:, :, t, None]
        gdelta[:, t] = (da * A).sum(axis=2) + (dh * B[:, t, None, :]).sum(axis=2) * u[:, :, t]
        gA += (da * dt).sum(axis=0)
        gB[:, t] = (dh * dt * x).sum(axis=1)
        gu[:, :, t] += (dh * dt * B[:, t, None, :]).sum(axis=2)
        dh = dh * decay
    return gu, gdelta, gA, gB, gC, gD


try:
    import numba
    from numba import njit, prange
    HAS_NUMBA = True

    @njit(parallel=True, cache=True)
    def _scan_forward(u, delta, A, B, C, Dskip):
        n_batch, d_inner, length = u.shape
        d_state = A.shape[1]
        y = np.empty_like(u)
        for job in prange(n_batch * d_inner):
            n = job // d_inner
            d = job % d_inner
            h = np.zeros(d_state, dtype=u.dtype)
            for t in range(length):
                dt = delta[n, t, d]
                x = u[n, d, t]
                acc = 0.0
                for s in range(d_state):
                    h[s] = np.exp(dt * A[d, s]) * h[s] + dt * B[n, t, s] * x
                    acc += C[n, t, s] * h[s]
                y[n, d, t] = acc + Dskip[d] * x
        return y

    @njit(parallel=True, cache=True)
    def _scan_forward_states(u, delta, A, B, C, Dskip):
        n_batch, d_inner, length = u.shape
        d_state = A.shape[1]
        y = np.empty_like(u)
        states = np.empty((n_batch, d_inner, length, d_state), dtype=u.dtype)
        for job in prange(n_batch * d_inner):
            n = job // d_inner
            d = job % d_inner
            h = np.zeros(d_state, dtype=u.dtype)
            for t in range(length):
                dt = delta[n, t, d]
                x = u[n, d, t]
                acc = 0.0
                for s in range(d_state):
                    h[s] = np.exp(dt * A[d, s]) * h[s] + dt * B[n, t, s] * x
                    states[n, d, t, s] = h[s]
                    acc += C[n, t, s] * h[s]
                y[n, d, t] = acc + Dskip[d] * x
        return y, states

    @njit(parallel=True, cache=True)
    def _scan_backward(u, delta, A, B, C, Dskip, states, gy):
        n_batch, d_inner, length = u.shape
        d_state = A.shape[1]
        gu = np.zeros_like(u)
        gdelta = np.zeros_like(delta)
        gB = np.zeros_like(B)
        gC = np.zeros_like(C)
        # per-batch partials, summed after the parallel loop
        gA_parts = np.zeros((n_batch, d_inner, d_state), dtype=u.dtype)
        gD_parts = np.zeros((n_batch, d_inner), dtype=u.dtype)
        for n in prange(n_batch):
            dh = np.zeros(d_state, dtype=u.dtype)
            for d in range(d_inner):
                dh[:] = 0.0
                for t in range(length - 1, -1, -1):
                    dt = delta[n, t, d]
                    x = u[n, d, t]
                    g = gy[n, d, t]
                    gD_parts[n, d] += g * x
                    gu_acc = g * Dskip[d]
                    gdelta_acc = 0.0
                    for s in range(d_state):
                        h_t = states[n, d, t, s]
                        h_prev = states[n, d, t - 1, s] if t > 0 else 0.0
                        decay = np.exp(dt * A[d, s])
                        gC[n, t, s] += g * h_t
                        dh[s] += g * C[n, t, s]
                        da = dh[s] * h_prev * decay
                        gdelta_acc += da * A[d, s] + dh[s] * B[n, t, s] * x
                        gA_parts[n, d, s] += da * dt
                        gB[n, t, s] += dh[s] * dt * x
                        gu_acc += dh[s] * dt * B[n, t, s]
                        dh[s] = dh[s] * decay
                    gu[n, d, t] += gu_acc
                    gdelta[n, t, d] += gdelta_acc
        gA = np.zeros_like(A)
        gD = np.zeros_like(Dskip)
        for n in range(n_batch):
            for d in range(d_inner):
                gD[d] += gD_parts[n, d]
                for s in range(d_state):
                    gA[d, s] += gA_parts[n, d, s]
        return gu, gdelta, gA, gB, gC, gD

except ImportError:
    # Without numba the time loop runs vectorized over (batch, channel, state)
    HAS_NUMBA = False
    _scan_forward = _scan_forward_numpy
    _scan_forward_states = _scan_forward_states_numpy
    _scan_backward = _scan_backward_numpy


def set_scan_threads(threads: int) -> int:
    """Cap the scan kernels' thread count (0 keeps the default); returns the count in effect."""
    if not HAS_NUMBA:
        return 1
    if threads > 0:
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    return numba.get_num_threads()


def _arrays(*values) -> Tuple[np.ndarray, ...]:
    return tuple(v.data if isinstance(v, Tensor) else np.asarray(v) for v in values)


def discretize(A, B, delta) -> Tuple[np.ndarray, np.ndarray]:
    """Abar = exp(delta * A), Bbar = delta * B.

    Shapes: A [D, S], B [N, L, S], delta [N, L, D]; both results are
    [N, L, D, S]. delta = 0 is the degenerate limit (Abar = 1, Bbar = 0);
    negative steps raise NumericError.
    """
    A, B, delta = _arrays(A, B, delta)
    if np.any(delta < 0):
        raise NumericError("step sizes delta must be non-negative")
    step = delta[..., None]
    return np.exp(step * A), step * B[..., None, :]


def _check_shapes(u, delta, A, B, C, D) -> None:
    n, d_inner, length = u.shape
    d_state = A.shape[1]
    expected = {
        'delta': (delta.shape, (n, length, d_inner)),
        'A': (A.shape, (d_inner, d_state)),
        'B': (B.shape, (n, length, d_state)),
        'C': (C.shape, (n, length, d_state)),
        'D': (D.shape, (d_inner,)),
    }
    for name, (got, want) in expected.items():
        if tuple(got) != want:
            raise DimensionError(f"selective scan: {name} has shape {list(got)}, expected {list(want)}")


def naive_recurrence(params: SSMParams, x) -> Tensor:
    """Step-by-step evaluation of the recurrence; the reference for the kernels."""
    A, B, C, D, delta = _arrays(params.A, params.B, params.C, params.D, params.delta)
    u = x.data if isinstance(x, Tensor) else np.asarray(x)
    _check_shapes(u, delta, A, B, C, D)
    Abar, Bbar = discretize(A, B, delta)
    n, d_inner, length = u.shape
    h = np.zeros((n, d_inner, A.shape[1]), dtype=np.result_type(u, Abar))
    y = np.zeros((n, d_inner, length), dtype=h.dtype)
    for t in range(length):
        h = Abar[:, t] * h + Bbar[:, t] * u[:, :, t, None]
        y[:, :, t] = (h * C[:, t, None, :]).sum(axis=2) + D * u[:, :, t]
    return Tensor(y)


def selective_scan_op(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, D: Tensor) -> Tensor:
    """Differentiable linear-time scan. u is [N, D, L]; other layouts as in SSMParams."""
    if u.ndim != 3:
        raise DimensionError(f"selective scan input must be [N, D, L], got {list(u.shape)}")
    _check_shapes(u.data, delta.data, A.data, B.data, C.data, D.data)
    if np.any(delta.data < 0):
        raise NumericError("step sizes delta must be non-negative")
    dtype = u.dtype
    arrays = [np.ascontiguousarray(t.data, dtype=dtype) for t in (u, delta, A, B, C, D)]
    inputs = (u, delta, A, B, C, D)

    if nx.is_grad_enabled() and any(t.requires_grad for t in inputs):
        y, states = _scan_forward_states(*arrays)

        def backward(g):
            return _scan_backward(*arrays, states, np.ascontiguousarray(g, dtype=dtype))
    else:
        y = _scan_forward(*arrays)

        def backward(g):
            raise NumericError("selective scan was recorded without saved states")

    return nx.record('selective_scan', y, inputs, backward)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def selective_scan(params: SSMParams, x) -> Tensor:
    """Evaluate the recurrence for ``params`` over ``x`` [N, D, L] in one linear pass."""
    return selective_scan_op(_as_tensor(x), _as_tensor(params.delta), _as_tensor(params.A),
                             _as_tensor(params.B), _as_tensor(params.C), _as_tensor(params.D))


def scan_with_states(params: SSMParams, x) -> Tuple[np.ndarray, np.ndarray]:
    """Outputs and every hidden state ([N, D, L, S]), untracked."""
    arrays = _arrays(x, params.delta, params.A, params.B, params.C, params.D)
    dtype = arrays[0].dtype
    return _scan_forward_states(*[np.ascontiguousarray(a, dtype=dtype) for a in arrays])


def scan_forward(u: np.ndarray, delta: np.ndarray, A: np.ndarray, B: np.ndarray,
                 C: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Raw kernel entry for timing; no tape, no checks beyond layout."""
    return _scan_forward(u, delta, A, B, C, D)


def reference_attention(x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Quadratic softmax(Q K^T / sqrt(D)) V with Q = K = V = x^T.

    x is [N, D, L]; rows are processed in chunks so memory stays O(chunk * L).
    """
    n, d, length = x.shape
    tokens = np.ascontiguousarray(np.swapaxes(x, 1, 2))
    scale = 1.0 / math.sqrt(d)
    out = np.empty_like(tokens)
    for start in range(0, length, chunk):
        stop = min(start + chunk, length)
        scores = np.matmul(tokens[:, start:stop], np.swapaxes(tokens, 1, 2)) * scale
        out[:, start:stop] = np.matmul(_softmax(scores, axis=-1), tokens)
    return np.swapaxes(out, 1, 2)


def init_dt_bias(rng: np.random.Generator, size: int, dtype) -> np.ndarray:
    """Bias whose softplus is log-uniform in [DT_MIN, DT_MAX]."""
    dt = np.exp(rng.uniform(size=size) * (math.log(DT_MAX) - math.log(DT_MIN)) + math.log(DT_MIN))
    dt = np.maximum(dt, DT_FLOOR)
    return (dt + np.log(-np.expm1(-dt))).astype(dtype)


class SelectiveSSMCore(Module):
    """Causal conv, selective projections and the scan over [N, E, L] sequences."""

    def __init__(self, d_inner: int, d_state: int, dt_rank: int, conv_width: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.d_inner = d_inner
        self.d_state = d_state
        self.dt_rank = dt_rank
        self.conv = CausalConv1d(d_inner, conv_width, rng, dtype=dtype)
        self.x_proj = Linear(d_inner, dt_rank + 2 * d_state, rng, bias=False, dtype=dtype)
        self.dt_proj = Linear(dt_rank, d_inner, rng, dtype=dtype)
        bound = dt_rank ** -0.5
        self.dt_proj.weight.assign(rng.uniform(-bound, bound, size=(d_inner, dt_rank)))
        self.dt_proj.bias.assign(init_dt_bias(rng, d_inner, dtype))
        # A = -exp(A_log) = -(s + 1) per state index
        self.A_log = Parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))),
                               dtype=dtype)
        self.D = Parameter(np.ones(d_inner), dtype=dtype)

    def ssm_params(self, xc: Tensor) -> SSMParams:
        """Input-dependent B, C and delta for activations xc [N, E, L]."""
        tokens = nx.transpose(xc, (0, 2, 1))
        proj = self.x_proj(tokens)
        r, s = self.dt_rank, self.d_state
        delta = nx.softplus(self.dt_proj(proj[..., :r]))
        A = nx.scale(nx.exp(self.A_log), -1.0)
        return SSMParams(A=A, B=proj[..., r:r + s], C=proj[..., r + s:], D=self.D, delta=delta)

    def forward(self, xs: Tensor) -> Tensor:
        xc = nx.silu(self.conv(xs))
        params = self.ssm_params(xc)
        return selective_scan_op(xc, params.delta, params.A, params.B, params.C, params.D)

    def flops_per_token(self) -> int:
        scan = 6 * self.d_inner * self.d_state
        return (self.conv.flops_per_token() + self.x_proj.flops_per_token()
                + self.dt_proj.flops_per_token() + scan)


class MambaBranch(Module):
    """Gated selective-SSM block over sequences [N, D, L]."""

    def __init__(self, d_model: int, d_state: int = 16, expand: int = 2, conv_width: int = 4,
                 dt_rank: Optional[int] = None, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_model = d_model
        self.d_inner = expand * d_model
        dt_rank = dt_rank or math.ceil(d_model / 16)
        self.in_proj = Linear(d_model, 2 * self.d_inner, rng, bias=False, dtype=dtype)
        self.core = SelectiveSSMCore(self.d_inner, d_state, dt_rank, conv_width, rng, dtype=dtype)
        self.out_proj = Linear(self.d_inner, d_model, rng, bias=False, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.d_model:
            raise DimensionError(f"mamba branch expects [N, {self.d_model}, L], got {list(x.shape)}")
        e = self.d_inner
        xz = self.in_proj(nx.transpose(x, (0, 2, 1)))
        y = self.core(nx.transpose(xz[..., :e], (0, 2, 1)))
        gated = nx.mul(nx.transpose(y, (0, 2, 1)), nx.silu(xz[..., e:]))
        return nx.transpose(self.out_proj(gated), (0, 2, 1))

    def flops(self, length: int) -> int:
        per_token = (self.in_proj.flops_per_token() + self.core.flops_per_token()
                     + self.out_proj.flops_per_token() + self.d_inner)
        return per_token * length
