"""
Desk-scale training loop and evaluation.
"""

import logging
import math
import queue
import threading
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from models.restoration import EvaluationReport, LossWeights, OptimState, TrainConfig
from services import numerics as nx
from services.layers import Module
from services.loss import ConvFeatureStub, FeatureExtractor, psnr, ssim, total_loss
from services.numerics import Parameter, Tensor
from utils.errors import DimensionError, NumericError, TrainingError
from utils.helpers import FileUtils

logger = logging.getLogger(__name__)

Pair = Tuple[Tensor, Tensor]
Batch = Tuple[np.ndarray, np.ndarray]
History = List[Tuple[int, float]]


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: OptimState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected adaptive-moment update, applied in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("parameters, gradients and optimizer moments must align")
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for i, (param, grad) in enumerate(zip(params, grads)):
        m = state.first_moment[i] = beta1 * state.first_moment[i] + (1.0 - beta1) * grad
        v = state.second_moment[i] = beta2 * state.second_moment[i] + (1.0 - beta2) * grad * grad
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        param.assign(param.data - update)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Scale gradients so their global norm is at most ``max_norm`` (0 disables)."""
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return list(grads), norm
    factor = max_norm / norm
    return [g * factor for g in grads], norm


def _stack(images: Sequence[Tensor]) -> np.ndarray:
    return np.concatenate([image.data for image in images], axis=0)


class BatchSampler:
    """Random pairs and random crops, drawn from one seeded generator."""

    def __init__(self, dataset: Sequence[Pair], config: TrainConfig):
        if not dataset:
            raise DimensionError("training dataset is empty")
        self.dataset = dataset
        self.config = config
        self.rng = np.random.default_rng(config.seed)

    def sample(self) -> Batch:
        picks = self.rng.integers(0, len(self.dataset), size=self.config.batch_size)
        cleans, degradeds = [], []
        for index in picks:
            clean, degraded = self.dataset[index]
            h, w = clean.shape[2:]
            crop = self.config.crop_size
            if 0 < crop < min(h, w):
                top = int(self.rng.integers(0, h - crop + 1))
                left = int(self.rng.integers(0, w - crop + 1))
                window = (slice(None), slice(None), slice(top, top + crop), slice(left, left + crop))
                cleans.append(clean.data[window])
                degradeds.append(degraded.data[window])
            else:
                cleans.append(clean.data)
                degradeds.append(degraded.data)
        return np.concatenate(cleans, axis=0), np.concatenate(degradeds, axis=0)


class BatchPrefetcher:
    """Generates batches on a background thread through a bounded queue.

    The producer blocks while the queue is full; batches arrive in the
    order they were drawn, so results match inline sampling exactly.
    """

    _DONE = object()

    def __init__(self, sampler: BatchSampler, count: int, depth: int):
        self.sampler = sampler
        self.count = count
        self.queue: "queue.Queue" = queue.Queue(maxsize=max(1, depth))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, name="batch-prefetch", daemon=True)
        self._thread.start()

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self.queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self) -> None:
        try:
            for _ in range(self.count):
                if not self._put(self.sampler.sample()):
                    return
        except Exception as e:  # forwarded to the consumer
            self._put(e)
            return
        self._put(self._DONE)

    def __iter__(self) -> Iterator[Batch]:
        while True:
            item = self.queue.get()
            if item is self._DONE:
                return
            if isinstance(item, Exception):
                raise item
            yield item

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)


def _batches(sampler: BatchSampler, count: int, depth: int) -> Iterator[Batch]:
    if depth <= 0:
        for _ in range(count):
            yield sampler.sample()
        return
    prefetcher = BatchPrefetcher(sampler, count, depth)
    try:
        yield from prefetcher
    finally:
        prefetcher.close()


def train(model: Module, dataset: Sequence[Pair], config: TrainConfig,
          weights: Optional[LossWeights] = None, fx: Optional[FeatureExtractor] = None,
          on_step: Optional[Callable[[int, float], None]] = None) -> Tuple[Module, History]:
    """forward -> total loss -> backward -> Adam, for ``config.total_steps`` steps.

    Returns the model (trained in place) and the (step, loss) history.
    A non-finite loss or gradient raises TrainingError naming the step.
    """
    config.validate()
    weights = weights or LossWeights()
    dtype = model.config.dtype if hasattr(model, 'config') else np.float32
    if fx is None and weights.lambda_perceptual > 0:
        fx = ConvFeatureStub(dtype=dtype)

    named = model.named_parameters()
    params = [p for _, p in named]
    state = OptimState.zeros_like([p.data for p in params])
    sampler = BatchSampler(dataset, config)
    history: History = []
    logger.info(f"Training {len(params)} tensors ({model.param_count():,} values) for {config.total_steps} steps, "
                f"batch {config.batch_size}, crop {config.crop_size or 'full'}")

    for step, (clean, degraded) in enumerate(_batches(sampler, config.total_steps, config.prefetch), start=1):
        try:
            output = model(Tensor(degraded.astype(dtype)))
            loss = total_loss(output, Tensor(clean.astype(dtype)), weights, fx)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(step, f"loss is {value}")
            gradients = nx.backward(loss)
        except TrainingError:
            raise
        except NumericError as e:
            raise TrainingError(step, str(e)) from e

        grads = [gradients.get(p, np.zeros_like(p.data)) for p in params]
        grads, norm = clip_grad_norm(grads, config.grad_clip)
        if not math.isfinite(norm):
            raise TrainingError(step, "gradient norm is not finite")
        lr = config.lr_at(step)
        try:
            adam_step(params, grads, state, lr, config.beta1, config.beta2, config.eps)
        except NumericError as e:
            raise TrainingError(step, str(e)) from e

        history.append((step, value))
        if hasattr(model, 'trained_steps'):
            model.trained_steps += 1
        if step == 1 or step % config.log_every == 0 or step == config.total_steps:
            logger.info(f"step={step} loss={value:.6f} lr={lr:g} grad_norm={norm:.4f}")
        if on_step is not None:
            on_step(step, value)

    return model, history


class IdentityRestorer:
    """Returns its input; the no-op baseline for evaluation."""

    def restore(self, image: Tensor) -> Tensor:
        return Tensor(image.data.copy())


def evaluate(model, dataset: Sequence[Pair]) -> EvaluationReport:
    """Per-pair PSNR/SSIM of ``model.restore(degraded)`` and of the degraded input, both against clean."""
    if not dataset:
        raise DimensionError("evaluation dataset is empty")
    dtype = model.config.dtype if hasattr(model, 'config') else np.float32
    rows = []
    for index, (clean, degraded) in enumerate(dataset):
        restored = model.restore(Tensor(degraded.data.astype(dtype)))
        rows.append({
            'pair': index,
            'psnr': psnr(restored, clean),
            'ssim': ssim(restored, clean),
            'input_psnr': psnr(degraded, clean),
            'input_ssim': ssim(degraded, clean),
        })
    report = EvaluationReport(pd.DataFrame(rows, columns=['pair', 'psnr', 'ssim', 'input_psnr', 'input_ssim']))
    logger.info(f"Evaluated {len(rows)} pairs: mean psnr={report.mean_psnr:.3f} ssim={report.mean_ssim:.4f}")
    return report


def write_loss_history(history: History, path: str) -> None:
    """``step,loss`` CSV with a header line."""
    FileUtils.ensure_directory_exists(path)
    pd.DataFrame(history, columns=['step', 'loss']).to_csv(path, index=False, float_format='%.8g')
    logger.info(f"Wrote loss history ({len(history)} steps) to {path}")
