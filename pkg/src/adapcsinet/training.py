"""Two-step training, online fine-tuning and evaluation loops.

Step 1 trains the baseline reconstruction network on mixed samples from
the training environments. Step 2 freezes it and trains only the
parameter generator through the adaptive forward; because the
generator's output layer starts at zero, epoch 0 evaluates exactly at
the frozen baseline and the best-validation checkpoint can never regress
past it.

Every gradient step funnels through one batcher that asserts its scene
ids stay inside the allowed split and records what it saw, which is what
the split-hygiene audit inspects afterwards.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NonFiniteError, Tensor
from .csi import PreprocessedData
from .model import HyperNet, ModelDims, ReconNet, forward_adaptive, forward_baseline

logger = logging.getLogger(__name__)


class SplitHygieneError(RuntimeError):
    """A gradient batch contained samples from a forbidden environment."""


class TrainingDivergenceError(RuntimeError):
    """Loss or parameters became non-finite during training."""


@dataclass(frozen=True)
class TrainSettings:
    epochs: int
    batch_size: int
    lr: float
    seed: int
    plateau_patience: int | None = None   # halve lr after this many flat epochs
    lr_factor: float = 0.5
    early_stop_patience: int | None = None


@dataclass
class TrainResult:
    history: list = field(default_factory=list)   # (epoch, train_loss, val_loss, lr)
    best_val: float = np.inf
    best_epoch: int = -1
    seen_scene_ids: tuple = ()
    train_time_s: float = 0.0


class PlateauHalver:
    """Halve the learning rate after `patience` epochs without val improvement."""

    def __init__(self, patience: int, factor: float = 0.5):
        self.patience = patience
        self.factor = factor
        self.best = np.inf
        self.stall = 0

    def update(self, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.stall = 0
            return False
        self.stall += 1
        if self.stall >= self.patience:
            self.stall = 0
            return True
        return False


class _Batcher:
    """Shuffled minibatch indices with split-hygiene enforcement."""

    def __init__(self, scene_ids: np.ndarray, allowed_ids, batch_size: int,
                 rng: np.random.Generator):
        self.scene_ids = scene_ids
        self.allowed = frozenset(int(i) for i in allowed_ids)
        self.batch_size = batch_size
        self.rng = rng
        self.seen: set[int] = set()
        bad = set(int(i) for i in np.unique(scene_ids)) - self.allowed
        if bad:
            raise SplitHygieneError(
                f"training data contains environments {sorted(bad)} outside the allowed split")

    def epoch(self):
        perm = self.rng.permutation(len(self.scene_ids))
        for start in range(0, len(perm), self.batch_size):
            idx = perm[start:start + self.batch_size]
            batch_envs = set(int(i) for i in np.unique(self.scene_ids[idx]))
            if not batch_envs <= self.allowed:
                raise SplitHygieneError(
                    f"batch includes environments {sorted(batch_envs - self.allowed)}")
            self.seen.update(batch_envs)
            yield idx


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def predict_baseline(net: ReconNet, s: np.ndarray, chunk: int = 1024) -> np.ndarray:
    out = np.empty((s.shape[0], 2, net.dims.nc, net.dims.nt))
    for start in range(0, s.shape[0], chunk):
        out[start:start + chunk] = forward_baseline(s[start:start + chunk], net).data
    return out


def predict_adaptive(net: ReconNet, hyper: HyperNet, s: np.ndarray,
                     graphs: np.ndarray, slots: np.ndarray,
                     chunk: int = 1024) -> np.ndarray:
    out = np.empty((s.shape[0], 2, net.dims.nc, net.dims.nt))
    for start in range(0, s.shape[0], chunk):
        sl = slice(start, start + chunk)
        out[sl] = forward_adaptive(s[sl], graphs, slots[sl], net, hyper).data
    return out


def sample_mean_sse(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over samples of the summed squared error per sample."""
    diff = pred - target
    return float((diff * diff).sum() / pred.shape[0])


# ---------------------------------------------------------------------------
# step 1: baseline pre-training
# ---------------------------------------------------------------------------

def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, t in params.items():
        t.data = snap[k].copy()


def train_step1(data: PreprocessedData, train_ids, val_ids, dims: ModelDims,
                alpha: float, cfg: TrainSettings) -> tuple[ReconNet, TrainResult]:
    """Pre-train the baseline network on mixed training environments."""
    t0 = time.perf_counter()
    train = data.subset(np.isin(data.scene_ids, list(train_ids)))
    val = data.subset(np.isin(data.scene_ids, list(val_ids)))
    if train.h.shape[0] == 0 or val.h.shape[0] == 0:
        raise ValueError("empty train or val split")

    net = ReconNet.init(dims, alpha, cfg.seed)
    state = AdamState.for_params(net.params, lr=cfg.lr)
    batcher = _Batcher(train.scene_ids, train_ids, cfg.batch_size,
                       np.random.default_rng([cfg.seed, 0xBA7C]))
    result = TrainResult()
    best = _snapshot(net.params)
    try:
        for epoch in range(1, cfg.epochs + 1):
            running = 0.0
            count = 0
            for idx in batcher.epoch():
                pred = forward_baseline(train.s[idx], net)
                loss = ad.mse_loss(pred, train.h[idx])
                ad.backward(loss)
                adgrads = {k: t.grad for k, t in net.params.items()}
                ad.adam_step(net.params, adgrads, state)
                ad.zero_grads(net.params)
                running += float(loss.data) * len(idx)
                count += len(idx)
            val_loss = sample_mean_sse(predict_baseline(net, val.s), val.h)
            result.history.append((epoch, running / count, val_loss, state.lr))
            if val_loss < result.best_val:
                result.best_val = val_loss
                result.best_epoch = epoch
                best = _snapshot(net.params)
            logger.debug("step1 epoch %d train %.6f val %.6f", epoch, running / count, val_loss)
    except NonFiniteError as err:
        raise TrainingDivergenceError(
            f"step-1 training diverged at epoch {len(result.history) + 1}: {err}") from err

    _restore(net.params, best)
    result.seen_scene_ids = tuple(sorted(batcher.seen))
    result.train_time_s = time.perf_counter() - t0
    return net, result


# ---------------------------------------------------------------------------
# step 2: generator training against the frozen baseline
# ---------------------------------------------------------------------------

def make_slots(scene_ids: np.ndarray, env_ids) -> tuple[np.ndarray, list[int]]:
    """Map per-sample scene ids onto row indices of a graphs matrix."""
    order = sorted(int(i) for i in env_ids)
    lookup = {sid: k for k, sid in enumerate(order)}
    return np.array([lookup[int(i)] for i in scene_ids], dtype=np.intp), order


def stack_graphs(graph_inputs: dict[int, np.ndarray], env_ids) -> np.ndarray:
    order = sorted(int(i) for i in env_ids)
    return np.stack([graph_inputs[i].reshape(-1) for i in order])


def train_step2(data: PreprocessedData, graph_inputs: dict[int, np.ndarray],
                recon: ReconNet, train_ids, val_ids,
                cfg: TrainSettings) -> tuple[HyperNet, TrainResult]:
    """Train the parameter generator with the reconstruction net frozen."""
    t0 = time.perf_counter()
    missing = [int(i) for i in set(train_ids) | set(val_ids) if int(i) not in graph_inputs]
    if missing:
        raise ValueError(f"no scene graph available for environments {sorted(missing)}")
    train = data.subset(np.isin(data.scene_ids, list(train_ids)))
    val = data.subset(np.isin(data.scene_ids, list(val_ids)))

    recon = recon.copy()
    recon.set_trainable(False)
    hyper = HyperNet.init(recon.dims, cfg.seed)
    state = AdamState.for_params(hyper.params, lr=cfg.lr)
    scheduler = PlateauHalver(cfg.plateau_patience, cfg.lr_factor) \
        if cfg.plateau_patience else None

    tr_slots, _ = make_slots(train.scene_ids, train_ids)
    tr_graphs = stack_graphs(graph_inputs, train_ids)
    va_slots, _ = make_slots(val.scene_ids, val_ids)
    va_graphs = stack_graphs(graph_inputs, val_ids)

    batcher = _Batcher(train.scene_ids, train_ids, cfg.batch_size,
                       np.random.default_rng([cfg.seed, 0x57EB]))
    result = TrainResult()

    # epoch 0: zero-initialized generator, exactly the frozen baseline
    val_loss = sample_mean_sse(
        predict_adaptive(recon, hyper, val.s, va_graphs, va_slots), val.h)
    result.history.append((0, np.nan, val_loss, state.lr))
    result.best_val = val_loss
    result.best_epoch = 0
    best = _snapshot(hyper.params)

    try:
        for epoch in range(1, cfg.epochs + 1):
            running = 0.0
            count = 0
            for idx in batcher.epoch():
                pred = forward_adaptive(train.s[idx], tr_graphs, tr_slots[idx], recon, hyper)
                loss = ad.mse_loss(pred, train.h[idx])
                ad.backward(loss)
                adgrads = {k: t.grad for k, t in hyper.params.items()}
                ad.adam_step(hyper.params, adgrads, state)
                ad.zero_grads(hyper.params)
                running += float(loss.data) * len(idx)
                count += len(idx)
            val_loss = sample_mean_sse(
                predict_adaptive(recon, hyper, val.s, va_graphs, va_slots), val.h)
            result.history.append((epoch, running / count, val_loss, state.lr))
            if val_loss < result.best_val:
                result.best_val = val_loss
                result.best_epoch = epoch
                best = _snapshot(hyper.params)
            if scheduler is not None and scheduler.update(val_loss):
                state.lr *= cfg.lr_factor
                logger.debug("step2 epoch %d lr halved to %.2e", epoch, state.lr)
            logger.debug("step2 epoch %d train %.6f val %.6f", epoch, running / count, val_loss)
    except NonFiniteError as err:
        raise TrainingDivergenceError(
            f"step-2 training diverged at epoch {len(result.history)}: {err}") from err

    _restore(hyper.params, best)
    result.seen_scene_ids = tuple(sorted(batcher.seen))
    result.train_time_s = time.perf_counter() - t0
    return hyper, result


# ---------------------------------------------------------------------------
# online fine-tuning
# ---------------------------------------------------------------------------

def fine_tune_online(net: ReconNet, h: np.ndarray, s: np.ndarray, env_id: int,
                     cfg: TrainSettings) -> tuple[ReconNet, TrainResult]:
    """Fine-tune a copy of a trained baseline on samples from one environment.

    A fifth of the budget is held out to drive early stopping; the best
    checkpoint on that held-out slice is returned. The evaluation subset
    of the environment must never be passed in here.
    """
    t0 = time.perf_counter()
    net = net.copy()
    net.set_trainable(True)
    n = h.shape[0]
    if n < 5:
        raise ValueError("online fine-tuning needs at least 5 samples")
    rng = np.random.default_rng([cfg.seed, 0x0F1E, env_id])
    perm = rng.permutation(n)
    n_val = max(1, n // 5)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    scene_ids = np.full(len(train_idx), env_id, dtype=np.int64)
    batcher = _Batcher(scene_ids, [env_id], min(cfg.batch_size, len(train_idx)), rng)
    state = AdamState.for_params(net.params, lr=cfg.lr)
    result = TrainResult()
    best = _snapshot(net.params)
    stall = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            running = 0.0
            count = 0
            for rel in batcher.epoch():
                idx = train_idx[rel]
                pred = forward_baseline(s[idx], net)
                loss = ad.mse_loss(pred, h[idx])
                ad.backward(loss)
                adgrads = {k: t.grad for k, t in net.params.items()}
                ad.adam_step(net.params, adgrads, state)
                ad.zero_grads(net.params)
                running += float(loss.data) * len(idx)
                count += len(idx)
            val_loss = sample_mean_sse(predict_baseline(net, s[val_idx]), h[val_idx])
            result.history.append((epoch, running / count, val_loss, state.lr))
            if val_loss < result.best_val:
                result.best_val = val_loss
                result.best_epoch = epoch
                best = _snapshot(net.params)
                stall = 0
            else:
                stall += 1
                if cfg.early_stop_patience and stall >= cfg.early_stop_patience:
                    break
    except NonFiniteError as err:
        raise TrainingDivergenceError(
            f"online fine-tuning diverged at epoch {len(result.history) + 1}: {err}") from err

    _restore(net.params, best)
    result.seen_scene_ids = (env_id,)
    result.train_time_s = time.perf_counter() - t0
    return net, result
