"""Training regimes: two-stage with EEG, EEG-random ablation, no-EEG baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ..erp import extract_window, single_trial_amplitude
from . import model as M
from .model import THETA1, THETA2, Arch, ModelParams

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int, stage: str = ""):
        super().__init__(f"{message} (stage {stage!r}, epoch {epoch})")
        self.epoch = epoch
        self.stage = stage


@dataclass
class TrainConfig:
    stage1_epochs: int = 30
    # stage 2 runs on cached yellow-layer features, so extra epochs are cheap
    stage2_epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    momentum: float = 0.9
    weight_init_seed: int = 0
    l2_weight_decay: float = 1e-4
    # full-network passes for the no-EEG regime
    baseline_epochs: int = 60
    # None -> learning_rate
    stage2_learning_rate: Optional[float] = None
    # arithmetic precision used while training; inference is always float64
    dtype: str = "float32"
    conv1: int = 8
    conv2: int = 16
    fc1: int = 128
    fc2: int = 64

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.l2_weight_decay < 0:
            raise ValueError("l2_weight_decay must be nonnegative")

    @property
    def lr2(self) -> float:
        return self.learning_rate if self.stage2_learning_rate is None else self.stage2_learning_rate


@dataclass
class TrainingSet:
    """Array view of paired samples. Row i of every field is one image."""
    images: np.ndarray       # (N, H, W)
    windows: np.ndarray      # (N, T) 400-600 ms source window
    amplitudes: np.ndarray   # (N,) single-trial amplitude targets
    categories: np.ndarray   # (N,) index into labels
    labels: tuple
    qualities: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.images.shape[0]
        for name in ("windows", "amplitudes", "categories"):
            if getattr(self, name).shape[0] != n:
                raise M.ShapeError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")

    def __len__(self) -> int:
        return self.images.shape[0]

    @classmethod
    def from_samples(cls, grouped: dict, amplitude_mode: str = "peak") -> "TrainingSet":
        labels = tuple(grouped)
        images, windows, amps, cats, quals = [], [], [], [], []
        for ci, label in enumerate(labels):
            for s in grouped[label]:
                w = extract_window(s.trial)
                images.append(s.image.pixels)
                windows.append(w.values)
                amps.append(single_trial_amplitude(w, amplitude_mode))
                cats.append(ci)
                quals.append(s.image.quality)
        return cls(np.asarray(images), np.asarray(windows), np.asarray(amps),
                   np.asarray(cats, dtype=np.int64), labels, np.asarray(quals))

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx)
        return TrainingSet(self.images[idx], self.windows[idx], self.amplitudes[idx],
                           self.categories[idx], self.labels,
                           None if self.qualities is None else self.qualities[idx])

    def by_category(self) -> dict[str, np.ndarray]:
        return {lab: self.images[self.categories == ci] for ci, lab in enumerate(self.labels)}

    def arch(self, cfg: TrainConfig) -> Arch:
        return Arch(image_size=self.images.shape[1], conv1=cfg.conv1, conv2=cfg.conv2,
                    fc1=cfg.fc1, fc2=cfg.fc2, source_len=self.windows.shape[1])


@dataclass
class TrainResult:
    params: ModelParams
    loss1_trace: list = field(default_factory=list)
    loss2_trace: list = field(default_factory=list)
    initial_loss1: float = float("nan")
    final_loss1: float = float("nan")
    initial_loss2: float = float("nan")
    final_loss2: float = float("nan")
    stage1_params: Optional[ModelParams] = None


def _sgd(tensors: dict, names: Sequence[str], n: int, epochs: int, cfg: TrainConfig,
         rng: np.random.Generator, step: Callable, stage: str, lr: Optional[float] = None) -> list:
    """Minibatch SGD with momentum; ``step(idx)`` returns (loss, grads)."""
    lr = cfg.learning_rate if lr is None else lr
    vel = {k: np.zeros_like(tensors[k]) for k in names}
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            # divergence is detected below; silence the overflow noise leading up to it
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                loss, g = step(idx)
            if not np.isfinite(loss):
                raise TrainingError("loss became non-finite", epoch, stage)
            total += loss * len(idx)
            for k in names:
                gk = g[k]
                if cfg.l2_weight_decay and k.endswith(".w"):
                    gk = gk + cfg.l2_weight_decay * tensors[k]
                vel[k] *= cfg.momentum
                vel[k] -= lr * gk
                tensors[k] += vel[k]
        trace.append(total / n)
        if not all(np.all(np.isfinite(tensors[k])) for k in names):
            raise TrainingError("parameters became non-finite", epoch, stage)
        log.debug("%s epoch %d loss %.6f", stage, epoch, trace[-1])
    return trace


def _check_batch(data: TrainingSet, cfg: TrainConfig) -> None:
    if len(data) == 0:
        raise ValueError("empty training set")
    if cfg.batch_size > len(data):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training-set size {len(data)}")


def _full_loss2(params: ModelParams, cols1, y) -> float:
    s = M.source_features(params, cols1)
    return M.loss2_value(s @ params.tensors["fc4.w"][:, 0] + params.tensors["fc4.b"][0], y)


def train_two_stage(data: TrainingSet, cfg: TrainConfig,
                    checkpoint_dir: Optional[Path] = None) -> TrainResult:
    """Stage 1 fits theta1 to the source windows (loss1); stage 2 fits theta2
    to the amplitudes (loss2) with theta1 frozen."""
    _check_batch(data, cfg)
    arch = data.arch(cfg)
    dt = np.dtype(cfg.dtype)
    params = ModelParams.init(arch, cfg.weight_init_seed, dtype=dt)
    t = params.tensors
    cols1 = M.conv1_cols(data.images, dt)
    windows = np.ascontiguousarray(data.windows, dtype=dt)
    y = np.asarray(data.amplitudes, dtype=dt)
    rng = np.random.default_rng([cfg.weight_init_seed, 1])
    if checkpoint_dir is not None:
        _save(params, Path(checkpoint_dir) / "init.nsk")

    res = TrainResult(params)
    res.initial_loss1 = M.loss1_value(M.source_features(params, cols1), windows)

    def step1(idx):
        return M._loss_and_grad(t, arch, cols1[idx], windows[idx], "loss1")

    res.loss1_trace = _sgd(t, THETA1, len(data), cfg.stage1_epochs, cfg, rng, step1, "stage1")
    res.stage1_params = params.copy()
    if checkpoint_dir is not None:
        _save(params, Path(checkpoint_dir) / "stage1.nsk")

    # theta1 is frozen, so the yellow-layer activations are fixed inputs to fc4
    feats = M.source_features(params, cols1)
    res.final_loss1 = M.loss1_value(feats, windows)
    res.initial_loss2 = M.loss2_value(feats @ t["fc4.w"][:, 0] + t["fc4.b"][0], y)

    def step2(idx):
        s = feats[idx]
        r = s @ t["fc4.w"][:, 0] + t["fc4.b"][0] - y[idx]
        dy = (2.0 / len(idx)) * r
        return float(np.mean(r * r)), {"fc4.w": (s.T @ dy)[:, None], "fc4.b": np.array([dy.sum()])}

    res.loss2_trace = _sgd(t, THETA2, len(data), cfg.stage2_epochs, cfg, rng, step2, "stage2",
                           lr=cfg.lr2)
    res.final_loss2 = M.loss2_value(feats @ t["fc4.w"][:, 0] + t["fc4.b"][0], y)
    if checkpoint_dir is not None:
        _save(params, Path(checkpoint_dir) / "stage2.nsk")
    return res


def train_baseline(data: TrainingSet, cfg: TrainConfig,
                   checkpoint_dir: Optional[Path] = None) -> TrainResult:
    """All parameters trained on loss2 only. Never touches ``data.windows``."""
    _check_batch(data, cfg)
    arch = data.arch(cfg)
    dt = np.dtype(cfg.dtype)
    params = ModelParams.init(arch, cfg.weight_init_seed, dtype=dt)
    t = params.tensors
    cols1 = M.conv1_cols(data.images, dt)
    y = np.asarray(data.amplitudes, dtype=dt)
    rng = np.random.default_rng([cfg.weight_init_seed, 1])
    if checkpoint_dir is not None:
        _save(params, Path(checkpoint_dir) / "init.nsk")

    res = TrainResult(params)
    res.initial_loss2 = _full_loss2(params, cols1, y)

    def step(idx):
        return M._loss_and_grad(t, arch, cols1[idx], y[idx], "loss2")

    res.loss2_trace = _sgd(t, THETA1 + THETA2, len(data), cfg.baseline_epochs, cfg, rng,
                           step, "baseline")
    res.final_loss2 = _full_loss2(params, cols1, y)
    if checkpoint_dir is not None:
        _save(params, Path(checkpoint_dir) / "final.nsk")
    return res


def shuffle_eeg_within_category(data: TrainingSet, seed: int) -> TrainingSet:
    """Permute the source windows across images of the same category.

    Amplitude targets and category labels keep their original pairing.
    """
    rng = np.random.default_rng([seed, 7])
    perm = np.arange(len(data))
    for ci in range(len(data.labels)):
        idx = np.flatnonzero(data.categories == ci)
        perm[idx] = idx[rng.permutation(idx.size)]
    return TrainingSet(data.images, data.windows[perm], data.amplitudes, data.categories,
                       data.labels, data.qualities)


def predict_synthetic_neuroscore(params: ModelParams, images_by_category: dict) -> dict[str, float]:
    """Mean predicted amplitude per category (float64 arithmetic)."""
    p64 = params.astype(np.float64)
    out = {}
    for label, images in images_by_category.items():
        if len(images) == 0:
            raise ValueError(f"category {label!r} has no images")
        x = M.as_batch(images, params.arch.image_size)
        feats = M.source_features(p64, M.conv1_cols(x))
        y = feats @ p64.tensors["fc4.w"][:, 0] + p64.tensors["fc4.b"][0]
        out[label] = float(np.mean(y))
    return out


def _save(params: ModelParams, path: Path) -> None:
    from .checkpoint import save_params
    path.parent.mkdir(parents=True, exist_ok=True)
    save_params(params, path)
