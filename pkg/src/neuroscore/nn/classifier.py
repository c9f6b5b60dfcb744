"""Category classifier on the same conv trunk.

Supplies p(y|x) for the Inception Score analog and 64-d penultimate
features for MMD and FID.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from .model import TRUNK, Arch, init_tensors
from .train import TrainConfig, _sgd


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Classifier:
    arch: Arch
    tensors: dict
    labels: tuple

    @classmethod
    def init(cls, arch: Arch, labels, seed: int, dtype=np.float64) -> "Classifier":
        shapes = {k: v for k, v in arch.shapes().items() if k in TRUNK}
        shapes["cls.w"] = (arch.fc2, len(labels))
        shapes["cls.b"] = (len(labels),)
        return cls(arch, init_tensors(shapes, seed, linear=("cls",), dtype=dtype), tuple(labels))

    def _trunk(self, images, chunk: int = 256) -> np.ndarray:
        x = M.as_batch(images, self.arch.image_size)
        t = {k: v.astype(np.float64) for k, v in self.tensors.items()}
        out = [M.trunk_forward(t, M.conv1_cols(x[i:i + chunk]), self.arch)[0]
               for i in range(0, x.shape[0], chunk)]
        return np.concatenate(out)

    def features(self, images) -> np.ndarray:
        """Penultimate (fc2) activations, shape (n, fc2)."""
        return self._trunk(images)

    def predict_proba(self, images) -> np.ndarray:
        a2 = self._trunk(images)
        return softmax(a2 @ self.tensors["cls.w"].astype(np.float64)
                       + self.tensors["cls.b"].astype(np.float64))


def _ce_and_grad(t: dict, arch: Arch, cols1, y: np.ndarray):
    a2, cache = M.trunk_forward(t, cols1, arch)
    p = softmax(a2 @ t["cls.w"] + t["cls.b"])
    n = y.size
    loss = float(-np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300))))
    dz = p.copy()
    dz[np.arange(n), y] -= 1.0
    dz /= n
    g = {"cls.w": a2.T @ dz, "cls.b": dz.sum(axis=0)}
    M.trunk_backward(t, cache, dz @ t["cls.w"].T, g)
    return loss, g


def train_classifier(images, labels, label_names, cfg: TrainConfig, epochs: int | None = None
                     ) -> Classifier:
    """Softmax-cross-entropy training of trunk + head on integer ``labels``."""
    x = images if isinstance(images, np.ndarray) else np.stack([getattr(im, "pixels", im) for im in images])
    y = np.asarray(labels, dtype=np.int64)
    if len(label_names) < 2:
        raise ValueError("classifier needs at least 2 categories")
    if y.shape[0] != x.shape[0]:
        raise ValueError("one label per image required")
    arch = Arch(image_size=x.shape[1], conv1=cfg.conv1, conv2=cfg.conv2, fc1=cfg.fc1,
                fc2=cfg.fc2, source_len=2)
    dt = np.dtype(cfg.dtype)
    clf = Classifier.init(arch, label_names, cfg.weight_init_seed, dtype=dt)
    cols1 = M.conv1_cols(x, dt)
    rng = np.random.default_rng([cfg.weight_init_seed, 2])
    names = tuple(clf.tensors)
    epochs = cfg.stage1_epochs if epochs is None else epochs
    _sgd(clf.tensors, names, x.shape[0], epochs, cfg, rng,
         lambda idx: _ce_and_grad(clf.tensors, arch, cols1[idx], y[idx]), "classifier")
    return clf
