"""Shallow dual-head convolutional regressor with hand-written backprop.

    image -> conv3x3(c1) -> maxpool -> relu -> conv3x3(c2) -> maxpool -> relu
          -> fc1 + relu -> fc2 + relu -> fc3 (source head, width T)
          -> fc4 (scalar amplitude)

Pooling before the ReLU is equivalent to the usual ReLU-then-pool order and
halves the elementwise work. ``theta1`` is everything up to and including
fc3; ``theta2`` is fc4.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import layers

THETA1 = ("conv1.w", "conv1.b", "conv2.w", "conv2.b",
          "fc1.w", "fc1.b", "fc2.w", "fc2.b", "fc3.w", "fc3.b")
THETA2 = ("fc4.w", "fc4.b")
TRUNK = THETA1[:8]


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Arch:
    image_size: int = 32
    conv1: int = 8
    conv2: int = 16
    fc1: int = 128
    fc2: int = 64
    source_len: int = 50

    def __post_init__(self):
        if self.pool2 < 1:
            raise ShapeError(f"image_size {self.image_size} too small for two conv/pool blocks")
        if self.source_len < 2:
            raise ShapeError("source head needs at least 2 units")

    @property
    def conv1_out(self) -> int:
        return self.image_size - 2

    @property
    def pool1(self) -> int:
        return self.conv1_out // 2

    @property
    def conv2_out(self) -> int:
        return self.pool1 - 2

    @property
    def pool2(self) -> int:
        return self.conv2_out // 2

    @property
    def flat(self) -> int:
        return self.pool2 * self.pool2 * self.conv2

    def shapes(self) -> dict[str, tuple]:
        return {
            "conv1.w": (3, 3, 1, self.conv1), "conv1.b": (self.conv1,),
            "conv2.w": (3, 3, self.conv1, self.conv2), "conv2.b": (self.conv2,),
            "fc1.w": (self.flat, self.fc1), "fc1.b": (self.fc1,),
            "fc2.w": (self.fc1, self.fc2), "fc2.b": (self.fc2,),
            "fc3.w": (self.fc2, self.source_len), "fc3.b": (self.source_len,),
            "fc4.w": (self.source_len, 1), "fc4.b": (1,),
        }


def init_tensors(shapes: dict[str, tuple], seed: int, linear: Iterable[str] = (),
                 dtype=np.float64) -> dict[str, np.ndarray]:
    """Uniform fan-in init: He bound for ReLU layers, LeCun bound for ``linear`` ones."""
    rng = np.random.default_rng([seed, 0])
    linear = set(linear)
    out = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            out[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[:-1]))
        gain = 3.0 if name.split(".")[0] in linear else 6.0
        bound = np.sqrt(gain / fan_in)
        out[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return out


@dataclass
class ModelParams:
    arch: Arch
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.arch.shapes()
        if set(self.tensors) != set(expected):
            raise ShapeError(f"tensor names {sorted(self.tensors)} do not match architecture")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")

    @classmethod
    def init(cls, arch: Arch, seed: int, dtype=np.float64) -> "ModelParams":
        return cls(arch, init_tensors(arch.shapes(), seed, linear=("fc3", "fc4"), dtype=dtype))

    @classmethod
    def zeros(cls, arch: Arch) -> "ModelParams":
        return cls(arch, {k: np.zeros(s) for k, s in arch.shapes().items()})

    @property
    def theta1(self) -> dict[str, np.ndarray]:
        return {k: self.tensors[k] for k in THETA1}

    @property
    def theta2(self) -> dict[str, np.ndarray]:
        return {k: self.tensors[k] for k in THETA2}

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.arch, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


@dataclass(frozen=True)
class ForwardOutput:
    s_pred: np.ndarray
    y_pred: float


def as_batch(images, image_size: int) -> np.ndarray:
    """Stack images (arrays or StimulusImage) into (N, H, W)."""
    if isinstance(images, np.ndarray):
        x = images
    else:
        x = np.stack([getattr(im, "pixels", im) for im in images])
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (image_size, image_size):
        raise ShapeError(f"image shape {x.shape[1:]} does not match {image_size}x{image_size}")
    return x


def conv1_cols(x: np.ndarray, dtype=np.float64) -> np.ndarray:
    """im2col of the input layer, reusable across epochs: (N, Ho*Wo, 9)."""
    N = x.shape[0]
    return layers.im2col3(x.astype(dtype, copy=False)[..., None]).reshape(N, -1, 9)


def trunk_forward(t: dict, cols1: np.ndarray, arch: Arch):
    """Conv stack + fc1 + fc2. ``cols1`` comes from :func:`conv1_cols`."""
    N = cols1.shape[0]
    h1, h2 = arch.conv1_out, arch.conv2_out
    c1 = cols1.reshape(-1, 9)
    o1 = layers.conv_forward(c1, t["conv1.w"], t["conv1.b"], (N, h1, h1))
    m1 = layers.maxpool_forward(o1)
    p1 = np.maximum(m1, 0)
    c2 = layers.im2col3(p1)
    o2 = layers.conv_forward(c2, t["conv2.w"], t["conv2.b"], (N, h2, h2))
    m2 = layers.maxpool_forward(o2)
    p2 = np.maximum(m2, 0)
    f = p2.reshape(N, -1)
    a1 = np.maximum(f @ t["fc1.w"] + t["fc1.b"], 0)
    a2 = np.maximum(a1 @ t["fc2.w"] + t["fc2.b"], 0)
    cache = (c1, o1, m1, p1, c2, o2, m2, p2, f, a1, a2)
    return a2, cache


def trunk_backward(t: dict, cache, da2: np.ndarray, grads: dict) -> None:
    c1, o1, m1, p1, c2, o2, m2, p2, f, a1, a2 = cache
    dz2 = da2 * (a2 > 0)
    grads["fc2.w"] = a1.T @ dz2
    grads["fc2.b"] = dz2.sum(axis=0)
    dz1 = (dz2 @ t["fc2.w"].T) * (a1 > 0)
    grads["fc1.w"] = f.T @ dz1
    grads["fc1.b"] = dz1.sum(axis=0)
    dm2 = (dz1 @ t["fc1.w"].T).reshape(p2.shape) * (m2 > 0)
    do2 = layers.maxpool_backward(dm2, o2, m2)
    dp1, grads["conv2.w"], grads["conv2.b"] = layers.conv_backward(do2, c2, t["conv2.w"], p1.shape)
    dm1 = dp1 * (m1 > 0)
    do1 = layers.maxpool_backward(dm1, o1, m1)
    _, grads["conv1.w"], grads["conv1.b"] = layers.conv_backward(do1, c1, t["conv1.w"])


def heads_forward(t: dict, a2: np.ndarray):
    s = a2 @ t["fc3.w"] + t["fc3.b"]
    y = s @ t["fc4.w"][:, 0] + t["fc4.b"][0]
    return s, y


def forward_batch(params: ModelParams, images, cols1: Optional[np.ndarray] = None):
    """Returns (s_pred (N, T), y_pred (N,))."""
    t = params.tensors
    if cols1 is None:
        x = as_batch(images, params.arch.image_size)
        cols1 = conv1_cols(x, t["conv1.w"].dtype)
    a2, _ = trunk_forward(t, cols1, params.arch)
    return heads_forward(t, a2)


def forward(params: ModelParams, image) -> ForwardOutput:
    s, y = forward_batch(params, [image])
    return ForwardOutput(s[0], float(y[0]))


def source_features(params: ModelParams, cols1: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Yellow-layer activations for many images, computed in chunks."""
    out = []
    for i in range(0, cols1.shape[0], chunk):
        s, _ = heads_forward(params.tensors, trunk_forward(params.tensors, cols1[i:i + chunk],
                                                           params.arch)[0])
        out.append(s)
    return np.concatenate(out) if out else np.zeros((0, params.arch.source_len))


def loss1_value(s_pred: np.ndarray, s_true: np.ndarray) -> float:
    """Mean over the batch of squared L2 distance between source windows."""
    if s_pred.shape != s_true.shape:
        raise ShapeError(f"source window shape {s_true.shape} vs head {s_pred.shape}")
    if s_pred.shape[0] == 0:
        raise ShapeError("empty batch")
    return float(np.sum((s_true - s_pred) ** 2) / s_pred.shape[0])


def loss2_value(y_pred: np.ndarray, y_true: np.ndarray) -> float:
    y_pred = np.asarray(y_pred).ravel()
    y_true = np.asarray(y_true).ravel()
    if y_pred.shape != y_true.shape or y_pred.size == 0:
        raise ShapeError(f"amplitude shape {y_true.shape} vs predictions {y_pred.shape}")
    return float(np.mean((y_true - y_pred) ** 2))


def loss1(params: ModelParams, images, windows) -> float:
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2 or windows.shape[1] != params.arch.source_len:
        raise ShapeError(f"window length {windows.shape[-1]} != source head {params.arch.source_len}")
    s, _ = forward_batch(params, images)
    return loss1_value(s, windows)


def loss2(params: ModelParams, images, amplitudes) -> float:
    _, y = forward_batch(params, images)
    return loss2_value(y, amplitudes)


@dataclass
class Gradient:
    values: dict[str, np.ndarray]
    loss: float
    frozen: frozenset = field(default_factory=frozenset)

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.values.items() if k not in self.frozen}


def _loss_and_grad(t: dict, arch: Arch, cols1, targets, which: str, need_theta1: bool = True):
    a2, cache = trunk_forward(t, cols1, arch)
    s, y = heads_forward(t, a2)
    N = s.shape[0]
    g = {}
    if which == "loss1":
        r = s - targets
        loss = float(np.sum(r * r) / N)
        ds = (2.0 / N) * r
        g["fc4.w"] = np.zeros_like(t["fc4.w"])
        g["fc4.b"] = np.zeros_like(t["fc4.b"])
    elif which == "loss2":
        r = y - targets
        loss = float(np.mean(r * r))
        dy = (2.0 / N) * r
        g["fc4.w"] = (s.T @ dy)[:, None]
        g["fc4.b"] = np.array([dy.sum()])
        ds = np.outer(dy, t["fc4.w"][:, 0])
    else:
        raise ValueError(f"unknown loss {which!r}")
    if need_theta1:
        g["fc3.w"] = a2.T @ ds
        g["fc3.b"] = ds.sum(axis=0)
        trunk_backward(t, cache, ds @ t["fc3.w"].T, g)
    return loss, g


def grad(params: ModelParams, images, targets, which_loss: str,
         frozen: Optional[Iterable[str]] = None) -> Gradient:
    """Exact gradient of ``loss1`` (targets = windows) or ``loss2`` (targets = amplitudes).

    All entries are computed. ``frozen`` names the tensors a training regime
    would hold fixed; by default theta2 for loss1 (it cannot affect loss1)
    and nothing for loss2.
    """
    x = as_batch(images, params.arch.image_size)
    targets = np.asarray(targets, dtype=np.float64)
    if which_loss == "loss1" and (targets.ndim != 2 or targets.shape != (x.shape[0], params.arch.source_len)):
        raise ShapeError(f"windows shape {targets.shape} incompatible with batch/head")
    if which_loss == "loss2" and targets.shape != (x.shape[0],):
        raise ShapeError(f"amplitudes shape {targets.shape} incompatible with batch")
    if frozen is None:
        frozen = THETA2 if which_loss == "loss1" else ()
    cols1 = conv1_cols(x, params.tensors["conv1.w"].dtype)
    loss, g = _loss_and_grad(params.tensors, params.arch, cols1, targets, which_loss)
    return Gradient(g, loss, frozenset(frozen))
