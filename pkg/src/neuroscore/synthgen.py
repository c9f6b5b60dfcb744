"""Synthetic stand-in for the RSVP experiment.

Each sample has a latent quality in [0, 1]. Quality controls both how
degraded the rendered face-like image is and how large the simulated P300
source response is, so the image -> amplitude mapping is learnable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .erp import SourceTrial

EPOCH_START_MS = 0.0
EPOCH_END_MS = 800.0

# stream ids for per-sample generators
_IMAGE, _TRIAL, _QUALITY = 0, 1, 2


@dataclass
class GenConfig:
    n_per_category: int = 200
    category_quality_means: tuple = (0.35, 0.55, 0.8)
    category_labels: tuple = ("dcgan", "began", "progan")
    quality_spread: float = 0.2
    amplitude_base: float = 0.2
    amplitude_gain: float = 0.6
    amplitude_jitter: float = 0.1  # sd as a fraction of amplitude_gain
    erp_latency_ms: float = 500.0
    erp_width_ms: float = 60.0
    noise_sd: float = 0.1
    fs_hz: float = 250.0
    image_size: int = 32
    jitter_px: float = 3.0
    pixel_noise: float = 0.25
    reference_quality_mean: float = 0.95
    master_seed: int = 0

    def __post_init__(self):
        self.category_quality_means = tuple(float(m) for m in self.category_quality_means)
        self.category_labels = tuple(str(c) for c in self.category_labels)
        means = self.category_quality_means
        if len(self.category_labels) != len(means):
            raise ValueError("category_labels and category_quality_means differ in length")
        if any(not 0.0 < m < 1.0 for m in means):
            raise ValueError("category quality means must lie in (0, 1)")
        if any(b <= a for a, b in zip(means, means[1:])):
            raise ValueError("category quality means must be strictly increasing")
        if self.n_per_category < 10:
            raise ValueError("n_per_category must be at least 10")
        if self.quality_spread <= 0:
            raise ValueError("quality_spread must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.fs_hz <= 0:
            raise ValueError("fs_hz must be positive")
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")

    @property
    def n_categories(self) -> int:
        return len(self.category_quality_means)


@dataclass(frozen=True)
class StimulusImage:
    pixels: np.ndarray
    quality: float
    category: str
    seed: int


@dataclass(frozen=True)
class Sample:
    image: StimulusImage
    trial: SourceTrial


def sample_seed(master_seed: int, category_index: int, i: int) -> int:
    """Child seed for sample ``i`` of a category (32-bit, exact in float64)."""
    ss = np.random.SeedSequence([master_seed, category_index, i])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def _blob(yy, xx, cy, cx, sy, sx):
    return np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))


def gen_image(quality: float, seed: int, cfg: GenConfig, category: str = "") -> StimulusImage:
    """Face-like image: two dark eye blobs and a mouth on a bright oval.

    Blob jitter and additive pixel noise both scale with ``1 - quality``.
    """
    if not 0.0 <= quality <= 1.0:
        raise ValueError(f"quality must be in [0, 1], got {quality}")
    rng = _rng(seed, _IMAGE)
    n = cfg.image_size
    s = n / 32.0
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    degrade = 1.0 - quality
    # always draw the same number of variates so streams stay aligned
    jit = rng.normal(size=(4, 2)) * cfg.jitter_px * s * degrade
    noise = rng.normal(size=(n, n)) * cfg.pixel_noise * degrade

    c = (n - 1) / 2.0
    face = _blob(yy, xx, c + jit[0, 0], c + jit[0, 1], 11 * s, 9 * s)
    left = _blob(yy, xx, c - 4 * s + jit[1, 0], c - 5 * s + jit[1, 1], 1.8 * s, 1.8 * s)
    right = _blob(yy, xx, c - 4 * s + jit[2, 0], c + 5 * s + jit[2, 1], 1.8 * s, 1.8 * s)
    mouth = _blob(yy, xx, c + 6 * s + jit[3, 0], c + jit[3, 1], 1.5 * s, 5 * s)
    pixels = 0.1 + 0.7 * face - 0.55 * (left + right) - 0.45 * mouth + noise
    return StimulusImage(np.clip(pixels, 0.0, 1.0), float(quality), category, int(seed))


def erp_kernel(t_ms: np.ndarray, cfg: GenConfig) -> np.ndarray:
    """Unit-peak Gaussian bump centred on the ERP latency."""
    return np.exp(-0.5 * ((t_ms - cfg.erp_latency_ms) / cfg.erp_width_ms) ** 2)


def epoch_times(cfg: GenConfig) -> np.ndarray:
    n = int(round((EPOCH_END_MS - EPOCH_START_MS) / 1000.0 * cfg.fs_hz))
    return EPOCH_START_MS + 1000.0 * np.arange(n) / cfg.fs_hz


def gen_trial(quality: float, seed: int, cfg: GenConfig) -> SourceTrial:
    """Simulated single-trial P300 source signal over a 0-800 ms epoch."""
    if not 0.0 <= quality <= 1.0:
        raise ValueError(f"quality must be in [0, 1], got {quality}")
    rng = _rng(seed, _TRIAL)
    t = epoch_times(cfg)
    jitter = rng.normal() * cfg.amplitude_jitter * cfg.amplitude_gain
    noise = rng.normal(size=t.size) * cfg.noise_sd
    a = cfg.amplitude_base + cfg.amplitude_gain * quality + jitter
    clean = a * erp_kernel(t, cfg)
    in_window = (t >= 400.0) & (t < 600.0)
    return SourceTrial(
        samples=clean + noise,
        fs_hz=cfg.fs_hz,
        epoch_start_ms=EPOCH_START_MS,
        true_amplitude=float(np.max(clean[in_window])),
    )


def draw_quality(mean: float, seed: int, spread: float) -> float:
    """Normal(mean, spread) truncated to [0, 1] by rejection."""
    rng = _rng(seed, _QUALITY)
    while True:
        q = mean + spread * rng.normal()
        if 0.0 <= q <= 1.0:
            return float(q)


def gen_category(cfg: GenConfig, category_index: int, n: int, mean: float, label: str,
                 master_seed: Optional[int] = None) -> list[Sample]:
    master = cfg.master_seed if master_seed is None else master_seed
    out = []
    for i in range(n):
        seed = sample_seed(master, category_index, i)
        q = draw_quality(mean, seed, cfg.quality_spread)
        out.append(Sample(gen_image(q, seed, cfg, label), gen_trial(q, seed, cfg)))
    return out


def gen_dataset(cfg: GenConfig) -> dict[str, list[Sample]]:
    """``n_per_category`` paired (image, trial) samples for every category."""
    return {
        label: gen_category(cfg, ci, cfg.n_per_category, mean, label)
        for ci, (label, mean) in enumerate(zip(cfg.category_labels, cfg.category_quality_means))
    }


def gen_reference(cfg: GenConfig, n: Optional[int] = None, master_seed: Optional[int] = None
                  ) -> list[Sample]:
    """High-quality "real" images, the comparison set for MMD and FID."""
    n = cfg.n_per_category if n is None else n
    return gen_category(cfg, cfg.n_categories, n, cfg.reference_quality_mean, "real",
                        master_seed=master_seed)
