"""P300 source-signal windowing, single-trial amplitudes and Neuroscore."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

WINDOW_START_MS = 400.0
WINDOW_END_MS = 600.0


class CoverageError(ValueError):
    pass


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class SourceTrial:
    samples: np.ndarray
    fs_hz: float
    epoch_start_ms: float = 0.0
    true_amplitude: Optional[float] = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.fs_hz <= 0:
            raise InputError(f"fs_hz must be positive, got {self.fs_hz}")
        if samples.size == 0 or not np.all(np.isfinite(samples)):
            raise InputError("samples must be nonempty and finite")
        object.__setattr__(self, "samples", samples)

    @property
    def epoch_end_ms(self) -> float:
        return self.epoch_start_ms + 1000.0 * self.samples.size / self.fs_hz


@dataclass(frozen=True)
class WindowedSource:
    values: np.ndarray
    t_start_ms: float = WINDOW_START_MS
    t_end_ms: float = WINDOW_END_MS


@dataclass(frozen=True)
class CategoryScores:
    category: str
    amplitudes: Sequence[float]


def window_length(fs_hz: float) -> int:
    """Number of samples T in the half-open 400-600 ms window."""
    return int(round((WINDOW_END_MS - WINDOW_START_MS) / 1000.0 * fs_hz))


def window_slice(fs_hz: float, epoch_start_ms: float, n_samples: int) -> slice:
    T = window_length(fs_hz)
    if T < 2:
        raise CoverageError(f"sampling rate {fs_hz} Hz gives a window of {T} samples")
    # first sample with timestamp >= 400 ms
    start = math.ceil((WINDOW_START_MS - epoch_start_ms) * fs_hz / 1000.0 - 1e-9)
    if start < 0 or start + T > n_samples:
        end_ms = epoch_start_ms + 1000.0 * n_samples / fs_hz
        raise CoverageError(
            f"epoch [{epoch_start_ms}, {end_ms}) ms does not cover "
            f"[{WINDOW_START_MS}, {WINDOW_END_MS}) ms"
        )
    return slice(start, start + T)


def extract_window(trial: SourceTrial) -> WindowedSource:
    sl = window_slice(trial.fs_hz, trial.epoch_start_ms, trial.samples.size)
    return WindowedSource(trial.samples[sl].copy())


def single_trial_amplitude(w: WindowedSource | np.ndarray, mode: str = "peak") -> float:
    """P300 amplitude of one windowed trial: the window peak by default.

    ``mode="mean"`` averages the window instead.
    """
    values = w.values if isinstance(w, WindowedSource) else np.asarray(w)
    if mode == "peak":
        return float(np.max(values))
    if mode == "mean":
        return float(np.mean(values))
    raise InputError(f"unknown amplitude mode {mode!r}")


def neuroscore(scores: CategoryScores | Sequence[float]) -> float:
    amps = scores.amplitudes if isinstance(scores, CategoryScores) else scores
    amps = np.asarray(amps, dtype=np.float64).ravel()
    if amps.size == 0:
        raise InputError("neuroscore of an empty category")
    return float(np.mean(amps))


def neuroscore_error(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Sum over categories of |predicted - true| Neuroscore."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size or pred.size < 1:
        raise InputError(f"length mismatch: {pred.size} vs {truth.size}")
    return float(np.sum(np.abs(pred - truth)))
