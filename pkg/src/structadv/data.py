"""Double-spiral data and prior sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

T_MIN = np.pi / 4
T_MAX = 4 * np.pi
SLOPE = 1.0 / (4 * np.pi)


@dataclass
class LabeledPoints:
    points: np.ndarray  # (n, 2), standardized
    labels: np.ndarray  # (n,), 0 or 1
    shift: np.ndarray  # standardized = (raw - shift) / scale
    scale: np.ndarray
    t: np.ndarray  # curve parameter of each point

    def raw(self) -> np.ndarray:
        return self.points * self.scale + self.shift

    def __len__(self) -> int:
        return len(self.labels)


def spiral_curve(t, arm: int) -> np.ndarray:
    """Noiseless point(s) on arm 0 or its point reflection (arm 1)."""
    t = np.asarray(t, dtype=np.float64)
    r = SLOPE * t
    pts = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
    return pts if arm == 0 else -pts


def sample_spirals(n: int, noise_sd: float = 0.02, seed: int = 0, transform=None) -> LabeledPoints:
    """Two interleaved Archimedean arms plus isotropic noise, standardized.

    ``transform`` is an optional (shift, scale) pair to reuse another split's
    standardization; by default the sample's own mean and std are used.
    """
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    rng = np.random.default_rng(seed)
    n0 = (n + 1) // 2
    labels = np.repeat([0, 1], [n0, n - n0])
    t = rng.uniform(T_MIN, T_MAX, size=n)
    raw = np.where(labels[:, None] == 0, spiral_curve(t, 0), spiral_curve(t, 1))
    raw = raw + noise_sd * rng.standard_normal((n, 2))
    if transform is None:
        shift, scale = raw.mean(axis=0), raw.std(axis=0)
    else:
        shift, scale = (np.asarray(a, dtype=np.float64) for a in transform)
    return LabeledPoints((raw - shift) / scale, labels, shift, scale, t)


def distance_to_arms(raw_points) -> np.ndarray:
    """Distance of raw-coordinate points to each noiseless arm, shape (n, 2).

    Dense sampling of the curve; resolution is well below 1e-3.
    """
    grid = np.linspace(T_MIN, T_MAX, 20000)
    pts = np.asarray(raw_points, dtype=np.float64)
    out = np.empty((len(pts), 2))
    for arm in (0, 1):
        curve = spiral_curve(grid, arm)
        for start in range(0, len(pts), 512):
            chunk = pts[start:start + 512]
            d2 = ((chunk[:, None, :] - curve[None, :, :]) ** 2).sum(-1)
            out[start:start + 512, arm] = np.sqrt(d2.min(axis=1))
    return out


def sample_prior(n: int, dim: int, seed) -> np.ndarray:
    if n < 1 or dim < 1:
        raise ValueError(f"prior shape must be positive, got ({n}, {dim})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((n, dim))


def export_csv(data: LabeledPoints, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label"])
        for (x, y), lab in zip(data.points, data.labels):
            writer.writerow([repr(float(x)), repr(float(y)), int(lab)])
