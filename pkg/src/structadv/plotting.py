"""SVG scatter plots of data, generated samples, and PCA-projected embeddings."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .assessment import embeddings, generate  # noqa: E402
from .train import TrainState, make_splits  # noqa: E402

COLORS = np.array(["tab:blue", "tab:orange"])


def pca_2d(X: np.ndarray) -> np.ndarray:
    """Project rows onto the top two principal axes (first axis has the larger variance)."""
    centered = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def _scatter(path: Path, pts: np.ndarray, colors, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(pts[:, 0], pts[:, 1], s=3, c=colors, linewidths=0, gid="points")
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="datalim")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot(state: TrainState, out_dir, n_generated: int = 2000) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, val = make_splits(state.config)
    paths = [out / "data.svg", out / "generated.svg", out / "embedding_pca.svg"]
    _scatter(paths[0], val.points, COLORS[val.labels], f"training data ({len(val)} validation points)")
    fake = generate(state, n_generated, state.config.eval_seed)
    _scatter(paths[1], fake, "tab:gray", f"generated samples ({n_generated})")
    _scatter(paths[2], pca_2d(embeddings(state, val.points)), COLORS[val.labels], "embedding (PCA)")
    return paths
