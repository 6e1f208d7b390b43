"""Representation metrics: spherical K-means, optimal assignment, NMI, purity, linear probe."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)


def _unit(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def _seed_centroids(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with cosine distance."""
    n = len(X)
    chosen = [int(rng.integers(n))]
    dist = 1.0 - X @ X[chosen[0]]
    for _ in range(1, k):
        w = np.maximum(dist, 0.0) ** 2
        total = w.sum()
        idx = int(rng.choice(n, p=w / total)) if total > 0 else int(rng.integers(n))
        chosen.append(idx)
        dist = np.minimum(dist, 1.0 - X @ X[idx])
    return X[chosen].copy()


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iters: int) -> ClusterResult:
    k = len(centroids)
    assign = None
    history: list[float] = []
    for _ in range(max_iters):
        sims = X @ centroids.T
        new_assign = sims.argmax(axis=1)
        inertia = float((1.0 - sims[np.arange(len(X)), new_assign]).sum())
        if history and inertia > history[-1] + 1e-9 * max(1.0, abs(history[-1])):
            raise AssertionError(f"spherical k-means inertia increased: {history[-1]} -> {inertia}")
        history.append(inertia)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        best_cos = sims[np.arange(len(X)), assign]
        for c in range(k):
            members = assign == c
            total = X[members].sum(axis=0)
            norm = np.linalg.norm(total)
            if members.any() and norm > 1e-12:
                centroids[c] = total / norm
                continue
            # empty (or cancelling) cluster: reseed at the worst-served point
            far = int(best_cos.argmin())
            centroids[c] = X[far]
            best_cos[far] = np.inf
            assign[far] = c
    sims = X @ centroids.T
    assign = sims.argmax(axis=1)
    inertia = float((1.0 - sims[np.arange(len(X)), assign]).sum())
    if inertia > history[-1] + 1e-9 * max(1.0, abs(history[-1])):
        raise AssertionError(f"spherical k-means inertia increased: {history[-1]} -> {inertia}")
    history.append(inertia)
    return ClusterResult(assign, centroids, inertia, history)


EXHAUSTIVE_SEEDINGS = 256


def spherical_kmeans(features, k: int, max_iters: int = 100, seed: int = 0, n_init: int | None = None) -> ClusterResult:
    """Spherical K-means on unit rows, keeping the lowest-inertia start.

    ``n_init=None`` picks automatically: when there are at most
    ``EXHAUSTIVE_SEEDINGS`` ways to choose K rows, every K-subset is used as a
    start; otherwise 10 k-means++ starts.  An explicit ``n_init`` always uses
    that many k-means++ starts.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be a 2-d array")
    if len(X) < k:
        raise ValueError(f"need at least K={k} rows, got {len(X)}")
    if k < 1 or (n_init is not None and n_init < 1):
        raise ValueError("K and n_init must be positive")
    if not np.allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-6):
        raise ValueError("features must be L2-normalized row-wise")
    rng = np.random.default_rng(seed)
    if n_init is None and math.comb(len(X), k) <= EXHAUSTIVE_SEEDINGS:
        starts = (X[list(idx)].copy() for idx in itertools.combinations(range(len(X)), k))
    else:
        starts = (_seed_centroids(X, k, rng) for _ in range(n_init or 10))
    best = None
    for start in starts:
        res = _lloyd(X, start, max_iters)
        if best is None or res.inertia < best.inertia - 1e-12:
            best = res
    return best


def kmeans_inertia(X: np.ndarray, assign: np.ndarray, k: int) -> float:
    """Inertia of a partition with renormalized-mean centroids."""
    total = 0.0
    for c in range(k):
        members = X[assign == c]
        if len(members):
            total += len(members) - np.linalg.norm(members.sum(axis=0))
    return float(total)


def _encode(labels) -> np.ndarray:
    return np.unique(np.asarray(labels), return_inverse=True)[1].reshape(-1)


def contingency(pred, true) -> np.ndarray:
    p, t = _encode(pred), _encode(true)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def optimal_assignment_accuracy(pred, true) -> float:
    """Accuracy under the cluster-to-class matching that maximizes agreement."""
    pred, true = np.asarray(pred), np.asarray(true)
    if len(pred) == 0:
        raise ValueError("empty label arrays")
    if len(pred) != len(true):
        raise ValueError("label arrays differ in length")
    table = contingency(pred, true)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / len(pred))


def nmi(pred, true) -> float:
    """I(pred; true) / sqrt(H(pred) H(true)), natural logs; 0 if either entropy is 0."""
    if len(pred) != len(true):
        raise ValueError("label arrays differ in length")
    table = contingency(pred, true).astype(np.float64)
    n = table.sum()
    pxy = table / n
    px, py = pxy.sum(axis=1), pxy.sum(axis=0)
    hx = -np.sum(px[px > 0] * np.log(px[px > 0]))
    hy = -np.sum(py[py > 0] * np.log(py[py > 0]))
    if hx <= 0 or hy <= 0:
        return 0.0
    nz = pxy > 0
    mi = np.sum(pxy[nz] * np.log(pxy[nz] / np.outer(px, py)[nz]))
    return float(min(max(mi / np.sqrt(hx * hy), 0.0), 1.0))


def purity(pred, true) -> float:
    if len(pred) != len(true):
        raise ValueError("label arrays differ in length")
    table = contingency(pred, true)
    return float(table.max(axis=1).sum() / len(pred))


@dataclass(frozen=True)
class ProbeConfig:
    C: float = 1.0
    epochs: int = 500
    lr: float = 0.5


def linear_probe(train_feats, train_labels, val_feats, val_labels, config: ProbeConfig = ProbeConfig()) -> float:
    """Validation accuracy of a multiclass (Crammer-Singer) hinge classifier.

    Full-batch subgradient descent on
    ``||W||^2 / (2 C n) + mean_i max(0, 1 + max_{j != y_i} s_ij - s_iy_i)``
    over standardized features; the bias is not regularized.
    """
    Xtr = np.asarray(train_feats, dtype=np.float64)
    Xva = np.asarray(val_feats, dtype=np.float64)
    classes, ytr = np.unique(np.asarray(train_labels), return_inverse=True)
    if len(classes) < 2:
        raise ValueError("linear probe needs at least two training classes")
    if not (np.all(np.isfinite(Xtr)) and np.all(np.isfinite(Xva))):
        raise ValueError("features must be finite")
    mu, sd = Xtr.mean(axis=0), Xtr.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    Xtr, Xva = (Xtr - mu) / sd, (Xva - mu) / sd
    n, d = Xtr.shape
    c = len(classes)
    reg = 1.0 / (config.C * n)
    W, b = np.zeros((d, c)), np.zeros(c)
    rows = np.arange(n)
    onehot = np.eye(c)[ytr]
    for epoch in range(config.epochs):
        scores = Xtr @ W + b
        margins = scores + 1.0 - onehot
        margins[rows, ytr] = -np.inf
        rival = margins.argmax(axis=1)
        active = (margins[rows, rival] - scores[rows, ytr]) > 0
        coef = np.zeros((n, c))
        coef[rows[active], rival[active]] += 1.0
        coef[rows[active], ytr[active]] -= 1.0
        gW = Xtr.T @ coef / n + reg * W
        gb = coef.mean(axis=0)
        eta = config.lr / np.sqrt(epoch + 1.0)
        W -= eta * gW
        b -= eta * gb
    pred = classes[(Xva @ W + b).argmax(axis=1)]
    return float(np.mean(pred == np.asarray(val_labels)))


@dataclass
class KMeansSummary:
    mean: float
    sd: float
    accuracies: list[float]
    best: ClusterResult


def kmeans_protocol(features, true_labels, k: int, repeats: int = 20, seed: int = 0) -> KMeansSummary:
    """Mean optimal-assignment accuracy of ``repeats`` independently seeded runs."""
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    X = _unit(np.asarray(features, dtype=np.float64))
    accs, best = [], None
    for r in range(repeats):
        res = spherical_kmeans(X, k, seed=seed + r, n_init=1)
        accs.append(optimal_assignment_accuracy(res.assignments, true_labels))
        if best is None or res.inertia < best.inertia:
            best = res
    return KMeansSummary(float(np.mean(accs)), float(np.std(accs)), accs, best)
