"""Kernel k-means over actuator profiles and per-frame class labeling.

All distances live in the kernel-induced feature space and are computed
from the Gram matrix only. Initialization is kmeans++-style in that
space, best of R restarts by final objective (ties broken by lowest
restart index so results are reproducible).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


class ClusterError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    actuator_to_class: dict[str, int]
    K: int
    inertia_history: list[float] = field(default_factory=list)
    objective: float = float("nan")
    reseeds: int = 0

    def labels_for(self, names: list[str]) -> np.ndarray:
        return np.array([self.actuator_to_class[n] for n in names], dtype=int)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"K": self.K, "classes": self.actuator_to_class,
                       "objective": self.objective}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def from_json(path) -> "ClusterAssignment":
        with open(path) as fh:
            raw = json.load(fh)
        return ClusterAssignment({k: int(v) for k, v in raw["classes"].items()},
                                 int(raw["K"]), objective=float(raw["objective"]))


def standardize_columns(values: np.ndarray) -> np.ndarray:
    """Per-column z-score (population std). Constant columns become 0."""
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (values - mean) / std


def actuator_profiles(table, max_points: int = 2000):
    """Profile per actuator: its standardized value series, subsampled to
    at most max_points evenly spaced rows. Returns (names, n x d matrix)."""
    n = table.n_rows
    if n > max_points:
        idx = np.linspace(0, n - 1, max_points).round().astype(int)
    else:
        idx = np.arange(n)
    std_vals = standardize_columns(table.values)
    return list(table.feature_names), std_vals[idx].T.copy()


def gram_matrix(profiles: np.ndarray, kernel: str = "linear",
                gamma: float | None = None) -> np.ndarray:
    if kernel == "linear":
        return profiles @ profiles.T
    if kernel == "rbf":
        sq = ((profiles[:, None, :] - profiles[None, :, :]) ** 2).sum(axis=2)
        if gamma is None:
            off = sq[~np.eye(len(sq), dtype=bool)]
            med = np.median(off[off > 0]) if (off > 0).any() else 1.0
            gamma = 1.0 / med
        if gamma <= 0:
            raise ClusterError(f"rbf gamma must be > 0, got {gamma}")
        return np.exp(-gamma * sq)
    raise ClusterError(f"unknown kernel {kernel!r}")


def _point_to_cluster_dist(gram, assign, k_count):
    """dist^2 from every point to every implicit cluster centroid."""
    n = gram.shape[0]
    K = k_count
    onehot = np.zeros((n, K))
    onehot[np.arange(n), assign] = 1.0
    sizes = onehot.sum(axis=0)
    safe = np.maximum(sizes, 1.0)
    # term2[i,k] = 2/|C_k| sum_{j in C_k} K_ij ; term3[k] = sum_{j,l in C_k} K_jl / |C_k|^2
    cross = gram @ onehot
    term2 = 2.0 * cross / safe
    term3 = np.einsum("ik,ik->k", cross, onehot) / (safe * safe)
    d = np.diag(gram)[:, None] - term2 + term3[None, :]
    d[:, sizes == 0] = np.inf
    return np.maximum(d, 0.0)


def _kmeanspp_assign(gram, K, rng):
    """Seed centers kmeans++-style in kernel space, then assign each point
    to its nearest seed."""
    n = gram.shape[0]
    diag = np.diag(gram)
    centers = [int(rng.integers(n))]
    # dist^2 to a singleton center c: K_ii - 2 K_ic + K_cc
    d = diag - 2.0 * gram[:, centers[0]] + diag[centers[0]]
    d = np.maximum(d, 0.0)
    while len(centers) < K:
        total = d.sum()
        if total <= 0:
            # all remaining points coincide with a center; spread arbitrarily
            candidates = [i for i in range(n) if i not in centers]
            centers.append(candidates[int(rng.integers(len(candidates)))])
        else:
            pick = int(rng.choice(n, p=d / total))
            centers.append(pick)
        dc = diag - 2.0 * gram[:, centers[-1]] + diag[centers[-1]]
        d = np.minimum(d, np.maximum(dc, 0.0))
    dists = np.stack([diag - 2.0 * gram[:, c] + diag[c] for c in centers], axis=1)
    return np.argmin(dists, axis=1)


def _lloyd_kernel(gram, K, assign, max_iter):
    """Iterate assignment until fixed point; returns per-iteration objective
    (non-increasing) and the number of empty-cluster reseeds."""
    history = []
    reseeds = 0
    assign = assign.copy()
    for _ in range(max_iter):
        d = _point_to_cluster_dist(gram, assign, K)
        new_assign = np.argmin(d, axis=1)
        obj = float(d[np.arange(len(assign)), new_assign].sum())
        history.append(obj)
        # re-seed any emptied cluster with the farthest point
        for k in range(K):
            if not (new_assign == k).any():
                cur = _point_to_cluster_dist(gram, new_assign, K)
                far = int(np.argmax(cur[np.arange(len(new_assign)), new_assign]))
                new_assign[far] = k
                reseeds += 1
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign, history, reseeds


def kernel_kmeans(profiles: np.ndarray, K: int, kernel: str = "linear",
                  gamma: float | None = None, seed: int = 0,
                  max_iter: int = 100, n_restarts: int = 10,
                  names: list[str] | None = None,
                  init_assignment: np.ndarray | None = None
                  ) -> ClusterAssignment:
    """Cluster row vectors of `profiles` into K groups in kernel space.

    With init_assignment given, runs a single deterministic Lloyd pass
    from that assignment (used by the equivalence tests); otherwise the
    best of n_restarts seeded kmeans++ starts wins.
    """
    profiles = np.asarray(profiles, dtype=float)
    n = profiles.shape[0]
    if K > n:
        raise ClusterError(f"K={K} exceeds number of profiles {n}")
    if K < 1:
        raise ClusterError("K must be >= 1")
    gram = gram_matrix(profiles, kernel, gamma)
    names = names or [f"p{i}" for i in range(n)]

    if init_assignment is not None:
        init = np.asarray(init_assignment, dtype=int)
        runs = [_lloyd_kernel(gram, K, init, max_iter)]
    else:
        seeds = np.random.SeedSequence(seed).spawn(n_restarts)
        runs = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            init = _kmeanspp_assign(gram, K, rng)
            runs.append(_lloyd_kernel(gram, K, init, max_iter))

    best = min(range(len(runs)), key=lambda i: (runs[i][1][-1], i))
    assign, history, reseeds = runs[best]
    if np.diff(history).max(initial=-np.inf) > 1e-9:
        raise RuntimeError("kernel k-means objective increased")
    return ClusterAssignment(
        {names[i]: int(assign[i]) for i in range(n)}, K,
        inertia_history=history, objective=history[-1], reseeds=reseeds)


def label_frames(std_values: np.ndarray, actuator_names: list[str],
                 assignment: ClusterAssignment) -> np.ndarray:
    """Per-timestep class: argmax over classes of the mean standardized
    activation of that class's actuators; ties go to the lowest class id.

    std_values must already be column-standardized (see
    standardize_columns)."""
    class_ids = assignment.labels_for(actuator_names)
    K = assignment.K
    means = np.full((std_values.shape[0], K), -np.inf)
    for k in range(K):
        members = class_ids == k
        if members.any():
            means[:, k] = std_values[:, members].mean(axis=1)
    return np.argmax(means, axis=1)


def class_command_map(std_values: np.ndarray, labels: np.ndarray, K: int
                      ) -> np.ndarray:
    """K x n matrix: per-class mean standardized actuator vector, the
    default command table for the simulator."""
    out = np.zeros((K, std_values.shape[1]))
    for k in range(K):
        sel = labels == k
        if sel.any():
            out[k] = std_values[sel].mean(axis=0)
    return out


def silhouette_from_gram(gram: np.ndarray, assign: np.ndarray) -> float:
    """Mean silhouette using kernel-space distances."""
    n = gram.shape[0]
    diag = np.diag(gram)
    d = np.sqrt(np.maximum(diag[:, None] - 2.0 * gram + diag[None, :], 0.0))
    ks = np.unique(assign)
    if len(ks) < 2:
        return 0.0
    scores = np.zeros(n)
    for i in range(n):
        own = assign == assign[i]
        own[i] = False
        a = d[i, own].mean() if own.any() else 0.0
        b = min(d[i, assign == k].mean() for k in ks if k != assign[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def k_selection_report(profiles: np.ndarray, k_range, kernel: str = "linear",
                       gamma: float | None = None, seed: int = 0,
                       n_restarts: int = 10) -> list[dict]:
    """One row per K: best-of-restarts objective and silhouette."""
    gram = gram_matrix(profiles, kernel, gamma)
    rows = []
    for K in k_range:
        if not 2 <= K <= profiles.shape[0]:
            raise ClusterError(f"K={K} outside [2, {profiles.shape[0]}]")
        res = kernel_kmeans(profiles, K, kernel, gamma, seed=seed,
                            n_restarts=n_restarts)
        assign = np.array([res.actuator_to_class[f"p{i}"]
                           for i in range(profiles.shape[0])])
        rows.append({"K": K, "objective": res.objective,
                     "silhouette": silhouette_from_gram(gram, assign)})
    return rows


def write_k_selection_csv(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["K", "objective", "silhouette"])
        writer.writeheader()
        writer.writerows(rows)
