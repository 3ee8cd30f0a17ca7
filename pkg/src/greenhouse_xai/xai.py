"""Model-agnostic and model-inherent attributions, fusion, and pruning.

Three attribution routes share one masking vocabulary: a block is either
one sensor (all timesteps jointly) or one (timestep, sensor) cell.
Masked blocks are replaced from a background/training distribution, so
attributions measure what the instance's own values contribute over the
marginal expectation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dataio import WindowedDataset
from .tft import ModelConfig, TftModel
from .train import TrainConfig, evaluate, predict, train

FEATURE = "feature"
FEATURE_TIMESTEP = "feature_timestep"


class XaiError(ValueError):
    pass


@dataclass
class Attribution:
    method: str                       # vsn | shap | lime
    scope: str                        # global | class:<c> | instance:<i>
    granularity: str                  # feature | feature_timestep
    feature_names: list[str]
    scores: np.ndarray                # (F,) or (w, F)
    phi0: float | None = None
    seed: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not np.isfinite(self.scores).all():
            raise XaiError("attribution scores must be finite")
        if self.granularity == FEATURE and self.scores.ndim != 1:
            raise XaiError("feature granularity needs a flat score vector")
        if self.granularity == FEATURE_TIMESTEP and self.scores.ndim != 2:
            raise XaiError("feature_timestep granularity needs (w, F) scores")

    def per_feature(self) -> np.ndarray:
        """Reduce to one magnitude per sensor (mean |score| over time)."""
        if self.scores.ndim == 1:
            return np.abs(self.scores)
        return np.abs(self.scores).mean(axis=0)

    def top_blocks(self, n: int) -> list[tuple[str, float]]:
        if self.scores.ndim == 1:
            names = self.feature_names
            flat = self.scores
        else:
            w = self.scores.shape[0]
            names = [f"{f}[t-{w - 1 - t}]" for t in range(w)
                     for f in self.feature_names]
            flat = self.scores.reshape(-1)
        order = np.argsort(-np.abs(flat), kind="stable")[:n]
        return [(names[i], float(flat[i])) for i in order]

    def to_json(self, path):
        blob = {
            "method": self.method,
            "scope": self.scope,
            "granularity": self.granularity,
            "feature_names": self.feature_names,
            "scores": self.scores.tolist(),
            "seed": self.seed,
            "params": self.params,
        }
        if self.phi0 is not None:
            blob["phi0"] = self.phi0
        with open(path, "w") as fh:
            json.dump(blob, fh, indent=2)
            fh.write("\n")


# -- masking -----------------------------------------------------------------


def _mask_grid(mask: np.ndarray, window: int, n_features: int,
               granularity: str) -> np.ndarray:
    if granularity == FEATURE:
        return np.broadcast_to(mask.astype(bool), (window, n_features))
    return mask.astype(bool).reshape(window, n_features)


def _coalition_values(predict_fn, instance, background, masks, target_class,
                      granularity, chunk: int = 256) -> np.ndarray:
    """value(mask) = mean class probability over the background with
    absent blocks replaced by background rows."""
    w, f = instance.shape
    b = background.shape[0]
    vals = np.empty(len(masks))
    for lo in range(0, len(masks), chunk):
        part = masks[lo:lo + chunk]
        xs = np.empty((len(part), b, w, f))
        for i, mask in enumerate(part):
            grid = _mask_grid(np.asarray(mask), w, f, granularity)
            xs[i] = np.where(grid, instance, background)
        preds = np.asarray(predict_fn(xs.reshape(-1, w, f)))
        if preds.ndim == 2:
            preds = preds[:, target_class]
        vals[lo:lo + len(part)] = preds.reshape(len(part), b).mean(axis=1)
    return vals


def _predict_scalar(predict_fn, x, target_class):
    preds = np.asarray(predict_fn(x[None] if x.ndim == 2 else x))
    if preds.ndim == 2:
        preds = preds[:, target_class]
    return preds


# -- Shapley values ------------------------------------------------------------


def exact_shapley(value_fn, n_features: int) -> tuple[np.ndarray, float]:
    """Classical Shapley formula over all 2^n coalitions.

    value_fn maps a tuple of present feature indices to a scalar.
    Returns (phi, phi0) with phi0 = value(empty set).
    """
    n = n_features
    if n > 12:
        raise XaiError(
            f"exact enumeration infeasible for n={n} (> 12); "
            "use sampled kernel_shap"
        )
    values = {}
    for bits in range(1 << n):
        subset = tuple(i for i in range(n) if bits >> i & 1)
        values[bits] = float(value_fn(subset))
    fact = [math.factorial(i) for i in range(n + 1)]
    phi = np.zeros(n)
    for i in range(n):
        for bits in range(1 << n):
            if bits >> i & 1:
                continue
            s = bin(bits).count("1")
            weight = fact[s] * fact[n - s - 1] / fact[n]
            phi[i] += weight * (values[bits | (1 << i)] - values[bits])
    return phi, values[0]


def shapley_kernel_weight(n: int, s: int) -> float:
    return (n - 1) / (math.comb(n, s) * s * (n - s))


def _solve_constrained_wls(masks, values, weights, phi0, delta):
    """Least squares for phi with the efficiency constraint sum(phi) =
    delta eliminated through the last feature."""
    z = masks.astype(float)
    n = z.shape[1]
    y = values - phi0 - z[:, -1] * delta
    a = z[:, :-1] - z[:, -1:]
    aw = a * weights[:, None]
    lhs = aw.T @ a
    rhs = aw.T @ y
    head = np.linalg.solve(lhs, rhs)
    phi = np.empty(n)
    phi[:-1] = head
    phi[-1] = delta - head.sum()
    return phi


def kernel_shap(predict_fn, background: np.ndarray, instance: np.ndarray,
                target_class: int, n_coalitions: int = 2048, seed: int = 0,
                granularity: str = FEATURE,
                feature_names: list[str] | None = None,
                max_retries: int = 3) -> Attribution:
    """Shapley-kernel weighted least squares with the efficiency identity
    enforced exactly.

    With n_coalitions >= 2^n - 2 every non-trivial coalition enters once
    at its exact kernel weight, which reproduces brute-force Shapley
    values. Otherwise coalitions are sampled from the kernel measure.
    """
    instance = np.asarray(instance, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    w, f = instance.shape
    n = f if granularity == FEATURE else w * f
    names = feature_names or [f"x{i}" for i in range(f)]

    fx = float(_predict_scalar(predict_fn, instance, target_class)[0])
    phi0 = float(np.mean(_predict_scalar(predict_fn, background, target_class)))
    delta = fx - phi0

    def finish(phi, mode):
        scores = phi if granularity == FEATURE else phi.reshape(w, f)
        return Attribution(
            method="shap", scope="instance", granularity=granularity,
            feature_names=names, scores=scores, phi0=phi0, seed=seed,
            params={"n_coalitions": n_coalitions, "mode": mode,
                    "background_size": int(background.shape[0]),
                    "target_class": int(target_class)})

    if n == 1:
        return finish(np.array([delta]), "exact")

    full = (1 << n) - 2 if n < 63 else np.inf
    if n_coalitions >= full:
        masks = np.zeros((full, n), dtype=bool)
        weights = np.empty(full)
        r = 0
        for bits in range(1, (1 << n) - 1):
            m = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
            masks[r] = m
            weights[r] = shapley_kernel_weight(n, int(m.sum()))
            r += 1
        values = _coalition_values(predict_fn, instance, background, masks,
                                   target_class, granularity)
        phi = _solve_constrained_wls(masks, values, weights, phi0, delta)
        return finish(phi, "exact")

    sizes = np.arange(1, n)
    size_probs = (n - 1) / (sizes * (n - sizes))
    size_probs = size_probs / size_probs.sum()
    last_err = None
    for attempt in range(max_retries):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=seed).spawn(attempt + 1)[attempt])
        masks = np.zeros((n_coalitions, n), dtype=bool)
        drawn_sizes = rng.choice(sizes, size=n_coalitions, p=size_probs)
        for i, s in enumerate(drawn_sizes):
            masks[i, rng.choice(n, size=s, replace=False)] = True
        values = _coalition_values(predict_fn, instance, background, masks,
                                   target_class, granularity)
        try:
            phi = _solve_constrained_wls(masks, values,
                                         np.ones(n_coalitions), phi0, delta)
            return finish(phi, "sampled")
        except np.linalg.LinAlgError as err:
            last_err = err
    raise XaiError(
        f"singular kernel regression after {max_retries} resamples; "
        f"increase n_coalitions (got {n_coalitions} for {n} blocks)"
    ) from last_err


def shap_value_fn(predict_fn, instance, background, target_class,
                  granularity=FEATURE):
    """Subset -> value closure matching kernel_shap's masking; this is
    what exact_shapley enumerates in the oracle comparison."""
    instance = np.asarray(instance, dtype=np.float64)
    w, f = instance.shape
    n = f if granularity == FEATURE else w * f

    def value(subset) -> float:
        mask = np.zeros(n, dtype=bool)
        mask[list(subset)] = True
        return float(_coalition_values(predict_fn, instance, background,
                                       [mask], target_class, granularity)[0])

    return value


# -- LIME ------------------------------------------------------------------------


def lime_explain(predict_fn, train_mean: np.ndarray, train_std: np.ndarray,
                 instance: np.ndarray, target_class: int,
                 n_perturbations: int = 512, sigma_l: float | None = None,
                 n_top: int = 10, seed: int = 0, granularity: str = FEATURE,
                 feature_names: list[str] | None = None,
                 ridge_lambda: float = 1e-2) -> Attribution:
    """Local ridge surrogate on binary presence masks.

    Perturbed blocks are resampled from the training marginal
    N(mean_f, std_f^2); the surrogate is fit with weights
    exp(-d^2 / sigma_l^2) where d is the masked fraction. Returns signed
    coefficients; the top-n_top blocks land in params["top"].
    """
    instance = np.asarray(instance, dtype=np.float64)
    w, f = instance.shape
    n = f if granularity == FEATURE else w * f
    names = feature_names or [f"x{i}" for i in range(f)]
    if sigma_l is None:
        sigma_l = 0.75 * np.sqrt(n)
    rng = np.random.default_rng(seed)

    masks = np.ones((n_perturbations, n), dtype=bool)
    if n_perturbations > 1:
        masks[1:] = rng.random((n_perturbations - 1, n)) >= 0.5

    mean = np.broadcast_to(np.asarray(train_mean, dtype=float), (w, f))
    std = np.broadcast_to(np.asarray(train_std, dtype=float), (w, f))
    xs = np.empty((n_perturbations, w, f))
    for i in range(n_perturbations):
        grid = _mask_grid(masks[i], w, f, granularity)
        draw = mean + std * rng.normal(size=(w, f))
        xs[i] = np.where(grid, instance, draw)

    if len(np.unique(xs.reshape(n_perturbations, -1), axis=0)) < 2:
        raise XaiError(
            "degenerate perturbation set (all rows identical); increase "
            "n_perturbations or the noise scale"
        )

    y = _predict_scalar(predict_fn, xs, target_class)
    d = 1.0 - masks.mean(axis=1)
    weights = np.exp(-(d ** 2) / (sigma_l ** 2))

    z = masks.astype(float)
    wsum = weights.sum()
    z_bar = (weights[:, None] * z).sum(axis=0) / wsum
    y_bar = float((weights * y).sum() / wsum)
    zc = z - z_bar
    yc = y - y_bar
    lhs = (zc * weights[:, None]).T @ zc + ridge_lambda * np.eye(n)
    rhs = (zc * weights[:, None]).T @ yc
    coefs = np.linalg.solve(lhs, rhs)

    fit = zc @ coefs
    ss_res = float((weights * (yc - fit) ** 2).sum())
    ss_tot = float((weights * yc ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot

    scores = coefs if granularity == FEATURE else coefs.reshape(w, f)
    attr = Attribution(
        method="lime", scope="instance", granularity=granularity,
        feature_names=names, scores=scores, seed=seed,
        params={"n_perturbations": n_perturbations, "sigma_l": sigma_l,
                "ridge_lambda": ridge_lambda, "r_squared": r2,
                "low_fidelity": bool(r2 < 0.8),
                "target_class": int(target_class)})
    attr.params["top"] = [[name, val] for name, val in attr.top_blocks(n_top)]
    return attr


# -- global attributions -----------------------------------------------------------


def vsn_global_importance(model: TftModel, dataset: WindowedDataset
                          ) -> Attribution:
    """Mean selection weight per sensor over every sample and timestep."""
    _, importance = predict(model, dataset)
    return Attribution(method="vsn", scope="global", granularity=FEATURE,
                       feature_names=list(dataset.feature_names),
                       scores=importance,
                       params={"n_samples": dataset.n_samples})


def stratified_probe(labels: np.ndarray, per_class: int = 200, seed: int = 0
                     ) -> np.ndarray:
    """Up to per_class indices per class, seeded, in sorted order."""
    rng = np.random.default_rng(seed)
    picked = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) > per_class:
            idx = rng.choice(idx, size=per_class, replace=False)
        picked.append(idx)
    return np.sort(np.concatenate(picked))


def _probe_global(method_fn, model, dataset, probe_idx, feature_names):
    """Mean |per-instance score| over a probe, explaining the model's own
    predicted class for each instance."""
    probs = model.predict_proba(dataset.samples[probe_idx])
    targets = np.argmax(probs, axis=1)
    total = np.zeros(len(feature_names))
    for row, target in zip(probe_idx, targets):
        attr = method_fn(dataset.samples[row], int(target))
        total += attr.per_feature()
    return total / len(probe_idx)


def shap_global_importance(model: TftModel, dataset: WindowedDataset,
                           background: np.ndarray, probe_idx: np.ndarray,
                           n_coalitions: int = 1024, seed: int = 0
                           ) -> Attribution:
    names = list(dataset.feature_names)

    def one(sample, target):
        return kernel_shap(model.predict_proba, background, sample, target,
                           n_coalitions=n_coalitions, seed=seed,
                           feature_names=names)

    scores = _probe_global(one, model, dataset, probe_idx, names)
    return Attribution(method="shap", scope="global", granularity=FEATURE,
                       feature_names=names, scores=scores, seed=seed,
                       params={"n_coalitions": n_coalitions,
                               "probe_size": int(len(probe_idx)),
                               "background_size": int(background.shape[0])})


def lime_global_importance(model: TftModel, dataset: WindowedDataset,
                           train_mean: np.ndarray, train_std: np.ndarray,
                           probe_idx: np.ndarray, n_perturbations: int = 256,
                           seed: int = 0) -> Attribution:
    names = list(dataset.feature_names)

    def one(sample, target):
        return lime_explain(model.predict_proba, train_mean, train_std,
                            sample, target, n_perturbations=n_perturbations,
                            seed=seed, feature_names=names)

    scores = _probe_global(one, model, dataset, probe_idx, names)
    return Attribution(method="lime", scope="global", granularity=FEATURE,
                       feature_names=names, scores=scores, seed=seed,
                       params={"n_perturbations": n_perturbations,
                               "probe_size": int(len(probe_idx))})


# -- fusion and pruning ---------------------------------------------------------------


@dataclass
class FusedImportance:
    feature_names: list[str]
    scores: np.ndarray               # sums to 1
    method_ranks: dict[str, list[float]]
    methods: list[str]

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"feature_names": self.feature_names,
                       "scores": self.scores.tolist(),
                       "method_ranks": self.method_ranks,
                       "methods": self.methods}, fh, indent=2)
            fh.write("\n")


def retune_feature_importance(vsn: Attribution | None = None,
                              shap: Attribution | None = None,
                              lime: Attribution | None = None
                              ) -> FusedImportance:
    """Rank-based fusion: each method's per-feature magnitudes become
    average-tie ranks r (1 = most important), mapped to
    (F - r) / (F(F-1)/2) and averaged across the provided methods."""
    provided = {name: attr for name, attr in
                (("vsn", vsn), ("shap", shap), ("lime", lime))
                if attr is not None}
    if not provided:
        raise XaiError("no attributions to fuse")
    names = None
    for attr in provided.values():
        if names is None:
            names = list(attr.feature_names)
        elif list(attr.feature_names) != names:
            raise XaiError("attributions disagree on feature names")
    f = len(names)
    if f < 2:
        raise XaiError("fusion needs at least 2 features")
    ranks = {}
    weight_sum = np.zeros(f)
    for name, attr in provided.items():
        r = stats.rankdata(-attr.per_feature(), method="average")
        ranks[name] = r.tolist()
        weight_sum += (f - r) / (f * (f - 1) / 2.0)
    fused = weight_sum / len(provided)
    fused = fused / fused.sum()
    return FusedImportance(names, fused, ranks, sorted(provided))


def select_by_threshold(fused: FusedImportance, tau: float) -> list[str]:
    """Smallest prefix of the fused ranking whose cumulative score
    reaches tau. Retained names keep their original column order."""
    if not 0.0 < tau <= 1.0:
        raise XaiError(f"tau must be in (0, 1], got {tau}")
    order = np.argsort(-fused.scores, kind="stable")
    cum = np.cumsum(fused.scores[order])
    n_keep = int(np.searchsorted(cum, tau - 1e-12) + 1)
    n_keep = min(n_keep, len(order))
    keep = np.sort(order[:n_keep])
    return [fused.feature_names[i] for i in keep]


def fine_tune_feature_selection(model: TftModel, fused: FusedImportance,
                                train_set: WindowedDataset,
                                test_set: WindowedDataset, tau: float,
                                train_config: TrainConfig
                                ) -> tuple[TftModel, dict]:
    """Retrain on the fused-importance feature subset and report the
    accuracy change against the full model."""
    retained = select_by_threshold(fused, tau)
    if not retained:
        raise XaiError("threshold retained no features")

    def project(ds: WindowedDataset) -> WindowedDataset:
        idx = [ds.feature_names.index(n) for n in retained]
        return WindowedDataset(ds.samples[:, :, idx].copy(),
                               ds.labels.copy(), ds.window, list(retained),
                               ds.end_times)

    pre_pred, _ = predict(model, test_set)
    pre = evaluate(pre_pred, test_set.labels, model.config.n_classes)

    cfg = model.config
    new_config = ModelConfig(n_features=len(retained), window=cfg.window,
                             n_classes=cfg.n_classes, d_model=cfg.d_model,
                             n_heads=cfg.n_heads, dropout=cfg.dropout)
    new_model = TftModel(new_config, seed=model.seed)
    history = train(new_model, project(train_set), train_config)
    post_pred, _ = predict(new_model, project(test_set))
    post = evaluate(post_pred, test_set.labels, cfg.n_classes)

    report = {
        "tau": tau,
        "retained_features": retained,
        "n_features_before": cfg.n_features,
        "n_features_after": len(retained),
        "pre_test_accuracy": pre.accuracy,
        "post_test_accuracy": post.accuracy,
        "post_train_history": {
            "train_loss": history.train_loss,
            "train_accuracy": history.train_accuracy,
        },
    }
    return new_model, report
