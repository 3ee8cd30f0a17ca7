"""Temporal fusion transformer classifier.

Pipeline per sample: per-timestep variable selection (gated residual
networks over per-feature embeddings), an LSTM encoder, interpretable
multi-head attention with one value projection shared by every head,
mean pooling over the window, and a dense softmax head.

Selection weights and attention maps are returned on every forward pass;
they are the model-inherent explanation surface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_features: int
    window: int
    n_classes: int
    d_model: int = 32
    n_heads: int = 4
    dropout: float = 0.1

    def validate(self):
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout must be in [0,1), got {self.dropout}")
        if self.n_classes < 2:
            raise ModelError("need at least 2 classes")
        if self.n_features < 1 or self.window < 1:
            raise ModelError("n_features and window must be >= 1")


@dataclass
class ForwardOutput:
    probs: Tensor          # (B, K)
    vsn_weights: Tensor    # (B, w, F)
    attn_weights: Tensor   # (B, H, w, w)
    logits: Tensor         # (B, K)


@dataclass
class PredictionOutput:
    probs: np.ndarray          # (K,)
    vsn_weights: np.ndarray    # (w, F)
    attn_weights: np.ndarray   # (H, w, w)


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class TftModel:
    """Holds the config plus a flat, insertion-ordered parameter dict."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # -- parameters -------------------------------------------------------

    def _add(self, name, array):
        self.params[name] = Tensor(array, requires_grad=True)

    def _add_grn(self, rng, prefix, in_w, hidden_w, out_w):
        self._add(f"{prefix}.w1", _uniform_init(rng, (in_w, hidden_w), in_w))
        self._add(f"{prefix}.b1", np.zeros(hidden_w))
        self._add(f"{prefix}.w2", _uniform_init(rng, (hidden_w, out_w), hidden_w))
        self._add(f"{prefix}.b2", np.zeros(out_w))
        self._add(f"{prefix}.wg", _uniform_init(rng, (out_w, out_w), out_w))
        self._add(f"{prefix}.bg", np.zeros(out_w))
        self._add(f"{prefix}.wv", _uniform_init(rng, (out_w, out_w), out_w))
        self._add(f"{prefix}.bv", np.zeros(out_w))
        if in_w != out_w:
            self._add(f"{prefix}.ws", _uniform_init(rng, (in_w, out_w), in_w))
            self._add(f"{prefix}.bs", np.zeros(out_w))
        self._add(f"{prefix}.ln_g", np.ones(out_w))
        self._add(f"{prefix}.ln_b", np.zeros(out_w))

    def _init_params(self, rng):
        cfg = self.config
        d, f, k, h = cfg.d_model, cfg.n_features, cfg.n_classes, cfg.n_heads
        dk = d // h
        for i in range(f):
            self._add(f"embed{i}.w", _uniform_init(rng, (d,), 1))
            self._add(f"embed{i}.b", np.zeros(d))
        self._add_grn(rng, "vsn.sel", f * d, d, f)
        for i in range(f):
            self._add_grn(rng, f"vsn.feat{i}", d, d, d)
        self._add("lstm.wx", _uniform_init(rng, (d, 4 * d), d))
        self._add("lstm.wh", _uniform_init(rng, (d, 4 * d), d))
        bias = np.zeros(4 * d)
        bias[d:2 * d] = 1.0     # forget gate open at init
        self._add("lstm.b", bias)
        for i in range(h):
            self._add(f"mha.wq{i}", _uniform_init(rng, (d, dk), d))
            self._add(f"mha.wk{i}", _uniform_init(rng, (d, dk), d))
        self._add("mha.wv", _uniform_init(rng, (d, dk), d))
        self._add("mha.wo", _uniform_init(rng, (dk, d), dk))
        self._add("mha.ln_g", np.ones(d))
        self._add("mha.ln_b", np.zeros(d))
        self._add("head.w", _uniform_init(rng, (d, k), d))
        self._add("head.b", np.zeros(k))

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    def n_params(self) -> int:
        return sum(t.size for t in self.params.values())

    # -- layers -----------------------------------------------------------

    def _grn(self, p, prefix, x, train, rng):
        """LayerNorm(residual(x) + GLU(dense2(ELU(dense1(x))))); the GLU
        gates a linear branch with a sigmoid branch. Residual projects
        linearly when the widths differ."""
        h = ad.elu(ad.matmul(x, p[f"{prefix}.w1"]) + p[f"{prefix}.b1"])
        z = ad.matmul(h, p[f"{prefix}.w2"]) + p[f"{prefix}.b2"]
        z = ad.dropout(z, self.config.dropout, train, rng)
        gate = ad.sigmoid(ad.matmul(z, p[f"{prefix}.wg"]) + p[f"{prefix}.bg"])
        value = ad.matmul(z, p[f"{prefix}.wv"]) + p[f"{prefix}.bv"]
        if f"{prefix}.ws" in p:
            res = ad.matmul(x, p[f"{prefix}.ws"]) + p[f"{prefix}.bs"]
        else:
            res = x
        return ad.layer_norm(res + gate * value,
                             p[f"{prefix}.ln_g"], p[f"{prefix}.ln_b"])

    def _vsn(self, p, frames, train, rng):
        """frames: (N, F) -> (embedding (N, d), weights (N, F))."""
        f = self.config.n_features
        embs = [frames[:, i:i + 1] * p[f"embed{i}.w"] + p[f"embed{i}.b"]
                for i in range(f)]
        flat = ad.concat(embs, axis=1) if f > 1 else embs[0]
        logits = self._grn(p, "vsn.sel", flat, train, rng)
        weights = ad.softmax(logits)
        feats = ad.stack([self._grn(p, f"vsn.feat{i}", embs[i], train, rng)
                          for i in range(f)], axis=1)       # (N, F, d)
        n = frames.shape[0]
        emb = ad.tsum(feats * ad.reshape(weights, (n, f, 1)), axis=1)
        return emb, weights

    def _lstm(self, p, x, train):
        """x: (B, w, d) -> all hidden states (B, w, d), zero initial state."""
        b, w, d = x.shape
        h = Tensor(np.zeros((b, d)))
        c = Tensor(np.zeros((b, d)))
        wx, wh, bias = p["lstm.wx"], p["lstm.wh"], p["lstm.b"]
        outs = []
        for t in range(w):
            a = ad.matmul(x[:, t], wx) + ad.matmul(h, wh) + bias
            i = ad.sigmoid(a[:, :d])
            f = ad.sigmoid(a[:, d:2 * d])
            o = ad.sigmoid(a[:, 2 * d:3 * d])
            g = ad.tanh(a[:, 3 * d:])
            c = f * c + i * g
            h = o * ad.tanh(c)
            outs.append(h)
        return ad.stack(outs, axis=1)

    def _mha(self, p, states, train):
        """Interpretable attention: per-head queries/keys, one shared value
        projection, head outputs averaged then projected, residual + LN.
        Unmasked: the whole window is observed history."""
        cfg = self.config
        b, w, d = states.shape
        dk = d // cfg.n_heads
        scale = 1.0 / np.sqrt(dk)
        v = ad.matmul(states, p["mha.wv"])           # (B, w, dk), shared
        heads = None
        attns = []
        for i in range(cfg.n_heads):
            q = ad.matmul(states, p[f"mha.wq{i}"])
            k = ad.matmul(states, p[f"mha.wk{i}"])
            scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * Tensor(scale)
            a = ad.softmax(scores)                   # (B, w, w)
            attns.append(a)
            out = ad.matmul(a, v)
            heads = out if heads is None else heads + out
        avg = heads * Tensor(1.0 / cfg.n_heads)
        projected = ad.matmul(avg, p["mha.wo"])
        normed = ad.layer_norm(projected + states, p["mha.ln_g"], p["mha.ln_b"])
        return normed, ad.stack(attns, axis=1)       # (B, H, w, w)

    # -- forward ------------------------------------------------------------

    def forward(self, x: np.ndarray, train_flag: bool = False,
                rng: np.random.Generator | None = None,
                record_graph: bool | None = None) -> ForwardOutput:
        """x: (B, w, F) scaled samples (a single (w, F) sample is
        promoted). Raises on non-finite activations, naming the layer."""
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (cfg.window, cfg.n_features):
            raise ModelError(
                f"sample shape {x.shape[1:]} != (window, features) "
                f"({cfg.window}, {cfg.n_features})"
            )
        if train_flag and cfg.dropout > 0 and rng is None:
            raise ModelError("training forward needs an rng for dropout")
        record = train_flag if record_graph is None else record_graph
        p = self.params if record else {k: t.detach()
                                        for k, t in self.params.items()}
        b, w, f = x.shape

        frames = Tensor(x.reshape(b * w, f))
        emb, weights = self._vsn(p, frames, train_flag, rng)
        self._check_finite(emb.data, "variable selection")
        seq = ad.reshape(emb, (b, w, cfg.d_model))
        states = self._lstm(p, seq, train_flag)
        self._check_finite(states.data, "lstm encoder")
        attended, attn = self._mha(p, states, train_flag)
        self._check_finite(attended.data, "attention")
        pooled = ad.tmean(attended, axis=1)
        logits = ad.matmul(pooled, p["head.w"]) + p["head.b"]
        probs = ad.softmax(logits)
        self._check_finite(probs.data, "classifier head")
        return ForwardOutput(probs, ad.reshape(weights, (b, w, f)),
                             attn, logits)

    @staticmethod
    def _check_finite(arr, layer):
        if not np.isfinite(arr).all():
            raise ModelError(f"non-finite activation in {layer}")

    def predict_proba(self, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode class probabilities for (n, w, F) inputs; builds no
        graph, so it is safe for large explanation workloads."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        outs = [self.forward(x[i:i + batch_size]).probs.data
                for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(outs, axis=0)

    def predict_one(self, sample: np.ndarray) -> PredictionOutput:
        out = self.forward(sample)
        return PredictionOutput(out.probs.data[0], out.vsn_weights.data[0],
                                out.attn_weights.data[0])

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        blob = {
            "format_version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "config": asdict(self.config),
            "params": {k: t.data.tolist() for k, t in self.params.items()},
        }
        with open(path, "w") as fh:
            json.dump(blob, fh)
            fh.write("\n")

    @staticmethod
    def load(path) -> "TftModel":
        with open(path) as fh:
            blob = json.load(fh)
        if blob.get("format_version") != CHECKPOINT_VERSION:
            raise ModelError(
                f"unsupported checkpoint version {blob.get('format_version')}"
            )
        model = TftModel(ModelConfig(**blob["config"]), seed=blob.get("seed", 0))
        for name, tensor in model.params.items():
            data = np.asarray(blob["params"][name], dtype=np.float64)
            if data.shape != tensor.shape:
                raise ModelError(f"checkpoint shape mismatch for {name}")
            tensor.data[...] = data
        return model
