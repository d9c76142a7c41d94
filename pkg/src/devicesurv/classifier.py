"""Noise-aware logistic regression over signed-hashed sparse features.

The feature scheme replaces a sequence model with lexical n-grams around and
between the argument mentions plus markup flags (section, attributes, date
bins, token distance), hashed into a fixed 2^20-dimensional space. Training
minimizes the expected cross-entropy against probabilistic labels with L2,
by mini-batch SGD with seeded shuffling.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConfigError, FitError
from .extraction import RelationCandidate
from .lf_lib import between_tokens, left_window, right_window, token_distance

_MAGIC = b"DSCM\x01"


@dataclass(frozen=True)
class FeatureConfig:
    n_bits: int = 20
    ngram_max: int = 3
    window: int = 3

    @property
    def dim(self) -> int:
        return 1 << self.n_bits

    def digest(self) -> str:
        raw = f"v1|{self.n_bits}|{self.ngram_max}|{self.window}"
        return hashlib.blake2b(raw.encode(), digest_size=8).hexdigest()


@dataclass(frozen=True)
class FeatureVector:
    indices: np.ndarray
    values: np.ndarray


_DIST_BUCKETS = ((0, "0"), (2, "1-2"), (5, "3-5"), (10, "6-10"))


def _distance_bucket(d: int) -> str:
    for hi, label in _DIST_BUCKETS:
        if d <= hi:
            return label
    return ">10"


def _ngrams(tokens, n_max):
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            yield " ".join(tokens[i : i + n])


def raw_features(c: RelationCandidate, config: FeatureConfig | None = None) -> list[str]:
    """Human-readable feature strings before hashing."""
    config = config or FeatureConfig()
    feats: list[str] = []
    feats.extend(f"btw:{g}" for g in _ngrams(between_tokens(c), config.ngram_max))
    feats.extend(f"lw:{g}" for g in _ngrams(left_window(c, config.window), config.ngram_max))
    feats.extend(f"rw:{g}" for g in _ngrams(right_window(c, config.window), config.ngram_max))
    feats.append(f"arg1_id:{c.arg1.canonical_id}")
    feats.append(f"arg2_id:{c.arg2.canonical_id}")
    feats.append(f"arg1_type:{c.arg1.entity_type}")
    feats.append(f"arg2_type:{c.arg2.entity_type}")
    feats.append(f"dist:{_distance_bucket(token_distance(c))}")
    feats.append(f"sec:{c.section_header}")
    feats.extend(f"arg1_attr:{a}" for a in sorted(c.arg1.attributes))
    feats.extend(f"arg2_attr:{a}" for a in sorted(c.arg2.attributes))
    feats.extend(f"datebin:{b}" for b in sorted(set(c.date_bins)))
    return feats


def _hash_feature(feat: str, n_bits: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest(), "big")
    idx = h & ((1 << n_bits) - 1)
    sign = 1.0 if (h >> 60) & 1 else -1.0
    return idx, sign


def featurize(c: RelationCandidate, config: FeatureConfig | None = None) -> FeatureVector:
    config = config or FeatureConfig()
    acc: dict[int, float] = {}
    for feat in raw_features(c, config):
        idx, sign = _hash_feature(feat, config.n_bits)
        acc[idx] = acc.get(idx, 0.0) + sign
    items = sorted(acc.items())
    return FeatureVector(
        indices=np.array([i for i, _ in items], dtype=np.int64),
        values=np.array([v for _, v in items], dtype=np.float64),
    )


def design_matrix(candidates, config: FeatureConfig | None = None) -> sparse.csr_matrix:
    config = config or FeatureConfig()
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for c in candidates:
        fv = featurize(c, config)
        indices.extend(fv.indices.tolist())
        data.extend(fv.values.tolist())
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(indptr) - 1, config.dim),
    )


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 20
    learning_rate: float = 0.5
    l2: float = 1e-4
    batch_size: int = 32


@dataclass
class ClassifierModel:
    weights: np.ndarray
    bias: float
    feature_config: FeatureConfig
    metadata: dict = field(default_factory=dict)
    threshold: float = 0.5

    def save(self, path) -> None:
        """Binary layout: magic, n_bits, bias, threshold, nnz, then int64
        indices and float64 weights of the nonzero entries. A JSON sidecar
        (path + ".json") carries the metadata."""
        nz = np.nonzero(self.weights)[0]
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Bdd", self.feature_config.n_bits, self.bias, self.threshold))
            fh.write(struct.pack("<Q", len(nz)))
            fh.write(nz.astype(np.int64).tobytes())
            fh.write(self.weights[nz].astype(np.float64).tobytes())
        sidecar = {
            "feature_config": {
                "n_bits": self.feature_config.n_bits,
                "ngram_max": self.feature_config.ngram_max,
                "window": self.feature_config.window,
            },
            "feature_digest": self.feature_config.digest(),
            "metadata": self.metadata,
        }
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2)

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        with open(str(path) + ".json", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        fc = FeatureConfig(**sidecar["feature_config"])
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise ConfigError(f"{path}: not a classifier model file")
            n_bits, bias, threshold = struct.unpack("<Bdd", fh.read(17))
            if n_bits != fc.n_bits:
                raise ConfigError(f"{path}: dim mismatch between binary and sidecar")
            (nnz,) = struct.unpack("<Q", fh.read(8))
            idx = np.frombuffer(fh.read(8 * nnz), dtype=np.int64)
            vals = np.frombuffer(fh.read(8 * nnz), dtype=np.float64)
        w = np.zeros(fc.dim)
        w[idx] = vals
        return cls(weights=w, bias=bias, feature_config=fc,
                   metadata=sidecar.get("metadata", {}), threshold=threshold)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def loss_and_grad(w, b, X, p, l2):
    """Noise-aware cross-entropy with L2: summed over rows, lambda * ||w||^2."""
    z = X @ w + b
    s = _sigmoid(z)
    eps = 1e-12
    loss = -float(np.sum(p * np.log(s + eps) + (1 - p) * np.log(1 - s + eps)))
    loss += l2 * float(w @ w)
    resid = s - p
    grad_w = X.T @ resid + 2 * l2 * w
    grad_b = float(np.sum(resid))
    return loss, np.asarray(grad_w).ravel(), grad_b


def train_noise_aware(
    candidates,
    labels,
    config: TrainConfig | None = None,
    feature_config: FeatureConfig | None = None,
) -> ClassifierModel:
    """Mini-batch SGD on the noise-aware objective, deterministic for a
    fixed seed. ``labels`` is a sequence of ProbabilisticLabel covering
    every candidate."""
    config = config or TrainConfig()
    feature_config = feature_config or FeatureConfig()
    candidates = list(candidates)
    if not candidates:
        raise FitError("empty training set")
    by_id = {lab.candidate_id: lab.p_true for lab in labels}
    missing = [c.candidate_id for c in candidates if c.candidate_id not in by_id]
    if missing:
        raise FitError(f"candidates missing labels: {missing[:5]}")
    p = np.array([by_id[c.candidate_id] for c in candidates])
    X = design_matrix(candidates, feature_config)
    w, b = train_on_matrix(X, p, config, feature_config.dim)
    return ClassifierModel(
        weights=w,
        bias=b,
        feature_config=feature_config,
        metadata={
            "seed": config.seed,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "l2": config.l2,
            "batch_size": config.batch_size,
            "n_train": len(candidates),
        },
    )


def train_on_matrix(X, p, config: TrainConfig, dim: int):
    n = X.shape[0]
    w = np.zeros(dim)
    b = 0.0
    rng = np.random.default_rng(config.seed)
    order = np.arange(n)
    for _epoch in range(config.epochs):
        rng.shuffle(order)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            Xb = X[batch]
            z = Xb @ w + b
            resid = _sigmoid(z) - p[batch]
            grad_w = np.asarray(Xb.T @ resid).ravel() + 2 * config.l2 * (len(batch) / n) * w
            grad_b = float(np.sum(resid))
            scale = config.learning_rate / len(batch)
            w -= scale * grad_w
            b -= scale * grad_b
    return w, b


def predict(model: ClassifierModel, candidate: RelationCandidate,
            feature_config: FeatureConfig | None = None) -> float:
    feature_config = feature_config or model.feature_config
    if feature_config.digest() != model.feature_config.digest():
        raise ConfigError("feature config does not match the trained model")
    fv = featurize(candidate, feature_config)
    z = float(model.weights[fv.indices] @ fv.values) + model.bias
    return float(_sigmoid(z))


def predict_many(model: ClassifierModel, candidates) -> np.ndarray:
    X = design_matrix(candidates, model.feature_config)
    return _sigmoid(X @ model.weights + model.bias)


THRESHOLD_GRID = np.round(np.arange(0, 101) / 100.0, 2)


def select_threshold(model: ClassifierModel, dev_candidates, dev_gold: dict[str, int]) -> float:
    """Grid-search the decision threshold maximizing F1 on a dev set with
    both classes present; ties break toward the lowest threshold."""
    dev_candidates = list(dev_candidates)
    gold = np.array([int(dev_gold[c.candidate_id]) for c in dev_candidates])
    if gold.min() == gold.max():
        raise FitError("dev set must contain both classes")
    scores = predict_many(model, dev_candidates)
    best_t, best_f1 = 0.0, -1.0
    for t in THRESHOLD_GRID:
        pred = scores >= t
        tp = int(np.sum(pred & (gold == 1)))
        fp = int(np.sum(pred & (gold == 0)))
        fn = int(np.sum(~pred & (gold == 1)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        if f1 > best_f1 + 1e-12:
            best_t, best_f1 = float(t), f1
    return best_t


def scores_to_csv(candidate_ids, scores, threshold, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("candidate_id,score,predicted_label\n")
        for cid, s in zip(candidate_ids, scores):
            fh.write(f"{cid},{float(s):.6f},{int(s >= threshold)}\n")
