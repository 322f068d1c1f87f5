"""Linear-probe evaluation of frozen encoder features.

A multinomial logistic regression with L2 penalty is fit on standardized
features of a training split and scored by top-1 / top-5 accuracy on the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from .errors import DegenerateLabels, InvalidInput
from .model import ModelParams, forward


def extract_features(params: ModelParams, samples) -> np.ndarray:
    """Encoder outputs f_v, one row per sample (CorpusSample list or input matrix)."""
    if isinstance(samples, np.ndarray):
        x = samples
    else:
        x = np.stack([s.video_feature for s in samples])
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.input_dim:
        raise InvalidInput(f"input dimension {x.shape[1]} != {params.input_dim}")
    return forward(params, x).f_v


@dataclass
class LinearProbe:
    weight: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    n_iter: int = 0
    grad_norm: float = 0.0

    def scores(self, features) -> np.ndarray:
        z = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weight + self.bias


@dataclass
class ProbeResult:
    top1: float
    top5: float
    n_train: int
    n_eval: int
    config: dict = field(default_factory=dict)


def train_linear_probe(features, labels, reg: float = 1e-3, seed: int = 0,
                       tol: float = 1e-5, max_iter: int = 2000) -> LinearProbe:
    """Full-batch L-BFGS on mean cross-entropy + reg/2 * ||W||^2.

    Starts from zero weights, so the result is deterministic; ``seed`` is kept
    for interface symmetry and is not consumed.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(y):
        raise InvalidInput("features must be (n, d) with one label per row")
    if reg < 0:
        raise InvalidInput("reg must be non-negative")
    classes = np.unique(y)
    if len(classes) < 2:
        raise DegenerateLabels("need at least two classes")
    if classes.min() < 0:
        raise InvalidInput("labels must be non-negative integers")
    n_classes = int(classes.max()) + 1
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - mean) / scale
    n, d = z.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0

    def objective(theta):
        W = theta[:d * n_classes].reshape(d, n_classes)
        b = theta[d * n_classes:]
        logits = z @ W + b
        logp = log_softmax(logits, axis=1)
        loss = -np.sum(onehot * logp) / n + 0.5 * reg * np.sum(W * W)
        diff = (np.exp(logp) - onehot) / n
        gW = z.T @ diff + reg * W
        gb = diff.sum(axis=0)
        return loss, np.concatenate([gW.ravel(), gb])

    theta0 = np.zeros(d * n_classes + n_classes)
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0})
    W = res.x[:d * n_classes].reshape(d, n_classes)
    b = res.x[d * n_classes:]
    return LinearProbe(W, b, mean, scale, int(res.nit), float(np.max(np.abs(res.jac))))


def topk_hits(scores, labels, k: int) -> np.ndarray:
    """Label among the k highest scores; equal scores rank the lower class index first."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return np.any(order == np.asarray(labels)[:, None], axis=1)


def evaluate(classifier, features, labels, config: dict | None = None, n_train: int = 0) -> ProbeResult:
    """Top-1 / top-5 accuracy. ``classifier`` is a LinearProbe or a ready score matrix."""
    scores = classifier if isinstance(classifier, np.ndarray) else classifier.scores(features)
    labels = np.asarray(labels)
    if len(scores) != len(labels):
        raise InvalidInput("scores and labels differ in length")
    return ProbeResult(float(topk_hits(scores, labels, 1).mean()),
                       float(topk_hits(scores, labels, 5).mean()),
                       n_train, len(labels), dict(config or {}))


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < train_fraction < 1:
        raise InvalidInput("split must lie strictly between 0 and 1")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0x9E0B])).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def run_probe(params: ModelParams, video, labels, split: float = 0.8, reg: float = 1e-3,
              seed: int = 0) -> ProbeResult:
    """Extract features, split, fit the probe on one part and score it on the other."""
    feats = extract_features(params, video)
    labels = np.asarray(labels)
    tr, ev = split_indices(len(feats), split, seed)
    clf = train_linear_probe(feats[tr], labels[tr], reg=reg, seed=seed)
    return evaluate(clf, feats[ev], labels[ev], n_train=len(tr),
                    config={"split": split, "reg": reg, "seed": seed})
