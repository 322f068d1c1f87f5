"""Component ablation on a synthetic corpus.

Variants (all share one corpus, vocabulary and supervision cache):

    QS      stage 1 with the query loss only
    TS      stage 1 with the text loss only
    QS+TS   stage 1 with both losses
    BCN_Q   both stages, only the t2q branch may fire
    BCN_T   both stages, only the q2t branch may fire
    BCN     both stages, full selection

Two diagnostics ride along: ``init`` probes the untrained encoder and
``QS+TS long`` runs both stages with every sample forced to PLAIN, which
isolates what the calibration adds over simply training longer at the
stage-2 learning rate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import init_params
from .probe import run_probe
from .supervision import build_supervision
from .synth import SynthConfig, generate, latent_labels, stack
from .trainer import TrainConfig, Trainer, TrainingData
from .vocab import build_query_vocabulary, build_text_vocabulary

VARIANTS = ("QS", "TS", "QS+TS", "BCN_Q", "BCN_T", "BCN")
DIAGNOSTICS = ("init", "QS+TS long")

_OVERRIDES = {
    "QS": dict(w_t=0.0, stage2_epochs=0),
    "TS": dict(w_q=0.0, stage2_epochs=0),
    "QS+TS": dict(stage2_epochs=0),
    "QS+TS long": dict(disable_t2q=True, disable_q2t=True),
    "BCN_Q": dict(disable_q2t=True),
    "BCN_T": dict(disable_t2q=True),
    "BCN": {},
}

# Synthetic corpus used for the ordering check: 20 queries x 2 modes x 100
# samples, 30% isomorphic titles. Nuisance directions make the raw input a
# poor representation, and crossover videos give query labels real noise.
ACCEPTANCE_SYNTH = dict(
    n_queries=20, modes_per_query=(2, 2), samples_per_mode=100, feature_dim=16, title_dim=16,
    isomorphism_rate=0.3, polysemy_separation=4.0, noise_sigma=1.0, title_noise_sigma=0.6,
    nuisance_dims=8, nuisance_sigma=8.0, crossover_rate=0.15, isomorphism_partner="pair", seed=0,
)
ACCEPTANCE_TRAIN = dict(lr=0.02)
ACCEPTANCE_SEEDS = 5


@dataclass
class RSSTrend:
    """Mean stage-2 RSS over the first and last 10% of steps."""

    q_first: float
    q_last: float
    t_first: float
    t_last: float

    @property
    def decreasing(self) -> bool:
        return self.q_last < self.q_first and self.t_last < self.t_first


def rss_trend(log) -> RSSTrend | None:
    rows = [r for r in log if r.stage == 2]
    if not rows:
        return None
    n = max(1, len(rows) // 10)
    mean = lambda rs, key: float(np.mean([getattr(r, key) for r in rs]))
    return RSSTrend(mean(rows[:n], "rss_q"), mean(rows[-n:], "rss_q"),
                    mean(rows[:n], "rss_t"), mean(rows[-n:], "rss_t"))


@dataclass
class AblationResult:
    top1: dict  # variant -> list of per-seed top-1
    top5: dict
    rss: list  # per-seed RSSTrend of the BCN run
    branch_counts: list  # per-seed (t2q, q2t, plain) totals of the BCN run
    synth: dict
    train: dict
    seeds: list
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def mean(self, variant) -> float:
        return float(np.mean(self.top1[variant]))

    def std(self, variant) -> float:
        return float(np.std(self.top1[variant]))

    def rss_means(self) -> RSSTrend:
        arr = np.array([[r.q_first, r.q_last, r.t_first, r.t_last] for r in self.rss])
        return RSSTrend(*arr.mean(axis=0).tolist())

    def _summary(self, names) -> dict:
        return {v: {"mean": self.mean(v), "std": self.std(v)} for v in names if v in self.top1}

    def to_dict(self) -> dict:
        return {
            "synth": self.synth, "train": self.train, "seeds": self.seeds,
            "seconds": self.seconds, "extra": self.extra,
            "top1": self.top1, "top5": self.top5,
            "summary": self._summary(VARIANTS),
            "diagnostics": self._summary(DIAGNOSTICS),
            "rss": [vars(r) for r in self.rss],
            "branch_counts": self.branch_counts,
            "checks": check_ordering(self),
        }

    def _row(self, v) -> str:
        return (f"{v:<12} {100 * self.mean(v):8.2f} {100 * self.std(v):6.2f}"
                f" {100 * float(np.mean(self.top5[v])):8.2f}")

    def table(self) -> str:
        """Aligned text: one row per method variant, then diagnostics and RSS."""
        head = f"{'variant':<12} {'top-1 %':>8} {'sd':>6} {'top-5 %':>8}"
        lines = [head] + [self._row(v) for v in VARIANTS if v in self.top1]
        diag = [self._row(v) for v in DIAGNOSTICS if v in self.top1]
        if diag:
            lines += ["", "diagnostics", head] + diag
        if self.rss:
            r = self.rss_means()
            lines.append(f"\nstage-2 RSS query {r.q_first:.4f} -> {r.q_last:.4f}, "
                         f"text {r.t_first:.4f} -> {r.t_last:.4f}")
        return "\n".join(lines)


def check_ordering(result: AblationResult, gap: float = 0.01, slack: float = 0.005) -> dict:
    """Qualitative ordering checks on mean top-1 (fractions, not percent)."""
    m = {v: result.mean(v) for v in VARIANTS if v in result.top1}
    out = {}
    if {"QS", "TS", "QS+TS"} <= m.keys():
        out["joint_beats_single"] = m["QS+TS"] > max(m["QS"], m["TS"])
    if {"QS+TS", "BCN"} <= m.keys():
        out["bcn_gain"] = m["BCN"] - m["QS+TS"] >= gap
        lo, hi = m["QS+TS"], m["BCN"]
        for v in ("BCN_Q", "BCN_T"):
            if v in m:
                out[f"{v}_in_band"] = lo - slack <= m[v] <= hi + slack
    if result.rss:
        out["rss_decreasing"] = result.rss_means().decreasing
    return out


def run_ablation(synth: dict | SynthConfig | None = None, train: dict | None = None,
                 seeds=range(ACCEPTANCE_SEEDS), variants=VARIANTS + DIAGNOSTICS,
                 vocab_seed: int = 0, probe_split: float = 0.8, probe_reg: float = 1e-3,
                 progress=None) -> AblationResult:
    """Train every variant for every seed and probe the frozen encoder on latent classes."""
    t0 = time.perf_counter()
    cfg = synth if isinstance(synth, SynthConfig) else SynthConfig(**(synth or ACCEPTANCE_SYNTH))
    train = dict(ACCEPTANCE_TRAIN if train is None else train)
    corpus = generate(cfg)
    qv = build_query_vocabulary(corpus)
    tv = build_text_vocabulary(corpus, qv, seed=vocab_seed)
    sup = build_supervision(corpus, qv, tv)
    video, _ = stack(corpus)
    labels = latent_labels(corpus)
    data = TrainingData(video, sup)

    order = [v for v in ("init", "QS", "TS", "QS+TS", "QS+TS long", "BCN_Q", "BCN_T", "BCN")
             if v in variants]
    top1 = {v: [] for v in order}
    top5 = {v: [] for v in order}
    rss, counts = [], []
    seeds = [int(s) for s in seeds]
    for seed in seeds:
        for v in order:
            tcfg = TrainConfig(**{**train, "seed": seed, **_OVERRIDES.get(v, {})})
            if v == "init":
                params = init_params(video.shape[1], len(qv), tv.size, hidden=tcfg.hidden,
                                     activation=tcfg.activation, seed=seed)
                log = []
            else:
                tr = Trainer(data, tv, tcfg)
                log = tr.run()
                params = tr.params
            res = run_probe(params, video, labels, split=probe_split, reg=probe_reg, seed=seed)
            top1[v].append(res.top1)
            top5[v].append(res.top5)
            if v == "BCN":
                trend = rss_trend(log)
                if trend is not None:
                    rss.append(trend)
                s2 = [r for r in log if r.stage == 2]
                counts.append([sum(r.n_t2q for r in s2), sum(r.n_q2t for r in s2),
                               sum(r.n_plain for r in s2)])
            if progress:
                progress(f"seed {seed} {v}: top-1 {100 * res.top1:.2f}")
    return AblationResult(top1, top5, rss, counts, cfg.to_dict(),
                          TrainConfig(**train).to_dict(), seeds,
                          seconds=time.perf_counter() - t0,
                          extra={"M": tv.size, "K": len(qv), "n_samples": len(corpus)})
