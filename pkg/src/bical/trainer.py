"""Two-stage training.

Stage 1 fits both heads to the primary labels. Stage 2 recomputes, for every
sample of every batch, the t2q/q2t corrections and refined labels, and trains
each sample on the pair of targets its branch selects:

    T2Q   -> (refined query label, primary text label)
    Q2T   -> (one-hot query label, running refined text label)
    PLAIN -> (one-hot query label, primary text label)
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .calibration import Branch, CalibrationState, calibrate_batch
from .errors import InvalidInput
from .model import (ModelParams, backward, forward, init_params, load_checkpoint, loss_query,
                    loss_text, save_checkpoint, sgd_momentum_step)
from .supervision import SupervisionCache
from .vocab import TextVocabulary


@dataclass
class TrainConfig:
    stage1_epochs: int = 36
    stage2_epochs: int = 36
    batch_size: int = 64
    lr: float = 0.05
    # None -> lr / 10
    lr_stage2: float | None = None
    lr_decay: float = 0.9
    lr_decay_every: int = 2000
    momentum: float = 0.9
    weight_decay: float = 1e-4
    eps_q: float = 0.5
    eps_t: float = 0.7
    alpha: float = 0.9
    w_q: float = 1.0
    w_t: float = 1.0
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    disable_t2q: bool = False
    disable_q2t: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.stage1_epochs < 0 or self.stage2_epochs < 0 or self.batch_size < 1:
            raise InvalidInput("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0 or (self.lr_stage2 is not None and self.lr_stage2 <= 0):
            raise InvalidInput("learning rates must be positive")
        if not 0 < self.lr_decay <= 1 or self.lr_decay_every < 1:
            raise InvalidInput("lr_decay must lie in (0, 1] and lr_decay_every >= 1")
        if self.w_q < 0 or self.w_t < 0 or self.w_q + self.w_t == 0:
            raise InvalidInput("loss weights must be non-negative and not both zero")

    @property
    def stage2_lr(self) -> float:
        return self.lr / 10.0 if self.lr_stage2 is None else self.lr_stage2

    def lr_at(self, stage: int, stage_step: int) -> float:
        base = self.lr if stage == 1 else self.stage2_lr
        return base * self.lr_decay ** (stage_step // self.lr_decay_every)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainLogRow:
    step: int
    stage: int
    lr: float
    # losses actually optimized (refined targets where a calibration fired)
    loss_q: float
    loss_t: float
    # losses against the primary labels
    loss_q_primary: float
    loss_t_primary: float
    rss_q: float
    rss_t: float
    n_t2q: int
    n_q2t: int
    n_plain: int


LOG_COLUMNS = [f.name for f in fields(TrainLogRow)]


def rss(p, p_hat) -> float | np.ndarray:
    """Residual sum of squares between a distribution and its correction (row-wise)."""
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape:
        raise InvalidInput(f"shape mismatch: {p.shape} vs {p_hat.shape}")
    out = np.sum((p - p_hat) ** 2, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def write_log_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for r in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


def read_log_csv(path) -> list[TrainLogRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        out = []
        for rec in reader:
            kw = {}
            for f in fields(TrainLogRow):
                kw[f.name] = (int if f.type in ("int", int) else float)(rec[f.name])
            out.append(TrainLogRow(**kw))
    return out


@dataclass
class TrainingData:
    """Encoder inputs aligned row-for-row with the supervision cache."""

    video: np.ndarray
    supervision: SupervisionCache

    def __post_init__(self):
        self.video = np.asarray(self.video, dtype=np.float64)
        if len(self.video) != len(self.supervision):
            raise InvalidInput("video rows and supervision rows differ in count")

    def __len__(self):
        return len(self.video)


def _permutation(seed, stage, epoch, n):
    rng = np.random.default_rng(np.random.SeedSequence([seed, stage, epoch]))
    return rng.permutation(n)


class Trainer:
    """Resumable two-stage training loop.

    Position is (stage, epoch, batch index); shuffles are derived from
    (seed, stage, epoch), so a checkpoint taken anywhere resumes onto the
    exact trajectory of an uninterrupted run.
    """

    def __init__(self, data: TrainingData, tvocab: TextVocabulary, config: TrainConfig,
                 params: ModelParams | None = None):
        self.data = data
        self.tvocab = tvocab
        self.config = config
        if params is None:
            params = init_params(data.video.shape[1], data.supervision.n_queries, tvocab.size,
                                 config.hidden, config.activation, config.seed)
        if params.n_queries != data.supervision.n_queries or params.n_prototypes != tvocab.size:
            raise InvalidInput("head sizes do not match the vocabularies")
        self.params = params
        self.calib: CalibrationState | None = None
        self.stage = 1
        self.epoch = 0
        self.batch = 0
        self.step = 0
        self.stage_step = 0
        self.log: list[TrainLogRow] = []
        self._advance_stage()

    @property
    def n_batches(self) -> int:
        return math.ceil(len(self.data) / self.config.batch_size)

    @property
    def done(self) -> bool:
        return self.stage > 2

    def _epochs(self, stage):
        return self.config.stage1_epochs if stage == 1 else self.config.stage2_epochs

    def _advance_stage(self):
        # skip over stages with nothing left to do
        while not self.done and self.epoch >= self._epochs(self.stage):
            self.stage += 1
            self.epoch = self.batch = self.stage_step = 0
        if self.stage == 2 and self.calib is None:
            self.start_stage2()

    def start_stage2(self):
        cfg = self.config
        sup = self.data.supervision
        self.calib = CalibrationState.from_primary(sup.sample_ids, sup.y_t, alpha=cfg.alpha,
                                                   eps_q=cfg.eps_q, eps_t=cfg.eps_t)

    def run(self, max_steps: int | None = None) -> list[TrainLogRow]:
        """Train until finished or ``max_steps`` more optimizer steps; returns their log rows."""
        new_rows = []
        while not self.done and (max_steps is None or len(new_rows) < max_steps):
            new_rows.append(self._train_step())
        return new_rows

    def _train_step(self) -> TrainLogRow:
        cfg = self.config
        n = len(self.data)
        perm = _permutation(cfg.seed, self.stage, self.epoch, n)
        rows = perm[self.batch * cfg.batch_size:(self.batch + 1) * cfg.batch_size]
        sup = self.data.supervision
        x = self.data.video[rows]
        y_q = sup.query_targets(rows)
        y_t = sup.y_t[rows]
        rec = forward(self.params, x)
        lr = cfg.lr_at(self.stage, self.stage_step)

        if self.stage == 1:
            q_target, t_target = y_q, y_t
            rss_q = rss(rec.p_q, rec.p_t @ self.tvocab.membership)
            owner = self.tvocab.query_of_prototype
            rss_t = rss(rec.p_t, rec.p_q[:, owner] / self.tvocab.cluster_counts[owner])
            counts = (0, 0, 0)
        else:
            cal = calibrate_batch(rec.p_q, rec.p_t, y_q, y_t, rows, self.calib, self.tvocab)
            branch = cal.branch.copy()
            if cfg.disable_t2q:
                branch[branch == Branch.T2Q] = Branch.PLAIN
            if cfg.disable_q2t:
                branch[branch == Branch.Q2T] = Branch.PLAIN
            t2q = (branch == Branch.T2Q)[:, None]
            q2t = (branch == Branch.Q2T)[:, None]
            q_target = np.where(t2q, cal.r_q, y_q)
            t_target = np.where(q2t, cal.running_r_t, y_t)
            rss_q = rss(rec.p_q, cal.p_hat_q)
            rss_t = rss(rec.p_t, cal.p_hat_t)
            counts = (int(t2q.sum()), int(q2t.sum()), int(len(rows) - t2q.sum() - q2t.sum()))

        grads = backward(self.params, rec, q_target, t_target, cfg.w_q, cfg.w_t)
        sgd_momentum_step(self.params, grads, lr, cfg.momentum, cfg.weight_decay, step=self.step)
        row = TrainLogRow(
            step=self.step, stage=self.stage, lr=lr,
            loss_q=float(np.mean(loss_query(rec.p_q, q_target))),
            loss_t=float(np.mean(loss_text(rec.p_t, t_target))),
            loss_q_primary=float(np.mean(loss_query(rec.p_q, y_q))),
            loss_t_primary=float(np.mean(loss_text(rec.p_t, y_t))),
            rss_q=float(np.mean(rss_q)), rss_t=float(np.mean(rss_t)),
            n_t2q=counts[0], n_q2t=counts[1], n_plain=counts[2],
        )
        self.log.append(row)
        self.step += 1
        self.stage_step += 1
        self.batch += 1
        if self.batch >= self.n_batches:
            self.batch = 0
            self.epoch += 1
            self._advance_stage()
        return row

    def save(self, path) -> None:
        """Checkpoint params, momentum buffers, running refined labels and loop position."""
        extra = {
            "stage": self.stage, "epoch": self.epoch, "batch": self.batch,
            "stage_step": self.stage_step, "config": self.config.to_dict(),
            "calibration_rows": self.calib.sample_ids if self.calib is not None else None,
        }
        arrays = {"running_r_t": self.calib.running_r_t} if self.calib is not None else {}
        rng_state = {"kind": "derived", "key": ["seed", "stage", "epoch"],
                     "seed": self.config.seed, "stage": self.stage, "epoch": self.epoch}
        save_checkpoint(path, self.params, step=self.step, rng_state=rng_state, extra=extra,
                        extra_arrays=arrays)

    @classmethod
    def load(cls, path, data: TrainingData, tvocab: TextVocabulary,
             config: TrainConfig | None = None) -> "Trainer":
        params, manifest, arrays = load_checkpoint(path)
        extra = manifest["extra"]
        if config is None:
            config = TrainConfig(**extra["config"])
        self = cls.__new__(cls)
        self.data, self.tvocab, self.config, self.params = data, tvocab, config, params
        self.stage, self.epoch, self.batch = extra["stage"], extra["epoch"], extra["batch"]
        self.step, self.stage_step = manifest["step"], extra["stage_step"]
        self.log = []
        self.calib = None
        if "running_r_t" in arrays:
            self.calib = CalibrationState(extra["calibration_rows"], arrays["running_r_t"],
                                          alpha=config.alpha, eps_q=config.eps_q,
                                          eps_t=config.eps_t)
        self._advance_stage()
        return self


def train_stage1(params: ModelParams, data: TrainingData, tvocab: TextVocabulary,
                 config: TrainConfig) -> ModelParams:
    """Minibatch SGD on w_q * L_q + w_t * L_t for ``stage1_epochs``; input params untouched."""
    cfg = TrainConfig(**{**config.to_dict(), "stage2_epochs": 0})
    trainer = Trainer(data, tvocab, cfg, params.copy())
    trainer.run()
    return trainer.params


def train_stage2(params: ModelParams, data: TrainingData, tvocab: TextVocabulary,
                 config: TrainConfig, state: CalibrationState | None = None):
    """Calibrated fine-tuning for ``stage2_epochs``; returns (params, log rows).

    ``state`` defaults to running labels seeded with the primary text labels.
    It is updated in place when given.
    """
    cfg = TrainConfig(**{**config.to_dict(), "stage1_epochs": 0})
    trainer = Trainer(data, tvocab, cfg, params.copy())
    if state is not None:
        trainer.calib = state
    rows = trainer.run()
    return trainer.params, rows
