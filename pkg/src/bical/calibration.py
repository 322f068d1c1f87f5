"""Text-to-query and query-to-text calibration.

t2q: sum the text distribution over each query's prototypes to get a
query-level correction, then refine the one-hot query label with it.
q2t: spread each query probability evenly over that query's prototypes, refine
the soft text label with it, and smooth the result per sample with momentum.
A threshold rule decides per sample which refined label (if any) is trained on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .numerics import l1_renormalize, l2_distance
from .vocab import TextVocabulary

DEFAULT_EPS_Q = 0.5
DEFAULT_EPS_T = 0.7
DEFAULT_ALPHA = 0.9


class Branch(enum.IntEnum):
    PLAIN = 0
    T2Q = 1
    Q2T = 2


@dataclass(frozen=True)
class BranchDecision:
    tag: Branch
    dist_q: float
    dist_t: float


def _check_len(v, n, what):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != n:
        raise InvalidInput(f"{what} has length {v.shape[-1]}, expected {n}")
    return v


def t2q_correction(p_t, tvocab: TextVocabulary) -> np.ndarray:
    """Query-level mass: entry k sums p_t over the prototypes of query k."""
    p_t = _check_len(p_t, tvocab.size, "p_t")
    return p_t @ tvocab.membership


def q2t_correction(p_q, tvocab: TextVocabulary) -> np.ndarray:
    """Prototype-level mass: p_q[k] / m_k on every prototype of query k."""
    p_q = _check_len(p_q, tvocab.K, "p_q")
    owner = tvocab.query_of_prototype
    return p_q[..., owner] / tvocab.cluster_counts[owner]


def confidence(y, p) -> np.ndarray:
    """Elementwise product of a label and the model's distribution (not renormalized)."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise InvalidInput(f"shape mismatch: {y.shape} vs {p.shape}")
    return y * p


def refine_query_supervision(y_q_conf, p_hat_q) -> np.ndarray:
    y_q_conf = np.asarray(y_q_conf, dtype=np.float64)
    p_hat_q = np.asarray(p_hat_q, dtype=np.float64)
    if y_q_conf.shape != p_hat_q.shape:
        raise InvalidInput(f"shape mismatch: {y_q_conf.shape} vs {p_hat_q.shape}")
    return l1_renormalize(y_q_conf + p_hat_q)


def refine_text_supervision(y_t_conf, p_hat_t) -> np.ndarray:
    return refine_query_supervision(y_t_conf, p_hat_t)


@dataclass
class CalibrationState:
    """Running refined text labels, one row per sample id.

    Rows must be seeded with the samples' primary text supervision before the
    first update (``CalibrationState.from_primary``).
    """

    sample_ids: list[str]
    running_r_t: np.ndarray
    alpha: float = DEFAULT_ALPHA
    eps_q: float = DEFAULT_EPS_Q
    eps_t: float = DEFAULT_EPS_T
    row_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise InvalidInput("alpha must lie in [0, 1)")
        if self.eps_q < 0 or self.eps_t < 0:
            raise InvalidInput("thresholds must be non-negative")
        self.running_r_t = np.array(self.running_r_t, dtype=np.float64)
        self.row_of = {sid: i for i, sid in enumerate(self.sample_ids)}
        if len(self.row_of) != len(self.sample_ids):
            raise InvalidInput("duplicate sample ids")

    @classmethod
    def from_primary(cls, sample_ids, y_t, **kw) -> "CalibrationState":
        return cls(list(sample_ids), np.array(y_t, dtype=np.float64), **kw)

    def get(self, sample_id) -> np.ndarray:
        return self.running_r_t[self.row_of[sample_id]].copy()

    def momentum_update_rows(self, rows, r_t_new) -> np.ndarray:
        """Vectorized update of several table rows at once."""
        rows = np.asarray(rows)
        r_t_new = np.asarray(r_t_new, dtype=np.float64)
        updated = self.alpha * self.running_r_t[rows] + (1.0 - self.alpha) * r_t_new
        self.running_r_t[rows] = updated
        return updated


def momentum_update(state: CalibrationState, sample_id, r_t_new) -> np.ndarray:
    """R~ <- alpha * R~ + (1 - alpha) * R for one sample; returns the new running value."""
    row = state.row_of[sample_id]
    return state.momentum_update_rows([row], np.asarray(r_t_new)[None])[0]


def select_branches(dist_q, dist_t, eps_q: float = DEFAULT_EPS_Q,
                    eps_t: float = DEFAULT_EPS_T) -> np.ndarray:
    """Branch codes for arrays of distances; equality with a threshold falls to PLAIN."""
    dist_q = np.asarray(dist_q, dtype=np.float64)
    dist_t = np.asarray(dist_t, dtype=np.float64)
    out = np.full(np.broadcast(dist_q, dist_t).shape, Branch.PLAIN, dtype=np.int64)
    out[(dist_q > eps_q) & (dist_t < eps_t)] = Branch.T2Q
    out[(dist_t > eps_t) & (dist_q < eps_q)] = Branch.Q2T
    return out


def select_branch(y_q_conf, p_hat_q, y_t_conf, p_hat_t, eps_q: float = DEFAULT_EPS_Q,
                  eps_t: float = DEFAULT_EPS_T) -> BranchDecision:
    dq = l2_distance(y_q_conf, p_hat_q)
    dt = l2_distance(y_t_conf, p_hat_t)
    return BranchDecision(Branch(int(select_branches(dq, dt, eps_q, eps_t))), dq, dt)


@dataclass
class CalibrationStep:
    """Everything the calibration computes for one batch of forward outputs."""

    p_hat_q: np.ndarray
    p_hat_t: np.ndarray
    r_q: np.ndarray
    r_t: np.ndarray
    running_r_t: np.ndarray
    dist_q: np.ndarray
    dist_t: np.ndarray
    branch: np.ndarray


def calibrate_batch(p_q, p_t, y_q, y_t, rows, state: CalibrationState,
                    tvocab: TextVocabulary) -> CalibrationStep:
    """Corrections, refined labels, running-label update and branch choice for a batch.

    Mutates ``state`` (the running refined text labels of ``rows``).
    """
    p_hat_q = t2q_correction(p_t, tvocab)
    p_hat_t = q2t_correction(p_q, tvocab)
    yq_conf = confidence(y_q, p_q)
    yt_conf = confidence(y_t, p_t)
    r_q = refine_query_supervision(yq_conf, p_hat_q)
    r_t = refine_text_supervision(yt_conf, p_hat_t)
    running = state.momentum_update_rows(rows, r_t)
    dist_q = l2_distance(yq_conf, p_hat_q)
    dist_t = l2_distance(yt_conf, p_hat_t)
    branch = select_branches(dist_q, dist_t, state.eps_q, state.eps_t)
    return CalibrationStep(p_hat_q, p_hat_t, r_q, r_t, running, np.atleast_1d(dist_q),
                           np.atleast_1d(dist_t), branch)
