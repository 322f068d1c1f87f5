"""
Bidirectional calibration by hand
=================================

Two queries with two prototypes each. Walk one sample through the
corrections, the refined labels, the running text label and the
branch selection.
"""

import numpy as np

from bical.calibration import (Branch, CalibrationState, confidence, q2t_correction,
                               refine_query_supervision, refine_text_supervision,
                               select_branch, t2q_correction)
from bical.vocab import TextVocabulary

tv = TextVocabulary(np.array([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0], [-0.6, 0.8]]),
                    [0, 0, 1, 1], n_queries=2)
print("index sets:", [s.tolist() for s in tv.index_sets])

# %%
# Model outputs for one sample: the query head is unsure, the text head
# leans towards the prototypes of query 1.
p_q = np.array([0.6, 0.4])
p_t = np.array([0.1, 0.2, 0.3, 0.4])
y_q = np.array([1.0, 0.0])
y_t = np.array([0.4, 0.3, 0.2, 0.1])

# %%
# text -> query sums prototype mass per query; query -> text splits each
# query's mass evenly over its prototypes.
p_hat_q = t2q_correction(p_t, tv)
p_hat_t = q2t_correction(p_q, tv)
print("t2q correction:", p_hat_q, " q2t correction:", p_hat_t)

# %%
# Refined labels: confidence (label times prediction) plus correction,
# renormalized to sum to one.
r_q = refine_query_supervision(confidence(y_q, p_q), p_hat_q)
r_t = refine_text_supervision(confidence(y_t, p_t), p_hat_t)
print("refined query label:", r_q.round(4))
print("refined text label: ", r_t.round(4))

# %%
# The refined text label is smoothed over steps with momentum 0.9.
state = CalibrationState.from_primary(["s0"], y_t[None, :])
for step in range(3):
    running = state.momentum_update_rows(np.array([0]), r_t[None, :])[0]
    print(f"step {step}: running text label {running.round(4)}")

# %%
# Selection: t2q when the query side disagrees with its correction while the
# text side agrees; q2t in the mirror case; otherwise plain training.
d = select_branch(confidence(y_q, p_q), p_hat_q, confidence(y_t, p_t), p_hat_t)
print(f"dist_q={d.dist_q:.3f} dist_t={d.dist_t:.3f} -> {Branch(d.tag).name}")
