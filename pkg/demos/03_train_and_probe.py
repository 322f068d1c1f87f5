"""
Two-stage training and a linear probe
=====================================

Train the encoder on a small corpus, watch branch counts and RSS in the
calibrated stage, then probe the frozen features on the latent classes.
"""

import numpy as np

from bical.model import init_params
from bical.probe import run_probe
from bical.supervision import build_supervision
from bical.synth import SynthConfig, generate, latent_labels, stack
from bical.trainer import TrainConfig, Trainer, TrainingData
from bical.vocab import build_query_vocabulary, build_text_vocabulary

corpus = generate(SynthConfig(n_queries=10, samples_per_mode=60, nuisance_dims=8,
                              nuisance_sigma=8.0, title_noise_sigma=0.6, crossover_rate=0.15,
                              seed=0))
qv = build_query_vocabulary(corpus)
tv = build_text_vocabulary(corpus, qv, seed=0)
video, _ = stack(corpus)
labels = latent_labels(corpus)
data = TrainingData(video, build_supervision(corpus, qv, tv))

# %%
# Probe of an untrained encoder, for reference.
p0 = init_params(video.shape[1], len(qv), tv.M, seed=0)
print(f"untrained encoder: top-1 {run_probe(p0, video, labels).top1:.3f}")

# %%
# 12 + 12 epochs; stage 2 runs at a tenth of the stage-1 learning rate.
trainer = Trainer(data, tv, TrainConfig(stage1_epochs=12, stage2_epochs=12, lr=0.02, seed=0))
log = trainer.run()
stage2 = [r for r in log if r.stage == 2]
print("stage-2 branch totals  t2q:", sum(r.n_t2q for r in stage2),
      " q2t:", sum(r.n_q2t for r in stage2), " plain:", sum(r.n_plain for r in stage2))

# %%
# RSS between each head and the correction built from the other head.
n = max(1, len(stage2) // 10)
for key in ("rss_q", "rss_t"):
    first = np.mean([getattr(r, key) for r in stage2[:n]])
    last = np.mean([getattr(r, key) for r in stage2[-n:]])
    print(f"{key}: first 10% {first:.4f}  last 10% {last:.4f}")

# %%
res = run_probe(trainer.params, video, labels)
print(f"trained encoder: top-1 {res.top1:.3f}  top-5 {res.top5:.3f}")
