"""
Synthetic corpus, query vocabulary and text prototypes
======================================================

A small corpus with two latent modes per query, then one Gap Statistic
per query to decide how many title prototypes it gets.
"""

import numpy as np

from bical.supervision import build_supervision
from bical.synth import SynthConfig, generate
from bical.vocab import build_query_vocabulary, build_text_vocabulary, gap_values

# %%
# Every query covers two visually different modes, and 30% of titles borrow
# a template shared with one mode of some other query.
cfg = SynthConfig(n_queries=6, samples_per_mode=60, polysemy_separation=6.0,
                  noise_sigma=0.6, seed=3)
corpus = generate(cfg)
print(len(corpus), "samples, first:", corpus[0].sample_id, corpus[0].query)

# %%
# The query vocabulary is just the sorted set of query strings.
qv = build_query_vocabulary(corpus)
print("queries:", qv.queries)

# %%
# Gap(k) for one query: the chosen k is the smallest one whose gap is within
# one standard error of the next.
titles = np.stack([s.title_feature for s in corpus if s.query == qv.queries[0]])
gaps, sk = gap_values(titles, k_max=5, seed=0)
for k, (g, s) in enumerate(zip(gaps, sk), start=1):
    print(f"k={k}  gap={g:6.3f}  s_k={s:.3f}")

# %%
# Prototypes per query (isomorphic titles often earn a cluster of their own).
tv = build_text_vocabulary(corpus, qv, seed=0)
print("prototypes per query:", tv.cluster_counts.tolist(), "total M =", tv.M)

# %%
# Primary text supervision is a sharpened softmax over cosine similarity to
# all M prototypes; most of the mass lands on the sample's own query.
cache = build_supervision(corpus, qv, tv)
k = cache.query_index[0]
own = cache.y_t[0, tv.index_sets[k]].sum()
print(f"sample 0: mass on own query's prototypes = {own:.3f}")
