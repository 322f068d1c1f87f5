"""Query and text vocabularies.

The query vocabulary is the sorted set of query strings. The text vocabulary
holds, for every query, the k-means centroids of that query's title features;
the number of clusters per query is picked with the Gap Statistic using a
uniform bounding-box reference distribution.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import blob
from .errors import DegenerateVector, InvalidInput, MissingQuerySamples, ParseError

VOCAB_FORMAT = "bical-vocab"
VOCAB_VERSION = 1


@dataclass(frozen=True)
class QueryVocabulary:
    queries: tuple[str, ...]
    index_of: dict[str, int] = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        queries = tuple(self.queries)
        if len(set(queries)) != len(queries):
            raise InvalidInput("duplicate query strings")
        object.__setattr__(self, "queries", queries)
        object.__setattr__(self, "index_of", {q: i for i, q in enumerate(queries)})

    def __len__(self):
        return len(self.queries)


@dataclass
class TextVocabulary:
    """M prototypes grouped into K per-query index sets."""

    prototypes: np.ndarray
    query_of_prototype: np.ndarray
    n_queries: int

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.query_of_prototype = np.asarray(self.query_of_prototype, dtype=np.int64)
        if self.prototypes.ndim != 2 or len(self.prototypes) != len(self.query_of_prototype):
            raise InvalidInput("prototypes must be (M, d) with one query index per row")
        if not np.all(np.isfinite(self.prototypes)):
            raise InvalidInput("prototypes must be finite")
        if np.any(np.linalg.norm(self.prototypes, axis=1) == 0):
            raise DegenerateVector("zero-norm prototype")
        q = self.query_of_prototype
        if len(q) and (q.min() < 0 or q.max() >= self.n_queries):
            raise InvalidInput("prototype query index out of range")
        if np.any(np.diff(q) < 0):
            raise InvalidInput("prototypes must be grouped in query order")
        self.cluster_counts = np.bincount(q, minlength=self.n_queries).astype(np.int64)
        self.index_sets = [np.flatnonzero(q == k) for k in range(self.n_queries)]
        member = np.zeros((len(q), self.n_queries))
        member[np.arange(len(q)), q] = 1.0
        self.membership = member

    @property
    def size(self) -> int:
        return len(self.prototypes)

    M = size

    @property
    def K(self) -> int:
        return self.n_queries

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TextVocabulary):
            return NotImplemented
        return (self.n_queries == other.n_queries
                and np.array_equal(self.query_of_prototype, other.query_of_prototype)
                and self.prototypes.shape == other.prototypes.shape
                and self.prototypes.tobytes() == other.prototypes.tobytes())


@dataclass
class ClusteringResult:
    assignments: np.ndarray
    centroids: np.ndarray
    sse: float
    n_iter: int
    sse_history: list[float]


def _check_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise InvalidInput("points must be a non-empty (n, d) array")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("points must be finite")
    return x


def _sq_dists(x, c):
    diff = x[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(x, k, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _means(x, labels, k):
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k)
    return sums, counts


def kmeans(points, k: int, seed: int = 0, max_iters: int = 100) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iters`` updates. A cluster
    that goes empty is re-seeded with the point lying farthest from its own
    centroid, which keeps exactly ``k`` clusters and never raises the SSE.
    """
    x = _check_points(points)
    n = len(x)
    if not 1 <= k <= n:
        raise InvalidInput(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = None
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d2 = _sq_dists(x, centroids)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            n_iter -= 1
            break
        labels = new
        sums, counts = _means(x, labels, k)
        for empty in np.flatnonzero(counts == 0):
            own = d2[np.arange(n), labels].copy()
            own[counts[labels] <= 1] = -1.0
            far = int(np.argmax(own))
            old = labels[far]
            labels[far] = empty
            sums[old] -= x[far]
            counts[old] -= 1
            sums[empty] = x[far]
            counts[empty] = 1
            d2[far, empty] = 0.0
        centroids = sums / counts[:, None]
        history.append(float(np.sum((x - centroids[labels]) ** 2)))
    # recompute so the returned centroids are exact means of the final labels
    sums, counts = _means(x, labels, k)
    centroids = sums / counts[:, None]
    sse = float(np.sum((x - centroids[labels]) ** 2))
    return ClusteringResult(labels.astype(np.int64), centroids, sse, n_iter, history)


def _log_dispersion(x, k, seed):
    w = kmeans(x, k, seed=seed).sse
    # all points coincide: treat as a tiny positive dispersion
    return np.log(max(w, 1e-300))


def gap_values(points, k_max: int = 8, n_refs: int = 10, seed: int = 0):
    """Gap(k) and s_k for k = 1..k_max (k_max capped at the distinct point count)."""
    x = _check_points(points)
    k_max = min(k_max, len(np.unique(x, axis=0)))
    rng = np.random.default_rng(seed)
    lo, hi = x.min(axis=0), x.max(axis=0)
    refs = [lo + (hi - lo) * rng.random(x.shape) for _ in range(n_refs)]
    gaps, sks = [], []
    for k in range(1, k_max + 1):
        ss = np.random.SeedSequence([seed, k])
        kseeds = ss.generate_state(n_refs + 1)
        log_w = _log_dispersion(x, k, int(kseeds[0]))
        ref_log_w = np.array([_log_dispersion(r, k, int(s)) for r, s in zip(refs, kseeds[1:])])
        gaps.append(ref_log_w.mean() - log_w)
        sks.append(ref_log_w.std() * np.sqrt(1.0 + 1.0 / n_refs))
    return np.array(gaps), np.array(sks)


def gap_statistic(points, k_max: int = 8, n_refs: int = 10, seed: int = 0) -> int:
    """Smallest k with Gap(k) >= Gap(k+1) - s_{k+1}; k_max when none qualifies."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        return 1
    if k_max < 1 or n_refs < 1:
        raise InvalidInput("k_max and n_refs must be >= 1")
    gaps, sks = gap_values(x, k_max, n_refs, seed)
    for k in range(1, len(gaps)):
        if gaps[k - 1] >= gaps[k] - sks[k]:
            return k
    return len(gaps)


def build_query_vocabulary(corpus) -> QueryVocabulary:
    if not corpus:
        raise InvalidInput("empty corpus")
    return QueryVocabulary(tuple(sorted({s.query for s in corpus})))


def query_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def _cluster_query(titles, k_max, n_refs, seed):
    m = gap_statistic(titles, min(k_max, len(titles)), n_refs, seed)
    return kmeans(titles, m, seed=seed).centroids


def build_text_vocabulary(corpus, qvocab: QueryVocabulary, k_max: int = 8, n_refs: int = 10,
                          seed: int = 0, n_jobs: int = 1) -> TextVocabulary:
    """Cluster each query's title features; centroids become prototypes.

    Prototypes are laid out in query order, then cluster order. Per-query
    clustering uses its own derived seed, so ``n_jobs`` does not change output.
    """
    groups = [[] for _ in range(len(qvocab))]
    for s in corpus:
        try:
            groups[qvocab.index_of[s.query]].append(s.title_feature)
        except KeyError:
            raise InvalidInput(f"sample {s.sample_id} has unknown query {s.query!r}") from None
    for k, g in enumerate(groups):
        if not g:
            raise MissingQuerySamples(k)
    jobs = [(np.asarray(g, dtype=np.float64), k_max, n_refs, query_seed(seed, k))
            for k, g in enumerate(groups)]
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            centroids = list(pool.map(lambda a: _cluster_query(*a), jobs))
    else:
        centroids = [_cluster_query(*a) for a in jobs]
    owner = np.concatenate([np.full(len(c), k) for k, c in enumerate(centroids)])
    return TextVocabulary(np.vstack(centroids), owner, len(qvocab))


def save_vocabularies(path, qvocab: QueryVocabulary, tvocab: TextVocabulary) -> None:
    """Write ``vocab.json`` (header) and ``vocab.bin`` (prototype matrix) under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = {
        "format": VOCAB_FORMAT, "version": VOCAB_VERSION,
        "K": len(qvocab), "M": tvocab.size, "dim": tvocab.dim,
        "queries": list(qvocab.queries),
        "cluster_counts": tvocab.cluster_counts.tolist(),
        "index_sets": [s.tolist() for s in tvocab.index_sets],
    }
    (path / "vocab.json").write_text(json.dumps(header, indent=1) + "\n", encoding="utf-8")
    blob.save(path / "vocab.bin", {"prototypes": tvocab.prototypes})


def load_vocabularies(path) -> tuple[QueryVocabulary, TextVocabulary]:
    path = Path(path)
    try:
        header = json.loads((path / "vocab.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path / "vocab.json", line=exc.lineno) from None
    if header.get("format") != VOCAB_FORMAT or header.get("version") != VOCAB_VERSION:
        raise ParseError("not a vocabulary header", path=path / "vocab.json")
    protos = blob.load(path / "vocab.bin").get("prototypes")
    if protos is None or protos.shape != (header["M"], header["dim"]):
        raise ParseError("prototype matrix does not match header", path=path / "vocab.bin")
    owner = np.concatenate([np.full(c, k) for k, c in enumerate(header["cluster_counts"])])
    qvocab = QueryVocabulary(tuple(header["queries"]))
    tvocab = TextVocabulary(protos, owner, header["K"])
    if [s.tolist() for s in tvocab.index_sets] != header["index_sets"]:
        raise ParseError("index sets disagree with cluster counts", path=path / "vocab.json")
    return qvocab, tvocab
