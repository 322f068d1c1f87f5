"""Synthetic web-video corpora with planted query polysemy and title isomorphism.

Every query owns several latent modes. A mode has a center in video-feature
space and a center in title-feature space. Latent classes enumerate the
(query, mode) pairs, so a polysemous query spans several ground-truth classes.
With probability ``isomorphism_rate`` a sample's title is drawn around the
title center of a partner mode belonging to another query instead of its own:
the title then looks like the partner's titles while the video does not.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import blob
from .errors import InvalidInput, ParseError

CORPUS_FORMAT = "bical-corpus"
CORPUS_VERSION = 1


@dataclass
class CorpusSample:
    sample_id: str
    query: str
    video_feature: np.ndarray
    title_feature: np.ndarray
    latent_class: int | None = None

    def __eq__(self, other):
        if not isinstance(other, CorpusSample):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.query == other.query
            and self.latent_class == other.latent_class
            and np.array_equal(self.video_feature, other.video_feature)
            and np.array_equal(self.title_feature, other.title_feature)
        )


@dataclass
class SynthConfig:
    n_queries: int = 20
    modes_per_query: tuple[int, int] = (2, 2)
    samples_per_mode: int = 100
    feature_dim: int = 16
    title_dim: int = 16
    isomorphism_rate: float = 0.3
    polysemy_separation: float = 4.0
    noise_sigma: float = 1.0
    seed: int = 0
    # spacing of query anchors (expected pairwise distance)
    query_spread: float = 8.0
    title_query_spread: float = 8.0
    title_noise_sigma: float | None = None
    # high-variance nuisance directions added to the video features
    nuisance_dims: int = 0
    nuisance_sigma: float = 0.0
    # "mode": isomorphic titles sit at a fixed partner mode's title center
    # "pair": modes are paired across queries and each pair shares a fresh template
    # "sample": a fresh partner mode per sample
    isomorphism_partner: str = "pair"
    # probability that a video retrieved by a query depicts a mode of another query;
    # its video, title and latent class then follow that other mode
    crossover_rate: float = 0.0

    def __post_init__(self):
        self.modes_per_query = tuple(int(m) for m in self.modes_per_query)
        lo, hi = self.modes_per_query
        if self.n_queries < 1 or self.samples_per_mode < 1 or lo < 1 or hi < lo:
            raise InvalidInput("counts must be >= 1 and modes_per_query a valid range")
        if self.feature_dim < 2 or self.title_dim < 2:
            raise InvalidInput("feature dimensions must be >= 2")
        if hi > min(self.feature_dim, self.title_dim):
            raise InvalidInput("modes_per_query cannot exceed the feature dimensions")
        for name in ("isomorphism_rate", "crossover_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInput(f"{name} must lie in [0, 1]")
        if (self.isomorphism_rate > 0 or self.crossover_rate > 0) and self.n_queries < 2:
            raise InvalidInput("isomorphism and crossover need at least two queries")
        if not 0 <= self.nuisance_dims <= self.feature_dim:
            raise InvalidInput("nuisance_dims must lie in [0, feature_dim]")
        if self.isomorphism_partner not in ("mode", "pair", "sample"):
            raise InvalidInput("isomorphism_partner must be 'mode', 'pair' or 'sample'")
        for name in ("polysemy_separation", "noise_sigma", "query_spread",
                     "title_query_spread", "nuisance_sigma"):
            if getattr(self, name) < 0:
                raise InvalidInput(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes_per_query"] = list(self.modes_per_query)
        return d


def _orthonormal(rng, n, dim):
    q, _ = np.linalg.qr(rng.standard_normal((dim, n)))
    return q.T[:n]


def _centers(rng, n_modes, dim, spread, separation):
    anchor = rng.standard_normal(dim) * spread / np.sqrt(2 * dim)
    # pairwise distance between modes is exactly `separation`
    return anchor + _orthonormal(rng, n_modes, dim) * separation / np.sqrt(2)


def generate(config: SynthConfig) -> list[CorpusSample]:
    """Draw a corpus; identical configs give identical corpora."""
    cfg = config
    title_sigma = cfg.noise_sigma if cfg.title_noise_sigma is None else cfg.title_noise_sigma
    root = np.random.SeedSequence(cfg.seed)
    structure_rng = np.random.default_rng(root.spawn(1)[0])

    lo, hi = cfg.modes_per_query
    n_modes = structure_rng.integers(lo, hi + 1, size=cfg.n_queries)
    video_centers, title_centers = [], []
    for k in range(cfg.n_queries):
        video_centers.append(_centers(structure_rng, n_modes[k], cfg.feature_dim,
                                      cfg.query_spread, cfg.polysemy_separation))
        title_centers.append(_centers(structure_rng, n_modes[k], cfg.title_dim,
                                      cfg.title_query_spread, cfg.polysemy_separation))
    nuisance = (_orthonormal(structure_rng, cfg.nuisance_dims, cfg.feature_dim)
                if cfg.nuisance_dims else np.zeros((0, cfg.feature_dim)))

    # each mode gets one partner mode from a different query
    partners = {}
    for k in range(cfg.n_queries):
        for m in range(n_modes[k]):
            if cfg.n_queries > 1:
                other = int(structure_rng.integers(cfg.n_queries - 1))
                other += other >= k
                partners[k, m] = (other, int(structure_rng.integers(n_modes[other])))

    templates = {}
    if cfg.isomorphism_partner == "pair":
        modes = [(k, m) for k in range(cfg.n_queries) for m in range(n_modes[k])]
        order = [modes[i] for i in structure_rng.permutation(len(modes))]
        while order:
            a = order.pop()
            j = next((i for i, b in enumerate(order) if b[0] != a[0]), None)
            t = structure_rng.standard_normal(cfg.title_dim) * cfg.title_query_spread / np.sqrt(2 * cfg.title_dim)
            templates[a] = t
            if j is not None:
                templates[order.pop(j)] = t

    first_class = np.concatenate([[0], np.cumsum(n_modes)])
    width = len(str(cfg.n_queries - 1))
    samples = []
    sample_rngs = root.spawn(1 + cfg.n_queries)[1:]
    for k in range(cfg.n_queries):
        rng = np.random.default_rng(sample_rngs[k])
        query = f"q{k:0{width}d}"
        for m in range(n_modes[k]):
            n = cfg.samples_per_mode
            # the (query, mode) each video actually depicts
            src_q = np.full(n, k)
            src_m = np.full(n, m)
            cross = rng.random(n) < cfg.crossover_rate
            for j in np.flatnonzero(cross):
                other = int(rng.integers(cfg.n_queries - 1))
                other += other >= k
                src_q[j], src_m[j] = other, int(rng.integers(n_modes[other]))
            vc = np.array([video_centers[a][b] for a, b in zip(src_q, src_m)])
            base = np.array([title_centers[a][b] for a, b in zip(src_q, src_m)])
            video = vc + cfg.noise_sigma * rng.standard_normal((n, cfg.feature_dim))
            if cfg.nuisance_dims:
                video += (cfg.nuisance_sigma * rng.standard_normal((n, cfg.nuisance_dims))) @ nuisance
            iso = rng.random(n) < cfg.isomorphism_rate
            for j in np.flatnonzero(iso):
                if cfg.isomorphism_partner == "pair":
                    base[j] = templates[int(src_q[j]), int(src_m[j])]
                    continue
                if cfg.isomorphism_partner == "mode":
                    pk, pm = partners[int(src_q[j]), int(src_m[j])]
                else:
                    pk = int(rng.integers(cfg.n_queries - 1))
                    pk += pk >= src_q[j]
                    pm = int(rng.integers(n_modes[pk]))
                base[j] = title_centers[pk][pm]
            title = base + title_sigma * rng.standard_normal((n, cfg.title_dim))
            for j in range(n):
                samples.append(CorpusSample(
                    sample_id=f"{query}-m{m}-{j:05d}",
                    query=query,
                    video_feature=video[j],
                    title_feature=title[j],
                    latent_class=int(first_class[src_q[j]] + src_m[j]),
                ))
    return samples


def stack(corpus: list[CorpusSample]) -> tuple[np.ndarray, np.ndarray]:
    """(video matrix, title matrix) in corpus order."""
    video = np.stack([s.video_feature for s in corpus]).astype(np.float64)
    title = np.stack([s.title_feature for s in corpus]).astype(np.float64)
    return video, title


def latent_labels(corpus: list[CorpusSample]) -> np.ndarray:
    if any(s.latent_class is None for s in corpus):
        raise InvalidInput("corpus has samples without latent classes")
    return np.array([s.latent_class for s in corpus], dtype=np.int64)


def export_corpus(corpus: list[CorpusSample], path) -> None:
    """Write ``corpus.jsonl`` (metadata) and ``corpus.bin`` (features) under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    video, title = stack(corpus)
    header = {"format": CORPUS_FORMAT, "version": CORPUS_VERSION, "count": len(corpus),
              "feature_dim": video.shape[1], "title_dim": title.shape[1]}
    lines = [json.dumps(header, sort_keys=True)]
    for row, s in enumerate(corpus):
        lines.append(json.dumps({"row": row, "sample_id": s.sample_id, "query": s.query,
                                 "latent_class": s.latent_class}, sort_keys=True))
    (path / "corpus.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    blob.save(path / "corpus.bin", {"video": video, "title": title})


def import_corpus(path) -> list[CorpusSample]:
    path = Path(path)
    meta_path = path / "corpus.jsonl"
    records = []
    header = None
    with open(meta_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=meta_path, line=lineno,
                                 offset=exc.pos) from None
            if header is None:
                if obj.get("format") != CORPUS_FORMAT or obj.get("version") != CORPUS_VERSION:
                    raise ParseError("not a corpus header", path=meta_path, line=lineno)
                header = obj
                continue
            missing = {"row", "sample_id", "query", "latent_class"} - obj.keys()
            if missing:
                raise ParseError(f"missing keys {sorted(missing)}", path=meta_path, line=lineno)
            if obj["row"] != len(records):
                raise ParseError(f"expected row {len(records)}, got {obj['row']}",
                                 path=meta_path, line=lineno)
            records.append(obj)
    if header is None:
        raise ParseError("empty metadata file", path=meta_path, line=1)
    if header["count"] != len(records):
        raise ParseError(f"header count {header['count']} but {len(records)} records",
                         path=meta_path)
    arrays = blob.load(path / "corpus.bin")
    video, title = arrays.get("video"), arrays.get("title")
    if video is None or title is None:
        raise ParseError("feature blob lacks video/title matrices", path=path / "corpus.bin")
    if video.shape != (len(records), header["feature_dim"]) or \
            title.shape != (len(records), header["title_dim"]):
        raise ParseError(f"feature matrices {video.shape}/{title.shape} do not match "
                         f"{len(records)} manifest rows", path=path / "corpus.bin")
    return [CorpusSample(sample_id=r["sample_id"], query=r["query"],
                         video_feature=video[i].copy(), title_feature=title[i].copy(),
                         latent_class=r["latent_class"])
            for i, r in enumerate(records)]
