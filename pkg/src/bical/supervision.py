"""Primary query (one-hot) and text (soft prototype) supervision."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import blob
from .errors import InvalidInput, ParseError, UnknownQuery
from .numerics import as_float_array, cosine_similarity, one_hot, softmax_with_temperature
from .vocab import QueryVocabulary, TextVocabulary


def primary_query_supervision(sample, qvocab: QueryVocabulary) -> np.ndarray:
    """One-hot over the query vocabulary. ``sample`` may be a CorpusSample or a query string."""
    query = sample if isinstance(sample, str) else sample.query
    if query not in qvocab.index_of:
        raise UnknownQuery(query)
    return one_hot(qvocab.index_of[query], len(qvocab))


def primary_text_supervision(title_feature, tvocab: TextVocabulary, sharpen: bool = True) -> np.ndarray:
    """Softmax over cosine similarities to every prototype at temperature 1/M.

    With ``sharpen`` (default) the cosines are multiplied by M before the
    exponent; ``sharpen=False`` divides them by M instead. Accepts one title
    vector or a matrix of them.
    """
    f = as_float_array(title_feature, "title_feature")
    if f.shape[-1] != tvocab.dim:
        raise InvalidInput(f"title dimension {f.shape[-1]} != prototype dimension {tvocab.dim}")
    if f.ndim == 1:
        cos = cosine_similarity(f, tvocab.prototypes)
    else:
        cos = cosine_similarity(f[:, None, :], tvocab.prototypes[None, :, :])
    m = tvocab.size
    return softmax_with_temperature(cos, 1.0 / m if sharpen else float(m))


@dataclass
class SupervisionCache:
    """Per-sample primary supervision, aligned with corpus order.

    ``y_q`` is kept as query indices; ``query_targets`` expands them to one-hot.
    """

    sample_ids: list[str]
    query_index: np.ndarray
    y_t: np.ndarray
    n_queries: int

    def __len__(self):
        return len(self.sample_ids)

    def query_targets(self, rows=None) -> np.ndarray:
        idx = self.query_index if rows is None else self.query_index[rows]
        return one_hot(idx, self.n_queries)

    def __eq__(self, other):
        if not isinstance(other, SupervisionCache):
            return NotImplemented
        return (self.sample_ids == other.sample_ids and self.n_queries == other.n_queries
                and np.array_equal(self.query_index, other.query_index)
                and self.y_t.tobytes() == other.y_t.tobytes())


def build_supervision(corpus, qvocab: QueryVocabulary, tvocab: TextVocabulary,
                      sharpen: bool = True) -> SupervisionCache:
    qidx = []
    for s in corpus:
        if s.query not in qvocab.index_of:
            raise UnknownQuery(s.query)
        qidx.append(qvocab.index_of[s.query])
    titles = np.stack([s.title_feature for s in corpus])
    y_t = primary_text_supervision(titles, tvocab, sharpen=sharpen)
    return SupervisionCache([s.sample_id for s in corpus], np.array(qidx, dtype=np.int64),
                            y_t, len(qvocab))


def save_supervision(path, cache: SupervisionCache) -> None:
    """``supervision.jsonl`` with {sample_id, query_index} rows plus ``supervision.bin``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"format": "bical-supervision", "version": 1, "count": len(cache),
                         "K": cache.n_queries, "M": cache.y_t.shape[1]})]
    lines += [json.dumps({"sample_id": sid, "query_index": int(q)})
              for sid, q in zip(cache.sample_ids, cache.query_index)]
    (path / "supervision.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    blob.save(path / "supervision.bin", {"y_t": cache.y_t})


def load_supervision(path) -> SupervisionCache:
    path = Path(path)
    meta = path / "supervision.jsonl"
    rows = []
    with open(meta, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, path=meta, line=lineno, offset=exc.pos) from None
    if not rows or rows[0].get("format") != "bical-supervision":
        raise ParseError("not a supervision header", path=meta, line=1)
    header, rows = rows[0], rows[1:]
    y_t = blob.load(path / "supervision.bin").get("y_t")
    if len(rows) != header["count"] or y_t is None or y_t.shape != (header["count"], header["M"]):
        raise ParseError("supervision rows do not match the matrix", path=path / "supervision.bin")
    return SupervisionCache([r["sample_id"] for r in rows],
                            np.array([r["query_index"] for r in rows], dtype=np.int64),
                            y_t, header["K"])
