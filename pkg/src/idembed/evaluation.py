"""Test-phase set embeddings, cosine retrieval and CMC / mAP."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import DimensionError
from .data import SetSample, SetView
from .model import embed_array
from .params import ParamStore


class DegenerateInputError(ValueError):
    pass


def embed_test_set(s: SetSample | SetView | np.ndarray, params: ParamStore) -> np.ndarray:
    """Average of the item embeddings; no confidences exist at test time."""
    items = s if isinstance(s, np.ndarray) else s.items
    items = np.asarray(items, dtype=np.float64)
    if items.ndim != 2 or len(items) == 0:
        raise DimensionError("embed_test_set needs a non-empty (n, input_dim) item array")
    return embed_array(params, items).mean(axis=0)


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_distance: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine distance of a zero vector")
    return float(1.0 - (a @ b) / (na * nb))


def cosine_distance_matrix(q, g) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    if np.any(qn == 0) or np.any(gn == 0):
        raise DegenerateInputError("cosine distance of a zero vector")
    return 1.0 - (q / qn) @ (g / gn).T


def rank_metrics(
    distmat,
    q_labels,
    g_labels,
    q_cams=None,
    g_cams=None,
) -> tuple[np.ndarray, np.ndarray]:
    """CMC curve and per-query average precision.

    Gallery entries sharing both identity and camera with the query are
    discarded before ranking. Ties in distance keep gallery order. AP is the
    mean of precision@k over the ranks k of every correct match.
    """
    distmat = np.asarray(distmat, dtype=np.float64)
    q_labels, g_labels = np.asarray(q_labels), np.asarray(g_labels)
    nq, ng = distmat.shape
    if q_labels.shape != (nq,) or g_labels.shape != (ng,):
        raise DimensionError("label arrays do not match the distance matrix")
    if (q_cams is None) != (g_cams is None):
        raise ValueError("pass camera ids for both queries and gallery, or neither")
    order = np.argsort(distmat, axis=1, kind="stable")
    cmc = np.zeros(ng)
    aps = np.empty(nq)
    for i in range(nq):
        idx = order[i]
        if q_cams is not None:
            junk = (g_labels[idx] == q_labels[i]) & (np.asarray(g_cams)[idx] == q_cams[i])
            idx = idx[~junk]
        hits = g_labels[idx] == q_labels[i]
        if not hits.any():
            raise ValueError(f"query {i} (identity {q_labels[i]}) has no match in the gallery")
        first = int(np.argmax(hits))
        cmc[first:] += 1.0
        ranks = np.flatnonzero(hits) + 1
        aps[i] = np.mean(np.arange(1, len(ranks) + 1) / ranks)
    return cmc / nq, aps


@dataclass
class EvalReport:
    cmc: list[float]
    map: float
    per_query_ap: list[float]
    num_queries: int
    num_gallery: int
    config_fingerprint: str = ""
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def cmc_at(self, rank: int) -> float:
        return self.cmc[min(rank, len(self.cmc)) - 1]

    @property
    def cmc1(self) -> float:
        return self.cmc[0]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def write_cmc_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("rank", "value", "config_fingerprint"))
            for r, v in enumerate(self.cmc, start=1):
                w.writerow((r, repr(v), self.config_fingerprint))

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def report_from_embeddings(
    q_emb, q_labels, g_emb, g_labels, q_cams=None, g_cams=None, fingerprint="", seed=None
) -> EvalReport:
    dist = cosine_distance_matrix(q_emb, g_emb)
    cmc, aps = rank_metrics(dist, q_labels, g_labels, q_cams, g_cams)
    return EvalReport(
        cmc=[float(v) for v in cmc],
        map=float(aps.mean()),
        per_query_ap=[float(v) for v in aps],
        num_queries=len(q_labels),
        num_gallery=len(g_labels),
        config_fingerprint=fingerprint,
        seed=seed,
    )


def evaluate(
    queries: Sequence[SetSample | SetView],
    gallery: Sequence[SetSample | SetView],
    params: ParamStore,
    fingerprint: str = "",
    seed: int | None = None,
) -> EvalReport:
    """Rank the gallery for each query by cosine distance of mean-fused embeddings.

    A query and gallery set with the same identity and camera are never
    matched, so passing the same list as both runs an all-vs-rest,
    cross-camera protocol.
    """
    if len(queries) == 0 or len(gallery) == 0:
        raise ValueError("need at least one query and one gallery set")
    q_emb = np.stack([embed_test_set(s, params) for s in queries])
    g_emb = q_emb if gallery is queries else np.stack([embed_test_set(s, params) for s in gallery])
    return report_from_embeddings(
        q_emb,
        np.array([s.set_label for s in queries]),
        g_emb,
        np.array([s.set_label for s in gallery]),
        np.array([s.camera_id for s in queries]),
        np.array([s.camera_id for s in gallery]),
        fingerprint,
        seed,
    )
