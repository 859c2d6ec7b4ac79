"""CSLS retrieval, bilingual lexicon induction scoring and permutation rounding."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatch, EmptyDictionary

__all__ = [
    "RetrievalResult",
    "PrecisionReport",
    "knn_mean_sim",
    "csls_retrieve",
    "evaluate_bli",
    "round_to_permutation",
    "write_ranked_pairs",
]

DEFAULT_BLOCK = 1024


@dataclass(frozen=True)
class RetrievalResult:
    """Top-``k`` targets per query, best first. Arrays have shape (m, topk)."""

    indices: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class PrecisionReport:
    """BLI precision.

    ``p_at_1`` and ``p_at_5`` are fractions of the evaluated (in-vocabulary)
    queries; the ``*_all`` variants divide by every dictionary query instead,
    counting skipped ones as misses.
    """

    p_at_1: float
    p_at_5: float
    evaluated_queries: int
    skipped_oov: int
    p_at_1_all: float
    p_at_5_all: float
    csls_k: int = 10
    retrieval: RetrievalResult | None = field(default=None, repr=False, compare=False)
    queries: tuple = field(default=(), repr=False, compare=False)

    def to_record(self):
        """Tab-separated ``metric<TAB>value`` lines."""
        rows = [
            ("p_at_1", f"{self.p_at_1:.6f}"),
            ("p_at_5", f"{self.p_at_5:.6f}"),
            ("p_at_1_all_queries", f"{self.p_at_1_all:.6f}"),
            ("p_at_5_all_queries", f"{self.p_at_5_all:.6f}"),
            ("evaluated_queries", str(self.evaluated_queries)),
            ("skipped_oov", str(self.skipped_oov)),
            ("csls_k", str(self.csls_k)),
        ]
        return "".join(f"{k}\t{v}\n" for k, v in rows)


def _as_2d(A, name):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {A.shape}")
    return A


def knn_mean_sim(queries, targets, k, block=DEFAULT_BLOCK):
    """Mean cosine similarity of each query to its ``k`` most similar targets.

    Rows of both inputs are assumed unit-normalized, so dot products are
    cosines. Queries are processed ``block`` rows at a time.
    """
    Q = _as_2d(queries, "queries")
    T = _as_2d(targets, "targets")
    if Q.shape[1] != T.shape[1]:
        raise DimensionMismatch(f"dimension mismatch: {Q.shape[1]} vs {T.shape[1]}")
    n = T.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    out = np.empty(Q.shape[0])
    for start in range(0, Q.shape[0], block):
        S = Q[start:start + block] @ T.T
        top = np.partition(S, n - k, axis=1)[:, n - k:]
        out[start:start + block] = top.mean(axis=1)
    return out


def _topk_rows(S, topk):
    """Indices/values of the ``topk`` largest entries per row, ties to the lower index."""
    m, n = S.shape
    idx = np.empty((m, topk), dtype=np.int64)
    if topk < n:
        part = np.argpartition(-S, topk - 1, axis=1)[:, :topk]
        kth = np.take_along_axis(S, part, axis=1).min(axis=1)
    for i in range(m):
        row = S[i]
        cand = np.flatnonzero(row >= kth[i]) if topk < n else np.arange(n)
        order = np.lexsort((cand, -row[cand]))[:topk]
        idx[i] = cand[order]
    return idx, np.take_along_axis(S, idx, axis=1)


def csls_retrieve(
    mapped_sources,
    targets,
    k=10,
    topk=10,
    source_pool=None,
    block=DEFAULT_BLOCK,
):
    """Rank targets for each mapped source by CSLS.

    ``score(s, t) = 2 cos(s, t) - r_T(s) - r_S(t)`` where ``r_T(s)`` is the
    mean similarity of ``s`` to its ``k`` nearest targets and ``r_S(t)`` that
    of ``t`` to its ``k`` nearest vectors in ``source_pool`` (the mapped
    source vocabulary; defaults to ``mapped_sources``).

    Returns
    -------
    RetrievalResult
        Top ``topk`` targets per source, ties broken toward lower index.
    """
    S_src = _as_2d(mapped_sources, "mapped_sources")
    T = _as_2d(targets, "targets")
    pool = S_src if source_pool is None else _as_2d(source_pool, "source_pool")
    if not (S_src.shape[1] == T.shape[1] == pool.shape[1]):
        raise DimensionMismatch("sources, targets and pool must share the embedding dimension")
    topk = min(topk, T.shape[0])
    r_t = knn_mean_sim(S_src, T, k, block)
    r_s = knn_mean_sim(T, pool, k, block)
    indices = []
    scores = []
    for start in range(0, S_src.shape[0], block):
        scores_blk = 2.0 * (S_src[start:start + block] @ T.T)
        scores_blk -= r_t[start:start + block, None]
        scores_blk -= r_s[None, :]
        idx, val = _topk_rows(scores_blk, topk)
        indices.append(idx)
        scores.append(val)
    if not indices:
        return RetrievalResult(np.empty((0, topk), dtype=np.int64), np.empty((0, topk)))
    return RetrievalResult(np.vstack(indices), np.vstack(scores))


def _unit(A):
    norms = np.linalg.norm(A, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return A / norms


def evaluate_bli(W, X_full, Z_full, dictionary, k=10, block=DEFAULT_BLOCK):
    """Precision@1 and @5 of CSLS retrieval after mapping sources by ``W``.

    Parameters
    ----------
    W : array, shape (d, d)
    X_full, Z_full : EmbeddingMatrix
        Full source and target vocabularies (retrieval runs over all targets).
    dictionary : BilingualDictionary
    k : int
        CSLS neighbourhood size.

    A query (source word) is skipped as out-of-vocabulary when the word or
    all of its gold translations are missing; otherwise it is correct at
    rank ``r`` if any gold translation appears in the top ``r``.
    """
    if len(dictionary) == 0:
        raise EmptyDictionary("dictionary has no entries")
    W = np.asarray(W, dtype=np.float64)
    src_index = X_full.index
    tgt_index = Z_full.index

    queries = []
    gold = []
    skipped = 0
    for word, targets in dictionary.items():
        ids = sorted(tgt_index[t] for t in targets if t in tgt_index)
        if word not in src_index or not ids:
            skipped += 1
            continue
        queries.append(word)
        gold.append(set(ids))
    total = len(queries) + skipped
    if not queries:
        return PrecisionReport(0.0, 0.0, 0, skipped, 0.0, 0.0, k)

    mapped_all = _unit(X_full.vectors @ W)
    targets = _unit(Z_full.vectors)
    q_rows = np.array([src_index[w] for w in queries])
    result = csls_retrieve(mapped_all[q_rows], targets, k=k, topk=5, source_pool=mapped_all, block=block)

    hit1 = sum(bool(g.intersection(row[:1])) for g, row in zip(gold, result.indices))
    hit5 = sum(bool(g.intersection(row[:5])) for g, row in zip(gold, result.indices))
    m = len(queries)
    return PrecisionReport(
        hit1 / m, hit5 / m, m, skipped, hit1 / total, hit5 / total, k,
        retrieval=result, queries=tuple(queries),
    )


def write_ranked_pairs(path, report, Z_full):
    """Export ``source<TAB>target<TAB>score`` lines for every retrieved candidate."""
    if report.retrieval is None:
        raise ValueError("report carries no retrieval result")
    vocab = Z_full.vocab
    with open(path, "w", encoding="utf-8") as fh:
        for word, idx, sc in zip(report.queries, report.retrieval.indices, report.retrieval.scores):
            for j, s in zip(idx, sc):
                fh.write(f"{word}\t{vocab[j]}\t{s:.6f}\n")


def round_to_permutation(Y, exact=False):
    """Round a (soft) alignment to a permutation ``perm`` (row ``i`` -> column ``perm[i]``).

    The default greedy mode repeatedly takes the largest remaining entry,
    scanning ties in row-major order, and removes its row and column.
    ``exact=True`` solves the linear assignment problem maximizing
    ``sum(Y[i, perm[i]])`` instead.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise DimensionMismatch(f"Y must be square, got {Y.shape}")
    n = Y.shape[0]
    if exact:
        rows, cols = linear_sum_assignment(Y, maximize=True)
        perm = np.empty(n, dtype=np.int64)
        perm[rows] = cols
        return perm
    order = np.argsort(-Y, axis=None, kind="stable")
    perm = np.full(n, -1, dtype=np.int64)
    col_used = np.zeros(n, dtype=bool)
    assigned = 0
    for flat in order:
        i, j = divmod(int(flat), n)
        if perm[i] >= 0 or col_used[j]:
            continue
        perm[i] = j
        col_used[j] = True
        assigned += 1
        if assigned == n:
            break
    return perm
