"""Word embedding and bilingual dictionary files.

Embedding files use the common text vector format: a ``"<count> <dim>"``
header followed by one ``token v1 ... vdim`` line per word, most frequent
word first.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyDictionary,
    EmptyFile,
    MalformedHeader,
    MalformedLine,
    MalformedRow,
)

__all__ = [
    "EmbeddingMatrix",
    "BilingualDictionary",
    "load_embeddings",
    "save_embeddings",
    "normalize_embeddings",
    "load_dictionary",
    "save_dictionary",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Frequency-ordered vocabulary with one row vector per word.

    ``norm_state`` is ``"raw"`` as loaded and ``"unit"`` after
    :func:`normalize_embeddings`.
    """

    vocab: tuple
    vectors: np.ndarray
    norm_state: str = "raw"
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vocab = tuple(self.vocab)
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(vocab):
            raise ValueError(f"{len(vocab)} words but vectors have shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors must be finite")
        index = {w: i for i, w in enumerate(vocab)}
        if len(index) != len(vocab):
            raise ValueError("vocabulary contains duplicate words")
        if self.norm_state not in ("raw", "unit"):
            raise ValueError(f"unknown norm_state {self.norm_state!r}")
        vectors.setflags(write=False)
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "index", index)

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def d(self):
        return self.vectors.shape[1]

    def head(self, n):
        """The ``n`` most frequent words."""
        return EmbeddingMatrix(self.vocab[:n], self.vectors[:n], self.norm_state)


class BilingualDictionary:
    """Multimap from source word to its accepted target translations.

    Insertion order of source words and of each word's targets is kept.
    When built with vocabularies, :meth:`is_oov` reports pairs that cannot
    be evaluated.
    """

    def __init__(self, pairs=(), src_vocab=None, tgt_vocab=None):
        self._map = {}
        for src, tgt in pairs:
            self.add(src, tgt)
        self._src = None if src_vocab is None else set(src_vocab)
        self._tgt = None if tgt_vocab is None else set(tgt_vocab)

    def add(self, src, tgt):
        if not src or not tgt:
            raise ValueError("dictionary words must be non-empty")
        targets = self._map.setdefault(src, {})
        targets[tgt] = None

    def __len__(self):
        return len(self._map)

    def __contains__(self, src):
        return src in self._map

    def __getitem__(self, src):
        return tuple(self._map[src])

    def items(self):
        for src, targets in self._map.items():
            yield src, tuple(targets)

    def pairs(self):
        for src, targets in self._map.items():
            for tgt in targets:
                yield src, tgt

    @property
    def n_pairs(self):
        return sum(len(t) for t in self._map.values())

    def is_oov(self, src, tgt):
        """True if either word is missing from the vocabularies given at load time."""
        return (self._src is not None and src not in self._src) or (
            self._tgt is not None and tgt not in self._tgt
        )

    def oov_pairs(self):
        return [(s, t) for s, t in self.pairs() if self.is_oov(s, t)]

    def __repr__(self):
        return f"BilingualDictionary({len(self)} sources, {self.n_pairs} pairs)"


def _decode(raw, line_no, path):
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedRow(line_no, f"invalid UTF-8 ({exc.reason})", path) from None


def load_embeddings(path, max_vocab=None):
    """Read at most ``max_vocab`` words from a text vector file.

    Duplicate tokens after the first occurrence are skipped (and counted in
    the log). Rows with the wrong number of values, non-numeric values or
    invalid UTF-8 raise :class:`MalformedRow`.

    Returns
    -------
    EmbeddingMatrix
        With ``norm_state="raw"``.
    """
    if max_vocab is not None and max_vocab < 1:
        raise ValueError("max_vocab must be >= 1")
    words = []
    rows = []
    seen = set()
    duplicates = 0
    with open(path, "rb") as fh:
        header = fh.readline()
        if not header.strip():
            raise EmptyFile(f"{path}: empty file")
        parts = _decode(header, 1, path).split()
        try:
            count, dim = (int(p) for p in parts)
        except ValueError:
            raise MalformedHeader(f"{path}: expected '<count> <dim>', got {header[:60]!r}") from None
        if count < 0 or dim < 1:
            raise MalformedHeader(f"{path}: invalid header values {count} {dim}")
        for line_no, raw in enumerate(fh, start=2):
            if max_vocab is not None and len(words) >= max_vocab:
                break
            text = _decode(raw, line_no, path).rstrip("\r\n")
            if not text.strip():
                continue
            token, _, rest = text.lstrip(" ").partition(" ")
            values = rest.split()
            if len(values) != dim:
                raise MalformedRow(line_no, f"expected {dim} values, found {len(values)}", path)
            if token in seen:
                duplicates += 1
                continue
            try:
                vec = np.array(values, dtype=np.float64)
            except ValueError:
                raise MalformedRow(line_no, "non-numeric value", path) from None
            if not np.all(np.isfinite(vec)):
                raise MalformedRow(line_no, "non-finite value", path)
            seen.add(token)
            words.append(token)
            rows.append(vec)
    if not words:
        raise EmptyFile(f"{path}: no embedding rows")
    if duplicates:
        log.info("%s: skipped %d duplicate tokens", path, duplicates)
    return EmbeddingMatrix(tuple(words), np.vstack(rows), "raw")


def save_embeddings(path, E):
    """Write ``E`` in the text vector format (``repr`` precision, round-trips exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{E.n} {E.d}\n")
        for word, vec in zip(E.vocab, E.vectors):
            fh.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def normalize_embeddings(E, center=False):
    """Scale every row to unit Euclidean length.

    With ``center=True`` the mean vector is subtracted first and rows are
    renormalized afterwards. Zero rows become the standard basis vector
    ``e_{i mod d}`` (logged as a warning).
    """
    if E.norm_state != "raw":
        raise ValueError("embeddings are already normalized")
    V = np.array(E.vectors, dtype=np.float64)
    if center:
        V = _unit_rows(V, E.vocab)
        V -= V.mean(axis=0)
    V = _unit_rows(V, E.vocab)
    return EmbeddingMatrix(E.vocab, V, "unit")


def _unit_rows(V, vocab):
    # dividing by the largest entry first keeps tiny (subnormal) rows exact
    peak = np.abs(V).max(axis=1, keepdims=True)
    V = np.divide(V, peak, out=np.zeros_like(V), where=peak > 0)
    norms = np.linalg.norm(V, axis=1)
    zero = norms == 0
    if zero.any():
        log.warning("%d zero embedding rows replaced by basis vectors (first: %r)",
                    int(zero.sum()), vocab[int(np.flatnonzero(zero)[0])])
        rows = np.flatnonzero(zero)
        V[rows] = 0.0
        V[rows, rows % V.shape[1]] = 1.0
        norms[rows] = 1.0
    return V / norms[:, None]


def load_dictionary(path, src_vocab=None, tgt_vocab=None):
    """Parse a two-column ``source target`` dictionary file.

    Pairs whose words are missing from the given vocabularies are kept and
    flagged (see :meth:`BilingualDictionary.is_oov`); duplicates collapse.

    Raises
    ------
    MalformedLine
        A non-blank line without exactly two tokens.
    EmptyDictionary
        Missing file or no pairs.
    """
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise EmptyDictionary(f"{path}: dictionary file not found") from None
    pairs = []
    with fh:
        for line_no, raw in enumerate(fh, start=1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise MalformedLine(line_no, "invalid UTF-8", path) from None
            tokens = text.split()
            if not tokens:
                continue
            if len(tokens) != 2:
                raise MalformedLine(line_no, f"expected 2 tokens, found {len(tokens)}", path)
            pairs.append((tokens[0], tokens[1]))
    if not pairs:
        raise EmptyDictionary(f"{path}: no dictionary pairs")
    return BilingualDictionary(pairs, src_vocab, tgt_vocab)


def save_dictionary(path, dictionary):
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt in dictionary.pairs():
            fh.write(f"{src} {tgt}\n")
