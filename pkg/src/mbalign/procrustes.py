"""Orthogonal Procrustes map extraction and matrix file I/O."""
import warnings

import numpy as np

from .errors import DataError, DimensionMismatch, MalformedHeader, RankDeficiencyWarning

__all__ = [
    "procrustes_solve",
    "is_orthogonal",
    "save_matrix",
    "load_matrix",
    "MATRIX_FORMAT_VERSION",
]

MATRIX_FORMAT_VERSION = "mbalign-matrix-v1"


def _vectors(E):
    return np.asarray(getattr(E, "vectors", E), dtype=np.float64)


def procrustes_solve(X, Y, Z, hard=False):
    """Orthogonal ``W`` minimizing ``||X W - Y Z||_F``.

    Parameters
    ----------
    X, Z : array of shape (n, d) or EmbeddingMatrix
        Source and target embeddings.
    Y : array, shape (n, n)
        Alignment between source rows and target rows. Soft (doubly
        stochastic) alignments are used as is.
    hard : bool
        Round ``Y`` to a permutation first (ablation switch).

    Returns
    -------
    W : array, shape (d, d)
        ``U V^T`` from the SVD ``X^T Y Z = U S V^T``.

    Warns
    -----
    RankDeficiencyWarning
        If the smallest singular value is below ``1e-10`` times the largest;
        ``W`` is then not unique.
    """
    X = _vectors(X)
    Z = _vectors(Z)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Z.shape:
        raise DimensionMismatch(f"X is {X.shape} but Z is {Z.shape}")
    n = X.shape[0]
    if Y.shape != (n, n):
        raise DimensionMismatch(f"Y must be {n}x{n}, got {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise DataError("alignment contains NaN or Inf")
    if hard:
        from .inference import round_to_permutation

        perm = round_to_permutation(Y)
        M = X.T @ Z[perm]
    else:
        M = X.T @ (Y @ Z)
    U, s, Vt = np.linalg.svd(M)
    if s[0] == 0 or s[-1] < 1e-10 * s[0]:
        warnings.warn(
            f"Procrustes cross-covariance is rank deficient (singular values {s[-1]:.3e} / {s[0]:.3e})",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return U @ Vt


def is_orthogonal(W, tol=1e-8):
    W = np.asarray(W)
    return W.ndim == 2 and W.shape[0] == W.shape[1] and np.abs(W.T @ W - np.eye(W.shape[0])).max() <= tol


# Both formats start with two text lines: the dimension d and a format tag
# naming the version and body encoding. Text bodies hold d rows of d floats;
# binary bodies hold d*d little-endian float64 values in row-major order.
_BODY_TAGS = {True: "f8le", False: "text"}


def save_matrix(path, W, binary=True):
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {W.shape}")
    d = W.shape[0]
    header = f"{d}\n{MATRIX_FORMAT_VERSION} {_BODY_TAGS[binary]}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(W.astype("<f8").tobytes(order="C"))
        else:
            for row in W:
                fh.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))


def load_matrix(path):
    """Read a matrix written by :func:`save_matrix` (either body format)."""
    with open(path, "rb") as fh:
        first = fh.readline()
        second = fh.readline()
        body = fh.read()
    try:
        d = int(first.strip())
    except ValueError:
        raise MalformedHeader(f"{path}: first line must be the dimension, got {first[:40]!r}") from None
    if d < 1:
        raise MalformedHeader(f"{path}: dimension must be positive")
    tag = second.decode("ascii", "replace").split()
    if len(tag) != 2 or tag[0] != MATRIX_FORMAT_VERSION or tag[1] not in _BODY_TAGS.values():
        raise MalformedHeader(f"{path}: unknown format tag {second.strip()[:40]!r}")
    if tag[1] == "f8le":
        if len(body) != 8 * d * d:
            raise DataError(f"{path}: expected {8 * d * d} bytes of data, got {len(body)}")
        return np.frombuffer(body, dtype="<f8").reshape(d, d).astype(np.float64)
    try:
        rows = [[float(x) for x in line.split()] for line in body.decode("ascii").splitlines() if line.strip()]
        W = np.array(rows, dtype=np.float64)
    except (ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot parse matrix body: {exc}") from exc
    if W.shape != (d, d):
        raise DataError(f"{path}: expected {d}x{d} values, got shape {W.shape}")
    return W
