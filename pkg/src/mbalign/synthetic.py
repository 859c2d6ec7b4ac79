"""Planted-permutation fixtures for desk-scale verification.

Target embeddings are a permuted, rotated (and optionally noisy) copy of the
source embeddings, so the true alignment is known exactly.
"""
import zlib

import numpy as np

__all__ = ["substream", "random_orthogonal", "planted_permutation", "gen_synthetic"]


def substream(seed, name):
    """Independent generator for the named randomness substream of ``seed``.

    Names such as ``"init"`` or ``"synthetic"`` map to fixed spawn keys, so
    adding a new consumer never shifts the numbers another one sees.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))


def random_orthogonal(d, rng):
    """Haar-distributed orthogonal matrix via QR with sign correction."""
    A = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diag(R))


def planted_permutation(n, rng, window=None):
    """Random permutation ``perm`` with source ``i`` -> target ``perm[i]``.

    With ``window`` set, word ``i`` moves to the rank of ``i + U(0, window)``,
    which keeps frequency ranks roughly consistent between the languages
    (displacements stay below ``window``). ``None`` gives a uniform
    permutation.
    """
    if window is None:
        return rng.permutation(n)
    keys = np.arange(n) + window * rng.random(n)
    return np.argsort(np.argsort(keys, kind="stable"), kind="stable")


def _unit_rows(A):
    return A / np.linalg.norm(A, axis=1, keepdims=True)


def gen_synthetic(n, d, noise_sigma=0.0, seed=0, window=None):
    """Draw ``(X, Z, perm)`` with ``Z[perm[i]] ~ X[i] @ Q`` for a random orthogonal ``Q``.

    ``X`` has i.i.d. Gaussian rows normalized to unit length. At zero noise
    ``Cz = P Cx P^T``, so ``Y[i, perm[i]] = 1`` is a zero of the
    bi-directional covariance objective.
    """
    if n < 4:
        raise ValueError("n must be >= 4")
    if d < 2:
        raise ValueError("d must be >= 2")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = substream(seed, "synthetic")
    X = _unit_rows(rng.standard_normal((n, d)))
    perm = planted_permutation(n, rng, window)
    Q = random_orthogonal(d, rng)
    Z = np.empty_like(X)
    Z[perm] = X @ Q
    if noise_sigma > 0:
        Z = _unit_rows(Z + noise_sigma * rng.standard_normal(Z.shape))
    return X, Z, perm
