"""Euclidean nearest-neighbour lookup for matching synthetic versions.

Exact brute force for small reference sets; random-projection buckets above
``BRUTE_FORCE_LIMIT`` rows.  Ties go to the smallest reference index.
"""

from __future__ import annotations

import numpy as np

BRUTE_FORCE_LIMIT = 50_000
_CHUNK_CELLS = 4_000_000


def brute_force_nn(queries: np.ndarray, reference: np.ndarray) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    out = np.empty(len(queries), dtype=np.int64)
    step = max(1, _CHUNK_CELLS // max(1, len(reference) * max(1, reference.shape[1])))
    for start in range(0, len(queries), step):
        q = queries[start: start + step]
        diff = q[:, None, :] - reference[None, :, :]
        out[start: start + step] = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
    return out


def projection_nn(queries: np.ndarray, reference: np.ndarray, seed: int = 0,
                  n_bits: int = 12, n_tables: int = 4) -> np.ndarray:
    """Approximate NN: candidates share a sign-of-random-projection bucket in
    at least one of ``n_tables`` hash tables; queries with no candidates fall
    back to brute force."""
    rng = np.random.default_rng(seed)
    queries = np.asarray(queries, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    centre = reference.mean(axis=0)
    weights = 1 << np.arange(n_bits, dtype=np.int64)
    tables = []
    for _ in range(n_tables):
        planes = rng.standard_normal((reference.shape[1], n_bits))
        keys = (((reference - centre) @ planes) > 0).astype(np.int64) @ weights
        order = np.argsort(keys, kind="stable")
        tables.append((planes, keys[order], order))
    out = np.empty(len(queries), dtype=np.int64)
    for i, q in enumerate(queries):
        cands = []
        for planes, sorted_keys, order in tables:
            key = int((((q - centre) @ planes) > 0).astype(np.int64) @ weights)
            lo, hi = np.searchsorted(sorted_keys, [key, key + 1])
            cands.append(order[lo:hi])
        cand = np.unique(np.concatenate(cands))
        if len(cand) == 0:
            out[i] = brute_force_nn(q[None], reference)[0]
            continue
        d = np.sum((reference[cand] - q) ** 2, axis=1)
        out[i] = cand[np.argmin(d)]
    return out


def nearest_neighbors(queries: np.ndarray, reference: np.ndarray, seed: int = 0) -> np.ndarray:
    """Index into ``reference`` of each query's nearest row."""
    if len(reference) == 0:
        raise ValueError("reference set is empty")
    if len(reference) < BRUTE_FORCE_LIMIT:
        return brute_force_nn(queries, reference)
    return projection_nn(queries, reference, seed)
