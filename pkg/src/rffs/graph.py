"""Neighbor search, dilated and annular neighbor selection, FPS, and the level hierarchy.

All searches rank neighbors by squared Euclidean distance in float64 and
break exact ties by the smaller point index, so the brute-force and kd-tree
paths return identical results.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_K = 32
DEFAULT_STEP = 4
DEFAULT_RATIOS = (4, 4, 2)
DEFAULT_DILATIONS = (1, 2, 4, 8)

_BRUTE_CHUNK = 1 << 22  # max query*point pairs per distance block


class GraphError(ValueError):
    pass


@dataclass
class SparseNeighborhood:
    neighbor_indices: np.ndarray  # [N, k]
    k: int
    dilation: int = 1
    step: int = 1
    mode: str = "dilated"  # or "annular"

    @property
    def center_count(self) -> int:
        return self.neighbor_indices.shape[0]


# -- exact KNN ---------------------------------------------------------------

def _sq_dist(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    return ((queries[:, None, :] - points) ** 2).sum(axis=-1)


def _knn_brute(points, queries, k):
    out = np.empty((len(queries), k), dtype=np.int64)
    step = max(1, _BRUTE_CHUNK // max(1, len(points)))
    for s in range(0, len(queries), step):
        d = _sq_dist(queries[s:s + step], points[None, :, :])
        out[s:s + step] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def _knn_kdtree(points, queries, k, tree=None):
    n = len(points)
    tree = tree if tree is not None else cKDTree(points)
    kk = min(n, k + max(8, k // 4))
    _, cand = tree.query(queries, k=kk)
    cand = np.asarray(cand).reshape(len(queries), kk)
    d = _sq_dist(queries, points[cand])
    order = _row_lexsort(d, cand)
    cand = np.take_along_axis(cand, order, axis=1)
    d = np.take_along_axis(d, order, axis=1)
    out = cand[:, :k].copy()
    if kk < n:
        # a point outside the candidate set could tie or undercut the k-th
        unsafe = ~(d[:, k - 1] < d[:, -1] * (1.0 - 1e-9))
        if np.any(unsafe):
            out[unsafe] = _knn_brute(points, queries[unsafe], k)
    return out


def _row_lexsort(d, idx):
    # primary key distance, secondary key index, per row
    order = np.argsort(idx, axis=1, kind="stable")
    d2 = np.take_along_axis(d, order, axis=1)
    order2 = np.argsort(d2, axis=1, kind="stable")
    return np.take_along_axis(order, order2, axis=1)


def knn_search(points, queries, k: int, method: str = "auto") -> np.ndarray:
    """Indices of the ``k`` nearest ``points`` for each query, nearest first.

    ``method`` is ``"brute"``, ``"kdtree"`` or ``"auto"``.
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if k < 1:
        raise GraphError("k must be >= 1")
    if k > len(points):
        raise GraphError(f"k={k} exceeds the number of points ({len(points)})")
    if method == "auto":
        method = "brute" if len(points) * len(queries) <= 1 << 16 else "kdtree"
    if method == "brute":
        return _knn_brute(points, queries, k)
    if method == "kdtree":
        return _knn_kdtree(points, queries, k)
    raise ValueError(f"unknown method {method!r}")


# -- dilated / annular selection ---------------------------------------------

def expansion_size(k: int, step: int, dilation: int) -> int:
    """Size of the sorted-neighbor prefix a dilated selection draws from.

    ``floor(k/step) * (dilation-1+step) + ceil(frac(k/step) * (dilation-1+step))``,
    evaluated in exact integer arithmetic.
    """
    if k < 1 or step < 1 or dilation < 1:
        raise GraphError("k, step and dilation must all be >= 1")
    group = dilation - 1 + step
    q, s = divmod(k, step)
    return q * group + (s * group + step - 1) // step


def sparse_ranks(k: int, step: int, dilation: int) -> np.ndarray:
    """1-based sorted-neighbor ranks kept by the dilated selection.

    The first ``expansion_size`` ranks are cut into consecutive groups of
    ``dilation-1+step``; every complete group skips its first ``dilation-1``
    ranks and keeps the next ``step``.  A trailing partial group keeps its
    last ``k mod step`` ranks, ending at ``expansion_size``.
    """
    ks = expansion_size(k, step, dilation)
    group = dilation - 1 + step
    q, s = divmod(k, step)
    ranks = [r for i in range(q) for r in range(i * group + dilation, (i + 1) * group + 1)]
    ranks.extend(range(ks - s + 1, ks + 1))
    return np.array(ranks, dtype=np.int64)


def sparse_knn(points, queries, k: int, step: int = DEFAULT_STEP, dilation: int = 1,
               method: str = "auto") -> SparseNeighborhood:
    ks = expansion_size(k, step, dilation)
    if ks > len(points):
        raise GraphError(f"dilated selection (k={k}, step={step}, r={dilation}) needs {ks} "
                         f"neighbors but only {len(points)} points exist")
    nn = knn_search(points, queries, ks, method)
    return SparseNeighborhood(nn[:, sparse_ranks(k, step, dilation) - 1], k, dilation, step, "dilated")


def annular_knn(points, queries, k: int, dilation: int, method: str = "auto") -> SparseNeighborhood:
    """The ``k`` neighbors forming the outer ring of a ``k * n`` neighborhood,
    with ``n = (dilation - 1) / k + 1``; ``dilation - 1`` must be a multiple of ``k``."""
    if k < 1 or dilation < 1:
        raise GraphError("k and dilation must be >= 1")
    if (dilation - 1) % k:
        raise GraphError(f"annular dilation {dilation} requires (r-1) divisible by k={k}")
    n = (dilation - 1) // k + 1
    ka = n * k
    if ka > len(points):
        raise GraphError(f"annular selection needs {ka} neighbors but only {len(points)} points exist")
    nn = knn_search(points, queries, ka, method)
    return SparseNeighborhood(nn[:, (n - 1) * k:], k, dilation, k, "annular")


def ring_knn(points, queries, k: int, dilation: int, method: str = "auto") -> SparseNeighborhood:
    """Annular ring for any dilation: sorted ranks ``dilation .. dilation+k-1``.

    This is the dilated selection with ``step == k``; it agrees with
    :func:`annular_knn` whenever that one is defined.
    """
    g = sparse_knn(points, queries, k, step=k, dilation=dilation, method=method)
    g.mode = "annular"
    return g


# -- farthest point sampling -------------------------------------------------

def farthest_point_sampling(points, m: int, seed: int = 0) -> np.ndarray:
    """Greedy max-min subset of ``m`` indices.

    Seed 0 starts at index 0; other seeds start at a uniformly drawn index.
    Ties in the max-min distance go to the smaller index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if m > n:
        raise GraphError(f"cannot sample {m} of {n} points")
    if m <= 0:
        return np.empty(0, dtype=np.int64)
    start = 0 if seed == 0 else int(np.random.default_rng(seed).integers(n))
    out = np.empty(m, dtype=np.int64)
    out[0] = start
    mind = ((points - points[start]) ** 2).sum(axis=1)
    for i in range(1, m):
        j = int(np.argmax(mind))
        out[i] = j
        np.minimum(mind, ((points - points[j]) ** 2).sum(axis=1), out=mind)
    return out


# -- hierarchy ---------------------------------------------------------------

@dataclass
class HierarchyLevels:
    xyz: list[np.ndarray]  # level 0..L
    fps_indices: list[np.ndarray]  # level 1..L, into the previous level
    point_graphs: list[np.ndarray]  # level 1..L, [N_l, K] within level l
    mapping_graphs: list[np.ndarray]  # level 1..L, [N_l, K] into level l-1
    labels: list[np.ndarray] | None = None  # level 0..L
    k: int = DEFAULT_K
    upsample: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)  # level 1..L -> l-1

    @property
    def sizes(self) -> list[int]:
        return [len(x) for x in self.xyz]

    @property
    def depth(self) -> int:
        return len(self.xyz) - 1


def level_sizes(n: int, ratios: Sequence[int] = DEFAULT_RATIOS) -> list[int]:
    sizes = [n]
    for r in ratios:
        sizes.append(sizes[-1] // r)
    return sizes


def downsample_labels(labels, fps_chain: Sequence[np.ndarray]) -> list[np.ndarray]:
    out = [np.asarray(labels)]
    for idx in fps_chain:
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= len(out[-1])):
            raise IndexError("FPS index out of range for the previous level")
        out.append(out[-1][idx])
    return out


def interpolation_weights(coarse_xyz, fine_xyz, k: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-distance weights of the ``k`` nearest coarse points per fine point.

    Weights are ``1 / (d + 1e-8)`` normalized to sum to 1; a fine point that
    coincides with a coarse point copies it exactly.
    """
    coarse_xyz = np.asarray(coarse_xyz, dtype=np.float64)
    fine_xyz = np.asarray(fine_xyz, dtype=np.float64)
    if len(coarse_xyz) == 0:
        raise GraphError("empty coarse set")
    k = min(k, len(coarse_xyz))
    idx = knn_search(coarse_xyz, fine_xyz, k)
    d = np.sqrt(((fine_xyz[:, None, :] - coarse_xyz[idx]) ** 2).sum(axis=-1))
    w = 1.0 / (d + 1e-8)
    w /= w.sum(axis=1, keepdims=True)
    exact = d[:, 0] == 0.0
    w[exact] = 0.0
    w[exact, 0] = 1.0
    return idx, w


def build_hierarchy(xyz, labels=None, k: int = DEFAULT_K, ratios: Sequence[int] = DEFAULT_RATIOS,
                    seed: int = 0) -> HierarchyLevels:
    """FPS levels with point graphs, mapping graphs, labels and upsampling weights."""
    xyz = np.asarray(xyz, dtype=np.float64)
    sizes = level_sizes(len(xyz), ratios)
    if min(sizes) < k:
        raise GraphError(f"level sizes {sizes} fall below K={k}; need at least "
                         f"{k * int(np.prod(ratios))} points")
    levels = [xyz]
    fps, pgraphs, mgraphs, ups = [], [], [], []
    for m in sizes[1:]:
        prev = levels[-1]
        idx = farthest_point_sampling(prev, m, seed)
        cur = prev[idx]
        fps.append(idx)
        levels.append(cur)
        pgraphs.append(knn_search(cur, cur, k))
        mgraphs.append(knn_search(prev, cur, k))
        ups.append(interpolation_weights(cur, prev))
    lab = downsample_labels(labels, fps) if labels is not None else None
    return HierarchyLevels(levels, fps, pgraphs, mgraphs, lab, k, ups)


def build_fusion_graphs(xyz, k: int = DEFAULT_K, step: int = DEFAULT_STEP,
                        dilations: Sequence[int] = DEFAULT_DILATIONS
                        ) -> dict[int, tuple[SparseNeighborhood, SparseNeighborhood]]:
    """One dilated and one annular graph per dilation rate on a single point set."""
    xyz = np.asarray(xyz, dtype=np.float64)
    return {int(r): (sparse_knn(xyz, xyz, k, step, r), ring_knn(xyz, xyz, k, r)) for r in dilations}


def dump_graphs(hier: HierarchyLevels, fusion: dict | None, path) -> None:
    doc = {
        "k": hier.k,
        "levels": [
            {"level": 0, "size": hier.sizes[0]},
            *[{"level": i + 1, "size": hier.sizes[i + 1],
               "fps_indices": hier.fps_indices[i].tolist(),
               "point_graph": hier.point_graphs[i].tolist(),
               "mapping_graph": hier.mapping_graphs[i].tolist()} for i in range(hier.depth)],
        ],
    }
    if fusion:
        any_g = next(iter(fusion.values()))[0]
        doc["fusion"] = {
            "level": hier.depth,
            "k": any_g.k,
            "step": any_g.step,
            "dilations": sorted(fusion),
            "dilated": {str(r): g[0].neighbor_indices.tolist() for r, g in sorted(fusion.items())},
            "annular": {str(r): g[1].neighbor_indices.tolist() for r, g in sorted(fusion.items())},
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
