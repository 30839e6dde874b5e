"""Exact, dilated and annular neighborhoods on points along a ray.

On a ray from the query, a point's index equals its sorted neighbor rank
minus one, so the selected indices read off directly as ranks.
"""
import numpy as np

from rffs.graph import annular_knn, expansion_size, knn_search, ring_knn, sparse_knn

ray = np.column_stack([np.arange(64.0), np.zeros(64), np.zeros(64)])
query = ray[:1]
k, step = 8, 4

print("exact 8-NN ranks:      ", (knn_search(ray, query, k)[0] + 1).tolist())
for r in (1, 2, 4):
    sel = sparse_knn(ray, query, k, step, r).neighbor_indices[0] + 1
    print(f"dilated r={r} ranks:     ", sel.tolist(), f"(reach {expansion_size(k, step, r)})")

# the ring form is defined only when r - 1 is a multiple of k
for r in (1, 9, 17):
    print(f"annular r={r:<2} ranks:    ", (annular_knn(ray, query, k, r).neighbor_indices[0] + 1).tolist())

# the fusion layers use a ring starting at rank r for any rate
print("ring r=4 ranks:        ", (ring_knn(ray, query, k, 4).neighbor_indices[0] + 1).tolist())
