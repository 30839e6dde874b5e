"""Build the four-level sampling hierarchy of a synthetic scene and show how
labels thin out as farthest point sampling moves down the levels."""
import numpy as np

from rffs.data import SceneSpec, normalize_block, synth_scene
from rffs.graph import build_fusion_graphs, build_hierarchy

cloud, classes = synth_scene(SceneSpec(seed=0))
xyz, offset, scale = normalize_block(cloud.xyz)
print(f"scene: {len(cloud)} points, offset {np.round(offset, 2)}, scale {scale:.2f}")

hier = build_hierarchy(xyz, cloud.labels)
for level, (pts, labels) in enumerate(zip(hier.xyz, hier.labels)):
    counts = np.bincount(labels, minlength=classes.count)
    mix = "  ".join(f"{n}={c}" for n, c in zip(classes.names, counts))
    print(f"level {level}: {len(pts):5d} points  {mix}")

graphs = build_fusion_graphs(hier.xyz[-1])
for r, (dilated, ring) in graphs.items():
    d = np.linalg.norm(hier.xyz[-1][dilated.neighbor_indices] - hier.xyz[-1][:, None], axis=-1)
    print(f"rate {r}: mean neighbor distance {d.mean():.3f} (normalized units)")
