"""Point-cloud I/O, block partitioning, sampling, normalization and synthetic scenes."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

COORD_COLUMNS = ("x", "y", "z")
LABEL_COLUMN = "label"
DEFAULT_BLOCK_SIZE = 30.0
BLOCK_SIZES = (30.0, 50.0, 75.0)
DEFAULT_MIN_COUNT = 64
DEFAULT_N_TARGET = 4096


class PointFileError(ValueError):
    pass


@dataclass
class PointCloud:
    xyz: np.ndarray
    attrs: np.ndarray | None = None
    attr_names: tuple[str, ...] = ()
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64)
        if self.xyz.ndim != 2 or self.xyz.shape[1] != 3 or len(self.xyz) < 1:
            raise ValueError(f"xyz must be [N, 3] with N >= 1, got {self.xyz.shape}")
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("non-finite coordinates")
        if self.attrs is not None:
            self.attrs = np.asarray(self.attrs, dtype=np.float64)
            if self.attrs.ndim == 1:
                self.attrs = self.attrs[:, None]
            if len(self.attrs) != len(self.xyz):
                raise ValueError("attrs row count differs from xyz")
            if not self.attr_names:
                self.attr_names = tuple(f"attr{i}" for i in range(self.attrs.shape[1]))
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.xyz),):
                raise ValueError("labels length differs from xyz")
            if len(self.labels) and self.labels.min() < 0:
                raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.xyz)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        return PointCloud(self.xyz[idx],
                          None if self.attrs is None else self.attrs[idx],
                          self.attr_names,
                          None if self.labels is None else self.labels[idx])


@dataclass(frozen=True)
class ClassMap:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise ValueError("a class map needs at least 2 classes")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate class names: {self.names}")

    @property
    def count(self) -> int:
        return len(self.names)


@dataclass
class Block:
    origin: np.ndarray
    extent: np.ndarray
    point_indices: np.ndarray
    cells: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.point_indices)


# -- I/O ---------------------------------------------------------------------

def _read_header(path) -> list[str] | None:
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#cols:"):
                return s[len("#cols:"):].split()
            return None
    return None


def parse_points(path, schema: Sequence[str] | None = None, num_classes: int | None = None) -> PointCloud:
    """Read a whitespace-separated ASCII point file.

    ``schema`` names the columns, e.g. ``["x", "y", "z", "intensity", "label"]``;
    when omitted it is taken from a ``#cols:`` header line, falling back to
    ``x y z``.  Columns other than the coordinates and ``label`` become
    attributes.  A label column holding only ``-1`` means "unlabeled".
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    cols = list(schema) if schema is not None else (_read_header(path) or list(COORD_COLUMNS))
    for c in COORD_COLUMNS:
        if c not in cols:
            raise PointFileError(f"schema {cols} lacks column {c!r}")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != len(cols):
                raise PointFileError(f"{path}:{lineno}: expected {len(cols)} columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise PointFileError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise PointFileError(f"{path}: no points")
    table = np.array(rows, dtype=np.float64)
    xyz = table[:, [cols.index(c) for c in COORD_COLUMNS]]
    labels = None
    if LABEL_COLUMN in cols:
        raw = table[:, cols.index(LABEL_COLUMN)]
        if np.any(raw != np.round(raw)):
            raise PointFileError(f"{path}: non-integer label")
        raw = raw.astype(np.int64)
        if np.all(raw == -1):
            labels = None
        else:
            bad = np.flatnonzero((raw < 0) | ((raw >= num_classes) if num_classes else False))
            if bad.size:
                raise PointFileError(f"{path}: unknown label id {raw[bad[0]]} at point {bad[0]}")
            labels = raw
    extra = [c for c in cols if c not in COORD_COLUMNS and c != LABEL_COLUMN]
    attrs = table[:, [cols.index(c) for c in extra]] if extra else None
    return PointCloud(xyz, attrs, tuple(extra), labels)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_points(cloud: PointCloud, path) -> None:
    cols = list(COORD_COLUMNS) + list(cloud.attr_names if cloud.attrs is not None else ())
    if cloud.labels is not None:
        cols.append(LABEL_COLUMN)
    with open(path, "w") as fh:
        fh.write("#cols: " + " ".join(cols) + "\n")
        for i in range(len(cloud)):
            vals = [_fmt(v) for v in cloud.xyz[i]]
            if cloud.attrs is not None:
                vals += [_fmt(v) for v in cloud.attrs[i]]
            if cloud.labels is not None:
                vals.append(str(int(cloud.labels[i])))
            fh.write(" ".join(vals) + "\n")


def write_predictions(cloud: PointCloud, predicted, path) -> None:
    """Write ``x y z true_label pred_label`` lines (``-1`` when unlabeled)."""
    predicted = np.asarray(predicted)
    if predicted.shape != (len(cloud),):
        raise ValueError(f"{len(predicted)} predictions for {len(cloud)} points")
    truth = cloud.labels if cloud.labels is not None else np.full(len(cloud), -1)
    with open(path, "w") as fh:
        fh.write("#cols: x y z label pred\n")
        for p, t, q in zip(cloud.xyz, truth, predicted):
            fh.write(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])} {int(t)} {int(q)}\n")


def read_predictions(path) -> tuple[PointCloud, np.ndarray]:
    cloud = parse_points(path, ["x", "y", "z", "label", "pred"])
    pred = cloud.attrs[:, 0].astype(np.int64)
    return PointCloud(cloud.xyz, labels=cloud.labels), pred


# -- blocks ------------------------------------------------------------------

def partition_blocks(cloud: PointCloud, block_size: float = DEFAULT_BLOCK_SIZE,
                     min_count: int = DEFAULT_MIN_COUNT) -> list[Block]:
    """Split a cloud into a horizontal grid of ``block_size`` squares.

    The grid is anchored at the minimum x/y.  Cells holding fewer than
    ``min_count`` points are folded into the nearest cell (by cell-center
    distance) that holds at least ``min_count``; if no cell qualifies, the
    most populous cell absorbs the rest.  Blocks are returned sorted by
    their first grid cell (row-major in y, then x).
    """
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    xy = cloud.xyz[:, :2]
    lo = xy.min(axis=0)
    cell = np.floor((xy - lo) / block_size).astype(np.int64)
    keys, inverse, counts = np.unique(cell[:, ::-1], axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    keys = keys[:, ::-1]  # back to (ix, iy)
    members = {i: [tuple(keys[i])] for i in range(len(keys))}
    large = np.flatnonzero(counts >= min_count)
    if large.size == 0:
        large = np.array([int(np.argmax(counts))])
    target = np.arange(len(keys))
    centers = keys.astype(np.float64)
    for i in range(len(keys)):
        if i in large:
            continue
        d = ((centers[large] - centers[i]) ** 2).sum(axis=1)
        target[i] = large[int(np.argmin(d))]  # ties -> first in grid order
        members[target[i]].append(tuple(keys[i]))
    blocks = []
    for b in sorted(set(target.tolist())):
        cells = np.array(members[b])
        idx = np.flatnonzero(np.isin(inverse, np.flatnonzero(target == b)))
        cmin = cells.min(axis=0)
        cmax = cells.max(axis=0)
        blocks.append(Block(origin=lo + cmin * block_size,
                            extent=(cmax - cmin + 1).astype(np.float64) * block_size,
                            point_indices=idx,
                            cells=[tuple(map(int, c)) for c in cells]))
    return blocks


def sample_block(n_points: int, n_target: int = DEFAULT_N_TARGET, seed: int = 0) -> np.ndarray:
    """Indices of a fixed-size sample of a block with ``n_points`` points.

    Without replacement when the block is large enough; otherwise every
    point once plus uniform draws with replacement, shuffled.
    """
    if n_target <= 0:
        raise ValueError("n_target must be positive")
    if n_points <= 0:
        raise ValueError("cannot sample an empty block")
    rng = np.random.default_rng(seed)
    if n_points >= n_target:
        return rng.choice(n_points, size=n_target, replace=False)
    extra = rng.choice(n_points, size=n_target - n_points, replace=True)
    return rng.permutation(np.concatenate([np.arange(n_points), extra]))


def normalize_block(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Center on the horizontal centroid and minimum height, then scale.

    Returns ``(normalized, offset, scale)``; ``xyz == normalized * scale + offset``.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    if xyz.ndim != 2 or len(xyz) < 1:
        raise ValueError("need at least one point")
    offset = np.array([xyz[:, 0].mean(), xyz[:, 1].mean(), xyz[:, 2].min()])
    centered = xyz - offset
    scale = float(np.abs(centered).max())
    if scale == 0.0:
        scale = 1.0
    return centered / scale, offset, scale


def denormalize_block(xyz: np.ndarray, offset: np.ndarray, scale: float) -> np.ndarray:
    return np.asarray(xyz) * scale + offset


# -- synthetic scenes --------------------------------------------------------

SCENE_CLASSES = ("ground", "building", "pole", "line", "vegetation")
_CLASS_SHARE = {"ground": 0.40, "building": 0.25, "vegetation": 0.20, "pole": 0.07, "line": 0.08}


@dataclass
class SceneSpec:
    classes: tuple[str, ...] = SCENE_CLASSES
    extent: float = 30.0
    density: float = 4096 / 900  # points per square meter; 4096 on the default footprint
    seed: int = 0


def synth_scene(spec: SceneSpec) -> tuple[PointCloud, ClassMap]:
    """Generate a labeled toy scene from simple primitives.

    Ground is a gently undulating noisy plane, buildings are boxes sampled
    on roof and walls, poles are vertical segments, lines are sagging wires
    strung between pole tops, and vegetation is a set of ellipsoidal blobs.
    Labels follow the order of ``spec.classes``.  A ground-only spec is the
    one allowed single-class case (its class map gets a placeholder second
    class).
    """
    classes = tuple(spec.classes)
    unknown = set(classes) - set(SCENE_CLASSES)
    if unknown:
        raise ValueError(f"unknown scene classes {sorted(unknown)}")
    if spec.extent <= 0:
        raise ValueError("extent must be positive")
    if len(classes) < 2 and classes != ("ground",):
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(spec.seed)
    E = float(spec.extent)
    total = max(len(classes), int(round(spec.density * E * E)))
    share = np.array([_CLASS_SHARE[c] for c in classes])
    counts = np.floor(share / share.sum() * total).astype(int)
    counts[0] += total - counts.sum()

    poles = []
    if "pole" in classes or "line" in classes:
        n_poles = max(2, int(E // 12))
        # poles along a line across the scene, so wires have somewhere to hang
        ys = rng.uniform(0.15 * E, 0.85 * E)
        xs = np.linspace(0.1 * E, 0.9 * E, n_poles) + rng.normal(0, 0.02 * E, n_poles)
        poles = [(x, ys + rng.normal(0, 0.5), rng.uniform(8.0, 10.0)) for x in xs]

    parts, labels = [], []
    for label, (name, n) in enumerate(zip(classes, counts)):
        if n <= 0:
            continue
        pts = _GENERATORS[name](rng, n, E, poles)
        parts.append(pts)
        labels.append(np.full(len(pts), label, dtype=np.int64))
    xyz = np.concatenate(parts)
    # keep every primitive inside the square footprint
    xyz[:, :2] = np.clip(xyz[:, :2], 0.0, np.nextafter(E, 0.0))
    lab = np.concatenate(labels)
    names = classes if len(classes) >= 2 else classes + ("unused",)
    return PointCloud(xyz, labels=lab), ClassMap(names)


def _ground(rng, n, E, poles):
    xy = rng.uniform(0, E, size=(n, 2))
    z = 0.3 * np.sin(xy[:, 0] / 7.0) * np.cos(xy[:, 1] / 9.0) + rng.normal(0, 0.05, n)
    return np.column_stack([xy, z])


def _building(rng, n, E, poles):
    n_boxes = max(1, int(E // 15))
    out = []
    per = np.full(n_boxes, n // n_boxes)
    per[: n - per.sum()] += 1
    for k in range(n_boxes):
        w, d = rng.uniform(5.0, 9.0, 2)
        h = rng.uniform(5.0, 9.0)
        cx = (k + 0.5) * E / n_boxes
        cy = rng.uniform(0.2 * E, 0.8 * E) if not poles else (poles[0][1] + (E / 4 if poles[0][1] < E / 2 else -E / 4))
        m = per[k]
        n_roof = int(0.7 * m)
        roof = np.column_stack([rng.uniform(cx - w / 2, cx + w / 2, n_roof),
                                rng.uniform(cy - d / 2, cy + d / 2, n_roof),
                                h + rng.normal(0, 0.03, n_roof)])
        n_wall = m - n_roof
        t = rng.uniform(0, 2 * (w + d), n_wall)
        wx = np.where(t < w, cx - w / 2 + t,
                      np.where(t < w + d, cx + w / 2,
                               np.where(t < 2 * w + d, cx + w / 2 - (t - w - d), cx - w / 2)))
        wy = np.where(t < w, cy - d / 2,
                      np.where(t < w + d, cy - d / 2 + (t - w),
                               np.where(t < 2 * w + d, cy + d / 2, cy + d / 2 - (t - 2 * w - d))))
        wall = np.column_stack([wx, wy, rng.uniform(0.3, h, n_wall)])
        out.append(np.concatenate([roof, wall]))
    return np.concatenate(out)


def _pole(rng, n, E, poles):
    which = rng.integers(len(poles), size=n)
    base = np.array(poles)
    z = rng.uniform(0.0, 1.0, n) * base[which, 2]
    return np.column_stack([base[which, 0] + rng.normal(0, 0.06, n),
                            base[which, 1] + rng.normal(0, 0.06, n), z])


def _line(rng, n, E, poles):
    if len(poles) < 2:
        poles = [(0.1 * E, 0.5 * E, 9.0), (0.9 * E, 0.5 * E, 9.0)]
    spans = len(poles) - 1
    which = rng.integers(spans, size=n)
    t = rng.uniform(0, 1, n)
    a = np.array(poles)[which]
    b = np.array(poles)[which + 1]
    top = np.minimum(a[:, 2], b[:, 2]) - 0.3
    # two parallel wires, sagging mid-span
    side = rng.integers(2, size=n) * 0.8 - 0.4
    x = a[:, 0] + t * (b[:, 0] - a[:, 0])
    y = a[:, 1] + t * (b[:, 1] - a[:, 1]) + side
    z = top - 1.2 * 4 * t * (1 - t) + rng.normal(0, 0.03, n)
    return np.column_stack([x, y, z])


def _vegetation(rng, n, E, poles):
    n_trees = max(2, int(E // 6))
    centers = np.column_stack([rng.uniform(0.05 * E, 0.95 * E, n_trees),
                               rng.uniform(0.05 * E, 0.95 * E, n_trees),
                               rng.uniform(2.5, 5.0, n_trees)])
    radii = rng.uniform(1.2, 2.5, n_trees)
    which = rng.integers(n_trees, size=n)
    offs = rng.normal(0, 1, size=(n, 3)) * (radii[which, None] / 2.0) * np.array([1.0, 1.0, 0.8])
    pts = centers[which] + offs
    pts[:, 2] = np.maximum(pts[:, 2], 0.5)
    return pts


_GENERATORS = {"ground": _ground, "building": _building, "pole": _pole,
               "line": _line, "vegetation": _vegetation}
