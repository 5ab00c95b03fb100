"""Independent reference implementations used to cross-check the library."""

import numpy as np
from shapely.geometry import MultiPoint

from crashsim.accident_metrics import DANGER_DISTANCE
from crashsim.bev_motion import InstanceMap
from crashsim.geometry import GridSpec

TIE = 1e-9


def cell_hull(grid: GridSpec, cells):
    """Shapely convex hull of the union of the given cells' squares."""
    h = grid.cell / 2
    pts = []
    for i, j in cells:
        cx, cy = grid.x_min + (i + 0.5) * grid.cell, grid.y_min + (j + 0.5) * grid.cell
        pts += [(cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h)]
    return MultiPoint(pts).convex_hull


def brute_force_detect(imap: InstanceMap, threshold: float = DANGER_DISTANCE):
    """(ids, tau) of the closest pair across all timesteps, or None.

    Every pair at every step is measured; no pruning. Keys: distance, then the
    larger overlap area among touching pairs, then earliest step, then ids.
    """
    best = None
    for tau in range(imap.timesteps):
        layer = imap.ids[tau]
        ids = sorted(int(v) for v in np.unique(layer) if v)
        hulls = {i: cell_hull(imap.grid, np.argwhere(layer == i)) for i in ids}
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                pa, pb = hulls[ids[a]], hulls[ids[b]]
                d = pa.distance(pb)
                if d > threshold:
                    continue
                d = 0.0 if d <= 1e-12 else d
                ov = pa.intersection(pb).area if d == 0.0 else 0.0
                key = (d, -ov, tau, ids[a], ids[b])
                if best is None or _less(key, best):
                    best = key
    if best is None:
        return None
    return (best[3], best[4]), best[2]


def _less(a, b):
    for x, y in zip(a[:2], b[:2]):
        if x < y - TIE:
            return True
        if x > y + TIE:
            return False
    return a[2:] < b[2:]


def random_instance_sequence(rng, grid: GridSpec, timesteps: int = 5, max_instances: int = 5):
    """Instance maps of random rectangles and L-shapes drifting over time."""
    ids = np.zeros((timesteps,) + grid.shape, dtype=np.int64)
    n = int(rng.integers(1, max_instances + 1))
    for iid in range(1, n + 1):
        i, j = rng.integers(0, grid.nx), rng.integers(0, grid.ny)
        w, h = rng.integers(1, 9), rng.integers(1, 5)
        di, dj = rng.integers(-3, 4), rng.integers(-3, 4)
        ell = rng.random() < 0.3
        for tau in range(timesteps):
            if rng.random() < 0.1:
                continue  # instance absent at this step
            a, b = int(i + di * tau), int(j + dj * tau)
            ids[tau, max(a, 0):max(a + w, 0), max(b, 0):max(b + h, 0)] = iid
            if ell:
                ids[tau, max(a, 0):max(a + 2, 0), max(b, 0):max(b + h + 3, 0)] = iid
    return InstanceMap(grid, ids)
