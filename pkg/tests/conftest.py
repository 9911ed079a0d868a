import numpy as np
import pytest

from voxserve.volume import VolumeGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_volume(data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), dtype=np.float32):
    return VolumeGrid(np.asarray(data, dtype=dtype), spacing, origin)


def flood_fill_components(mask):
    """Brute-force 6-connected component labeling, pure python BFS.

    Returns a list of voxel-index-set components ordered by their smallest
    flat (x-fastest) index. Oracle for the fast implementation.
    """
    nz, ny, nx = mask.shape
    seen = set()
    components = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if mask[z, y, x] == 0 or (z, y, x) in seen:
                    continue
                queue = [(z, y, x)]
                seen.add((z, y, x))
                comp = set()
                while queue:
                    cz, cy, cx = queue.pop()
                    comp.add((cz, cy, cx))
                    for dz, dy, dx in (
                        (1, 0, 0), (-1, 0, 0), (0, 1, 0),
                        (0, -1, 0), (0, 0, 1), (0, 0, -1),
                    ):
                        w = (cz + dz, cy + dy, cx + dx)
                        if (
                            0 <= w[0] < nz and 0 <= w[1] < ny and 0 <= w[2] < nx
                            and mask[w] != 0 and w not in seen
                        ):
                            seen.add(w)
                            queue.append(w)
                components.append(comp)
    return components


def brute_force_otsu(values, bins=256):
    """Independent exhaustive scan maximizing between-class variance.

    Works directly from the raw values: for each candidate bin cut, classes
    are formed by comparing each value's bin index, and weights/means come
    from the values themselves, not a shared histogram path.
    """
    values = [float(v) for v in values]
    lo, hi = min(values), max(values)
    assert hi > lo
    width = (hi - lo) / bins

    def bin_index(v):
        idx = int((v - lo) / width)
        return min(idx, bins - 1)

    # bin-center representative of every value, mirroring histogram quantization
    rep = [lo + (bin_index(v) + 0.5) * width for v in values]
    n = len(values)
    best_k, best_score = None, -1.0
    for k in range(bins - 1):
        c0 = [r for v, r in zip(values, rep) if bin_index(v) <= k]
        c1 = [r for v, r in zip(values, rep) if bin_index(v) > k]
        if not c0 or not c1:
            continue
        w0, w1 = len(c0) / n, len(c1) / n
        mu0 = sum(c0) / len(c0)
        mu1 = sum(c1) / len(c1)
        score = w0 * w1 * (mu0 - mu1) ** 2
        if score > best_score + 1e-18:
            best_score, best_k = score, k
    assert best_k is not None
    return lo + (best_k + 1) * width
