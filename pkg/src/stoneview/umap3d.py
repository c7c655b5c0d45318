"""Self-contained UMAP-style 3-D projection.

Follows the standard UMAP recipe at desk scale: exact k-nearest neighbors,
smooth-kNN calibration of per-point bandwidths, fuzzy union of the directed
graphs, PCA initialization, then negative-sampling SGD on the low-dimensional
cross-entropy with the usual rational attraction/repulsion curve. Everything
is seeded numpy, so projections are deterministic.
"""

import numpy as np

# curve parameters fit for min_dist=0.1, spread=1.0
CURVE_A = 1.576943
CURVE_B = 0.895061


def _knn(x, k):
    n = x.shape[0]
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, np.inf)
    idx = np.argpartition(d2, k, axis=1)[:, :k]
    d = np.sqrt(np.maximum(np.take_along_axis(d2, idx, axis=1), 0.0))
    order = np.argsort(d, axis=1)
    return np.take_along_axis(idx, order, axis=1), np.take_along_axis(d, order, axis=1)


def _smooth_knn_weights(dists, n_iter=64):
    """Per-point bandwidth calibration: find sigma so the effective
    neighborhood size matches log2(k), with rho the nearest distance."""
    n, k = dists.shape
    rho = dists[:, 0]
    target = np.log2(k)
    lo = np.full(n, 1e-8)
    hi = np.full(n, 1e4)
    sigma = np.ones(n)
    shifted = np.maximum(dists - rho[:, None], 0.0)
    for _ in range(n_iter):
        psum = np.exp(-shifted / sigma[:, None]).sum(axis=1)
        too_big = psum > target
        hi = np.where(too_big, sigma, hi)
        lo = np.where(too_big, lo, sigma)
        sigma = np.where(hi >= 1e4, lo * 2.0, (lo + hi) / 2.0)
    return np.exp(-shifted / sigma[:, None])


def _pca_init(x, dim, scale=10.0):
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    # deterministic sign convention
    signs = np.sign(vt[np.arange(vt.shape[0]), np.abs(vt).argmax(axis=1)])
    vt = vt * signs[:, None]
    emb = xc @ vt[:dim].T
    span = np.abs(emb).max() or 1.0
    return (emb / span * scale).astype(np.float64)


def umap_project(x, n_components=3, n_neighbors=15, n_epochs=200,
                 learning_rate=1.0, negative_samples=5, seed=0):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n <= n_neighbors:
        raise ValueError(
            f"need more than n_neighbors={n_neighbors} points, got {n}"
        )
    rng = np.random.default_rng([int(seed), 0x3D])
    idx, dists = _knn(x, n_neighbors)
    w = _smooth_knn_weights(dists)

    rows = np.repeat(np.arange(n), n_neighbors)
    cols = idx.reshape(-1)
    vals = w.reshape(-1)
    # fuzzy union: w_sym = w + w' - w * w'
    directed = {}
    for r, c, v in zip(rows, cols, vals):
        directed[(r, c)] = v
    merged = {}
    for (r, c), v in directed.items():
        if (r, c) in merged or (c, r) in merged:
            continue
        v2 = directed.get((c, r), 0.0)
        merged[(r, c)] = v + v2 - v * v2
    e_from = np.array([k[0] for k in merged], dtype=np.int64)
    e_to = np.array([k[1] for k in merged], dtype=np.int64)
    e_w = np.array(list(merged.values()))
    e_w = e_w / e_w.max()

    emb = _pca_init(x, n_components)
    for epoch in range(n_epochs):
        alpha = learning_rate * (1.0 - epoch / n_epochs)
        active = rng.random(e_w.size) < e_w
        if not active.any():
            continue
        a_from, a_to = e_from[active], e_to[active]
        diff = emb[a_from] - emb[a_to]
        d2 = (diff * diff).sum(axis=1)
        coeff = (-2.0 * CURVE_A * CURVE_B * d2 ** (CURVE_B - 1.0)
                 / (1.0 + CURVE_A * d2 ** CURVE_B))
        grad = np.clip(coeff[:, None] * diff, -4.0, 4.0)
        np.add.at(emb, a_from, alpha * grad)
        np.add.at(emb, a_to, -alpha * grad)
        for _ in range(negative_samples):
            neg = rng.integers(0, n, size=a_from.size)
            diff = emb[a_from] - emb[neg]
            d2 = (diff * diff).sum(axis=1) + 1e-3
            coeff = 2.0 * CURVE_B / (d2 * (1.0 + CURVE_A * d2 ** CURVE_B))
            grad = np.clip(coeff[:, None] * diff, -4.0, 4.0)
            np.add.at(emb, a_from, alpha * grad)
    return emb
