"""
Shared feature selection with the column-norm penalty
=====================================================

Linear heads for areas, dimensions and wall thicknesses read from the same
100 features, but only 10 of those features carry signal. With more features
than samples, plain least squares spreads weight over every column. The
proximal column-norm step zeroes the useless columns for all three heads at
once.
"""
import numpy as np

from lvquant.training import fit_group_lasso_heads

rng = np.random.default_rng(0)
n, p = 80, 100
X = rng.standard_normal((n, p))
keep = rng.choice(p, 10, replace=False)
targets = {}
for task, k in (("area", 2), ("dim", 3), ("rwt", 6)):
    W = np.zeros((k, p))
    W[:, keep] = rng.standard_normal((k, 10))
    targets[task] = X @ W.T + 0.01 * rng.standard_normal((n, k))

for lam in (0.0, 0.03):
    heads = fit_group_lasso_heads(X, targets, lambda1=lam)
    norms = np.stack([np.linalg.norm(heads[f"w_{t}"], axis=0) for t in targets])
    alive = (norms > 1e-3 * norms.max(axis=1, keepdims=True)).any(axis=0)
    hits = np.intersect1d(np.flatnonzero(alive), keep).size
    print(f"lambda1={lam:<5} live columns {alive.sum():3d}, of which informative {hits}/10")
