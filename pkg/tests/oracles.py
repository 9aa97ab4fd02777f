"""Independent reference implementations used to check the package.

Nothing here imports the code under test.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


def laplacian_dirichlet(m, n):
    """Sparse 5-point Laplacian on the (m-2) x (n-2) interior, zero border."""
    mi, ni = m - 2, n - 2
    ex = np.ones(ni)
    ey = np.ones(mi)
    Dx = sp.diags([ex[:-1], -2 * ex, ex[:-1]], [-1, 0, 1])
    Dy = sp.diags([ey[:-1], -2 * ey, ey[:-1]], [-1, 0, 1])
    return (sp.kron(sp.identity(mi), Dx) + sp.kron(Dy, sp.identity(ni))).tocsc()


def divergence_backward(gx, gy):
    return (gx[1:-1, 1:-1] - gx[1:-1, :-2]) + (gy[1:-1, 1:-1] - gy[:-2, 1:-1])


def poisson_direct(gx, gy):
    """Sparse LU solve of lap(z) = div(g), z = 0 on the border."""
    m, n = gx.shape
    rhs = divergence_backward(gx, gy).ravel()
    z = np.zeros((m, n))
    z[1:-1, 1:-1] = spsolve(laplacian_dirichlet(m, n), rhs).reshape(m - 2, n - 2)
    return z


def poisson_dense(gx, gy):
    """Dense direct solve; only for small grids."""
    m, n = gx.shape
    A = laplacian_dirichlet(m, n).toarray()
    z = np.zeros((m, n))
    z[1:-1, 1:-1] = np.linalg.solve(A, divergence_backward(gx, gy).ravel()).reshape(m - 2, n - 2)
    return z


def forward_gradients(z):
    """Forward differences with the last column/row repeating zero slope."""
    gx = np.zeros_like(z)
    gy = np.zeros_like(z)
    gx[:, :-1] = z[:, 1:] - z[:, :-1]
    gy[:-1, :] = z[1:, :] - z[:-1, :]
    return gx, gy


def compact_bump(m, n, rng, margin=4):
    """Random smooth bump that vanishes (with its slopes) well inside the border."""
    yy, xx = np.mgrid[0:m, 0:n].astype(float)
    cy = rng.uniform(margin + 3, m - margin - 4)
    cx = rng.uniform(margin + 3, n - margin - 4)
    ry = min(cy - margin, m - 1 - margin - cy)
    rx = min(cx - margin, n - 1 - margin - cx)
    r2 = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    z = np.where(r2 < 1, (1 - r2) ** 3, 0.0) * rng.uniform(0.5, 5.0)
    return z


def sphere_cap_angles(xs, ys, cx, cy, r):
    """Analytic surface angles of a sphere at pixel offsets (direct math)."""
    import math
    ax = np.array([math.asin((x - cx) / r) for x in xs])
    ay = np.array([math.asin((y - cy) / r) for y in ys])
    return ax, ay


def pinhole_depth(f, B, d):
    return f * B / d


def plane_points_lsq(x, y, z):
    """Normal-equation plane fit, independent of lstsq."""
    A = np.column_stack([x, y, np.ones_like(x)])
    return np.linalg.solve(A.T @ A, A.T @ z)
