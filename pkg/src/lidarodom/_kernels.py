"""Compiled per-point loops for covariance estimation and GICP linearization."""

import math

import numba
import numpy as np

# below this determinant the combined covariance gets 1e-9 * I added
SINGULAR_DET = 1e-24
DEGENERATE_EIG = 1e-12


@numba.njit(cache=True)
def _sym_eigvals(a00, a01, a02, a11, a12, a22):
    """Eigenvalues of a symmetric 3x3 matrix, descending (trigonometric method)."""
    p1 = a01 * a01 + a02 * a02 + a12 * a12
    q = (a00 + a11 + a22) / 3.0
    b00, b11, b22 = a00 - q, a11 - q, a22 - q
    p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1
    if p2 <= 0.0:
        return q, q, q
    p = math.sqrt(p2 / 6.0)
    det = (
        b00 * (b11 * b22 - a12 * a12)
        - a01 * (a01 * b22 - a12 * a02)
        + a02 * (a01 * a12 - b11 * a02)
    )
    r = det / (2.0 * p * p * p)
    if r <= -1.0:
        phi = math.pi / 3.0
    elif r >= 1.0:
        phi = 0.0
    else:
        phi = math.acos(r) / 3.0
    e1 = q + 2.0 * p * math.cos(phi)
    e3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return e1, e2, e3


@numba.njit(cache=True)
def _min_eigvec(a00, a01, a02, a11, a12, a22, lam, out):
    """Unit eigenvector for eigenvalue ``lam``; returns False if not unique."""
    r0x, r0y, r0z = a00 - lam, a01, a02
    r1x, r1y, r1z = a01, a11 - lam, a12
    r2x, r2y, r2z = a02, a12, a22 - lam
    c0x, c0y, c0z = r0y * r1z - r0z * r1y, r0z * r1x - r0x * r1z, r0x * r1y - r0y * r1x
    c1x, c1y, c1z = r0y * r2z - r0z * r2y, r0z * r2x - r0x * r2z, r0x * r2y - r0y * r2x
    c2x, c2y, c2z = r1y * r2z - r1z * r2y, r1z * r2x - r1x * r2z, r1x * r2y - r1y * r2x
    n0 = c0x * c0x + c0y * c0y + c0z * c0z
    n1 = c1x * c1x + c1y * c1y + c1z * c1z
    n2 = c2x * c2x + c2y * c2y + c2z * c2z
    if n0 >= n1 and n0 >= n2:
        vx, vy, vz, nn = c0x, c0y, c0z, n0
    elif n1 >= n2:
        vx, vy, vz, nn = c1x, c1y, c1z, n1
    else:
        vx, vy, vz, nn = c2x, c2y, c2z, n2
    if nn <= 0.0:
        return False
    s = 1.0 / math.sqrt(nn)
    out[0], out[1], out[2] = vx * s, vy * s, vz * s
    return True


@numba.njit(cache=True)
def regularized_covariances(points, nbr, eps, origin):
    """Plane-to-plane covariances from neighbor index lists.

    Returns (covariances, normals, planar). Planar points get
    ``I - (1 - eps) n n^T`` (eigenvalues eps, 1, 1); degenerate ones get I.
    """
    n, k = nbr.shape
    covs = np.empty((n, 3, 3))
    normals = np.empty((n, 3))
    planar = np.empty(n, dtype=np.bool_)
    v = np.empty(3)
    for i in range(n):
        mx = 0.0
        my = 0.0
        mz = 0.0
        for j in range(k):
            p = nbr[i, j]
            mx += points[p, 0]
            my += points[p, 1]
            mz += points[p, 2]
        mx /= k
        my /= k
        mz /= k
        a00 = a01 = a02 = a11 = a12 = a22 = 0.0
        for j in range(k):
            p = nbr[i, j]
            dx = points[p, 0] - mx
            dy = points[p, 1] - my
            dz = points[p, 2] - mz
            a00 += dx * dx
            a01 += dx * dy
            a02 += dx * dz
            a11 += dy * dy
            a12 += dy * dz
            a22 += dz * dz
        a00 /= k
        a01 /= k
        a02 /= k
        a11 /= k
        a12 /= k
        a22 /= k
        e1, e2, e3 = _sym_eigvals(a00, a01, a02, a11, a12, a22)
        ok = not (e2 < DEGENERATE_EIG and e3 < DEGENERATE_EIG)
        if ok:
            ok = _min_eigvec(a00, a01, a02, a11, a12, a22, e3, v)
        if not ok:
            planar[i] = False
            normals[i, 0], normals[i, 1], normals[i, 2] = 0.0, 0.0, 1.0
            for r in range(3):
                for c in range(3):
                    covs[i, r, c] = 1.0 if r == c else 0.0
            continue
        planar[i] = True
        # orient toward the sensor origin
        if v[0] * (origin[0] - points[i, 0]) + v[1] * (origin[1] - points[i, 1]) + v[2] * (origin[2] - points[i, 2]) < 0:
            v[0], v[1], v[2] = -v[0], -v[1], -v[2]
        normals[i, 0], normals[i, 1], normals[i, 2] = v[0], v[1], v[2]
        f = 1.0 - eps
        for r in range(3):
            for c in range(3):
                covs[i, r, c] = (1.0 if r == c else 0.0) - f * v[r] * v[c]
    return covs, normals, planar


@numba.njit(cache=True)
def _combined_inverse(cp, cq, R, i, j, S, M):
    """S = R Cq R^T and M = (Cp + S)^-1 for pair (i, j), written in place."""
    for r in range(3):
        for c in range(3):
            acc = 0.0
            for a in range(3):
                for b in range(3):
                    acc += R[r, a] * cq[i, a, b] * R[c, b]
            S[r, c] = acc
    s00 = cp[j, 0, 0] + S[0, 0]
    s01 = cp[j, 0, 1] + S[0, 1]
    s02 = cp[j, 0, 2] + S[0, 2]
    s10 = cp[j, 1, 0] + S[1, 0]
    s11 = cp[j, 1, 1] + S[1, 1]
    s12 = cp[j, 1, 2] + S[1, 2]
    s20 = cp[j, 2, 0] + S[2, 0]
    s21 = cp[j, 2, 1] + S[2, 1]
    s22 = cp[j, 2, 2] + S[2, 2]
    det = s00 * (s11 * s22 - s12 * s21) - s01 * (s10 * s22 - s12 * s20) + s02 * (s10 * s21 - s11 * s20)
    if abs(det) < SINGULAR_DET:
        s00 += 1e-9
        s11 += 1e-9
        s22 += 1e-9
        det = s00 * (s11 * s22 - s12 * s21) - s01 * (s10 * s22 - s12 * s20) + s02 * (s10 * s21 - s11 * s20)
    inv = 1.0 / det
    M[0, 0] = (s11 * s22 - s12 * s21) * inv
    M[0, 1] = (s02 * s21 - s01 * s22) * inv
    M[0, 2] = (s01 * s12 - s02 * s11) * inv
    M[1, 0] = (s12 * s20 - s10 * s22) * inv
    M[1, 1] = (s00 * s22 - s02 * s20) * inv
    M[1, 2] = (s02 * s10 - s00 * s12) * inv
    M[2, 0] = (s10 * s21 - s11 * s20) * inv
    M[2, 1] = (s01 * s20 - s00 * s21) * inv
    M[2, 2] = (s00 * s11 - s01 * s10) * inv


@numba.njit(cache=True)
def gicp_cost(tgt, cp, src, cq, ti, si, R, t):
    """Sum of d^T (Cp + R Cq R^T)^-1 d with d = p - (R q + t)."""
    S = np.empty((3, 3))
    M = np.empty((3, 3))
    d = np.empty(3)
    total = 0.0
    for n in range(len(ti)):
        i = si[n]
        j = ti[n]
        _combined_inverse(cp, cq, R, i, j, S, M)
        for r in range(3):
            d[r] = tgt[j, r] - (R[r, 0] * src[i, 0] + R[r, 1] * src[i, 1] + R[r, 2] * src[i, 2] + t[r])
        for r in range(3):
            total += d[r] * (M[r, 0] * d[0] + M[r, 1] * d[1] + M[r, 2] * d[2])
    return total


@numba.njit(cache=True)
def gicp_linearize(tgt, cp, src, cq, ti, si, R, t, cov_term):
    """Gauss-Newton system for a left perturbation exp(delta) * T.

    Returns (H, g, cost) with ``H = sum J^T M J`` (covariance held fixed)
    and ``g`` the half-gradient. ``cov_term`` = 1 adds the rotation
    dependence of the combined covariance to ``g`` (exact gradient);
    0 gives the usual fixed-covariance GICP gradient.
    """
    H = np.zeros((6, 6))
    g = np.zeros(6)
    S = np.empty((3, 3))
    M = np.empty((3, 3))
    J = np.empty((3, 6))
    MJ = np.empty((3, 6))
    d = np.empty(3)
    q = np.empty(3)
    u = np.empty(3)
    w = np.empty(3)
    cost = 0.0
    for n in range(len(ti)):
        i = si[n]
        j = ti[n]
        _combined_inverse(cp, cq, R, i, j, S, M)
        for r in range(3):
            q[r] = R[r, 0] * src[i, 0] + R[r, 1] * src[i, 1] + R[r, 2] * src[i, 2] + t[r]
            d[r] = tgt[j, r] - q[r]
        for r in range(3):
            u[r] = M[r, 0] * d[0] + M[r, 1] * d[1] + M[r, 2] * d[2]
        cost += d[0] * u[0] + d[1] * u[1] + d[2] * u[2]
        # half-gradient: rotation part u x (q + S u), translation part -u
        for r in range(3):
            w[r] = q[r] + cov_term * (S[r, 0] * u[0] + S[r, 1] * u[1] + S[r, 2] * u[2])
        g[0] += u[1] * w[2] - u[2] * w[1]
        g[1] += u[2] * w[0] - u[0] * w[2]
        g[2] += u[0] * w[1] - u[1] * w[0]
        g[3] -= u[0]
        g[4] -= u[1]
        g[5] -= u[2]
        # J = [hat(q), -I]
        J[0, 0], J[0, 1], J[0, 2] = 0.0, -q[2], q[1]
        J[1, 0], J[1, 1], J[1, 2] = q[2], 0.0, -q[0]
        J[2, 0], J[2, 1], J[2, 2] = -q[1], q[0], 0.0
        for r in range(3):
            for c in range(3):
                J[r, 3 + c] = -1.0 if r == c else 0.0
        for r in range(3):
            for c in range(6):
                MJ[r, c] = M[r, 0] * J[0, c] + M[r, 1] * J[1, c] + M[r, 2] * J[2, c]
        for a in range(6):
            for b in range(a, 6):
                H[a, b] += J[0, a] * MJ[0, b] + J[1, a] * MJ[1, b] + J[2, a] * MJ[2, b]
    for a in range(6):
        for b in range(a):
            H[a, b] = H[b, a]
    return H, g, cost
