"""Pure numpy implementation of the hot kernels.

Mirrors the compiled extension in collabmpc.kernels._native; used as the
fallback when the extension is unavailable or explicitly disabled.
"""

from __future__ import annotations

import numpy as np

_EYE3 = np.eye(3)


def _axis_rotations(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotations about one fixed unit axis for a batch of angles."""
    K = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    K2 = K @ K
    s = np.sin(angles)[:, None, None]
    c = (1.0 - np.cos(angles))[:, None, None]
    return _EYE3[None] + s * K + c * K2


def fk_batch(fixed_r, fixed_t, axes, q):
    """Chain forward kinematics over a batch of configurations.

    fixed_r/fixed_t hold the n+1 fixed transforms (one ahead of each joint
    plus the end-effector offset), axes the n joint axes in their post-fixed
    frames, q is (m, n).

    Returns link_r (m,n,3,3), link_t (m,n,3), joint origins org (m,n,3),
    world joint axes axw (m,n,3), ee_r (m,3,3), ee_t (m,3).
    """
    q = np.atleast_2d(q)
    m, n = q.shape
    link_r = np.empty((m, n, 3, 3))
    link_t = np.empty((m, n, 3))
    org = np.empty((m, n, 3))
    axw = np.empty((m, n, 3))
    r = np.broadcast_to(_EYE3, (m, 3, 3))
    t = np.zeros((m, 3))
    for i in range(n):
        r2 = r @ fixed_r[i]
        t2 = t + r @ fixed_t[i]
        org[:, i] = t2
        axw[:, i] = r2 @ axes[i]
        r = r2 @ _axis_rotations(axes[i], q[:, i])
        t = t2
        link_r[:, i] = r
        link_t[:, i] = t
    ee_r = r @ fixed_r[n]
    ee_t = t + r @ fixed_t[n]
    return link_r, link_t, org, axw, ee_r, ee_t


def sphere_centers(link_r, link_t, sph_link, sph_off):
    """World positions of skeleton spheres attached to link frames."""
    return (np.einsum("msij,sj->msi", link_r[:, sph_link], sph_off)
            + link_t[:, sph_link])


def sphere_jacobians(org, axw, centers, sph_link):
    """Position Jacobians (m, s, 3, n) of sphere centers w.r.t. joint angles."""
    n = org.shape[1]
    diff = centers[:, :, None, :] - org[:, None, :, :]
    cr = np.cross(axw[:, None, :, :], diff)
    mask = (np.arange(n)[None, :] <= sph_link[:, None]).astype(float)
    return np.transpose(cr, (0, 1, 3, 2)) * mask[None, :, None, :]


def point_jacobian(org, axw, pts):
    """Position Jacobian (m, 3, n) of a point rigid to the last link."""
    diff = pts[:, None, :] - org
    cr = np.cross(axw, diff)
    return np.transpose(cr, (0, 2, 1))


def rotation_jacobian(axw):
    """Angular-velocity Jacobian (m, 3, n) of the last link frame."""
    return np.transpose(axw, (0, 2, 1))


def sdf_batch(types, params, pts):
    """Exact signed distance and gradient, minimum over primitives.

    types: (p,) int codes (0 sphere, 1 box, 2 capsule); params: (p, 7);
    pts: (k, 3). Returns d (k,), grad (k, 3).
    """
    k = pts.shape[0]
    p = types.shape[0]
    if p == 0:
        return np.full(k, 1.0e9), np.zeros((k, 3))
    dists = np.empty((p, k))
    grads = np.empty((p, k, 3))
    for j in range(p):
        code = types[j]
        row = params[j]
        if code == 0:
            diff = pts - row[:3]
            dist = np.linalg.norm(diff, axis=1)
            safe = np.maximum(dist, 1e-12)
            g = diff / safe[:, None]
            g[dist < 1e-12] = (0.0, 0.0, 1.0)
            dists[j] = dist - row[3]
            grads[j] = g
        elif code == 1:
            diff = pts - row[:3]
            qv = np.abs(diff) - row[3:6]
            qp = np.maximum(qv, 0.0)
            outd = np.linalg.norm(qp, axis=1)
            inner = np.minimum(qv.max(axis=1), 0.0)
            dists[j] = outd + inner
            sgn = np.where(diff >= 0.0, 1.0, -1.0)
            outside = outd > 0.0
            g = np.zeros((k, 3))
            g[outside] = (sgn[outside] * qp[outside]
                          / outd[outside, None])
            if np.any(~outside):
                amax = np.argmax(qv[~outside], axis=1)
                rows = np.where(~outside)[0]
                g[rows, amax] = sgn[rows, amax]
            grads[j] = g
        else:
            p0 = row[:3]
            seg = row[3:6] - p0
            seg2 = float(seg @ seg)
            if seg2 < 1e-18:
                h = np.zeros(k)
            else:
                h = np.clip((pts - p0) @ seg / seg2, 0.0, 1.0)
            diff = pts - (p0 + h[:, None] * seg)
            dist = np.linalg.norm(diff, axis=1)
            safe = np.maximum(dist, 1e-12)
            g = diff / safe[:, None]
            g[dist < 1e-12] = (0.0, 0.0, 1.0)
            dists[j] = dist - row[6]
            grads[j] = g
    best = np.argmin(dists, axis=0)
    idx = np.arange(k)
    return dists[best, idx], grads[best, idx]
