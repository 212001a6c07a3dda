# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementation of the hot kernels (see _numpy for the contract)."""

import numpy as np

cimport cython
from libc.math cimport cos, sin, sqrt


def fk_batch(const double[:, :, ::1] fixed_r, const double[:, ::1] fixed_t,
             const double[:, ::1] axes, const double[:, ::1] q):
    cdef Py_ssize_t m = q.shape[0]
    cdef Py_ssize_t n = q.shape[1]
    link_r_np = np.empty((m, n, 3, 3))
    link_t_np = np.empty((m, n, 3))
    org_np = np.empty((m, n, 3))
    axw_np = np.empty((m, n, 3))
    ee_r_np = np.empty((m, 3, 3))
    ee_t_np = np.empty((m, 3))
    cdef double[:, :, :, ::1] link_r = link_r_np
    cdef double[:, :, ::1] link_t = link_t_np
    cdef double[:, :, ::1] org = org_np
    cdef double[:, :, ::1] axw = axw_np
    cdef double[:, :, ::1] ee_r = ee_r_np
    cdef double[:, ::1] ee_t = ee_t_np

    cdef double r[3][3]
    cdef double r2[3][3]
    cdef double rj[3][3]
    cdef double rn[3][3]
    cdef double t[3]
    cdef double t2[3]
    cdef double ax[3]
    cdef double k0, k1, k2, s, c, cc
    cdef Py_ssize_t b, i, a, jj, kk

    for b in range(m):
        for a in range(3):
            for jj in range(3):
                r[a][jj] = 1.0 if a == jj else 0.0
            t[a] = 0.0
        for i in range(n):
            # r2 = r @ fixed_r[i]; t2 = t + r @ fixed_t[i]
            for a in range(3):
                for jj in range(3):
                    r2[a][jj] = (r[a][0] * fixed_r[i, 0, jj]
                                 + r[a][1] * fixed_r[i, 1, jj]
                                 + r[a][2] * fixed_r[i, 2, jj])
                t2[a] = (t[a] + r[a][0] * fixed_t[i, 0]
                         + r[a][1] * fixed_t[i, 1] + r[a][2] * fixed_t[i, 2])
            for a in range(3):
                org[b, i, a] = t2[a]
                axw[b, i, a] = (r2[a][0] * axes[i, 0] + r2[a][1] * axes[i, 1]
                                + r2[a][2] * axes[i, 2])
            # Rodrigues about the local axis
            k0 = axes[i, 0]
            k1 = axes[i, 1]
            k2 = axes[i, 2]
            s = sin(q[b, i])
            c = cos(q[b, i])
            cc = 1.0 - c
            rj[0][0] = c + k0 * k0 * cc
            rj[0][1] = k0 * k1 * cc - k2 * s
            rj[0][2] = k0 * k2 * cc + k1 * s
            rj[1][0] = k1 * k0 * cc + k2 * s
            rj[1][1] = c + k1 * k1 * cc
            rj[1][2] = k1 * k2 * cc - k0 * s
            rj[2][0] = k2 * k0 * cc - k1 * s
            rj[2][1] = k2 * k1 * cc + k0 * s
            rj[2][2] = c + k2 * k2 * cc
            for a in range(3):
                for jj in range(3):
                    rn[a][jj] = (r2[a][0] * rj[0][jj] + r2[a][1] * rj[1][jj]
                                 + r2[a][2] * rj[2][jj])
            for a in range(3):
                for jj in range(3):
                    r[a][jj] = rn[a][jj]
                    link_r[b, i, a, jj] = rn[a][jj]
                t[a] = t2[a]
                link_t[b, i, a] = t[a]
        for a in range(3):
            for jj in range(3):
                ee_r[b, a, jj] = (r[a][0] * fixed_r[n, 0, jj]
                                  + r[a][1] * fixed_r[n, 1, jj]
                                  + r[a][2] * fixed_r[n, 2, jj])
            ee_t[b, a] = (t[a] + r[a][0] * fixed_t[n, 0]
                          + r[a][1] * fixed_t[n, 1] + r[a][2] * fixed_t[n, 2])
    return link_r_np, link_t_np, org_np, axw_np, ee_r_np, ee_t_np


def sphere_centers(const double[:, :, :, ::1] link_r, const double[:, :, ::1] link_t,
                   const long[::1] sph_link, const double[:, ::1] sph_off):
    cdef Py_ssize_t m = link_r.shape[0]
    cdef Py_ssize_t ns = sph_link.shape[0]
    out_np = np.empty((m, ns, 3))
    cdef double[:, :, ::1] out = out_np
    cdef Py_ssize_t b, s, a
    cdef Py_ssize_t li
    for b in range(m):
        for s in range(ns):
            li = sph_link[s]
            for a in range(3):
                out[b, s, a] = (link_t[b, li, a]
                                + link_r[b, li, a, 0] * sph_off[s, 0]
                                + link_r[b, li, a, 1] * sph_off[s, 1]
                                + link_r[b, li, a, 2] * sph_off[s, 2])
    return out_np


def sphere_jacobians(const double[:, :, ::1] org, const double[:, :, ::1] axw,
                     const double[:, :, ::1] centers, const long[::1] sph_link):
    cdef Py_ssize_t m = org.shape[0]
    cdef Py_ssize_t n = org.shape[1]
    cdef Py_ssize_t ns = sph_link.shape[0]
    out_np = np.zeros((m, ns, 3, n))
    cdef double[:, :, :, ::1] out = out_np
    cdef Py_ssize_t b, s, j
    cdef double dx, dy, dz, ax, ay, az
    for b in range(m):
        for s in range(ns):
            for j in range(sph_link[s] + 1):
                dx = centers[b, s, 0] - org[b, j, 0]
                dy = centers[b, s, 1] - org[b, j, 1]
                dz = centers[b, s, 2] - org[b, j, 2]
                ax = axw[b, j, 0]
                ay = axw[b, j, 1]
                az = axw[b, j, 2]
                out[b, s, 0, j] = ay * dz - az * dy
                out[b, s, 1, j] = az * dx - ax * dz
                out[b, s, 2, j] = ax * dy - ay * dx
    return out_np


def point_jacobian(const double[:, :, ::1] org, const double[:, :, ::1] axw,
                   const double[:, ::1] pts):
    cdef Py_ssize_t m = org.shape[0]
    cdef Py_ssize_t n = org.shape[1]
    out_np = np.empty((m, 3, n))
    cdef double[:, :, ::1] out = out_np
    cdef Py_ssize_t b, j
    cdef double dx, dy, dz, ax, ay, az
    for b in range(m):
        for j in range(n):
            dx = pts[b, 0] - org[b, j, 0]
            dy = pts[b, 1] - org[b, j, 1]
            dz = pts[b, 2] - org[b, j, 2]
            ax = axw[b, j, 0]
            ay = axw[b, j, 1]
            az = axw[b, j, 2]
            out[b, 0, j] = ay * dz - az * dy
            out[b, 1, j] = az * dx - ax * dz
            out[b, 2, j] = ax * dy - ay * dx
    return out_np


def rotation_jacobian(const double[:, :, ::1] axw):
    cdef Py_ssize_t m = axw.shape[0]
    cdef Py_ssize_t n = axw.shape[1]
    out_np = np.empty((m, 3, n))
    cdef double[:, :, ::1] out = out_np
    cdef Py_ssize_t b, j, a
    for b in range(m):
        for j in range(n):
            for a in range(3):
                out[b, a, j] = axw[b, j, a]
    return out_np


def sdf_batch(const long[::1] types, const double[:, ::1] params, const double[:, ::1] pts):
    cdef Py_ssize_t k = pts.shape[0]
    cdef Py_ssize_t p = types.shape[0]
    d_np = np.empty(k)
    g_np = np.zeros((k, 3))
    cdef double[::1] dv = d_np
    cdef double[:, ::1] gv = g_np
    cdef Py_ssize_t i, j, a, amax
    cdef double best, d, dist, qx, qy, qz, ox, oy, oz, inner
    cdef double dx, dy, dz, h, seg2
    cdef double gx, gy, gz, qm
    if p == 0:
        d_np.fill(1.0e9)
        return d_np, g_np
    for i in range(k):
        best = 1.0e300
        gx = 0.0
        gy = 0.0
        gz = 1.0
        for j in range(p):
            if types[j] == 0:  # sphere
                dx = pts[i, 0] - params[j, 0]
                dy = pts[i, 1] - params[j, 1]
                dz = pts[i, 2] - params[j, 2]
                dist = sqrt(dx * dx + dy * dy + dz * dz)
                d = dist - params[j, 3]
                if d < best:
                    best = d
                    if dist < 1e-12:
                        gx = 0.0
                        gy = 0.0
                        gz = 1.0
                    else:
                        gx = dx / dist
                        gy = dy / dist
                        gz = dz / dist
            elif types[j] == 1:  # axis-aligned box
                dx = pts[i, 0] - params[j, 0]
                dy = pts[i, 1] - params[j, 1]
                dz = pts[i, 2] - params[j, 2]
                qx = (dx if dx >= 0 else -dx) - params[j, 3]
                qy = (dy if dy >= 0 else -dy) - params[j, 4]
                qz = (dz if dz >= 0 else -dz) - params[j, 5]
                ox = qx if qx > 0.0 else 0.0
                oy = qy if qy > 0.0 else 0.0
                oz = qz if qz > 0.0 else 0.0
                dist = sqrt(ox * ox + oy * oy + oz * oz)
                qm = qx
                amax = 0
                if qy > qm:
                    qm = qy
                    amax = 1
                if qz > qm:
                    qm = qz
                    amax = 2
                inner = qm if qm < 0.0 else 0.0
                d = dist + inner
                if d < best:
                    best = d
                    if dist > 0.0:
                        gx = (ox if dx >= 0 else -ox) / dist
                        gy = (oy if dy >= 0 else -oy) / dist
                        gz = (oz if dz >= 0 else -oz) / dist
                    else:
                        gx = 0.0
                        gy = 0.0
                        gz = 0.0
                        if amax == 0:
                            gx = 1.0 if dx >= 0 else -1.0
                        elif amax == 1:
                            gy = 1.0 if dy >= 0 else -1.0
                        else:
                            gz = 1.0 if dz >= 0 else -1.0
            else:  # capsule
                ox = params[j, 3] - params[j, 0]
                oy = params[j, 4] - params[j, 1]
                oz = params[j, 5] - params[j, 2]
                seg2 = ox * ox + oy * oy + oz * oz
                if seg2 < 1e-18:
                    h = 0.0
                else:
                    h = ((pts[i, 0] - params[j, 0]) * ox
                         + (pts[i, 1] - params[j, 1]) * oy
                         + (pts[i, 2] - params[j, 2]) * oz) / seg2
                    if h < 0.0:
                        h = 0.0
                    elif h > 1.0:
                        h = 1.0
                dx = pts[i, 0] - (params[j, 0] + h * ox)
                dy = pts[i, 1] - (params[j, 1] + h * oy)
                dz = pts[i, 2] - (params[j, 2] + h * oz)
                dist = sqrt(dx * dx + dy * dy + dz * dz)
                d = dist - params[j, 6]
                if d < best:
                    best = d
                    if dist < 1e-12:
                        gx = 0.0
                        gy = 0.0
                        gz = 1.0
                    else:
                        gx = dx / dist
                        gy = dy / dist
                        gz = dz / dist
        dv[i] = best
        gv[i, 0] = gx
        gv[i, 1] = gy
        gv[i, 2] = gz
    return d_np, g_np
