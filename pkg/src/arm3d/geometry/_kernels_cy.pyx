# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels.

Formula-identical to the numpy fallback ``_kernels_py`` (same operation
order per element) so the two backends agree bit-for-bit. Selected at
import time by ``arm3d.geometry.kernels``.
"""

from libc.math cimport INFINITY, sqrt

import numpy as np


cdef inline double _clip0(double x) nogil:
    return x if x > 0.0 else 0.0


cdef inline double _max2(double a, double b) nogil:
    return a if a > b else b


cdef inline double _imax3(double a, double b) nogil:
    # interval gap: max(0, a, b)
    cdef double m = a if a > b else b
    return m if m > 0.0 else 0.0


def pairwise_iou(double[:, ::1] mins_a, double[:, ::1] maxs_a,
                 double[:, ::1] mins_b, double[:, ::1] maxs_b):
    cdef Py_ssize_t n = mins_a.shape[0], m = mins_b.shape[0]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double inter, edge, va, vb
    for i in range(n):
        va = (maxs_a[i, 0] - mins_a[i, 0]) * (maxs_a[i, 1] - mins_a[i, 1]) \
            * (maxs_a[i, 2] - mins_a[i, 2])
        for j in range(m):
            vb = (maxs_b[j, 0] - mins_b[j, 0]) * (maxs_b[j, 1] - mins_b[j, 1]) \
                * (maxs_b[j, 2] - mins_b[j, 2])
            inter = 1.0
            for k in range(3):
                edge = _clip0(min(maxs_a[i, k], maxs_b[j, k])
                              - max(mins_a[i, k], mins_b[j, k]))
                inter = inter * edge
            out[i, j] = inter / (va + vb - inter)
    return out_arr


cdef inline double _rect_ratio(double[:, ::1] mins_a, double[:, ::1] maxs_a,
                               double[:, ::1] mins_b, double[:, ::1] maxs_b,
                               Py_ssize_t i, Py_ssize_t u, Py_ssize_t v) nogil:
    cdef double inter, area_a, area_b
    inter = _clip0(min(maxs_a[i, u], maxs_b[i, u]) - max(mins_a[i, u], mins_b[i, u])) \
        * _clip0(min(maxs_a[i, v], maxs_b[i, v]) - max(mins_a[i, v], mins_b[i, v]))
    area_a = (maxs_a[i, u] - mins_a[i, u]) * (maxs_a[i, v] - mins_a[i, v])
    area_b = (maxs_b[i, u] - mins_b[i, u]) * (maxs_b[i, v] - mins_b[i, v])
    return _max2(inter / area_a, inter / area_b)


def spatial_pair_stats(double[:, ::1] mins_a, double[:, ::1] maxs_a,
                       double[:, ::1] mins_b, double[:, ::1] maxs_b):
    cdef Py_ssize_t n = mins_a.shape[0]
    vgap_arr = np.empty(n, dtype=np.float64)
    hgap_arr = np.empty(n, dtype=np.float64)
    rxy_arr = np.empty(n, dtype=np.float64)
    ryz_arr = np.empty(n, dtype=np.float64)
    rzx_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] vgap = vgap_arr, hgap = hgap_arr
    cdef double[::1] rxy = rxy_arr, ryz = ryz_arr, rzx = rzx_arr
    cdef Py_ssize_t i
    cdef double dx, dy
    for i in range(n):
        vgap[i] = _imax3(mins_a[i, 2] - maxs_b[i, 2], mins_b[i, 2] - maxs_a[i, 2])
        dx = _imax3(mins_a[i, 0] - maxs_b[i, 0], mins_b[i, 0] - maxs_a[i, 0])
        dy = _imax3(mins_a[i, 1] - maxs_b[i, 1], mins_b[i, 1] - maxs_a[i, 1])
        hgap[i] = sqrt(dx * dx + dy * dy)
        rxy[i] = _rect_ratio(mins_a, maxs_a, mins_b, maxs_b, i, 0, 1)
        ryz[i] = _rect_ratio(mins_a, maxs_a, mins_b, maxs_b, i, 1, 2)
        rzx[i] = _rect_ratio(mins_a, maxs_a, mins_b, maxs_b, i, 2, 0)
    return vgap_arr, hgap_arr, rxy_arr, ryz_arr, rzx_arr


def spatial_pair_labels(double[:, ::1] mins_a, double[:, ::1] maxs_a,
                        double[:, ::1] mins_b, double[:, ::1] maxs_b,
                        double tau_d, double tau_r):
    cdef Py_ssize_t n = mins_a.shape[0]
    out_arr = np.empty(n, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double vgap, dx, dy, hgap, rxy, ryz, rzx
    cdef bint vertical, horizontal
    for i in range(n):
        vgap = _imax3(mins_a[i, 2] - maxs_b[i, 2], mins_b[i, 2] - maxs_a[i, 2])
        dx = _imax3(mins_a[i, 0] - maxs_b[i, 0], mins_b[i, 0] - maxs_a[i, 0])
        dy = _imax3(mins_a[i, 1] - maxs_b[i, 1], mins_b[i, 1] - maxs_a[i, 1])
        hgap = sqrt(dx * dx + dy * dy)
        rxy = _rect_ratio(mins_a, maxs_a, mins_b, maxs_b, i, 0, 1)
        ryz = _rect_ratio(mins_a, maxs_a, mins_b, maxs_b, i, 1, 2)
        rzx = _rect_ratio(mins_a, maxs_a, mins_b, maxs_b, i, 2, 0)
        vertical = vgap <= tau_d and rxy >= tau_r
        horizontal = hgap <= tau_d and _max2(ryz, rzx) >= tau_r
        out[i] = 1 if (vertical or horizontal) else 0
    return out_arr


def nearest_gt(double[:, ::1] centers, double[:, ::1] gt_centers):
    cdef Py_ssize_t n = centers.shape[0], m = gt_centers.shape[0]
    dist_arr = np.empty(n, dtype=np.float64)
    idx_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] dist = dist_arr
    cdef long long[::1] idx = idx_arr
    cdef Py_ssize_t i, g
    cdef double best, d2, dx, dy, dz
    cdef Py_ssize_t best_g
    if m == 0:
        dist_arr.fill(INFINITY)
        idx_arr.fill(-1)
        return dist_arr, idx_arr
    for i in range(n):
        best = INFINITY
        best_g = 0
        for g in range(m):
            dx = centers[i, 0] - gt_centers[g, 0]
            dy = centers[i, 1] - gt_centers[g, 1]
            dz = centers[i, 2] - gt_centers[g, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best:
                best = d2
                best_g = g
        dist[i] = sqrt(best)
        idx[i] = best_g
    return dist_arr, idx_arr


def nms_greedy(long long[::1] order, double[:, ::1] mins, double[:, ::1] maxs,
               long long[::1] categories, double iou_threshold):
    cdef Py_ssize_t n = mins.shape[0]
    suppressed_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] suppressed = suppressed_arr
    vol_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] vol = vol_arr
    cdef Py_ssize_t oi, i, j, k
    cdef double inter, edge, iou
    kept = []
    for i in range(n):
        vol[i] = (maxs[i, 0] - mins[i, 0]) * (maxs[i, 1] - mins[i, 1]) \
            * (maxs[i, 2] - mins[i, 2])
    for oi in range(order.shape[0]):
        i = order[oi]
        if suppressed[i]:
            continue
        kept.append(i)
        for j in range(n):
            if j == i or suppressed[j] or categories[j] != categories[i]:
                continue
            inter = 1.0
            for k in range(3):
                edge = _clip0(min(maxs[i, k], maxs[j, k]) - max(mins[i, k], mins[j, k]))
                inter = inter * edge
            iou = inter / (vol[j] + vol[i] - inter)
            if iou > iou_threshold:
                suppressed[j] = 1
    return np.array(kept, dtype=np.int64)
