# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loop for 3-D edge-preserving (bilateral) smoothing.

Semantics match hierseg.filters.reference.bilateral3d_numpy exactly:
window neighbours falling outside the volume are skipped and the weight
normaliser shrinks accordingly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def bilateral3d(cnp.float64_t[:, :, ::1] src not None,
                double sigma_spatial, double sigma_range, int radius):
    cdef Py_ssize_t nx = src.shape[0]
    cdef Py_ssize_t ny = src.shape[1]
    cdef Py_ssize_t nz = src.shape[2]
    cdef Py_ssize_t w = 2 * radius + 1

    out_arr = np.empty((nx, ny, nz), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] out = out_arr

    # spatial weights over the (2r+1)^3 window, voxel-index distances
    spatial_arr = np.empty((w, w, w), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] spatial = spatial_arr
    cdef Py_ssize_t a, b, c
    cdef double inv2ss = 1.0 / (2.0 * sigma_spatial * sigma_spatial)
    cdef double inv2sr = 1.0 / (2.0 * sigma_range * sigma_range)
    cdef double d2
    for a in range(w):
        for b in range(w):
            for c in range(w):
                d2 = ((a - radius) * (a - radius)
                      + (b - radius) * (b - radius)
                      + (c - radius) * (c - radius))
                spatial[a, b, c] = exp(-d2 * inv2ss)

    cdef Py_ssize_t i, j, k, ii, jj, kk
    cdef Py_ssize_t i0, i1, j0, j1, k0, k1
    cdef double centre, neigh, wgt, acc, norm, diff
    for i in range(nx):
        i0 = i - radius if i - radius > 0 else 0
        i1 = i + radius + 1 if i + radius + 1 < nx else nx
        for j in range(ny):
            j0 = j - radius if j - radius > 0 else 0
            j1 = j + radius + 1 if j + radius + 1 < ny else ny
            for k in range(nz):
                k0 = k - radius if k - radius > 0 else 0
                k1 = k + radius + 1 if k + radius + 1 < nz else nz
                centre = src[i, j, k]
                acc = 0.0
                norm = 0.0
                for ii in range(i0, i1):
                    for jj in range(j0, j1):
                        for kk in range(k0, k1):
                            neigh = src[ii, jj, kk]
                            diff = neigh - centre
                            wgt = (spatial[ii - i + radius, jj - j + radius, kk - k + radius]
                                   * exp(-diff * diff * inv2sr))
                            acc += wgt * neigh
                            norm += wgt
                out[i, j, k] = acc / norm
    return out_arr
