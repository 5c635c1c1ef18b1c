# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selective-scan kernels; same layout and semantics as ``_scan_ref``.

Loops run token-major (t outer, channel e and state s inner) so every inner
access is contiguous.  Summation order is fixed, so results are deterministic.
"""
import numpy as np
from libc.math cimport exp, expf

ctypedef fused real:
    float
    double


cdef inline real _exp(real x) noexcept nogil:
    if real is float:
        return expf(x)
    else:
        return exp(x)


def scan_forward(real[:, :, :, ::1] u, real[:, :, :, ::1] delta, real[:, :, ::1] A,
                 real[:, :, :, ::1] Bm, real[:, :, :, ::1] Cm, real[:, ::1] D):
    cdef Py_ssize_t N = u.shape[0], K = u.shape[1], L = u.shape[2], E = u.shape[3]
    cdef Py_ssize_t S = A.shape[2]
    dtype = np.float32 if real is float else np.float64
    h_arr = np.empty((N, K, L, E, S), dtype=dtype)
    y_arr = np.empty((N, K, L, E), dtype=dtype)
    cdef real[:, :, :, :, ::1] h = h_arr
    cdef real[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t n, k, t, e, s
    cdef real dt, ut, acc, hs
    cdef real *hprev
    cdef real *hcur
    cdef const real *a_row
    cdef const real *b_row
    cdef const real *c_row
    with nogil:
        for n in range(N):
            for k in range(K):
                for t in range(L):
                    b_row = &Bm[n, k, t, 0]
                    c_row = &Cm[n, k, t, 0]
                    for e in range(E):
                        dt = delta[n, k, t, e]
                        ut = u[n, k, t, e]
                        a_row = &A[k, e, 0]
                        hcur = &h[n, k, t, e, 0]
                        acc = 0
                        if t == 0:
                            for s in range(S):
                                hs = (dt * b_row[s]) * ut
                                hcur[s] = hs
                                acc = acc + c_row[s] * hs
                        else:
                            hprev = &h[n, k, t - 1, e, 0]
                            for s in range(S):
                                hs = _exp(dt * a_row[s]) * hprev[s] + (dt * b_row[s]) * ut
                                hcur[s] = hs
                                acc = acc + c_row[s] * hs
                        y[n, k, t, e] = acc + D[k, e] * ut
    return y_arr, h_arr


def scan_backward(real[:, :, :, ::1] dy, real[:, :, :, ::1] u, real[:, :, :, ::1] delta,
                  real[:, :, ::1] A, real[:, :, :, ::1] Bm, real[:, :, :, ::1] Cm,
                  real[:, ::1] D, real[:, :, :, :, ::1] h):
    cdef Py_ssize_t N = u.shape[0], K = u.shape[1], L = u.shape[2], E = u.shape[3]
    cdef Py_ssize_t S = A.shape[2]
    dtype = np.float32 if real is float else np.float64
    du_arr = np.empty((N, K, L, E), dtype=dtype)
    ddelta_arr = np.empty((N, K, L, E), dtype=dtype)
    dB_arr = np.zeros((N, K, L, S), dtype=dtype)
    dC_arr = np.zeros((N, K, L, S), dtype=dtype)
    dA_arr = np.zeros((K, E, S), dtype=np.float64)
    dD_arr = np.zeros((K, E), dtype=np.float64)
    # running state gradient and the next step's decay, per (e, s)
    gh_arr = np.zeros((E, S), dtype=dtype)
    anext_arr = np.zeros((E, S), dtype=dtype)
    cdef real[:, :, :, ::1] du = du_arr
    cdef real[:, :, :, ::1] ddelta = ddelta_arr
    cdef real[:, :, :, ::1] dB = dB_arr
    cdef real[:, :, :, ::1] dC = dC_arr
    cdef double[:, :, ::1] dA = dA_arr
    cdef double[:, ::1] dD = dD_arr
    cdef real[:, ::1] gh = gh_arr
    cdef real[:, ::1] a_next = anext_arr
    dA_loc_arr = np.zeros((E, S), dtype=dtype)
    cdef real[:, ::1] dA_loc = dA_loc_arr
    cdef real *da_row
    cdef Py_ssize_t n, k, t, e, s
    cdef real dyt, dt, ut, a, da, gdu, acc_delta, acc_u, g
    cdef real *gh_row
    cdef real *an_row
    cdef real *db_row
    cdef real *dc_row
    cdef const real *a_row
    cdef const real *b_row
    cdef const real *c_row
    cdef const real *hcur
    cdef const real *hprev
    with nogil:
        for n in range(N):
            for k in range(K):
                gh[:, :] = 0
                a_next[:, :] = 0
                dA_loc[:, :] = 0
                for t in range(L - 1, -1, -1):
                    b_row = &Bm[n, k, t, 0]
                    c_row = &Cm[n, k, t, 0]
                    db_row = &dB[n, k, t, 0]
                    dc_row = &dC[n, k, t, 0]
                    for e in range(E):
                        dyt = dy[n, k, t, e]
                        dt = delta[n, k, t, e]
                        ut = u[n, k, t, e]
                        a_row = &A[k, e, 0]
                        gh_row = &gh[e, 0]
                        an_row = &a_next[e, 0]
                        hcur = &h[n, k, t, e, 0]
                        da_row = &dA_loc[e, 0]
                        acc_delta = 0
                        acc_u = 0
                        if t > 0:
                            hprev = &h[n, k, t - 1, e, 0]
                            for s in range(S):
                                g = gh_row[s] * an_row[s] + dyt * c_row[s]
                                gh_row[s] = g
                                dc_row[s] += dyt * hcur[s]
                                a = _exp(dt * a_row[s])
                                da = g * hprev[s] * a
                                acc_delta = acc_delta + da * a_row[s] + g * b_row[s] * ut
                                da_row[s] += da * dt
                                gdu = g * dt
                                db_row[s] += gdu * ut
                                acc_u = acc_u + gdu * b_row[s]
                                an_row[s] = a
                        else:
                            for s in range(S):
                                g = gh_row[s] * an_row[s] + dyt * c_row[s]
                                gh_row[s] = g
                                dc_row[s] += dyt * hcur[s]
                                acc_delta = acc_delta + g * b_row[s] * ut
                                gdu = g * dt
                                db_row[s] += gdu * ut
                                acc_u = acc_u + gdu * b_row[s]
                        ddelta[n, k, t, e] = acc_delta
                        du[n, k, t, e] = acc_u + dyt * D[k, e]
                        dD[k, e] += dyt * ut
                for e in range(E):
                    for s in range(S):
                        dA[k, e, s] += dA_loc[e, s]
    return du_arr, ddelta_arr, dA_arr.astype(dtype), dB_arr, dC_arr, dD_arr.astype(dtype)
