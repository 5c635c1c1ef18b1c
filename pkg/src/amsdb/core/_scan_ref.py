"""Pure-numpy selective-scan kernels (fallback for the compiled ``_scan`` module).

Layout shared with the compiled kernels::

    u, delta : (N, K, L, E)   N sequences per direction group, K directions
    A        : (K, E, S)      continuous-time state matrix (negative)
    Bm, Cm   : (N, K, L, S)   token-dependent input/output projections
    D        : (K, E)         direct feed-through
    h        : (N, K, L, E, S) hidden states kept for the backward pass

Recurrence per channel e and state s::

    h_t = exp(delta_t * A) * h_{t-1} + delta_t * Bm_t * u_t,   h_0 = 0
    y_t = sum_s Cm_t * h_t + D * u_t
"""
import numpy as np


def scan_forward(u, delta, A, Bm, Cm, D):
    N, K, L, E = u.shape
    S = A.shape[-1]
    h = np.empty((N, K, L, E, S), dtype=u.dtype)
    y = np.empty_like(u)
    state = np.zeros((N, K, E, S), dtype=u.dtype)
    for t in range(L):
        dt = delta[:, :, t, :, None]
        a = np.exp(dt * A[None])
        state = a * state + dt * Bm[:, :, t, None, :] * u[:, :, t, :, None]
        h[:, :, t] = state
        y[:, :, t] = (state * Cm[:, :, t, None, :]).sum(axis=-1)
    y += u * D[None, :, None, :]
    return y, h


def scan_backward(dy, u, delta, A, Bm, Cm, D, h):
    N, K, L, E = u.shape
    S = A.shape[-1]
    du = np.empty_like(u)
    ddelta = np.empty_like(delta)
    dB = np.empty_like(Bm)
    dC = np.empty_like(Cm)
    dA = np.zeros_like(A)
    gh = np.zeros((N, K, E, S), dtype=u.dtype)
    a_next = np.zeros((N, K, E, S), dtype=u.dtype)
    zero = np.zeros((N, K, E, S), dtype=u.dtype)
    for t in range(L - 1, -1, -1):
        dyt = dy[:, :, t, :, None]
        dt = delta[:, :, t, :, None]
        ut = u[:, :, t, :, None]
        Bt = Bm[:, :, t, None, :]
        gh = gh * a_next + dyt * Cm[:, :, t, None, :]
        dC[:, :, t] = (dyt * h[:, :, t]).sum(axis=2)
        a = np.exp(dt * A[None])
        h_prev = h[:, :, t - 1] if t > 0 else zero
        da = gh * h_prev * a
        ddelta[:, :, t] = (da * A[None] + gh * Bt * ut).sum(axis=-1)
        dA += (da * dt).sum(axis=0)
        gdu = gh * dt
        dB[:, :, t] = (gdu * ut).sum(axis=2)
        du[:, :, t] = (gdu * Bt).sum(axis=-1)
        a_next = a
    du += dy * D[None, :, None, :]
    dD = (dy * u).sum(axis=(0, 2))
    return du, ddelta, dA, dB, dC, dD
