"""Compiled time-stepping kernels for the damped 2D acoustic scheme.

Both kernels work on wavefield buffers that carry a zero halo of ``HALO``
cells on every side, so the stencils need no bounds checks. The halo is
never written and acts as a homogeneous Dirichlet boundary.

Forward step, for every padded cell::

    term^n   = L u^n + dx^2 q^n
    u^{n+1}  = a1 * (2 u^n + c * term^n) - a2 * u^{n-1}

with ``c = (v dt / dx)^2``, ``a1 = 1 / (1 + beta)``, ``a2 = (1 - beta) / (1 + beta)``
and ``L`` the undivided 5-point (order 2) or 9-point cross (order 4) Laplacian.
The adjoint kernel is the exact transpose of that recurrence.
"""

import numpy as np
from numba import njit

HALO = 2

# 4th-order second-derivative weights, per axis
_C0 = -5.0 / 2.0
_C1 = 4.0 / 3.0
_C2 = -1.0 / 12.0


@njit(cache=True, nogil=True, inline="always")
def _lap(u, ii, jj, order):
    if order == 2:
        return u[ii - 1, jj] + u[ii + 1, jj] + u[ii, jj - 1] + u[ii, jj + 1] - 4.0 * u[ii, jj]
    return (
        2.0 * _C0 * u[ii, jj]
        + _C1 * (u[ii - 1, jj] + u[ii + 1, jj] + u[ii, jj - 1] + u[ii, jj + 1])
        + _C2 * (u[ii - 2, jj] + u[ii + 2, jj] + u[ii, jj - 2] + u[ii, jj + 2])
    )


@njit(cache=True, nogil=True)
def forward_steps(c, a1, a2, order, dx2, src_i, src_j, wavelet, rec_i, rec_j,
                  n0, n1, u_prev, u_cur, u_next, rec_out, term_out, store):
    """Advance ``(u_prev, u_cur)`` from step ``n0`` to ``n1``.

    Buffers are haloed ``(NY + 2*HALO, NX + 2*HALO)`` arrays and are rotated in
    place; on return ``u_prev``/``u_cur`` hold the last two states. Receiver
    samples for step n go to ``rec_out[:, n]``. When ``store`` is true,
    ``term_out[n - n0]`` receives ``term^n``. Returns the three buffers in their
    final roles and a status flag (0 ok, 1 non-finite or overflow).
    """
    ny, nx = c.shape
    h = HALO
    nrec = rec_i.shape[0]
    si = src_i
    sj = src_j
    status = 0
    for n in range(n0, n1):
        for i in range(ny):
            ii = i + h
            for j in range(nx):
                jj = j + h
                t = _lap(u_cur, ii, jj, order)
                if store:
                    term_out[n - n0, i, j] = t
                u_next[ii, jj] = a1[i, j] * (2.0 * u_cur[ii, jj] + c[i, j] * t) - a2[i, j] * u_prev[ii, jj]
        s = dx2 * wavelet[n]
        u_next[si + h, sj + h] += a1[si, sj] * c[si, sj] * s
        if store:
            term_out[n - n0, si, sj] += s
        for r in range(nrec):
            rec_out[r, n] = u_next[rec_i[r] + h, rec_j[r] + h]
        tmp = u_prev
        u_prev = u_cur
        u_cur = u_next
        u_next = tmp
        if (n & 63) == 63 or n == n1 - 1:
            m = 0.0
            for r in range(nrec):
                m = max(m, abs(rec_out[r, n]))
            if not (m < 1e30):
                status = 1
                break
            m = np.abs(u_cur).max()
            if not (m < 1e30):
                status = 1
                break
    return u_prev, u_cur, u_next, status


@njit(cache=True, nogil=True)
def adjoint_steps(c, a1, a2, order, rec_i, rec_j, adj_src, m_hi, m_lo,
                  lam1, lam2, lam_new, work1, work_new, term, term_n0, grad_c):
    """Run the transposed recurrence for wavefield indices ``m_hi .. m_lo+1``.

    ``lam1``/``lam2`` hold the adjoint states for indices ``m+1``/``m+2`` and
    ``work1 = c * a1 * lam1`` (all haloed). ``adj_src[r, m-1]`` is dJ/d(u^m at
    receiver r); ``term[k]`` holds ``term^{term_n0+k}``. Accumulates
    ``grad_c += a1 * lambda^m * term^{m-1}`` and returns the rotated buffers.
    """
    ny, nx = c.shape
    h = HALO
    nrec = rec_i.shape[0]
    ca1 = c * a1
    two_a1 = 2.0 * a1
    # a1 is constant in time, so apply it once after the sweep
    acc = np.zeros((ny, nx))
    for m in range(m_hi, m_lo, -1):
        tk = term[m - 1 - term_n0]
        if order == 2:
            for i in range(ny):
                ii = i + h
                for j in range(nx):
                    jj = j + h
                    v = (two_a1[i, j] * lam1[ii, jj]
                         + work1[ii - 1, jj] + work1[ii + 1, jj] + work1[ii, jj - 1] + work1[ii, jj + 1]
                         - 4.0 * work1[ii, jj] - a2[i, j] * lam2[ii, jj])
                    lam_new[ii, jj] = v
                    work_new[ii, jj] = ca1[i, j] * v
                    acc[i, j] += v * tk[i, j]
        else:
            for i in range(ny):
                ii = i + h
                for j in range(nx):
                    jj = j + h
                    v = two_a1[i, j] * lam1[ii, jj] + _lap(work1, ii, jj, order) - a2[i, j] * lam2[ii, jj]
                    lam_new[ii, jj] = v
                    work_new[ii, jj] = ca1[i, j] * v
                    acc[i, j] += v * tk[i, j]
        for r in range(nrec):
            i = rec_i[r]
            j = rec_j[r]
            s = adj_src[r, m - 1]
            lam_new[i + h, j + h] += s
            work_new[i + h, j + h] += ca1[i, j] * s
            acc[i, j] += s * tk[i, j]
        tmp = lam2
        lam2 = lam1
        lam1 = lam_new
        lam_new = tmp
        tmp = work1
        work1 = work_new
        work_new = tmp
    for i in range(ny):
        for j in range(nx):
            grad_c[i, j] += a1[i, j] * acc[i, j]
    return lam1, lam2, lam_new, work1, work_new


@njit(cache=True, nogil=True)
def im2col(x, k, s, p, out):
    """Channels-last patch matrix: out[b, i, j, (di*k + dj)*C + c] = x[b, i*s+di-p, j*s+dj-p, c].

    ``out`` has shape (B, Ho, Wo, k*k*C); entries falling in the zero padding are set to 0.
    """
    B, H, W, C = x.shape
    Ho, Wo = out.shape[1], out.shape[2]
    for b in range(B):
        for oi in range(Ho):
            for di in range(k):
                ii = oi * s + di - p
                for oj in range(Wo):
                    for dj in range(k):
                        jj = oj * s + dj - p
                        base = (di * k + dj) * C
                        if ii < 0 or ii >= H or jj < 0 or jj >= W:
                            for c in range(C):
                                out[b, oi, oj, base + c] = 0.0
                        else:
                            for c in range(C):
                                out[b, oi, oj, base + c] = x[b, ii, jj, c]
    return out


@njit(cache=True, nogil=True)
def col2im(dcols, k, s, p, H, W):
    """Transpose of :func:`im2col` (scatter-add of patch gradients)."""
    B, Ho, Wo, KC = dcols.shape
    C = KC // (k * k)
    dx = np.zeros((B, H, W, C), dtype=dcols.dtype)
    for b in range(B):
        for oi in range(Ho):
            for di in range(k):
                ii = oi * s + di - p
                if ii < 0 or ii >= H:
                    continue
                for oj in range(Wo):
                    for dj in range(k):
                        jj = oj * s + dj - p
                        if jj < 0 or jj >= W:
                            continue
                        base = (di * k + dj) * C
                        for c in range(C):
                            dx[b, ii, jj, c] += dcols[b, oi, oj, base + c]
    return dx
