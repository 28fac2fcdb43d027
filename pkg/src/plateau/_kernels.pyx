# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled mass kernels: per-simplex Gram volumes and the mass gradient."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

DEF MAXD = 16
cdef double DEGENERATE_REL = 1e-12


cdef double _factorial(int d) nogil:
    cdef double f = 1.0
    cdef int i
    for i in range(2, d + 1):
        f *= i
    return f


cdef int _cholesky(double* g, int d) nogil:
    # in-place lower Cholesky of a d x d row-major matrix; 0 on failure
    cdef int i, j, k
    cdef double s
    for j in range(d):
        s = g[j * d + j]
        for k in range(j):
            s -= g[j * d + k] * g[j * d + k]
        if s <= 0.0:
            return 0
        g[j * d + j] = sqrt(s)
        for i in range(j + 1, d):
            s = g[i * d + j]
            for k in range(j):
                s -= g[i * d + k] * g[j * d + k]
            g[i * d + j] = s / g[j * d + j]
    return 1


cdef double _volume(const double[:, ::1] V, const cnp.intp_t[:, ::1] S, Py_ssize_t s,
                    int d, int n, double* e, double* g) nogil:
    cdef int i, j, k
    cdef double acc, longest, det, vol, lim
    cdef cnp.intp_t v0 = S[s, 0]
    for i in range(d):
        for k in range(n):
            e[i * n + k] = V[S[s, i + 1], k] - V[v0, k]
    longest = 0.0
    for i in range(d + 1):
        for j in range(i + 1, d + 1):
            acc = 0.0
            for k in range(n):
                acc += (V[S[s, i], k] - V[S[s, j], k]) ** 2
            if acc > longest:
                longest = acc
    for i in range(d):
        for j in range(i + 1):
            acc = 0.0
            for k in range(n):
                acc += e[i * n + k] * e[j * n + k]
            g[i * d + j] = acc
            g[j * d + i] = acc
    if not _cholesky(g, d):
        return 0.0
    det = 1.0
    for i in range(d):
        det *= g[i * d + i]
    vol = det / _factorial(d)
    lim = DEGENERATE_REL * sqrt(longest) ** d
    if vol < lim:
        return 0.0
    return vol


def simplex_volumes(vertices, simplices):
    cdef const double[:, ::1] V = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef const cnp.intp_t[:, ::1] S = np.ascontiguousarray(simplices, dtype=np.intp).reshape(len(simplices), -1)
    cdef Py_ssize_t ns = S.shape[0], s
    out = np.zeros(ns)
    if ns == 0:
        return out
    cdef int d = S.shape[1] - 1
    cdef int n = V.shape[1]
    if d == 0:
        return np.ones(ns)
    if d > MAXD:
        raise ValueError("simplex dimension too large for compiled kernel")
    cdef double[:] o = out
    cdef double e[MAXD * 64]
    cdef double g[MAXD * MAXD]
    if n > 64:
        raise ValueError("ambient dimension too large for compiled kernel")
    with nogil:
        for s in range(ns):
            o[s] = _volume(V, S, s, d, n, e, g)
    return out


def mass_gradient(vertices, simplices):
    """Return (mass, gradient) of the summed simplex volumes."""
    cdef const double[:, ::1] V = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef const cnp.intp_t[:, ::1] S = np.ascontiguousarray(simplices, dtype=np.intp).reshape(len(simplices), -1)
    cdef Py_ssize_t ns = S.shape[0], s
    cdef int n = V.shape[1]
    grad = np.zeros((V.shape[0], n))
    if ns == 0:
        return 0.0, grad
    cdef int d = S.shape[1] - 1
    if d == 0:
        return float(ns), grad
    if d > MAXD or n > 64:
        raise ValueError("dimension too large for compiled kernel")
    cdef double[:, ::1] G = grad
    cdef double e[MAXD * 64]
    cdef double g[MAXD * MAXD]
    cdef double y[MAXD * 64]
    cdef double total = 0.0, vol, acc
    cdef int i, j, k
    with nogil:
        for s in range(ns):
            vol = _volume(V, S, s, d, n, e, g)
            if vol == 0.0:
                continue
            total += vol
            # g holds the Cholesky factor L; solve L L^T Y = E column-wise
            for k in range(n):
                for i in range(d):
                    acc = e[i * n + k]
                    for j in range(i):
                        acc -= g[i * d + j] * y[j * n + k]
                    y[i * n + k] = acc / g[i * d + i]
                for i in range(d - 1, -1, -1):
                    acc = y[i * n + k]
                    for j in range(i + 1, d):
                        acc -= g[j * d + i] * y[j * n + k]
                    y[i * n + k] = acc / g[i * d + i]
            for i in range(d):
                for k in range(n):
                    acc = vol * y[i * n + k]
                    G[S[s, i + 1], k] += acc
                    G[S[s, 0], k] -= acc
    return total, grad


# ---------------------------------------------------------------------------
# central projection of pieces of a grid face onto the face boundary
# (same algorithm and evaluation order as _kernels_py.project_pieces)

from libc.math cimport fabs, round as cround

DEF MAXK = 17
DEF MAXF = 128
DEF MAXN = 64
cdef double SNAP = 1e-9


cdef inline double _snapv(double x) nogil:
    cdef double r = cround(x)
    if fabs(x - r) < SNAP:
        return r
    return x


cdef class _Buf:
    """Growable stack of (K, n) simplices with an int tag each."""
    cdef public object arr
    cdef public object tag
    cdef double[:, :, ::1] a
    cdef Py_ssize_t[::1] t
    cdef Py_ssize_t size

    def __init__(self, Py_ssize_t cap, Py_ssize_t K, Py_ssize_t n):
        self.arr = np.empty((max(cap, 8), K, n))
        self.tag = np.empty(max(cap, 8), dtype=np.intp)
        self.a = self.arr
        self.t = self.tag
        self.size = 0

    cdef void grow(self):
        new = np.empty((2 * self.arr.shape[0],) + self.arr.shape[1:])
        new[: self.size] = self.arr[: self.size]
        newt = np.empty(2 * self.arr.shape[0], dtype=np.intp)
        newt[: self.size] = self.tag[: self.size]
        self.arr, self.tag = new, newt
        self.a = self.arr
        self.t = self.tag

    cdef double* push(self, Py_ssize_t tag):
        if self.size == self.a.shape[0]:
            self.grow()
        self.t[self.size] = tag
        self.size += 1
        return &self.a[self.size - 1, 0, 0]


def project_pieces(pieces_in, c_in, lower_in, upper_in):
    """Compiled central projection; see the numpy version for the contract."""
    cdef const double[:, :, ::1] pieces = np.ascontiguousarray(pieces_in, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(c_in, dtype=np.float64)
    cdef const double[::1] lower = np.ascontiguousarray(lower_in, dtype=np.float64)
    cdef const double[::1] upper = np.ascontiguousarray(upper_in, dtype=np.float64)
    cdef Py_ssize_t P = pieces.shape[0], K = pieces.shape[1], n = pieces.shape[2]
    if K > MAXK or 2 * n > MAXF or n > MAXN:
        from . import _kernels_py
        return _kernels_py.project_pieces(pieces_in, c_in, lower_in, upper_in)
    cdef Py_ssize_t ax[MAXF]
    cdef double bd[MAXF]
    cdef double inv[MAXF]
    cdef double S[MAXK][MAXF]
    cdef double top[MAXK]
    cdef double vals[MAXK]
    cdef double q[MAXK * MAXN]
    cdef double m[MAXN]
    cdef double qq[MAXK * (MAXN + 1)]
    cdef Py_ssize_t F = 0, i, j, v, a, bf, w, idx, na, pb, budget
    cdef double tol, mx, s, tt, x
    cdef bint ok, anypos, anyneg
    cdef double* dst
    for i in range(n):
        if lower[i] != upper[i]:
            ax[F] = i
            bd[F] = upper[i]
            ax[F + 1] = i
            bd[F + 1] = lower[i]
            F += 2
    for j in range(F):
        inv[j] = 1.0 / (bd[j] - c[ax[j]])

    cdef _Buf out = _Buf(4 * P, K, n)
    cdef _Buf stk = _Buf(64, K, n)
    cdef _Buf sst = _Buf(64, K, n + 1)  # split stack: coordinates plus the function value column
    cdef _Buf neg = _Buf(32, K, n)
    cdef _Buf pos = _Buf(32, K, n)

    for idx in range(P):
        stk.size = 0
        dst = stk.push(idx)
        for v in range(K):
            for i in range(n):
                dst[v * n + i] = pieces[idx, v, i]
        budget = 100000
        while stk.size > 0:
            stk.size -= 1
            for v in range(K):
                for i in range(n):
                    q[v * n + i] = stk.a[stk.size, v, i]
            mx = 0.0
            for v in range(K):
                top[v] = -1e300
                for j in range(F):
                    S[v][j] = (q[v * n + ax[j]] - c[ax[j]]) * inv[j]
                    if S[v][j] > top[v]:
                        top[v] = S[v][j]
                if fabs(top[v]) > mx:
                    mx = fabs(top[v])
            tol = 1e-12 * (mx if mx > 1.0 else 1.0)
            a = -1
            for j in range(F):
                ok = True
                for v in range(K):
                    if S[v][j] < top[v] - tol:
                        ok = False
                        break
                if ok:
                    a = j
                    break
            if a >= 0:
                dst = out.push(idx)
                for v in range(K):
                    s = (q[v * n + ax[a]] - c[ax[a]]) * inv[a]
                    for i in range(n):
                        if s >= 1.0 - 1e-12:
                            x = q[v * n + i]
                        else:
                            x = c[i] + (q[v * n + i] - c[i]) / s
                        if x < lower[i]:
                            x = lower[i]
                        if x > upper[i]:
                            x = upper[i]
                        dst[v * n + i] = x
                    dst[v * n + ax[a]] = bd[a]
                    for i in range(n):
                        dst[v * n + i] = _snapv(dst[v * n + i])
                continue
            # choose a pair of pyramid functions to cut along
            a = 0
            for j in range(1, F):
                if S[0][j] > S[0][a]:
                    a = j
            while True:
                w = 0
                while not (S[w][a] < top[w] - tol):
                    w += 1
                bf = 0
                for j in range(1, F):
                    if S[w][j] > S[w][bf]:
                        bf = j
                anypos = False
                for v in range(K):
                    vals[v] = S[v][a] - S[v][bf]
                    if fabs(vals[v]) <= tol:
                        vals[v] = 0.0
                    if vals[v] > 0:
                        anypos = True
                if anypos:
                    break
                a = bf
            budget -= 1
            if budget < 0:
                raise RuntimeError("pyramid split did not terminate")
            # split q along vals; parts without positive values go to neg
            neg.size = 0
            pos.size = 0
            sst.size = 0
            dst = sst.push(0)
            for v in range(K):
                for i in range(n):
                    dst[v * (n + 1) + i] = q[v * n + i]
                dst[v * (n + 1) + n] = vals[v]
            while sst.size > 0:
                sst.size -= 1
                anyneg = False
                anypos = False
                na = -1
                pb = -1
                for v in range(K):
                    x = sst.a[sst.size, v, n]
                    if x < 0 and na < 0:
                        na = v
                    if x > 0 and pb < 0:
                        pb = v
                if pb < 0 or na < 0:
                    dst = (neg if pb < 0 else pos).push(0)
                    for v in range(K):
                        for i in range(n):
                            dst[v * n + i] = sst.a[sst.size, v, i]
                    continue
                tt = sst.a[sst.size, na, n] / (sst.a[sst.size, na, n] - sst.a[sst.size, pb, n])
                for i in range(n):
                    m[i] = sst.a[sst.size, na, i] + tt * (sst.a[sst.size, pb, i] - sst.a[sst.size, na, i])
                # the popped slot is reused: copy it out before pushing children
                for v in range(K):
                    for i in range(n + 1):
                        qq[v * (n + 1) + i] = sst.a[sst.size, v, i]
                # child p2 (vertex na replaced) is pushed first, then p1 (vertex pb replaced)
                dst = sst.push(0)
                for v in range(K):
                    for i in range(n + 1):
                        dst[v * (n + 1) + i] = qq[v * (n + 1) + i]
                for i in range(n):
                    dst[na * (n + 1) + i] = m[i]
                dst[na * (n + 1) + n] = 0.0
                dst = sst.push(0)
                for v in range(K):
                    for i in range(n + 1):
                        dst[v * (n + 1) + i] = qq[v * (n + 1) + i]
                for i in range(n):
                    dst[pb * (n + 1) + i] = m[i]
                dst[pb * (n + 1) + n] = 0.0
            for v in range(neg.size):
                dst = stk.push(idx)
                for w in range(K):
                    for i in range(n):
                        dst[w * n + i] = neg.a[v, w, i]
            for v in range(pos.size):
                dst = stk.push(idx)
                for w in range(K):
                    for i in range(n):
                        dst[w * n + i] = pos.a[v, w, i]
    return np.array(out.arr[: out.size]), np.array(out.tag[: out.size])


# ---------------------------------------------------------------------------
# point to simplex distances (same subset rule as _kernels_py.distance_to_simplices)

DEF MAXS = 8


def distance_to_simplices(points_in, simplices_in):
    """Compiled distance from each point to the union of simplices (m, k+1, n)."""
    cdef const double[:, ::1] P = np.ascontiguousarray(np.atleast_2d(points_in), dtype=np.float64)
    S_arr = np.asarray(simplices_in, dtype=np.float64)
    if S_arr.ndim == 2:
        S_arr = S_arr[None]
    cdef const double[:, :, ::1] S = np.ascontiguousarray(S_arr)
    cdef Py_ssize_t np_ = P.shape[0], m = S.shape[0], K = S.shape[1], n = S.shape[2]
    best_arr = np.full(np_, np.inf)
    cdef double[::1] best = best_arr
    if m == 0 or np_ == 0:
        return best_arr
    if K > MAXS or n > MAXN:
        from . import _kernels_py
        return _kernels_py.distance_to_simplices(points_in, simplices_in)
    cdef int idx[MAXS]
    cdef double E[MAXS * MAXN]
    cdef double G[MAXS * MAXS]
    cdef double lam[MAXS]
    cdef double diff[MAXN]
    cdef Py_ssize_t t, p, i, j, k, s, mask
    cdef double acc, trace, det, tot, dist
    cdef bint inside
    with nogil:
        for t in range(m):
            for mask in range(1, 1 << K):
                s = 0
                for i in range(K):
                    if mask & (1 << i):
                        idx[s] = i
                        s += 1
                if s == 1:
                    for p in range(np_):
                        acc = 0.0
                        for k in range(n):
                            acc += (P[p, k] - S[t, idx[0], k]) ** 2
                        acc = sqrt(acc)
                        if acc < best[p]:
                            best[p] = acc
                    continue
                for i in range(s - 1):
                    for k in range(n):
                        E[i * n + k] = S[t, idx[i + 1], k] - S[t, idx[0], k]
                trace = 0.0
                for i in range(s - 1):
                    for j in range(s - 1):
                        acc = 0.0
                        for k in range(n):
                            acc += E[i * n + k] * E[j * n + k]
                        G[i * (s - 1) + j] = acc
                    trace += G[i * (s - 1) + i]
                if not _cholesky(G, s - 1):
                    continue
                det = 1.0
                for i in range(s - 1):
                    det *= G[i * (s - 1) + i] * G[i * (s - 1) + i]
                if not det > 1e-24 * (trace if trace > 1e-300 else 1e-300) ** (s - 1):
                    continue
                for p in range(np_):
                    for k in range(n):
                        diff[k] = P[p, k] - S[t, idx[0], k]
                    for i in range(s - 1):
                        acc = 0.0
                        for k in range(n):
                            acc += E[i * n + k] * diff[k]
                        lam[i] = acc
                    # forward then backward substitution with the Cholesky factor
                    for i in range(s - 1):
                        acc = lam[i]
                        for j in range(i):
                            acc -= G[i * (s - 1) + j] * lam[j]
                        lam[i] = acc / G[i * (s - 1) + i]
                    for i in range(s - 2, -1, -1):
                        acc = lam[i]
                        for j in range(i + 1, s - 1):
                            acc -= G[j * (s - 1) + i] * lam[j]
                        lam[i] = acc / G[i * (s - 1) + i]
                    inside = True
                    tot = 0.0
                    for i in range(s - 1):
                        if lam[i] < 0:
                            inside = False
                        tot += lam[i]
                    if not inside or tot > 1.0:
                        continue
                    dist = 0.0
                    for k in range(n):
                        acc = diff[k]
                        for i in range(s - 1):
                            acc -= lam[i] * E[i * n + k]
                        dist += acc * acc
                    dist = sqrt(dist)
                    if dist < best[p]:
                        best[p] = dist
    return best_arr
