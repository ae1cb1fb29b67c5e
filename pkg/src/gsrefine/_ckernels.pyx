# cython: language_level=3
"""Compiled walk and skip-gram kernels. Mirrors ``_pykernels`` step for step."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _splitmix(uint64_t x) nogil:
    return _mix(x + GOLDEN)


cdef inline uint64_t _next(uint64_t* state) nogil:
    state[0] = state[0] + GOLDEN
    return _mix(state[0])


cdef inline double _uniform(uint64_t* state) nogil:
    return <double>(_next(state) >> 11) * (1.0 / 9007199254740992.0)


cdef inline bint _has_edge(const int64_t[::1] indptr, const int64_t[::1] indices,
                           int64_t a, int64_t b) nogil:
    cdef int64_t lo = indptr[a]
    cdef int64_t hi = indptr[a + 1]
    cdef int64_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if indices[mid] < b:
            lo = mid + 1
        else:
            hi = mid
    return lo < indptr[a + 1] and indices[lo] == b


cdef void _walks(const int64_t[::1] indptr, const int64_t[::1] indices,
                 const int64_t[::1] starts, const int64_t[::1] walk_ids,
                 uint64_t seed, double inv_p, double inv_q,
                 int64_t[:, ::1] out, double[::1] weights) nogil:
    cdef Py_ssize_t row, step, k
    cdef int64_t length = out.shape[1]
    cdef int64_t start, t, v, x, lo, hi, chosen
    cdef uint64_t state, h
    cdef double total, r, acc, w
    for row in range(starts.shape[0]):
        start = starts[row]
        h = _splitmix(seed)
        h = _splitmix(h ^ <uint64_t>start)
        h = _splitmix(h ^ <uint64_t>walk_ids[row])
        state = h
        out[row, 0] = start
        lo = indptr[start]
        hi = indptr[start + 1]
        out[row, 1] = indices[lo + <int64_t>(_uniform(&state) * (hi - lo))]
        for step in range(2, length):
            t = out[row, step - 2]
            v = out[row, step - 1]
            lo = indptr[v]
            hi = indptr[v + 1]
            total = 0.0
            for k in range(lo, hi):
                x = indices[k]
                if x == t:
                    w = inv_p
                elif _has_edge(indptr, indices, x, t):
                    w = 1.0
                else:
                    w = inv_q
                weights[k - lo] = w
                total += w
            r = _uniform(&state) * total
            acc = 0.0
            chosen = hi - 1
            for k in range(lo, hi):
                acc += weights[k - lo]
                if r < acc:
                    chosen = k
                    break
            out[row, step] = indices[chosen]


def random_walks(indptr, indices, starts, walk_ids, seed, double p, double q, int walk_length):
    cdef const int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const int64_t[::1] st = np.ascontiguousarray(starts, dtype=np.int64)
    cdef const int64_t[::1] wi = np.ascontiguousarray(walk_ids, dtype=np.int64)
    out_arr = np.empty((st.shape[0], walk_length), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    degs = np.diff(np.asarray(ip)) if ip.shape[0] > 1 else np.zeros(1, dtype=np.int64)
    cdef double[::1] weights = np.empty(max(1, int(degs.max(initial=0))), dtype=np.float64)
    cdef uint64_t s = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    with nogil:
        _walks(ip, ix, st, wi, s, 1.0 / p, 1.0 / q, out, weights)
    return out_arr


cdef inline double _sigmoid(double x) nogil:
    cdef double z
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


cdef inline Py_ssize_t _bisect_right(const double[::1] cdf, double r) nogil:
    cdef Py_ssize_t lo = 0
    cdef Py_ssize_t hi = cdf.shape[0]
    cdef Py_ssize_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if r < cdf[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def sgns_train(walks, double[:, ::1] syn0, double[:, ::1] syn1, neg_cdf,
               int window, int negatives, int epochs, double lr0, stream_seed):
    cdef const int64_t[:, ::1] wk = np.ascontiguousarray(walks, dtype=np.int64)
    cdef const double[::1] cdf = np.ascontiguousarray(neg_cdf, dtype=np.float64)
    cdef Py_ssize_t n_walks = wk.shape[0]
    cdef Py_ssize_t length = wk.shape[1]
    cdef Py_ssize_t dim = syn0.shape[1]
    cdef Py_ssize_t last = cdf.shape[0] - 1
    cdef Py_ssize_t ep, w, i, j, k, d, lo_j, hi_j
    cdef int64_t center, context, target
    cdef uint64_t state = <uint64_t>(int(stream_seed) & 0xFFFFFFFFFFFFFFFF)
    cdef double lr, f, g, label, frac
    cdef double[::1] neu1e = np.zeros(dim, dtype=np.float64)
    cdef long long per_walk = 0
    for i in range(length):
        per_walk += min(length - 1, i + window) - max(0, i - window)
    cdef double total = <double>max(1, epochs * n_walks * per_walk)
    cdef long long done = 0
    with nogil:
        for ep in range(epochs):
            for w in range(n_walks):
                for i in range(length):
                    center = wk[w, i]
                    lo_j = i - window
                    if lo_j < 0:
                        lo_j = 0
                    hi_j = i + window
                    if hi_j > length - 1:
                        hi_j = length - 1
                    for j in range(lo_j, hi_j + 1):
                        if j == i:
                            continue
                        context = wk[w, j]
                        frac = 1.0 - done / total
                        if frac < 1e-4:
                            frac = 1e-4
                        lr = lr0 * frac
                        done += 1
                        for d in range(dim):
                            neu1e[d] = 0.0
                        for k in range(negatives + 1):
                            if k == 0:
                                target = context
                                label = 1.0
                            else:
                                target = _bisect_right(cdf, _uniform(&state))
                                if target > last:
                                    target = last
                                if target == context:
                                    continue
                                label = 0.0
                            f = 0.0
                            for d in range(dim):
                                f += syn0[center, d] * syn1[target, d]
                            g = (label - _sigmoid(f)) * lr
                            for d in range(dim):
                                neu1e[d] += g * syn1[target, d]
                                syn1[target, d] = syn1[target, d] + g * syn0[center, d]
                        for d in range(dim):
                            syn0[center, d] = syn0[center, d] + neu1e[d]
