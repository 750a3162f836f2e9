# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled MCS and hashing kernels. Semantics match ``_pykernels`` exactly."""

from libc.stdlib cimport malloc, free
from libc.string cimport memset

BACKEND = "cython"

ctypedef unsigned long long u64


def fnv1a64(const unsigned char[:] data):
    cdef u64 h = 0xCBF29CE484222325ULL
    cdef Py_ssize_t i
    for i in range(data.shape[0]):
        h ^= data[i]
        h *= 0x100000001B3ULL
    return h


cdef struct Ctx:
    int m1
    int m2
    int nv1
    int nv2
    int *src1
    int *tgt1
    int *src2
    int *tgt2
    int *map1
    int *map2
    char *used2
    int *partners      # m1 rows of m2 entries, -1 terminated
    int *fresh         # scratch, 2 entries per depth level
    int *cur_i
    int *cur_k
    int cur_n
    int *best_i
    int *best_k
    int best_n
    int *remaining


cdef int *_copy_ints(object seq, Py_ssize_t n) except NULL:
    cdef int *out = <int *> malloc((n if n > 0 else 1) * sizeof(int))
    cdef Py_ssize_t i
    if out == NULL:
        raise MemoryError()
    for i in range(n):
        out[i] = seq[i]
    return out


cdef int _setup(Ctx *c, src1, tgt1, src2, tgt2, int nv1, int nv2, rank) except -1:
    cdef int i, k, n, m1, m2
    m1 = len(src1)
    m2 = len(src2)
    c.m1 = m1
    c.m2 = m2
    c.nv1 = nv1
    c.nv2 = nv2
    c.src1 = _copy_ints(src1, m1)
    c.tgt1 = _copy_ints(tgt1, m1)
    c.src2 = _copy_ints(src2, m2)
    c.tgt2 = _copy_ints(tgt2, m2)
    c.map1 = <int *> malloc((nv1 + 1) * sizeof(int))
    c.map2 = <int *> malloc((nv2 + 1) * sizeof(int))
    c.used2 = <char *> malloc(m2 + 1)
    c.partners = <int *> malloc((m1 * (m2 + 1) + 1) * sizeof(int))
    c.fresh = <int *> malloc((2 * m1 + 2) * sizeof(int))
    c.cur_i = <int *> malloc((m1 + 1) * sizeof(int))
    c.cur_k = <int *> malloc((m1 + 1) * sizeof(int))
    c.best_i = <int *> malloc((m1 + 1) * sizeof(int))
    c.best_k = <int *> malloc((m1 + 1) * sizeof(int))
    c.remaining = <int *> malloc((m1 + 1) * sizeof(int))
    if (c.map1 == NULL or c.map2 == NULL or c.used2 == NULL or c.partners == NULL
            or c.fresh == NULL or c.cur_i == NULL or c.cur_k == NULL or c.best_i == NULL
            or c.best_k == NULL or c.remaining == NULL):
        raise MemoryError()
    for i in range(m1):
        row = sorted((rank[i * m2 + k], k) for k in range(m2) if rank[i * m2 + k] >= 0)
        n = 0
        for _r, k in row:
            c.partners[i * (m2 + 1) + n] = k
            n += 1
        c.partners[i * (m2 + 1) + n] = -1
    c.remaining[m1] = 0
    for i in range(m1 - 1, -1, -1):
        c.remaining[i] = c.remaining[i + 1] + (1 if c.partners[i * (m2 + 1)] >= 0 else 0)
    _reset(c)
    return 0


cdef void _reset(Ctx *c):
    cdef int x
    for x in range(c.nv1):
        c.map1[x] = -1
    for x in range(c.nv2):
        c.map2[x] = -1
    for x in range(c.m2):
        c.used2[x] = 0


cdef void _teardown(Ctx *c):
    free(c.src1); free(c.tgt1); free(c.src2); free(c.tgt2)
    free(c.map1); free(c.map2); free(c.used2); free(c.partners); free(c.fresh)
    free(c.cur_i); free(c.cur_k); free(c.best_i); free(c.best_k); free(c.remaining)


cdef inline bint _ok(Ctx *c, int x, int y):
    if (x == 0) != (y == 0):
        return False
    if c.map1[x] == -1:
        return c.map2[y] == -1
    return c.map1[x] == y


cdef inline bint _consistent(Ctx *c, int i, int k):
    return _ok(c, c.src1[i], c.src2[k]) and _ok(c, c.tgt1[i], c.tgt2[k])


cdef inline int _assign(Ctx *c, int i, int k, int *fresh):
    """Map endpoints of pair (i, k); write newly mapped G1 nodes to ``fresh``."""
    cdef int n = 0
    cdef int x = c.src1[i]
    cdef int y = c.src2[k]
    if c.map1[x] == -1:
        c.map1[x] = y
        c.map2[y] = x
        fresh[n] = x
        n += 1
    x = c.tgt1[i]
    y = c.tgt2[k]
    if c.map1[x] == -1:
        c.map1[x] = y
        c.map2[y] = x
        fresh[n] = x
        n += 1
    c.used2[k] = 1
    return n


cdef inline void _unassign(Ctx *c, int k, int *fresh, int n):
    cdef int t, x
    for t in range(n):
        x = fresh[t]
        c.map2[c.map1[x]] = -1
        c.map1[x] = -1
    c.used2[k] = 0


def mcs_expand(src1, tgt1, src2, tgt2, int nv1, int nv2, rank, seeds):
    cdef Ctx c
    cdef int m1, m2, s, si, sk, head, tail, x, t, i, j, k, p, n_pairs, best_n = 0
    cdef int *inc_start
    cdef int *inc
    cdef int *queue
    cdef char *used1
    cdef int fresh[2]
    cdef int nf
    cdef int *pi
    cdef int *pk
    memset(&c, 0, sizeof(Ctx))
    m1 = len(src1)
    inc_start = <int *> malloc((nv1 + 1) * sizeof(int))
    inc = <int *> malloc((2 * m1 + 1) * sizeof(int))
    queue = <int *> malloc((nv1 + 1) * sizeof(int))
    used1 = <char *> malloc(m1 + 1)
    pi = <int *> malloc((m1 + 1) * sizeof(int))
    pk = <int *> malloc((m1 + 1) * sizeof(int))
    try:
        if (inc_start == NULL or inc == NULL or queue == NULL or used1 == NULL
                or pi == NULL or pk == NULL):
            raise MemoryError()
        _setup(&c, src1, tgt1, src2, tgt2, nv1, nv2, rank)
        m2 = c.m2
        # incidence lists (CSR), edges in index order per node
        for x in range(nv1 + 1):
            inc_start[x] = 0
        for i in range(m1):
            inc_start[c.src1[i] + 1] += 1
            inc_start[c.tgt1[i] + 1] += 1
        for x in range(nv1):
            inc_start[x + 1] += inc_start[x]
        for x in range(nv1):
            queue[x] = inc_start[x]
        for i in range(m1):
            inc[queue[c.src1[i]]] = i
            queue[c.src1[i]] += 1
            inc[queue[c.tgt1[i]]] = i
            queue[c.tgt1[i]] += 1
        for s in range(len(seeds)):
            si, sk = seeds[s]
            _reset(&c)
            if not _consistent(&c, si, sk):
                continue
            for i in range(m1):
                used1[i] = 0
            used1[si] = 1
            pi[0] = si
            pk[0] = sk
            n_pairs = 1
            head = 0
            tail = 0
            nf = _assign(&c, si, sk, fresh)
            for t in range(nf):
                queue[tail] = fresh[t]
                tail += 1
            while head < tail:
                x = queue[head]
                head += 1
                for t in range(inc_start[x], inc_start[x + 1]):
                    i = inc[t]
                    if used1[i]:
                        continue
                    p = 0
                    while True:
                        k = c.partners[i * (m2 + 1) + p]
                        if k < 0:
                            break
                        p += 1
                        if c.used2[k] or not _consistent(&c, i, k):
                            continue
                        used1[i] = 1
                        pi[n_pairs] = i
                        pk[n_pairs] = k
                        n_pairs += 1
                        nf = _assign(&c, i, k, fresh)
                        for j in range(nf):
                            queue[tail] = fresh[j]
                            tail += 1
                        break
            if n_pairs > best_n:
                best_n = n_pairs
                for t in range(n_pairs):
                    c.best_i[t] = pi[t]
                    c.best_k[t] = pk[t]
        return [(c.best_i[t], c.best_k[t]) for t in range(best_n)]
    finally:
        free(inc_start); free(inc); free(queue); free(used1); free(pi); free(pk)
        _teardown(&c)


cdef void _search(Ctx *c, int i):
    cdef int p, k, nf, t
    cdef int *fresh
    if c.cur_n + c.remaining[i] <= c.best_n:
        return
    if i == c.m1:
        c.best_n = c.cur_n
        for t in range(c.cur_n):
            c.best_i[t] = c.cur_i[t]
            c.best_k[t] = c.cur_k[t]
        return
    fresh = c.fresh + 2 * i
    p = 0
    while True:
        k = c.partners[i * (c.m2 + 1) + p]
        if k < 0:
            break
        p += 1
        if c.used2[k] or not _consistent(c, i, k):
            continue
        nf = _assign(c, i, k, fresh)
        c.cur_i[c.cur_n] = i
        c.cur_k[c.cur_n] = k
        c.cur_n += 1
        _search(c, i + 1)
        c.cur_n -= 1
        _unassign(c, k, fresh, nf)
    _search(c, i + 1)


def mcs_exact(src1, tgt1, src2, tgt2, int nv1, int nv2, rank):
    cdef Ctx c
    cdef int t
    memset(&c, 0, sizeof(Ctx))
    try:
        _setup(&c, src1, tgt1, src2, tgt2, nv1, nv2, rank)
        c.cur_n = 0
        c.best_n = 0
        _search(&c, 0)
        return [(c.best_i[t], c.best_k[t]) for t in range(c.best_n)]
    finally:
        _teardown(&c)
