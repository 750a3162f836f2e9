"""Pure-Python reference versions of the compiled kernels in ``_kernels.pyx``.

Graph encoding shared by both backends: node 0 is the virtual root, step j is
node j + 1; edge i of G1 runs ``src1[i] -> tgt1[i]``. ``rank`` is the row-major
``m1 x m2`` candidate rank of each edge pair (lower is better, -1 means the pair
does not qualify). The root may only map to the root.
"""

from collections import deque

BACKEND = "python"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data):
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


class _State:
    def __init__(self, src1, tgt1, src2, tgt2, nv1, nv2, rank):
        self.src1, self.tgt1, self.src2, self.tgt2 = src1, tgt1, src2, tgt2
        self.m1, self.m2 = len(src1), len(src2)
        self.map1 = [-1] * nv1
        self.map2 = [-1] * nv2
        self.used2 = [False] * self.m2
        m2 = self.m2
        self.partners = []
        for i in range(self.m1):
            row = [(rank[i * m2 + k], k) for k in range(m2) if rank[i * m2 + k] >= 0]
            row.sort()
            self.partners.append([k for _, k in row])

    def consistent(self, i, k):
        map1, map2 = self.map1, self.map2
        for x, y in ((self.src1[i], self.src2[k]), (self.tgt1[i], self.tgt2[k])):
            if (x == 0) != (y == 0):
                return False
            mx = map1[x]
            if mx == -1:
                if map2[y] != -1:
                    return False
            elif mx != y:
                return False
        return True

    def assign(self, i, k):
        """Map both endpoints; return the G1 nodes that were newly mapped."""
        fresh = []
        for x, y in ((self.src1[i], self.src2[k]), (self.tgt1[i], self.tgt2[k])):
            if self.map1[x] == -1:
                self.map1[x] = y
                self.map2[y] = x
                fresh.append(x)
        self.used2[k] = True
        return fresh

    def unassign(self, k, fresh):
        for x in fresh:
            self.map2[self.map1[x]] = -1
            self.map1[x] = -1
        self.used2[k] = False


def mcs_expand(src1, tgt1, src2, tgt2, nv1, nv2, rank, seeds):
    """Seeded BFS expansion; returns the largest matched pair list over all seeds."""
    m1 = len(src1)
    incident = [[] for _ in range(nv1)]
    for i in range(m1):
        incident[src1[i]].append(i)
        incident[tgt1[i]].append(i)
    best = []
    for si, sk in seeds:
        st = _State(src1, tgt1, src2, tgt2, nv1, nv2, rank)
        if not st.consistent(si, sk):
            continue
        used1 = [False] * m1
        used1[si] = True
        pairs = [(si, sk)]
        queue = deque(st.assign(si, sk))
        while queue:
            x = queue.popleft()
            for i in incident[x]:
                if used1[i]:
                    continue
                for k in st.partners[i]:
                    if not st.used2[k] and st.consistent(i, k):
                        used1[i] = True
                        pairs.append((i, k))
                        queue.extend(st.assign(i, k))
                        break
        if len(pairs) > len(best):
            best = pairs
    return best


def mcs_exact(src1, tgt1, src2, tgt2, nv1, nv2, rank):
    """Branch and bound over consistent pair sets; returns a maximum matching."""
    st = _State(src1, tgt1, src2, tgt2, nv1, nv2, rank)
    m1 = st.m1
    remaining = [0] * (m1 + 1)
    for i in range(m1 - 1, -1, -1):
        remaining[i] = remaining[i + 1] + (1 if st.partners[i] else 0)
    best = []
    cur = []

    def search(i):
        nonlocal best
        if len(cur) + remaining[i] <= len(best):
            return
        if i == m1:
            best = list(cur)
            return
        for k in st.partners[i]:
            if not st.used2[k] and st.consistent(i, k):
                fresh = st.assign(i, k)
                cur.append((i, k))
                search(i + 1)
                cur.pop()
                st.unassign(k, fresh)
        search(i + 1)

    search(0)
    return best
