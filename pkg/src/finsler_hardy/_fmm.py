"""Numba kernel: fast marching with semi-Lagrangian simplex updates for Randers-form costs.

The cost of the step z -> x is F_x(x - z) = |x - z|_{A(x)} + <b(x), x - z>, with the
coefficients frozen at the updated node.  Edge updates minimise the convex
1-D semi-Lagrangian functional in closed form; triangle updates (3-D) solve the
local eikonal equation |p - b|_{A^-1} = 1 for a covector p consistent with the
three vertex values, and are accepted only when the characteristic points
into the simplex.
"""
from __future__ import annotations

import heapq
import itertools

import numpy as np
from numba import njit


def build_stencil(n: int):
    """Neighbour offsets, Kuhn simplices of the unit cube neighbourhood and adjacency tables."""
    offsets = [o for o in itertools.product((-1, 0, 1), repeat=n) if any(o)]
    where = {o: i for i, o in enumerate(offsets)}
    simplices = []
    for perm in itertools.permutations(range(n)):
        for signs in itertools.product((-1, 1), repeat=n):
            v = [0] * n
            verts = []
            for ax in perm:
                v[ax] = signs[ax]
                verts.append(where[tuple(v)])
            simplices.append(verts)
    K = len(offsets)
    partners = [set() for _ in range(K)]
    tri_of = [[] for _ in range(K)]
    for s, verts in enumerate(simplices):
        for a in verts:
            tri_of[a].append(s)
            for c in verts:
                if c != a:
                    partners[a].add(c)
    pw = max(len(p) for p in partners)
    tw = max(len(t) for t in tri_of)
    P = -np.ones((K, pw), np.int64)
    T = -np.ones((K, tw), np.int64)
    for k in range(K):
        ps = sorted(partners[k])
        P[k, : len(ps)] = ps
        T[k, : len(tri_of[k])] = tri_of[k]
    return (
        np.array(offsets, np.int64),
        np.array(simplices, np.int64),
        P,
        T,
    )


@njit(cache=True)
def _cost(A, b, w, n):
    q = 0.0
    lin = 0.0
    for i in range(n):
        lin += b[i] * w[i]
        for j in range(n):
            q += w[i] * A[i, j] * w[j]
    return np.sqrt(max(q, 0.0)) + lin


@njit(cache=True)
def _edge_min(A, b, w, e, dp, dq, n, tmp):
    """min over s in [0,1] of dp + s(dq-dp) + F(w - s e)."""
    for i in range(n):
        tmp[i] = w[i] - e[i]
    best = min(dp + _cost(A, b, w, n), dq + _cost(A, b, tmp, n))
    al = 0.0
    be = 0.0
    ga = 0.0
    be_lin = 0.0
    for i in range(n):
        be_lin += b[i] * e[i]
        for j in range(n):
            al += e[i] * A[i, j] * e[j]
            be += e[i] * A[i, j] * w[j]
            ga += w[i] * A[i, j] * w[j]
    c = (dq - dp) - be_lin
    gap = al - c * c
    if gap <= 0.0 or al <= 0.0:
        return best
    disc = al * ga - be * be
    if disc < 0.0:
        disc = 0.0
    r = abs(c) * np.sqrt(disc) / (al * np.sqrt(gap))
    for sgn in (-1.0, 1.0):
        s = be / al + sgn * r
        if 0.0 < s < 1.0:
            for i in range(n):
                tmp[i] = w[i] - s * e[i]
            v = dp + s * (dq - dp) + _cost(A, b, tmp, n)
            if v < best:
                best = v
    return best


@njit(cache=True)
def _triangle(A, b, H, Pinv, PinvT, d1, d2, d3, n, a, u, p, v, mu):
    """Interior update on a full simplex; returns inf when the characteristic leaves it."""
    for i in range(n):
        a[i] = Pinv[i, 0] + Pinv[i, 1] + Pinv[i, 2]
        u[i] = Pinv[i, 0] * d1 + Pinv[i, 1] * d2 + Pinv[i, 2] * d3 + b[i]
    aHa = 0.0
    aHu = 0.0
    uHu = 0.0
    for i in range(n):
        for j in range(n):
            aHa += a[i] * H[i, j] * a[j]
            aHu += a[i] * H[i, j] * u[j]
            uHu += u[i] * H[i, j] * u[j]
    disc = aHu * aHu - aHa * (uHu - 1.0)
    if disc < 0.0 or aHa <= 0.0:
        return np.inf
    t = (aHu + np.sqrt(disc)) / aHa
    if t < max(d1, max(d2, d3)):
        return np.inf
    # p - b = t a - u  (c + b = u)
    for i in range(n):
        p[i] = t * a[i] - u[i]
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += H[i, j] * p[j]
        v[i] = acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += PinvT[i, j] * v[j]
        mu[i] = acc
        if acc < -1e-12:
            return np.inf
    return t


@njit(cache=True)
def fast_march(shape, h, A, b, H, cidx, values, state, offsets, simplices, partners,
               tri_of, Pinv, PinvT, order):
    """Run fast marching in place.

    ``state``: 0 far, 1 trial, 2 accepted (fixed nodes arrive accepted).  The
    accepted values are appended to ``order`` in acceptance sequence.  Returns
    (number of accepted nodes, number of updates that undercut the front).
    """
    n = shape.shape[0]
    N = values.shape[0]
    K = offsets.shape[0]
    strides = np.ones(n, np.int64)
    for k in range(n - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    flat_off = np.zeros(K, np.int64)
    for k in range(K):
        for i in range(n):
            flat_off[k] += offsets[k, i] * strides[i]

    w = np.empty(n)
    e = np.empty(n)
    tmp = np.empty(n)
    sa = np.empty(n)
    su = np.empty(n)
    sp = np.empty(n)
    sv = np.empty(n)
    smu = np.empty(n)
    ix = np.empty(n, np.int64)

    heap = [(0.0, np.int64(0))]
    heap.pop()
    for node in range(N):
        if state[node] == 1:
            heapq.heappush(heap, (values[node], np.int64(node)))

    front = -np.inf
    undercut = 0
    count = 0

    # fixed nodes feed their neighbours before marching starts
    seeds = np.where(state == 2)[0]
    pending = np.empty(seeds.shape[0] + N, np.int64)
    npend = 0
    for si in range(seeds.shape[0]):
        pending[npend] = seeds[si]
        npend += 1

    cursor = 0
    while True:
        if cursor < npend:
            pnode = pending[cursor]
            cursor += 1
        else:
            if len(heap) == 0:
                break
            val, pnode = heapq.heappop(heap)
            if state[pnode] == 2 or val != values[pnode]:
                continue
            state[pnode] = 2
            if val < front - 1e-12:
                undercut += 1
            front = max(front, val)
            order[count] = val
            count += 1
        # multi-index of p
        rem = pnode
        for i in range(n):
            ix[i] = rem // strides[i]
            rem -= ix[i] * strides[i]
        for k in range(K):
            # x = p - off[k]; its neighbour at offset k is p
            ok = True
            for i in range(n):
                j = ix[i] - offsets[k, i]
                if j < 0 or j >= shape[i]:
                    ok = False
                    break
            if not ok:
                continue
            xnode = pnode - flat_off[k]
            if state[xnode] == 2:
                continue
            c = cidx[xnode]
            Ac = A[c]
            bc = b[c]
            for i in range(n):
                w[i] = offsets[k, i] * h[i] * -1.0
            best = values[pnode] + _cost(Ac, bc, w, n)
            # edges p-q with q accepted
            for t in range(partners.shape[1]):
                q = partners[k, t]
                if q < 0:
                    break
                inb = True
                for i in range(n):
                    j = ix[i] - offsets[k, i] + offsets[q, i]
                    if j < 0 or j >= shape[i]:
                        inb = False
                        break
                if not inb:
                    continue
                qnode = xnode + flat_off[q]
                if state[qnode] != 2:
                    continue
                for i in range(n):
                    e[i] = (offsets[q, i] - offsets[k, i]) * h[i]
                cand = _edge_min(Ac, bc, w, e, values[pnode], values[qnode], n, tmp)
                if cand < best:
                    best = cand
            if n == 3:
                Hc = H[c]
                for t in range(tri_of.shape[1]):
                    s = tri_of[k, t]
                    if s < 0:
                        break
                    allacc = True
                    for vv in range(3):
                        o = simplices[s, vv]
                        for i in range(n):
                            j = ix[i] - offsets[k, i] + offsets[o, i]
                            if j < 0 or j >= shape[i]:
                                allacc = False
                                break
                        if not allacc:
                            break
                        if state[xnode + flat_off[o]] != 2:
                            allacc = False
                            break
                    if not allacc:
                        continue
                    d1 = values[xnode + flat_off[simplices[s, 0]]]
                    d2 = values[xnode + flat_off[simplices[s, 1]]]
                    d3 = values[xnode + flat_off[simplices[s, 2]]]
                    cand = _triangle(Ac, bc, Hc, Pinv[s], PinvT[s], d1, d2, d3, n,
                                     sa, su, sp, sv, smu)
                    if cand < best:
                        best = cand
            if best < values[xnode]:
                values[xnode] = best
                state[xnode] = 1
                heapq.heappush(heap, (best, np.int64(xnode)))
    return count, undercut
