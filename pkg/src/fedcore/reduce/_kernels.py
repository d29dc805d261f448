"""numba kernels for the t-SNE gradient: attraction, exact and Barnes-Hut repulsion."""

import numpy as np
from numba import njit

MAX_DEPTH = 48
_STACK = 4 * MAX_DEPTH + 16


@njit(cache=True)
def attractive_forces(Y, indptr, indices, data):
    n, k = Y.shape
    out = np.zeros((n, k))
    if k == 2:
        for i in range(n):
            xi = Y[i, 0]
            yi = Y[i, 1]
            fx = 0.0
            fy = 0.0
            for jj in range(indptr[i], indptr[i + 1]):
                j = indices[jj]
                dx = xi - Y[j, 0]
                dy = yi - Y[j, 1]
                f = data[jj] / (1.0 + dx * dx + dy * dy)
                fx += f * dx
                fy += f * dy
            out[i, 0] = fx
            out[i, 1] = fy
        return out
    for i in range(n):
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            d2 = 0.0
            for c in range(k):
                diff = Y[i, c] - Y[j, c]
                d2 += diff * diff
            f = data[jj] / (1.0 + d2)
            for c in range(k):
                out[i, c] += f * (Y[i, c] - Y[j, c])
    return out


@njit(cache=True)
def exact_repulsion(Y):
    """Unnormalized repulsion sum_j w_ij^2 (y_i - y_j) and Z = sum_{i != j} w_ij."""
    n, k = Y.shape
    out = np.zeros((n, k))
    z = 0.0
    for i in range(n):
        zi = 0.0
        for j in range(n):
            if j == i:
                continue
            d2 = 0.0
            for c in range(k):
                diff = Y[i, c] - Y[j, c]
                d2 += diff * diff
            w = 1.0 / (1.0 + d2)
            zi += w
            ww = w * w
            for c in range(k):
                out[i, c] += ww * (Y[i, c] - Y[j, c])
        z += zi
    return out, z


@njit(cache=True)
def kl_divergence(Y, indptr, indices, data):
    n, k = Y.shape
    z = 0.0
    for i in range(n):
        for j in range(n):
            if j == i:
                continue
            d2 = 0.0
            for c in range(k):
                diff = Y[i, c] - Y[j, c]
                d2 += diff * diff
            z += 1.0 / (1.0 + d2)
    kl = 0.0
    for i in range(n):
        for jj in range(indptr[i], indptr[i + 1]):
            p = data[jj]
            if p <= 0.0:
                continue
            j = indices[jj]
            d2 = 0.0
            for c in range(k):
                diff = Y[i, c] - Y[j, c]
                d2 += diff * diff
            q = 1.0 / (1.0 + d2) / z
            kl += p * np.log(p / q)
    return kl


@njit(cache=True)
def _quadrant(x, y, cx, cy):
    q = 0
    if x >= cx:
        q += 1
    if y >= cy:
        q += 2
    return q


@njit(cache=True)
def build_quadtree(Y):
    """Array-backed quadtree over 2-D points.

    Leaves hold a linked list of points (``head`` / ``nxt``); a leaf only holds
    more than one point when they coincide or ``MAX_DEPTH`` is reached.
    """
    n = Y.shape[0]
    cap = 4 * n + 16
    cx = np.zeros(cap)
    cy = np.zeros(cap)
    hw = np.zeros(cap)
    mass = np.zeros(cap, dtype=np.int64)
    sx = np.zeros(cap)
    sy = np.zeros(cap)
    child = -np.ones((cap, 4), dtype=np.int64)
    head = -np.ones(cap, dtype=np.int64)
    leaf = np.ones(cap, dtype=np.bool_)
    depth = np.zeros(cap, dtype=np.int64)
    nxt = -np.ones(n, dtype=np.int64)

    minx = Y[:, 0].min()
    maxx = Y[:, 0].max()
    miny = Y[:, 1].min()
    maxy = Y[:, 1].max()
    cx[0] = 0.5 * (minx + maxx)
    cy[0] = 0.5 * (miny + maxy)
    half = 0.5 * max(maxx - minx, maxy - miny)
    hw[0] = half * (1.0 + 1e-9) + 1e-12
    count = 1

    for i in range(n):
        x = Y[i, 0]
        y = Y[i, 1]
        node = 0
        while True:
            mass[node] += 1
            sx[node] += x
            sy[node] += y
            if not leaf[node]:
                node = child[node, _quadrant(x, y, cx[node], cy[node])]
                continue
            h = head[node]
            if h == -1:
                head[node] = i
                break
            if (Y[h, 0] == x and Y[h, 1] == y) or depth[node] >= MAX_DEPTH:
                nxt[i] = head[node]
                head[node] = i
                break
            if count + 4 > cap:
                new_cap = 2 * cap
                cx = np.concatenate((cx, np.zeros(new_cap - cap)))
                cy = np.concatenate((cy, np.zeros(new_cap - cap)))
                hw = np.concatenate((hw, np.zeros(new_cap - cap)))
                mass = np.concatenate((mass, np.zeros(new_cap - cap, dtype=np.int64)))
                sx = np.concatenate((sx, np.zeros(new_cap - cap)))
                sy = np.concatenate((sy, np.zeros(new_cap - cap)))
                grown = -np.ones((new_cap, 4), dtype=np.int64)
                grown[:cap] = child
                child = grown
                head = np.concatenate((head, -np.ones(new_cap - cap, dtype=np.int64)))
                leaf = np.concatenate((leaf, np.ones(new_cap - cap, dtype=np.bool_)))
                depth = np.concatenate((depth, np.zeros(new_cap - cap, dtype=np.int64)))
                cap = new_cap
            quarter = 0.5 * hw[node]
            for q in range(4):
                c = count
                count += 1
                cx[c] = cx[node] + (quarter if (q & 1) else -quarter)
                cy[c] = cy[node] + (quarter if (q & 2) else -quarter)
                hw[c] = quarter
                depth[c] = depth[node] + 1
                child[node, q] = c
            leaf[node] = False
            # the resident points share one location; move the whole list down
            c = child[node, _quadrant(Y[h, 0], Y[h, 1], cx[node], cy[node])]
            head[c] = h
            j = h
            while j != -1:
                mass[c] += 1
                sx[c] += Y[j, 0]
                sy[c] += Y[j, 1]
                j = nxt[j]
            head[node] = -1
            node = child[node, _quadrant(x, y, cx[node], cy[node])]
    return cx[:count], cy[:count], hw[:count], mass[:count], sx[:count], sy[:count], child[:count], head[:count], leaf[:count], nxt


@njit(cache=True)
def bh_repulsion(Y, theta):
    """Barnes-Hut estimate of the unnormalized repulsion and of Z.

    A non-leaf cell not containing the query point is summarized by its
    center of mass when ``cell_width / distance < theta``; leaves are always
    summed point by point, so ``theta == 0`` is exact.
    """
    cx, cy, hw, mass, sx, sy, child, head, leaf, nxt = build_quadtree(Y)
    n = Y.shape[0]
    out = np.zeros((n, 2))
    stack = np.empty(_STACK, dtype=np.int64)
    theta2 = theta * theta
    z = 0.0
    for i in range(n):
        xi = Y[i, 0]
        yi = Y[i, 1]
        zi = 0.0
        fx = 0.0
        fy = 0.0
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            m = mass[node]
            if m == 0:
                continue
            if leaf[node]:
                j = head[node]
                while j != -1:
                    if j != i:
                        dx = xi - Y[j, 0]
                        dy = yi - Y[j, 1]
                        w = 1.0 / (1.0 + dx * dx + dy * dy)
                        zi += w
                        fx += w * w * dx
                        fy += w * w * dy
                    j = nxt[j]
                continue
            dx = xi - sx[node] / m
            dy = yi - sy[node] / m
            d2 = dx * dx + dy * dy
            width = 2.0 * hw[node]
            if width * width < theta2 * d2 and not (
                abs(xi - cx[node]) <= hw[node] and abs(yi - cy[node]) <= hw[node]
            ):
                w = 1.0 / (1.0 + d2)
                zi += m * w
                fx += m * w * w * dx
                fy += m * w * w * dy
            else:
                for q in range(4):
                    stack[sp] = child[node, q]
                    sp += 1
        out[i, 0] = fx
        out[i, 1] = fy
        z += zi
    return out, z
