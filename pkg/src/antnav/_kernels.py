"""Numba kernels for voxel ray traversal, traversability and point splatting.

All grid-space kernels take coordinates in voxel units relative to the grid
origin, so voxel ``(i, j, k)`` spans ``[i, i+1) x [j, j+1) x [k, k+1)``.
"""

import math

import numpy as np
from numba import njit

NO_HIT = -1.0


@njit(cache=True)
def dda(occ, ox, oy, oz, dx, dy, dz, tmax):
    """Amanatides-Woo traversal of a unit-direction ray.

    Returns ``(t, i, j, k)`` for the first occupied voxel with ``t <= tmax``
    or ``(-1, -1, -1, -1)`` when nothing is hit or the ray leaves the grid.
    A ray starting inside an occupied voxel hits at ``t = 0``.
    """
    nx, ny, nz = occ.shape
    ix = int(math.floor(ox))
    iy = int(math.floor(oy))
    iz = int(math.floor(oz))
    if ix < 0 or iy < 0 or iz < 0 or ix >= nx or iy >= ny or iz >= nz:
        return NO_HIT, -1, -1, -1
    if occ[ix, iy, iz]:
        return 0.0, ix, iy, iz

    inf = 1e30
    if dx > 0.0:
        sx = 1
        tx = (ix + 1 - ox) / dx
        ddx = 1.0 / dx
    elif dx < 0.0:
        sx = -1
        tx = (ix - ox) / dx
        ddx = -1.0 / dx
    else:
        sx = 0
        tx = inf
        ddx = inf
    if dy > 0.0:
        sy = 1
        ty = (iy + 1 - oy) / dy
        ddy = 1.0 / dy
    elif dy < 0.0:
        sy = -1
        ty = (iy - oy) / dy
        ddy = -1.0 / dy
    else:
        sy = 0
        ty = inf
        ddy = inf
    if dz > 0.0:
        sz = 1
        tz = (iz + 1 - oz) / dz
        ddz = 1.0 / dz
    elif dz < 0.0:
        sz = -1
        tz = (iz - oz) / dz
        ddz = -1.0 / dz
    else:
        sz = 0
        tz = inf
        ddz = inf

    while True:
        if tx <= ty and tx <= tz:
            t = tx
            if t > tmax:
                return NO_HIT, -1, -1, -1
            ix += sx
            if ix < 0 or ix >= nx:
                return NO_HIT, -1, -1, -1
            tx += ddx
        elif ty <= tz:
            t = ty
            if t > tmax:
                return NO_HIT, -1, -1, -1
            iy += sy
            if iy < 0 or iy >= ny:
                return NO_HIT, -1, -1, -1
            ty += ddy
        else:
            t = tz
            if t > tmax:
                return NO_HIT, -1, -1, -1
            iz += sz
            if iz < 0 or iz >= nz:
                return NO_HIT, -1, -1, -1
            tz += ddz
        if occ[ix, iy, iz]:
            return t, ix, iy, iz


@njit(cache=True)
def cast_image(occ, colors, cam, fwd, right, up, focal, width, height,
               tmax, stride, sentinel):
    """Cast one ray per pixel (every ``stride``-th row and column).

    Returns ``depth`` (grid units, ``sentinel`` for misses) and ``rgb`` arrays
    of shape ``(height // stride, width // stride)``.
    """
    h = (height + stride - 1) // stride
    w = (width + stride - 1) // stride
    depth = np.full((h, w), sentinel)
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    cx = width / 2.0
    cy = height / 2.0
    for r in range(h):
        yn = (r * stride + 0.5 - cy) / focal
        for c in range(w):
            xn = (c * stride + 0.5 - cx) / focal
            dx = fwd[0] + xn * right[0] - yn * up[0]
            dy = fwd[1] + xn * right[1] - yn * up[1]
            dz = fwd[2] + xn * right[2] - yn * up[2]
            n = math.sqrt(dx * dx + dy * dy + dz * dz)
            dx /= n
            dy /= n
            dz /= n
            t, i, j, k = dda(occ, cam[0], cam[1], cam[2], dx, dy, dz, tmax)
            if t >= 0.0:
                depth[r, c] = t
                rgb[r, c, 0] = colors[i, j, k, 0]
                rgb[r, c, 1] = colors[i, j, k, 1]
                rgb[r, c, 2] = colors[i, j, k, 2]
    return depth, rgb


@njit(cache=True)
def segments_clear(occ, starts, ends):
    """Line-of-sight test for each segment (grid units)."""
    n = starts.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for s in range(n):
        dx = ends[s, 0] - starts[s, 0]
        dy = ends[s, 1] - starts[s, 1]
        dz = ends[s, 2] - starts[s, 2]
        length = math.sqrt(dx * dx + dy * dy + dz * dz)
        if length == 0.0:
            i = int(math.floor(starts[s, 0]))
            j = int(math.floor(starts[s, 1]))
            k = int(math.floor(starts[s, 2]))
            nx, ny, nz = occ.shape
            inside = 0 <= i < nx and 0 <= j < ny and 0 <= k < nz
            out[s] = not (inside and occ[i, j, k])
            continue
        t, _, _, _ = dda(occ, starts[s, 0], starts[s, 1], starts[s, 2],
                         dx / length, dy / length, dz / length, length)
        out[s] = t < 0.0
    return out


@njit(cache=True)
def support_top(occ, gx, gy, lo, hi):
    """Top face (grid units) of the highest occupied voxel in the column under
    ``(gx, gy)`` whose top lies in ``[lo, hi]`` and whose upper neighbour is
    free; ``-1`` when there is none."""
    nx, ny, nz = occ.shape
    i = int(math.floor(gx))
    j = int(math.floor(gy))
    if i < 0 or j < 0 or i >= nx or j >= ny:
        return -1.0
    kmax = int(math.floor(hi)) - 1
    kmin = int(math.ceil(lo)) - 1
    if kmax > nz - 1:
        kmax = nz - 1
    if kmin < 0:
        kmin = 0
    for k in range(kmax, kmin - 1, -1):
        if occ[i, j, k] and (k + 1 >= nz or not occ[i, j, k + 1]):
            return float(k + 1)
    return -1.0


@njit(cache=True)
def traversable(occ, gx, gy, gz, radius, step, body, below):
    """Vertical agent cylinder check, all lengths in grid units.

    The supporting surface is the highest occupied voxel top in
    ``[gz - below, gz + step]``; the body occupies ``(base + step, base + body)``
    and may not touch any occupied voxel within ``radius`` in the plane.
    """
    nx, ny, nz = occ.shape
    i0 = int(math.floor(gx))
    j0 = int(math.floor(gy))
    if i0 < 0 or j0 < 0 or i0 >= nx or j0 >= ny:
        return False
    kmax = int(math.floor(gz + step)) - 1
    kmin = int(math.ceil(gz - below)) - 1
    if kmax > nz - 1:
        kmax = nz - 1
    if kmin < 0:
        kmin = 0
    base = -1.0
    for k in range(kmax, kmin - 1, -1):
        if occ[i0, j0, k]:
            base = float(k + 1)
            break
    if base < 0.0:
        return False
    zlo = base + step
    zhi = base + body
    klo = int(math.floor(zlo))
    khi = int(math.ceil(zhi)) - 1
    if klo < 0:
        klo = 0
    if khi > nz - 1:
        khi = nz - 1
    r2 = radius * radius
    for i in range(int(math.floor(gx - radius)), int(math.floor(gx + radius)) + 1):
        if i < 0 or i >= nx:
            return False
        qx = min(max(gx, i), i + 1.0) - gx
        for j in range(int(math.floor(gy - radius)), int(math.floor(gy + radius)) + 1):
            if j < 0 or j >= ny:
                return False
            qy = min(max(gy, j), j + 1.0) - gy
            if qx * qx + qy * qy >= r2:
                continue
            for k in range(klo, khi + 1):
                if k + 1.0 <= zlo or k >= zhi:
                    continue
                if occ[i, j, k]:
                    return False
    return True


@njit(cache=True)
def project_points(points, cam, fwd, right, up, focal, width, height, near):
    """Pinhole projection; returns (u, v, range, valid) arrays."""
    n = points.shape[0]
    us = np.empty(n)
    vs = np.empty(n)
    ds = np.empty(n)
    ok = np.zeros(n, dtype=np.bool_)
    cx = width / 2.0
    cy = height / 2.0
    for p in range(n):
        px = points[p, 0] - cam[0]
        py = points[p, 1] - cam[1]
        pz = points[p, 2] - cam[2]
        zc = px * fwd[0] + py * fwd[1] + pz * fwd[2]
        xc = px * right[0] + py * right[1] + pz * right[2]
        yc = -(px * up[0] + py * up[1] + pz * up[2])
        d = math.sqrt(px * px + py * py + pz * pz)
        ds[p] = d
        if zc <= 0.0 or d <= near:
            continue
        u = cx + focal * xc / zc
        v = cy + focal * yc / zc
        us[p] = u
        vs[p] = v
        if u >= 0.0 and u < width and v >= 0.0 and v < height:
            ok[p] = True
    return us, vs, ds, ok


@njit(cache=True)
def splat(points, colors, cam, fwd, right, up, focal, width, height, near,
          kernel, eps, dist_offset, sentinel):
    """Two-pass splatting: per-tap minimum depth, then epsilon-gated,
    distance-weighted accumulation."""
    us, vs, ds, ok = project_points(points, cam, fwd, right, up, focal,
                                    width, height, near)
    n = points.shape[0]
    zmin = np.full((height, width), np.inf)
    for p in range(n):
        if not ok[p]:
            continue
        pu = int(math.floor(us[p]))
        pv = int(math.floor(vs[p]))
        d = ds[p]
        for a in range(-1, 2):
            r = pv + a
            if r < 0 or r >= height:
                continue
            for b in range(-1, 2):
                c = pu + b
                if c < 0 or c >= width:
                    continue
                if d < zmin[r, c]:
                    zmin[r, c] = d
    wsum = np.zeros((height, width))
    dsum = np.zeros((height, width))
    csum = np.zeros((height, width, 3))
    for p in range(n):
        if not ok[p]:
            continue
        pu = int(math.floor(us[p]))
        pv = int(math.floor(vs[p]))
        d = ds[p]
        for a in range(-1, 2):
            r = pv + a
            if r < 0 or r >= height:
                continue
            for b in range(-1, 2):
                c = pu + b
                if c < 0 or c >= width:
                    continue
                if d - zmin[r, c] > eps:
                    continue
                w = kernel[a + 1, b + 1] / (d + dist_offset)
                wsum[r, c] += w
                dsum[r, c] += w * d
                csum[r, c, 0] += w * colors[p, 0]
                csum[r, c, 1] += w * colors[p, 1]
                csum[r, c, 2] += w * colors[p, 2]
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    depth = np.full((height, width), sentinel)
    for r in range(height):
        for c in range(width):
            w = wsum[r, c]
            if w > 0.0:
                depth[r, c] = dsum[r, c] / w
                for ch in range(3):
                    v = math.floor(csum[r, c, ch] / w + 0.5)
                    if v > 255.0:
                        v = 255.0
                    rgb[r, c, ch] = np.uint8(v)
    return rgb, depth, zmin


@njit(cache=True)
def splat_trace(points, cam, fwd, right, up, focal, width, height, near,
                eps):
    """Every (pixel, point, depth) triple that contributes colour in
    ``splat`` under the same gating rule."""
    us, vs, ds, ok = project_points(points, cam, fwd, right, up, focal,
                                    width, height, near)
    n = points.shape[0]
    zmin = np.full((height, width), np.inf)
    for p in range(n):
        if not ok[p]:
            continue
        pu = int(math.floor(us[p]))
        pv = int(math.floor(vs[p]))
        for a in range(-1, 2):
            r = pv + a
            if r < 0 or r >= height:
                continue
            for b in range(-1, 2):
                c = pu + b
                if c < 0 or c >= width:
                    continue
                if ds[p] < zmin[r, c]:
                    zmin[r, c] = ds[p]
    pix = np.empty(9 * n, dtype=np.int64)
    idx = np.empty(9 * n, dtype=np.int64)
    dep = np.empty(9 * n)
    m = 0
    for p in range(n):
        if not ok[p]:
            continue
        pu = int(math.floor(us[p]))
        pv = int(math.floor(vs[p]))
        for a in range(-1, 2):
            r = pv + a
            if r < 0 or r >= height:
                continue
            for b in range(-1, 2):
                c = pu + b
                if c < 0 or c >= width:
                    continue
                if ds[p] - zmin[r, c] > eps:
                    continue
                pix[m] = r * width + c
                idx[m] = p
                dep[m] = ds[p]
                m += 1
    return pix[:m], idx[:m], dep[:m], zmin
