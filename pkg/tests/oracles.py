"""Independent brute-force oracles used by the test suite.

These stay deliberately naive: per-pixel Python loops over double
precision scalars, no shared code with the library paths they check.
"""

from __future__ import annotations

import math


def perspective_oracle(pano_pixels, fov_deg, heading_deg, elevation_deg, out_w, out_h):
    """Reference perspective extraction via per-pixel spherical mapping.

    Returns a nested list [out_h][out_w][3] of ints.
    """
    src_h = len(pano_pixels)
    src_w = len(pano_pixels[0])

    f = (out_w / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    cx = out_w / 2.0
    cy = out_h / 2.0

    th = math.radians(heading_deg % 360.0)
    ph = math.radians(elevation_deg)
    # tilt about camera x, then pan about the world vertical
    ry = [
        [math.cos(th), 0.0, math.sin(th)],
        [0.0, 1.0, 0.0],
        [-math.sin(th), 0.0, math.cos(th)],
    ]
    rx = [
        [1.0, 0.0, 0.0],
        [0.0, math.cos(ph), math.sin(ph)],
        [0.0, -math.sin(ph), math.cos(ph)],
    ]
    r = [[sum(ry[i][k] * rx[k][j] for k in range(3)) for j in range(3)] for i in range(3)]

    out = [[[0, 0, 0] for _ in range(out_w)] for _ in range(out_h)]
    for i in range(out_h):
        for j in range(out_w):
            # camera ray through the pixel center, K^-1 applied by hand
            xc = (j + 0.5 - cx) / f
            yc = (i + 0.5 - cy) / f
            zc = 1.0
            wx = r[0][0] * xc + r[0][1] * yc + r[0][2] * zc
            wy = r[1][0] * xc + r[1][1] * yc + r[1][2] * zc
            wz = r[2][0] * xc + r[2][1] * yc + r[2][2] * zc
            norm = math.sqrt(wx * wx + wy * wy + wz * wz)
            wx, wy, wz = wx / norm, wy / norm, wz / norm
            lon = math.atan2(wx, wz)
            lat = math.asin(max(-1.0, min(1.0, wy)))
            u = (lon / (2.0 * math.pi) + 0.5) * src_w
            v = (0.5 - lat / math.pi) * src_h
            out[i][j] = _bilinear(pano_pixels, src_w, src_h, u, v)
    return out


def _bilinear(px, src_w, src_h, u, v):
    fu = u - 0.5
    fv = v - 0.5
    x0 = math.floor(fu)
    y0 = math.floor(fv)
    a = fu - x0
    b = fv - y0
    x0i = int(x0) % src_w
    x1i = (x0i + 1) % src_w
    y0i = min(max(int(y0), 0), src_h - 1)
    y1i = min(y0i + 1, src_h - 1)
    vals = []
    for c in range(3):
        val = (
            (1.0 - a) * (1.0 - b) * px[y0i][x0i][c]
            + a * (1.0 - b) * px[y0i][x1i][c]
            + (1.0 - a) * b * px[y1i][x0i][c]
            + a * b * px[y1i][x1i][c]
        )
        vals.append(int(math.floor(val + 0.5)))
    return vals


def nearest_grid_cell(bearing_deg, elevation_deg):
    """Exhaustive nearest-cell search over the 36-view grid.

    Heading ties prefer the larger heading angle; elevation ties round
    away from zero. Returns elevation_index * 12 + heading_index.
    """
    bearing = bearing_deg % 360.0
    best_h, best_dh = None, None
    for hi in range(12):
        ang = hi * 30.0
        diff = abs((bearing - ang + 180.0) % 360.0 - 180.0)
        better = best_dh is None or diff < best_dh - 1e-12
        tie = best_dh is not None and abs(diff - best_dh) <= 1e-12
        if better or (tie and ang > best_h * 30.0):
            best_h, best_dh = hi, diff
    best_e, best_de = None, None
    for ei, ang in enumerate((-30.0, 0.0, 30.0)):
        diff = abs(elevation_deg - ang)
        better = best_de is None or diff < best_de - 1e-12
        tie = best_de is not None and abs(diff - best_de) <= 1e-12
        if better or (tie and abs(ang) > abs((-30.0, 0.0, 30.0)[best_e])):
            best_e, best_de = ei, diff
    return best_e * 12 + best_h


def shortest_path_bruteforce(nodes, edges, start, goal):
    """Exhaustive simple-path enumeration; edges is {(a, b): dist}.

    Returns the minimal total distance or None when disconnected.
    Only viable for small graphs (<= ~12 nodes).
    """
    adj = {}
    for (a, b), d in edges.items():
        adj.setdefault(a, []).append((b, d))
        adj.setdefault(b, []).append((a, d))
    best = [None]

    def walk(node, seen, acc):
        if best[0] is not None and acc >= best[0]:
            return
        if node == goal:
            best[0] = acc
            return
        for nxt, d in adj.get(node, []):
            if nxt not in seen:
                walk(nxt, seen | {nxt}, acc + d)

    walk(start, {start}, 0.0)
    return best[0]
