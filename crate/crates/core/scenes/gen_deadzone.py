#!/usr/bin/env python3
"""Writes deadzone_room.mesh and deadzone_room.json.

L-shaped hall, 6 m tall: arm A spans x 0..30, y 0..10; arm B spans
x 20..30, y 10..30. Two BSs sit in arm A; the far end of arm B is out of
their line of sight. Walls are tiled 2.5 m x 3 m, floor and ceiling
2.5 m x 2.5 m; three pillars and a kiosk add clutter.

Run from this directory: python3 gen_deadzone.py
"""
import json

H = 6.0
OUTLINE = [(0, 0), (30, 0), (30, 30), (20, 30), (20, 10), (0, 10)]
TILE_W = 2.5
TILE_H = 3.0
TILE_F = 2.5


def quad(c, u, v):
    a = c
    b = [c[i] + u[i] for i in range(3)]
    d = [c[i] + v[i] for i in range(3)]
    e = [c[i] + u[i] + v[i] for i in range(3)]
    return [a + b + e, a + e + d]


def walls():
    tris = []
    n = len(OUTLINE)
    for k in range(n):
        (x0, y0), (x1, y1) = OUTLINE[k], OUTLINE[(k + 1) % n]
        length = abs(x1 - x0) + abs(y1 - y0)
        cols = round(length / TILE_W)
        dx, dy = (x1 - x0) / cols, (y1 - y0) / cols
        for i in range(cols):
            for j in range(round(H / TILE_H)):
                c = [x0 + i * dx, y0 + i * dy, j * TILE_H]
                tris += quad(c, [dx, dy, 0.0], [0.0, 0.0, TILE_H])
    return tris


def slab(z):
    tris = []
    rects = [(0, 0, 30, 10), (20, 10, 30, 30)]
    for (x0, y0, x1, y1) in rects:
        nx, ny = round((x1 - x0) / TILE_F), round((y1 - y0) / TILE_F)
        for i in range(nx):
            for j in range(ny):
                c = [x0 + i * TILE_F, y0 + j * TILE_F, z]
                tris += quad(c, [TILE_F, 0.0, 0.0], [0.0, TILE_F, 0.0])
    return tris


def box(lo, hi):
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    sx, sy, sz = x1 - x0, y1 - y0, z1 - z0
    tris = []
    tris += quad([x0, y0, z0], [sx, 0, 0], [0, 0, sz])
    tris += quad([x0, y1, z0], [sx, 0, 0], [0, 0, sz])
    tris += quad([x0, y0, z0], [0, sy, 0], [0, 0, sz])
    tris += quad([x1, y0, z0], [0, sy, 0], [0, 0, sz])
    tris += quad([x0, y0, z1], [sx, 0, 0], [0, sy, 0])
    tris += quad([x0, y0, z0], [sx, 0, 0], [0, sy, 0])
    return tris


def clutter():
    tris = []
    for (x, y) in [(8.0, 3.5), (11.0, 1.2), (24.0, 18.0)]:
        tris += box([x - 0.4, y - 0.4, 0.0], [x + 0.4, y + 0.4, H])
    tris += box([14.0, 1.0, 0.0], [15.5, 2.0, 2.2])
    return tris


def fmt(v):
    return repr(float(v))


def main():
    tris = walls() + slab(0.0) + slab(H) + clutter()
    with open("deadzone_room.mesh", "w") as f:
        f.write("# L-shaped hall, generated by gen_deadzone.py\n")
        f.write(f"# {len(tris)} triangles, meters\n")
        for t in tris:
            f.write(" ".join(fmt(v) for v in t) + "\n")

    up = [0.0, 0.0, 1.0]
    css = [
        {"position": [29.95, 5.0, 3.0], "boresight": [-1.0, 0.0, 0.0], "up": up},
        {"position": [25.0, 0.05, 3.0], "boresight": [0.0, 1.0, 0.0], "up": up},
        {"position": [20.05, 14.0, 3.0], "boresight": [1.0, 0.0, 0.0], "up": up},
        {"position": [29.95, 15.0, 3.0], "boresight": [-1.0, 0.0, 0.0], "up": up},
        {"position": [17.0, 9.95, 3.0], "boresight": [0.0, -1.0, 0.0], "up": up},
        {"position": [5.0, 0.05, 3.0], "boresight": [0.0, 1.0, 0.0], "up": up},
    ]
    scn = {
        "mesh": "deadzone_room.mesh",
        "material": {"eps_r": 5.31, "sigma": 0.4557},
        "bss": [[3.0, 2.0, 4.0], [12.0, 8.0, 4.0]],
        "css": css,
        "tps": [
            [8.0, 6.0, 1.5],
            [26.0, 4.0, 1.5],
            [24.0, 14.0, 1.5],
            [22.0, 22.0, 1.5],
            [27.0, 27.0, 1.5],
        ],
        "ris": {"n_h": 347, "n_v": 175, "delta": 0.5},
        "radio": {"tx_power_dbm": 28.0, "freq_hz": 26e9, "n_bs_antennas": 2, "noise_dbm": -85.0},
        "l_target": 2,
        "max_bounces": 2,
        "combining": "coherent",
    }
    with open("deadzone_room.json", "w") as f:
        json.dump(scn, f, indent=2)
        f.write("\n")
    print(f"{len(tris)} triangles")


if __name__ == "__main__":
    main()
