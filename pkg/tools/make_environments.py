#!/usr/bin/env python3
"""Generate the bundled home environments.

Two multi-room floor plans at 0.05 m resolution: a 15 x 10 m layout
(150 m^2) and a 17 x 12 m layout (204 m^2). Walls are 0.10 m thick,
doors 0.9-1.0 m wide, and each plan carries a few alcoves plus
low-texture zones where loop closures are not available.

Run from the repository root:  python3 tools/make_environments.py
"""
import os
import sys

import numpy as np
from scipy import ndimage

RES = 0.05
WALL = 0.10          # wall thickness, meters
ROBOT_CLEARANCE = 0.17 + 0.04


class Plan:
    def __init__(self, name, width, height, dock):
        self.name = name
        self.width = width
        self.height = height
        self.dock = dock
        self.cols = int(round(width / RES))
        self.rows = int(round(height / RES))
        self.walls = np.zeros((self.rows, self.cols), dtype=bool)
        self.zones = []   # (x0, y0, x1, y1, score)

    def _cells(self, x0, y0, x1, y1):
        c0 = int(round(min(x0, x1) / RES))
        c1 = int(round(max(x0, x1) / RES))
        r0 = int(round(min(y0, y1) / RES))
        r1 = int(round(max(y0, y1) / RES))
        return (slice(max(r0, 0), min(r1, self.rows)),
                slice(max(c0, 0), min(c1, self.cols)))

    def wall(self, x0, y0, x1, y1):
        """Fill a rectangle with wall. Zero-thickness spans get WALL."""
        if abs(x1 - x0) < 1e-9:
            x0, x1 = x0, x0 + WALL
        if abs(y1 - y0) < 1e-9:
            y0, y1 = y0, y0 + WALL
        self.walls[self._cells(x0, y0, x1, y1)] = True

    def door(self, x0, y0, x1, y1):
        self.walls[self._cells(x0, y0, x1, y1)] = False

    def border(self):
        self.wall(0, 0, self.width, WALL)
        self.wall(0, self.height - WALL, self.width, self.height)
        self.wall(0, 0, WALL, self.height)
        self.wall(self.width - WALL, 0, self.width, self.height)

    def alcove(self, x, y, w, d, side):
        """A w-wide, d-deep walled pocket whose opening faces `side`.

        (x, y) is the lower-left corner of the opening segment; the
        pocket extends away from the side it opens toward. Wall fill is
        applied around the interior, then the interior plus the opening
        strip is cleared.
        """
        t = WALL
        if side == "n":
            fill = (x - t, y - d - t, x + w + t, y + t)
            clear = (x, y - d, x + w, y + t)
        elif side == "s":
            fill = (x - t, y - t, x + w + t, y + d + t)
            clear = (x, y - t, x + w, y + d)
        elif side == "e":
            fill = (x - d - t, y - t, x + t, y + w + t)
            clear = (x - d, y, x + t, y + w)
        elif side == "w":
            fill = (x - t, y - t, x + d + t, y + w + t)
            clear = (x - t, y, x + d, y + w)
        else:
            raise ValueError(side)
        self.wall(*fill)
        self.door(*clear)

    def zone(self, x0, y0, x1, y1, score):
        self.zones.append((x0, y0, x1, y1, score))

    def validate(self):
        free = ~self.walls
        dist = ndimage.distance_transform_edt(free, sampling=RES)
        traversable = free & (dist >= ROBOT_CLEARANCE)
        labels, count = ndimage.label(traversable,
                                      structure=np.ones((3, 3), dtype=int))
        dock_cell = (int(self.dock[1] / RES), int(self.dock[0] / RES))
        if not traversable[dock_cell]:
            raise SystemExit(f"{self.name}: dock has no clearance")
        dock_label = labels[dock_cell]
        reachable = (labels == dock_label).sum()
        total = traversable.sum()
        if reachable != total:
            raise SystemExit(f"{self.name}: {total - reachable} traversable "
                             f"cells unreachable from the dock "
                             f"({count} components)")
        free_area = free.sum() * RES * RES
        print(f"{self.name}: {self.width:.0f} x {self.height:.0f} m "
              f"({self.width * self.height:.0f} m^2 footprint, "
              f"{free_area:.0f} m^2 free), "
              f"{reachable} traversable cells, 1 component")

    def write(self, directory):
        lines = [f"name: {self.name}",
                 f"resolution: {RES}",
                 f"dock: {self.dock[0]} {self.dock[1]} {self.dock[2]}"]
        for x0, y0, x1, y1, score in self.zones:
            lines.append(f"feature_zone: {x0} {y0} {x1} {y1} {score}")
        lines.append("grid:")
        for row in self.walls[::-1]:
            lines.append("".join("#" if cell else "." for cell in row))
        path = os.path.join(directory, f"{self.name}.env")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {path}")


def home_small():
    p = Plan("home_small", 15.0, 10.0, (1.0, 1.0, 0.0))
    p.border()
    # two vertical partitions -> three columns of rooms
    p.wall(5.0, 0.0, 5.0 + WALL, 10.0)
    p.wall(10.0, 0.0, 10.0 + WALL, 10.0)
    # one horizontal partition -> two rows
    p.wall(0.0, 5.0, 15.0, 5.0 + WALL)
    # doors through the vertical walls
    p.door(5.0, 2.0, 5.0 + WALL, 3.0)
    p.door(5.0, 7.0, 5.0 + WALL, 8.0)
    p.door(10.0, 2.5, 10.0 + WALL, 3.5)
    p.door(10.0, 6.5, 10.0 + WALL, 7.5)
    # doors through the horizontal wall, one per column
    p.door(2.0, 5.0, 3.0, 5.0 + WALL)
    p.door(7.2, 5.0, 8.2, 5.0 + WALL)
    p.door(12.0, 5.0, 13.0, 5.0 + WALL)
    # alcoves: closet in the south-west room, niche in the north-middle
    # room, pantry off the south-east room
    p.alcove(3.4, 4.1, 1.0, 0.8, side="s")
    p.alcove(6.2, 9.0, 1.0, 0.8, side="n")
    p.alcove(13.9, 2.0, 1.0, 0.9, side="e")
    # low-texture stretches: bare drywall, no loop-closure features
    p.zone(5.6, 8.0, 8.0, 9.9, 0.1)
    p.zone(10.2, 0.1, 12.0, 1.6, 0.1)
    p.zone(0.1, 5.2, 2.0, 6.6, 0.5)
    return p


def home_large():
    p = Plan("home_large", 17.0, 12.0, (1.2, 1.2, 0.0))
    p.border()
    # three columns
    p.wall(6.0, 0.0, 6.0 + WALL, 12.0)
    p.wall(11.5, 0.0, 11.5 + WALL, 12.0)
    # one full horizontal partition plus a half partition in the east wing
    p.wall(0.0, 6.0, 17.0, 6.0 + WALL)
    p.wall(11.5, 9.0, 17.0, 9.0 + WALL)
    # doors
    p.door(6.0, 2.5, 6.0 + WALL, 3.5)
    p.door(6.0, 8.5, 6.0 + WALL, 9.5)
    p.door(11.5, 3.0, 11.5 + WALL, 4.0)
    p.door(11.5, 7.2, 11.5 + WALL, 8.1)
    p.door(2.5, 6.0, 3.5, 6.0 + WALL)
    p.door(8.0, 6.0, 9.0, 6.0 + WALL)
    p.door(13.5, 6.0, 14.5, 6.0 + WALL)
    p.door(15.0, 9.0, 16.0, 9.0 + WALL)
    # alcoves
    p.alcove(4.2, 5.2, 1.0, 0.8, side="s")
    p.alcove(9.0, 11.0, 1.0, 0.8, side="n")
    p.alcove(16.0, 1.5, 1.0, 0.8, side="e")
    p.alcove(0.9, 7.5, 1.0, 0.8, side="w")
    # low-texture zones
    p.zone(6.4, 0.1, 8.8, 1.8, 0.1)
    p.zone(12.0, 9.4, 14.0, 11.9, 0.1)
    p.zone(0.1, 6.2, 2.2, 8.0, 0.5)
    return p


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else \
        os.path.join(os.path.dirname(__file__), "..", "src", "ralc",
                     "environments")
    out = os.path.abspath(out)
    os.makedirs(out, exist_ok=True)
    for plan in (home_small(), home_large()):
        plan.validate()
        plan.write(out)


if __name__ == "__main__":
    main()
