"""Point cloud container and ASCII interchange formats (PLY and CSV)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = ["PointCloud", "load_ply", "save_ply", "load_csv", "save_csv"]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Immutable positions plus optional per-point RGB colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.size == 0:
            pos = pos.reshape(0, 3)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("positions must have shape (n, 3)")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", _freeze(np.ascontiguousarray(pos)))
        if self.colors is not None:
            col = np.array(self.colors, dtype=np.float64)
            if col.size == 0:
                col = col.reshape(0, 3)
            if col.shape != (pos.shape[0], 3):
                raise ValueError("colors must have shape (n, 3)")
            if not np.all(np.isfinite(col)) or col.min(initial=0.0) < 0.0 or col.max(initial=0.0) > 1.0:
                raise ValueError("colors must be finite and within [0, 1]")
            object.__setattr__(self, "colors", _freeze(np.ascontiguousarray(col)))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.count

    @property
    def has_colors(self) -> bool:
        return self.colors is not None


def load_ply(path) -> PointCloud:
    """Read an ASCII PLY file with a vertex element carrying x, y, z.

    Optional ``red``, ``green``, ``blue`` properties become colors; integer
    color types are rescaled from [0, 255] to [0, 1].
    """
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().strip() != "ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = fh.readline().split()
        if len(fmt) < 2 or fmt[0] != "format" or fmt[1] != "ascii":
            raise ValueError(f"{path}: only ASCII PLY is supported")
        n_vertex = None
        prop_names: list[str] = []
        prop_types: list[str] = []
        in_vertex = False
        for line in fh:
            parts = line.split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "element":
                if parts[1] == "vertex":
                    n_vertex = int(parts[2])
                    in_vertex = True
                else:
                    in_vertex = False
            elif parts[0] == "property" and in_vertex:
                if parts[1] == "list":
                    raise ValueError(f"{path}: list properties are not supported")
                prop_types.append(parts[1])
                prop_names.append(parts[2])
            elif parts[0] == "end_header":
                break
        if n_vertex is None:
            raise ValueError(f"{path}: no vertex element")
        for axis in ("x", "y", "z"):
            if axis not in prop_names:
                raise ValueError(f"{path}: vertex element lacks property {axis!r}")
        if n_vertex == 0:
            data = np.zeros((0, len(prop_names)))
        else:
            data = np.loadtxt(fh, dtype=np.float64, max_rows=n_vertex, ndmin=2)
        if data.shape != (n_vertex, len(prop_names)):
            raise ValueError(f"{path}: vertex data does not match the header")
    cols = {name: data[:, i] for i, name in enumerate(prop_names)}
    positions = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    colors = None
    if all(c in cols for c in ("red", "green", "blue")):
        colors = np.stack([cols["red"], cols["green"], cols["blue"]], axis=1)
        types = {prop_types[prop_names.index(c)] for c in ("red", "green", "blue")}
        if not types <= {"float", "float32", "float64", "double"}:
            colors = colors / 255.0
        colors = np.clip(colors, 0.0, 1.0)
    return PointCloud(positions, colors)


def save_ply(cloud: PointCloud, path) -> None:
    """Write an ASCII PLY file; colors, when present, are stored as uchar."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {cloud.count}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        if cloud.has_colors:
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for i in range(cloud.count):
            x, y, z = (float(c) for c in cloud.positions[i])
            row = f"{x!r} {y!r} {z!r}"
            if cloud.has_colors:
                r, g, b = (int(c) for c in np.rint(cloud.colors[i] * 255))
                row += f" {r} {g} {b}"
            fh.write(row + "\n")


def load_csv(path) -> PointCloud:
    """Read points from CSV with a mandatory ``x,y,z[,r,g,b]`` header row."""
    with open(path, "r", encoding="utf-8") as fh:
        header = [c.strip().lower() for c in fh.readline().strip().split(",")]
        if header[:3] != ["x", "y", "z"] or header not in (["x", "y", "z"],
                                                           ["x", "y", "z", "r", "g", "b"]):
            raise ValueError(f"{path}: header row must be x,y,z or x,y,z,r,g,b")
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message=".*no data.*")
            data = np.loadtxt(fh, dtype=np.float64, delimiter=",", ndmin=2)
    if data.size == 0:
        data = data.reshape(0, len(header))
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match the header")
    colors = data[:, 3:6] if len(header) == 6 else None
    return PointCloud(data[:, :3], colors)


def save_csv(cloud: PointCloud, path) -> None:
    """Write points as CSV with the ``x,y,z[,r,g,b]`` header."""
    with open(path, "w", encoding="utf-8") as fh:
        if cloud.has_colors:
            fh.write("x,y,z,r,g,b\n")
            for p, c in zip(cloud.positions, cloud.colors):
                row = [float(p[0]), float(p[1]), float(p[2]),
                       float(c[0]), float(c[1]), float(c[2])]
                fh.write(",".join(repr(v) for v in row) + "\n")
        else:
            fh.write("x,y,z\n")
            for p in cloud.positions:
                fh.write(f"{float(p[0])!r},{float(p[1])!r},{float(p[2])!r}\n")
