"""ASCII PCD 0.7 reader/writer (x y z, optionally with an integer class label)."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .geometry import PointCloud

_HEADER_KEYS = (
    "VERSION",
    "FIELDS",
    "SIZE",
    "TYPE",
    "COUNT",
    "WIDTH",
    "HEIGHT",
    "VIEWPOINT",
    "POINTS",
    "DATA",
)


def write_pcd(path, cloud: PointCloud) -> None:
    """Write a cloud as ASCII PCD; label column emitted when labels exist."""
    n = len(cloud)
    with_label = cloud.labels is not None
    fields = "x y z label" if with_label else "x y z"
    sizes = "4 4 4 4" if with_label else "4 4 4"
    types = "F F F U" if with_label else "F F F"
    counts = "1 1 1 1" if with_label else "1 1 1"
    lines = [
        "# .PCD v0.7 - Point Cloud Data file format",
        "VERSION 0.7",
        f"FIELDS {fields}",
        f"SIZE {sizes}",
        f"TYPE {types}",
        f"COUNT {counts}",
        f"WIDTH {n}",
        "HEIGHT 1",
        "VIEWPOINT 0 0 0 1 0 0 0",
        f"POINTS {n}",
        "DATA ascii",
    ]
    for i in range(n):
        x, y, z = cloud.points[i]
        row = f"{x:.6g} {y:.6g} {z:.6g}"
        if with_label:
            row += f" {int(cloud.labels[i])}"
        lines.append(row)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pcd(path) -> PointCloud:
    """Parse an ASCII PCD written by :func:`write_pcd` (or a compatible subset)."""
    header = {}
    data_rows = []
    in_data = False
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if in_data:
                data_rows.append(line)
                continue
            key, _, rest = line.partition(" ")
            if key not in _HEADER_KEYS:
                raise ContractViolation(f"unexpected PCD header line: {line!r}")
            header[key] = rest
            if key == "DATA":
                if rest != "ascii":
                    raise ContractViolation(f"unsupported PCD data format {rest!r}")
                in_data = True
    if "FIELDS" not in header or "POINTS" not in header:
        raise ContractViolation("PCD header missing FIELDS/POINTS")
    fields = header["FIELDS"].split()
    if fields not in (["x", "y", "z"], ["x", "y", "z", "label"]):
        raise ContractViolation(f"unsupported PCD fields {fields}")
    n = int(header["POINTS"])
    if len(data_rows) != n:
        raise ContractViolation(f"PCD declares {n} points but has {len(data_rows)} rows")
    if n == 0:
        return PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=np.uint8) if len(fields) == 4 else None)
    table = np.array([row.split() for row in data_rows], dtype=float)
    if table.shape[1] != len(fields):
        raise ContractViolation("PCD row width does not match FIELDS")
    labels = table[:, 3].astype(np.uint8) if len(fields) == 4 else None
    return PointCloud(table[:, :3], labels)
