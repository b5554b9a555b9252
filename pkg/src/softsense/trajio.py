"""Columnar trajectory container and on-disk formats.

Binary layout (little-endian throughout):

    bytes 0..7   magic ``b"SSCOL1\\n\\0"``
    bytes 8..11  uint32 length of the JSON header
    header       UTF-8 JSON: {"columns": [...], "dt": float, "n_rows": int,
                              "meta": {...}, "events": [...]}
    payload      n_rows * n_cols float64, row-major

A CSV exporter is provided for plotting and spot checks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Trajectory", "write_columnar", "read_columnar"]

MAGIC = b"SSCOL1\n\x00"


@dataclass
class Trajectory:
    """Time-indexed table of simulation outputs.

    ``data`` holds one row per emitted time point; ``columns`` names the
    columns in their fixed documented order. ``events`` is a list of
    ``{"time": float, "kind": str, ...}`` records (constraint excursions,
    input clamps, settling episodes).
    """

    columns: list[str]
    data: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise ValueError(
                f"data shape {self.data.shape} does not match {len(self.columns)} columns"
            )

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    def col(self, name: str) -> np.ndarray:
        try:
            idx = self.columns.index(name)
        except ValueError:
            raise KeyError(f"trajectory has no column named {name!r}") from None
        return self.data[:, idx]

    @property
    def times(self) -> np.ndarray:
        return self.col("time")

    def to_csv(self, path: str | Path, stride: int = 1) -> None:
        header = ",".join(self.columns)
        np.savetxt(path, self.data[::stride], delimiter=",", header=header, comments="")


def write_columnar(traj: Trajectory, path: str | Path) -> None:
    header = {
        "columns": traj.columns,
        "dt": traj.dt,
        "n_rows": int(traj.n_rows),
        "meta": traj.meta,
        "events": traj.events,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(traj.data, dtype="<f8").tobytes())


def read_columnar(path: str | Path) -> Trajectory:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a columnar trajectory file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        raw = fh.read()
    n_rows = header["n_rows"]
    n_cols = len(header["columns"])
    data = np.frombuffer(raw, dtype="<f8", count=n_rows * n_cols).reshape(n_rows, n_cols)
    return Trajectory(
        columns=header["columns"],
        data=data.astype(float),
        dt=header["dt"],
        meta=header.get("meta", {}),
        events=header.get("events", []),
    )
