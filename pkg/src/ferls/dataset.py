"""Transitions, per-world datasets and their JSON-lines format.

One line per transition::

    {"world_id": "mu=1.0", "x": [...], "v": [...], "dt": 0.1, "x_next": [...]}

Floats are written with ``repr`` precision so a save/load round trip is
bit-exact.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientData, ParseError, ShapeMismatch


@dataclass(frozen=True)
class Transition:
    x: np.ndarray
    v: np.ndarray
    dt: float
    x_next: np.ndarray
    world_id: str = ""

    @property
    def y(self):
        return self.x_next - self.x


class TerrainDataset:
    """Transitions collected under one world state, stored column-wise.

    ``worlds`` optionally labels every row (used for streams that cross a
    terrain switch); ``world_id`` is the dataset-level label.
    """

    def __init__(self, world_id, x, v, dt, x_next, worlds=None):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 1:
            v = v.reshape(len(x), -1)
        dt = np.broadcast_to(np.asarray(dt, dtype=np.float64), (len(x),)).copy()
        if len(x) == 0:
            raise InsufficientData("dataset has no transitions")
        if x.shape != x_next.shape or len(v) != len(x):
            raise ShapeMismatch(f"inconsistent shapes x{x.shape} v{v.shape} x_next{x_next.shape}")
        if np.any(dt <= 0):
            raise ValueError("dt must be positive")
        self.world_id = str(world_id)
        self.x, self.v, self.dt, self.x_next = x, v, dt, x_next
        self.worlds = None if worlds is None else [str(w) for w in worlds]

    @property
    def n(self):
        return self.x.shape[1]

    @property
    def m(self):
        return self.v.shape[1]

    @property
    def y(self):
        return self.x_next - self.x

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i):
        w = self.worlds[i] if self.worlds is not None else self.world_id
        return Transition(self.x[i], self.v[i], float(self.dt[i]), self.x_next[i], w)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx):
        idx = np.asarray(idx)
        worlds = None if self.worlds is None else [self.worlds[i] for i in idx]
        return TerrainDataset(self.world_id, self.x[idx], self.v[idx], self.dt[idx], self.x_next[idx], worlds)

    def row_world(self, i):
        return self.worlds[i] if self.worlds is not None else self.world_id

    @classmethod
    def from_transitions(cls, transitions, world_id=None):
        transitions = list(transitions)
        if not transitions:
            raise InsufficientData("no transitions")
        worlds = [t.world_id for t in transitions]
        wid = world_id if world_id is not None else (worlds[0] if len(set(worlds)) == 1 else "mixed")
        return cls(wid, [t.x for t in transitions], [t.v for t in transitions],
                   [t.dt for t in transitions], [t.x_next for t in transitions],
                   None if len(set(worlds)) == 1 else worlds)

    def __eq__(self, other):
        return (isinstance(other, TerrainDataset) and self.world_id == other.world_id
                and all(np.array_equal(a, b) for a, b in
                        [(self.x, other.x), (self.v, other.v), (self.dt, other.dt), (self.x_next, other.x_next)])
                and (self.worlds or []) == (other.worlds or []))


def save_dataset(ds, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for i in range(len(ds)):
            rec = {"world_id": ds.row_world(i), "x": ds.x[i].tolist(), "v": ds.v[i].tolist(),
                   "dt": float(ds.dt[i]), "x_next": ds.x_next[i].tolist()}
            fh.write(json.dumps(rec) + "\n")
    return path


def load_dataset(path):
    rows = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rows.append(Transition(np.asarray(rec["x"], dtype=np.float64),
                                       np.asarray(rec["v"], dtype=np.float64),
                                       float(rec["dt"]),
                                       np.asarray(rec["x_next"], dtype=np.float64),
                                       str(rec.get("world_id", ""))))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
            if rows[-1].x.shape != rows[0].x.shape or rows[-1].v.shape != rows[0].v.shape \
                    or rows[-1].x_next.shape != rows[0].x.shape:
                raise ParseError(f"{path}: inconsistent dimensions", line=lineno)
    if not rows:
        raise InsufficientData(f"{path}: no transitions")
    return TerrainDataset.from_transitions(rows)
