"""Reversible encoding of survey tables into dense real matrices.

Categorical and binary columns become one-hot blocks whose positions follow
the schema's category order; numeric columns become a single entry scaled
affinely from [min, max] onto [-1, +1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from popsyn import _kernels
from popsyn.errors import DegenerateBlock, SchemaMismatch, ShapeMismatch
from popsyn.rng import Rng
from popsyn.survey_data import SurveyTable

ONE_HOT = "one-hot"
SCALED = "scaled-numeric"


@dataclass(frozen=True)
class Block:
    column: str
    kind: str
    offset: int
    width: int
    lo: float = 0.0
    hi: float = 0.0
    integer: bool = False


@dataclass(frozen=True)
class BlockLayout:
    schema: object
    blocks: tuple

    @property
    def width(self):
        return sum(b.width for b in self.blocks)

    @property
    def onehot_blocks(self):
        return [b for b in self.blocks if b.kind == ONE_HOT]

    @property
    def numeric_blocks(self):
        return [b for b in self.blocks if b.kind == SCALED]

    @property
    def onehot_offsets(self):
        return np.array([b.offset for b in self.onehot_blocks], dtype=np.int64)

    @property
    def onehot_widths(self):
        return np.array([b.width for b in self.onehot_blocks], dtype=np.int64)

    @property
    def numeric_positions(self):
        return np.array([b.offset for b in self.numeric_blocks], dtype=np.int64)


@dataclass
class EncodedMatrix:
    layout: BlockLayout
    data: np.ndarray

    @property
    def n_rows(self):
        return self.data.shape[0]

    def rows(self, indices):
        return EncodedMatrix(self.layout, self.data[np.asarray(indices, dtype=np.int64)])

    def to_csv(self, path):
        """Debug dump: one header of ``column[:category]`` names, then reals."""
        names = []
        for b in self.layout.blocks:
            if b.kind == ONE_HOT:
                cats = self.layout.schema.column(b.column).categories
                names.extend(f"{b.column}:{c}" for c in cats)
            else:
                names.append(b.column)
        with open(path, "w") as fh:
            fh.write(",".join(names) + "\n")
            for row in self.data:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")


def build_layout(schema):
    blocks = []
    offset = 0
    for col in schema.columns:
        if col.is_numeric:
            blocks.append(Block(col.name, SCALED, offset, 1, col.numeric_min,
                                col.numeric_max, col.integer))
            offset += 1
        else:
            blocks.append(Block(col.name, ONE_HOT, offset, len(col.categories)))
            offset += len(col.categories)
    return BlockLayout(schema, tuple(blocks))


def encode(table, layout):
    if table.schema != layout.schema:
        raise SchemaMismatch("table schema does not match the layout")
    out = np.zeros((table.n_rows, layout.width), dtype=np.float64)
    rows = np.arange(table.n_rows)
    for b in layout.blocks:
        v = table.data[b.column]
        if b.kind == ONE_HOT:
            out[rows, b.offset + v] = 1.0
        else:
            out[:, b.offset] = 2.0 * (v - b.lo) / (b.hi - b.lo) - 1.0
    return EncodedMatrix(layout, out)


def decode(matrix, mode="argmax", seed=0):
    """Resolve (possibly soft) encoded rows back into a ``SurveyTable``.

    ``argmax`` picks the largest entry of each one-hot block, first index on
    ties.  ``sample`` clips negatives to zero and draws from the renormalized
    block; one uniform per (row, categorical column) is taken from
    ``Rng(seed)`` in row-major order.  Numeric entries are clamped to
    [-1, 1], mapped back to [min, max] and rounded half-up for integer
    columns.
    """
    layout = matrix.layout
    data = np.asarray(matrix.data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != layout.width:
        raise ShapeMismatch(f"matrix shape {data.shape} vs layout width {layout.width}")
    if mode not in ("argmax", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    n = data.shape[0]
    cat_blocks = layout.onehot_blocks
    if mode == "sample" and n and cat_blocks:
        u = Rng(seed).uniform((n, len(cat_blocks)))
    cols = {}
    j = 0
    for b in layout.blocks:
        x = data[:, b.offset:b.offset + b.width]
        if b.kind == ONE_HOT:
            if mode == "argmax":
                cols[b.column] = np.argmax(x, axis=1) if n else np.zeros(0, np.int64)
            else:
                p = np.maximum(x, 0.0)
                if n and (p.sum(axis=1) <= 0.0).any():
                    r = int(np.argmax(p.sum(axis=1) <= 0.0))
                    raise DegenerateBlock(f"row {r}, column {b.column}: no positive mass")
                cols[b.column] = _kernels.categorical(p, u[:, j]) if n else np.zeros(0, np.int64)
            j += 1
        else:
            v = np.clip(x[:, 0], -1.0, 1.0)
            v = b.lo + (v + 1.0) * 0.5 * (b.hi - b.lo)
            if b.integer:
                v = np.floor(v + 0.5)
            cols[b.column] = np.clip(v, b.lo, b.hi)
    return SurveyTable(layout.schema, cols)
