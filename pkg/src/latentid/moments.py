"""Third-order cross-moment tensors estimated from centred data."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentError, DimensionError
from .model import Dataset


@dataclass(frozen=True, eq=False)
class MomentTensor3:
    """Dense K1 x K2 x K3 array of cross-moments E[X^1_i X^2_u X^3_v]."""

    values: np.ndarray
    provenance: str = "empirical"
    centered: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3:
            raise DimensionError(f"moment tensor must be three-way, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ArgumentError("moment tensor has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def to_csv(self, path=None) -> str:
        """Flat ``i,u,v,value`` listing; written to ``path`` when given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "u", "v", "value"])
        for (i, u, v), x in np.ndenumerate(self.values):
            w.writerow([i, u, v, repr(float(x))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, provenance="empirical") -> "MomentTensor3":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        idx = np.array([[int(r["i"]), int(r["u"]), int(r["v"])] for r in rows])
        vals = np.zeros(tuple(idx.max(axis=0) + 1))
        for (i, u, v), r in zip(idx, rows):
            vals[i, u, v] = float(r["value"])
        return cls(vals, provenance=provenance)


def center(data: Dataset) -> Dataset:
    """Subtract column means from every block (and the latent rows, if kept)."""
    blocks = [x - x.mean(axis=0) for x in data.blocks]
    latent = None if data.latent is None else data.latent - data.latent.mean(axis=0)
    return replace(data, x1=blocks[0], x2=blocks[1], x3=blocks[2], latent=latent, centered=True)


def _pairwise_sum(parts):
    parts = list(parts)
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _triple_sum(a, b, c):
    n = a.shape[0]
    ab = (a[:, :, None] * b[:, None, :]).reshape(n, -1)
    return (ab.T @ c).reshape(a.shape[1], b.shape[1], c.shape[1])


def estimate_moment_tensor(data: Dataset, blocks=(0, 1, 2), center_data: bool = True,
                           partitions: int = 1) -> np.ndarray:
    """Sample average of X^a (x) X^b (x) X^c over rows.

    Rows are split into ``partitions`` contiguous chunks whose partial sums
    are combined pairwise, so the result is reproducible for a fixed count.
    """
    if data.n == 0:
        raise ArgumentError("cannot estimate moments from an empty dataset")
    if partitions < 1:
        raise ArgumentError("partitions must be >= 1")
    if center_data:
        data = center(data)
    xs = [data.blocks[b] for b in blocks]
    bounds = np.linspace(0, data.n, min(partitions, data.n) + 1).astype(int)
    parts = [_triple_sum(*(x[lo:hi] for x in xs)) for lo, hi in zip(bounds[:-1], bounds[1:])]
    return _pairwise_sum(parts) / data.n


def estimate_third_tensor(data: Dataset, center_data: bool = True, partitions: int = 1) -> MomentTensor3:
    """Empirical E[X^1_i X^2_u X^3_v].

    Centring is applied internally (it is idempotent); pass
    ``center_data=False`` only for data known to be centred.
    """
    t = estimate_moment_tensor(data, (0, 1, 2), center_data, partitions)
    return MomentTensor3(t, provenance="empirical", centered=center_data or data.centered)
