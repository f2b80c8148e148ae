"""Observation tables: CSV ingestion, rank transform and synthetic data."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata
from scipy.stats import t as student_t

from .errors import EmptyDataset, NonFiniteValue, ParseError


@dataclass(frozen=True)
class Dataset:
    """An ``N x d`` table with unique column labels.

    ``pseudo`` marks rank-transformed data, whose values lie in (0, 1).
    """

    labels: tuple
    values: np.ndarray = field(repr=False)
    pseudo: bool = False

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(labels):
            raise ValueError("values must be a matrix with one column per label")
        if len(set(labels)) != len(labels):
            raise ValueError("column labels must be unique")
        if self.pseudo and values.size and (values.min() <= 0 or values.max() >= 1):
            raise ValueError("pseudo-observations must lie strictly inside (0, 1)")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    def column(self, label) -> np.ndarray:
        try:
            return self.values[:, self.labels.index(label)]
        except ValueError:
            raise KeyError(f"no column named {label!r}") from None

    def select(self, labels) -> "Dataset":
        idx = [self.labels.index(s) for s in labels]
        return Dataset(tuple(labels), self.values[:, idx], self.pseudo)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.labels)
            for row in self.values:
                w.writerow([repr(float(x)) for x in row])


def ingest_csv(path) -> Dataset:
    """Read a headered CSV of finite numbers into a raw-mode dataset.

    Raises
    ------
    ParseError
        On a ragged row or a cell that is not a number; the message names
        the file line and column.
    NonFiniteValue
        On ``nan`` or ``inf`` cells.
    EmptyDataset
        When the file has no header or no data rows.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise EmptyDataset(f"{path}: no header row")
    _, header = rows[0]
    header = [h.strip() for h in header]
    if not rows[1:]:
        raise EmptyDataset(f"{path}: no data rows")
    data = np.empty((len(rows) - 1, len(header)))
    for r, (line, row) in enumerate(rows[1:]):
        if len(row) != len(header):
            raise ParseError(f"{path}: line {line} has {len(row)} fields, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                x = float(cell)
            except ValueError:
                raise ParseError(f"{path}: line {line}, column {header[c]!r}: "
                                 f"cannot parse {cell.strip()!r} as a number") from None
            if not np.isfinite(x):
                raise NonFiniteValue(f"{path}: line {line}, column {header[c]!r}: "
                                     f"non-finite value {cell.strip()!r}")
            data[r, c] = x
    try:
        return Dataset(tuple(header), data)
    except ValueError as exc:
        raise ParseError(f"{path}: bad header: {exc}") from None


def rank_transform(data: Dataset) -> Dataset:
    """Replace each column by its average ranks divided by ``N + 1``."""
    if data.pseudo:
        return data
    n = data.values.shape[0]
    ranks = rankdata(data.values, method="average", axis=0) / (n + 1)
    return Dataset(data.labels, ranks, pseudo=True)


def gaussian_copula_ranks(n: int, rho, seed: int, labels=None) -> Dataset:
    """Rank-transformed draws from a Gaussian copula.

    ``rho`` is either a scalar (the pairwise correlation of two columns) or
    a full correlation matrix.
    """
    corr = np.atleast_2d(np.asarray(rho, dtype=float))
    if corr.shape == (1, 1):
        corr = np.array([[1.0, corr[0, 0]], [corr[0, 0], 1.0]])
    d = corr.shape[0]
    labels = tuple(labels) if labels is not None else tuple(f"X{i + 1}" for i in range(d))
    rng = np.random.default_rng(seed)
    z = rng.multivariate_normal(np.zeros(d), corr, size=n, method="cholesky")
    return rank_transform(Dataset(labels, z))


def synthetic_returns(n: int, seed: int) -> Dataset:
    """Four dependent columns ``T, M, B, S`` standing in for daily index returns.

    Margins are Student-t with 5 degrees of freedom; dependence is a
    first-order chain ``T - M - B - S`` of linear links plus a small
    quadratic term, so that higher-order tensors carry signal.
    """
    rng = np.random.default_rng(seed)
    z = np.empty((n, 4))
    z[:, 0] = rng.standard_normal(n)
    links = (0.6, 0.45, 0.3)
    for j, r in enumerate(links, start=1):
        e = rng.standard_normal(n)
        z[:, j] = r * z[:, j - 1] + 0.15 * (z[:, j - 1] ** 2 - 1) + np.sqrt(1 - r * r) * e
    u = norm.cdf((z - z.mean(0)) / z.std(0))
    x = student_t.ppf(np.clip(u, 1e-12, 1 - 1e-12), df=5)
    return Dataset(("T", "M", "B", "S"), x)
