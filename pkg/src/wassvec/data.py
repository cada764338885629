"""Synthetic datasets, CSV/IDX ingestion and the normalization pipelines."""

from __future__ import annotations

import csv
import gzip
import io
import itertools
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Dataset

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class FormatError(ValueError):
    """Malformed input file; the message carries the byte or line position."""


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Non-negative ``(n, m)`` data matrix with optional row and column names."""

    values: np.ndarray
    row_names: Optional[List[str]] = None
    col_names: Optional[List[str]] = None

    def __post_init__(self):
        U = np.array(self.values, dtype=np.float64, copy=True)
        if U.ndim != 2:
            raise ValueError(f"data matrix must be 2-D, got shape {U.shape}")
        if not np.all(np.isfinite(U)):
            raise ValueError("data matrix has non-finite entries")
        if np.any(U < 0):
            r, c = np.argwhere(U < 0)[0]
            raise ValueError(f"data matrix has a negative entry at ({r}, {c})")
        U.setflags(write=False)
        object.__setattr__(self, "values", U)
        for attr, size in (("row_names", U.shape[0]), ("col_names", U.shape[1])):
            names = getattr(self, attr)
            if names is not None:
                names = [str(x) for x in names]
                if len(names) != size:
                    raise ValueError(f"{len(names)} {attr} for {size} entries")
                object.__setattr__(self, attr, names)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def transpose(self) -> "DataMatrix":
        return DataMatrix(self.values.T, self.col_names, self.row_names)

    def select_columns(self, idx) -> "DataMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        names = None if self.col_names is None else [self.col_names[i] for i in idx]
        return DataMatrix(self.values[:, idx], self.row_names, names)

    def select_rows(self, idx) -> "DataMatrix":
        return self.transpose().select_columns(idx).transpose()


# ---------------------------------------------------------------- templates

def wrapped_gaussian(x, sigma: float) -> np.ndarray:
    """Gaussian bump on the unit circle, summed over three periods."""
    x = np.asarray(x, dtype=np.float64)
    return sum(np.exp(-((x + k) ** 2) / (2.0 * sigma ** 2)) for k in (-1, 0, 1))


@dataclass(frozen=True)
class Template:
    """Periodic profile on the unit torus.

    ``gauss`` takes ``(sigma,)``; ``bimodal`` takes ``(sigma, gap)`` and puts
    a second equal bump ``gap`` away; ``trimodal`` takes
    ``(sigma, gap1, gap2)`` with bumps at ``0``, ``gap1`` and ``gap2``. In 2-D
    the bumps are products of 1-D profiles, offset along the first axis.
    """

    kind: str
    params: Tuple[float, ...]

    _ARITY = {"gauss": 1, "bimodal": 2, "trimodal": 3}

    def __post_init__(self):
        if self.kind not in self._ARITY:
            raise ValueError(f"unknown template {self.kind!r}; expected one of {sorted(self._ARITY)}")
        params = tuple(float(p) for p in self.params)
        if len(params) != self._ARITY[self.kind]:
            raise ValueError(f"template {self.kind} takes {self._ARITY[self.kind]} parameter(s), got {len(params)}")
        if not all(np.isfinite(p) and p > 0 for p in params):
            raise ValueError(f"template parameters must be positive, got {params}")
        object.__setattr__(self, "params", params)

    @classmethod
    def parse(cls, text: str) -> "Template":
        """Parse ``"gauss:0.05"`` or ``"bimodal:0.05,0.3"``."""
        kind, _, rest = text.partition(":")
        if not rest:
            raise ValueError(f"template {text!r} needs parameters, e.g. gauss:0.05")
        try:
            params = tuple(float(p) for p in rest.split(","))
        except ValueError:
            raise ValueError(f"non-numeric template parameters in {text!r}") from None
        return cls(kind.strip(), params)

    def offsets(self):
        if self.kind == "gauss":
            return (0.0,)
        return (0.0,) + self.params[1:]

    def __call__(self, dx, dy=None) -> np.ndarray:
        sigma = self.params[0]
        out = 0.0
        for off in self.offsets():
            bump = wrapped_gaussian(np.mod(dx - off + 0.5, 1.0) - 0.5, sigma)
            if dy is not None:
                bump = bump * wrapped_gaussian(np.mod(dy + 0.5, 1.0) - 0.5, sigma)
            out = out + bump
        return out


def _as_template(template):
    """A :class:`Template`, its text form, or any vectorized periodic callable."""
    if isinstance(template, Template) or callable(template):
        return template
    return Template.parse(str(template))


def _finish(H: np.ndarray) -> Dataset:
    if np.ptp(H[:, 0]) <= 1e-12 * np.abs(H[:, 0]).max():
        raise ValueError("template is constant on the grid; every histogram would be identical")
    data = Dataset(H / H.sum(axis=0))
    data.require_distinct()
    return data


def torus_dataset_1d(template, n: int) -> Dataset:
    """``n`` translates of a periodic template on the grid ``i / n``.

    ``A[i, j]`` is proportional to ``h((i - j) / n)``, so ``A`` is circulant.
    """
    if n < 3:
        raise ValueError(f"n must be at least 3, got {n}")
    h = _as_template(template)
    k = np.arange(n)
    d = ((k[:, None] - k[None, :]) % n) / n
    return _finish(h(d))


def torus_dataset_2d(template, side: int) -> Dataset:
    """``side**2`` translates of a template on the periodic ``side x side`` grid.

    Bins and histograms are both indexed by ``row * side + col``.
    """
    if side < 2:
        raise ValueError(f"side must be at least 2, got {side}")
    h = _as_template(template)
    r, c = np.divmod(np.arange(side * side), side)
    dx = ((r[:, None] - r[None, :]) % side) / side
    dy = ((c[:, None] - c[None, :]) % side) / side
    return _finish(h(dx, dy))


def mean_scale_family(n: int, means: Sequence[float], scales: Sequence[float]) -> DataMatrix:
    """``U[i, j] = h((x_i - mu_j) / sigma_j)`` for a periodic Gaussian bump.

    Columns run over the grid ``means x scales`` (means outer).
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    means = [float(m) for m in means]
    scales = [float(s) for s in scales]
    if not means or not scales:
        raise ValueError("means and scales must be non-empty")
    if not all(s > 0 for s in scales):
        raise ValueError(f"scales must be positive, got {scales}")
    x = np.arange(n) / n
    cols, names = [], []
    for mu, sigma in itertools.product(means, scales):
        cols.append(wrapped_gaussian(np.mod(x - mu + 0.5, 1.0) - 0.5, sigma))
        names.append(f"mu={mu:g};sigma={sigma:g}")
    return DataMatrix(np.column_stack(cols), col_names=names)


def block_dataset(block_sizes: Sequence[Tuple[int, int]], seed: Optional[int] = None) -> DataMatrix:
    """Block-diagonal matrix with entries in ``(0, 1]`` inside the blocks."""
    sizes = [(int(a), int(b)) for a, b in block_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least two blocks")
    if any(a < 1 or b < 1 for a, b in sizes):
        raise ValueError(f"block sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    U = np.zeros((sum(a for a, _ in sizes), sum(b for _, b in sizes)))
    r = c = 0
    for a, b in sizes:
        U[r:r + a, c:c + b] = 1.0 - rng.random((a, b))
        r, c = r + a, c + b
    return DataMatrix(U)


# ------------------------------------------------------------ normalization

def _values(U) -> DataMatrix:
    return U if isinstance(U, DataMatrix) else DataMatrix(U)


def canonical_normalization(U) -> Tuple[Dataset, Dataset]:
    """Column-normalize ``U`` into ``A`` (``m`` histograms on ``n`` bins) and
    row-normalize it into ``B`` (``n`` histograms on ``m`` bins)."""
    U = _values(U)
    X = U.values
    cs, rs = X.sum(axis=0), X.sum(axis=1)
    if np.any(cs <= 0):
        raise ValueError(f"column {int(np.argmin(cs))} of the data matrix sums to zero")
    if np.any(rs <= 0):
        raise ValueError(f"row {int(np.argmin(rs))} of the data matrix sums to zero")
    return Dataset(X / cs, labels=U.col_names), Dataset(X.T / rs, labels=U.row_names)


def scrna_preprocess(U, top_k: int) -> DataMatrix:
    """``log1p`` of a genes-by-cells count matrix, keeping the ``top_k`` genes
    with largest variance across cells.

    Ties go to the lower gene index; the kept genes stay in their original
    order.
    """
    U = _values(U)
    X = U.values
    if np.any(X != np.round(X)):
        raise ValueError("counts must be integers")
    n_genes = X.shape[0]
    if not 1 <= top_k <= n_genes:
        raise ValueError(f"top_k must lie in [1, {n_genes}], got {top_k}")
    L = np.log1p(X)
    var = L.var(axis=1)
    keep = np.sort(np.argsort(-var, kind="stable")[:top_k])
    names = None if U.row_names is None else [U.row_names[i] for i in keep]
    return DataMatrix(L[keep], names, U.col_names)


def filter_classes(U, labels, classes: Optional[Sequence] = None,
                   samples: Optional[int] = None, seed: Optional[int] = None) -> DataMatrix:
    """Keep the columns whose label is in ``classes``, then draw ``samples`` of
    them uniformly without replacement (kept in their original order)."""
    U = _values(U)
    labels = np.asarray(labels)
    if labels.shape[0] != U.shape[1]:
        raise ValueError(f"{labels.shape[0]} labels for {U.shape[1]} columns")
    idx = np.arange(U.shape[1])
    if classes is not None:
        wanted = {str(c) for c in classes}
        idx = idx[[str(l) in wanted for l in labels]]
    if samples is not None:
        if samples > idx.size:
            raise ValueError(f"asked for {samples} samples but only {idx.size} columns match")
        idx = np.sort(np.random.default_rng(seed).choice(idx, size=samples, replace=False))
    out = U.select_columns(idx)
    return DataMatrix(out.values, out.row_names, [str(l) for l in labels[idx]])


# ---------------------------------------------------------------------- IDX

def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_header(raw: bytes, expected: int, ndim: int, path) -> Tuple[int, ...]:
    if len(raw) < 4:
        raise FormatError(f"{path}: file has {len(raw)} bytes, too short for an IDX magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at byte 0, expected 0x{expected:08x}")
    need = 4 + 4 * ndim
    if len(raw) < need:
        raise FormatError(f"{path}: header needs {need} bytes, file has {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:need])
    size = int(np.prod(dims))
    if len(raw) - need != size:
        raise FormatError(
            f"{path}: expected {size} payload bytes after the {need}-byte header, found {len(raw) - need}"
        )
    return dims


def read_idx(path) -> DataMatrix:
    """Read an IDX image file (unsigned bytes, magic 0x00000803).

    Each image is flattened row-major into one column; pixel values stay in
    ``[0, 255]``.
    """
    raw = _read_bytes(path)
    count, rows, cols = _idx_header(raw, IDX_IMAGES, 3, path)
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    return DataMatrix(pixels.T.astype(np.float64))


def read_idx_labels(path) -> np.ndarray:
    """Read an IDX label file (unsigned bytes, magic 0x00000801)."""
    raw = _read_bytes(path)
    _idx_header(raw, IDX_LABELS, 1, path)
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def write_idx(path, images: np.ndarray) -> None:
    """Write ``(count, rows, cols)`` unsigned-byte images as an IDX file."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError(f"images must have shape (count, rows, cols), got {images.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES, *images.shape))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------- CSV

_COMMENT = re.compile(r"^\s*#")


def read_matrix_csv(path, header: bool = False, row_names: bool = False):
    """Parse a comma-separated numeric table.

    Blank lines and lines starting with ``#`` are skipped. Returns
    ``(values, row_names, col_names)``; name lists are ``None`` unless
    requested.
    """
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not a text file ({exc.reason} at byte {exc.start})") from None
    body, rnames, cnames = [], [], None
    width = None
    for lineno, row in _csv_rows(text):
        if header and cnames is None:
            cnames = row[1:] if row_names else row
            continue
        if row_names:
            rnames.append(row[0])
            row = row[1:]
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(f"{path}: line {lineno} has {len(row)} values, expected {width}")
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise FormatError(f"{path}: line {lineno}, column {col}: non-numeric cell {cell!r}") from None
        body.append(vals)
    if not body:
        raise FormatError(f"{path}: no data rows")
    if cnames is not None and len(cnames) != width:
        raise FormatError(f"{path}: header has {len(cnames)} names for {width} columns")
    return np.array(body), (rnames if row_names else None), cnames


def _csv_rows(text: str):
    lines = text.splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or _COMMENT.match(line):
            continue
        row = next(csv.reader([line]))
        yield lineno, [cell.strip() for cell in row]


def read_csv(path, header: bool = False, row_names: bool = False) -> DataMatrix:
    """Read a non-negative data matrix from CSV (see :func:`read_matrix_csv`)."""
    values, rnames, cnames = read_matrix_csv(path, header, row_names)
    return DataMatrix(values, rnames, cnames)


def matrix_to_csv(values, row_names=None, col_names=None) -> str:
    """Serialize with shortest round-trip float formatting."""
    values = np.asarray(values, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if col_names is not None:
        w.writerow(([""] if row_names is not None else []) + list(col_names))
    for i, row in enumerate(values):
        cells = [repr(float(x)) for x in row]
        w.writerow(([row_names[i]] if row_names is not None else []) + cells)
    return buf.getvalue()


def write_csv(path, values, row_names=None, col_names=None) -> None:
    if isinstance(values, DataMatrix):
        row_names = values.row_names if row_names is None else row_names
        col_names = values.col_names if col_names is None else col_names
        values = values.values
    with open(path, "w", newline="") as fh:
        fh.write(matrix_to_csv(values, row_names, col_names))
