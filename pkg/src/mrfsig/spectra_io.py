"""Peak-list ingestion, geometric reference grid and binary coding."""
import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PeakSpectrum:
    id: str
    group: str
    peaks: tuple

    def __post_init__(self):
        peaks = tuple(float(p) for p in self.peaks)
        if any(not (p > 0.0) or not math.isfinite(p) for p in peaks):
            raise DomainError(f"spectrum {self.id!r}: peaks must be positive and finite")
        object.__setattr__(self, "peaks", tuple(sorted(peaks)))


@dataclass(frozen=True)
class ReferenceGrid:
    """Reference biomarkers ``B_s = b1 * (1 + rho)**(s - 1)`` for ``s = 1..L``."""

    b1: float
    rho: float
    L: int

    def __post_init__(self):
        if not (self.b1 > 0 and self.rho > 0 and self.L >= 1):
            raise DomainError("grid needs b1 > 0, rho > 0, L >= 1")

    @property
    def sites(self):
        return self.b1 * (1.0 + self.rho) ** np.arange(self.L)

    def windows(self):
        """Closed activation windows ``[B - rho*B, B + rho*B]`` per site."""
        b = self.sites
        return b - self.rho * b, b + self.rho * b


def build_grid(b1, b_max, rho):
    """Smallest geometric grid starting at ``b1`` whose last site reaches ``b_max``."""
    if not (b1 > 0 and b_max > 0 and rho > 0):
        raise DomainError("build_grid needs positive b1, b_max, rho")
    if b_max < b1:
        raise DomainError(f"b_max={b_max} is below b1={b1}")
    ratio = 1.0 + rho
    L = 1 if b_max == b1 else max(1, math.ceil(math.log(b_max / b1) / math.log1p(rho)) + 1)
    # float guards on the log estimate
    while b1 * ratio ** (L - 1) < b_max:
        L += 1
    while L > 1 and b1 * ratio ** (L - 2) >= b_max:
        L -= 1
    return ReferenceGrid(float(b1), float(rho), int(L))


def binarize(spectrum, grid):
    """Binary vector of length ``grid.L``; site s is on iff a peak falls in its window."""
    lo, hi = grid.windows()
    x = np.zeros(grid.L, dtype=np.uint8)
    peaks = np.asarray(spectrum.peaks, dtype=np.float64)
    if peaks.size == 0:
        return x
    outside = (peaks < lo[0]) | (peaks > hi[-1])
    if outside.any():
        logger.debug("spectrum %s: %d peak(s) outside the grid ignored", spectrum.id, int(outside.sum()))
    # windows are monotone in s, so each peak activates a contiguous run
    first = np.searchsorted(hi, peaks, side="left")
    stop = np.searchsorted(lo, peaks, side="right")
    for a, b in zip(first, stop):
        x[a:b] = 1
    return x


@dataclass(frozen=True, eq=False)
class BinaryDataset:
    """``n`` binary vectors of one group; ``site_index`` holds 1-based original sites."""

    vectors: np.ndarray
    group: str
    site_index: np.ndarray
    mz: np.ndarray
    ids: tuple = ()
    rho: float = float("nan")
    grid: ReferenceGrid = field(default=None, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.uint8)
        if v.ndim != 2:
            raise DomainError("vectors must be a 2-D array")
        if v.size and v.max() > 1:
            raise DomainError("vectors must be binary")
        site_index = np.asarray(self.site_index, dtype=np.int64)
        mz = np.asarray(self.mz, dtype=np.float64)
        if site_index.shape != (v.shape[1],) or mz.shape != (v.shape[1],):
            raise DomainError("site_index and mz must match the vector length")
        if len(np.unique(site_index)) != len(site_index):
            raise DomainError("site_index must be injective")
        ids = tuple(self.ids) if self.ids else tuple(str(i) for i in range(v.shape[0]))
        if len(ids) != v.shape[0]:
            raise DomainError("one id per vector required")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "site_index", site_index)
        object.__setattr__(self, "mz", mz)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def d(self):
        return self.vectors.shape[1]

    def frequencies(self):
        return self.vectors.mean(axis=0) if self.n else np.zeros(self.d)

    def without(self, row):
        keep = np.ones(self.n, dtype=bool)
        keep[row] = False
        return BinaryDataset(
            self.vectors[keep], self.group, self.site_index, self.mz,
            tuple(i for i, k in zip(self.ids, keep) if k), self.rho, self.grid,
        )


def binarize_all(spectra, grid, group):
    spectra = [s for s in spectra if s.group == group]
    vectors = np.array([binarize(s, grid) for s in spectra], dtype=np.uint8).reshape(len(spectra), grid.L)
    return BinaryDataset(
        vectors, group, np.arange(1, grid.L + 1), grid.sites,
        tuple(s.id for s in spectra), grid.rho, grid,
    )


def restrict(dataset, sites):
    """Project every vector onto the given original sites, in the given order."""
    sites = [int(s) for s in sites]
    if not sites:
        raise DomainError("restrict needs at least one site")
    lookup = {int(s): k for k, s in enumerate(dataset.site_index)}
    try:
        cols = [lookup[s] for s in sites]
    except KeyError as exc:
        raise DomainError(f"unknown site {exc.args[0]}") from None
    return BinaryDataset(
        dataset.vectors[:, cols], dataset.group, dataset.site_index[cols],
        dataset.mz[cols], dataset.ids, dataset.rho, dataset.grid,
    )


# -- file formats ---------------------------------------------------------

def read_peaks_jsonl(path_or_lines):
    """Parse JSON-lines ``{"id", "group", "peaks"}``; raises DomainError on bad records."""
    if isinstance(path_or_lines, (str, bytes)) or hasattr(path_or_lines, "__fspath__"):
        with open(path_or_lines, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = list(path_or_lines)
    spectra = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            spectra.append(PeakSpectrum(str(rec["id"]), str(rec["group"]), tuple(rec["peaks"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise DomainError(f"line {lineno}: malformed peak record ({exc})") from None
    return spectra


def write_peaks_jsonl(path, spectra):
    with open(path, "w", encoding="utf-8") as fh:
        for s in spectra:
            fh.write(json.dumps({"id": s.id, "group": s.group, "peaks": list(s.peaks)}) + "\n")


def _fmt(v):
    return format(float(v), ".17g")


def write_matrix_csv(path, datasets):
    """One CSV for several groups: ``id,group,<mz>...`` with 0/1 cells."""
    datasets = list(datasets)
    mz = datasets[0].mz if datasets else np.zeros(0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "group"] + [_fmt(v) for v in mz])
        for ds in datasets:
            if not np.array_equal(ds.mz, mz):
                raise DomainError("all groups must share the same m/z columns")
            for ident, row in zip(ds.ids, ds.vectors):
                w.writerow([ident, ds.group] + [str(int(b)) for b in row])


def read_matrix_csv(path, rho=float("nan")):
    """Read a binary matrix CSV; returns ``{group: BinaryDataset}`` in order of appearance."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["id", "group"]:
        raise DomainError("matrix CSV must start with header 'id,group,...'")
    try:
        mz = np.array([float(v) for v in rows[0][2:]], dtype=np.float64)
    except ValueError:
        raise DomainError("matrix CSV header must hold numeric m/z values") from None
    groups = {}
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(mz) + 2 or any(c not in ("0", "1") for c in row[2:]):
            raise DomainError(f"line {lineno}: expected {len(mz)} binary cells")
        groups.setdefault(row[1], []).append((row[0], [int(c) for c in row[2:]]))
    sites = np.arange(1, len(mz) + 1)
    return {
        g: BinaryDataset(
            np.array([r for _, r in recs], dtype=np.uint8).reshape(len(recs), len(mz)),
            g, sites, mz, tuple(i for i, _ in recs), rho,
        )
        for g, recs in groups.items()
    }
