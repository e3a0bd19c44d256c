"""Experimental units and their containers.

A :class:`Subject` is one experimental unit: outcome ``y``, assignment
``a``, covariates ``x``, and the (known) expected assignment ``mu`` of the
randomization. A :class:`Dataset` is an immutable collection of subjects
with a declared assignment support — ``(0, 1)`` for two-sample designs and
``(1, .., k)`` for k-sample designs — plus cached numpy views.

CSV wire formats:

* unpaired:  ``y,a,x1..xd[,mu]``          (``mu`` defaults to 1/2)
* paired:    ``y1,y2,a1,a2,x1_*,x2_*``    (one row per pair)
* block:     ``block_id,y,a,x_*``         (k rows per block)
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidRandomizationError, SchemaError

__all__ = [
    "Subject",
    "Dataset",
    "PairedRecord",
    "BlockRecord",
    "load_unpaired_csv",
    "load_paired_csv",
    "load_block_csv",
]


@dataclass(frozen=True)
class Subject:
    """One experimental unit.

    ``mu`` is the expected assignment under the randomization: the
    treatment probability in (0, 1) for binary designs, or the expected
    assignment level (e.g. 2 for uniform assignment over {1,2,3}) for
    multi-level designs.
    """

    id: int
    y: float
    a: int
    x: tuple[float, ...]
    mu: float = 0.5


class Dataset:
    """Immutable collection of subjects with a common assignment support."""

    def __init__(self, subjects: Sequence[Subject], support: Sequence[int] | None = None):
        subjects = tuple(subjects)
        if not subjects:
            raise SchemaError("dataset must contain at least one subject")
        dims = {len(s.x) for s in subjects}
        if len(dims) != 1:
            raise SchemaError(f"covariate dimension must be constant, got {sorted(dims)}")
        ids = [s.id for s in subjects]
        if len(set(ids)) != len(ids):
            raise SchemaError("subject ids must be unique")

        if support is None:
            levels = sorted({s.a for s in subjects})
            if set(levels) <= {0, 1}:
                support = (0, 1)
            else:
                support = tuple(range(1, max(levels) + 1))
        support = tuple(sorted(int(v) for v in support))
        if len(support) < 2:
            raise SchemaError("assignment support must have at least two levels")

        for s in subjects:
            if s.a not in support:
                raise SchemaError(f"subject {s.id}: assignment {s.a} outside support {support}")
            if support == (0, 1):
                if not (0.0 < s.mu < 1.0):
                    raise InvalidRandomizationError(
                        f"subject {s.id}: mu={s.mu} must lie strictly inside (0, 1)"
                    )
            elif not (support[0] < s.mu < support[-1]):
                raise InvalidRandomizationError(
                    f"subject {s.id}: expected assignment {s.mu} must lie strictly "
                    f"inside ({support[0]}, {support[-1]})"
                )

        self._subjects = subjects
        self._support = support
        self._by_id = {s.id: s for s in subjects}
        self._y = np.array([s.y for s in subjects], dtype=float)
        self._a = np.array([s.a for s in subjects], dtype=int)
        self._x = np.array([s.x for s in subjects], dtype=float).reshape(len(subjects), -1)
        self._mu = np.array([s.mu for s in subjects], dtype=float)

    # -- container protocol -------------------------------------------------

    def __len__(self) -> int:
        return len(self._subjects)

    def __iter__(self):
        return iter(self._subjects)

    def __getitem__(self, subject_id: int) -> Subject:
        return self._by_id[subject_id]

    def __contains__(self, subject_id: int) -> bool:
        return subject_id in self._by_id

    @property
    def subjects(self) -> tuple[Subject, ...]:
        return self._subjects

    @property
    def support(self) -> tuple[int, ...]:
        return self._support

    @property
    def is_binary(self) -> bool:
        return self._support == (0, 1)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(s.id for s in self._subjects)

    # -- array views (read-only) --------------------------------------------

    @property
    def y(self) -> np.ndarray:
        return self._y.copy()

    @property
    def a(self) -> np.ndarray:
        return self._a.copy()

    @property
    def x(self) -> np.ndarray:
        return self._x.copy()

    @property
    def mu(self) -> np.ndarray:
        return self._mu.copy()

    @property
    def n_covariates(self) -> int:
        return self._x.shape[1]

    def index_of(self, subject_id: int) -> int:
        """Row index of ``subject_id`` in the array views."""
        try:
            return self.ids.index(subject_id)
        except ValueError:
            raise KeyError(subject_id) from None

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        y: Iterable[float],
        a: Iterable[int],
        x: np.ndarray,
        mu: float | Iterable[float] = 0.5,
        support: Sequence[int] | None = None,
        ids: Iterable[int] | None = None,
    ) -> "Dataset":
        y = np.asarray(list(y), dtype=float)
        a = np.asarray(list(a), dtype=int)
        x = np.asarray(x, dtype=float).reshape(len(y), -1)
        mu_arr = np.broadcast_to(np.asarray(mu, dtype=float), y.shape)
        ids = list(ids) if ids is not None else list(range(len(y)))
        subjects = [
            Subject(
                id=int(i),
                y=float(yy),
                a=int(aa),
                x=tuple(float(v) for v in xx),
                mu=float(mm),
            )
            for i, yy, aa, xx, mm in zip(ids, y, a, x, mu_arr)
        ]
        return cls(subjects, support=support)

    def extended(self, new_subjects: Sequence[Subject]) -> "Dataset":
        """New dataset with ``new_subjects`` appended (ids must be fresh)."""
        return Dataset(self._subjects + tuple(new_subjects), support=self._support)

    def digest(self) -> str:
        """SHA-256 over the canonical row representation."""
        h = hashlib.sha256()
        for s in self._subjects:
            row = f"{s.id}|{s.y!r}|{s.a}|{','.join(repr(v) for v in s.x)}|{s.mu!r}\n"
            h.update(row.encode())
        return h.hexdigest()


@dataclass(frozen=True)
class PairedRecord:
    """A matched pair with exactly one treated member."""

    pair_id: int
    y1: float
    y2: float
    a1: int
    a2: int
    x1: tuple[float, ...] = ()
    x2: tuple[float, ...] = ()


@dataclass(frozen=True)
class BlockRecord:
    """A block of k subjects whose assignments form a permutation of 1..k."""

    block_id: int
    y: tuple[float, ...]
    a: tuple[int, ...]
    x: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        k = len(self.y)
        if not (len(self.a) == k and len(self.x) == k):
            raise SchemaError(f"block {self.block_id}: y/a/x lengths differ")
        if sorted(self.a) != list(range(1, k + 1)):
            raise SchemaError(
                f"block {self.block_id}: assignments {self.a} are not a permutation of 1..{k}"
            )


# -- CSV loaders -------------------------------------------------------------


def _read_rows(text: str) -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise SchemaError("empty CSV")
    header = [c.strip().lower() for c in rows[0]]
    return header, rows[1:]


def load_unpaired_csv(text: str, support: Sequence[int] | None = None) -> Dataset:
    """Parse the ``y,a,x1..xd[,mu]`` schema into a :class:`Dataset`."""
    header, rows = _read_rows(text)
    if len(header) < 2 or header[0] != "y" or header[1] != "a":
        raise SchemaError(f"unpaired CSV must start with columns y,a; got {header[:2]}")
    has_mu = header[-1] == "mu"
    x_cols = header[2 : len(header) - 1 if has_mu else len(header)]
    for j, name in enumerate(x_cols):
        if name != f"x{j + 1}":
            raise SchemaError(f"covariate columns must be x1..xd in order; got {name!r}")
    subjects = []
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"row {i + 1}: expected {len(header)} fields, got {len(row)}")
        try:
            y = float(row[0])
            a = int(float(row[1]))
            x = tuple(float(v) for v in row[2 : 2 + len(x_cols)])
            mu = float(row[-1]) if has_mu else 0.5
        except ValueError as exc:
            raise SchemaError(f"row {i + 1}: {exc}") from None
        subjects.append(Subject(id=i, y=y, a=a, x=x, mu=mu))
    return Dataset(subjects, support=support)


def load_paired_csv(text: str) -> list[PairedRecord]:
    """Parse the ``y1,y2,a1,a2,x1_*,x2_*`` schema into paired records."""
    header, rows = _read_rows(text)
    if header[:4] != ["y1", "y2", "a1", "a2"]:
        raise SchemaError(f"paired CSV must start with y1,y2,a1,a2; got {header[:4]}")
    x1_cols = [j for j, c in enumerate(header) if c.startswith("x1_")]
    x2_cols = [j for j, c in enumerate(header) if c.startswith("x2_")]
    records = []
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"row {i + 1}: expected {len(header)} fields, got {len(row)}")
        try:
            records.append(
                PairedRecord(
                    pair_id=i,
                    y1=float(row[0]),
                    y2=float(row[1]),
                    a1=int(float(row[2])),
                    a2=int(float(row[3])),
                    x1=tuple(float(row[j]) for j in x1_cols),
                    x2=tuple(float(row[j]) for j in x2_cols),
                )
            )
        except ValueError as exc:
            raise SchemaError(f"row {i + 1}: {exc}") from None
    return records


def load_block_csv(text: str) -> list[BlockRecord]:
    """Parse the ``block_id,y,a,x_*`` schema into block records."""
    header, rows = _read_rows(text)
    if header[:3] != ["block_id", "y", "a"]:
        raise SchemaError(f"block CSV must start with block_id,y,a; got {header[:3]}")
    x_cols = [j for j, c in enumerate(header) if c.startswith("x_")]
    grouped: dict[int, list[tuple[float, int, tuple[float, ...]]]] = {}
    order: list[int] = []
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"row {i + 1}: expected {len(header)} fields, got {len(row)}")
        try:
            bid = int(float(row[0]))
            y = float(row[1])
            a = int(float(row[2]))
            x = tuple(float(row[j]) for j in x_cols)
        except ValueError as exc:
            raise SchemaError(f"row {i + 1}: {exc}") from None
        if bid not in grouped:
            grouped[bid] = []
            order.append(bid)
        grouped[bid].append((y, a, x))
    records = []
    for bid in order:
        members = grouped[bid]
        records.append(
            BlockRecord(
                block_id=bid,
                y=tuple(m[0] for m in members),
                a=tuple(m[1] for m in members),
                x=tuple(m[2] for m in members),
            )
        )
    return records
