"""Contract records: CSV ingest, validation and the propensity design matrix."""

import csv
import io
import math
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError

GROUPS = ("DB", "DBB")
TREATED = "DB"
AUTHORITIES = ("municipality", "province", "region", "public_company", "autonomous", "central")

HEADER = (
    "contract_id",
    "group",
    "reserve_price",
    "new_build",
    "negotiation",
    "authority",
    "actual_cost",
    "actual_time",
    "agreed_cost",
    "planned_time",
    "award_year",
)

DESIGN_COLUMNS = (
    "constant",
    "reserve_price",
    "new_build",
    "negotiation",
    "province",
    "region",
    "public_company",
    "autonomous",
    "central_gov",
)
# design column -> authority it flags; municipality is the all-zero reference
_AUTHORITY_DUMMIES = {
    "province": "province",
    "region": "region",
    "public_company": "public_company",
    "autonomous": "autonomous",
    "central_gov": "central",
}

_POSITIVE = ("reserve_price", "actual_cost", "actual_time", "agreed_cost", "planned_time")
_BOOL_TEXT = {"0": False, "1": True, "false": False, "true": True}


class DataValidationError(ValidationError):
    """Input data violates the record schema or its invariants."""


@dataclass(frozen=True)
class ContractRecord:
    contract_id: str
    group: str
    reserve_price: float
    new_build: bool
    negotiation: bool
    authority: str
    actual_cost: float
    actual_time: float
    agreed_cost: float
    planned_time: float
    award_year: Optional[int] = None

    def __post_init__(self):
        if not self.contract_id:
            raise DataValidationError("contract_id must be non-empty")
        if self.group not in GROUPS:
            raise DataValidationError(
                f"record {self.contract_id!r}: group must be one of {GROUPS}, got {self.group!r}"
            )
        if self.authority not in AUTHORITIES:
            raise DataValidationError(
                f"record {self.contract_id!r}: unknown authority {self.authority!r}"
            )
        for name in _POSITIVE:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DataValidationError(
                    f"record {self.contract_id!r}: {name} must be positive and finite, got {v!r}"
                )

    @property
    def treated(self):
        return self.group == TREATED


@dataclass(frozen=True)
class DesignMatrix:
    """Covariates for the propensity model, one row per record.

    Attributes
    ----------
    X : ndarray, shape (n, 9)
        Columns in :data:`DESIGN_COLUMNS` order; column 0 is the intercept.
    treatment : ndarray of int8
        1 for design-and-build (treated) records.
    ids : tuple of str
        Contract ids aligned with the rows.
    """

    X: np.ndarray
    treatment: np.ndarray
    ids: tuple
    columns: tuple = DESIGN_COLUMNS

    def __len__(self):
        return self.X.shape[0]

    def column(self, name):
        return self.X[:, self.columns.index(name)]


def _parse_bool(text, line, col):
    try:
        return _BOOL_TEXT[text.strip().lower()]
    except KeyError:
        raise DataValidationError(f"line {line}, column {col!r}: expected 0/1/true/false, got {text!r}")


def _parse_float(text, line, col):
    try:
        v = float(text)
    except ValueError:
        raise DataValidationError(f"line {line}, column {col!r}: not a number: {text!r}")
    return v


def parse_csv(source):
    """Read contract records from CSV.

    ``source`` may be a path, a binary stream (decoded as UTF-8) or a text
    stream. The header must match :data:`HEADER`; ``award_year`` may be left
    blank, and the column itself may be omitted.
    """
    if isinstance(source, (str, bytes)) and not hasattr(source, "read"):
        with open(source, "rb") as fh:
            return parse_csv(fh)
    raw = source.read()
    text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(h.strip() for h in next(reader))
    except StopIteration:
        raise DataValidationError("empty input: header row missing")
    if header not in (HEADER, HEADER[:-1]):
        raise DataValidationError(f"unexpected header {','.join(header)}; expected {','.join(HEADER)}")

    records = []
    seen = set()
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataValidationError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        cell = dict(zip(header, (c.strip() for c in row)))
        for col in header[:-1] if header == HEADER else header:
            if cell[col] == "":
                raise DataValidationError(f"line {line}, column {col!r}: missing value")
        year = cell.get("award_year", "")
        if year:
            try:
                year = int(year)
            except ValueError:
                raise DataValidationError(f"line {line}, column 'award_year': not an integer: {year!r}")
        else:
            year = None
        group = cell["group"]
        if group not in GROUPS:
            raise DataValidationError(f"line {line}, column 'group': expected DB or DBB, got {group!r}")
        authority = cell["authority"].lower()
        if authority not in AUTHORITIES:
            raise DataValidationError(f"line {line}, column 'authority': unknown value {cell['authority']!r}")
        values = {c: _parse_float(cell[c], line, c) for c in _POSITIVE}
        for c, v in values.items():
            if not (math.isfinite(v) and v > 0):
                raise DataValidationError(
                    f"line {line}, column {c!r}: record {cell['contract_id']!r} must have positive {c}, got {v!r}"
                )
        cid = cell["contract_id"]
        if cid in seen:
            raise DataValidationError(f"line {line}: duplicate contract_id {cid!r}")
        seen.add(cid)
        records.append(
            ContractRecord(
                contract_id=cid,
                group=group,
                new_build=_parse_bool(cell["new_build"], line, "new_build"),
                negotiation=_parse_bool(cell["negotiation"], line, "negotiation"),
                authority=authority,
                award_year=year,
                **values,
            )
        )
    return records


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(records, stream=None):
    """Write records with the canonical header; returns the text if no stream."""
    out = stream if stream is not None else io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(HEADER)
    names = [f.name for f in fields(ContractRecord)]
    for r in records:
        w.writerow([_fmt(getattr(r, n)) for n in names])
    if stream is None:
        return out.getvalue()
    return None


def check_unique_ids(records):
    seen = set()
    for r in records:
        if r.contract_id in seen:
            raise DataValidationError(f"duplicate contract_id {r.contract_id!r}")
        seen.add(r.contract_id)


def build_design(records: Sequence[ContractRecord]) -> DesignMatrix:
    """Design matrix with reference-coded authority dummies (municipality = 0)."""
    if len(records) == 0:
        raise DataValidationError("cannot build a design matrix from zero records")
    n = len(records)
    X = np.zeros((n, len(DESIGN_COLUMNS)))
    X[:, 0] = 1.0
    X[:, 1] = [r.reserve_price for r in records]
    X[:, 2] = [r.new_build for r in records]
    X[:, 3] = [r.negotiation for r in records]
    auth = np.array([r.authority for r in records])
    for name, level in _AUTHORITY_DUMMIES.items():
        X[:, DESIGN_COLUMNS.index(name)] = auth == level
    treatment = np.array([r.treated for r in records], dtype=np.int8)
    return DesignMatrix(X=X, treatment=treatment, ids=tuple(r.contract_id for r in records))


def frontier_arrays(records):
    """DEA inputs (actual cost, actual time) and outputs (agreed cost, planned time)."""
    x = np.array([[r.actual_cost, r.actual_time] for r in records], dtype=float)
    y = np.array([[r.agreed_cost, r.planned_time] for r in records], dtype=float)
    return x, y
