"""Social Accounting Matrix ingestion and the per-sector cost profiles derived from it.

A SAM is stored as a dense square matrix over named accounts.  Columns of
producing sectors describe where each euro of sector revenue goes; those
column shares are the cost structure every firm of the sector must follow.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLSUM_LABEL = "colSUM"

# Relative mismatch between a declared colSUM and the summed column.
COLSUM_WARN_RTOL = 1e-6
COLSUM_ERROR_RTOL = 1e-3
BALANCE_WARN_RTOL = 0.05


class SAMError(ValueError):
    """Base class for SAM ingestion errors."""


class SAMParseError(SAMError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class SAMStructureError(SAMError):
    pass


class DegenerateSectorError(SAMError):
    pass


class SAMConfigError(SAMError):
    pass


class SAMWarning(UserWarning):
    pass


class AccountKind(enum.Enum):
    PRODUCING_SECTOR = "ProducingSector"
    GFCF = "GFCF"
    EXTERNAL_SECTOR = "ExternalSector"
    PRIMARY_INPUT = "PrimaryInput"
    TAX = "Tax"
    GOVERNMENT = "Government"
    HOUSEHOLDS = "Households"


_PREFIX_KIND = {
    "P": AccountKind.PRODUCING_SECTOR,
    "N": AccountKind.PRODUCING_SECTOR,
    "F": AccountKind.GFCF,
    "X": AccountKind.EXTERNAL_SECTOR,
    "L": AccountKind.PRIMARY_INPUT,
    "K": AccountKind.PRIMARY_INPUT,
    "T": AccountKind.TAX,
    "G": AccountKind.GOVERNMENT,
    "H": AccountKind.HOUSEHOLDS,
}


def classify(code: str) -> AccountKind:
    """Account kind from the code's first letter; unprefixed codes are sectors."""
    return _PREFIX_KIND.get(code[:1].upper(), AccountKind.PRODUCING_SECTOR)


@dataclass(frozen=True)
class Account:
    id: int
    code: str
    kind: AccountKind

    @property
    def market(self) -> bool:
        """True for producing sectors that sell to households (P-prefixed)."""
        return self.kind is AccountKind.PRODUCING_SECTOR and self.code[:1].upper() == "P"


@dataclass(frozen=True)
class SAMTable:
    accounts: tuple[Account, ...]
    values: np.ndarray
    col_sums: np.ndarray
    declared_col_sums: np.ndarray
    # codes of columns absent from the source file, stored as zeros
    missing_columns: frozenset[str] = frozenset()

    def __post_init__(self):
        self.values.setflags(write=False)
        self.col_sums.setflags(write=False)
        self.declared_col_sums.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.accounts)

    def index(self, code: str) -> int:
        for acc in self.accounts:
            if acc.code == code:
                return acc.id
        raise KeyError(code)

    def of_kind(self, kind: AccountKind) -> list[Account]:
        return [a for a in self.accounts if a.kind is kind]

    @property
    def sectors(self) -> list[Account]:
        return self.of_kind(AccountKind.PRODUCING_SECTOR)

    def value(self, row: str, col: str) -> float:
        return float(self.values[self.index(row), self.index(col)])

    def to_bytes(self) -> bytes:
        """Canonical byte form, used to check that parsing is pure."""
        head = ",".join(f"{a.code}:{a.kind.value}" for a in self.accounts).encode()
        miss = ",".join(sorted(self.missing_columns)).encode()
        return b"|".join(
            [head, miss, self.values.tobytes(), self.col_sums.tobytes(), self.declared_col_sums.tobytes()]
        )


def _number(cell: str, line: int, code: str) -> float:
    try:
        x = float(cell)
    except ValueError:
        raise SAMParseError(f"non-numeric cell {cell!r} in row {code}", line) from None
    if not math.isfinite(x):
        raise SAMParseError(f"non-finite cell {cell!r} in row {code}", line)
    return x


def parse_sam(text: str | io.TextIOBase) -> SAMTable:
    """Parse CSV text into a square :class:`SAMTable`.

    The first column holds row account codes, the header row holds column
    codes and the final row is labelled ``colSUM``.  Accounts present as rows
    but not as columns are stored as zero columns and listed in
    ``missing_columns``.
    """
    if not isinstance(text, str):
        text = text.read()
    try:
        rows = list(csv.reader(io.StringIO(text)))
    except csv.Error as exc:
        raise SAMParseError(str(exc)) from None
    # keep physical line numbers while skipping blank lines
    numbered = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if len(numbered) < 2:
        raise SAMParseError("need a header row and a colSUM row", 1)

    header_line, header = numbered[0]
    col_codes = [c.strip() for c in header[1:]]
    if not col_codes or any(not c for c in col_codes):
        raise SAMParseError("empty column code in header", header_line)
    if len(set(col_codes)) != len(col_codes):
        raise SAMStructureError("duplicate column account codes in header")

    width = len(header)
    body = numbered[1:]
    last_line, last = body[-1]
    if last[0].strip() != COLSUM_LABEL:
        raise SAMParseError(f"final row must be {COLSUM_LABEL!r}", last_line)

    row_codes: list[str] = []
    data: list[list[float]] = []
    for line, r in body[:-1]:
        if len(r) != width:
            raise SAMParseError(f"expected {width} fields, got {len(r)}", line)
        code = r[0].strip()
        if not code:
            raise SAMParseError("empty row account code", line)
        if code == COLSUM_LABEL:
            raise SAMParseError("colSUM row must be last", line)
        row_codes.append(code)
        data.append([_number(c, line, code) for c in r[1:]])
    if len(last) != width:
        raise SAMParseError(f"expected {width} fields, got {len(last)}", last_line)
    declared = [_number(c, last_line, COLSUM_LABEL) for c in last[1:]]

    if len(set(row_codes)) != len(row_codes):
        dup = sorted({c for c in row_codes if row_codes.count(c) > 1})
        raise SAMStructureError(f"duplicate row account codes: {', '.join(dup)}")
    unknown = [c for c in col_codes if c not in row_codes]
    if unknown:
        raise SAMStructureError(f"column accounts without a row: {', '.join(unknown)}")

    accounts = tuple(Account(i, c, classify(c)) for i, c in enumerate(row_codes))
    n = len(accounts)
    pos = {c: i for i, c in enumerate(row_codes)}
    values = np.zeros((n, n))
    declared_full = np.zeros(n)
    for j, code in enumerate(col_codes):
        values[:, pos[code]] = [row[j] for row in data]
        declared_full[pos[code]] = declared[j]
    missing = frozenset(c for c in row_codes if c not in col_codes)
    return SAMTable(accounts, values, values.sum(axis=0), declared_full, missing)


def load_sam(path: str | Path) -> SAMTable:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_sam(fh.read())


@dataclass(frozen=True)
class Finding:
    severity: str  # "ERROR" or "WARNING"
    account: str
    message: str

    def render(self) -> str:
        return f"{self.severity} {self.account}: {self.message}"


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    def add(self, severity: str, account: str, message: str) -> None:
        self.findings.append(Finding(severity, account, message))

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "ERROR"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "WARNING"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def render(self) -> str:
        return "\n".join(f.render() for f in self.findings)


def validate_sam(sam: SAMTable) -> ValidationReport:
    """Check a parsed SAM; every problem becomes a finding, nothing raises."""
    report = ValidationReport()
    computed, declared = sam.col_sums, sam.declared_col_sums
    for acc in sam.accounts:
        j = acc.id
        if acc.code in sam.missing_columns:
            report.add("WARNING", acc.code, "column absent from source, zero-filled")
            continue
        gap = abs(computed[j] - declared[j])
        scale = max(abs(declared[j]), abs(computed[j]))
        rel = gap / scale if scale > 0 else 0.0
        if rel > COLSUM_ERROR_RTOL:
            report.add("ERROR", acc.code, f"colSUM {declared[j]:g} != column total {computed[j]:g} (rel {rel:.3g})")
        elif rel > COLSUM_WARN_RTOL:
            report.add(
                "WARNING",
                acc.code,
                f"colSUM {declared[j]:g} differs from column total {computed[j]:g} (rel {rel:.3g}); using column total",
            )

    for acc in sam.accounts:
        if acc.kind is AccountKind.TAX:
            continue
        neg = np.flatnonzero(sam.values[acc.id] < 0)
        if neg.size:
            cols = ", ".join(sam.accounts[k].code for k in neg)
            report.add("ERROR", acc.code, f"negative entries outside a tax row (columns {cols})")

    for acc in sam.sectors:
        if acc.code not in sam.missing_columns and not np.any(sam.values[:, acc.id]):
            report.add("WARNING", acc.code, "producing-sector column is all zero")

    row_sums = sam.values.sum(axis=1)
    for acc in sam.accounts:
        r, c = row_sums[acc.id], computed[acc.id]
        scale = max(abs(r), abs(c))
        if scale == 0:
            continue
        if abs(r - c) / scale > BALANCE_WARN_RTOL:
            report.add("WARNING", acc.code, f"row total {r:g} vs column total {c:g} out of balance")
    return report


@dataclass(frozen=True)
class TechProfile:
    sector: int
    input_shares: dict[int, float]
    wage_share: float
    surplus_share: float
    tax_shares: dict[int, float]
    import_share: float
    # rows outside the named categories (GFCF, government, household rows)
    other_shares: dict[int, float] = field(default_factory=dict)
    # raw SAM column and its total, kept so allocations stay exact
    column: tuple[float, ...] = ()
    col_sum: float = 0.0

    def total(self) -> float:
        return (
            sum(self.input_shares.values())
            + self.wage_share
            + self.surplus_share
            + sum(self.tax_shares.values())
            + self.import_share
            + sum(self.other_shares.values())
        )


def tech_profile(sam: SAMTable, sector: int) -> TechProfile:
    acc = sam.accounts[sector]
    if acc.kind is not AccountKind.PRODUCING_SECTOR:
        raise SAMStructureError(f"{acc.code} is not a producing sector")
    total = sam.col_sums[sector]
    if not total > 0:
        raise DegenerateSectorError(f"{acc.code} has column total {total:g}")
    col = sam.values[:, sector] / total

    inputs: dict[int, float] = {}
    taxes: dict[int, float] = {}
    other: dict[int, float] = {}
    wage = surplus = imports = 0.0
    for row in sam.accounts:
        share = float(col[row.id])
        if row.kind is AccountKind.PRODUCING_SECTOR:
            inputs[row.id] = share
        elif row.kind is AccountKind.TAX:
            taxes[row.id] = share
        elif row.kind is AccountKind.EXTERNAL_SECTOR:
            imports += share
        elif row.kind is AccountKind.PRIMARY_INPUT:
            if row.code[:1].upper() == "L":
                wage += share
            else:
                surplus += share
        else:
            other[row.id] = share
    if wage < 0 or imports < 0 or any(v < 0 for v in inputs.values()):
        raise SAMStructureError(f"{acc.code} has negative input, wage or import share")
    return TechProfile(
        sector, inputs, wage, surplus, taxes, imports, other,
        column=tuple(float(v) for v in sam.values[:, sector]), col_sum=float(total),
    )


def consumption_basket(sam: SAMTable, *, fallback: bool = True) -> dict[int, float]:
    """Household budget shares over producing sectors.

    Taken from the Households column when it carries spending on producing
    sectors; otherwise uniform over market (P-prefixed) sectors, with a
    :class:`SAMWarning`.
    """
    households = sam.of_kind(AccountKind.HOUSEHOLDS)
    sectors = sam.sectors
    spend = np.zeros(len(sectors))
    if households:
        h = households[0].id
        spend = np.array([sam.values[s.id, h] for s in sectors])
    if np.any(spend < 0):
        raise SAMConfigError("Households column has negative spending on a producing sector")
    total = spend.sum()
    if total > 0:
        return {s.id: float(v / total) for s, v in zip(sectors, spend)}
    if not fallback:
        raise SAMConfigError("Households column is absent or zero and fallback is disabled")
    market = [s for s in sectors if s.market] or sectors
    warnings.warn(
        f"no household consumption column; uniform basket over {len(market)} market sectors",
        SAMWarning,
        stacklevel=2,
    )
    share = 1.0 / len(market)
    return {s.id: (share if s in market else 0.0) for s in sectors}
