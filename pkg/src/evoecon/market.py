"""Bilateral trading on agent records: seller choice and purchase attempts.

These functions act on :class:`~evoecon.agents.Household` and
:class:`~evoecon.agents.Firm` records and define the trading rule the
array kernels in :mod:`evoecon.kernels` apply in bulk.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

from .agents import Firm, Household, Outcome, price_update, revenue_allocation
from .sam_io import AccountKind, SAMTable, TechProfile
from .spatial import torus_distance

EXTERNAL_SELLER = -1
IMPORT_PRICE = 1.0
DEFAULT_RESERVATION = 1.0


class ContractViolation(RuntimeError):
    """A caller broke a precondition; the engine step must abort."""


@dataclass(frozen=True)
class Transaction:
    buyer: int
    seller: int
    sector: int
    units: float
    unit_price: float
    total: float
    month: int


@dataclass(frozen=True)
class DemandSignal:
    sector: int
    position: tuple[float, float]
    amount: float
    month: int


@dataclass
class Market:
    """Firms visible to buyers, with the trading radius and price step."""

    firms: dict[int, Firm]
    radius: float
    k: float = 0.002
    month: int = 0


@dataclass
class Procurement:
    outcomes: list = field(default_factory=list)
    deficit: float = 0.0

    def __iter__(self):
        return iter(self.outcomes)

    def __len__(self):
        return len(self.outcomes)


def select_seller(position, sector: int, radius: float, candidates: Iterable[Firm]) -> int | None:
    best = None
    for f in candidates:
        if f.sector != sector or f.inventory <= 0.0:
            continue
        if torus_distance(position, f.position) > radius:
            continue
        if best is None or (f.price, f.id) < (best.price, best.id):
            best = f
    return None if best is None else best.id


def _funds(buyer) -> float:
    return buyer.wealth if isinstance(buyer, Household) else buyer.cash


def _debit(buyer, amount: float) -> None:
    if isinstance(buyer, Household):
        buyer.wealth -= amount
    else:
        buyer.cash -= amount


def attempt_purchase(buyer: Household | Firm, sector: int, budget: float,
                     market: Market) -> Transaction | DemandSignal:
    """One purchase attempt by ``buyer`` in ``sector`` with the whole budget.

    Trades with the cheapest in-radius seller when its price is within the
    buyer's reservation.  A partial fill is a success.  Otherwise a
    :class:`DemandSignal` for the full budget is returned and both sides
    concede by ``k``.
    """
    if not budget > 0:
        raise ContractViolation(f"budget must be positive, got {budget}")
    if budget > _funds(buyer):
        raise ContractViolation(f"budget {budget} exceeds buyer funds {_funds(buyer)}")
    res = buyer.reservation_price.get(sector, DEFAULT_RESERVATION)
    sid = select_seller(buyer.position, sector, market.radius, market.firms.values())
    seller = None if sid is None else market.firms[sid]

    if seller is not None and seller.price <= res:
        price = seller.price
        units = min(seller.inventory, budget / price)
        total = min(units * price, _funds(buyer))
        seller.inventory -= units
        _debit(buyer, total)
        seller.cash += total
        seller.price = price_update(price, market.k, Outcome.SELLER_SOLD)
        buyer.reservation_price[sector] = price_update(res, market.k, Outcome.BUYER_BOUGHT)
        return Transaction(buyer.id, seller.id, sector, units, price, total, market.month)

    if seller is not None:
        seller.price = price_update(seller.price, market.k, Outcome.SELLER_FAILED)
    buyer.reservation_price[sector] = price_update(res, market.k, Outcome.BUYER_FAILED)
    return DemandSignal(sector, tuple(buyer.position), budget, market.month)


def input_requirements(revenue: float, profile: TechProfile, sam: SAMTable) -> tuple[dict[int, float], float]:
    """Currency owed to each supplier sector, and to imports, for ``revenue``."""
    alloc = revenue_allocation(revenue, profile)
    supplies: dict[int, float] = {}
    imports = 0.0
    for acc in sam.accounts:
        v = alloc[acc.id]
        if acc.kind is AccountKind.PRODUCING_SECTOR and v > 0:
            supplies[acc.id] = v
        elif acc.kind is AccountKind.EXTERNAL_SECTOR:
            imports += v
    return supplies, imports


def intermediate_procurement(firm: Firm, requirements: dict[int, float], market: Market,
                             imports: float = 0.0) -> Procurement:
    """Buy inputs sector by sector, with imports filled by the external seller.

    When cash falls short of the total bill every line is scaled down by the
    same factor and the gap is reported as ``deficit``.
    """
    bill = sum(v for v in requirements.values() if v > 0) + max(imports, 0.0)
    out = Procurement()
    if bill <= 0:
        return out
    scale = 1.0
    if bill > firm.cash:
        scale = max(firm.cash, 0.0) / bill
        out.deficit = bill - max(firm.cash, 0.0)
    if imports > 0 and scale > 0:
        amount = min(imports * scale, firm.cash)
        firm.cash -= amount
        out.outcomes.append(Transaction(firm.id, EXTERNAL_SELLER, EXTERNAL_SELLER,
                                        amount / IMPORT_PRICE, IMPORT_PRICE, amount, market.month))
    for sector in sorted(requirements):
        budget = min(requirements[sector] * scale, firm.cash)
        if budget > 0:
            out.outcomes.append(attempt_purchase(firm, sector, budget, market))
    return out


TRANSACTION_COLUMNS = ("month", "buyer_kind", "buyer", "seller", "sector", "units", "unit_price", "total")


class TransactionLog:
    """Appends engine transaction tuples to a CSV file, one row each."""

    def __init__(self, path, sector_codes: list[str]):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(TRANSACTION_COLUMNS)
        self._codes = sector_codes

    def write(self, rows: Iterable[tuple]) -> None:
        for month, kind, buyer, seller, s, units, price, total in rows:
            self._w.writerow((month, kind, buyer, seller, self._codes[s], repr(units), repr(price), repr(total)))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

