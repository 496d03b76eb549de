"""Agent records and the pure behavioural rules they evaluate each month."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .sam_io import TechProfile

PRICE_FLOOR = 1e-6
INCOME_WINDOW = 12
DEMAND_WINDOW = 3


class Outcome(enum.Enum):
    SELLER_SOLD = "SellerSold"
    SELLER_FAILED = "SellerFailed"
    BUYER_BOUGHT = "BuyerBought"
    BUYER_FAILED = "BuyerFailed"


_DIRECTION = {
    Outcome.SELLER_SOLD: 1,
    Outcome.SELLER_FAILED: -1,
    Outcome.BUYER_BOUGHT: -1,
    Outcome.BUYER_FAILED: 1,
}


@dataclass(frozen=True)
class ConsumptionParams:
    kappa: float
    phi: float
    propensity: float = 0.55

    def __post_init__(self):
        if not 0 <= self.kappa <= 1:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.phi < 0:
            raise ValueError(f"phi must be nonnegative, got {self.phi}")
        if not 0 < self.propensity <= 1:
            raise ValueError(f"propensity must lie in (0, 1], got {self.propensity}")


def consumption_target(income_mean: float, wealth: float, params: ConsumptionParams) -> float:
    """Monthly spending target ``I + kappa * (W - phi * I)``.

    Households spend their mean income and close a fraction ``kappa`` of the
    gap between wealth and a buffer of ``phi`` months of income.  The result
    is clamped to ``[0, wealth]``.
    """
    c = income_mean + params.kappa * (wealth - params.phi * income_mean)
    return min(max(c, 0.0), max(wealth, 0.0))


def price_update(price: float, k: float, outcome: Outcome) -> float:
    """Multiplicative adjustment by ``1 +/- k`` after a transaction attempt.

    Sellers raise after a sale and cut after a rejection; buyers move their
    reservation level the other way.
    """
    if _DIRECTION[outcome] > 0:
        new = price * (1.0 + k)
    else:
        new = price * (1.0 - k)
    return max(new, PRICE_FLOOR)


def revenue_allocation(revenue: float, profile: TechProfile) -> dict[int, float]:
    """Split revenue over every row account in proportion to the sector column."""
    if revenue < 0:
        raise ValueError("revenue must be nonnegative")
    total = profile.col_sum
    return {i: revenue * v / total for i, v in enumerate(profile.column)}


def target_inventory(demand_history, multiple: float = 2.0, bootstrap: float = 1.0) -> float:
    """Stock to hold: ``multiple`` times mean recent demand, or a bootstrap unit."""
    hist = [float(d) for d in demand_history]
    if not hist:
        return bootstrap
    return multiple * (sum(hist) / len(hist))


class RingBuffer:
    """Fixed-capacity FIFO of floats; oldest values fall off the front."""

    __slots__ = ("capacity", "_data")

    def __init__(self, capacity: int, values=()):
        self.capacity = capacity
        self._data: list[float] = []
        for v in values:
            self.push(v)

    def push(self, value: float) -> None:
        self._data.append(float(value))
        if len(self._data) > self.capacity:
            del self._data[0]

    def mean(self) -> float:
        return sum(self._data) / len(self._data) if self._data else 0.0

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def __repr__(self):
        return f"RingBuffer({self.capacity}, {self._data})"


@dataclass
class Household:
    id: int
    position: tuple[float, float]
    wealth: float
    income_history: RingBuffer = field(default_factory=lambda: RingBuffer(INCOME_WINDOW))
    employer: int | None = None
    owned_firms: list[int] = field(default_factory=list)
    reservation_price: dict[int, float] = field(default_factory=dict)


@dataclass
class Firm:
    id: int
    position: tuple[float, float]
    sector: int
    price: float
    inventory: float
    cash: float
    employees: list[int]
    demand_history: RingBuffer
    months_insolvent: int = 0
    owner: int | None = None
    # reservation levels used when the firm buys inputs
    reservation_price: dict[int, float] = field(default_factory=dict)


@dataclass
class InstitutionalAccounts:
    bank_deposits: float = 0.0
    government_cash: float = 0.0
    bonds_outstanding: float = 0.0
    external_balance: float = 0.0
    gfcf_pool: float = 0.0
    interest_rate: float = 0.0

    def money(self) -> float:
        return self.bank_deposits + self.government_cash + self.external_balance + self.gfcf_pool

