"""World state and the ordered monthly step.

The economy starts with households only.  Failed purchases leave demand
signals, households found firms in response, and firms live or die on
whether revenue allocated by their sector's SAM column covers their payroll.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import pickle
import typing
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .agents import (
    DEMAND_WINDOW,
    INCOME_WINDOW,
    PRICE_FLOOR,
    ConsumptionParams,
    Firm,
    Household,
    InstitutionalAccounts,
    RingBuffer,
)
from .metrics import snapshot
from .sam_io import (
    AccountKind,
    SAMTable,
    SAMWarning,
    consumption_basket,
    load_sam,
    tech_profile,
    validate_sam,
)
from .spatial import NeighborhoodIndex, neighbor_csr, place_agents, radius_for

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "evoecon-checkpoint"
CHECKPOINT_VERSION = 1
CONSERVATION_RTOL = 1e-6
TAX_SHARE_BOUNDS = (-0.5, 0.9)
BACKLOG_MONTHS = 3.0
FLOW_KEYS = ("wages", "income_tax", "firm_taxes", "transfers", "procurement", "consumption", "exports",
             "investment", "imports", "gfcf_funding", "inputs", "dividends")
MAX_INCOME_TAX = 0.6


class DeploymentError(RuntimeError):
    pass


class ConservationError(RuntimeError):
    pass


class PolicyError(ValueError):
    pass


@dataclass
class SimConfig:
    sam_path: str = "data/spain6_2008.csv"
    active_population: float = 5.0e6
    unemployment_target: float = 0.044
    wealth_target: float = 1.5e12
    propensity: float = 0.55
    firm_births_per_year: float = 36000.0
    # annual probability per non-owner household
    startup_probability: float = 0.007
    workers_per_million_per_sector: float = 10.0
    price_k: float = 0.002
    inventory_multiple: float = 2.0
    phi: float = 6.0
    # None derives kappa = propensity / phi
    kappa: typing.Optional[float] = None
    neighborhood_size_target: float = 50.0
    seed: int = 42
    months: int = 600
    # 0 derives the head count from the per-sector scaling rule
    n_workers: int = 0
    # currency of one SAM cell, in euros
    sam_unit: float = 1.0e6
    wage_scale: float = 1.0
    dividend_payout: float = 0.5
    buffer_months: float = 3.0
    insolvency_months: int = 3
    max_hires: int = 2
    max_fires: int = 2
    workers_per_firm: float = 8.0
    transfer_ratio: float = 0.5
    startup_wealth_fraction: float = 0.5
    bootstrap_stock: float = 1.0
    income_tax_rate: typing.Optional[float] = None
    gfcf_fraction: typing.Optional[float] = None
    # income-tax rate moves by gain * deficit / SAM-scale tax base each month
    fiscal_gain: float = 0.02
    fiscal_start: int = 0
    basket_fallback: bool = True
    check_conservation: bool = True

    def __post_init__(self):
        checks = {
            "active_population": self.active_population > 0,
            "unemployment_target": 0 < self.unemployment_target < 1,
            "wealth_target": self.wealth_target > 0,
            "propensity": 0 < self.propensity <= 1,
            "startup_probability": 0 <= self.startup_probability <= 1,
            "price_k": 0 <= self.price_k < 1,
            "inventory_multiple": self.inventory_multiple > 0,
            "phi": self.phi >= 0,
            "kappa": self.kappa is None or 0 <= self.kappa <= 1,
            "neighborhood_size_target": self.neighborhood_size_target > 0,
            "months": self.months >= 0,
            "n_workers": self.n_workers >= 0,
            "wage_scale": self.wage_scale > 0,
            "dividend_payout": 0 <= self.dividend_payout <= 1,
            "insolvency_months": self.insolvency_months >= 1,
            "transfer_ratio": self.transfer_ratio >= 0,
            "startup_wealth_fraction": 0 < self.startup_wealth_fraction <= 1,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"config values out of range: {', '.join(bad)}")

    @property
    def consumption(self) -> ConsumptionParams:
        kappa = self.propensity / self.phi if self.kappa is None and self.phi > 0 else self.kappa
        return ConsumptionParams(kappa=min(1.0, kappa if kappa is not None else self.propensity),
                                 phi=self.phi, propensity=self.propensity)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def coerce(cls, key: str, raw: str):
        hints = typing.get_type_hints(cls)
        if key not in hints:
            raise KeyError(f"unknown config key {key!r}")
        kind = hints[key]
        if typing.get_origin(kind) is typing.Union:
            if raw.strip().lower() in ("", "none", "auto"):
                return None
            kind = next(a for a in typing.get_args(kind) if a is not type(None))
        raw = raw.strip()
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{key}: not a boolean: {raw!r}")
        if kind is int:
            return int(float(raw))
        return kind(raw)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "SimConfig":
        """Read a flat ``key = value`` file; ``sam_path`` resolves against its directory."""
        path = Path(path)
        values: dict[str, typing.Any] = {}
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key = value")
            key, raw = (p.strip() for p in line.split("=", 1))
            values[key] = cls.coerce(key, raw)
        values.update({k: v for k, v in overrides.items() if v is not None})
        sam = values.get("sam_path")
        if sam and "sam_path" not in overrides and not Path(sam).is_absolute():
            values["sam_path"] = str((path.parent / sam).resolve())
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'auto' if v is None else v}")
        return "\n".join(lines) + "\n"


@dataclass
class Policy:
    month: int
    kind: str
    value: float
    sector: typing.Optional[str] = None


POLICY_KINDS = ("TaxProductsRateDelta",)


def parse_policies(text: str) -> list[Policy]:
    """One intervention per line: ``month,kind,value[,sector]``."""
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            raise PolicyError(f"line {n}: expected month,kind,value[,sector]")
        if parts[1] not in POLICY_KINDS:
            raise PolicyError(f"line {n}: unknown policy kind {parts[1]!r}")
        try:
            month, value = int(parts[0]), float(parts[2])
        except ValueError:
            raise PolicyError(f"line {n}: bad month or value") from None
        out.append(Policy(month, parts[1], value, parts[3] if len(parts) == 4 else None))
    return out


@dataclass
class Economy:
    """Static, SAM-derived quantities for one deployment."""

    sam: SAMTable
    codes: list[str]
    account_ids: np.ndarray
    market: np.ndarray
    basket: np.ndarray
    n_workers: int
    scale: float
    monthly: float
    headcount_full: np.ndarray
    base_wage: float
    productivity: np.ndarray
    input_shares: np.ndarray
    import_share: np.ndarray
    wage_share: np.ndarray
    surplus_share: np.ndarray
    tax_ids: list[int]
    tax_shares: np.ndarray
    products_tax_col: int
    gfcf_fraction: float
    gfcf_weights: np.ndarray
    gfcf_tax_share: float
    gfcf_import_share: float
    export_stream: typing.Optional[np.ndarray]
    export_weights: np.ndarray
    procurement: np.ndarray
    household_target: np.ndarray
    income_tax_rate: float
    taxable_base: float
    radius: float
    area_fraction: float
    sector_capital: np.ndarray

    @property
    def n_sectors(self) -> int:
        return len(self.codes)

    def sector_of(self, code: str) -> int:
        return self.codes.index(code)


def build_economy(sam: SAMTable, config: SimConfig) -> Economy:
    sectors = sam.sectors
    S = len(sectors)
    ids = np.array([a.id for a in sectors])
    codes = [a.code for a in sectors]
    market = np.array([a.market for a in sectors])
    basket_map = consumption_basket(sam, fallback=config.basket_fallback)
    basket = np.array([basket_map[i] for i in ids])

    n = config.n_workers or int(round(config.workers_per_million_per_sector * config.active_population / 1e6 * S))
    scale = config.active_population / n
    monthly = config.sam_unit / 12.0 / scale

    by_kind = {k: [a.id for a in sam.of_kind(k)] for k in AccountKind}
    wage_rows = [i for i in by_kind[AccountKind.PRIMARY_INPUT] if sam.accounts[i].code[:1].upper() == "L"]
    surplus_rows = [i for i in by_kind[AccountKind.PRIMARY_INPUT] if i not in wage_rows]
    tax_ids = by_kind[AccountKind.TAX]
    ext_rows = by_kind[AccountKind.EXTERNAL_SECTOR]
    V, cs = sam.values, sam.col_sums

    profiles = [tech_profile(sam, int(i)) for i in ids]
    input_shares = np.array([[p.input_shares.get(int(j), 0.0) for j in ids] for p in profiles])
    import_share = np.array([p.import_share for p in profiles])
    wage_share = np.array([p.wage_share for p in profiles])
    surplus_share = np.array([p.surplus_share for p in profiles])
    tax_shares = np.array([[p.tax_shares.get(t, 0.0) for t in tax_ids] for p in profiles]).reshape(S, len(tax_ids))
    products = [k for k, t in enumerate(tax_ids) if "product" in sam.accounts[t].code.lower()]
    products_tax_col = products[0] if products else (len(tax_ids) - 1 if tax_ids else -1)

    wage_bill = V[np.ix_(wage_rows, ids)].sum(axis=0) if wage_rows else np.zeros(S)
    employed = n * (1.0 - config.unemployment_target)
    headcount_full = employed * wage_bill / wage_bill.sum()
    base_wage = wage_bill.sum() * monthly / employed
    productivity = np.where(headcount_full > 0, cs[ids] * monthly / np.maximum(headcount_full, 1e-12), cs[ids] * monthly)

    surplus_total = V[np.ix_(surplus_rows, ids)].sum() if surplus_rows else 0.0
    gfcf_cols = by_kind[AccountKind.GFCF]
    gfcf_weights = np.zeros(S)
    gfcf_tax = gfcf_imp = 0.0
    gfcf_total = 0.0
    if gfcf_cols and cs[gfcf_cols[0]] > 0:
        g = gfcf_cols[0]
        gfcf_total = cs[g]
        gfcf_weights = V[ids, g] / cs[g]
        gfcf_tax = V[tax_ids, g].sum() / cs[g] if tax_ids else 0.0
        gfcf_imp = V[ext_rows, g].sum() / cs[g] if ext_rows else 0.0
    if config.gfcf_fraction is not None:
        gfcf_fraction = config.gfcf_fraction
    else:
        gfcf_fraction = min(1.0, gfcf_total / surplus_total) if surplus_total > 0 else 0.0

    # row use of each sector's output by producers and investment
    row_use = V[np.ix_(ids, ids)].sum(axis=1) + (V[ids, gfcf_cols[0]] if gfcf_cols else 0.0)
    residual = np.maximum(cs[ids] - row_use, 0.0)
    imports_total = V[np.ix_(ext_rows, ids)].sum() if ext_rows else 0.0
    export_stream = None
    if ext_rows and sam.accounts[ext_rows[0]].code not in sam.missing_columns:
        x = V[ids, ext_rows[0]]
        if x.sum() > 0:
            export_stream = x * monthly
    w = np.where(market, residual, 0.0)
    export_weights = w / w.sum() if w.sum() > 0 else np.where(market, 1.0, 0.0) / max(market.sum(), 1)

    # government buys the whole output of non-market sectors
    procurement = np.where(market, 0.0, cs[ids] * monthly)

    hh_rows = by_kind[AccountKind.HOUSEHOLDS]
    h_col = V[ids, hh_rows[0]] if hh_rows else np.zeros(S)
    if h_col.sum() > 0:
        household_total = h_col.sum()
    else:
        # final demand of market sectors net of recycled imports
        household_total = max(residual[market].sum() - imports_total, 0.0)
    household_target = basket * household_total * monthly

    transfers = config.unemployment_target * n * config.transfer_ratio * base_wage
    taxable = (wage_bill.sum() + surplus_total * (1.0 - gfcf_fraction)) * monthly
    if config.income_tax_rate is not None:
        income_tax = config.income_tax_rate
    else:
        taxes = (V[np.ix_(tax_ids, ids)].sum() + gfcf_tax * gfcf_total) * monthly if tax_ids else 0.0
        need = procurement.sum() + transfers - taxes
        income_tax = min(max(need / taxable, 0.0), 0.9) if taxable > 0 else 0.0

    radius = radius_for(config.neighborhood_size_target, n)
    expected_firms = np.maximum(1.0, headcount_full / config.workers_per_firm)
    return Economy(
        sam=sam, codes=codes, account_ids=ids, market=market, basket=basket,
        n_workers=n, scale=scale, monthly=monthly,
        headcount_full=headcount_full, base_wage=base_wage, productivity=productivity,
        input_shares=input_shares, import_share=import_share, wage_share=wage_share,
        surplus_share=surplus_share, tax_ids=tax_ids, tax_shares=tax_shares,
        products_tax_col=products_tax_col, gfcf_fraction=gfcf_fraction,
        gfcf_weights=gfcf_weights, gfcf_tax_share=gfcf_tax, gfcf_import_share=gfcf_imp,
        export_stream=export_stream, export_weights=export_weights,
        procurement=procurement, household_target=household_target,
        income_tax_rate=income_tax, taxable_base=taxable, radius=radius, area_fraction=min(1.0, math.pi * radius**2),
        sector_capital=cs[ids] * monthly / expected_firms,
    )


class SimState:
    """Complete, picklable world state.  Firm arrays grow by doubling."""

    def __init__(self, config: SimConfig, economy: Economy, positions: np.ndarray,
                 rng: np.random.Generator, nbr_ptr: np.ndarray, nbr_idx: np.ndarray):
        N, S = economy.n_workers, economy.n_sectors
        self.config = config
        self.economy = economy
        self.month = 0
        self.rng = rng
        self.hh_pos = positions
        self.wealth = np.full(N, config.wealth_target / config.active_population)
        self.income_hist = np.zeros((N, INCOME_WINDOW))
        self.employer = np.full(N, -1, dtype=np.int64)
        self.owned = np.full(N, -1, dtype=np.int64)
        # unemployment insurance: eligible once a household has held a job
        self.insured = np.zeros(N, dtype=bool)
        self.hh_res = np.ones((N, S))
        self.nbr_ptr = nbr_ptr
        self.nbr_idx = nbr_idx
        self.n_firms = 0
        self._alloc_firms(64)
        self.rosters: dict[int, list[int]] = {}
        self.inst = InstitutionalAccounts()
        self.income_tax = economy.income_tax_rate
        self.tax_shares = economy.tax_shares.copy()
        self.surplus_share = economy.surplus_share.copy()
        self.policies: list[Policy] = []
        self.policy_months: list[int] = []
        self.frames: list[dict] = []
        self.births: list[int] = []
        self.births_expected = 0.0
        self.deaths: list[int] = []
        self.board = np.zeros((N, S))
        self.global_signal = np.zeros(S)
        self.log_transactions = False
        self.transactions: list[tuple] = []
        self.money0 = self.total_money()

    # firm storage -------------------------------------------------------
    _FIRM_FIELDS = {
        "f_pos": (2, float), "f_sector": (None, np.int64), "f_price": (None, float),
        "f_inv": (None, float), "f_cash": (None, float), "f_dem_hist": (DEMAND_WINDOW, float),
        "f_dem_n": (None, np.int64), "f_dem_month": (None, float), "f_rev_acc": (None, float),
        "f_sales": (None, float), "f_tax_due": (None, float), "f_insolvent": (None, np.int64),
        "f_alive": (None, bool), "f_owner": (None, np.int64), "f_born": (None, np.int64),
        "f_died": (None, np.int64), "f_deficit": (None, float), "f_peak": (None, np.int64),
    }
    _FIRM_MATRICES = {"f_res": 1.0, "f_backlog": 0.0}

    def _alloc_firms(self, cap: int) -> None:
        S = self.economy.n_sectors
        for name, (width, dtype) in self._FIRM_FIELDS.items():
            shape = (cap,) if width is None else (cap, width)
            new = np.zeros(shape, dtype=dtype)
            old = getattr(self, name, None)
            if old is not None:
                new[: len(old)] = old
            setattr(self, name, new)
        for name, fill in self._FIRM_MATRICES.items():
            new = np.full((cap, S), fill)
            old = getattr(self, name, None)
            if old is not None:
                new[: len(old)] = old
            setattr(self, name, new)
        self.capacity = cap

    @property
    def alive_firms(self) -> np.ndarray:
        return np.flatnonzero(self.f_alive[: self.n_firms])

    def roster_sizes(self) -> np.ndarray:
        sizes = np.zeros(self.capacity, dtype=np.int64)
        for f, r in self.rosters.items():
            sizes[f] = len(r)
        return sizes

    def total_money(self) -> float:
        return float(self.wealth.sum() + self.f_cash[self.f_alive].sum() + self.inst.money())

    @property
    def consumption_params(self) -> ConsumptionParams:
        return self.config.consumption

    @property
    def wage(self) -> float:
        return self.economy.base_wage * self.config.wage_scale

    # record views -------------------------------------------------------
    def household(self, h: int) -> Household:
        n = min(self.month, INCOME_WINDOW)
        order = [(self.month - n + i) % INCOME_WINDOW for i in range(n)]
        return Household(
            id=h, position=tuple(self.hh_pos[h]), wealth=float(self.wealth[h]),
            income_history=RingBuffer(INCOME_WINDOW, self.income_hist[h, order]),
            employer=None if self.employer[h] < 0 else int(self.employer[h]),
            owned_firms=[] if self.owned[h] < 0 else [int(self.owned[h])],
            reservation_price={int(a): float(r) for a, r in zip(self.economy.account_ids, self.hh_res[h])},
        )

    def firm(self, f: int) -> Firm:
        n = int(self.f_dem_n[f])
        return Firm(
            id=f, position=tuple(self.f_pos[f]), sector=int(self.economy.account_ids[self.f_sector[f]]),
            price=float(self.f_price[f]), inventory=float(self.f_inv[f]), cash=float(self.f_cash[f]),
            employees=list(self.rosters.get(f, [])),
            demand_history=RingBuffer(DEMAND_WINDOW, self.f_dem_hist[f, DEMAND_WINDOW - n:]),
            months_insolvent=int(self.f_insolvent[f]), owner=int(self.f_owner[f]),
            reservation_price={int(a): float(r) for a, r in zip(self.economy.account_ids, self.f_res[f])},
        )


def deploy(config: SimConfig, sam: SAMTable | None = None) -> SimState:
    """Create households on the torus with equal wealth and no firms."""
    if sam is None:
        sam = load_sam(config.sam_path)
    report = validate_sam(sam)
    if not report.ok:
        raise DeploymentError("SAM failed validation:\n" + "\n".join(f.render() for f in report.errors))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SAMWarning)
        economy = build_economy(sam, config)
    for w in caught:
        log.warning("%s", w.message)
    rng = np.random.default_rng(config.seed)
    positions = place_agents(economy.n_workers, rng)
    index = NeighborhoodIndex.build(positions, max(economy.radius, 1e-9))
    ptr, idx = neighbor_csr(index, economy.radius)
    # self-inclusive neighbour rows, ascending
    N = economy.n_workers
    counts = np.diff(ptr) + 1
    rows = np.repeat(np.arange(N), np.diff(ptr))
    all_rows = np.concatenate([rows, np.arange(N)])
    all_idx = np.concatenate([idx, np.arange(N)])
    order = np.lexsort((all_idx, all_rows))
    sptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return SimState(config, economy, positions, rng, sptr, all_idx[order].astype(np.int64))


# ---------------------------------------------------------------------------
# monthly step


def _household_candidates(state: SimState) -> tuple[np.ndarray, np.ndarray]:
    ptr, idx = state.nbr_ptr, state.nbr_idx
    N = len(ptr) - 1
    f = state.owned[idx]
    keep = f >= 0
    rows = np.repeat(np.arange(N), np.diff(ptr))[keep]
    f = f[keep]
    order = np.lexsort((f, rows))
    counts = np.bincount(rows, minlength=N)
    cptr = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(counts, out=cptr[1:])
    return cptr, f[order].astype(np.int64)


def _firm_candidates(state: SimState, hptr, hidx) -> tuple[np.ndarray, np.ndarray]:
    cap = state.capacity
    ptr = np.zeros(cap + 1, dtype=np.int64)
    chunks = []
    counts = np.zeros(cap, dtype=np.int64)
    for f in state.alive_firms:
        o = state.f_owner[f]
        seg = hidx[hptr[o]: hptr[o + 1]]
        seg = seg[seg != f]
        counts[f] = len(seg)
        chunks.append(seg)
    np.cumsum(counts, out=ptr[1:])
    idx = np.concatenate(chunks).astype(np.int64) if chunks else np.zeros(0, dtype=np.int64)
    return ptr, idx


def _global_buy(state: SimState, s: int, budget: float, payer: str) -> float:
    """Institutional purchase from the cheapest stocked firms of a sector.

    Institutions take prices as given.  Unfilled budget becomes a signal
    visible everywhere and is booked as demand on the first firm tried.
    """
    if budget <= 0:
        return 0.0
    firms = state.alive_firms
    firms = firms[(state.f_sector[firms] == s) & (state.f_inv[firms] > 0)]
    spent = 0.0
    remaining = budget
    if len(firms):
        firms = firms[np.lexsort((firms, state.f_price[firms]))]
        for f in firms:
            price = state.f_price[f]
            units = min(state.f_inv[f], remaining / price)
            total = units * price
            state.f_inv[f] -= units
            state.f_cash[f] += total
            state.f_rev_acc[f] += total
            state.f_sales[f] += total
            state.f_dem_month[f] += units
            if state.log_transactions:
                state.transactions.append((state.month, payer, -1, int(f), s, float(units), float(price), float(total)))
            spent += total
            remaining = budget - spent
            if remaining <= budget * 1e-12:
                break
        if remaining > budget * 1e-12:
            state.f_dem_month[firms[0]] += remaining / state.f_price[firms[0]]
    elif len(state.alive_firms):
        same = state.alive_firms[state.f_sector[state.alive_firms] == s]
        if len(same):
            state.f_dem_month[same[0]] += remaining / state.f_price[same[0]]
    inst = state.inst
    if payer == "government":
        inst.government_cash -= spent
    elif payer == "external":
        inst.external_balance -= spent
    elif payer == "gfcf":
        inst.gfcf_pool -= spent
    else:
        raise ValueError(payer)
    unfilled = budget - spent
    if unfilled > budget * 1e-12:
        state.global_signal[s] += unfilled
    return spent


def _shop(state, rows, budgets, buyer_cash, buyer_res, cptr, cidx, kind):
    S = state.economy.n_sectors
    spent = np.zeros(budgets.shape)
    failed = np.zeros(budgets.shape)
    cap = (len(rows) * S) if state.log_transactions else 0
    tx = (np.zeros(cap, np.int64), np.zeros(cap, np.int64), np.zeros(cap, np.int64),
          np.zeros(cap), np.zeros(cap), np.zeros(cap))
    n = kernels.shop(
        np.ascontiguousarray(rows, dtype=np.int64), budgets, buyer_cash, buyer_res, cptr, cidx,
        state.f_sector, state.f_price, state.f_inv, state.f_cash, state.f_dem_month, state.f_rev_acc,
        float(state.config.price_k), PRICE_FLOOR, spent, failed, *tx,
    )
    if state.log_transactions:
        for i in range(min(n, cap)):
            state.transactions.append(
                (state.month, kind, int(tx[0][i]), int(tx[1][i]), int(tx[2][i]),
                 float(tx[3][i]), float(tx[4][i]), float(tx[5][i])))
    return spent, failed


def _apply_policies(state: SimState) -> bool:
    fired = False
    for p in state.policies:
        if p.month != state.month:
            continue
        apply_policy_now(state, p)
        # a zero shift leaves no mark, so the trajectory stays bit-identical
        fired = fired or p.value != 0
    if fired:
        state.policy_months.append(state.month)
    return fired


def apply_policy_now(state: SimState, policy: Policy) -> None:
    eco = state.economy
    col = eco.products_tax_col
    if col < 0:
        raise PolicyError("SAM has no product-tax account")
    sectors = range(eco.n_sectors) if policy.sector is None else [eco.sector_of(policy.sector)]
    new = state.tax_shares.copy()
    for s in sectors:
        new[s, col] += policy.value
    lo, hi = TAX_SHARE_BOUNDS
    if np.any(new[:, col] < lo - 1e-12) or np.any(new[:, col] > hi + 1e-12):
        raise PolicyError(f"tax share would leave [{lo}, {hi}]")
    for s in sectors:
        state.surplus_share[s] -= policy.value
        new[s, col] = 0.0 if abs(new[s, col]) < 1e-15 else new[s, col]
    state.tax_shares = new


def apply_policy(state: SimState, policy: Policy) -> SimState:
    """Schedule an intervention; it takes effect at the start of ``policy.month``."""
    if policy.month < state.month:
        raise PolicyError(f"policy month {policy.month} is in the past (now {state.month})")
    if policy.kind not in POLICY_KINDS:
        raise PolicyError(f"unknown policy kind {policy.kind!r}")
    # reject out-of-range shifts up front
    col = state.economy.products_tax_col
    sectors = range(state.economy.n_sectors) if policy.sector is None else [state.economy.sector_of(policy.sector)]
    lo, hi = TAX_SHARE_BOUNDS
    for s in sectors:
        v = state.tax_shares[s, col] + policy.value
        if v < lo or v > hi:
            raise PolicyError(f"tax share {v:.4f} for {state.economy.codes[s]} outside [{lo}, {hi}]")
    state.policies.append(policy)
    return state


def step(state: SimState) -> SimState:
    """Advance one month in the fixed sub-step order."""
    cfg, eco = state.config, state.economy
    N, S = eco.n_workers, eco.n_sectors
    inst = state.inst
    policy_fired = _apply_policies(state)
    state.board[:] = 0.0
    state.global_signal[:] = 0.0
    state.f_dem_month[:] = 0.0
    state.f_sales[:] = 0.0
    state.transactions = []
    income = np.zeros(N)
    flow = dict.fromkeys(FLOW_KEYS, 0.0)
    tau = state.income_tax
    wage = state.wage
    births = deaths = 0

    # (1) payroll
    sizes = state.roster_sizes()
    alive = state.alive_firms
    bill = wage * sizes[alive]
    pay = np.minimum(bill, np.maximum(state.f_cash[alive], 0.0))
    state.f_cash[alive] -= pay
    rate = np.zeros(state.capacity)
    rate[alive] = np.where(sizes[alive] > 0, pay / np.maximum(sizes[alive], 1), 0.0)
    employed = state.employer >= 0
    gross = np.where(employed, rate[np.maximum(state.employer, 0)], 0.0)
    # rounding residue between pay and credited wages stays in the tax take
    tax = pay.sum() - (gross - gross * tau).sum()
    state.wealth += gross - gross * tau
    income += gross - gross * tau
    inst.government_cash += tax
    flow["wages"] = float(pay.sum())
    flow["income_tax"] = float(tax)

    # (2) government: taxes accrued last month, transfers, non-market procurement
    due = state.f_tax_due[alive]
    paid = np.where(due > 0, np.minimum(due, np.maximum(state.f_cash[alive], 0.0)), due)
    state.f_cash[alive] -= paid
    inst.government_cash += paid.sum()
    flow["firm_taxes"] = float(paid.sum())
    state.f_tax_due[alive] = 0.0
    unemployed = ~employed & state.insured
    transfer = cfg.transfer_ratio * wage
    state.wealth[unemployed] += transfer
    income[unemployed] += transfer
    inst.government_cash -= transfer * unemployed.sum()
    flow["transfers"] = transfer * unemployed.sum()
    for s in range(S):
        flow["procurement"] += _global_buy(state, s, eco.procurement[s], "government")

    # (3) households
    hptr, hidx = _household_candidates(state)
    n_hist = min(state.month, INCOME_WINDOW)
    i_mean = state.income_hist.sum(axis=1) / n_hist if n_hist else np.zeros(N)
    cp = state.consumption_params
    target = i_mean + cp.kappa * (state.wealth - cp.phi * i_mean)
    target = np.minimum(np.maximum(target, 0.0), np.maximum(state.wealth, 0.0))
    budgets = target[:, None] * eco.basket[None, :]
    rev0 = state.f_rev_acc.copy()
    hh_spent, hh_failed = _shop(state, np.arange(N), budgets, state.wealth, state.hh_res, hptr, hidx, "household")
    state.board += hh_failed
    state.f_sales += state.f_rev_acc - rev0
    cons = hh_spent.sum(axis=0)
    flow["consumption"] = float(cons.sum())

    # (4) exports and investment
    if eco.export_stream is not None:
        for s in range(S):
            flow["exports"] += _global_buy(state, s, eco.export_stream[s], "external")
    else:
        pot = max(inst.external_balance, 0.0)
        for s in range(S):
            flow["exports"] += _global_buy(state, s, pot * eco.export_weights[s], "external")
    pot = max(inst.gfcf_pool, 0.0)
    if pot > 0:
        for s in range(S):
            flow["investment"] += _global_buy(state, s, pot * eco.gfcf_weights[s], "gfcf")
        t, x = pot * eco.gfcf_tax_share, pot * eco.gfcf_import_share
        inst.gfcf_pool -= t + x
        inst.government_cash += t
        inst.external_balance += x
        flow["firm_taxes"] += t
        flow["imports"] += x

    # (5) revenue allocation, input purchases, staffing and production
    alive = state.alive_firms
    rev = state.f_rev_acc[alive].copy()
    state.f_rev_acc[alive] = 0.0
    sec = state.f_sector[alive]
    fresh = rev[:, None] * eco.input_shares[sec]
    fresh[:, ~eco.market] = 0.0
    # unfilled input orders carry over, capped at a few months of orders
    inputs = fresh + np.minimum(state.f_backlog[alive], BACKLOG_MONTHS * fresh)
    imports = rev * eco.import_share[sec]
    gfcf = rev * np.maximum(state.surplus_share[sec], 0.0) * eco.gfcf_fraction
    need = inputs.sum(axis=1) + imports + gfcf
    cash = np.maximum(state.f_cash[alive], 0.0)
    scale = np.where(need > cash, cash / np.where(need > 0, need, 1.0), 1.0)
    state.f_deficit[alive] = need * (1.0 - scale)
    inputs *= scale[:, None]
    state.f_cash[alive] -= (imports + gfcf) * scale
    inst.external_balance += float((imports * scale).sum())
    inst.gfcf_pool += float((gfcf * scale).sum())
    flow["imports"] += float((imports * scale).sum())
    flow["gfcf_funding"] = float((gfcf * scale).sum())
    state.f_tax_due[alive] = rev * state.tax_shares[sec].sum(axis=1)
    if len(alive):
        fptr, fidx = _firm_candidates(state, hptr, hidx)
        fb = np.zeros((state.capacity, S))
        fb[alive] = inputs
        f_spent, f_failed = _shop(state, alive, fb, state.f_cash, state.f_res, fptr, fidx, "firm")
        flow["inputs"] = float(f_spent.sum())
        state.f_backlog[alive] = fb[alive] - f_spent[alive]
        state.f_sales += state.f_rev_acc
        np.add.at(state.board, state.f_owner[alive], f_failed[alive])

    output = float(state.f_sales[: state.n_firms].sum())
    for f in alive:
        s = state.f_sector[f]
        hist = state.f_dem_hist[f]
        hist[:-1] = hist[1:]
        hist[-1] = state.f_dem_month[f]
        state.f_dem_n[f] = min(state.f_dem_n[f] + 1, DEMAND_WINDOW)
        n = state.f_dem_n[f]
        target_inv = cfg.inventory_multiple * hist[DEMAND_WINDOW - n:].mean()
        need_out = max(0.0, target_inv - state.f_inv[f])
        # capacity is a value per worker; units per worker fall as the firm's price rises
        per_worker = eco.productivity[s] / state.f_price[f]
        need_workers = max(1, math.ceil(need_out / per_worker - 1e-9))
        roster = state.rosters[f]
        if need_workers > len(roster):
            _hire(state, f, min(cfg.max_hires, need_workers - len(roster)))
        elif need_workers < len(roster):
            for _ in range(min(cfg.max_fires, len(roster) - need_workers)):
                h = roster.pop()
                state.employer[h] = -1
        state.f_inv[f] += min(len(roster) * per_worker, need_out)
        state.f_peak[f] = max(state.f_peak[f], len(roster))

    # (6) entry
    births = _entry(state)

    # (7) exit
    deaths = _exit_check(state)

    # (8) dividends
    sizes = state.roster_sizes()
    for f in state.alive_firms:
        # working capital covers payroll plus taxes and input orders already owed
        reserve = cfg.buffer_months * wage * sizes[f] + max(state.f_tax_due[f], 0.0) + state.f_backlog[f].sum()
        excess = state.f_cash[f] - reserve
        if excess > 0:
            d = cfg.dividend_payout * excess
            o = state.f_owner[f]
            state.f_cash[f] -= d
            state.wealth[o] += d * (1.0 - tau)
            income[o] += d * (1.0 - tau)
            inst.government_cash += d * tau
            flow["dividends"] += d
            flow["income_tax"] += d * tau

    # bonds close the government account every month
    issuance = -inst.government_cash
    if state.month >= cfg.fiscal_start and cfg.fiscal_gain > 0:
        nudge = cfg.fiscal_gain * issuance / eco.taxable_base
        state.income_tax = min(max(tau + nudge, 0.0), MAX_INCOME_TAX)
    inst.government_cash += issuance
    inst.bank_deposits -= issuance
    inst.bonds_outstanding += issuance

    state.income_hist[:, state.month % INCOME_WINDOW] = income
    state.births.append(births)
    state.deaths.append(deaths)
    _check_conservation(state)
    flow["deficit"] = (flow["transfers"] + flow["procurement"]) - (flow["income_tax"] + flow["firm_taxes"])
    state.frames.append(snapshot(state, cons, output, flow, issuance, policy_fired))
    state.month += 1
    return state


def _hire(state: SimState, f: int, n: int) -> None:
    o = state.f_owner[f]
    pool = state.nbr_idx[state.nbr_ptr[o]: state.nbr_ptr[o + 1]]
    pool = pool[state.employer[pool] < 0]
    for h in pool[:n]:
        state.employer[h] = f
        state.insured[h] = True
        state.rosters[f].append(int(h))


def _entry(state: SimState) -> int:
    cfg, eco = state.config, state.economy
    N, S = eco.n_workers, eco.n_sectors
    hazard = cfg.startup_probability / 12.0
    draws = state.rng.random(N)
    eligible = (state.owned < 0) & (state.wealth > 0)
    # expected births, a noise-free signal for calibration
    state.births_expected = hazard * int(eligible.sum())
    founders = np.flatnonzero((draws < hazard) & eligible)
    born = 0
    for h in founders:
        u = state.rng.random()
        nb = state.nbr_idx[state.nbr_ptr[h]: state.nbr_ptr[h + 1]]
        weights = state.board[nb].sum(axis=0) + state.global_signal * eco.area_fraction
        total = weights.sum()
        if total > 0:
            s = int(np.searchsorted(np.cumsum(weights) / total, u, side="right"))
            s = min(s, S - 1)
        else:
            s = min(int(u * S), S - 1)
        capital = min(cfg.startup_wealth_fraction * state.wealth[h], eco.sector_capital[s])
        if capital <= 0:
            continue
        _found(state, int(h), s, capital)
        born += 1
    return born


def _found(state: SimState, h: int, s: int, capital: float) -> int:
    if state.n_firms == state.capacity:
        state._alloc_firms(state.capacity * 2)
    f = state.n_firms
    state.n_firms += 1
    alive = state.alive_firms
    same = alive[state.f_sector[alive] == s]
    state.f_pos[f] = state.hh_pos[h]
    state.f_sector[f] = s
    state.f_price[f] = state.f_price[same].mean() if len(same) and state.economy.market[s] else 1.0
    state.f_inv[f] = state.config.bootstrap_stock
    state.wealth[h] -= capital
    state.f_cash[f] = capital
    state.f_alive[f] = True
    state.f_owner[f] = h
    state.f_born[f] = state.month
    state.f_died[f] = -1
    state.f_res[f] = 1.0
    old = state.employer[h]
    if old >= 0:
        state.rosters[int(old)].remove(h)
    state.employer[h] = f
    state.insured[h] = True
    state.owned[h] = f
    state.rosters[f] = [h]
    return f


def _exit_check(state: SimState) -> int:
    cfg = state.config
    wage = state.wage
    died = 0
    for f in state.alive_firms:
        roster = state.rosters[f]
        if state.f_cash[f] < wage * len(roster):
            state.f_insolvent[f] += 1
        else:
            state.f_insolvent[f] = 0
        if state.f_insolvent[f] >= cfg.insolvency_months:
            _close(state, int(f))
            died += 1
    return died


def _close(state: SimState, f: int) -> None:
    for h in state.rosters.pop(f):
        state.employer[h] = -1
    o = state.f_owner[f]
    state.wealth[o] += state.f_cash[f]
    state.f_cash[f] = 0.0
    state.f_inv[f] = 0.0
    state.f_alive[f] = False
    state.f_died[f] = state.month
    state.owned[o] = -1


def _check_conservation(state: SimState) -> None:
    if not state.config.check_conservation:
        return
    total = state.total_money()
    err = abs(total - state.money0) / abs(state.money0)
    if err > CONSERVATION_RTOL or not math.isfinite(total):
        raise ConservationError(
            f"month {state.month}: money {total!r} vs initial {state.money0!r} (rel {err:.3g}); "
            f"households {state.wealth.sum()!r}, firms {state.f_cash[state.f_alive].sum()!r}, "
            f"institutions {dataclasses.asdict(state.inst)}"
        )


def initial_frame(state: SimState) -> dict:
    """Frame describing the state before any step, with zero flows."""
    flows = dict.fromkeys(FLOW_KEYS, 0.0)
    flows["deficit"] = 0.0
    return snapshot(state, np.zeros(state.economy.n_sectors), 0.0, flows, 0.0, False)


def run(state: SimState, months: int, callback=None) -> SimState:
    for _ in range(months):
        step(state)
        if callback is not None:
            callback(state)
    return state


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: SimState, path: str | Path) -> None:
    payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "state": state.__dict__}
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=pickle.HIGHEST_PROTOCOL)


def load_checkpoint(path: str | Path) -> SimState:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    state = SimState.__new__(SimState)
    state.__dict__.update(payload["state"])
    return state
