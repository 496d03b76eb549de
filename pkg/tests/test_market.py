import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evoecon import kernels
from evoecon.agents import PRICE_FLOOR, Firm, Household, RingBuffer
from evoecon.market import (
    EXTERNAL_SELLER,
    ContractViolation,
    DemandSignal,
    Market,
    Transaction,
    TransactionLog,
    attempt_purchase,
    input_requirements,
    intermediate_procurement,
    select_seller,
)
from evoecon.sam_io import tech_profile
from evoecon.spatial import torus_distance


def firm(fid, sector=0, price=1.0, inventory=500.0, cash=0.0, pos=(0.5, 0.5)):
    return Firm(fid, pos, sector, price, inventory, cash, [], RingBuffer(3))


def household(wealth=1000.0, pos=(0.5, 0.5)):
    return Household(0, pos, wealth)


def test_cheapest_seller_wins():
    fs = [firm(1, price=1.10), firm(2, price=0.95)]
    assert select_seller((0.5, 0.5), 0, 0.1, fs) == 2


def test_ties_go_to_lower_id():
    fs = [firm(9, price=1.0), firm(4, price=1.0)]
    assert select_seller((0.5, 0.5), 0, 0.1, fs) == 4


def test_stocked_out_seller_is_skipped():
    assert select_seller((0.5, 0.5), 0, 0.1, [firm(1, inventory=0.0)]) is None


def test_out_of_radius_and_other_sector_skipped():
    fs = [firm(1, pos=(0.8, 0.5)), firm(2, sector=1)]
    assert select_seller((0.5, 0.5), 0, 0.1, fs) is None


def test_fifty_random_firms_match_exhaustive_scan():
    rng = np.random.default_rng(8)
    fs = [firm(i, sector=int(rng.integers(0, 3)), price=float(rng.uniform(0.5, 1.5)),
               inventory=float(rng.choice([0.0, 10.0])), pos=tuple(rng.random(2))) for i in range(50)]
    for trial in range(20):
        pos, s = tuple(rng.random(2)), trial % 3
        ok = [f for f in fs if f.sector == s and f.inventory > 0 and torus_distance(pos, f.position) <= 0.3]
        expect = min(ok, key=lambda f: (f.price, f.id)).id if ok else None
        assert select_seller(pos, s, 0.3, fs) == expect


def test_unconstrained_trade():
    h, f = household(), firm(1)
    out = attempt_purchase(h, 0, 100.0, Market({1: f}, 0.1))
    assert isinstance(out, Transaction)
    assert (out.units, out.total, out.seller) == (100.0, 100.0, 1)
    assert h.wealth == 900.0 and f.cash == 100.0 and f.inventory == 400.0
    assert f.price == pytest.approx(1.002)
    assert h.reservation_price[0] == pytest.approx(0.998)


def test_no_seller_leaves_signal_and_raises_reservation():
    h = household()
    out = attempt_purchase(h, 0, 100.0, Market({}, 0.1, month=7))
    assert out == DemandSignal(0, (0.5, 0.5), 100.0, 7)
    assert h.reservation_price[0] == pytest.approx(1.002)
    assert h.wealth == 1000.0


def test_partial_fill_is_success():
    h, f = household(), firm(1, inventory=30.0)
    out = attempt_purchase(h, 0, 100.0, Market({1: f}, 0.1))
    assert isinstance(out, Transaction)
    assert (out.units, out.total) == (30.0, 30.0)
    assert f.inventory == 0.0


def test_price_above_reservation_is_rejected_and_both_concede():
    h, f = household(), firm(1, price=1.5)
    out = attempt_purchase(h, 0, 100.0, Market({1: f}, 0.1))
    assert isinstance(out, DemandSignal)
    assert f.price == pytest.approx(1.5 * 0.998)
    assert h.reservation_price[0] == pytest.approx(1.002)
    assert f.inventory == 500.0


@pytest.mark.parametrize("budget", [0.0, -1.0, 1000.01])
def test_budget_contract(budget):
    with pytest.raises(ContractViolation):
        attempt_purchase(household(), 0, budget, Market({}, 0.1))


def test_first_sector_procurement(sam):
    p01 = sam.index("P01_AgroPesc")
    reqs, imports = input_requirements(48021.0, tech_profile(sam, p01), sam)
    p03 = sam.index("P03_Indust")
    assert reqs[p03] == 8616
    assert imports == 8742
    buyer = firm(100, sector=p01, cash=1e6)
    sellers = {i: firm(i, sector=i, inventory=1e9) for i in reqs}
    out = intermediate_procurement(buyer, reqs, Market(sellers, 0.1), imports)
    assert out.deficit == 0.0
    imp = out.outcomes[0]
    assert imp.seller == EXTERNAL_SELLER and imp.total == 8742
    bought = {t.sector: t.total for t in out.outcomes[1:]}
    assert bought[p03] == 8616


def test_full_cash_spend_matches_allocation(sam):
    p05 = sam.index("P05_ServVenta")
    profile = tech_profile(sam, p05)
    reqs, imports = input_requirements(1000.0, profile, sam)
    buyer = firm(100, sector=p05, cash=1e6)
    sellers = {i: firm(i, sector=i, inventory=1e9) for i in reqs}
    out = intermediate_procurement(buyer, reqs, Market(sellers, 0.1), imports)
    spent = sum(t.total for t in out if t.seller != EXTERNAL_SELLER)
    assert spent == pytest.approx(1000.0 * sum(profile.input_shares.values()), abs=1e-6)


def test_zero_revenue_makes_no_attempts(sam):
    reqs, imports = input_requirements(0.0, tech_profile(sam, 0), sam)
    assert reqs == {} and imports == 0.0
    out = intermediate_procurement(firm(100, cash=10.0), reqs, Market({}, 0.1), imports)
    assert len(out) == 0 and out.deficit == 0.0


def test_short_cash_scales_pro_rata():
    buyer = firm(100, cash=50.0)
    sellers = {1: firm(1, sector=1, inventory=1e9), 2: firm(2, sector=2, inventory=1e9)}
    out = intermediate_procurement(buyer, {1: 60.0, 2: 40.0}, Market(sellers, 0.1))
    assert out.deficit == 50.0
    assert [t.total for t in out] == [30.0, 20.0]
    assert buyer.cash == 0.0


def test_transaction_log_rows(tmp_path):
    path = tmp_path / "tx.csv"
    with TransactionLog(path, ["A", "B"]) as log:
        log.write([(3, "household", 5, 1, 1, 2.0, 0.5, 1.0)])
    lines = path.read_text().splitlines()
    assert lines[0] == "month,buyer_kind,buyer,seller,sector,units,unit_price,total"
    assert lines[1] == "3,household,5,1,B,2.0,0.5,1.0"


# ---------------------------------------------------------------------------
# the array kernel against the record-level rules


def kernel_args(n_buyers, n_firms, n_sectors, seed):
    rng = np.random.default_rng(seed)
    budgets = rng.uniform(0, 20, (n_buyers, n_sectors)) * (rng.random((n_buyers, n_sectors)) < 0.7)
    cash = rng.uniform(0, 60, n_buyers)
    res = rng.uniform(0.8, 1.3, (n_buyers, n_sectors))
    lists = [np.sort(rng.choice(n_firms, size=int(rng.integers(0, n_firms + 1)), replace=False))
             for _ in range(n_buyers)]
    ptr = np.concatenate([[0], np.cumsum([len(x) for x in lists])]).astype(np.int64)
    idx = (np.concatenate(lists) if lists else np.zeros(0)).astype(np.int64)
    sector = rng.integers(0, n_sectors, n_firms).astype(np.int64)
    price = rng.uniform(0.7, 1.4, n_firms)
    price[rng.random(n_firms) < 0.2] = 1.0  # ties
    inv = rng.uniform(0, 30, n_firms) * (rng.random(n_firms) < 0.85)
    cap = n_buyers * n_sectors
    return [np.arange(n_buyers, dtype=np.int64), budgets, cash, res, ptr, idx,
            sector, price, inv, np.zeros(n_firms), np.zeros(n_firms), np.zeros(n_firms),
            0.002, PRICE_FLOOR, np.zeros_like(budgets), np.zeros_like(budgets),
            np.zeros(cap, np.int64), np.zeros(cap, np.int64), np.zeros(cap, np.int64),
            np.zeros(cap), np.zeros(cap), np.zeros(cap)]


def run_backend(name, args):
    args = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
    kernels.use_backend(name)
    try:
        n = kernels.shop(*args)
    finally:
        kernels.use_backend(default_backend)
    return n, args


default_backend = kernels.backend()


def test_kernel_agrees_with_attempt_purchase():
    args = kernel_args(12, 15, 3, seed=2)
    rows, budgets, cash, res, ptr, idx, sector, price, inv = (a.copy() for a in args[:9])
    firms = {f: firm(f, sector=int(sector[f]), price=float(price[f]), inventory=float(inv[f]))
             for f in range(len(sector))}
    n, out = run_backend("python", args)
    spent = np.zeros_like(budgets)
    for r in rows:
        h = Household(int(r), (0.0, 0.0), float(cash[r]),
                      reservation_price={s: float(res[r, s]) for s in range(budgets.shape[1])})
        visible = {int(f): firms[int(f)] for f in idx[ptr[r]:ptr[r + 1]]}
        # every candidate is in reach; radius covers the whole torus
        market = Market(visible, radius=1.0)
        for s in range(budgets.shape[1]):
            b = min(budgets[r, s], h.wealth)
            if b > 0:
                t = attempt_purchase(h, s, b, market)
                if isinstance(t, Transaction):
                    spent[r, s] = t.total
        assert h.wealth == out[2][r]
        assert [h.reservation_price[s] for s in range(budgets.shape[1])] == list(out[3][r])
    np.testing.assert_array_equal(spent, out[14])
    assert [f.price for f in firms.values()] == list(out[7])
    assert [f.inventory for f in firms.values()] == list(out[8])
    assert [f.cash for f in firms.values()] == list(out[9])


@pytest.mark.skipif("compiled" not in kernels.BACKENDS, reason="extension not built")
@settings(max_examples=60, deadline=None)
@given(b=st.integers(1, 40), f=st.integers(1, 30), s=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_backends_are_bit_identical(b, f, s, seed):
    args = kernel_args(b, f, s, seed)
    n_py, py = run_backend("python", args)
    n_c, c = run_backend("compiled", args)
    assert n_py == n_c
    for x, y in zip(py, c):
        if isinstance(x, np.ndarray):
            assert x.tobytes() == y.tobytes()


@settings(max_examples=40, deadline=None)
@given(b=st.integers(1, 30), f=st.integers(1, 20), s=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_kernel_conserves_money_and_stock(b, f, s, seed):
    args = kernel_args(b, f, s, seed)
    cash0, inv0 = args[2].sum(), args[8].copy()
    n, out = run_backend(default_backend, args)
    assert (out[8] >= 0).all()
    assert out[2].sum() + out[9].sum() == pytest.approx(cash0, rel=1e-12)
    units = np.zeros(f)
    np.add.at(units, out[17][:n], out[19][:n])
    np.testing.assert_allclose(inv0 - out[8], units, atol=1e-9)


def test_fallback_selected_without_extension():
    import subprocess
    import sys

    code = ("import sys; sys.modules['evoecon.kernels._ext'] = None\n"
            "from evoecon import kernels; print(kernels.backend(), sorted(kernels.BACKENDS))")
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
    assert out.strip() == "python ['python']"
