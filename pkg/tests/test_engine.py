import numpy as np
import pytest

from evoecon import engine
from evoecon.engine import (
    ConservationError,
    DeploymentError,
    Policy,
    PolicyError,
    SimConfig,
    apply_policy,
    build_economy,
    deploy,
    load_checkpoint,
    parse_policies,
    save_checkpoint,
    step,
)
from evoecon.sam_io import parse_sam

from .conftest import DEMO_CFG, SAM_PATH, run_months, small_config, synthetic_sam


def test_config_rejects_out_of_range():
    with pytest.raises(ValueError, match="unemployment_target"):
        SimConfig(unemployment_target=1.5)
    with pytest.raises(ValueError, match="months"):
        SimConfig(months=-1)


def test_config_file_round_trip(tmp_path):
    cfg = SimConfig.from_file(DEMO_CFG, seed=7)
    assert cfg.seed == 7
    assert cfg.sam_path == str(SAM_PATH.resolve())
    p = tmp_path / "c.cfg"
    p.write_text(cfg.to_text())
    assert SimConfig.from_file(p) == cfg


def test_config_file_errors(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("phi 3\n")
    with pytest.raises(ValueError, match="key = value"):
        SimConfig.from_file(p)
    p.write_text("no_such_key = 1\n")
    with pytest.raises(KeyError):
        SimConfig.from_file(p)


def test_kappa_defaults_to_propensity_over_phi():
    cfg = SimConfig(phi=11.0, propensity=0.55)
    assert cfg.consumption.kappa == pytest.approx(0.05)
    assert SimConfig(kappa=0.2).consumption.kappa == 0.2


def test_demo_deploys_300_equal_households(demo_config):
    st = deploy(demo_config)
    assert st.economy.n_workers == 300
    assert st.n_firms == 0
    assert np.all(st.wealth == st.wealth[0])
    expected = demo_config.wealth_target / st.economy.scale
    assert st.wealth.sum() == pytest.approx(expected, rel=1e-9)
    assert st.inst.money() == 0.0


def test_sixty_four_sectors_scale_to_3200_workers():
    sam = parse_sam(synthetic_sam(64, seed=1, households=True))
    eco = build_economy(sam, SimConfig(active_population=5e6))
    assert eco.n_workers == 3200
    assert eco.scale == pytest.approx(1562.5)


def test_sam_with_errors_is_refused():
    lines = SAM_PATH.read_text().splitlines()
    cells = lines[-1].split(",")
    cells[1] = str(int(cells[1]) + 1000)
    lines[-1] = ",".join(cells)
    with pytest.raises(DeploymentError):
        deploy(SimConfig(), parse_sam("\n".join(lines) + "\n"))


def test_neighbour_rows_include_self():
    st = deploy(small_config())
    for h in (0, 17, 299):
        row = st.nbr_idx[st.nbr_ptr[h]:st.nbr_ptr[h + 1]]
        assert h in row and list(row) == sorted(row)


def test_first_month_without_firms():
    st = deploy(small_config(startup_probability=0.0))
    step(st)
    f = st.frames[0]
    assert f["flow_wages"] == 0 and f["consumption"] == 0
    # every household budget failed and was posted as a signal
    assert st.board.sum() > 0
    assert np.count_nonzero(st.board.sum(axis=1)) == st.economy.n_workers


def test_no_entry_at_zero_probability():
    st = run_months(small_config(startup_probability=0.0), 24)
    assert st.n_firms == 0 and sum(st.births) == 0


def test_entry_begins_from_signals():
    st = run_months(small_config(), 12)
    assert st.n_firms > 0
    assert st.frames[-1]["employed"] > 0


def test_single_sector_signal_directs_all_entries():
    st = deploy(small_config(startup_probability=1.0))
    st.board[:, 2] = 5.0
    born = engine._entry(st)
    assert born > 0
    assert set(st.f_sector[: st.n_firms]) == {2}


def test_firm_storage_grows_past_initial_capacity():
    st = deploy(small_config())
    for h in range(150):
        engine._found(st, h, h % 6, 1.0)
    assert st.capacity >= 150 and st.n_firms == 150
    assert st.f_res.shape == (st.capacity, 6)
    assert st.total_money() == pytest.approx(st.money0, rel=1e-12)


def test_insolvent_firm_exits_after_three_months():
    st = deploy(small_config())
    f = engine._found(st, 0, 1, 1.0)
    st.f_cash[f] = 0.0
    st.money0 = st.total_money()
    assert engine._exit_check(st) == 0
    assert engine._exit_check(st) == 0
    assert engine._exit_check(st) == 1
    assert not st.f_alive[f] and st.employer[0] == -1 and st.owned[0] == -1


def test_solvent_firm_keeps_clean_record():
    st = deploy(small_config())
    f = engine._found(st, 0, 1, 1e9)
    for _ in range(10):
        engine._exit_check(st)
    assert st.f_insolvent[f] == 0 and st.f_alive[f]


def test_money_is_conserved_each_month():
    st = run_months(small_config(), 120)
    money = np.array([f["money"] for f in st.frames])
    assert np.max(np.abs(money - st.money0)) / st.money0 <= 1e-6


def test_conservation_breach_aborts(monkeypatch):
    monkeypatch.setattr(engine, "CONSERVATION_RTOL", -1.0)
    st = deploy(small_config())
    with pytest.raises(ConservationError, match="month 0"):
        step(st)


def test_same_seed_same_stream():
    a = run_months(small_config(), 60)
    b = run_months(small_config(), 60)
    assert a.frames == b.frames
    c = run_months(small_config(seed=43), 60)
    assert a.frames != c.frames


def test_checkpoint_resumes_exactly(tmp_path):
    straight = run_months(small_config(), 60)
    half = run_months(small_config(), 30)
    save_checkpoint(half, tmp_path / "s.pkl")
    resumed = load_checkpoint(tmp_path / "s.pkl")
    for _ in range(30):
        step(resumed)
    assert resumed.frames == straight.frames


def test_checkpoint_format_checked(tmp_path):
    import pickle

    p = tmp_path / "x.pkl"
    p.write_bytes(pickle.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_policy_file_parsing():
    ps = parse_policies("# comment\n300,TaxProductsRateDelta,0.02\n310,TaxProductsRateDelta,-0.01,P03_Indust\n")
    assert ps == [Policy(300, "TaxProductsRateDelta", 0.02), Policy(310, "TaxProductsRateDelta", -0.01, "P03_Indust")]
    for bad in ("1,Other,0.1", "1,TaxProductsRateDelta", "x,TaxProductsRateDelta,0.1"):
        with pytest.raises(PolicyError):
            parse_policies(bad)


def test_policy_bounds_and_timing():
    st = run_months(small_config(), 3)
    with pytest.raises(PolicyError):
        apply_policy(st, Policy(10, "TaxProductsRateDelta", 0.95))
    with pytest.raises(PolicyError):
        apply_policy(st, Policy(1, "TaxProductsRateDelta", 0.01))


def test_null_policy_is_bit_identical():
    base = run_months(small_config(), 60)
    st = deploy(small_config())
    apply_policy(st, Policy(20, "TaxProductsRateDelta", 0.0))
    for _ in range(60):
        step(st)
    assert st.frames == base.frames


def test_removing_product_tax_zeroes_the_channel():
    st = deploy(small_config())
    col = st.economy.products_tax_col
    for s, code in enumerate(st.economy.codes):
        apply_policy(st, Policy(0, "TaxProductsRateDelta", -float(st.tax_shares[s, col]), code))
    step(st)
    assert np.all(st.tax_shares[:, col] == 0.0)
    assert st.frames[0]["policy"] == 1


def test_product_tax_raise_shifts_surplus():
    st = deploy(small_config())
    col = st.economy.products_tax_col
    tax0, surplus0 = st.tax_shares[:, col].copy(), st.surplus_share.copy()
    apply_policy(st, Policy(0, "TaxProductsRateDelta", 0.02))
    step(st)
    np.testing.assert_allclose(st.tax_shares[:, col], tax0 + 0.02)
    np.testing.assert_allclose(st.surplus_share, surplus0 - 0.02)


def test_record_views_mirror_arrays():
    st = run_months(small_config(), 24)
    f = int(st.alive_firms[0])
    rec = st.firm(f)
    assert rec.cash == st.f_cash[f] and rec.employees == st.rosters[f]
    h = st.household(rec.owner)
    assert h.owned_firms == [f] and len(h.income_history) == 12


def test_bonds_finance_the_deficit_exactly(demo_run):
    for f in demo_run.frames:
        assert f["gov_deficit"] == pytest.approx(f["bond_issuance"], rel=1e-9, abs=1e-6)
    assert demo_run.inst.government_cash == 0.0


def test_boundary_quantities_nonnegative(demo_run):
    alive = demo_run.alive_firms
    assert demo_run.wealth.min() >= 0
    assert demo_run.f_inv[alive].min() >= 0
    assert all(len(demo_run.rosters[f]) >= 1 for f in alive)
    employed = demo_run.employer[demo_run.employer >= 0]
    assert set(employed) <= set(alive)
