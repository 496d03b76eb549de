"""Emergent observables and the monthly frame stream written to CSV."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SIZE_BINS = ((0, 9), (10, 49), (50, 249), (250, None))
BIN_NAMES = ("micro", "small", "medium", "large")
STEADY_WINDOW = 12
STEADY_RUN = 24
STEADY_RTOL = 0.01


class UndefinedMetric(ValueError):
    """Raised when a statistic has no meaning for the input (e.g. all-zero wealth)."""


def size_bin(employees: int) -> int:
    if employees < 0:
        raise ValueError("negative head count")
    for i, (lo, hi) in enumerate(SIZE_BINS):
        if hi is None or employees <= hi:
            return i
    raise AssertionError


@dataclass(frozen=True)
class SizeDistribution:
    firm_shares: tuple[float, ...]
    employment_shares: tuple[float, ...]
    firms: int
    employment: int

    @property
    def empty(self) -> bool:
        return self.firms == 0


def firm_size_distribution(sizes: Iterable[int]) -> SizeDistribution:
    """Share of firms and of employment in each size bin.

    An empty roster yields ``SizeDistribution.empty``, with all-zero shares.
    """
    counts = np.zeros(len(SIZE_BINS))
    jobs = np.zeros(len(SIZE_BINS))
    for n in sizes:
        b = size_bin(int(n))
        counts[b] += 1
        jobs[b] += int(n)
    nf, ne = int(counts.sum()), int(jobs.sum())
    fs = tuple(counts / nf) if nf else (0.0,) * len(SIZE_BINS)
    es = tuple(jobs / ne) if ne else (0.0,) * len(SIZE_BINS)
    return SizeDistribution(tuple(map(float, fs)), tuple(map(float, es)), nf, ne)


def _check_wealth(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("need a non-empty 1-d sequence")
    if np.any(w < 0):
        raise ValueError("wealth must be nonnegative")
    if not w.sum() > 0:
        raise UndefinedMetric("gini is undefined for all-zero wealth")
    return w


def gini(wealth: Sequence[float]) -> float:
    """Sorted-rank Gini: ``2 * sum(i * x_i) / (n * sum(x)) - (n + 1) / n``."""
    x = np.sort(_check_wealth(wealth))
    n = x.size
    ranks = np.arange(1, n + 1)
    return float(2.0 * np.dot(ranks, x) / (n * x.sum()) - (n + 1.0) / n)


def gini_pairwise(wealth: Sequence[float]) -> float:
    """O(n^2) mean absolute difference over twice the mean; a test oracle."""
    x = _check_wealth(wealth)
    n = x.size
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2.0 * n * n * x.mean()))


def top_share(wealth: Sequence[float], fraction: float) -> float:
    """Wealth share held by the richest ``fraction`` of holders (at least one)."""
    x = np.sort(_check_wealth(wealth))[::-1]
    k = max(1, int(round(fraction * x.size)))
    return float(x[:k].sum() / x.sum())


def lorenz(wealth: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Population and wealth cumulative shares, both starting at 0 and ending at 1."""
    x = np.sort(_check_wealth(wealth))
    pop = np.arange(x.size + 1) / x.size
    cum = np.concatenate([[0.0], np.cumsum(x)])
    return pop, cum / cum[-1]


def relative_errors(emergent: dict[str, float], target: dict[str, float]) -> dict[str, float]:
    """Per-key ``|emergent - target| / target``; zero targets are skipped."""
    return {k: abs(emergent.get(k, 0.0) - t) / t for k, t in target.items() if t > 0}


def sam_reproduction_error(frames: Sequence[dict], economy, months: int = 12) -> dict[str, dict[str, float]]:
    """Annualised household consumption and sector output against scaled SAM targets.

    Uses the mean of the last ``months`` frames.  Returns two maps keyed by
    sector code: ``consumption`` and ``output``.
    """
    if len(frames) < months:
        raise ValueError(f"need at least {months} months of history, have {len(frames)}")
    tail = frames[-months:]
    cons = {c: 12.0 * float(np.mean([f[f"cons_{c}"] for f in tail])) for c in economy.codes}
    out = {c: 12.0 * float(np.mean([f[f"sales_{c}"] for f in tail])) for c in economy.codes}
    cons_t = {c: 12.0 * float(t) for c, t in zip(economy.codes, economy.household_target)}
    col = economy.sam.col_sums[economy.account_ids] * economy.monthly * 12.0
    out_t = {c: float(t) for c, t in zip(economy.codes, col)}
    return {"consumption": relative_errors(cons, cons_t), "output": relative_errors(out, out_t)}


# ---------------------------------------------------------------------------
# frames


def snapshot(state, consumption: np.ndarray, output: float, flows: dict, issuance: float,
             policy: bool) -> dict:
    """One immutable row of observables for the month just completed."""
    eco = state.economy
    alive = state.alive_firms
    sizes = state.roster_sizes()[alive]
    employed = int((state.employer >= 0).sum())
    N = eco.n_workers
    w = np.maximum(state.wealth, 0.0)
    row: dict = {"month": state.month}
    row["firms"] = int(alive.size)
    row["employed"] = employed
    row["unemployment"] = 1.0 - employed / N
    row["output"] = output
    row["consumption"] = float(consumption.sum())
    sec = state.f_sector[alive]
    sales = np.bincount(sec, weights=state.f_sales[alive], minlength=eco.n_sectors)
    for s, code in enumerate(eco.codes):
        row[f"cons_{code}"] = float(consumption[s])
    for s, code in enumerate(eco.codes):
        row[f"sales_{code}"] = float(sales[s])
    for s, code in enumerate(eco.codes):
        row[f"firms_{code}"] = int((sec == s).sum())
    for s, code in enumerate(eco.codes):
        m = sec == s
        row[f"price_{code}"] = float(state.f_price[alive][m].mean()) if m.any() else 0.0
    dist = firm_size_distribution(sizes)
    for name, share in zip(BIN_NAMES, dist.firm_shares):
        row[f"firms_{name}"] = share
    for name, share in zip(BIN_NAMES, dist.employment_shares):
        row[f"jobs_{name}"] = share
    row["total_wealth"] = float(state.wealth.sum())
    if w.sum() > 0:
        row["gini"] = gini(w)
        row["top10"] = top_share(w, 0.1)
        row["top1"] = top_share(w, 0.01)
    else:
        row["gini"] = row["top10"] = row["top1"] = math.nan
    row["births"] = state.births[-1] if state.births else 0
    row["deaths"] = state.deaths[-1] if state.deaths else 0
    row["births_annual"] = int(sum(state.births[-12:]))
    row["deaths_annual"] = int(sum(state.deaths[-12:]))
    row["births_expected"] = state.births_expected
    for k, v in flows.items():
        row[f"flow_{k}" if k != "deficit" else "gov_deficit"] = float(v)
    row["bond_issuance"] = issuance
    row["bonds_outstanding"] = state.inst.bonds_outstanding
    row["income_tax"] = state.income_tax
    row["money"] = state.total_money()
    row["policy"] = int(policy)
    cfg = state.config
    row["startup_probability"] = cfg.startup_probability
    row["phi"] = cfg.phi
    row["kappa"] = state.consumption_params.kappa
    row["wage_scale"] = cfg.wage_scale
    return row


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_frames(frames: Sequence[dict], path: str | Path) -> None:
    """CSV with the first frame's key order as header; floats written round-trip exact."""
    if not frames:
        raise ValueError("no frames to write")
    cols = list(frames[0])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for f in frames:
            w.writerow([_fmt(f[c]) for c in cols])


def _parse(cell: str):
    try:
        return int(cell)
    except ValueError:
        return float(cell)


def read_frames(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return []
    head = rows[0]
    return [dict(zip(head, map(_parse, r))) for r in rows[1:]]


# ---------------------------------------------------------------------------
# steady state


def moving_average(series: Sequence[float], window: int = STEADY_WINDOW) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.size < window:
        return np.zeros(0)
    c = np.concatenate([[0.0], np.cumsum(x)])
    return (c[window:] - c[:-window]) / window


def steady_state_month(series: Sequence[float], window: int = STEADY_WINDOW,
                       run: int = STEADY_RUN, rtol: float = STEADY_RTOL) -> int | None:
    """First month at which the trailing moving average has moved by less than
    ``rtol`` (relative, month on month) for ``run`` consecutive months.

    Returns the index into ``series`` or None.
    """
    ma = moving_average(series, window)
    streak = 0
    for t in range(1, ma.size):
        prev = ma[t - 1]
        ok = abs(ma[t] - prev) <= rtol * abs(prev) if prev != 0 else ma[t] == 0
        streak = streak + 1 if ok else 0
        if streak >= run:
            return t + window - 1
    return None


# ---------------------------------------------------------------------------
# reference data and report


def load_reference(path: str | Path) -> dict[str, float]:
    """Read a two-column ``key,value`` reference file."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "key":
                continue
            out[row[0].strip()] = float(row[1])
    return out


REQUIRED_COLUMNS = ("month", "firms", "unemployment", "consumption", "gini", "top10") + tuple(
    f"firms_{b}" for b in BIN_NAMES
) + tuple(f"jobs_{b}" for b in BIN_NAMES)


def report(frames: Sequence[dict], references: dict[str, float] | None = None) -> str:
    """Text comparison of final distributions with reference constants."""
    if not frames:
        raise ValueError("no frames")
    missing = [c for c in REQUIRED_COLUMNS if c not in frames[0]]
    if missing:
        raise KeyError(f"frames lack columns: {', '.join(missing)}")
    refs = references or {}
    last = frames[-1]
    buf = io.StringIO()
    p = lambda *a: print(*a, file=buf)  # noqa: E731
    p(f"months simulated: {last['month']}")
    ss_f = steady_state_month([f["firms"] for f in frames])
    ss_u = steady_state_month([1.0 - f["unemployment"] for f in frames])
    if ss_f is None or ss_u is None:
        p("no steady state reached")
    else:
        p(f"steady state: firms at month {ss_f}, employment at month {ss_u}")
    p(f"firms {last['firms']}  unemployment {last['unemployment']:.4f}")
    p("")
    p(f"{'bin':<8}{'firms %':>10}{'ref %':>10}{'jobs %':>10}")
    for b in BIN_NAMES:
        ref = refs.get(f"firms_{b}")
        ref_s = f"{ref:10.1f}" if ref is not None else f"{'-':>10}"
        p(f"{b:<8}{100 * last[f'firms_{b}']:10.1f}{ref_s}{100 * last[f'jobs_{b}']:10.1f}")
    p("")
    top_ref = refs.get("top10")
    p(f"gini {last['gini']:.4f}  top10 {100 * last['top10']:.1f}%"
      + (f" (ref {top_ref:.1f}%)" if top_ref is not None else "")
      + (f"  top1 {100 * last['top1']:.1f}%" if "top1" in last else ""))
    cons = [c[5:] for c in frames[0] if c.startswith("cons_")]
    if cons and len(frames) >= 12 and refs:
        targets = {c: refs[f"cons_{c}"] for c in cons if f"cons_{c}" in refs}
        if targets:
            tail = frames[-12:]
            emergent = {c: float(np.mean([f[f"cons_{c}"] for f in tail])) for c in targets}
            errs = relative_errors(emergent, targets)
            p("")
            p(f"{'sector':<16}{'emergent':>14}{'target':>14}{'rel err':>10}")
            for c in targets:
                e = errs.get(c)
                p(f"{c:<16}{emergent[c]:14.1f}{targets[c]:14.1f}{(f'{e:10.3f}' if e is not None else '   skipped')}")
    return buf.getvalue()
