"""Evolutionary calibration: long runs with slow multiplicative parameter nudges.

Every review the observables of the last year are compared with their
targets.  A lever whose target is outside tolerance is multiplied by
``(ratio) ** gain``, the factor clipped to ``[0.5, 2]``.  Levers whose target
already sits inside tolerance are left alone, so a calibrated configuration
does not drift.

Lever assignments (inferred, not given by the source model):

* firm births      -> startup_probability
* household wealth -> kappa, with phi = propensity / kappa moving inversely
  (wealth above target makes households spend faster and hold less)

Unemployment and aggregate household consumption are targets without a
lever of their own.  In this economy employment follows nominal demand, so
both move with the same demand lever as wealth; they must sit within
tolerance for the run to count as converged.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import SimConfig, SimState, deploy, step
from .metrics import gini, sam_reproduction_error, steady_state_month

FACTOR_BOUNDS = (0.5, 2.0)
DIVERGENCE_BAND = (0.1, 10.0)
MIN_HISTORY = 24

LEVERS = {
    "births": "startup_probability",
    "wealth": "kappa",
}
# +1 raises the lever when the observable is above target; -1 lowers it
_LEVER_SIGN = {"births": -1, "wealth": +1}


class CalibrationError(ValueError):
    pass


class InsufficientHistory(CalibrationError):
    pass


@dataclass(frozen=True)
class CalibrationTargets:
    """Targets in real-economy units; :meth:`scaled` converts to simulation size."""

    unemployment_rate: float = 0.044
    wealth: float = 1.5e12
    firm_births_per_year: float = 36000.0
    # annual household consumption in SAM units; None takes the SAM-derived value
    consumption: float | None = None

    def __post_init__(self):
        for name in ("unemployment_rate", "wealth", "firm_births_per_year", "consumption"):
            v = getattr(self, name)
            if v is None and name == "consumption":
                continue
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise CalibrationError(f"target {name} must be positive and finite, got {v!r}")
        if self.unemployment_rate >= 1:
            raise CalibrationError("unemployment_rate must be below 1")

    @classmethod
    def from_config(cls, config: SimConfig) -> "CalibrationTargets":
        return cls(config.unemployment_target, config.wealth_target, config.firm_births_per_year)

    def scaled(self, economy) -> dict[str, float]:
        cons = (12.0 * float(economy.household_target.sum()) if self.consumption is None
                else self.consumption * economy.monthly * 12.0)
        return {
            "births": self.firm_births_per_year / economy.scale,
            "wealth": self.wealth / economy.scale,
            "unemployment": self.unemployment_rate,
            "consumption": cons,
        }

    def sam_sector_totals(self, economy) -> dict[str, float]:
        cols = economy.sam.col_sums[economy.account_ids] * economy.monthly * 12.0
        return {c: float(v) for c, v in zip(economy.codes, cols)}


@dataclass(frozen=True)
class CalibrationSchedule:
    horizon_months: int = 600
    adjustment_gain: float = 0.1
    review_interval: int = 12
    tolerance: float = 0.05
    # months of deployment before the first review
    warmup_months: int = 240

    def __post_init__(self):
        if not 0 <= self.adjustment_gain <= 1:
            raise CalibrationError("adjustment_gain must lie in [0, 1]")
        if self.review_interval < 1:
            raise CalibrationError("review_interval must be at least 1")
        if self.horizon_months < 2 * self.review_interval:
            raise CalibrationError("horizon must cover at least two review intervals")
        if not self.tolerance > 0:
            raise CalibrationError("tolerance must be positive")
        if self.warmup_months < 0:
            raise CalibrationError("warmup_months must be nonnegative")


_TARGET_KEYS = {f.name for f in dataclasses.fields(CalibrationTargets)}
_SCHEDULE_KEYS = {f.name for f in dataclasses.fields(CalibrationSchedule)}


def read_targets(path: str | Path, config: SimConfig | None = None
                 ) -> tuple[CalibrationTargets, CalibrationSchedule]:
    """Parse a flat ``key = value`` targets file; schedule keys may appear too.

    Target keys missing from the file fall back to ``config``.
    """
    base = CalibrationTargets.from_config(config) if config else CalibrationTargets()
    tv: dict = {}
    sv: dict = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CalibrationError(f"{path}:{n}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key in _TARGET_KEYS:
            tv[key] = float(raw)
        elif key in _SCHEDULE_KEYS:
            sv[key] = float(raw) if key in ("adjustment_gain", "tolerance") else int(raw)
        else:
            raise CalibrationError(f"{path}:{n}: unknown key {key!r}")
    return dataclasses.replace(base, **tv), CalibrationSchedule(**sv)


# ---------------------------------------------------------------------------
# observables


def observe(frames: list[dict], months: int = 12) -> dict[str, float]:
    """Annualised calibration observables over the last ``months`` frames."""
    tail = frames[-months:]
    return {
        "births": 12.0 * float(np.mean([f["births_expected"] for f in tail])),
        "wealth": float(np.mean([f["total_wealth"] for f in tail])),
        "unemployment": float(np.mean([f["unemployment"] for f in tail])),
        "consumption": 12.0 * float(np.mean([f["consumption"] for f in tail])),
    }


def target_error(name: str, observed: float, target: float) -> float:
    """Relative miss; unemployment is judged on the employment rate."""
    if name == "unemployment":
        return abs(observed - target) / (1.0 - target)
    return abs(observed - target) / target


def _ratio(name: str, observed: float, target: float) -> float:
    if name == "unemployment":
        return (1.0 - observed) / (1.0 - target)
    return observed / target


def diverged(observed: dict[str, float], targets: dict[str, float]) -> list[str]:
    lo, hi = DIVERGENCE_BAND
    return [k for k, t in targets.items()
            if not math.isfinite(observed[k]) or not lo <= _ratio(k, observed[k], t) <= hi]


def update_factor(name: str, observed: float, target: float, gain: float) -> float:
    """Clipped multiplicative update for the lever tied to ``name``."""
    if gain == 0:
        return 1.0
    # floor keeps zero observations finite; the clip then bounds the step
    ratio = max(observed, 1e-12) / target
    lo, hi = FACTOR_BOUNDS
    return min(max(ratio ** (_LEVER_SIGN[name] * gain), lo), hi)


def convergence_indicators(state: SimState) -> dict[str, float]:
    """Headline fit and distribution readings from the run's history."""
    frames = state.frames
    if len(frames) < MIN_HISTORY:
        raise InsufficientHistory(f"need {MIN_HISTORY} months of history, have {len(frames)}")
    errs = sam_reproduction_error(frames, state.economy)["output"]
    last = frames[-1]
    return {
        "sectoral_output_error": max(errs.values()) if errs else 0.0,
        "unemployment": float(last["unemployment"]),
        "firm_count": float(last["firms"]),
        "gini": float(last["gini"]),
        "births_annualized": float(last["births_annual"]),
    }


# ---------------------------------------------------------------------------
# loop


@dataclass
class CalibrationResult:
    config: SimConfig
    rows: list[dict] = field(default_factory=list)
    converged: bool = False
    diverged: list[str] = field(default_factory=list)
    months: int = 0
    indicators: dict[str, float] = field(default_factory=dict)
    dispersion: dict[str, float] = field(default_factory=dict)
    state: SimState | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.converged and not self.diverged

    def summary(self) -> str:
        lines = [f"months run: {self.months}", f"converged: {'yes' if self.converged else 'no'}"]
        if self.diverged:
            lines.append(f"diverged: {', '.join(self.diverged)}")
        for k, lever in LEVERS.items():
            lines.append(f"{lever} = {_lever_value(self.config, lever)!r}  (steers {k})")
        lines.append(f"phi = {self.config.phi!r}")
        for k, v in self.indicators.items():
            lines.append(f"{k}: {v:.4g}")
        for k, v in self.dispersion.items():
            lines.append(f"seed dispersion {k}: {v:.4g}")
        return "\n".join(lines)


def _lever_value(config: SimConfig, lever: str) -> float:
    if lever == "kappa":
        return config.consumption.kappa
    return getattr(config, lever)


def _steady(frames: list[dict]) -> bool:
    return (steady_state_month([f["firms"] for f in frames]) is not None
            and steady_state_month([1.0 - f["unemployment"] for f in frames]) is not None)


def calibrate(config: SimConfig, targets: CalibrationTargets | None = None,
              schedule: CalibrationSchedule | None = None, sam=None, *,
              state: SimState | None = None) -> CalibrationResult:
    """Run one long simulation, nudging levers at each review.

    Stops at the horizon, or early once every target is within tolerance
    and the firm count and employment have reached steady state.
    """
    targets = targets or CalibrationTargets.from_config(config)
    schedule = schedule or CalibrationSchedule()
    st = state or deploy(config, sam)
    goal = targets.scaled(st.economy)
    result = CalibrationResult(config=st.config)

    while st.month < schedule.horizon_months:
        step(st)
        m = st.month
        if m < max(schedule.warmup_months, MIN_HISTORY) or m % schedule.review_interval:
            continue
        obs = observe(st.frames, schedule.review_interval)
        within = {k: target_error(k, obs[k], goal[k]) <= schedule.tolerance for k in goal}
        row: dict = {"month": m}
        for k in goal:
            row.update({f"{k}_observed": obs[k], f"{k}_target": goal[k], f"{k}_within": int(within[k])})
        changes = {}
        for k, lever in LEVERS.items():
            factor = 1.0 if within[k] else update_factor(k, obs[k], goal[k], schedule.adjustment_gain)
            new = min(_lever_value(st.config, lever) * factor, 1.0)
            if lever == "kappa":
                changes["phi"] = st.config.phi / factor
                if st.config.kappa is not None:
                    changes["kappa"] = new
            else:
                changes[lever] = new
            row.update({f"{lever}_factor": factor, lever: new})
        row["phi"] = changes["phi"]
        steady = _steady(st.frames)
        row["steady"] = int(steady)
        result.rows.append(row)
        if changes:
            st.config = st.config.replace(**changes)
        if steady and all(within.values()):
            result.converged = True
            break

    result.config = st.config
    result.months = st.month
    if len(st.frames) >= schedule.review_interval:
        result.diverged = diverged(observe(st.frames, schedule.review_interval), goal)
    if len(st.frames) >= MIN_HISTORY:
        result.indicators = convergence_indicators(st)
    result.state = st
    return result


def _final_indicators(args) -> dict[str, float]:
    config, months = args
    st = deploy(config)
    for _ in range(months):
        step(st)
    ind = convergence_indicators(st)
    tail = st.frames[-12:]
    ind["gini"] = float(gini(np.maximum(st.wealth, 0.0)))
    ind["consumption"] = 12.0 * float(np.mean([f["consumption"] for f in tail]))
    ind["employment"] = 1.0 - float(np.mean([f["unemployment"] for f in tail]))
    return ind


def seed_dispersion(config: SimConfig, seeds=(1, 2, 3), months: int = 600, workers: int = 1
                    ) -> tuple[dict[str, float], list[dict[str, float]]]:
    """Spread of final indicators across seeds, as (max - min) / |mean|.

    Each seed runs its own simulation; with ``workers > 1`` they run in
    separate processes.
    """
    jobs = [(config.replace(seed=s), months) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            finals = list(pool.map(_final_indicators, jobs))
    else:
        finals = [_final_indicators(j) for j in jobs]
    spread = {}
    for key in ("consumption", "employment", "gini", "firm_count"):
        vals = np.array([f[key] for f in finals])
        mean = abs(vals.mean())
        spread[key] = float((vals.max() - vals.min()) / mean) if mean > 0 else 0.0
    return spread, finals


def write_report(result: CalibrationResult, path: str | Path) -> None:
    """Convergence report: one CSV row per review."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# levers: " + ", ".join(f"{k}->{v}" for k, v in LEVERS.items()) + " (inferred)\n")
        if not result.rows:
            fh.write("month\n")
            return
        w = csv.DictWriter(fh, fieldnames=list(result.rows[0]))
        w.writeheader()
        for r in result.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
