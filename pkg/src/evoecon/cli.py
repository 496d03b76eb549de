"""Command-line entry point: ``evoecon run | calibrate | report``.

Exit codes: 0 success, 2 invalid or missing input, 3 money-conservation
abort, 4 calibration did not converge.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import platform
import sys
import time
import warnings
from pathlib import Path

from . import __version__, kernels
from .calibration import CalibrationError, calibrate, read_targets, seed_dispersion, write_report
from .engine import (
    ConservationError,
    DeploymentError,
    PolicyError,
    SimConfig,
    apply_policy,
    build_economy,
    deploy,
    initial_frame,
    parse_policies,
    save_checkpoint,
    step,
)
from .market import TransactionLog
from .metrics import load_reference, read_frames, report, write_frames
from .sam_io import SAMError, SAMWarning, load_sam

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CONSERVATION = 3
EXIT_DIVERGED = 4


class UsageError(Exception):
    pass


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    code_version: str
    sam_path: str
    sam_sha256: str
    started: str
    finished: str | None = None
    outputs: dict = dataclasses.field(default_factory=dict)
    backend: str = ""
    python: str = platform.python_version()
    status: str = "running"

    def write(self, out: Path) -> None:
        (out / "manifest.json").write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _parse_overrides(extra: list[str]) -> dict:
    """``--key value`` pairs naming config fields."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"{tok} needs a value")
            raw = extra[i + 1]
            i += 2
        try:
            out[key] = SimConfig.coerce(key, raw)
        except KeyError:
            raise UsageError(f"unknown option or config key {tok!r}") from None
        except ValueError as exc:
            raise UsageError(f"{tok}: {exc}") from None
    return out


def _load_config(args, overrides: dict) -> SimConfig:
    for name in ("months", "seed"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    if args.sam:
        if not Path(args.sam).is_file():
            raise UsageError(f"SAM file not found: {args.sam}")
        overrides["sam_path"] = str(Path(args.sam).resolve())
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg = SimConfig.from_file(args.config, **overrides)
    else:
        cfg = SimConfig(**overrides)
    if not Path(cfg.sam_path).is_file():
        raise UsageError(f"SAM file not found: {cfg.sam_path}")
    return cfg


def _prepare_out(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(command: str, cfg: SimConfig, out: Path) -> RunManifest:
    sam = Path(cfg.sam_path)
    (out / "config.cfg").write_text(cfg.to_text())
    m = RunManifest(command, dataclasses.asdict(cfg), cfg.seed, __version__, str(sam), _digest(sam), _now(),
                    backend=kernels.backend())
    m.outputs["config"] = "config.cfg"
    m.write(out)
    return m


def cmd_run(args, overrides: dict) -> int:
    cfg = _load_config(args, overrides)
    out = _prepare_out(args.out)
    policies = []
    if args.policy:
        if not Path(args.policy).is_file():
            raise UsageError(f"policy file not found: {args.policy}")
        policies = parse_policies(Path(args.policy).read_text(encoding="utf-8"))
    manifest = _manifest("run", cfg, out)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SAMWarning)
        state = deploy(cfg)
    for p in policies:
        apply_policy(state, p)
    txlog = None
    if args.tx_log:
        txlog = TransactionLog(out / args.tx_log, state.economy.codes)
        state.log_transactions = True
        manifest.outputs["transactions"] = args.tx_log

    status = EXIT_OK
    try:
        for _ in range(cfg.months):
            step(state)
            if txlog:
                txlog.write(state.transactions)
    except ConservationError as exc:
        print(f"conservation abort: {exc}", file=sys.stderr)
        (out / "diagnostics.txt").write_text(str(exc) + "\n")
        manifest.outputs["diagnostics"] = "diagnostics.txt"
        status = EXIT_CONSERVATION
    finally:
        if txlog:
            txlog.close()

    # a zero-month run still records the deployed state
    frames = state.frames or [initial_frame(state)]
    write_frames(frames, out / "frames.csv")
    save_checkpoint(state, out / "checkpoint.pkl")
    manifest.outputs.update(frames="frames.csv", checkpoint="checkpoint.pkl")
    manifest.finished = _now()
    manifest.status = "ok" if status == EXIT_OK else "conservation-abort"
    manifest.write(out)
    if status == EXIT_OK:
        print(f"{cfg.months} months written to {out / 'frames.csv'}")
    return status


def cmd_calibrate(args, overrides: dict) -> int:
    if not args.targets or not Path(args.targets).is_file():
        raise UsageError(f"targets file not found: {args.targets}")
    cfg = _load_config(args, overrides)
    targets, schedule = read_targets(args.targets, cfg)
    changes = {}
    if args.gain is not None:
        changes["adjustment_gain"] = args.gain
    if args.months is not None:
        changes["horizon_months"] = args.months
    if changes:
        schedule = dataclasses.replace(schedule, **changes)
    out = _prepare_out(args.out)
    manifest = _manifest("calibrate", cfg, out)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SAMWarning)
        result = calibrate(cfg, targets, schedule)
        if args.seeds > 0 and result.ok:
            result.dispersion, _ = seed_dispersion(result.config, seeds=range(1, args.seeds + 1),
                                                   months=schedule.horizon_months, workers=args.seeds)
    (out / "calibrated.cfg").write_text(result.config.to_text())
    write_report(result, out / "convergence.csv")
    summary = result.summary()
    if result.dispersion:
        worst = max(result.dispersion.values())
        summary += f"\nsingle-run sufficiency: {'pass' if worst <= schedule.tolerance else 'fail'}"
    (out / "summary.txt").write_text(summary + "\n")
    print(summary)
    manifest.outputs.update(calibrated="calibrated.cfg", report="convergence.csv", summary="summary.txt")
    manifest.finished = _now()
    manifest.status = "converged" if result.ok else "diverged"
    manifest.write(out)
    return EXIT_OK if result.ok else EXIT_DIVERGED


def _sam_targets(config_path: Path) -> dict[str, float]:
    cfg = SimConfig.from_file(config_path)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SAMWarning)
        eco = build_economy(load_sam(cfg.sam_path), cfg)
    return {f"cons_{c}": float(t) for c, t in zip(eco.codes, eco.household_target)}


def cmd_report(args, overrides: dict) -> int:
    if overrides:
        raise UsageError("report takes no config overrides")
    path = Path(args.frames)
    if not path.is_file():
        raise UsageError(f"frames file not found: {path}")
    frames = read_frames(path)
    if not frames:
        raise UsageError(f"{path} holds no frames")
    refs: dict[str, float] = {}
    if args.references:
        rdir = Path(args.references)
        if not rdir.is_dir():
            raise UsageError(f"references directory not found: {rdir}")
        for f in sorted(rdir.glob("*.csv")):
            refs.update(load_reference(f))
    cfg_path = Path(args.config) if args.config else path.parent / "config.cfg"
    if cfg_path.is_file():
        refs.update(_sam_targets(cfg_path))
    try:
        print(report(frames, refs), end="")
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evoecon", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--backend", choices=sorted(kernels.BACKENDS), help="kernel implementation")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--sam", help="SAM CSV, overriding the config")
        p.add_argument("--months", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out", help="output directory")

    r = sub.add_parser("run", help="deploy and simulate")
    common(r)
    r.add_argument("--policy", help="policy file: month,kind,value[,sector]")
    r.add_argument("--tx-log", nargs="?", const="transactions.csv", help="write every transaction to CSV")

    c = sub.add_parser("calibrate", help="evolutionary calibration")
    common(c)
    c.add_argument("--targets", help="calibration targets file")
    c.add_argument("--gain", type=float, help="override adjustment gain")
    c.add_argument("--seeds", type=int, default=3, help="seeds for the dispersion check (0 skips)")

    p = sub.add_parser("report", help="compare frames with reference values")
    p.add_argument("frames")
    p.add_argument("--references", help="directory of key,value reference CSVs")
    p.add_argument("--config", help="config used for the run (default: config.cfg beside the frames)")
    return ap


COMMANDS = {"run": cmd_run, "calibrate": cmd_calibrate, "report": cmd_report}


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    try:
        if args.backend:
            kernels.use_backend(args.backend)
        overrides = _parse_overrides(extra)
        return COMMANDS[args.command](args, overrides)
    except ConservationError as exc:
        print(f"conservation abort: {exc}", file=sys.stderr)
        return EXIT_CONSERVATION
    except (UsageError, ValueError, SAMError, DeploymentError, PolicyError, CalibrationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
