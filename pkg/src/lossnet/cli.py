"""Command line, experiment sweeps over N, log-N slope fits and the coupling report.

A sweep is described by one JSON document (see :class:`SweepConfig`).  Each
``(N, policy, seed)`` cell becomes one CSV row.  Threshold policies are
solved exactly instead of simulated.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .analytic import best_threshold, fluid_reward, stationary_distribution, threshold_chain, threshold_reward
from .engine import run, write_event_log
from .estimators import (
    Method,
    TooFewEpochs,
    detect_pfi_epochs,
    detect_sss_epochs,
    regenerative_gap,
    time_average_gap,
)
from .model import ModelParams
from .policies import PFI, CompositeAE, Threshold, coupled_run, parse_policy

__all__ = [
    "CSV_COLUMNS",
    "SweepConfig",
    "SlopeFit",
    "WORKERS_ENV",
    "run_cell",
    "run_sweep",
    "write_csv",
    "read_csv",
    "write_curves",
    "fit_log_slope",
    "exact_threshold_sweep",
    "coupling_report",
    "build_parser",
    "main",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "N", "policy", "seed", "method", "reward_rate", "gap_point", "gap_stderr",
    "idleness_per_epoch", "hrej_per_hour", "epoch_count", "wallclock_s",
)
WORKERS_ENV = "LOSSNET_WORKERS"


@dataclass
class SweepConfig:
    """Declarative sweep.

    ``horizon`` is in model hours and is the same for every N unless
    ``event_budget`` is given, in which case each N gets
    ``event_budget / (N (lambda_H + lambda_L + mu))`` hours.
    """

    lambda_H: float = 0.7
    lambda_L: float = 0.8
    mu: float = 1.0
    r_H: float = 2.0
    r_L: float = 1.0
    N_list: list = field(default_factory=lambda: [25, 50, 100])
    policies: list = field(default_factory=lambda: ["pfi"])
    horizon: float = 2000.0
    event_budget: Optional[float] = None
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    warmup: float = 0.05
    n_batches: int = 20
    min_epochs: int = 30
    out: Optional[str] = None
    curves_dir: Optional[str] = None

    def __post_init__(self):
        self.N_list = [int(n) for n in self.N_list]
        self.seeds = [int(s) for s in self.seeds]
        self.policies = list(self.policies)

    def validate(self) -> None:
        if not self.policies:
            raise ValueError("nothing to run: empty policy list")
        if not self.N_list:
            raise ValueError("nothing to run: empty N_list")
        if any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
            raise ValueError(f"N_list must be strictly increasing, got {self.N_list}")
        if not self.seeds:
            raise ValueError("nothing to run: empty seed list")
        for N in self.N_list:
            params = self.params(N)
            for text in self.policies:
                parse_policy(text, params)

    def params(self, N: int) -> ModelParams:
        return ModelParams(int(N), self.lambda_H, self.lambda_L, self.mu, self.r_H, self.r_L)

    def horizon_for(self, N: int) -> float:
        if self.event_budget is not None:
            return float(self.event_budget) / self.params(N).event_rate
        return float(self.horizon)

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SweepConfig":
        return cls.from_json(Path(path).read_text())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _epoch_kind(policy) -> str:
    return "pfi" if isinstance(policy, PFI) else "sss"


def run_cell(config: SweepConfig, N: int, policy_text: str, seed: int) -> dict:
    """One CSV row; errors become a ``failed`` row instead of propagating."""
    t0 = time.perf_counter()
    row = {"N": N, "policy": policy_text, "seed": seed}
    try:
        params = config.params(N)
        policy = parse_policy(policy_text, params)
        if isinstance(policy, Threshold):
            row.update(_exact_threshold_row(params, policy.theta))
        else:
            row.update(_simulated_row(config, params, policy, seed))
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        log.error("cell N=%s policy=%s seed=%s failed: %s", N, policy_text, seed, exc)
        row.update({"method": "failed", "reward_rate": math.nan, "gap_point": math.nan,
                    "gap_stderr": math.nan, "idleness_per_epoch": math.nan,
                    "hrej_per_hour": math.nan, "epoch_count": 0})
    row["wallclock_s"] = time.perf_counter() - t0
    return row


def _exact_threshold_row(params: ModelParams, theta: int) -> dict:
    pi = stationary_distribution(threshold_chain(params, theta))
    reward = threshold_reward(params, theta)
    return {
        "method": Method.EXACT.value,
        "reward_rate": reward,
        "gap_point": fluid_reward(params) - reward,
        "gap_stderr": 0.0,
        "idleness_per_epoch": math.nan,
        "hrej_per_hour": params.N * params.lambda_H * float(pi[-1]),
        "epoch_count": 0,
    }


def _simulated_row(config: SweepConfig, params: ModelParams, policy, seed: int) -> dict:
    horizon = config.horizon_for(params.N)
    traj = run(params, policy, horizon, seed, warmup=config.warmup)
    detect = detect_pfi_epochs if _epoch_kind(policy) == "pfi" else detect_sss_epochs
    epochs = detect(traj.action_log)
    try:
        gap = regenerative_gap(epochs, params, _epoch_kind(policy), config.min_epochs)
    except TooFewEpochs as exc:
        warnings.warn(f"N={params.N} {policy}: {exc}; falling back to batch means", RuntimeWarning)
        gap = time_average_gap(traj, config.n_batches, config.warmup)
    return {
        "method": gap.method.value,
        "reward_rate": traj.reward_rate,
        "gap_point": gap.point,
        "gap_stderr": gap.std_error,
        "idleness_per_epoch": float(epochs.idleness_integral.mean()) if len(epochs) else math.nan,
        "hrej_per_hour": traj.h_rejections_per_hour,
        "epoch_count": len(epochs),
    }


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _cell_args(config: SweepConfig):
    return [(config, N, p, s) for N in config.N_list for p in config.policies for s in config.seeds]


def _run_star(args):
    return run_cell(*args)


def run_sweep(config: SweepConfig, workers: Optional[int] = None) -> list[dict]:
    """Run every cell; rows come back in canonical (N, policy, seed) order."""
    config.validate()
    cells = _cell_args(config)
    n = _workers() if workers is None else workers
    if n > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            rows = list(pool.map(_run_star, cells))
    else:
        rows = [run_cell(*c) for c in cells]
    order = {p: i for i, p in enumerate(config.policies)}
    rows.sort(key=lambda r: (r["N"], order[r["policy"]], r["seed"]))
    if config.out:
        write_csv(rows, config.out)
    if config.curves_dir:
        write_curves(rows, config.curves_dir)
    return rows


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(rows: Iterable[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in CSV_COLUMNS])


def read_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = dict(rec)
            for key in ("N", "seed", "epoch_count"):
                row[key] = int(row[key]) if row[key] != "" else 0
            for key in ("reward_rate", "gap_point", "gap_stderr", "idleness_per_epoch",
                        "hrej_per_hour", "wallclock_s"):
                row[key] = float(row[key]) if row[key] != "" else math.nan
            out.append(row)
    return out


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.=-]+", "_", text)


def write_curves(rows: Sequence[dict], directory) -> list[Path]:
    """One two-column ``N gap`` file per policy, gap averaged over seeds."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for policy in dict.fromkeys(r["policy"] for r in rows):
        by_n: dict[int, list[float]] = {}
        for r in rows:
            if r["policy"] == policy and r["method"] != "failed":
                by_n.setdefault(r["N"], []).append(r["gap_point"])
        path = directory / f"gap_{_slug(policy)}.dat"
        with open(path, "w") as fh:
            fh.write(f"# N mean_gap  policy={policy}\n")
            for N in sorted(by_n):
                fh.write(f"{N} {np.mean(by_n[N]):.10g}\n")
        written.append(path)
    return written


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float
    p_value: float  # two-sided test of zero slope
    n: int


def fit_log_slope(points: Sequence[tuple[float, float]]) -> SlopeFit:
    """Ordinary least squares of gap on ln N.  Repeated N (several seeds) are fine."""
    pts = [(float(n), float(g)) for n, g in points]
    if len({n for n, _ in pts}) < 2:
        raise ValueError("slope fit needs at least two distinct N")
    x = np.log([n for n, _ in pts])
    y = np.array([g for _, g in pts])
    if np.ptp(y) == 0:
        return SlopeFit(0.0, float(y[0]), 1.0, 0.0, 1.0, len(pts))
    res = stats.linregress(x, y)
    r2 = float(min(max(res.rvalue ** 2, 0.0), 1.0))
    se = float(res.stderr) if len(pts) > 2 else math.nan
    p = float(res.pvalue) if len(pts) > 2 else math.nan
    return SlopeFit(float(res.slope), float(res.intercept), r2, se, p, len(pts))


def exact_threshold_sweep(base: ModelParams, N_list: Iterable[int]) -> list[dict]:
    """Best trunk reservation per N: ``theta*``, its reward and the fluid gap."""
    rows = []
    for N in N_list:
        params = base.with_n(N)
        theta, reward = best_threshold(params)
        fluid = fluid_reward(params)
        rows.append({"N": N, "theta_star": theta, "reward": reward, "fluid": fluid,
                     "gap": fluid - reward})
    return rows


def coupling_report(base: ModelParams, N_list: Sequence[int], horizon: float, seeds: Sequence[int],
                    left: str = "sss:c=15", right: Optional[str] = None) -> list[dict]:
    """Per N: pooled frequency of left epochs in which left and right decouple.

    ``right`` defaults to the accept-if-either composite of ``left`` and PFI.
    """
    rows = []
    for N in N_list:
        params = base.with_n(N)
        lp = parse_policy(left, params)
        rp = parse_policy(right, params) if right else CompositeAE(lp, PFI())
        epochs = decoupled = 0
        for seed in seeds:
            st = coupled_run(params, lp, rp, horizon, seed)
            epochs += st.epochs
            decoupled += st.decoupled_epochs
        freq = decoupled / epochs if epochs else math.nan
        se = math.sqrt(freq * (1 - freq) / epochs) if epochs else math.nan
        rows.append({"N": N, "left": str(lp), "right": str(rp), "epochs": epochs,
                     "decoupled_epochs": decoupled, "frequency": freq, "frequency_se": se})
    for prev, cur in zip(rows, rows[1:]):
        cur["non_increasing"] = bool(cur["frequency"] <= prev["frequency"])
    if rows:
        rows[0]["non_increasing"] = True
    return rows


# -- command line -----------------------------------------------------------

def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _load_config(args) -> SweepConfig:
    config = SweepConfig.load(args.config) if getattr(args, "config", None) else SweepConfig()
    if getattr(args, "n", None):
        config.N_list = _int_list(args.n)
    if getattr(args, "policy", None):
        config.policies = list(args.policy)
    if getattr(args, "horizon", None) is not None:
        config.horizon = args.horizon
        config.event_budget = None
    if getattr(args, "seed", None):
        config.seeds = _int_list(args.seed)
    if getattr(args, "out", None):
        config.out = args.out
    return config


def _emit(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, default=float)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _cmd_simulate(args) -> None:
    config = _load_config(args)
    N, text, seed = config.N_list[0], config.policies[0], config.seeds[0]
    params = config.params(N)
    policy = parse_policy(text, params)
    traj = run(params, policy, config.horizon_for(N), seed, warmup=config.warmup,
               record_events=bool(args.events))
    result = traj.summary()
    result["fluid_reward"] = fluid_reward(params)
    if not isinstance(policy, Threshold):
        row = _simulated_row(config, params, policy, seed)
        result.update({k: row[k] for k in ("method", "gap_point", "gap_stderr", "epoch_count")})
    if args.events:
        with open(args.events, "w") as fh:
            write_event_log(traj.events, fh)
    _emit(result, config.out)


def _cmd_sweep(args) -> None:
    config = _load_config(args)
    if args.curves:
        config.curves_dir = args.curves
    rows = run_sweep(config, workers=args.workers)
    if not config.out:
        writer = csv.writer(sys.stdout)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in CSV_COLUMNS])


def _cmd_exact(args) -> None:
    config = _load_config(args)
    base = config.params(1 if args.n is None else config.N_list[0])
    N_list = config.N_list if args.n else [2 ** k for k in range(4, 15)]
    rows = exact_threshold_sweep(base, N_list)
    fit = fit_log_slope([(r["N"], r["gap"]) for r in rows]) if len(rows) >= 2 else None
    _emit({"rows": rows, "fit": asdict(fit) if fit else None}, config.out)


def _cmd_couple(args) -> None:
    config = _load_config(args)
    N_list = config.N_list if args.n else [25, 100]
    horizon = args.horizon if args.horizon is not None else 400.0
    rows = coupling_report(config.params(N_list[0]), N_list, horizon, config.seeds,
                           left=args.left, right=args.right)
    _emit(rows, config.out)


def _cmd_fit(args) -> None:
    rows = [r for r in read_csv(args.csv) if r["method"] != "failed"]
    policies = [args.policy] if args.policy else list(dict.fromkeys(r["policy"] for r in rows))
    out = {}
    for p in policies:
        pts = [(r["N"], r["gap_point"]) for r in rows if r["policy"] == p]
        out[p] = asdict(fit_log_slope(pts))
    _emit(out, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lossnet", description="Two-class loss network simulation lab")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policy=True):
        p.add_argument("--config", help="JSON sweep configuration")
        p.add_argument("--n", help="N or comma-separated list of N")
        if policy:
            p.add_argument("--policy", action="append", help="policy string, repeatable")
        p.add_argument("--horizon", type=float, help="horizon in hours")
        p.add_argument("--seed", help="seed or comma-separated seeds")
        p.add_argument("--out", help="output path (stdout when omitted)")

    p = sub.add_parser("simulate", help="run one cell and print a JSON summary")
    common(p)
    p.add_argument("--events", help="write the event log as NDJSON to this path")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="run a configured sweep and write the CSV")
    common(p)
    p.add_argument("--curves", help="directory for two-column gap-vs-N files")
    p.add_argument("--workers", type=int, help=f"worker processes (default from ${WORKERS_ENV})")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("exact", help="best threshold per N from the exact chain")
    common(p, policy=False)
    p.set_defaults(func=_cmd_exact)

    p = sub.add_parser("couple", help="decoupling frequency per left epoch")
    common(p, policy=False)
    p.add_argument("--left", default="sss:c=15")
    p.add_argument("--right", default=None, help="defaults to ae:<left>,pfi")
    p.set_defaults(func=_cmd_couple)

    p = sub.add_parser("fit", help="slope of gap against ln N from a sweep CSV")
    p.add_argument("csv")
    p.add_argument("--policy")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_fit)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 1
    return 0
