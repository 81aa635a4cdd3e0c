"""Monte Carlo comparison of integral and derivative concurrent learning.

Each trial draws one set of gains, then runs both methods with that draw and
the same measurement-noise sequence. Per-trial seeds derive from the master
seed and the trial index only, so results do not depend on worker scheduling.
"""
from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import Gains
from .model import lookup_model
from .sim import TrialConfig, fmt, rms_window, run_trial, write_csv

__all__ = ["McConfig", "McSummary", "TrialRecord", "sample_trial_config", "rms_window",
           "run_monte_carlo", "emit_outputs", "load_config", "dump_config"]

PAIR = ("integral_cl", "derivative_cl")
LABELS = {"integral_cl": "Integral", "derivative_cl": "Derivative"}
OUTPUT_ENV = "INTCL_OUTPUT_DIR"


@dataclass(frozen=True)
class McConfig:
    trials: int = 200
    K_range: tuple[float, float] = (0.1, 15.0)
    Gamma_range: tuple[float, float] = (0.3, 3.0)
    k_cl_range: tuple[float, float] = (0.002, 0.2)
    delta_t_range: tuple[float, float] = (0.01, 1.0)
    noise_sigma: float = 0.3
    step_h: float = 0.0004
    duration: float = 100.0
    stack_size: int = 20
    rms_window: tuple[float, float] = (60.0, 100.0)
    max_filter_window: float = 0.5
    lambda_bar: float = 1e-4
    decimation: int = 25
    model: str = "two_state"
    seed: int = 0
    workers: int = 1
    output_dir: str | None = None

    def __post_init__(self):
        for name in ("K_range", "Gamma_range", "k_cl_range", "delta_t_range", "rms_window"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name}: lower bound {lo} must be below upper bound {hi}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


# --- flat key = value config files --------------------------------------------

_INFO_KEYS = ("build", "package")


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, tuple):
        return tuple(float(p) for p in raw.split(","))
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return None if raw in ("", "None") else raw


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(fmt(p) for p in v)
    if isinstance(v, float):
        return fmt(v)
    return str(v)


def parse_overrides(pairs: dict[str, str], base: McConfig | None = None) -> McConfig:
    base = base or McConfig()
    defaults = {f.name: getattr(base, f.name) for f in dataclasses.fields(McConfig)}
    kw = {}
    for key, raw in pairs.items():
        if key not in defaults:
            raise KeyError(f"unknown config key {key!r}")
        d = defaults[key]
        if d is None and key == "output_dir":
            d = ""
        kw[key] = _parse_value(raw, d)
    return dataclasses.replace(base, **kw)


def load_config(path, base: McConfig | None = None) -> McConfig:
    """Read a ``key = value`` file. Manifest-only keys (``trial.*``, build info) are skipped."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("trial.") or key in _INFO_KEYS:
            continue
        pairs[key] = value
    return parse_overrides(pairs, base)


def dump_config(mc: McConfig) -> list[str]:
    return [f"{f.name} = {_format_value(getattr(mc, f.name))}" for f in dataclasses.fields(McConfig)
            if f.name != "output_dir"]


# --- trials ---------------------------------------------------------------------

def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, trial_index]))


def sample_trial_config(rng: np.random.Generator, mc: McConfig, trial_index: int
                        ) -> tuple[TrialConfig, TrialConfig]:
    """Draw gains and window for one trial; both methods share the draw and noise seed."""
    model, _ = lookup_model(mc.model)
    K_s = rng.uniform(*mc.K_range)
    Gamma_s = rng.uniform(*mc.Gamma_range)
    k_cl = rng.uniform(*mc.k_cl_range)
    delta_t = rng.uniform(*mc.delta_t_range)
    noise_seed = int(rng.integers(2**63))
    gains = Gains.scaled_identity(model.n, model.m, K_s, Gamma_s, k_cl)
    common = dict(gains=gains, model=mc.model, delta_t=delta_t, noise_sigma=mc.noise_sigma,
                  step_h=mc.step_h, duration=mc.duration, seed=noise_seed,
                  lambda_bar=mc.lambda_bar, stack_size=mc.stack_size,
                  filter_window=min(mc.max_filter_window, delta_t),
                  decimation=mc.decimation, rms_window=mc.rms_window)
    return (TrialConfig(method="integral_cl", **common),
            TrialConfig(method="derivative_cl", **common))


@dataclass
class TrialRecord:
    index: int
    K_s: float
    Gamma_s: float
    k_cl: float
    delta_t: float
    filter_window: float
    noise_seed: int
    rms: dict[str, np.ndarray | None]
    diverged_time: dict[str, float | None]
    noise_head: dict[str, np.ndarray]
    t: np.ndarray | None = None
    e: dict[str, np.ndarray] = field(default_factory=dict)
    theta_tilde: dict[str, np.ndarray] = field(default_factory=dict)

    def diverged(self, method: str) -> bool:
        return self.rms[method] is None


def _run_pair(args) -> TrialRecord:
    mc, index = args
    icl, dcl = sample_trial_config(trial_rng(mc.seed, index), mc, index)
    rec = TrialRecord(index=index, K_s=float(icl.gains.K[0, 0]),
                      Gamma_s=float(icl.gains.Gamma[0, 0]), k_cl=icl.gains.k_cl,
                      delta_t=icl.delta_t, filter_window=dcl.window, noise_seed=icl.seed,
                      rms={}, diverged_time={}, noise_head={})
    for cfg in (icl, dcl):
        res = run_trial(cfg)
        rec.rms[cfg.method] = res.rms
        rec.diverged_time[cfg.method] = res.diverged_time
        rec.noise_head[cfg.method] = res.noise_head
        if res.rms is not None:
            rec.t = res.t
            rec.e[cfg.method] = res.e
            rec.theta_tilde[cfg.method] = res.theta_tilde
    return rec


@dataclass
class McSummary:
    config: McConfig
    trials: list[TrialRecord]
    mean_rms: dict[str, np.ndarray]
    diverged: dict[str, int]
    mean_t: np.ndarray | None
    mean_e: dict[str, np.ndarray]
    mean_theta_tilde: dict[str, np.ndarray]
    n: int
    m: int


def summarize(mc: McConfig, records: list[TrialRecord]) -> McSummary:
    model, _ = lookup_model(mc.model)
    n, m = model.n, model.m
    mean_rms, diverged, mean_e, mean_tt = {}, {}, {}, {}
    mean_t = None
    for method in PAIR:
        ok = [r for r in records if not r.diverged(method)]
        diverged[method] = len(records) - len(ok)
        mean_rms[method] = (np.mean([r.rms[method] for r in ok], axis=0) if ok
                            else np.full(n + m, np.nan))
        if ok:
            mean_t = ok[0].t
            mean_e[method] = np.mean([r.e[method] for r in ok], axis=0)
            mean_tt[method] = np.mean([r.theta_tilde[method] for r in ok], axis=0)
    return McSummary(mc, records, mean_rms, diverged, mean_t, mean_e, mean_tt, n, m)


def run_monte_carlo(mc: McConfig) -> McSummary:
    jobs = [(mc, i) for i in range(mc.trials)]
    if mc.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=mc.workers) as pool:
            records = list(pool.map(_run_pair, jobs))
    else:
        records = [_run_pair(j) for j in jobs]
    records.sort(key=lambda r: r.index)
    summary = summarize(mc, records)
    out = mc.output_dir or os.environ.get(OUTPUT_ENV)
    if out:
        emit_outputs(summary, out)
    return summary


# --- outputs --------------------------------------------------------------------

def _metric_names(n, m):
    return [f"e{i + 1}" for i in range(n)] + [f"theta{i + 1}" for i in range(m)]


def emit_outputs(summary: McSummary, directory) -> dict[str, Path]:
    """Write summary.csv, trials.csv, mean_trajectories.csv and manifest.txt."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {d}: {exc}") from exc
    if not os.access(d, os.W_OK):
        raise PermissionError(f"output directory {d} is not writable")
    n, m = summary.n, summary.m
    names = _metric_names(n, m)
    paths = {k: d / f for k, f in (("summary", "summary.csv"), ("trials", "trials.csv"),
                                   ("mean_trajectories", "mean_trajectories.csv"),
                                   ("manifest", "manifest.txt"))}

    rows = []
    if summary.trials:
        rows = [[LABELS[mth], *summary.mean_rms[mth], summary.diverged[mth]] for mth in PAIR]
    write_csv(paths["summary"], ["method", *names, "diverged"], rows)

    rows = []
    for r in summary.trials:
        for mth in PAIR:
            vals = r.rms[mth] if r.rms[mth] is not None else [float("nan")] * (n + m)
            rows.append([r.index, mth, r.K_s, r.Gamma_s, r.k_cl, r.delta_t, r.filter_window,
                         int(r.diverged(mth)), r.diverged_time[mth] if r.diverged(mth) else "",
                         *vals])
    write_csv(paths["trials"], ["trial", "method", "K_s", "Gamma_s", "k_cl", "delta_t",
                                  "filter_window", "diverged", "diverged_time",
                                  *[f"rms_{c}" for c in names]], rows)

    header = ["t"]
    for mth in PAIR:
        header += [f"{mth}_e{i + 1}" for i in range(n)]
        header += [f"{mth}_thetatilde{i + 1}" for i in range(m)]
    rows = []
    if summary.mean_t is not None and all(mth in summary.mean_e for mth in PAIR):
        cols = [summary.mean_t]
        for mth in PAIR:
            cols += [summary.mean_e[mth], summary.mean_theta_tilde[mth]]
        rows = np.column_stack(cols)
    write_csv(paths["mean_trajectories"], header, rows)

    lines = [f"package = intcl", f"build = {__version__}", *dump_config(summary.config)]
    for r in summary.trials:
        p = f"trial.{r.index}"
        lines += [f"{p}.K_s = {fmt(r.K_s)}", f"{p}.Gamma_s = {fmt(r.Gamma_s)}",
                  f"{p}.k_cl = {fmt(r.k_cl)}", f"{p}.delta_t = {fmt(r.delta_t)}",
                  f"{p}.filter_window = {fmt(r.filter_window)}",
                  f"{p}.noise_seed = {r.noise_seed}"]
    paths["manifest"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    return paths

