"""Experiment orchestration: shared measurement streams, metrics, CSV, sweeps.

A run simulates one measurement stream and feeds the same values to every
enabled estimator (``raw`` is the direct inversion ``f(p_hat)``).  Step
timings are taken around each estimator call only and are excluded from the
determinism guarantees; every other column is a pure function of the config.
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .bianchi import ProtocolParams
from .dcf import LoadSchedule, Measurement, MeasurementMode, run_schedule
from .kalman import EstimatorError, KfConfig, kf_init, kf_step
from .nn import NnConfig, nn_init, nn_step

__all__ = [
    "CSV_COLUMNS",
    "ESTIMATORS",
    "PRESETS",
    "ConfigError",
    "ExperimentConfig",
    "SegmentMetrics",
    "TimingReport",
    "TraceRecord",
    "bench_timing",
    "compute_metrics",
    "config_from_dict",
    "config_to_dict",
    "emit_csv",
    "load_config",
    "read_csv",
    "run_estimators",
    "run_experiment",
    "simulate",
    "sweep",
]

SCHEMA_VERSION = 1
ESTIMATORS = ("kf", "nn", "raw")

PRESETS: Dict[str, Tuple[Tuple[int, int], ...]] = {
    "small-n": ((3, 2000), (6, 2000), (9, 2000), (12, 2000)),
    "large-n": ((21, 2000), (25, 2000), (30, 2000), (34, 2000)),
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: ProtocolParams = ProtocolParams()
    schedule: LoadSchedule = LoadSchedule(PRESETS["small-n"])
    k_all: int = 100
    seed: int = 0
    mode: MeasurementMode = MeasurementMode.CONDITIONAL
    freeze_on_busy: bool = False
    kf: KfConfig = KfConfig()
    nn: NnConfig = NnConfig()
    nn_seed: Optional[int] = None
    estimators: Tuple[str, ...] = ESTIMATORS
    convergence_band: float = 1.0
    convergence_hold: int = 50
    stable_tail: int = 1000
    out_dir: str = "out"

    def __post_init__(self):
        if not self.estimators:
            raise ConfigError("estimators", "at least one estimator must be enabled")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ConfigError("estimators", f"unknown estimator {name!r}")
        if self.k_all < 1:
            raise ConfigError("k_all", "must be >= 1")
        if self.kf.k_all != self.k_all:
            # R_t uses the observation window length
            object.__setattr__(self, "kf", dataclasses.replace(self.kf, k_all=self.k_all))
        if self.convergence_hold < 1:
            raise ConfigError("metrics.convergence_hold", "must be >= 1")
        if not self.convergence_band > 0:
            raise ConfigError("metrics.convergence_band", "must be > 0")
        if self.stable_tail < 1:
            raise ConfigError("metrics.stable_tail", "must be >= 1")

    def effective_nn(self) -> NnConfig:
        seed = self.seed if self.nn_seed is None else self.nn_seed
        return dataclasses.replace(self.nn, init_seed=seed)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)

    def enabled(self, name: str) -> bool:
        return name in self.estimators


@dataclass
class TraceRecord:
    t: int
    n_true: int
    p_hat: float
    n_hat_raw: Optional[float] = None
    n_kf: Optional[float] = None
    n_nn: Optional[float] = None
    g_kf: Optional[float] = None
    g_nn: Optional[float] = None
    loss: Optional[float] = None
    lr: Optional[float] = None
    alpha: Optional[float] = None
    kf_step_us: Optional[float] = None
    nn_step_us: Optional[float] = None


CSV_COLUMNS = tuple(f.name for f in dataclasses.fields(TraceRecord))
ESTIMATE_COLUMNS = ("t", "n_true", "p_hat", "n_hat_raw", "n_kf", "n_nn", "g_kf", "g_nn", "loss", "lr", "alpha")
_ESTIMATE_FIELD = {"kf": "n_kf", "nn": "n_nn", "raw": "n_hat_raw"}


@dataclass
class SegmentMetrics:
    index: int
    n_true: int
    start: int
    length: int
    rmse: Dict[str, float] = field(default_factory=dict)
    convergence_slots: Dict[str, Optional[int]] = field(default_factory=dict)
    detection_delay: Dict[str, Optional[int]] = field(default_factory=dict)
    tail_triggers: Dict[str, int] = field(default_factory=dict)
    mean_step_us: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {"segment": self.index, "n_true": self.n_true, "start": self.start, "length": self.length}
        for key in ("rmse", "convergence_slots", "detection_delay", "tail_triggers", "mean_step_us"):
            for name, value in getattr(self, key).items():
                row[f"{key}_{name}"] = value
        return row


# ---------------------------------------------------------------- config I/O


def _section(data: Mapping[str, Any], key: str) -> Mapping[str, Any]:
    value = data.get(key, {})
    if not isinstance(value, Mapping):
        raise ConfigError(key, "must be an object")
    return value


def _build(cls, data: Mapping[str, Any], prefix: str, overrides: Optional[Dict[str, Any]] = None):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = dict(overrides or {})
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{prefix}.{key}", "unknown field")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from exc


def _schedule_from(data: Mapping[str, Any]) -> LoadSchedule:
    if "schedule" in data and "preset" in data:
        raise ConfigError("schedule", "give either 'schedule' or 'preset', not both")
    if "preset" in data:
        name = data["preset"]
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return LoadSchedule(PRESETS[name])
    raw = data.get("schedule", PRESETS["small-n"])
    try:
        return LoadSchedule(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError("schedule", str(exc)) from exc


def config_from_dict(data: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a parsed config document into an :class:`ExperimentConfig`."""
    if not isinstance(data, Mapping):
        raise ConfigError("<root>", "config must be an object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    known = {
        "schema_version", "protocol", "schedule", "preset", "k_all", "seed", "mode",
        "freeze_on_busy", "kf", "nn", "nn_seed", "estimators", "metrics", "out_dir",
    }
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown field")
    kwargs: Dict[str, Any] = {
        "protocol": _build(ProtocolParams, _section(data, "protocol"), "protocol"),
        "schedule": _schedule_from(data),
    }
    for key, kind in (("k_all", int), ("seed", int), ("nn_seed", int), ("freeze_on_busy", bool), ("out_dir", str)):
        if key in data:
            value = data[key]
            if key == "nn_seed" and value is None:
                continue
            if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
                raise ConfigError(key, f"must be of type {kind.__name__}")
            kwargs[key] = value
    if kwargs.get("k_all", 1) < 1:
        raise ConfigError("k_all", "must be >= 1")
    if "mode" in data:
        try:
            kwargs["mode"] = MeasurementMode(data["mode"])
        except ValueError as exc:
            choices = [m.value for m in MeasurementMode]
            raise ConfigError("mode", f"unknown mode {data['mode']!r}; choose from {choices}") from exc
    if "estimators" in data:
        est = data["estimators"]
        if isinstance(est, str):
            est = [e for e in est.split(",") if e]
        kwargs["estimators"] = tuple(est)
    k_all = kwargs.get("k_all", 100)
    kwargs["kf"] = _build(KfConfig, _section(data, "kf"), "kf", {"k_all": k_all})
    kwargs["nn"] = _build(NnConfig, _section(data, "nn"), "nn")
    metrics = _section(data, "metrics")
    for key in metrics:
        if key not in ("convergence_band", "convergence_hold", "stable_tail"):
            raise ConfigError(f"metrics.{key}", "unknown field")
        kwargs[key] = metrics[key]
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("<root>", str(exc)) from exc


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    kf = dataclasses.asdict(cfg.kf)
    kf.pop("k_all")
    nn = dataclasses.asdict(cfg.nn)
    for key in ("hidden", "activations"):
        nn[key] = list(nn[key])
    return {
        "schema_version": SCHEMA_VERSION,
        "protocol": dataclasses.asdict(cfg.protocol),
        "schedule": [list(s) for s in cfg.schedule.segments],
        "k_all": cfg.k_all,
        "seed": cfg.seed,
        "mode": cfg.mode.value,
        "freeze_on_busy": cfg.freeze_on_busy,
        "kf": kf,
        "nn": nn,
        "nn_seed": cfg.nn_seed,
        "estimators": list(cfg.estimators),
        "metrics": {
            "convergence_band": cfg.convergence_band,
            "convergence_hold": cfg.convergence_hold,
            "stable_tail": cfg.stable_tail,
        },
        "out_dir": cfg.out_dir,
    }


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a JSON config file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def override(cfg: ExperimentConfig, path: str, value: Any) -> ExperimentConfig:
    """Copy of ``cfg`` with a dotted field (``kf.q_minus``, ``seed``) replaced."""
    head, _, rest = path.partition(".")
    if not rest:
        if head not in {f.name for f in dataclasses.fields(ExperimentConfig)}:
            raise ConfigError(path, "unknown field")
        return dataclasses.replace(cfg, **{head: value})
    if head not in ("kf", "nn", "protocol"):
        raise ConfigError(path, "only kf.*, nn.* and protocol.* can be nested")
    section = getattr(cfg, head)
    if rest not in {f.name for f in dataclasses.fields(section)}:
        raise ConfigError(path, "unknown field")
    try:
        return dataclasses.replace(cfg, **{head: dataclasses.replace(section, **{rest: value})})
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


# ------------------------------------------------------------------ running


def simulate(cfg: ExperimentConfig) -> List[Measurement]:
    return run_schedule(cfg.schedule, cfg.k_all, cfg.seed, cfg.protocol, cfg.mode, cfg.freeze_on_busy)


def run_estimators(measurements: Sequence[Measurement], cfg: ExperimentConfig) -> List[TraceRecord]:
    """Feed one measurement stream to every enabled estimator."""
    if not measurements:
        raise ValueError("measurement stream is empty")
    params = cfg.protocol
    use_kf, use_nn, use_raw = cfg.enabled("kf"), cfg.enabled("nn"), cfg.enabled("raw")
    kf_state = kf_init(measurements[0].p_hat, cfg.kf, params) if use_kf else None
    nn_cfg = cfg.effective_nn()
    nn_state = nn_init(nn_cfg) if use_nn else None
    clock = time.perf_counter_ns
    trace = []
    for t, m in enumerate(measurements):
        rec = TraceRecord(t=t, n_true=m.n_true if m.n_true is not None else 0, p_hat=m.p_hat)
        if use_raw:
            rec.n_hat_raw = m.n_hat
        try:
            if use_kf:
                t0 = clock()
                kf_state = kf_step(kf_state, m.p_hat, cfg.kf, params)
                rec.kf_step_us = (clock() - t0) / 1e3
                rec.n_kf = kf_state.n_est
                rec.g_kf = kf_state.cusum.g
            if use_nn:
                t0 = clock()
                step = nn_step(nn_state, m.n_hat, nn_cfg)
                rec.nn_step_us = (clock() - t0) / 1e3
                rec.n_nn = step.estimate
                rec.g_nn = step.g
                rec.loss = step.loss
                rec.lr = step.lr
                rec.alpha = step.alpha
        except EstimatorError as exc:
            raise EstimatorError(str(exc), slot=t) from exc
        except Exception as exc:
            raise EstimatorError(f"{type(exc).__name__}: {exc}", slot=t) from exc
        trace.append(rec)
    return trace


def _first_sustained(ok: np.ndarray, hold: int) -> Optional[int]:
    run = 0
    for i, good in enumerate(ok):
        run = run + 1 if good else 0
        if run >= hold:
            return i - hold + 1
    return None


def compute_metrics(trace: Sequence[TraceRecord], cfg: ExperimentConfig) -> List[SegmentMetrics]:
    """Per-segment RMSE (tail half), convergence, detection and timing."""
    n_true = np.array([r.n_true for r in trace], dtype=float)
    columns = {}
    for name in ESTIMATORS:
        values = [getattr(r, _ESTIMATE_FIELD[name]) for r in trace]
        if values and all(v is not None for v in values):
            columns[name] = np.array(values, dtype=float)
    thresholds = {"kf": cfg.kf.cusum_e, "nn": cfg.nn.e_d}
    g_cols = {}
    for name, attr in (("kf", "g_kf"), ("nn", "g_nn")):
        values = [getattr(r, attr) for r in trace]
        if values and all(v is not None for v in values):
            g_cols[name] = np.array(values, dtype=float) > thresholds[name]
    timing = {}
    for name, attr in (("kf", "kf_step_us"), ("nn", "nn_step_us")):
        values = [getattr(r, attr) for r in trace]
        if values and all(v is not None for v in values):
            timing[name] = np.array(values, dtype=float)

    out = []
    starts = cfg.schedule.boundaries()
    for idx, ((n, length), start) in enumerate(zip(cfg.schedule.segments, starts)):
        stop = min(start + length, len(trace))
        if stop <= start:
            break
        seg = SegmentMetrics(index=idx, n_true=n, start=start, length=stop - start)
        half = start + (stop - start) // 2
        for name, est in columns.items():
            err = est[start:stop] - n_true[start:stop]
            tail = est[half:stop] - n_true[half:stop]
            seg.rmse[name] = float(np.sqrt(np.mean(tail * tail)))
            seg.convergence_slots[name] = _first_sustained(np.abs(err) <= cfg.convergence_band, cfg.convergence_hold)
        tail_start = max(start, stop - cfg.stable_tail)
        for name, trig in g_cols.items():
            hits = np.flatnonzero(trig[start:stop])
            seg.detection_delay[name] = int(hits[0]) if idx > 0 and hits.size else None
            seg.tail_triggers[name] = int(trig[tail_start:stop].sum())
        for name, values in timing.items():
            seg.mean_step_us[name] = float(values[start:stop].mean())
        out.append(seg)
    return out


def run_experiment(cfg: ExperimentConfig) -> Tuple[List[TraceRecord], List[SegmentMetrics]]:
    trace = run_estimators(simulate(cfg), cfg)
    return trace, compute_metrics(trace, cfg)


# ---------------------------------------------------------------------- CSV


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_csv(trace: Iterable[TraceRecord], path: Union[str, Path]) -> Path:
    """Write a trace; floats use ``repr`` so they read back bit-exactly."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for rec in trace:
                writer.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write trace CSV: {exc.strerror}", str(path)) from exc
    return path


def read_csv(path: Union[str, Path]) -> List[TraceRecord]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: header does not match {','.join(CSV_COLUMNS)}")
        records = []
        for row in reader:
            values: Dict[str, Any] = {}
            for name, cell in zip(CSV_COLUMNS, row):
                if name in ("t", "n_true"):
                    values[name] = int(cell)
                else:
                    values[name] = float(cell) if cell != "" else None
            records.append(TraceRecord(**values))
    return records


def estimate_columns(path: Union[str, Path]) -> List[List[str]]:
    """Raw text of the non-timing columns, for byte-level comparisons."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [rows[0].index(c) for c in ESTIMATE_COLUMNS]
    return [[row[i] for i in keep] for row in rows]


# ------------------------------------------------------------------- timing


@dataclass
class TimingReport:
    iters: int
    n: int
    kf_mean_us: float
    kf_median_us: float
    nn_mean_us: float
    nn_median_us: float
    observe_mean_us: float
    t_success: float
    t_collision: float
    t_idle: float

    @property
    def ratio(self) -> float:
        """Mean KF step time over mean NN step time."""
        return self.kf_mean_us / self.nn_mean_us

    @property
    def kf_slot_us(self) -> float:
        return self.observe_mean_us + self.kf_mean_us

    @property
    def nn_slot_us(self) -> float:
        return self.observe_mean_us + self.nn_mean_us

    def as_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d.update(ratio=self.ratio, kf_slot_us=self.kf_slot_us, nn_slot_us=self.nn_slot_us)
        return d


def observation_time_us(k_busy: int, k_coll: int, k_idle: int, params: ProtocolParams) -> float:
    """Channel time spent listening to one window of sub-frames."""
    return k_busy * params.t_success + k_coll * params.t_collision + k_idle * params.t_idle


def bench_timing(cfg: ExperimentConfig, iters: int, n: int = 25, warmup: int = 50) -> TimingReport:
    """Per-iteration wall time of both estimators on one stable stream.

    Each estimator consumes the same ``iters`` measurements, observed with
    ``n`` stations after a short warm-up so both operate in steady state.
    """
    if iters < 100:
        raise ConfigError("iters", "must be >= 100")
    stream = run_schedule(LoadSchedule([(n, iters + warmup)]), cfg.k_all, cfg.seed, cfg.protocol, cfg.mode, cfg.freeze_on_busy)
    params = cfg.protocol
    clock = time.perf_counter_ns

    kf_state = kf_init(stream[0].p_hat, cfg.kf, params)
    kf_times = []
    for i, m in enumerate(stream):
        t0 = clock()
        kf_state = kf_step(kf_state, m.p_hat, cfg.kf, params)
        dt = clock() - t0
        if i >= warmup:
            kf_times.append(dt / 1e3)

    nn_cfg = cfg.effective_nn()
    nn_state = nn_init(nn_cfg)
    nn_times = []
    for i, m in enumerate(stream):
        t0 = clock()
        nn_step(nn_state, m.n_hat, nn_cfg)
        dt = clock() - t0
        if i >= warmup:
            nn_times.append(dt / 1e3)

    observe = statistics.fmean(m.elapsed_us for m in stream[warmup:])
    return TimingReport(
        iters=iters,
        n=n,
        kf_mean_us=statistics.fmean(kf_times),
        kf_median_us=statistics.median(kf_times),
        nn_mean_us=statistics.fmean(nn_times),
        nn_median_us=statistics.median(nn_times),
        observe_mean_us=observe,
        t_success=params.t_success,
        t_collision=params.t_collision,
        t_idle=params.t_idle,
    )


# -------------------------------------------------------------------- sweeps


def summarize(metrics: Sequence[SegmentMetrics]) -> Dict[str, Any]:
    """Collapse per-segment metrics into one row per run."""
    row: Dict[str, Any] = {}
    names = sorted({k for seg in metrics for k in seg.rmse})
    for name in names:
        rmse = [seg.rmse[name] for seg in metrics]
        conv = [seg.convergence_slots.get(name) for seg in metrics]
        row[f"rmse_mean_{name}"] = float(np.mean(rmse))
        row[f"rmse_max_{name}"] = float(np.max(rmse))
        row[f"converged_{name}"] = sum(c is not None for c in conv)
        row[f"convergence_max_{name}"] = max((c for c in conv if c is not None), default=None)
    for name in sorted({k for seg in metrics for k in seg.tail_triggers}):
        delays = [seg.detection_delay.get(name) for seg in metrics[1:]]
        row[f"detected_{name}"] = sum(d is not None for d in delays)
        row[f"detection_max_{name}"] = max((d for d in delays if d is not None), default=None)
        row[f"tail_triggers_{name}"] = sum(seg.tail_triggers[name] for seg in metrics)
    return row


def _sweep_job(job: Tuple[int, Dict[str, Any], ExperimentConfig]) -> Tuple[int, Dict[str, Any]]:
    index, point, cfg = job
    _, metrics = run_experiment(cfg)
    row = {"job": index, **point, "seed": cfg.seed}
    row.update(summarize(metrics))
    return index, row


def sweep(
    cfg: ExperimentConfig,
    grid: Mapping[str, Sequence[Any]],
    seeds: Sequence[int],
    workers: Optional[int] = None,
) -> List[Dict[str, Any]]:
    """Run every grid point for every seed; one summary row per run.

    ``grid`` maps dotted config paths to candidate values.  Runs fan out over
    processes and come back in grid order, seeds innermost.
    """
    keys = list(grid)
    jobs = []
    for values in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, values))
        base = cfg
        for key, value in point.items():
            base = override(base, key, value)
        for seed in seeds:
            jobs.append((len(jobs), point, base.with_seed(seed)))
    if workers == 1 or len(jobs) == 1:
        results = [_sweep_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    return [row for _, row in sorted(results, key=lambda r: r[0])]


def write_rows(rows: Sequence[Mapping[str, Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    columns: List[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})
    return path
