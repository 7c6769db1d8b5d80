"""Monte Carlo experiments: empirical size, power, MDR and VR of the tests.

One experiment fixes the generator structure (MA coefficients, Case-B mask and
common mean mu0) from the structure stream and then runs ``replications``
independent data draws.  Replication ``r`` uses data streams keyed by
``(master_seed, DATA, r, group)``, so results do not depend on how replications
are scheduled across workers.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hdbf import __version__
from hdbf.baselines import compute_cq, compute_plugin
from hdbf.errors import (
    ConfigError,
    DegenerateCoordinateError,
    HDBFError,
    NonPositiveVarianceError,
    TooFewObservationsError,
)
from hdbf.fstest import TwoSample, decide, estimate_traces, fs_components, variance_hat
from hdbf.simgen import (
    DATA,
    MASK,
    MU0,
    RNG_ALGORITHM,
    STRUCTURE,
    CovSummary,
    MASpec,
    MeanSpec,
    draw_mask,
    exact_covariance,
    gen_sample,
    make_means,
    make_spec,
    stream,
)

log = logging.getLogger(__name__)

TESTS = ("fs", "cq", "plugin")
AXES = ("p", "lambda", "eta")
CSV_HEADER = ("axis_value", "test", "mdr", "vr", "rate", "n_valid", "n_flagged", "seed")

DEGENERATE = "degenerate"
NONPOSITIVE_VARIANCE = "nonpositive_variance"


@dataclass(frozen=True)
class ExperimentConfig:
    n1: int = 15
    n2: int = 15
    p: int = 100
    scenario: str = "I"
    lam: float = 10.0
    eta: float = 0.0
    case: str = "A"
    alpha: float = 0.05
    replications: int = 1000
    master_seed: int = 20140612
    tests: tuple[str, ...] = TESTS
    threads: int | None = 1  # None means one worker per CPU
    t_order: tuple[int, int] = (3, 4)

    def __post_init__(self):
        if self.n1 < 6 or self.n2 < 6:
            raise ConfigError(f"n1 and n2 must be >= 6, got {self.n1}, {self.n2}")
        if self.p < 1:
            raise ConfigError(f"p must be >= 1, got {self.p}")
        if self.scenario not in ("I", "II"):
            raise ConfigError(f"scenario must be I or II, got {self.scenario!r}")
        if self.case not in ("A", "B"):
            raise ConfigError(f"case must be A or B, got {self.case!r}")
        if self.lam < 0 or self.eta < 0:
            raise ConfigError("lambda and eta must be non-negative")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        tests = tuple(self.tests)
        if not tests or any(t not in TESTS for t in tests) or len(set(tests)) != len(tests):
            raise ConfigError(f"tests must be a non-empty subset of {TESTS}, got {tests}")
        object.__setattr__(self, "tests", tests)
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads must be >= 1 or auto, got {self.threads}")
        if len(self.t_order) != 2 or min(self.t_order) < 1:
            raise ConfigError(f"t_order must be two positive MA orders, got {self.t_order}")
        object.__setattr__(self, "t_order", tuple(int(t) for t in self.t_order))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_axis(self, axis: str, value) -> "ExperimentConfig":
        if axis == "p":
            return self.replace(p=int(value))
        if axis == "lambda":
            return self.replace(lam=float(value))
        if axis == "eta":
            return self.replace(eta=float(value))
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        d["tests"] = list(self.tests)
        d["t_order"] = list(self.t_order)
        return d


# Config-file keys and how to parse them.
def _parse_tests(v: str):
    return tuple(t.strip() for t in v.split(",") if t.strip())


def _parse_threads(v: str):
    return None if v.strip().lower() == "auto" else int(v)


_CONFIG_KEYS = {
    "n1": ("n1", int),
    "n2": ("n2", int),
    "p": ("p", int),
    "scenario": ("scenario", str),
    "lambda": ("lam", float),
    "eta": ("eta", float),
    "case": ("case", str),
    "alpha": ("alpha", float),
    "replications": ("replications", int),
    "reps": ("replications", int),
    "master_seed": ("master_seed", int),
    "seed": ("master_seed", int),
    "tests": ("tests", _parse_tests),
    "threads": ("threads", _parse_threads),
}


def parse_config(text: str) -> tuple[ExperimentConfig, str | None, list[float] | None]:
    """Parse a flat ``key = value`` document.

    Besides the experiment fields, ``t1``/``t2`` set the MA orders and
    ``axis``/``values`` describe an optional sweep.  ``#`` starts a comment.
    """
    fields: dict = {}
    t_order = list(ExperimentConfig.t_order)
    axis = values = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        try:
            if key in _CONFIG_KEYS:
                name, conv = _CONFIG_KEYS[key]
                fields[name] = conv(value)
            elif key in ("t1", "t2"):
                t_order[int(key[1]) - 1] = int(value)
            elif key == "axis":
                axis = value
            elif key == "values":
                values = parse_values(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    if axis is not None and axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")
    return ExperimentConfig(**fields, t_order=tuple(t_order)), axis, values


def parse_values(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"values must be comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise ConfigError("values must be non-empty")
    return vals


def load_config(path) -> tuple[ExperimentConfig, str | None, list[float] | None]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, eq=False)
class Structures:
    spec: MASpec
    cov1: CovSummary
    cov2: CovSummary
    mask: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray

    @property
    def mu0(self) -> np.ndarray:
        return self.mu2


def draw_structures(cfg: ExperimentConfig) -> Structures:
    """Quantities held fixed over all replications of one experiment."""
    spec = make_spec(cfg.p, cfg.scenario, cfg.master_seed, cfg.t_order)
    cov1, cov2 = exact_covariance(spec, 1), exact_covariance(spec, 2)
    mask = draw_mask(cfg.p, cfg.case, stream(cfg.master_seed, STRUCTURE, MASK))
    mean_spec = MeanSpec(lam=cfg.lam, case=cfg.case, eta=cfg.eta, mask=mask)
    mu1, mu2 = make_means(cfg.p, mean_spec, cov1, cov2, stream(cfg.master_seed, STRUCTURE, MU0))
    return Structures(spec=spec, cov1=cov1, cov2=cov2, mask=mask, mu1=mu1, mu2=mu2)


@dataclass(frozen=True)
class Outcome:
    statistic: float = math.nan
    variance_hat: float = math.nan
    z: float = math.nan
    reject: bool = False
    flag: str | None = None

    @property
    def valid(self) -> bool:
        return self.flag is None


@dataclass(frozen=True)
class ReplicationRecord:
    rep_index: int
    outcomes: dict


def _decide(stat, var_hat, alpha) -> Outcome:
    try:
        res = decide(stat, var_hat, alpha)
    except NonPositiveVarianceError:
        return Outcome(statistic=stat, variance_hat=var_hat, flag=NONPOSITIVE_VARIANCE)
    return Outcome(statistic=res.statistic, variance_hat=res.variance_hat, z=res.z, reject=res.reject)


_DATA_ERRORS = (DegenerateCoordinateError, TooFewObservationsError)


def evaluate_tests(ts: TwoSample, tests: Sequence[str], alpha: float) -> dict:
    """Run each requested test on one data set; failures become flags."""
    n1, n2 = ts.sample1.n, ts.sample2.n
    out = {}
    studentized = None  # traces shared by fs and plugin

    if "fs" in tests:
        try:
            tn, studentized = fs_components(ts)
        except _DATA_ERRORS:
            out["fs"] = Outcome(flag=DEGENERATE)
        else:
            out["fs"] = _decide(tn, variance_hat(studentized, n1, n2), alpha)

    if "plugin" in tests:
        try:
            stat = compute_plugin(ts)
            if studentized is None:
                studentized = estimate_traces(ts, "studentized")
        except _DATA_ERRORS:
            out["plugin"] = Outcome(flag=DEGENERATE)
        else:
            out["plugin"] = _decide(stat, variance_hat(studentized, n1, n2), alpha)

    if "cq" in tests:
        stat = compute_cq(ts)
        traces = estimate_traces(ts, "identity")
        out["cq"] = _decide(stat, variance_hat(traces, n1, n2), alpha)

    return {t: out[t] for t in tests}


def replication_data(cfg: ExperimentConfig, structures: Structures, rep: int) -> TwoSample:
    s1 = gen_sample(structures.spec, 1, structures.mu1, cfg.n1, stream(cfg.master_seed, DATA, rep, 1))
    s2 = gen_sample(structures.spec, 2, structures.mu2, cfg.n2, stream(cfg.master_seed, DATA, rep, 2))
    return TwoSample(s1, s2)


def run_replication(cfg: ExperimentConfig, structures: Structures, rep: int) -> ReplicationRecord:
    ts = replication_data(cfg, structures, rep)
    return ReplicationRecord(rep_index=rep, outcomes=evaluate_tests(ts, cfg.tests, cfg.alpha))


def _run_chunk(args) -> list[ReplicationRecord]:
    cfg, structures, start, stop = args
    return [run_replication(cfg, structures, r) for r in range(start, stop)]


def _workers(threads: int | None) -> int:
    return threads if threads is not None else (os.cpu_count() or 1)


def run_replications(cfg: ExperimentConfig, structures: Structures | None = None) -> list[ReplicationRecord]:
    if structures is None:
        structures = draw_structures(cfg)
    reps = cfg.replications
    workers = min(_workers(cfg.threads), reps)
    if workers <= 1:
        return [run_replication(cfg, structures, r) for r in range(reps)]

    records: list = [None] * reps
    # Several chunks per worker keeps the pool busy when chunks run unevenly.
    n_chunks = min(reps, workers * 4)
    bounds = np.linspace(0, reps, n_chunks + 1).astype(int)
    jobs = [(cfg, structures, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for chunk in pool.map(_run_chunk, jobs):
            for rec in chunk:
                records[rec.rep_index] = rec
    return records


@dataclass(frozen=True)
class TestMetrics:
    mdr: float | None
    vr: float | None
    rate: float | None
    n_valid: int
    n_flagged: int

    __test__ = False


@dataclass(frozen=True)
class MetricsRecord:
    config: ExperimentConfig
    per_test: dict = field(default_factory=dict)

    def __getitem__(self, test: str) -> TestMetrics:
        return self.per_test[test]


class AllFlaggedError(HDBFError):
    pass


def summarize(records: Iterable[ReplicationRecord], tests: Sequence[str]) -> dict:
    records = list(records)
    out = {}
    for test in tests:
        valid = [r.outcomes[test] for r in records if r.outcomes[test].valid]
        n_valid = len(valid)
        n_flagged = len(records) - n_valid
        mdr = vr = rate = None
        if n_valid >= 1:
            rate = sum(o.reject for o in valid) / n_valid
        if n_valid >= 2:
            stats = np.array([o.statistic for o in valid])
            var_t = float(np.var(stats, ddof=1))
            if var_t > 0:
                mdr = float(np.mean(stats)) / math.sqrt(var_t)
                vr = float(np.mean([o.variance_hat for o in valid])) / var_t
        out[test] = TestMetrics(mdr=mdr, vr=vr, rate=rate, n_valid=n_valid, n_flagged=n_flagged)
    return out


def run_experiment(cfg: ExperimentConfig, structures: Structures | None = None) -> MetricsRecord:
    records = run_replications(cfg, structures)
    per_test = summarize(records, cfg.tests)
    if all(m.n_valid == 0 for m in per_test.values()):
        raise AllFlaggedError(f"all {cfg.replications} replications were flagged for every test")
    return MetricsRecord(config=cfg, per_test=per_test)


@dataclass(frozen=True)
class SweepRow:
    axis_value: float | int | None
    test: str
    mdr: float | None
    vr: float | None
    rate: float | None
    n_valid: int
    n_flagged: int
    seed: int


def _axis_value(axis, value):
    if axis is None:
        return None
    return int(value) if axis == "p" else float(value)


def run_sweep(base: ExperimentConfig, axis: str | None, values: Sequence[float] | None) -> list[SweepRow]:
    """One row per (sweep value, test).  ``axis=None`` runs the base config once."""
    if axis is None:
        points = [(None, base)]
    else:
        if not values:
            raise ConfigError("a sweep needs at least one value")
        points = [(_axis_value(axis, v), base.with_axis(axis, v)) for v in values]
    rows = []
    for value, cfg in points:
        log.info("running %s=%s with %d replications", axis, value, cfg.replications)
        per_test = summarize(run_replications(cfg), cfg.tests)
        for test in cfg.tests:
            m = per_test[test]
            rows.append(SweepRow(value, test, m.mdr, m.vr, m.rate, m.n_valid, m.n_flagged, cfg.master_seed))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        raise TypeError("booleans are not valid CSV cells here")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse_number(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        return float(s)


def format_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([_fmt(r.axis_value), r.test, _fmt(r.mdr), _fmt(r.vr), _fmt(r.rate),
                         _fmt(r.n_valid), _fmt(r.n_flagged), _fmt(r.seed)])
    return buf.getvalue()


def parse_csv(text: str) -> list[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    rows = []
    for rec in reader:
        av, test, mdr, vr, rate, n_valid, n_flagged, seed = rec
        rows.append(SweepRow(_parse_number(av), test, _parse_number(mdr), _parse_number(vr),
                             _parse_number(rate), int(n_valid), int(n_flagged), int(seed)))
    return rows


def emit_outputs(rows: Sequence[SweepRow], out_dir, plot: bool = False, *, axis: str | None = None,
                 config: ExperimentConfig | None = None, stem: str = "results") -> list[Path]:
    """Write ``<stem>.csv`` (+ ``<stem>.meta.json``) and, with ``plot``, one SVG per metric."""
    if not rows:
        raise ValueError("refusing to write an empty results table")
    out_dir = Path(out_dir)
    paths = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{stem}.csv"
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(format_csv(rows))
        paths.append(csv_path)
        meta = {
            "rng": RNG_ALGORITHM,
            "axis": axis,
            "config": config.to_dict() if config is not None else None,
            "hdbf_version": __version__,
            "labels": {"plugin": "PA-surrogate"},
        }
        meta_path = out_dir / f"{stem}.meta.json"
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths.append(meta_path)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write outputs to {out_dir}: {exc.strerror}", str(out_dir)) from exc
    if plot:
        from hdbf.plotting import plot_sweep

        paths.extend(plot_sweep(rows, out_dir, axis=axis))
    return paths
