"""Replicated simulation sweeps: excess risk against sparsity level and sample
size, and excess risk against the signal gap of the population model.

Every (grid point, replicate) task derives its randomness from
``make_rng(seed, ...)`` keys that do not depend on execution order, so
results are identical for any thread count. Rows are sorted by
(parameter, n, replicate) before they are returned.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats
from threadpoolctl import threadpool_limits

from .linalg import support_of
from .losses import LossModel
from .risk import DEFAULT_N_MC, excess_risk
from .solver import IhtConfig, iht_run
from .stability import iht_stability_trace, linear_population_gradient, support_overlap
from .synth import GenerativeSpec, ModelKind, generate, make_rng

__all__ = [
    "Protocol",
    "ExperimentConfig",
    "ResultRow",
    "ExperimentResult",
    "CSV_COLUMNS",
    "PRESETS",
    "ConfigError",
    "preset",
    "load_config",
    "run",
    "run_sparsity_scaling",
    "run_stability_sweep",
    "emit_csv",
    "read_csv",
    "emit_plot",
    "rank_correlation",
]


class ConfigError(ValueError):
    pass


class Protocol(enum.Enum):
    SPARSITY_SCALING = "scaling"
    STABILITY_SWEEP = "stability"


@dataclass
class ExperimentConfig:
    """Sweep definition.

    ``grid`` holds k/k_bar multipliers for the scaling protocol and signal
    gaps for the stability protocol; ``n_ratios`` holds n/p values.
    """

    protocol: Protocol = Protocol.SPARSITY_SCALING
    p: int = 200
    k_bar: int = 10
    grid: tuple = (1.0, 2.0, 3.0, 4.0)
    n_ratios: tuple = (2.0, 5.0, 10.0)
    replicates: int = 10
    eta: float | str = "auto"
    n_mc: int = DEFAULT_N_MC
    T: int = 500
    obj_tol: float = 1e-10
    refit: bool = True
    loss: str = "logistic"
    sigma: float = 1.0
    magnitude: float = 0.5
    w_scale: float = 1.0
    seed: int = 0
    threads: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        self.protocol = Protocol(self.protocol)
        self.grid = tuple(float(g) for g in self.grid)
        self.n_ratios = tuple(float(r) for r in self.n_ratios)
        if not self.grid or not self.n_ratios:
            raise ConfigError("grids must be nonempty")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.p < 2 or not 1 <= self.k_bar < self.p:
            raise ConfigError("need p >= 2 and 1 <= k_bar < p")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.eta != "auto":
            try:
                self.eta = float(self.eta)
            except ValueError:
                raise ConfigError(f"eta must be a number or 'auto', got {self.eta!r}") from None
            if not self.eta > 0:
                raise ConfigError("eta must be positive")
        try:
            LossModel.parse(self.loss)
        except ValueError:
            raise ConfigError(f"unknown loss {self.loss!r}") from None
        if self.protocol is Protocol.SPARSITY_SCALING and min(self.grid) < 1:
            raise ConfigError("k/k_bar multipliers must be >= 1")
        if self.protocol is Protocol.STABILITY_SWEEP and min(self.grid) < 0:
            raise ConfigError("signal gaps must be >= 0")

    def sample_sizes(self):
        return [max(1, int(round(r * self.p))) for r in self.n_ratios]


PRESETS = {
    ("scaling", "desk"): dict(p=200, k_bar=10, grid=(1, 2, 3, 4), n_ratios=(2, 5, 10)),
    ("scaling", "paper-6.1"): dict(p=1000, k_bar=50, grid=(1, 1.5, 2, 2.5, 3, 3.5, 4),
                                   n_ratios=(2, 5, 10)),
    ("stability", "desk"): dict(p=200, k_bar=20, eta=0.5, loss="squared", sigma=1.0, w_scale=0.1,
                                grid=tuple(round(0.1 * i, 1) for i in range(1, 10)),
                                n_ratios=(1, 5, 10)),
    ("stability", "paper-6.2"): dict(p=1000, k_bar=100, eta=0.5, loss="squared", sigma=1.0,
                                     w_scale=0.1,
                                     grid=tuple(round(0.1 * i, 1) for i in range(1, 10)),
                                     n_ratios=(1, 5, 10)),
}


def preset(protocol, name="desk", **overrides) -> ExperimentConfig:
    protocol = Protocol(protocol)
    try:
        values = dict(PRESETS[(protocol.value, name)])
    except KeyError:
        raise ConfigError(f"no preset {name!r} for protocol {protocol.value!r}") from None
    values.update(overrides)
    return ExperimentConfig(protocol=protocol, **values)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name, value):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    if not isinstance(value, str):
        return value
    value = value.strip()
    if name in ("grid", "n_ratios"):
        return tuple(float(v) for v in value.strip("[]()").split(",") if v.strip())
    if name == "refit":
        return value.lower() in ("1", "true", "yes", "on")
    if name in ("protocol", "loss", "output_dir", "eta"):
        return value
    caster = float if name in ("n_mc", "sigma", "magnitude", "w_scale", "obj_tol") else int
    try:
        v = caster(value)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return int(v) if name == "n_mc" else v


def parse_config_text(text) -> dict:
    """Parse a JSON object or ``key = value`` lines (``#`` comments allowed)."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            raw[key.strip()] = value.strip().strip('"')
    return {k: _coerce(k, v) for k, v in raw.items()}


def load_config(protocol, preset_name="desk", path=None, env=None, **overrides) -> ExperimentConfig:
    """Preset, then config file, then ``IHTLAB_*`` env vars, then overrides."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    env = os.environ if env is None else env
    for key, value in env.items():
        if key.startswith("IHTLAB_"):
            values[key[len("IHTLAB_"):].lower()] = _coerce(key[len("IHTLAB_"):].lower(), value)
    values.update({k: v for k, v in overrides.items() if v is not None})
    values.pop("protocol", None)
    try:
        return preset(protocol, preset_name, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class ResultRow:
    protocol: str
    param: float
    n: int
    replicate: int
    excess_risk: float
    stderr: float
    min_margin: float
    support_jaccard: float
    iterations_used: int
    wall_time: float = 0.0
    status: str = "ok"

    @property
    def failed(self) -> bool:
        return self.status != "ok"


CSV_COLUMNS = [f.name for f in dataclasses.fields(ResultRow)]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)

    @property
    def failures(self) -> int:
        return sum(r.failed for r in self.rows)

    def mean_excess(self):
        """{(param, n): (mean, stderr over replicates)} over successful rows."""
        groups = {}
        for r in self.rows:
            if not r.failed:
                groups.setdefault((r.param, r.n), []).append(r.excess_risk)
        out = {}
        for key, vals in groups.items():
            v = np.array(vals)
            se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
            out[key] = (float(v.mean()), se)
        return out

    def mean_log_excess(self):
        groups = {}
        for r in self.rows:
            if not r.failed:
                groups.setdefault((r.param, r.n), []).append(math.log(max(r.excess_risk, 1e-300)))
        return {key: float(np.mean(v)) for key, v in groups.items()}

    def trend(self, log=None):
        """{n: Spearman correlation of the grid parameter against the
        replicate mean}; log-excess by default for the stability protocol."""
        if log is None:
            log = self.config.protocol is Protocol.STABILITY_SWEEP
        means = self.mean_log_excess() if log else {
            key: v[0] for key, v in self.mean_excess().items()}
        out = {}
        for n in sorted({n for _, n in means}):
            params = sorted(q for q, n2 in means if n2 == n)
            out[n] = rank_correlation(params, [means[(q, n)] for q in params])
        return out


def _snap_ties(values, rtol):
    # values closer than rtol (relative to the largest magnitude) share a rank
    v = np.asarray(values, dtype=np.float64)
    tol = rtol * max(1.0, float(np.max(np.abs(v)))) if v.size else 0.0
    order = np.argsort(v, kind="stable")
    out = v.copy()
    anchor = v[order[0]] if v.size else 0.0
    for i in order:
        if v[i] - anchor > tol:
            anchor = v[i]
        out[i] = anchor
    return out


def rank_correlation(x, y, rtol=1e-9) -> float:
    """Spearman correlation with average ranks for ties.

    Values within ``rtol`` of each other (relative to the largest
    magnitude, floored at 1) count as tied, so quantities that agree up to
    round-off do not get an arbitrary order. NaN if either side is constant.
    """
    x, y = _snap_ties(x, rtol), _snap_ties(y, rtol)
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return math.nan
    return float(scipy.stats.spearmanr(x, y)[0])


def _scaling_task(cfg, spec, ki, k, ni, n, rep):
    model = LossModel.parse(cfg.loss)
    data = generate(spec, n, make_rng(cfg.seed, "scaling-data", ni, rep))
    trace = iht_run(data, model, IhtConfig(k=k, eta=cfg.eta, max_iters=cfg.T, obj_tol=cfg.obj_tol,
                                           refit=cfg.refit, seed=cfg.seed))
    er = excess_risk(trace.final, spec, cfg.k_bar, n_mc=cfg.n_mc, seed=cfg.seed)
    _, jac = support_overlap(support_of(trace.final), support_of(spec.w_bar))
    return er.value, er.stderr, trace.min_margin, jac, trace.iterations


def _stability_task(cfg, spec, ni, n, rep):
    data = generate(spec, n, make_rng(cfg.seed, "stability-data", ni, rep))
    eta = cfg.eta
    trace = iht_run(data, LossModel.SQUARED, IhtConfig(k=cfg.k_bar, eta=eta, max_iters=cfg.T,
                                                       obj_tol=cfg.obj_tol, refit=cfg.refit,
                                                       seed=cfg.seed))
    pop = iht_stability_trace(linear_population_gradient(spec.w_bar), cfg.k_bar, trace.eta,
                              max(1, trace.iterations), np.zeros(cfg.p))
    er = excess_risk(trace.final, spec, cfg.k_bar)
    _, jac = support_overlap(support_of(trace.final), pop.supports[-1])
    return er.value, er.stderr, pop.min_margin, jac, trace.iterations


def _execute(cfg, tasks):
    """Run ``(key, fn)`` tasks; failures become marked rows, not exceptions."""

    def one(task):
        key, fn = task
        t0 = time.perf_counter()
        try:
            er, se, margin, jac, iters = fn()
            status = "ok"
        except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            er = se = margin = jac = math.nan
            iters = 0
            status = f"failed: {type(exc).__name__}: {exc}"
        return ResultRow(cfg.protocol.value, key[0], key[1], key[2], er, se, margin, jac,
                         iters, time.perf_counter() - t0, status)

    # single-threaded BLAS keeps floating-point reductions identical across runs
    with threadpool_limits(limits=1):
        if cfg.threads == 1:
            rows = [one(t) for t in tasks]
        else:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                rows = list(pool.map(one, tasks))
    rows.sort(key=lambda r: (r.param, r.n, r.replicate))
    return rows


def run_sparsity_scaling(cfg: ExperimentConfig) -> ExperimentResult:
    """Excess risk of IHT (+refit) against k for several sample sizes on a
    well-specified sparse model."""
    if cfg.protocol is not Protocol.SPARSITY_SCALING:
        raise ConfigError("run_sparsity_scaling needs protocol 'scaling'")
    kind = ModelKind.LOGISTIC_GAUSSIAN if LossModel.parse(cfg.loss) is LossModel.LOGISTIC \
        else ModelKind.LINEAR_GAUSSIAN
    spec = GenerativeSpec.sparse(kind, cfg.p, cfg.k_bar, sigma=cfg.sigma,
                                 magnitude=cfg.magnitude, seed=cfg.seed)
    tasks = []
    for ki, mult in enumerate(cfg.grid):
        k = min(cfg.p, max(1, int(round(mult * cfg.k_bar))))
        for ni, n in enumerate(cfg.sample_sizes()):
            for rep in range(cfg.replicates):
                fn = (lambda ki=ki, k=k, ni=ni, n=n, rep=rep:
                      _scaling_task(cfg, spec, ki, k, ni, n, rep))
                tasks.append(((float(k), n, rep), fn))
    return ExperimentResult(cfg, _execute(cfg, tasks))


def run_stability_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Excess risk of IHT with k = k_bar on linear data generated from the
    gap-separated model, for each gap and sample size."""
    if cfg.protocol is not Protocol.STABILITY_SWEEP:
        raise ConfigError("run_stability_sweep needs protocol 'stability'")
    tasks = []
    for gap in cfg.grid:
        spec = GenerativeSpec.gap_model(cfg.p, cfg.k_bar, gap, sigma=cfg.sigma,
                                       scale=cfg.w_scale, seed=cfg.seed)
        for ni, n in enumerate(cfg.sample_sizes()):
            for rep in range(cfg.replicates):
                fn = lambda spec=spec, ni=ni, n=n, rep=rep: _stability_task(cfg, spec, ni, n, rep)
                tasks.append(((gap, n, rep), fn))
    return ExperimentResult(cfg, _execute(cfg, tasks))


def run(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.protocol is Protocol.SPARSITY_SCALING:
        return run_sparsity_scaling(cfg)
    return run_stability_sweep(cfg)


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_csv(result: ExperimentResult, path, timings=False) -> None:
    """Write rows as RFC-4180 CSV with 17-significant-digit floats.

    ``wall_time`` is blank unless ``timings`` is set, which keeps the file
    byte-identical across reruns of the same config.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    for row in result.rows:
        values = dataclasses.asdict(row)
        if not timings:
            values["wall_time"] = ""
        writer.writerow([_fmt(values[c]) for c in CSV_COLUMNS])
    try:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> list:
    """Parse a file written by :func:`emit_csv` back into rows."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            rows.append(ResultRow(
                protocol=rec["protocol"], param=float(rec["param"]), n=int(rec["n"]),
                replicate=int(rec["replicate"]), excess_risk=float(rec["excess_risk"]),
                stderr=float(rec["stderr"]), min_margin=float(rec["min_margin"]),
                support_jaccard=float(rec["support_jaccard"]),
                iterations_used=int(rec["iterations_used"]),
                wall_time=float(rec["wall_time"]) if rec["wall_time"] else 0.0,
                status=rec["status"]))
    return rows


def emit_plot(result: ExperimentResult, path) -> None:
    """SVG chart of replicate-mean excess risk, one line per n/p value.

    The stability sweep uses a log y-axis.
    """
    if not result.rows:
        raise ValueError("nothing to plot: result has no rows")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    stab = result.config.protocol is Protocol.STABILITY_SWEEP
    means = result.mean_excess()
    p = result.config.p
    ns = sorted({n for _, n in means}) or sorted({r.n for r in result.rows})
    with matplotlib.rc_context({"svg.hashsalt": "ihtlab", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for n in ns:
            xs = sorted(param for param, nn in means if nn == n)
            ys = [means[(x, n)][0] for x in xs]
            if stab:
                ys = [max(y, 1e-300) for y in ys]
            ax.plot(xs, ys, marker="o", label=f"n/p = {n / p:g}")
        ax.set_xlabel("signal gap" if stab else "sparsity level k")
        ax.set_ylabel("excess risk")
        if stab:
            ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
