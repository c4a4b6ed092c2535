"""Sequential sampling runs, multi-seed ensembles and (t, alpha) sweeps.

One run: an LHS initial design through the input quantile transform, then
``n_seq`` rounds of (maybe) refitting the kernel, estimating the surrogate
response density on the fixed Monte-Carlo set, scoring the candidate pool,
evaluating the true system at the best candidate and folding the new
sample into both cached prediction sets.
"""
import csv
import dataclasses
import json
import logging
import time
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .acquisition import (AcquisitionParams, glw_scores, integral_lw_scores, lw_scores,
                          shifted_pdfs)
from .density import DEFAULT_FLOOR, ERROR_GRID, log_pdf_error
from .errors import (ConfigError, DivergenceError, DuplicatePointError, FitError,
                     NumericalDegradationError, PoolExhaustedError, SingularCovarianceError)
from .gp import (DUPLICATE_FLOOR, FAMILIES, Dataset, KernelConfig, build_posterior,
                 fit_hyperparameters, init_pool_cache, predict_batch, recursive_append)
from .mcdo import build_pool, latin_hypercube, select_next
from .systems import get_system, ground_truth_pdf

logger = logging.getLogger(__name__)

MODES = ("LW", "GLW", "LW-integral")


# -- configuration ---------------------------------------------------------------

@dataclass
class SystemSpec:
    name: str = "oscillator"
    params: dict = field(default_factory=dict)


@dataclass
class SurrogateSpec:
    family: str = "RBF"
    nu: float = 1.5
    restarts: int = 5
    # refit before every sample while n < refit_dense_until, then every refit_period samples
    refit_dense_until: int = 50
    refit_period: int = 5
    fixed_amplitude: typing.Optional[float] = None
    fixed_lengthscales: typing.Optional[list] = None


@dataclass
class AcquisitionSpec:
    mode: str = "GLW"
    t: float = 1.0
    alpha: float = 0.0
    integral_candidates: int = 500


@dataclass
class SeedSpec:
    function: int = 0
    init: int = 0
    pool: int = 0
    mc: int = 0


@dataclass
class ExperimentConfig:
    system: SystemSpec = field(default_factory=SystemSpec)
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)
    acquisition: AcquisitionSpec = field(default_factory=AcquisitionSpec)
    seeds: SeedSpec = field(default_factory=SeedSpec)
    n_init: int = 4
    n_seq: int = 96
    n_mc: int = 100_000
    m: int = 100_000
    floor: float = DEFAULT_FLOOR
    # candidates with variance below duplicate_floor * tau^2 are never selected
    duplicate_floor: float = DUPLICATE_FLOOR
    error_grid: int = ERROR_GRID
    divergence_cap: typing.Optional[float] = None
    record_wall_time: bool = False
    cache_dir: typing.Optional[str] = None
    output: typing.Optional[str] = None

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self, dim=None):
        a, s = self.acquisition, self.surrogate
        if a.mode not in MODES:
            raise ConfigError(f"acquisition.mode must be one of {MODES}, got {a.mode!r}")
        try:
            AcquisitionParams(a.t, a.alpha)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if a.mode == "LW" and (a.t != 1.0 or a.alpha != 0.0):
            raise ConfigError("mode LW implies t=1 and alpha=0; use GLW for other values")
        if s.family not in FAMILIES:
            raise ConfigError(f"surrogate.family must be one of {FAMILIES}")
        if s.family == "Matern" and s.nu not in (0.5, 1.5, 2.5):
            raise ConfigError("surrogate.nu must be 0.5, 1.5 or 2.5")
        if (s.fixed_amplitude is None) != (s.fixed_lengthscales is None):
            raise ConfigError("fixed_amplitude and fixed_lengthscales must be given together")
        if s.restarts < 1 or s.refit_period < 1:
            raise ConfigError("surrogate.restarts and refit_period must be >= 1")
        if self.n_seq < 1:
            raise ConfigError("n_seq must be >= 1")
        if self.n_mc < 100:
            raise ConfigError("n_mc must be >= 100")
        if self.m < 10_000:
            raise ConfigError("m must be >= 10000")
        if not self.floor > 0:
            raise ConfigError("floor must be positive")
        if not 0 < self.duplicate_floor < 1:
            raise ConfigError("duplicate_floor must lie in (0, 1)")
        if a.integral_candidates < 1:
            raise ConfigError("acquisition.integral_candidates must be >= 1")
        if dim is not None:
            if self.n_init < dim + 1:
                raise ConfigError(f"n_init must be >= d+1 = {dim + 1}")
            if s.fixed_lengthscales is not None and len(s.fixed_lengthscales) != dim:
                raise ConfigError(f"fixed_lengthscales needs {dim} entries")
        return self


_SECTIONS = {"system": SystemSpec, "surrogate": SurrogateSpec,
             "acquisition": AcquisitionSpec, "seeds": SeedSpec}


def _coerce(value, tp, where):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected an object, got {value!r}")
        return dict(value)
    if tp is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, float, where) for v in value]
    raise ConfigError(f"{where}: unsupported type")


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        key = f"{where}.{name}" if where else name
        sub = _SECTIONS.get(name) if cls is ExperimentConfig else None
        kwargs[name] = _build(sub, value, key) if sub else _coerce(value, hints[name], key)
    return cls(**kwargs)


def config_from_dict(data):
    return _build(ExperimentConfig, data, "").validate()


def load_config(path, overrides=()):
    """Read a JSON config and apply ``key.sub=value`` overrides (values parsed as JSON)."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(apply_overrides(data, overrides))


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data, overrides):
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = _parse_value(text)
    return data


# -- traces ------------------------------------------------------------------------

@dataclass
class TraceRecord:
    iteration: int
    epsilon: float
    x: np.ndarray
    y: float
    acq_value: float
    wall_s: float


@dataclass
class ErrorTrace:
    records: list
    dim: int
    config: dict
    summary: dict = field(default_factory=dict)
    error: typing.Optional[str] = None
    evaluations: int = 0

    @property
    def epsilons(self):
        return np.array([r.epsilon for r in self.records])

    @property
    def terminal_epsilon(self):
        return float(self.records[-1].epsilon)

    @property
    def complete(self):
        return self.error is None

    @property
    def selected(self):
        return np.array([r.x for r in self.records[1:]])

    def header(self):
        return ["iter", "epsilon"] + [f"x{k}" for k in range(self.dim)] + ["y", "acq_value", "wall_s"]

    def rows(self, wall_time=None):
        wall_time = self.config.get("record_wall_time", False) if wall_time is None else wall_time
        for r in self.records:
            yield ([r.iteration, repr(float(r.epsilon))] + [repr(float(v)) for v in r.x]
                   + [repr(float(r.y)), repr(float(r.acq_value)),
                      repr(float(r.wall_s)) if wall_time else "nan"])

    def to_csv(self, path, wall_time=None):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            writer.writerows(self.rows(wall_time))

    def to_json(self, path=None):
        wall = self.config.get("record_wall_time", False)
        doc = {"config": self.config, "summary": self.summary, "error": self.error,
               "evaluations": self.evaluations,
               "records": [{"iter": r.iteration, "epsilon": float(r.epsilon),
                            "x": [float(v) for v in r.x], "y": float(r.y),
                            "acq_value": float(r.acq_value),
                            "wall_s": float(r.wall_s) if wall else None}
                           for r in self.records]}
        text = json.dumps(doc, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


# -- run -----------------------------------------------------------------------------

class CountingFunction:
    """Wraps a system and counts true-function evaluations."""

    def __init__(self, system, cap=None):
        self.system = system
        self.cap = cap
        self.count = 0

    def __call__(self, X):
        X = np.atleast_2d(X)
        self.count += X.shape[0]
        return np.asarray(self.system(X, self.cap), dtype=float)


_truth_memo = {}


def _ground_truth(system, config):
    key = (system.fingerprint(), config.seeds.mc, config.m, config.floor, config.divergence_cap)
    if key not in _truth_memo:
        _truth_memo.clear()
        _truth_memo[key] = ground_truth_pdf(system, system.distribution, config.m, config.seeds.mc,
                                            floor=config.floor, cache_dir=config.cache_dir,
                                            cache_key=f"{system.name}-{system.fingerprint()}",
                                            cap=config.divergence_cap)
    return _truth_memo[key]


def _refit_due(n, spec, first):
    if first:
        return True
    if n < spec.refit_dense_until:
        return True
    return (n - spec.refit_dense_until) % spec.refit_period == 0


def _fit(dataset, spec, domain_scale, seed, previous):
    if spec.fixed_amplitude is not None:
        return KernelConfig(spec.family, spec.fixed_amplitude, tuple(spec.fixed_lengthscales),
                            spec.nu)
    try:
        return fit_hyperparameters(dataset, spec.family, spec.restarts, seed, domain_scale, spec.nu,
                                   initial=previous)
    except FitError:
        if previous is None:
            raise
        logger.warning("hyperparameter refit failed at n=%d; keeping previous kernel", dataset.n)
        return previous


def run_experiment(config, system=None):
    """Run the sequential sampling loop; always returns a trace (``error`` set on failure)."""
    system = system or get_system(config.system.name, config.system.params, config.seeds.function)
    config.validate(system.dim)
    d = system.dim
    dist = system.distribution
    acq = config.acquisition
    params = AcquisitionParams(acq.t, acq.alpha)
    f = CountingFunction(system, config.divergence_cap)

    pool = build_pool(dist, config.n_mc, config.seeds.pool)
    p_x_log = dist.logpdf(pool.X)
    domain_scale = np.ptp(pool.X, axis=0)
    n_max = config.n_init + config.n_seq + 1
    sel_rng = np.random.default_rng([config.seeds.pool, config.seeds.init, 1])

    trace = ErrorTrace([], d, config.to_dict())
    t_last = time.perf_counter()
    pending = (np.full(d, np.nan), np.nan, np.nan)
    kernel = state = None
    try:
        truth = _ground_truth(system, config)
        mc_points = np.ascontiguousarray(truth.X)
        X0 = dist.ppf(latin_hypercube(d, config.n_init, config.seeds.init))
        dataset = Dataset(X0, f(X0))
        caches = None
        for i in range(config.n_seq + 1):
            n = dataset.n
            if _refit_due(n, config.surrogate, kernel is None) or state is None:
                kernel = _fit(dataset, config.surrogate, domain_scale,
                              config.seeds.init * 100003 + n, kernel)
                state = build_posterior(dataset, kernel)
                caches = [init_pool_cache(state, pool, n_max, memory_budget=None),
                          init_pool_cache(state, mc_points, n_max, memory_budget=None)]
            pool_cache, mc_cache = caches
            assert pool_cache.n == state.n == mc_cache.n

            alpha = params.alpha if acq.mode == "GLW" else 0.0
            centre, plus, minus = shifted_pdfs(mc_cache.means, mc_cache.std, alpha,
                                               floor=config.floor, source_version=state.version)
            eps = log_pdf_error(centre, truth.pdf, config.error_grid)
            now = time.perf_counter()
            trace.records.append(TraceRecord(i, eps, pending[0], pending[1], pending[2], now - t_last))
            t_last = now
            if i == config.n_seq:
                break

            idx, x_star, value = _select(acq, params, pool, pool_cache, state, p_x_log,
                                         centre, plus, minus, sel_rng, config.duplicate_floor)
            y_star = float(f(x_star)[0])
            try:
                _, state = recursive_append(caches, state, x_star, y_star,
                                            config.duplicate_floor)
            except NumericalDegradationError:
                logger.info("variance degradation at n=%d; rebuilding posterior", n + 1)
                state = None
            dataset = dataset.append(x_star, y_star)
            if state is None:
                state = build_posterior(dataset, kernel)
                caches = [init_pool_cache(state, pool, n_max, memory_budget=None),
                          init_pool_cache(state, mc_points, n_max, memory_budget=None)]
            pending = (x_star, y_star, value)
    except (PoolExhaustedError, DivergenceError, NumericalDegradationError,
            SingularCovarianceError, FitError, DuplicatePointError) as exc:
        trace.error = f"{type(exc).__name__}: {exc}"
        logger.warning("run stopped after %d records: %s", len(trace.records), trace.error)
    trace.evaluations = f.count
    if trace.complete:
        assert f.count == config.n_init + config.n_seq
    if kernel is not None:
        trace.summary = {"n": state.n if state is not None else None, "amplitude": float(kernel.amplitude),
                         "lengthscales": [float(v) for v in kernel.lengthscales],
                         "jitter": float(state.jitter) if state is not None else None,
                         "backend": _backend.current(), "threads": _backend.get_num_threads()}
    if config.output:
        write_trace(trace, config.output)
    return trace


def _select(acq, params, pool, cache, state, p_x_log, centre, plus, minus, rng,
            dup_floor=DUPLICATE_FLOOR):
    """Pick the next candidate; returns ``(index, x, acquisition value)``.

    The winner's variance is recomputed from the factorization before the
    true function is called; if recursion drift hid a duplicate, that pool
    point is masked and the selection repeated.
    """
    floor = dup_floor * state.kernel.variance
    while True:
        if acq.mode == "LW":
            scores = lw_scores(cache, p_x_log, centre)
        elif acq.mode == "GLW":
            scores = glw_scores(cache, p_x_log, centre, plus, minus, params)
        else:
            scores = _integral_scores(acq, pool, cache, state, centre, rng, dup_floor)
        idx, x = select_next(pool, cache, scores, dup_floor)
        if predict_batch(state, x[None, :])[1][0] > floor:
            value = scores[idx] if acq.mode != "LW-integral" else -scores[idx]
            return idx, x, float(value)
        cache.variances[idx] = 0.0


def _integral_scores(acq, pool, cache, state, centre, rng, dup_floor=DUPLICATE_FLOOR):
    """Negated integral criterion on a random candidate subset; ``-inf`` elsewhere."""
    eligible = np.nonzero(cache.variances >= dup_floor * cache.prior_variance)[0]
    if eligible.size == 0:
        raise PoolExhaustedError("every candidate is within the duplicate floor of the data")
    k = min(acq.integral_candidates, eligible.size)
    subset = np.sort(rng.choice(eligible, size=k, replace=False))
    scores = np.full(cache.n_points, -np.inf)
    scores[subset] = -integral_lw_scores(pool.X[subset], cache, state, centre, floor=dup_floor)
    return scores


def write_trace(trace, path):
    """CSV for ``.csv`` paths (or no suffix), JSON for ``.json``."""
    if str(path).endswith(".json"):
        trace.to_json(path)
    else:
        trace.to_csv(path)


# -- ensembles and sweeps ----------------------------------------------------------------

@dataclass
class EnsembleResult:
    traces: dict
    failures: dict
    mean: np.ndarray
    median: np.ndarray
    mean_log10: np.ndarray
    median_log10: np.ndarray

    @property
    def n_runs(self):
        return len(self.traces)

    def terminal(self, which="mean_log10"):
        return float(getattr(self, which)[-1])

    def terminal_epsilons(self):
        return np.array([t.terminal_epsilon for _, t in sorted(self.traces.items())])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "mean", "median", "mean_log10", "median_log10", "n_runs"])
            for i in range(self.mean.size):
                w.writerow([i, repr(float(self.mean[i])), repr(float(self.median[i])),
                            repr(float(self.mean_log10[i])), repr(float(self.median_log10[i])),
                            self.n_runs])


def aggregate(traces):
    keys = sorted(traces)
    if not keys:
        nan = np.array([np.nan])
        return nan, nan, nan, nan
    E = np.vstack([traces[k].epsilons for k in keys])
    L = np.log10(np.maximum(E, np.finfo(float).tiny))
    return E.mean(axis=0), np.median(E, axis=0), L.mean(axis=0), np.median(L, axis=0)


def _config_for(template, fseed, iseed):
    cfg = _build(ExperimentConfig, template.to_dict(), "")
    cfg.seeds.function = int(fseed)
    cfg.seeds.init = int(iseed)
    cfg.output = None
    return cfg


def _run_cell(args):
    template_dict, fseed, iseed = args
    cfg = _config_for(config_from_dict(template_dict), fseed, iseed)
    return (fseed, iseed), run_experiment(cfg)


def run_ensemble(template, init_seeds, function_seeds=None, n_jobs=1):
    """Run every (function seed, init seed) pair and aggregate epsilon per iteration.

    Failed or truncated runs are kept in ``failures`` and left out of the
    aggregates.
    """
    init_seeds = list(init_seeds)
    function_seeds = [template.seeds.function] if function_seeds is None else list(function_seeds)
    if not init_seeds or not function_seeds:
        raise ConfigError("seed lists must be non-empty")
    jobs = [(template.to_dict(), fs, s) for fs in function_seeds for s in init_seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    traces, failures = {}, {}
    for key, trace in results:
        if trace.complete:
            traces[key] = trace
        else:
            failures[key] = trace
    return EnsembleResult(traces, failures, *aggregate(traces))


@dataclass
class SweepResult:
    t_values: list
    alpha_values: list
    cells: dict

    def matrix(self, which="mean_log10"):
        M = np.empty((len(self.t_values), len(self.alpha_values)))
        for i, t in enumerate(self.t_values):
            for j, a in enumerate(self.alpha_values):
                M[i, j] = self.cells[(t, a)].terminal(which)
        return M

    def to_csv(self, path, which="mean_log10"):
        M = self.matrix(which)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"alpha={a!r}" for a in self.alpha_values])
            for t, row in zip(self.t_values, M):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def sweep(template, t_values, alpha_values, init_seeds, function_seeds=None, n_jobs=1):
    """Terminal-error ensemble for every ``(t, alpha)``; all cells share seeds and pools."""
    t_values, alpha_values = [float(t) for t in t_values], [float(a) for a in alpha_values]
    if not t_values or not alpha_values:
        raise ConfigError("t and alpha grids must be non-empty")
    cells = {}
    for t in t_values:
        for a in alpha_values:
            cfg = _build(ExperimentConfig, template.to_dict(), "")
            cfg.acquisition.mode = "GLW"
            cfg.acquisition.t, cfg.acquisition.alpha = t, a
            cfg.validate()
            cells[(t, a)] = run_ensemble(cfg, init_seeds, function_seeds, n_jobs)
    return SweepResult(t_values, alpha_values, cells)
