"""Command-line harness: config parsing, run orchestration and CSV output.

Usage::

    invert --config run.yaml [--verify] [--out trace.csv]
    invert compare a.csv b.csv [--tol 1e-8]

The config is a flat YAML (or JSON) mapping. Exit status is 0 on success,
1 when ``compare`` finds a delta above ``--tol`` or the engine fails, and 2 on
configuration or file-format errors.
"""
import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import ensemble as ens_mod
from .base import RunRecord
from .errors import ConfigError, FormatError, InversionError
from .forward import EvaluationPolicy
from .problems import bernoulli_problem, elliptic_problem, subspace_distance_mc, twofid_diffusion_problem
from .tuki import tuki_hyper, tuki_run
from .uki import default_hyper, psd_check, reparam_wrap, uki_run

METHODS = ("uki", "uki-reparam", "tuki", "eki", "eaki", "etki", "etki-unbiased")
ENSEMBLE_METHODS = ("eki", "eaki", "etki", "etki-unbiased")
PROBLEMS = ("elliptic", "bernoulli", "twofid", "subspace-mc")
POLICIES = {"all-high": EvaluationPolicy.ALL_HIGH,
            "mean-high-others-reduced": EvaluationPolicy.MEAN_HIGH_OTHERS_REDUCED}

# problem parameter -> problems accepting it
PROBLEM_PARAMS = {
    "n": ("elliptic", "bernoulli", "subspace-mc"),
    "trials": ("subspace-mc",),
    "n_fine": ("twofid",),
    "n_coarse": ("twofid",),
    "n_params": ("twofid",),
    "noise_level": ("twofid",),
}
STOCHASTIC_PROBLEMS = ("bernoulli", "twofid", "subspace-mc")
TRACE_HEADER = RunRecord.FIELDS
MC_HEADER = ("n_theta", "J", "trials", "estimate", "stderr", "expected")


@dataclass
class RunConfig:
    problem: str
    method: Optional[str] = None
    alpha: float = 1.0
    n_iter: Optional[int] = None
    n_rank: int = 5
    ensemble_size: Optional[int] = None
    policy: EvaluationPolicy = EvaluationPolicy.ALL_HIGH
    seed: Optional[int] = None
    output_path: Optional[str] = None
    state_path: Optional[str] = None
    verify: bool = False
    record_timing: bool = True
    max_workers: Optional[int] = None
    # problem parameters; None means the builder default
    n: Optional[int] = None
    trials: Optional[int] = None
    n_fine: Optional[int] = None
    n_coarse: Optional[int] = None
    n_params: Optional[int] = None
    noise_level: Optional[float] = None


_INT = ("n_iter", "n_rank", "ensemble_size", "seed", "max_workers", "n", "trials", "n_fine", "n_coarse", "n_params")
_FLOAT = ("alpha", "noise_level")
_BOOL = ("verify", "record_timing")
_KNOWN = {f.name for f in fields(RunConfig)}


def _typed(key, value):
    if value is None:
        return None
    if key in _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", field=key)
        return value
    if key in _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", field=key)
        if not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {value!r}", field=key)
        return float(value)
    if key in _BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", field=key)
        return value
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", field=key)
    return value


def _flatten(doc):
    flat = dict(doc)
    prob = flat.get("problem")
    # ``problem: {name: twofid, n_fine: 64}`` is accepted as shorthand
    if isinstance(prob, dict):
        inner = dict(prob)
        if "name" not in inner:
            raise ConfigError("problem mapping needs a 'name'", field="problem.name")
        flat["problem"] = inner.pop("name")
        for k, v in inner.items():
            if k in flat:
                raise ConfigError("given both inside 'problem' and at top level", field=f"problem.{k}")
            if k not in PROBLEM_PARAMS:
                raise ConfigError("unknown problem parameter", field=f"problem.{k}")
            flat[k] = v
    return flat


def parse_config(text):
    """Parse and validate a config document (YAML or JSON text, or a mapping)."""
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed document: {exc}", field="<root>") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a key-value mapping", field="<root>")
    doc = _flatten(doc)
    for key in doc:
        if key not in _KNOWN:
            raise ConfigError("unknown key", field=str(key))
    values = {k: _typed(k, v) for k, v in doc.items()}

    if values.get("problem") is None:
        raise ConfigError("problem is required", field="problem")
    problem = values["problem"]
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}; expected one of {', '.join(PROBLEMS)}", field="problem")
    method = values.get("method")
    if problem != "subspace-mc":
        if method is None:
            raise ConfigError("method is required", field="method")
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}", field="method")
    elif method is not None:
        raise ConfigError("subspace-mc takes no method", field="method")

    policy = values.pop("policy", None)
    if policy is not None:
        if policy not in POLICIES:
            raise ConfigError(f"unknown policy {policy!r}; expected one of {', '.join(POLICIES)}", field="policy")
        values["policy"] = POLICIES[policy]
    cfg = RunConfig(**{k: v for k, v in values.items() if v is not None})
    _validate(cfg, set(values) - {k for k, v in values.items() if v is None})
    return cfg


def _validate(cfg, given):
    if not 0.0 < cfg.alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {cfg.alpha}", field="alpha")
    for key in ("n_iter", "n_rank", "n", "trials", "n_fine", "n_coarse", "n_params", "max_workers"):
        v = getattr(cfg, key)
        if v is not None and v < 1:
            raise ConfigError("must be >= 1", field=key)
    if cfg.noise_level is not None and cfg.noise_level < 0:
        raise ConfigError("must be >= 0", field="noise_level")
    for key, allowed in PROBLEM_PARAMS.items():
        if key in given and cfg.problem not in allowed:
            raise ConfigError(f"not a parameter of problem {cfg.problem!r}", field=key)

    stochastic = cfg.method in ENSEMBLE_METHODS or cfg.problem in STOCHASTIC_PROBLEMS
    if stochastic and cfg.seed is None:
        what = f"method {cfg.method!r}" if cfg.method in ENSEMBLE_METHODS else f"problem {cfg.problem!r}"
        raise ConfigError(f"{what} is stochastic and requires a seed", field="seed")

    if cfg.problem == "subspace-mc":
        n = cfg.n or 1000
        J = cfg.ensemble_size if cfg.ensemble_size is not None else 5
        if not 1 <= J <= n:
            raise ConfigError(f"subspace dimension must lie in [1, {n}]", field="ensemble_size")
        return
    if cfg.n_iter is None:
        raise ConfigError("n_iter is required", field="n_iter")
    if "ensemble_size" in given and cfg.method not in ENSEMBLE_METHODS:
        raise ConfigError(f"ensemble_size applies only to ensemble methods, not {cfg.method!r}",
                          field="ensemble_size")
    if cfg.ensemble_size is not None and cfg.ensemble_size < 2:
        raise ConfigError("ensemble needs at least 2 particles", field="ensemble_size")
    if cfg.policy is EvaluationPolicy.MEAN_HIGH_OTHERS_REDUCED and cfg.method in ENSEMBLE_METHODS:
        raise ConfigError("ensemble methods have no mean point; use all-high", field="policy")
    if cfg.method == "uki-reparam" and cfg.problem != "elliptic":
        raise ConfigError("uki-reparam needs the sine-basis reparameterization of the elliptic problem",
                          field="method")
    n_theta = _parameter_dim(cfg)
    if cfg.method in ("uki-reparam", "tuki") and cfg.n_rank > n_theta:
        raise ConfigError(f"n_rank exceeds the parameter dimension {n_theta}", field="n_rank")


def _parameter_dim(cfg):
    if cfg.problem == "twofid":
        return cfg.n_params or 8
    return cfg.n or 1000


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", field="<file>") from exc
    return parse_config(text)


def build_problem(cfg):
    if cfg.problem == "elliptic":
        return elliptic_problem(n=cfg.n or 1000, n_rank=cfg.n_rank)
    if cfg.problem == "bernoulli":
        return bernoulli_problem(n=cfg.n or 1000, seed=cfg.seed, n_rank=cfg.n_rank), None
    if cfg.problem == "twofid":
        kw = {k: getattr(cfg, k) for k in ("n_fine", "n_coarse", "n_params", "noise_level")
              if getattr(cfg, k) is not None}
        return twofid_diffusion_problem(seed=cfg.seed, **kw), None
    raise ConfigError(f"problem {cfg.problem!r} has no inverse problem", field="problem")


@dataclass
class RunResult:
    """Iteration records plus the final mean and per-coordinate std (physical space)."""

    records: list
    mean: np.ndarray
    std: np.ndarray


def execute(cfg):
    """Run the engine selected by ``cfg``; returns a :class:`RunResult`."""
    problem, rp = build_problem(cfg)
    kw = dict(max_workers=cfg.max_workers, record_timing=cfg.record_timing)
    if cfg.method == "uki-reparam":
        reduced = reparam_wrap(problem, rp, problem.extras["tau_prior_cov"])
        hyper = default_hyper(reduced.prior_mean, reduced.covariance, reduced.sigma_eta, cfg.alpha)
        out = uki_run(reduced, hyper, cfg.n_iter, cfg.policy, verify=psd_check if cfg.verify else None, **kw)
        state = out[-1][0]
        U = rp.basis
        mean, var = rp.theta(state.mean), np.einsum("ij,jk,ik->i", U, state.cov, U)
    elif cfg.method == "uki":
        hyper = default_hyper(problem.prior_mean, problem.covariance, problem.sigma_eta, cfg.alpha)
        out = uki_run(problem, hyper, cfg.n_iter, cfg.policy, verify=psd_check if cfg.verify else None, **kw)
        state = out[-1][0]
        mean, var = state.mean, np.diag(state.cov)
    elif cfg.method == "tuki":
        Z0 = problem.prior_factor if problem.prior_factor is not None else np.linalg.cholesky(problem.covariance)
        hyper = tuki_hyper(problem.prior_mean, Z0, problem.sigma_eta, cfg.alpha)
        out = tuki_run(problem, hyper, cfg.n_iter, cfg.policy, verify=cfg.verify, **kw)
        state = out[-1][0]
        mean, var = state.mean, state.std() ** 2
    else:
        factor = problem.prior_factor
        Lambda = problem.covariance if factor is None else factor @ factor.T
        hyper = default_hyper(problem.prior_mean, Lambda, problem.sigma_eta, cfg.alpha, Lambda_factor=factor)
        J = cfg.ensemble_size if cfg.ensemble_size is not None else 2 * cfg.n_rank + 1
        verify = (lambda first, ens: ens_mod.span_check(first, ens, hyper)) if cfg.verify else None
        out = ens_mod.ensemble_run(problem, hyper, cfg.n_iter, cfg.method, J, cfg.seed, verify=verify, **kw)
        ens = out[-1][0]
        mean = ens.center()
        var = np.sum(ens_mod.deviations(ens.particles) ** 2, axis=1)
    return RunResult([rec for _, rec in out], mean, np.sqrt(np.maximum(var, 0.0)))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path_or_stream, header, rows):
    """Write rows with 17 significant digits, UTF-8, LF line endings."""
    def emit(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])

    if hasattr(path_or_stream, "write"):
        emit(path_or_stream)
    else:
        with open(path_or_stream, "w", encoding="utf-8", newline="") as f:
            emit(f)


def run(cfg, out=None):
    """Execute ``cfg`` and write the trace (and optional state dump).

    ``out`` overrides ``cfg.output_path``; with neither, the CSV goes to stdout.
    Returns the process exit status.
    """
    target = out or cfg.output_path or sys.stdout
    if cfg.problem == "subspace-mc":
        n = cfg.n or 1000
        J = cfg.ensemble_size if cfg.ensemble_size is not None else 5
        trials = cfg.trials or 200
        est, se = subspace_distance_mc(n, J, np.ones(n) / math.sqrt(n), trials, cfg.seed)
        write_csv(target, MC_HEADER, [(n, J, trials, est, se, 1.0 - J / n)])
        return 0
    result = execute(cfg)
    write_csv(target, TRACE_HEADER, [[getattr(r, k) for k in TRACE_HEADER] for r in result.records])
    if cfg.state_path:
        write_csv(cfg.state_path, ("index", "mean", "std"),
                  [(i, m, s) for i, (m, s) in enumerate(zip(result.mean, result.std))])
    return 0


# columns that are bookkeeping rather than results; excluded from tolerance checks
_UNCHECKED = ("iter", "wall_ms", "evals_high", "evals_reduced")


@dataclass
class CompareReport:
    header: tuple
    deltas: list  # one dict per common row: column -> b - a
    final_a: dict
    final_b: dict
    rows_a: int
    rows_b: int
    max_abs_delta: dict

    def breaches(self, tol):
        if tol is None:
            return []
        bad = [c for c, d in self.max_abs_delta.items() if c not in _UNCHECKED and not d <= tol]
        if self.rows_a != self.rows_b:
            bad.append("<row count>")
        return bad

    def render(self, tol=None):
        buf = io.StringIO()
        buf.write(f"rows: {self.rows_a} vs {self.rows_b}\n")
        for c in self.header:
            a, b = self.final_a.get(c), self.final_b.get(c)
            buf.write(f"{c}: final {_fmt(a)} vs {_fmt(b)}, max |delta| {_fmt(self.max_abs_delta[c])}\n")
        if tol is not None:
            bad = self.breaches(tol)
            buf.write(f"tolerance {_fmt(tol)}: {'BREACH ' + ', '.join(bad) if bad else 'ok'}\n")
        return buf.getvalue()


def _read_csv(path):
    try:
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path} is empty; a header row is required")
    header, body = tuple(rows[0]), rows[1:]
    try:
        data = [[float(x) for x in r] for r in body]
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value ({exc})") from exc
    if any(len(r) != len(header) for r in data):
        raise FormatError(f"{path}: row width differs from header")
    return header, data


def compare_runs(csv_a, csv_b):
    """Per-row deltas (b - a) and final values of two CSVs with the same header."""
    ha, da = _read_csv(csv_a)
    hb, db = _read_csv(csv_b)
    if ha != hb:
        raise FormatError(f"headers differ: {','.join(ha)} vs {','.join(hb)}")
    deltas = [{c: y - x for c, x, y in zip(ha, ra, rb)} for ra, rb in zip(da, db)]
    max_abs = {}
    for c in ha:
        vals = [abs(d[c]) for d in deltas]
        # nan deltas (e.g. nan in one file only) count as infinite
        max_abs[c] = max((v if not math.isnan(v) else math.inf for v in vals), default=0.0)
        both_nan = [math.isnan(ra[ha.index(c)]) and math.isnan(rb[ha.index(c)]) for ra, rb in zip(da, db)]
        if vals and all(both_nan):
            max_abs[c] = 0.0
    final = lambda d: dict(zip(ha, d[-1])) if d else {}
    return CompareReport(ha, deltas, final(da), final(db), len(da), len(db), max_abs)


def _run_main(argv):
    p = argparse.ArgumentParser(prog="invert", description="Run a Kalman inversion and write a CSV trace.")
    p.add_argument("--config", required=True, help="YAML or JSON run configuration")
    p.add_argument("--verify", action="store_true", help="assert invariant-subspace checks each iteration")
    p.add_argument("--out", help="CSV output path (overrides output_path)")
    args = p.parse_args(argv)
    cfg = load_config(args.config)
    if args.verify:
        cfg.verify = True
    return run(cfg, out=args.out)


def _compare_main(argv):
    p = argparse.ArgumentParser(prog="invert compare", description="Compare two CSV traces.")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tol", type=float, default=None, help="max allowed |delta| on result columns")
    args = p.parse_args(argv)
    report = compare_runs(args.a, args.b)
    sys.stdout.write(report.render(args.tol))
    return 1 if report.breaches(args.tol) else 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if argv and argv[0] == "compare":
            return _compare_main(argv[1:])
        return _run_main(argv)
    except (ConfigError, FormatError) as exc:
        print(f"invert: {exc}", file=sys.stderr)
        return 2
    except InversionError as exc:
        print(f"invert: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
