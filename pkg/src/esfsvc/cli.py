"""Command-line front end: CSV ingestion, fitting, synthetic benchmarks,
and model persistence.

Outputs are written under --out: coefficients.csv (per-site fused
surfaces), model.archive (versioned JSON with a payload checksum),
summary.txt (constant-coefficient table, likelihood, BIC), timings.csv
(stage wall clock). Every output except timings.csv is byte-deterministic
for a fixed seed, at any worker count.

Exit codes: 0 success, 1 input errors, 2 numerical errors, 3
configuration errors.
"""

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .aggregate import (
    AggregateConfig,
    WeightScheme,
    fit_aggregated,
    variant_scheme,
)
from .errors import ArchiveError, ConfigError, EsfError, InputError
from .estimator import fit_esf
from .geometry import Dataset
from .simulate import SimConfig, generate_scenario, score

ARCHIVE_VERSION = 1


# ---------------------------------------------------------------------------
# dataset ingestion
# ---------------------------------------------------------------------------

def load_dataset(path, coords=("x", "y"), response="y", covariates=()):
    """Read a headered numeric CSV into a Dataset (intercept prepended)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise InputError(f"{path}: empty file")
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc

    wanted = list(coords) + [response] + list(covariates)
    index = {}
    for name in wanted:
        if name not in header:
            raise InputError(f"{path}: missing column {name!r}")
        index[name] = header.index(name)

    def cell(row, i, name, col):
        try:
            return float(row[col])
        except (ValueError, IndexError):
            bad = row[col] if col < len(row) else "<missing>"
            raise InputError(
                f"{path}: non-numeric value {bad!r} at row {i + 2}, "
                f"column {name!r}") from None

    n = len(rows)
    sites = np.empty((n, 2))
    y = np.empty(n)
    X = np.ones((n, 1 + len(covariates)))
    for i, row in enumerate(rows):
        sites[i, 0] = cell(row, i, coords[0], index[coords[0]])
        sites[i, 1] = cell(row, i, coords[1], index[coords[1]])
        y[i] = cell(row, i, response, index[response])
        for j, name in enumerate(covariates):
            X[i, 1 + j] = cell(row, i, name, index[name])
    return Dataset(sites=sites, y=y, X=X,
                   names=("const",) + tuple(covariates))


# ---------------------------------------------------------------------------
# model persistence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelArchive:
    """Versioned, checksummed serialization of an aggregated fit."""

    format_version: int
    payload: dict

    @property
    def beta_star(self):
        return np.asarray(self.payload["beta_star"], dtype=float)

    @property
    def sigma2_star(self):
        return np.asarray(self.payload["sigma2_star"], dtype=float)

    @property
    def loglik(self):
        return self.payload["loglik"]

    @property
    def bic(self):
        return self.payload["bic"]

    @property
    def sub_models(self):
        return self.payload["sub_models"]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


def _canonical(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def _archive_payload(fit, names, config):
    scheme = config.scheme
    cfg = {
        "scheme": {
            "variant": scheme.variant,
            "threshold_factor": scheme.threshold_factor,
            "include_global": scheme.include_global,
        },
        "target_cluster_size": config.target_cluster_size,
        "n_clusters": config.n_clusters,
        "global_l": config.global_l,
        "svc": None if config.svc is None else [bool(v) for v in config.svc],
        "seed": config.seed,
        "version": __version__,
    }
    cfg["config_hash"] = hashlib.sha256(
        _canonical(cfg).encode()).hexdigest()[:16]
    subs = []
    labels = [f"cluster {c}" for c in range(fit.partition.n_clusters)]
    if fit.weights.include_global:
        labels.append("global")
    for label, sub, support, r in zip(labels, fit.sub_fits,
                                      fit.weights.supports, fit.ranges):
        subs.append({
            "label": label,
            "members": _jsonable(support),
            "kernel_range": float(r),
            "l_c": int(sub.L_c),
            "lambdas": _jsonable(sub.lambdas),
            "b": _jsonable(sub.b),
            "u": _jsonable(sub.u),
            "alpha": _jsonable(sub.params.alpha),
            "tau2": _jsonable(sub.params.tau2),
            "svc": _jsonable(sub.params.svc_enabled),
            "sigma2": float(sub.sigma2),
            "loglik": float(sub.loglik),
            "b_se": _jsonable(sub.b_se),
            "w_c": float(sub.W_c),
            "n_c": int(sub.N_c),
        })
    return {
        "config": cfg,
        "names": list(names),
        "n_sites": int(fit.beta_star.shape[0]),
        "sub_models": subs,
        "beta_star": _jsonable(fit.beta_star),
        "sigma2_star": _jsonable(fit.sigma2_star),
        "loglik": float(fit.loglik),
        "bic": float(fit.bic),
        "n_params": int(fit.n_params),
    }


def save_model(fit, path, names=(), config=None):
    """Write an AggregatedFit as a checksummed JSON archive."""
    config = config or AggregateConfig()
    payload = _archive_payload(fit, names, config)
    body = _canonical(payload)
    doc = {
        "format_version": ARCHIVE_VERSION,
        "checksum": hashlib.sha256(body.encode()).hexdigest(),
        "payload": payload,
    }
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":"),
                   allow_nan=False), encoding="utf-8")
    return ModelArchive(format_version=ARCHIVE_VERSION, payload=payload)


def load_model(path):
    """Read and verify a model archive."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: unreadable archive ({exc})") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ArchiveError(f"{path}: not a model archive")
    if doc["format_version"] != ARCHIVE_VERSION:
        raise ArchiveError(
            f"{path}: unsupported archive version {doc['format_version']} "
            f"(this build reads version {ARCHIVE_VERSION})")
    payload = doc.get("payload")
    checksum = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    if checksum != doc.get("checksum"):
        raise ArchiveError(f"{path}: checksum mismatch; archive is corrupt")
    return ModelArchive(format_version=ARCHIVE_VERSION, payload=payload)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Parsed command-line parameters (one instance per invocation)."""

    command: str = "fit"
    input: str = None
    coords: tuple = ("x", "y")
    response: str = "y"
    covariates: tuple = ()
    svc: tuple = ()
    scheme: str = "overlap"
    include_global: bool = True
    clusters: int = None
    target_size: int = 600
    global_l: int = 200
    threshold: float = 2.2
    seed: int = 0
    workers: int = 1
    ridge: bool = False
    out: str = "esfsvc_out"
    grid_side: int = 30
    r: tuple = (1.0,)
    b: tuple = None
    tau2: tuple = None
    constant_covariates: bool = True
    trials: int = 1
    estimators: tuple = ("esf", "l0", "gl0", "l", "gl")
    esf_l: int = 200
    l_sweep: tuple = ()
    nc_sweep: tuple = ()


def _g17(v):
    return format(float(v), ".17g")


def _aggregate_config(cfg, svc_flags):
    scheme = WeightScheme(variant=cfg.scheme,
                          threshold_factor=cfg.threshold,
                          include_global=cfg.include_global)
    return AggregateConfig(
        scheme=scheme,
        target_cluster_size=cfg.target_size,
        n_clusters=cfg.clusters,
        global_l=cfg.global_l,
        svc=svc_flags,
        seed=cfg.seed,
        workers=cfg.workers,
        ridge=cfg.ridge,
    )


def cmd_fit(cfg):
    """Fit the aggregated model and write all outputs."""
    if cfg.input is None:
        raise ConfigError("fit needs --input")
    unknown = set(cfg.svc) - set(cfg.covariates)
    if unknown:
        raise ConfigError(f"--svc names not in --covariates: {sorted(unknown)}")
    dataset = load_dataset(cfg.input, cfg.coords, cfg.response, cfg.covariates)
    svc_flags = (True,) + tuple(name in set(cfg.svc) for name in cfg.covariates)
    config = _aggregate_config(cfg, svc_flags)

    t0 = time.perf_counter()
    fit = fit_aggregated(dataset, config)
    wall = time.perf_counter() - t0

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "coefficients.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y"]
                        + [f"beta_{name}" for name in dataset.names]
                        + ["sigma2"])
        for i in range(dataset.n):
            writer.writerow(
                [i, _g17(dataset.sites[i, 0]), _g17(dataset.sites[i, 1])]
                + [_g17(v) for v in fit.beta_star[i]]
                + [_g17(fit.sigma2_star[i])])

    save_model(fit, out / "model.archive", names=dataset.names, config=config)
    (out / "summary.txt").write_text(
        _summary_text(fit, dataset, cfg), encoding="utf-8")

    with open(out / "timings.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "seconds"])
        for stage in ("partition", "eigen", "fits", "fusion", "total"):
            writer.writerow([stage, format(fit.timings[stage], ".6f")])

    for stage in ("partition", "eigen", "fits", "fusion"):
        print(f"{stage:>10}: {fit.timings[stage]:8.3f} s")
    print(f"{'total':>10}: {wall:8.3f} s")
    print(f"wrote {out / 'coefficients.csv'}, model.archive, summary.txt, "
          "timings.csv")
    return fit


def _summary_text(fit, dataset, cfg):
    mass = fit.weights.W / np.array([f.sigma2 for f in fit.sub_fits])
    mass = mass / mass.sum()
    b_bar = sum(m * f.b for m, f in zip(mass, fit.sub_fits))
    se_bar = sum(m * f.b_se for m, f in zip(mass, fit.sub_fits))
    svc_flags = fit.sub_fits[0].params.svc_enabled

    lines = []
    lines.append("aggregated SVC fit")
    lines.append("==================")
    lines.append("")
    lines.append(f"input:        {cfg.input}")
    lines.append(f"sites:        {dataset.n}")
    lines.append(f"covariates:   {', '.join(dataset.names)}")
    lines.append(f"scheme:       {cfg.scheme}"
                 f"{' + global sub-model' if cfg.include_global else ''}")
    lines.append(f"clusters:     {fit.partition.n_clusters}"
                 f" (target size {cfg.target_size})")
    lines.append(f"threshold:    {cfg.threshold} x r_c")
    lines.append(f"global L:     {cfg.global_l}")
    lines.append(f"seed:         {cfg.seed}")
    lines.append(f"sub-models:   {len(fit.sub_fits)}"
                 f" (L_c = {', '.join(str(f.L_c) for f in fit.sub_fits)})")
    lines.append("")
    lines.append("constant parts of the coefficients")
    lines.append("(t-values are approximate: the aggregated standard error is")
    lines.append(" the posterior-mass-weighted average of sub-model errors)")
    lines.append("")
    lines.append(f"{'covariate':<16}{'estimate':>14}{'std.err':>12}"
                 f"{'t':>10}  svc")
    for k, name in enumerate(dataset.names):
        t = b_bar[k] / se_bar[k] if se_bar[k] > 0 else float("nan")
        lines.append(f"{name:<16}{b_bar[k]:>14.6g}{se_bar[k]:>12.6g}"
                     f"{t:>10.3f}  {'yes' if svc_flags[k] else 'no'}")
    lines.append("")
    lines.append(f"restricted log-likelihood: {fit.loglik:.6f}")
    lines.append(f"BIC:                       {fit.bic:.6f}"
                 f"  ({fit.n_params} parameters)")
    lines.append("")
    return "\n".join(lines)


def cmd_simulate(cfg):
    """Generate a synthetic scenario and write scenario + truth CSVs."""
    extra = {}
    if cfg.b is not None:
        extra["b"] = cfg.b
    if cfg.tau2 is not None:
        extra["tau2"] = cfg.tau2
    sim = SimConfig(
        grid_side=cfg.grid_side,
        r=cfg.r if len(cfg.r) > 1 else cfg.r[0],
        seed=cfg.seed,
        include_constant_covariates=cfg.constant_covariates,
        **extra,
    )
    truth = generate_scenario(sim)
    dataset = truth.dataset
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    covs = dataset.names[1:]
    with open(out / "scenario.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "response"] + list(covs))
        for i in range(dataset.n):
            writer.writerow(
                [i, _g17(dataset.sites[i, 0]), _g17(dataset.sites[i, 1]),
                 _g17(dataset.y[i])]
                + [_g17(v) for v in dataset.X[i, 1:]])
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"beta_{name}" for name in dataset.names])
        for i in range(dataset.n):
            writer.writerow([i] + [_g17(v) for v in truth.beta_true[i]])
    print(f"wrote {out / 'scenario.csv'} and truth.csv "
          f"({dataset.n} sites, K = {dataset.k})")
    return truth


def _bench_one(name, cfg, truth):
    """Fit one estimator on one scenario; returns (beta_hat, seconds)."""
    dataset = truth.dataset
    t0 = time.perf_counter()
    if name == "esf":
        _, beta = fit_esf(dataset, max_l=cfg.esf_l)
    else:
        scheme = variant_scheme(name, threshold_factor=cfg.threshold)
        config = AggregateConfig(
            scheme=scheme, target_cluster_size=cfg.target_size,
            global_l=cfg.global_l, seed=cfg.seed, workers=cfg.workers,
            ridge=cfg.ridge)
        beta = fit_aggregated(dataset, config).beta_star
    return beta, time.perf_counter() - t0


def cmd_bench(cfg):
    """Estimator comparison over seeded trials; writes bench.csv.

    Three modes: the default runs every --estimators entry per trial; an
    --l-sweep runs the plain single model at each basis size; an
    --nc-sweep runs the aggregated variants at each target cluster size.
    Failures are recorded per trial and do not abort the batch.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    jobs = []
    if cfg.l_sweep:
        jobs = [("esf", {"esf_l": l}, f"L={l}") for l in cfg.l_sweep]
    elif cfg.nc_sweep:
        jobs = [(name, {"target_size": nc}, f"Nc={nc}")
                for nc in cfg.nc_sweep
                for name in cfg.estimators if name != "esf"]
    else:
        jobs = [(name, {}, "") for name in cfg.estimators]

    rows = []
    sums = {}
    for trial in range(cfg.trials):
        sim = SimConfig(
            grid_side=cfg.grid_side,
            r=cfg.r if len(cfg.r) > 1 else cfg.r[0],
            seed=cfg.seed + trial,
            include_constant_covariates=cfg.constant_covariates,
        )
        truth = generate_scenario(sim)
        names = truth.dataset.names
        for name, overrides, param in jobs:
            run_cfg = _with(cfg, **overrides)
            try:
                beta, secs = _bench_one(name, run_cfg, truth)
                rmse, mae = score(beta, truth.beta_true)
                for k, cov in enumerate(names):
                    rows.append([name, param, sim.seed, cov,
                                 _g17(rmse[k]), _g17(mae[k]),
                                 format(secs, ".3f"), "ok"])
                    key = (name, param, cov)
                    acc = sums.setdefault(key, [0.0, 0.0, 0.0, 0])
                    acc[0] += rmse[k]
                    acc[1] += mae[k]
                    acc[2] += secs
                    acc[3] += 1
            except EsfError as exc:
                rows.append([name, param, sim.seed, "", "", "", "",
                             f"error: {exc}"])
        print(f"trial seed {sim.seed} done")

    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "param", "seed", "coef",
                         "rmse", "mae", "seconds", "status"])
        writer.writerows(rows)
        for (name, param, cov), (r_, m_, s_, c_) in sums.items():
            writer.writerow([name, param, "mean", cov,
                             _g17(r_ / c_), _g17(m_ / c_),
                             format(s_ / c_, ".3f"), f"n={c_}"])
    print(f"wrote {out / 'bench.csv'} ({len(rows)} trial rows)")


def _with(cfg, **overrides):
    if not overrides:
        return cfg
    clone = RunConfig(**vars(cfg))
    for key, val in overrides.items():
        setattr(clone, key, val)
    return clone


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _names(text):
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _floats(text):
    return tuple(float(s) for s in text.split(",") if s.strip())


def _ints(text):
    return tuple(int(s) for s in text.split(",") if s.strip())


def build_parser():
    parser = argparse.ArgumentParser(
        prog="esfsvc",
        description="Spatially varying coefficient regression by "
                    "eigenvector spatial filtering with model aggregation.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model from a CSV")
    fit.add_argument("--input", required=True)
    fit.add_argument("--coords", type=_names, default=("x", "y"),
                     help="coordinate columns, e.g. x,y")
    fit.add_argument("--response", default="y")
    fit.add_argument("--covariates", type=_names, default=())
    fit.add_argument("--svc", type=_names, default=(),
                     help="covariates given spatially varying coefficients "
                          "(the intercept always varies; others default to "
                          "constant)")
    fit.add_argument("--scheme", choices=("disjoint", "overlap"),
                     default="overlap")
    fit.add_argument("--global", dest="include_global",
                     action=argparse.BooleanOptionalAction, default=True,
                     help="include the global sub-model")
    fit.add_argument("--clusters", type=int, default=None,
                     help="force the cluster count (overrides --target-size)")
    fit.add_argument("--target-size", type=int, default=600)
    fit.add_argument("--global-l", type=int, default=200)
    fit.add_argument("--threshold", type=float, default=2.2)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--workers", type=int, default=1)
    fit.add_argument("--ridge", action="store_true")
    fit.add_argument("--out", default="esfsvc_out")

    simp = sub.add_parser("simulate", help="write a synthetic scenario")
    simp.add_argument("--grid-side", type=int, default=30)
    simp.add_argument("--r", type=_floats, default=(1.0,),
                      help="GP range, scalar or per-coefficient list")
    simp.add_argument("--b", type=_floats, default=None,
                      help="true fixed coefficients")
    simp.add_argument("--tau2", type=_floats, default=None,
                      help="true SVC variances (0 = constant coefficient)")
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--constant-covariates",
                      action=argparse.BooleanOptionalAction, default=True)
    simp.add_argument("--out", default="esfsvc_out")

    bench = sub.add_parser("bench", help="estimator comparison table")
    bench.add_argument("--grid-side", type=int, default=30)
    bench.add_argument("--r", type=_floats, default=(1.0,))
    bench.add_argument("--trials", type=int, default=1)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--estimators", type=_names,
                       default=("esf", "l0", "gl0", "l", "gl"))
    bench.add_argument("--esf-l", type=int, default=200)
    bench.add_argument("--l-sweep", type=_ints, default=())
    bench.add_argument("--nc-sweep", type=_ints, default=())
    bench.add_argument("--target-size", type=int, default=600)
    bench.add_argument("--global-l", type=int, default=200)
    bench.add_argument("--threshold", type=float, default=2.2)
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--ridge", action="store_true")
    bench.add_argument("--constant-covariates",
                       action=argparse.BooleanOptionalAction, default=True)
    bench.add_argument("--out", default="esfsvc_out")

    return parser


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    cfg = RunConfig()
    for key, val in vars(ns).items():
        setattr(cfg, key, val)
    try:
        if cfg.command == "fit":
            cmd_fit(cfg)
        elif cfg.command == "simulate":
            cmd_simulate(cfg)
        else:
            cmd_bench(cfg)
    except EsfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
