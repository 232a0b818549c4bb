"""Command line: config handling, table caching and the named experiments.

Each experiment writes <out>/<name>-<hash>.csv (first line a '#' comment carrying the config
hash and format version, then a header row, floats to 17 significant digits) and a JSON
summary next to it.
"""
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import click
import numpy as np
import yaml

from . import storage
from .conditions import (ConditioningError, NormConfig, admissible_correction,
                         growth_split_measure, energy_norm, weighted_norm)
from .nonlinear import BulkProfile, ResolutionError
from .propagator import (AccuracyError, CauchyPair, DivergenceError, HorizonError,
                         discrete_free_evolve)
from .scaling import DomainError, ScalingLaw
from .spectral import GridTooShortError, StructuralError, TableConfig, build_table, dft_forward
from .transference import ConstructionError, build_transference

FORMAT_VERSION = 1
EXPERIMENTS = ("build-table", "growth", "norms", "iterate", "oracle-compare", "eloc",
               "kernel-split", "discrete-fit")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_TABLE = 3
EXIT_ACCURACY = 4
EXIT_DIVERGENCE = 5

log = logging.getLogger("blowup_lab")


class ConfigError(ValueError):
    pass


class MissingTableError(RuntimeError):
    pass


# per-experiment defaults mirror the acceptance configurations
_DEFAULTS = {
    "iterate": {"nu": 1 / 3, "tau0": 40.0, "amplitude": 1e-2},
    "eloc": {"nu": 1 / 3},
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "growth"
    nu: float = 0.5
    tau0: float = 10.0
    delta0: float = 0.05
    table: dict = field(default_factory=dict)
    bulk: str = "zero"
    horizon_factor: float = 20.0
    window: float = 8.0
    n_taus: int = 29
    admissible: bool = True
    amplitude: float = 1.0
    seed: int = 0
    j_max: int = 3
    tau0_list: tuple = (10.0, 20.0, 40.0)
    oracle_dR: tuple = (0.04, 0.02, 0.01)
    band_n: int = 8
    band_eps: float = 0.1
    out: str = "runs"
    threads: int = 1

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        try:
            self.law()
            TableConfig(**self.table)
            BulkProfile(self.bulk)
        except (DomainError, TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        if self.n_taus < 3 or self.window <= 1 or self.j_max < 1 or self.threads < 1:
            raise ConfigError("need n_taus >= 3, window > 1, j_max >= 1, threads >= 1")
        if self.horizon_factor < self.window:
            raise ConfigError("horizon_factor must cover the tau window")
        if not (self.band_n >= 2 and 0 < self.band_eps < 1):
            raise ConfigError("kernel-split needs band_n >= 2 and 0 < band_eps < 1")
        return self

    def law(self, tau0=None):
        return ScalingLaw(self.nu, self.tau0 if tau0 is None else tau0, self.delta0,
                          allow_large_nu=True)

    def table_config(self):
        return TableConfig(**self.table)

    def taus(self):
        return np.linspace(self.tau0, self.window * self.tau0, self.n_taus)

    def hash(self):
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(name, path=None, overrides=None):
    data = dict(_DEFAULTS.get(name, {}))
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        data.update(loaded)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    data["experiment"] = name
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k in ("tau0_list", "oracle_dR"):
        if k in data:
            data[k] = tuple(float(v) for v in data[k])
    return ExperimentConfig(**data).validate()


# ---------------------------------------------------------------- tables

def _table_path(cfg):
    return Path(cfg.out) / "tables" / cfg.table_config().key()


def build_or_load(cfg, build=False):
    """(table, matrices, cache_hit).  Without build=True a missing cache is an error."""
    base = _table_path(cfg)
    tpath, mpath = base / "table", base / "transference"
    if tpath.with_suffix(".json").exists():
        table = storage.load_table(tpath)
        tm = storage.load_transference(mpath, table)
        return table, tm, True
    if not build:
        raise MissingTableError(f"no cached table under {base}; run build-table first")
    table = build_table(cfg.table_config())
    tm = build_transference(table)
    storage.save_table(table, tpath)
    storage.save_transference(tm, mpath)
    return table, tm, False


def reference_pair(table, amplitude=1.0):
    """The fixed test data: x0 = F(R^3 e^(-R^2/4)/4), x1 = F(R e^(-(R-2)^2))."""
    R = table.R
    f0 = amplitude * R ** 3 * np.exp(-R * R / 4) / 4
    f1 = amplitude * R * np.exp(-(R - 2) ** 2)
    return CauchyPair(dft_forward(table, f0), dft_forward(table, f1))


def random_pair(table, rng, amplitude=1.0):
    """Smooth shell data with random centers, widths and signs."""
    R = table.R
    c0, c1 = rng.uniform(1, 5, 2)
    s0, s1 = rng.uniform(0.7, 2.0, 2)
    a0, a1 = rng.choice([-1.0, 1.0], 2) * rng.uniform(0.5, 1.5, 2)
    f0 = amplitude * a0 * R * np.exp(-((R - c0) / s0) ** 2)
    f1 = amplitude * a1 * R * np.exp(-((R - c1) / s1) ** 2)
    return CauchyPair(dft_forward(table, f0), dft_forward(table, f1))


def admissible(table, law, pair):
    nc = NormConfig.from_law(law)
    return admissible_correction(table, nc, law.nu, pair)["corrected"]


# ---------------------------------------------------------------- artifacts

def write_csv(path, header, rows, cfg_hash):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash} format_version={FORMAT_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{float(v):.17g}" for v in row])


def write_json(path, payload, cfg, cfg_hash):
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"config_hash": cfg_hash, "format_version": FORMAT_VERSION,
            "config": asdict(cfg), **payload}
    path.write_text(json.dumps(body, indent=1, sort_keys=True, default=_jsonable),
                    encoding="utf-8")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return str(v)


# ---------------------------------------------------------------- experiments

def exp_build_table(cfg):
    table, tm, hit = build_or_load(cfg, build=True)
    rows = np.column_stack([table.xis, table.rho, table.grid_xi.weights])
    summary = {"cache_hit": hit, "table_key": table.key, "xi_d": table.xi_d, "K_dd": tm.Kdd,
               "identity_residual": tm.diagnostics.get("identity_residual"),
               "table_checksum": _checksum(_table_path(cfg) / "table")}
    return ["xi", "rho", "weight"], rows, summary


def _checksum(path):
    return json.loads(Path(path).with_suffix(".json").read_text())["sha256"]


def exp_growth(cfg):
    table, tm, _ = build_or_load(cfg)
    law = cfg.law()
    pair = reference_pair(table, cfg.amplitude)
    if cfg.admissible:
        pair = admissible(table, law, pair)
    rep = growth_split_measure(law, table, NormConfig.from_law(law), pair, cfg.taus())
    rows = np.column_stack([rep.rows(), rep.g_tilde, rep.energy])
    s = rep.sup_eps1_over_R
    summary = {"fitted_exponent": rep.fitted_exponent, "admissible": cfg.admissible,
               "eps1_max_over_min": float(s.max() / s.min()) if s.min() > 0 else None}
    return ["tau", "sup_eps1_over_R", "sup_eps2", "sup_total", "g_tilde", "energy"], rows, summary


def exp_norms(cfg):
    table, tm, _ = build_or_load(cfg)
    law = cfg.law()
    nc = NormConfig.from_law(law)
    pair = admissible(table, law, reference_pair(table, cfg.amplitude))
    from .propagator import free_evolve
    taus = cfg.taus()
    en = np.array([energy_norm(table, nc, free_evolve(law, table, pair, t).x) for t in taus])
    rng = np.random.default_rng(cfg.seed)
    ratios = []
    for _ in range(8):
        p = random_pair(table, rng)
        ratios.append(weighted_norm(table, nc, "S~", p) / weighted_norm(table, nc, "S", p))
    summary = {"S_tilde": weighted_norm(table, nc, "S~", pair),
               "S": weighted_norm(table, nc, "S", pair),
               "energy_max_deviation": float(np.max(np.abs(en / en[0] - 1))),
               "domination_ratio_max": float(max(ratios))}
    return ["tau", "energy", "energy_ratio"], np.column_stack([taus, en, en / en[0]]), summary


def exp_iterate(cfg):
    from .iteration import IterationConfig, make_context, run_iteration
    table, tm, _ = build_or_load(cfg)
    law = cfg.law()
    pair = admissible(table, law, reference_pair(table, cfg.amplitude))
    pair = CauchyPair(table.state(0.1 * cfg.amplitude, pair.x0.x), pair.x1)
    icfg = IterationConfig(horizon_factor=cfg.horizon_factor, bulk=BulkProfile(cfg.bulk))
    ctx = make_context(law, table, tm, icfg)
    res = run_iteration(ctx, pair, cfg.j_max)
    names = sorted(res.records[0].ledger) if res.records else []
    rows = [[r.j, res.ledgers[r.j - 1]] + [r.ledger[k] for k in names] for r in res.records]
    nc = ctx.nc
    summary = {"ledgers": res.ledgers, "converged": res.converged,
               "corrected_data_S_tilde": weighted_norm(table, nc, "S~", res.corrected_data),
               "data_S_tilde": weighted_norm(table, nc, "S~", pair)}
    return ["j", "delta_A"] + names, np.array(rows), summary


def exp_oracle(cfg):
    from .oracle import compare_with_fourier
    table, tm, _ = build_or_load(cfg)
    law = cfg.law()
    pair = reference_pair(table, cfg.amplitude)
    taus = np.linspace(law.tau0, 2 * law.tau0, 11)
    rows, worst = [], []
    for dR in cfg.oracle_dR:
        c = compare_with_fourier(law, table, tm, pair, taus, dR=dR)
        worst.append(float(c.rel_l2_error.max()))
        rows += [[dR, t, e, ec] for t, e, ec in zip(c.taus, c.rel_l2_error, c.rel_l2_continuous)]
    summary = {"dR": list(cfg.oracle_dR), "max_rel_l2": worst}
    return ["dR", "tau", "rel_l2", "rel_l2_continuous"], np.array(rows), summary


def exp_eloc(cfg):
    from .conditions import fit_exponent
    from .iteration import IterationConfig, local_energy, make_context, zeroth_iterate
    table, tm, _ = build_or_load(cfg)
    law = cfg.law()
    pair = admissible(table, law, reference_pair(table, cfg.amplitude))
    ctx = make_context(law, table, tm, IterationConfig(horizon_factor=cfg.horizon_factor))
    traj = zeroth_iterate(ctx, pair)
    idx = np.nonzero(ctx.window)[0]
    idx = idx[np.unique(np.linspace(0, idx.size - 1, 4 * cfg.n_taus).astype(int))]
    E = local_energy(law, table, tm, traj, idx=idx)
    t = ctx.taus[idx]
    half = t >= t[0] + 0.5 * (t[-1] - t[0])
    summary = {"fitted_exponent": fit_exponent(t, E), "theory_exponent": 1 - 1 / law.nu,
               "decreasing_last_half": bool(np.all(np.diff(E[half]) < 0))}
    return ["tau", "E_loc"], np.column_stack([t, E]), summary


def exp_kernel_split(cfg):
    from .iteration import IterationConfig, band_iteration_norms, make_context
    table, tm, _ = build_or_load(cfg)
    law = cfg.law()
    ctx = make_context(law, table, tm, IterationConfig(horizon_factor=cfg.horizon_factor))
    norms, d2 = band_iteration_norms(ctx, n=cfg.band_n, eps=cfg.band_eps)
    j = np.arange(1, norms.size + 1)
    summary = {"second_log_differences": d2, "sub_geometric": bool(np.all(d2 < 0))}
    return ["j", "norm"], np.column_stack([j, norms]), summary


def exp_discrete_fit(cfg):
    table, tm, _ = build_or_load(cfg)
    k = np.sqrt(-table.xi_d)
    rows = []
    for t0 in cfg.tau0_list:
        fit = discrete_free_evolve(cfg.law(t0), table.xi_d, 1.0)["fit"]
        rows.append([t0, fit.gamma_d, -k, fit.gamma_d + k, fit.c_d])
    rows = np.array(rows)
    err = np.abs(rows[:, 3])
    summary = {"gamma_error_ratios": (err[:-1] / err[1:]).tolist(),
               "c_error": np.abs(rows[:, 4] - 1).tolist()}
    return ["tau0", "gamma_fit", "gamma_limit", "gamma_error", "c_d"], rows, summary


RUNNERS = {
    "build-table": exp_build_table, "growth": exp_growth, "norms": exp_norms,
    "iterate": exp_iterate, "oracle-compare": exp_oracle, "eloc": exp_eloc,
    "kernel-split": exp_kernel_split, "discrete-fit": exp_discrete_fit,
}

_ACCURACY = (AccuracyError, HorizonError, GridTooShortError, StructuralError, ConstructionError,
             ResolutionError, ConditioningError, storage.PersistError)


def run_command(name, cfg):
    """Run one experiment; returns (exit status, artifact paths or error message)."""
    if name not in RUNNERS:
        return EXIT_CONFIG, f"unknown experiment {name!r}; choose from {EXPERIMENTS}"
    from .iteration import StageError
    try:
        header, rows, summary = RUNNERS[name](cfg)
    except MissingTableError as e:
        return EXIT_MISSING_TABLE, str(e)
    except (ConfigError, DomainError) as e:
        return EXIT_CONFIG, str(e)
    except DivergenceError as e:
        return EXIT_DIVERGENCE, str(e)
    except _ACCURACY + (StageError,) as e:
        return EXIT_ACCURACY, f"{type(e).__name__}: {e}"
    h = cfg.hash()
    out = Path(cfg.out)
    csv_path, json_path = out / f"{name}-{h}.csv", out / f"{name}-{h}.json"
    write_csv(csv_path, header, rows, h)
    write_json(json_path, summary, cfg, h)
    return EXIT_OK, [str(csv_path), str(json_path)]


# ---------------------------------------------------------------- click entry point

@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("experiment")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML config file.")
@click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--threads", type=int, help="Thread count for the BLAS pool.")
@click.option("--admissible", type=click.Choice(["on", "off"]), help="Apply the data correction.")
@click.option("--nu", type=float)
@click.option("--tau0", type=float)
def main(experiment, config_path, out, threads, admissible, nu, tau0):
    """Run EXPERIMENT, one of: build-table, growth, norms, iterate, oracle-compare, eloc,
    kernel-split, discrete-fit."""
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    if experiment not in EXPERIMENTS:
        click.echo(f"error: unknown experiment {experiment!r}; choose from "
                   f"{', '.join(EXPERIMENTS)}", err=True)
        sys.exit(EXIT_CONFIG)
    over = {"out": out, "threads": threads, "nu": nu, "tau0": tau0,
            "admissible": None if admissible is None else admissible == "on"}
    try:
        cfg = load_config(experiment, config_path, over)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    _set_threads(cfg.threads)
    code, info = run_command(experiment, cfg)
    if code != EXIT_OK:
        click.echo(f"error ({code}): {info}", err=True)
    else:
        for p in info:
            click.echo(p)
    sys.exit(code)


def _set_threads(n):
    """Cap BLAS threads for child processes; the already-loaded pool keeps its size."""
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
